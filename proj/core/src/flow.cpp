#include "vodet/flow.hpp"

#include <cstdint>
#include <fstream>

#include "vodet/errors.hpp"

namespace vodet {

FlowNet::FlowNet(const FlowNetConfig& config, nn::Rng& rng) : config_(config) {
    if (config.encoder_channels.empty()) throw InvalidConfig("FlowNet: empty encoder channels");
    int in_ch = 6;  // stacked frame pair
    for (int c : config.encoder_channels) {
        encoder_.emplace_back(in_ch, c, 3, 2, rng);
        in_ch = c;
    }
    // decoder: upsample, concat encoder skip, fuse
    const auto& ec = config.encoder_channels;
    const int n = static_cast<int>(ec.size());
    int cur = ec[static_cast<std::size_t>(n - 1)];
    for (int i = n - 2; i >= 0; --i) {
        int skip = ec[static_cast<std::size_t>(i)];
        int out = std::max(8, skip);
        decoder_.emplace_back(cur + skip, out, 3, 1, rng);
        cur = out;
    }
    full_res_ = nn::Conv2d(cur, cur, 3, 1, rng);
    predict_ = nn::Conv2d(cur, 2, 3, 1, rng, /*zero_init=*/true);
}

FlowField FlowNet::estimate_flow(const Frame& reference, const Frame& neighbour, bool training) {
    (void)training;  // no normalization layers: train and eval paths coincide
    if (reference.height() != neighbour.height() || reference.width() != neighbour.width())
        throw InvalidInputShape("estimate_flow: frame dims differ");
    const int div = 1 << static_cast<int>(encoder_.size());
    if (reference.height() % div != 0 || reference.width() % div != 0)
        throw InvalidInputShape("estimate_flow: frame dims must be divisible by " +
                                std::to_string(div));

    Var pair = concat_channels({make_var(reference.image, false), make_var(neighbour.image, false)});
    std::vector<Var> skips;
    Var x = pair;
    for (auto& enc : encoder_) {
        x = silu(enc.forward(x));
        skips.push_back(x);
    }
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
        Var up = upsample2x(x);
        Var skip = skips[skips.size() - 2 - i];
        x = silu(decoder_[i].forward(concat_channels({up, skip})));
    }
    x = silu(full_res_.forward(upsample2x(x)));
    return FlowField{predict_.forward(x), 1};
}

void FlowNet::register_into(nn::ParamStore& s, const std::string& prefix) {
    for (std::size_t i = 0; i < encoder_.size(); ++i)
        encoder_[i].register_into(s, prefix + ".enc" + std::to_string(i));
    for (std::size_t i = 0; i < decoder_.size(); ++i)
        decoder_[i].register_into(s, prefix + ".dec" + std::to_string(i));
    full_res_.register_into(s, prefix + ".full");
    predict_.register_into(s, prefix + ".predict");
}

FlowField rescale_flow(const FlowField& flow, int target_stride) {
    if (flow.stride != 1) throw InvalidInputShape("rescale_flow: expects image-resolution flow");
    const int h = flow.displacement->value.dim(1);
    const int w = flow.displacement->value.dim(2);
    if (h % target_stride != 0 || w % target_stride != 0)
        throw InvalidInputShape("rescale_flow: stride does not divide flow dims");
    Var resized = bilinear_resize(flow.displacement, h / target_stride, w / target_stride);
    return FlowField{scale(resized, 1.0 / target_stride), target_stride};
}

FeatureMap warp_features(const FeatureMap& features, const FlowField& flow) {
    if (flow.stride != features.stride)
        throw InvalidInputShape("warp_features: flow/feature stride mismatch");
    return FeatureMap{grid_sample_shift(features.data, flow.displacement), features.stride};
}

namespace {
constexpr char kFlowMagic[8] = {'V', 'O', 'D', 'T', 'F', 'L', 'O', '1'};
}

void save_flow(const FlowField& flow, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ParseError("cannot open flow file for writing: " + path);
    f.write(kFlowMagic, 8);
    std::uint32_t h = static_cast<std::uint32_t>(flow.displacement->value.dim(1));
    std::uint32_t w = static_cast<std::uint32_t>(flow.displacement->value.dim(2));
    std::uint32_t stride = static_cast<std::uint32_t>(flow.stride);
    f.write(reinterpret_cast<const char*>(&h), 4);
    f.write(reinterpret_cast<const char*>(&w), 4);
    f.write(reinterpret_cast<const char*>(&stride), 4);
    f.write(reinterpret_cast<const char*>(flow.displacement->value.data()),
            static_cast<std::streamsize>(flow.displacement->value.size() * sizeof(double)));
}

FlowField load_flow(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParseError("cannot open flow file: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::string(magic, 8) != std::string(kFlowMagic, 8))
        throw ParseError("bad flow file magic: " + path);
    std::uint32_t h = 0, w = 0, stride = 0;
    f.read(reinterpret_cast<char*>(&h), 4);
    f.read(reinterpret_cast<char*>(&w), 4);
    f.read(reinterpret_cast<char*>(&stride), 4);
    Tensor t({2, static_cast<int>(h), static_cast<int>(w)});
    f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!f) throw ParseError("truncated flow file: " + path);
    return FlowField{make_var(std::move(t)), static_cast<int>(stride)};
}

}  // namespace vodet
