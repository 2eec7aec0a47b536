#include "vodet/backbone.hpp"

#include <cmath>

#include "vodet/errors.hpp"

namespace vodet {

std::array<int, 3> BackboneConfig::out_channels() const {
    std::array<int, 3> c;
    for (int i = 0; i < 3; ++i)
        c[static_cast<std::size_t>(i)] = std::max(
            1, static_cast<int>(std::lround(base_channels[static_cast<std::size_t>(i)] * widen_factor)));
    return c;
}

int BackboneConfig::num_blocks() const {
    return std::max(1, static_cast<int>(std::lround(deepen_factor)));
}

BackboneConfig BackboneConfig::desk() { return BackboneConfig{}; }

BackboneConfig BackboneConfig::paper() {
    BackboneConfig c;
    c.deepen_factor = 1.33;
    c.widen_factor = 1.25;
    c.base_channels = {256, 512, 1024};
    return c;
}

namespace nn {

CspBlock::CspBlock(int channels, int num_blocks, Rng& rng) {
    const int half = channels / 2;
    split_main_ = ConvBlock(channels, half, 1, 1, rng);
    split_short_ = ConvBlock(channels, half, 1, 1, rng);
    merge_ = ConvBlock(channels, channels, 1, 1, rng);
    for (int i = 0; i < num_blocks; ++i)
        bottlenecks_.emplace_back(ConvBlock(half, half, 1, 1, rng), ConvBlock(half, half, 3, 1, rng));
}

Var CspBlock::forward(const Var& x, bool training) {
    Var main = split_main_.forward(x, training);
    Var shortcut = split_short_.forward(x, training);
    for (auto& [c1, c3] : bottlenecks_) {
        Var y = c3.forward(c1.forward(main, training), training);
        main = add(main, y);  // residual
    }
    return merge_.forward(concat_channels({main, shortcut}), training);
}

void CspBlock::register_into(ParamStore& s, const std::string& prefix) {
    split_main_.register_into(s, prefix + ".split_main");
    split_short_.register_into(s, prefix + ".split_short");
    merge_.register_into(s, prefix + ".merge");
    for (std::size_t i = 0; i < bottlenecks_.size(); ++i) {
        bottlenecks_[i].first.register_into(s, prefix + ".b" + std::to_string(i) + ".conv1");
        bottlenecks_[i].second.register_into(s, prefix + ".b" + std::to_string(i) + ".conv3");
    }
}

}  // namespace nn

Backbone::Backbone(const BackboneConfig& config, nn::Rng& rng) : config_(config) {
    const auto oc = config.out_channels();
    const int nb = config.num_blocks();
    const int c_stem = std::max(2, oc[0] / 4);
    const int c_quarter = std::max(2, oc[0] / 2);
    stem_ = nn::ConvBlock(3, c_stem, 3, 2, rng);
    const std::array<int, 5> chain = {c_stem, c_quarter, oc[0], oc[1], oc[2]};
    for (int i = 0; i < 4; ++i) {
        auto idx = static_cast<std::size_t>(i);
        downs_[idx] = nn::ConvBlock(chain[idx], chain[idx + 1], 3, 2, rng);
        csps_[idx] = nn::CspBlock(chain[idx + 1], nb, rng);
    }
}

MultiScaleFeatures Backbone::extract_features(const Frame& frame, bool training) {
    const int max_stride = config_.strides[2];
    if (frame.height() % max_stride != 0 || frame.width() % max_stride != 0)
        throw InvalidInputShape("extract_features: frame dims must be divisible by " +
                                std::to_string(max_stride) + " (letterbox first)");

    Var x = make_var(frame.image, false);
    x = stem_.forward(x, training);
    MultiScaleFeatures out;
    for (int i = 0; i < 4; ++i) {
        auto idx = static_cast<std::size_t>(i);
        x = csps_[idx].forward(downs_[idx].forward(x, training), training);
        if (i >= 1) out[idx - 1] = FeatureMap{x, config_.strides[idx - 1]};
    }
    return out;
}

std::vector<MultiScaleFeatures> Backbone::extract_window_features(const FrameWindow& window,
                                                                  bool training) {
    std::vector<MultiScaleFeatures> out;
    out.reserve(window.frames.size());
    for (const Frame& f : window.frames) out.push_back(extract_features(f, training));
    return out;
}

void Backbone::register_into(nn::ParamStore& s, const std::string& prefix) {
    stem_.register_into(s, prefix + ".stem");
    for (int i = 0; i < 4; ++i) {
        auto idx = static_cast<std::size_t>(i);
        downs_[idx].register_into(s, prefix + ".down" + std::to_string(i));
        csps_[idx].register_into(s, prefix + ".csp" + std::to_string(i));
    }
}

}  // namespace vodet
