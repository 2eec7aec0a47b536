#include "vodet/aggregation.hpp"

#include "vodet/errors.hpp"

namespace vodet {

Aggregator::Aggregator(const AggregationConfig& config, const std::array<int, 3>& scale_channels,
                       nn::Rng& rng)
    : config_(config) {
    const int n = config.context_radius_n;
    if (n < 0) throw InvalidConfig("Aggregator: negative context radius");
    if (n == 0) return;  // identity mode, no parameters
    const int groups = 2 * n + 1;
    std::normal_distribution<double> noise(0.0, config.init_noise_std);
    for (int s = 0; s < 3; ++s) {
        const int c = scale_channels[static_cast<std::size_t>(s)];
        nn::Conv2d conv(groups * c, c, 3, 1, rng);
        // block-averaging kernel: output channel o takes 1/groups from the
        // center tap of input channel o within every temporal block
        Tensor& w = conv.weight->value;
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = noise(rng);
        for (int g = 0; g < groups; ++g)
            for (int o = 0; o < c; ++o) {
                std::size_t idx =
                    ((static_cast<std::size_t>(o) * (groups * c) + (g * c + o)) * 3 + 1) * 3 + 1;
                w[idx] += 1.0 / groups;
            }
        fuse_[static_cast<std::size_t>(s)] = std::move(conv);
    }
}

FeatureMap Aggregator::aggregate(const FeatureMap& current,
                                 const std::vector<FeatureMap>& aligned_neighbours,
                                 int scale_index) const {
    const int n = config_.context_radius_n;
    if (static_cast<int>(aligned_neighbours.size()) != 2 * n)
        throw InvalidConfig("aggregate: expected 2N neighbour maps");
    if (n == 0) return current;

    std::vector<Var> blocks;
    blocks.reserve(aligned_neighbours.size() + 1);
    for (const auto& f : aligned_neighbours) {
        if (f.stride != current.stride ||
            !f.data->value.same_shape(current.data->value))
            throw InvalidInputShape("aggregate: neighbour/current shape mismatch");
        blocks.push_back(f.data);
    }
    blocks.push_back(current.data);
    Var fused = fuse_[static_cast<std::size_t>(scale_index)].forward(concat_channels(blocks));
    return FeatureMap{fused, current.stride};
}

MultiScaleFeatures Aggregator::aggregate_window(const MultiScaleFeatures& current_feats,
                                                const std::vector<MultiScaleFeatures>& neighbour_feats,
                                                const std::vector<FlowField>& flows) const {
    if (neighbour_feats.size() != flows.size())
        throw InvalidConfig("aggregate_window: one flow per neighbour required");
    if (config_.context_radius_n == 0) return current_feats;

    MultiScaleFeatures out;
    for (int s = 0; s < 3; ++s) {
        auto si = static_cast<std::size_t>(s);
        const FeatureMap& cur = current_feats[si];
        std::vector<FeatureMap> aligned;
        aligned.reserve(neighbour_feats.size());
        for (std::size_t i = 0; i < neighbour_feats.size(); ++i) {
            FlowField scaled = rescale_flow(flows[i], cur.stride);
            aligned.push_back(warp_features(neighbour_feats[i][si], scaled));
        }
        out[si] = aggregate(cur, aligned, s);
    }
    return out;
}

void Aggregator::register_into(nn::ParamStore& s, const std::string& prefix) {
    if (config_.context_radius_n == 0) return;
    for (int i = 0; i < 3; ++i)
        fuse_[static_cast<std::size_t>(i)].register_into(s, prefix + ".fuse" + std::to_string(i));
}

}  // namespace vodet
