#pragma once

#include <vector>

#include "vodet/backbone.hpp"
#include "vodet/flow.hpp"
#include "vodet/nn.hpp"

namespace vodet {

struct AggregationConfig {
    int context_radius_n = 2;
    // Fusion kernel starts as the block-averaging kernel plus small noise,
    // so the untrained model begins near a temporal mean.
    double init_noise_std = 1e-3;
};

// Per-scale temporal fusion: concat [aligned neighbours in temporal order,
// current], then a 3x3 conv back to the scale's channel count. N=0 is an
// exact identity pass-through (single-frame ablation baseline).
class Aggregator {
public:
    Aggregator(const AggregationConfig& config, const std::array<int, 3>& scale_channels,
               nn::Rng& rng);

    FeatureMap aggregate(const FeatureMap& current, const std::vector<FeatureMap>& aligned_neighbours,
                         int scale_index) const;

    // Full per-window fusion: rescale each image-resolution flow to every
    // scale, warp the neighbour features, fuse per scale.
    MultiScaleFeatures aggregate_window(const MultiScaleFeatures& current_feats,
                                        const std::vector<MultiScaleFeatures>& neighbour_feats,
                                        const std::vector<FlowField>& flows) const;

    void register_into(nn::ParamStore& s, const std::string& prefix);
    int context_radius_n() const { return config_.context_radius_n; }

private:
    AggregationConfig config_;
    std::array<nn::Conv2d, 3> fuse_;  // unused when N == 0
};

}  // namespace vodet
