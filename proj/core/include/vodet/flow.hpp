#pragma once

#include <string>
#include <vector>

#include "vodet/backbone.hpp"
#include "vodet/datamodel.hpp"
#include "vodet/nn.hpp"

namespace vodet {

// Per-pixel displacement grid (plane 0 = x, plane 1 = y). `stride` tells at
// which resolution the field is expressed: 1 = image pixels, otherwise
// feature cells of that stride.
struct FlowField {
    Var displacement;  // 2 x H x W
    int stride = 1;
};

struct FlowNetConfig {
    std::vector<int> encoder_channels = {16, 32, 64, 64};

    static FlowNetConfig desk() { return FlowNetConfig{}; }
};

// Encoder/decoder motion-estimation network over a stacked frame pair.
// Plain conv + SiLU layers, no normalization: the pipeline runs one frame
// pair at a time, and batch statistics computed over a single sample make
// train- and eval-mode behaviour diverge. The final prediction conv is
// zero-initialized, so the untrained network outputs exactly-zero flow
// (a no-motion prior).
class FlowNet {
public:
    FlowNet(const FlowNetConfig& config, nn::Rng& rng);

    // Flow mapping reference-frame coordinates to sampling locations in the
    // neighbour frame (backward warping convention), in image pixels.
    FlowField estimate_flow(const Frame& reference, const Frame& neighbour,
                            bool training = false);

    void register_into(nn::ParamStore& s, const std::string& prefix);

private:
    FlowNetConfig config_;
    std::vector<nn::Conv2d> encoder_;
    std::vector<nn::Conv2d> decoder_;
    nn::Conv2d full_res_;
    nn::Conv2d predict_;
};

// Downsample an image-resolution flow to the feature grid of `target_stride`
// and convert displacement units from pixels to feature cells.
FlowField rescale_flow(const FlowField& flow, int target_stride);

// Differentiable bilinear warp of a feature map by a flow in feature-cell
// units at the same resolution. Out-of-bounds samples read as zero.
FeatureMap warp_features(const FeatureMap& features, const FlowField& flow);

// Planar binary container for debugging/visualization (magic, dims, x plane,
// y plane as float64).
void save_flow(const FlowField& flow, const std::string& path);
FlowField load_flow(const std::string& path);

}  // namespace vodet
