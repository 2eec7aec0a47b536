#pragma once

#include <array>
#include <vector>

#include "vodet/datamodel.hpp"
#include "vodet/nn.hpp"
#include "vodet/tensor.hpp"

namespace vodet {

// One pyramid-scale feature map together with its image stride.
struct FeatureMap {
    Var data;  // C x H x W
    int stride = 1;
};

using MultiScaleFeatures = std::array<FeatureMap, 3>;

struct BackboneConfig {
    double deepen_factor = 1.0;
    double widen_factor = 1.0;
    std::array<int, 3> base_channels = {16, 32, 64};
    std::array<int, 3> strides = {8, 16, 32};

    std::array<int, 3> out_channels() const;
    int num_blocks() const;

    // 3 CSP stages, < 200k parameters, CPU-trainable
    static BackboneConfig desk();
    // deepen 1.33 / widen 1.25, channels 320/640/1280 at 640x640 input
    static BackboneConfig paper();
};

namespace nn {

class CspBlock {
public:
    CspBlock() = default;
    CspBlock(int channels, int num_blocks, Rng& rng);
    Var forward(const Var& x, bool training);
    void register_into(ParamStore& s, const std::string& prefix);

private:
    ConvBlock split_main_, split_short_, merge_;
    std::vector<std::pair<ConvBlock, ConvBlock>> bottlenecks_;
};

}  // namespace nn

class Backbone {
public:
    Backbone(const BackboneConfig& config, nn::Rng& rng);

    // Frame -> three feature maps at the configured strides.
    MultiScaleFeatures extract_features(const Frame& frame, bool training = false);
    // Shared-parameter extraction for every frame of a window.
    std::vector<MultiScaleFeatures> extract_window_features(const FrameWindow& window,
                                                            bool training = false);

    void register_into(nn::ParamStore& s, const std::string& prefix);
    const BackboneConfig& config() const { return config_; }

private:
    BackboneConfig config_;
    nn::ConvBlock stem_;
    std::array<nn::ConvBlock, 4> downs_;
    std::array<nn::CspBlock, 4> csps_;
};

}  // namespace vodet
