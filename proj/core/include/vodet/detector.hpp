#pragma once

#include <array>
#include <vector>

#include "vodet/aggregation.hpp"
#include "vodet/backbone.hpp"
#include "vodet/flow.hpp"
#include "vodet/nn.hpp"

namespace vodet {

struct NeckConfig {
    std::array<int, 3> in_channels = {16, 32, 64};
    int out_channels = 32;
};

// Per-level head outputs (logits; decode applies the sigmoids).
struct HeadOutput {
    Var cls_logits;  // num_classes x H x W
    Var obj_logits;  // 1 x H x W
    Var box_reg;     // 4 x H x W: dx, dy, log-w, log-h per cell
    int stride = 1;
};

struct PostprocessConfig {
    double score_threshold = 0.01;
    double nms_iou_threshold = 0.65;
    int max_detections = 100;
};

// Path-aggregation FPN: top-down upsample+concat, then bottom-up stride-2
// path, unified channel count per level.
class Neck {
public:
    Neck(const NeckConfig& config, nn::Rng& rng);
    MultiScaleFeatures forward(const MultiScaleFeatures& in, bool training);
    void register_into(nn::ParamStore& s, const std::string& prefix);
    const NeckConfig& config() const { return config_; }

private:
    NeckConfig config_;
    std::array<nn::ConvBlock, 3> lateral_;
    std::array<nn::ConvBlock, 2> td_fuse_;
    std::array<nn::ConvBlock, 2> down_;
    std::array<nn::ConvBlock, 2> bu_fuse_;
};

// Decoupled anchor-free head, parameters shared across pyramid levels.
class Head {
public:
    Head(int in_channels, int num_classes, nn::Rng& rng);
    std::vector<HeadOutput> forward(const MultiScaleFeatures& neck_out, bool training);
    void register_into(nn::ParamStore& s, const std::string& prefix);
    int num_classes() const { return num_classes_; }

private:
    int num_classes_;
    nn::ConvBlock stem_;
    nn::ConvBlock cls_conv_, reg_conv_;
    nn::Conv2d cls_pred_, reg_pred_, obj_pred_;
};

// Anchor-free decode: cx=(x+dx)*stride, cy=(y+dy)*stride, w=exp(dw)*stride,
// h=exp(dh)*stride; score = sigmoid(obj)*sigmoid(best class). Boxes clipped
// to [0,image_w]x[0,image_h].
std::vector<Detection> decode_boxes(const std::vector<HeadOutput>& head_out, int image_w,
                                    int image_h);

// Class-wise greedy NMS with deterministic tie-breaks (score desc, then
// x_min asc, then y_min asc).
std::vector<Detection> nms(std::vector<Detection> dets, const PostprocessConfig& config);

struct ModelConfig {
    BackboneConfig backbone;
    FlowNetConfig flow;
    AggregationConfig aggregation;
    int neck_out_channels = 32;
    int num_classes = 3;
    int image_size = 64;  // letterbox target (square)
    PostprocessConfig post;

    static ModelConfig desk(int context_radius_n);
    static ModelConfig paper(int context_radius_n);
};

// The full video detection pipeline.
class DetectionModel {
public:
    DetectionModel(const ModelConfig& config, unsigned long long seed);

    // Head outputs for an already-letterboxed window (training entry point).
    std::vector<HeadOutput> forward_window(const FrameWindow& window, bool training);

    // End-to-end inference: letterbox, forward, decode, filter, NMS,
    // map boxes back to the center frame's original coordinates.
    std::vector<Detection> detect(const FrameWindow& window) ;
    // Single-frame reference path (no flow, no aggregation).
    std::vector<Detection> detect_single_frame(const Frame& frame);

    nn::ParamStore params();
    const ModelConfig& config() const { return config_; }
    Backbone& backbone() { return backbone_; }
    FlowNet& flownet() { return flownet_; }
    Aggregator& aggregator() { return agg_; }

private:
    std::vector<Detection> postprocess(const std::vector<HeadOutput>& outs, int lw, int lh);

    ModelConfig config_;
    nn::Rng rng_;  // declared before the submodules: they consume it in order
    Backbone backbone_;
    FlowNet flownet_;
    Aggregator agg_;
    Neck neck_;
    Head head_;
};

}  // namespace vodet
