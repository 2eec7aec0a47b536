#include "vodet/detector.hpp"

#include <algorithm>
#include <cmath>

#include "vodet/datasets.hpp"
#include "vodet/errors.hpp"

namespace vodet {

Neck::Neck(const NeckConfig& config, nn::Rng& rng) : config_(config) {
    const auto& ic = config.in_channels;
    const int oc = config.out_channels;
    for (int i = 0; i < 3; ++i)
        lateral_[static_cast<std::size_t>(i)] =
            nn::ConvBlock(ic[static_cast<std::size_t>(i)], oc, 1, 1, rng);
    for (int i = 0; i < 2; ++i) {
        td_fuse_[static_cast<std::size_t>(i)] = nn::ConvBlock(2 * oc, oc, 3, 1, rng);
        down_[static_cast<std::size_t>(i)] = nn::ConvBlock(oc, oc, 3, 2, rng);
        bu_fuse_[static_cast<std::size_t>(i)] = nn::ConvBlock(2 * oc, oc, 3, 1, rng);
    }
}

MultiScaleFeatures Neck::forward(const MultiScaleFeatures& in, bool training) {
    std::array<Var, 3> lat;
    for (int i = 0; i < 3; ++i) {
        auto si = static_cast<std::size_t>(i);
        if (in[si].data->value.dim(0) != config_.in_channels[si])
            throw InvalidInputShape("neck_forward: unexpected channel count at level " +
                                    std::to_string(i));
        lat[si] = lateral_[si].forward(in[si].data, training);
    }
    // top-down
    Var p2 = lat[2];
    Var p1 = td_fuse_[1].forward(concat_channels({upsample2x(p2), lat[1]}), training);
    Var p0 = td_fuse_[0].forward(concat_channels({upsample2x(p1), lat[0]}), training);
    // bottom-up path aggregation
    Var n0 = p0;
    Var n1 = bu_fuse_[0].forward(concat_channels({down_[0].forward(n0, training), p1}), training);
    Var n2 = bu_fuse_[1].forward(concat_channels({down_[1].forward(n1, training), p2}), training);
    return MultiScaleFeatures{FeatureMap{n0, in[0].stride}, FeatureMap{n1, in[1].stride},
                              FeatureMap{n2, in[2].stride}};
}

void Neck::register_into(nn::ParamStore& s, const std::string& prefix) {
    for (int i = 0; i < 3; ++i)
        lateral_[static_cast<std::size_t>(i)].register_into(s, prefix + ".lateral" + std::to_string(i));
    for (int i = 0; i < 2; ++i) {
        auto si = static_cast<std::size_t>(i);
        td_fuse_[si].register_into(s, prefix + ".td_fuse" + std::to_string(i));
        down_[si].register_into(s, prefix + ".down" + std::to_string(i));
        bu_fuse_[si].register_into(s, prefix + ".bu_fuse" + std::to_string(i));
    }
}

Head::Head(int in_channels, int num_classes, nn::Rng& rng)
    : num_classes_(num_classes),
      stem_(in_channels, in_channels, 1, 1, rng),
      cls_conv_(in_channels, in_channels, 3, 1, rng),
      reg_conv_(in_channels, in_channels, 3, 1, rng),
      cls_pred_(in_channels, num_classes, 1, 1, rng),
      reg_pred_(in_channels, 4, 1, 1, rng),
      obj_pred_(in_channels, 1, 1, 1, rng) {
    // class-prior initialization keeps the untrained model near-silent
    const double pi = 0.01;
    const double prior_bias = -std::log((1.0 - pi) / pi);
    for (std::size_t i = 0; i < cls_pred_.bias->value.size(); ++i)
        cls_pred_.bias->value[i] = prior_bias;
    obj_pred_.bias->value[0] = prior_bias;
}

std::vector<HeadOutput> Head::forward(const MultiScaleFeatures& neck_out, bool training) {
    std::vector<HeadOutput> outs;
    outs.reserve(3);
    for (const FeatureMap& f : neck_out) {
        Var x = stem_.forward(f.data, training);
        Var cls_feat = cls_conv_.forward(x, training);
        Var reg_feat = reg_conv_.forward(x, training);
        outs.push_back(HeadOutput{cls_pred_.forward(cls_feat), obj_pred_.forward(reg_feat),
                                  reg_pred_.forward(reg_feat), f.stride});
    }
    return outs;
}

void Head::register_into(nn::ParamStore& s, const std::string& prefix) {
    stem_.register_into(s, prefix + ".stem");
    cls_conv_.register_into(s, prefix + ".cls_conv");
    reg_conv_.register_into(s, prefix + ".reg_conv");
    cls_pred_.register_into(s, prefix + ".cls_pred");
    reg_pred_.register_into(s, prefix + ".reg_pred");
    obj_pred_.register_into(s, prefix + ".obj_pred");
}

namespace {
inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
}

std::vector<Detection> decode_boxes(const std::vector<HeadOutput>& head_out, int image_w,
                                    int image_h) {
    std::vector<Detection> dets;
    for (const HeadOutput& ho : head_out) {
        const Tensor& cls = ho.cls_logits->value;
        const Tensor& obj = ho.obj_logits->value;
        const Tensor& reg = ho.box_reg->value;
        const int nc = cls.dim(0), h = cls.dim(1), w = cls.dim(2);
        const double s = ho.stride;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                int best = 0;
                for (int c = 1; c < nc; ++c)
                    if (cls.at(c, y, x) > cls.at(best, y, x)) best = c;
                const double score = sigmoid(obj.at(0, y, x)) * sigmoid(cls.at(best, y, x));
                const double cx = (x + reg.at(0, y, x)) * s;
                const double cy = (y + reg.at(1, y, x)) * s;
                const double bw = std::exp(reg.at(2, y, x)) * s;
                const double bh = std::exp(reg.at(3, y, x)) * s;
                BoundingBox b{std::clamp(cx - bw / 2, 0.0, static_cast<double>(image_w)),
                              std::clamp(cy - bh / 2, 0.0, static_cast<double>(image_h)),
                              std::clamp(cx + bw / 2, 0.0, static_cast<double>(image_w)),
                              std::clamp(cy + bh / 2, 0.0, static_cast<double>(image_h))};
                dets.push_back(Detection{b, best, score});
            }
        }
    }
    return dets;
}

std::vector<Detection> nms(std::vector<Detection> dets, const PostprocessConfig& config) {
    std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.box.x_min != b.box.x_min) return a.box.x_min < b.box.x_min;
        return a.box.y_min < b.box.y_min;
    });
    std::vector<Detection> kept;
    for (const Detection& d : dets) {
        bool suppressed = false;
        for (const Detection& k : kept) {
            if (k.label == d.label && iou(k.box, d.box) > config.nms_iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) {
            kept.push_back(d);
            if (static_cast<int>(kept.size()) >= config.max_detections) break;
        }
    }
    return kept;
}

ModelConfig ModelConfig::desk(int context_radius_n) {
    ModelConfig c;
    c.aggregation.context_radius_n = context_radius_n;
    return c;
}

ModelConfig ModelConfig::paper(int context_radius_n) {
    ModelConfig c;
    c.backbone = BackboneConfig::paper();
    c.aggregation.context_radius_n = context_radius_n;
    c.neck_out_channels = 320;
    c.image_size = 640;
    return c;
}

DetectionModel::DetectionModel(const ModelConfig& config, unsigned long long seed)
    : config_(config),
      rng_(seed),
      backbone_(config.backbone, rng_),
      flownet_(config.flow, rng_),
      agg_(config.aggregation, config.backbone.out_channels(), rng_),
      neck_(NeckConfig{config.backbone.out_channels(), config.neck_out_channels}, rng_),
      head_(config.neck_out_channels, config.num_classes, rng_) {}

std::vector<HeadOutput> DetectionModel::forward_window(const FrameWindow& window, bool training) {
    auto all_feats = backbone_.extract_window_features(window, training);
    const auto ci = static_cast<std::size_t>(window.center_index);
    const MultiScaleFeatures& current = all_feats[ci];

    std::vector<MultiScaleFeatures> neighbours;
    std::vector<FlowField> flows;
    for (std::size_t i = 0; i < all_feats.size(); ++i) {
        if (i == ci) continue;
        neighbours.push_back(all_feats[i]);
        flows.push_back(flownet_.estimate_flow(window.center(), window.frames[i], training));
    }
    MultiScaleFeatures fused = agg_.aggregate_window(current, neighbours, flows);
    return head_.forward(neck_.forward(fused, training), training);
}

std::vector<Detection> DetectionModel::postprocess(const std::vector<HeadOutput>& outs, int lw,
                                                   int lh) {
    std::vector<Detection> dets = decode_boxes(outs, lw, lh);
    std::vector<Detection> filtered;
    for (const Detection& d : dets)
        if (d.score >= config_.post.score_threshold && d.box.valid()) filtered.push_back(d);
    return nms(std::move(filtered), config_.post);
}

std::vector<Detection> DetectionModel::detect(const FrameWindow& window) {
    NoGradGuard ng;
    const int target = config_.image_size;
    FrameWindow boxed = window;
    LetterboxTransform tf;
    for (std::size_t i = 0; i < boxed.frames.size(); ++i) {
        auto [f, t] = letterbox(boxed.frames[i], {target, target});
        boxed.frames[i] = std::move(f);
        tf = t;
    }
    std::vector<HeadOutput> outs = forward_window(boxed, false);
    std::vector<Detection> dets = postprocess(outs, target, target);
    for (Detection& d : dets) d.box = tf.unapply(d.box);
    return dets;
}

std::vector<Detection> DetectionModel::detect_single_frame(const Frame& frame) {
    NoGradGuard ng;
    const int target = config_.image_size;
    auto [boxed, tf] = letterbox(frame, {target, target});
    MultiScaleFeatures feats = backbone_.extract_features(boxed, false);
    std::vector<HeadOutput> outs = head_.forward(neck_.forward(feats, false), false);
    std::vector<Detection> dets = postprocess(outs, target, target);
    for (Detection& d : dets) d.box = tf.unapply(d.box);
    return dets;
}

nn::ParamStore DetectionModel::params() {
    nn::ParamStore s;
    backbone_.register_into(s, "backbone");
    flownet_.register_into(s, "flownet");
    agg_.register_into(s, "aggregation");
    neck_.register_into(s, "neck");
    head_.register_into(s, "head");
    return s;
}

}  // namespace vodet
