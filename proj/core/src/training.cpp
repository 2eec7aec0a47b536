#include "vodet/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>

#include "vodet/errors.hpp"

namespace vodet {

void TrainConfig::validate() const {
    if (learning_rate <= 0 || momentum < 0 || weight_decay < 0 || epochs <= 0 ||
        warmup_iters < 0 || max_grad_norm < 0 || batch_windows <= 0 || target_fps <= 0 ||
        final_lr_fraction <= 0 || final_lr_fraction > 1)
        throw InvalidConfig("TrainConfig: non-positive value");
}

std::vector<std::vector<int>> assign_targets(const std::vector<GroundTruthInstance>& gts,
                                             const std::vector<HeadOutput>& head_geometry,
                                             const AssignConfig& config) {
    std::vector<std::vector<int>> assigned;
    for (const HeadOutput& ho : head_geometry) {
        const int h = ho.obj_logits->value.dim(1), w = ho.obj_logits->value.dim(2);
        assigned.emplace_back(static_cast<std::size_t>(h) * w, -1);
    }

    for (std::size_t gi = 0; gi < gts.size(); ++gi) {
        const BoundingBox& b = gts[gi].box;
        const double scale = std::sqrt(b.area());
        int level = 2;
        if (scale < config.scale_bands[0]) level = 0;
        else if (scale < config.scale_bands[1]) level = 1;

        const HeadOutput& ho = head_geometry[static_cast<std::size_t>(level)];
        const double s = ho.stride;
        const int h = ho.obj_logits->value.dim(1), w = ho.obj_logits->value.dim(2);
        const double gcx = (b.x_min + b.x_max) / 2, gcy = (b.y_min + b.y_max) / 2;
        const double radius = config.center_radius_cells * s;
        auto& cells = assigned[static_cast<std::size_t>(level)];
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double cx = (x + 0.5) * s, cy = (y + 0.5) * s;
                if (cx <= b.x_min || cx >= b.x_max || cy <= b.y_min || cy >= b.y_max) continue;
                if (std::abs(cx - gcx) > radius || std::abs(cy - gcy) > radius) continue;
                int& slot = cells[static_cast<std::size_t>(y) * w + x];
                if (slot < 0) {
                    slot = static_cast<int>(gi);
                } else {
                    // smaller area wins; input order breaks exact ties
                    const double prev = gts[static_cast<std::size_t>(slot)].box.area();
                    if (b.area() < prev) slot = static_cast<int>(gi);
                }
            }
        }
    }

    // Fallback for boxes thinner than their level's cell spacing: such boxes
    // can contain no cell center and would otherwise get zero positives.
    // Give each uncovered box the cell nearest its center, under the same
    // smaller-area-wins conflict rule.
    std::vector<bool> covered(gts.size(), false);
    for (const auto& cells : assigned)
        for (int gi : cells)
            if (gi >= 0) covered[static_cast<std::size_t>(gi)] = true;
    for (std::size_t gi = 0; gi < gts.size(); ++gi) {
        if (covered[gi]) continue;
        const BoundingBox& b = gts[gi].box;
        const double scale = std::sqrt(b.area());
        int level = 2;
        if (scale < config.scale_bands[0]) level = 0;
        else if (scale < config.scale_bands[1]) level = 1;

        const HeadOutput& ho = head_geometry[static_cast<std::size_t>(level)];
        const double s = ho.stride;
        const int h = ho.obj_logits->value.dim(1), w = ho.obj_logits->value.dim(2);
        const double gcx = (b.x_min + b.x_max) / 2, gcy = (b.y_min + b.y_max) / 2;

        // columns whose centers the box spans; nearest column when none
        std::vector<int> xs, ys;
        for (int x = 0; x < w; ++x) {
            const double cx = (x + 0.5) * s;
            if (cx > b.x_min && cx < b.x_max) xs.push_back(x);
        }
        for (int y = 0; y < h; ++y) {
            const double cy = (y + 0.5) * s;
            if (cy > b.y_min && cy < b.y_max) ys.push_back(y);
        }
        auto nearest = [&](int count, double target) {
            int best = 0;
            double bd = std::numeric_limits<double>::infinity();
            for (int i = 0; i < count; ++i) {
                const double d = std::abs((i + 0.5) * s - target);
                if (d < bd) {  // strict <: ties keep the smaller index
                    bd = d;
                    best = i;
                }
            }
            return best;
        };
        if (xs.empty()) xs.push_back(nearest(w, gcx));
        if (ys.empty()) ys.push_back(nearest(h, gcy));

        for (int y : ys) {
            for (int x : xs) {
                int& slot = assigned[static_cast<std::size_t>(level)]
                                    [static_cast<std::size_t>(y) * w + x];
                if (slot < 0) {
                    slot = static_cast<int>(gi);
                } else {
                    const double prev = gts[static_cast<std::size_t>(slot)].box.area();
                    if (b.area() < prev) slot = static_cast<int>(gi);
                }
            }
        }
    }
    return assigned;
}

namespace {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// numerically stable BCE-with-logits
inline double bce(double z, double t) {
    return std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
}

struct BoxGrad {
    double d[4];  // d loss / d (dx, dy, dw, dh), unweighted
};

// 1 - IoU between the anchor-free decode of `reg` at cell (x,y) and `gt`,
// plus its gradient w.r.t. the four regression channels.
double iou_loss_and_grad(double dx, double dy, double dw, double dh, int x, int y, double s,
                         const BoundingBox& gt, BoxGrad& grad) {
    const double cx = (x + dx) * s, cy = (y + dy) * s;
    const double bw = std::exp(dw) * s, bh = std::exp(dh) * s;
    const double x1 = cx - bw / 2, x2 = cx + bw / 2;
    const double y1 = cy - bh / 2, y2 = cy + bh / 2;

    const double iw = std::min(x2, gt.x_max) - std::max(x1, gt.x_min);
    const double ih = std::min(y2, gt.y_max) - std::max(y1, gt.y_min);
    for (double& g : grad.d) g = 0.0;
    if (iw <= 0 || ih <= 0) return 1.0;  // disjoint: flat region of the loss

    const double inter = iw * ih;
    const double ap = bw * bh, ag = gt.area();
    const double uni = ap + ag - inter;
    const double iou_v = inter / uni;

    // d inter / d corners (active min/max terms only)
    const double di_x1 = (x1 > gt.x_min) ? -ih : 0.0;
    const double di_x2 = (x2 < gt.x_max) ? ih : 0.0;
    const double di_y1 = (y1 > gt.y_min) ? -iw : 0.0;
    const double di_y2 = (y2 < gt.y_max) ? iw : 0.0;
    // d area_pred / d corners
    const double da_x1 = -bh, da_x2 = bh, da_y1 = -bw, da_y2 = bw;

    auto diou = [&](double di, double da) {
        return (di * uni - inter * (da - di)) / (uni * uni);
    };
    const double g_x1 = diou(di_x1, da_x1), g_x2 = diou(di_x2, da_x2);
    const double g_y1 = diou(di_y1, da_y1), g_y2 = diou(di_y2, da_y2);

    // chain through the decode: x1 = (x+dx)s - exp(dw)s/2, x2 = ... + exp(dw)s/2
    grad.d[0] = -(g_x1 + g_x2) * s;             // loss = 1 - IoU
    grad.d[1] = -(g_y1 + g_y2) * s;
    grad.d[2] = -(-g_x1 + g_x2) * (bw / 2);
    grad.d[3] = -(-g_y1 + g_y2) * (bh / 2);
    return 1.0 - iou_v;
}

}  // namespace

LossBreakdown compute_loss(const std::vector<HeadOutput>& head_out,
                           const std::vector<GroundTruthInstance>& gts,
                           const AssignConfig& config, Var* total_out) {
    auto assigned = assign_targets(gts, head_out, config);

    int npos = 0;
    for (const auto& cells : assigned)
        for (int v : cells)
            if (v >= 0) ++npos;
    const double norm = std::max(1, npos);

    LossBreakdown lb;
    // per-level gradients w.r.t. the raw logits, filled below
    std::vector<Tensor> g_cls, g_obj, g_reg;
    for (const HeadOutput& ho : head_out) {
        g_cls.push_back(Tensor::zeros(ho.cls_logits->value.dims()));
        g_obj.push_back(Tensor::zeros(ho.obj_logits->value.dims()));
        g_reg.push_back(Tensor::zeros(ho.box_reg->value.dims()));
    }

    for (std::size_t li = 0; li < head_out.size(); ++li) {
        const HeadOutput& ho = head_out[li];
        const Tensor& cls = ho.cls_logits->value;
        const Tensor& obj = ho.obj_logits->value;
        const Tensor& reg = ho.box_reg->value;
        const int nc = cls.dim(0), h = cls.dim(1), w = cls.dim(2);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const int gi = assigned[li][static_cast<std::size_t>(y) * w + x];
                const double t_obj = gi >= 0 ? 1.0 : 0.0;
                const double zo = obj.at(0, y, x);
                lb.objectness_loss += bce(zo, t_obj) / norm;
                g_obj[li].at(0, y, x) = (sigmoid(zo) - t_obj) * kObjLossWeight / norm;
                if (gi < 0) continue;

                const GroundTruthInstance& g = gts[static_cast<std::size_t>(gi)];
                for (int c = 0; c < nc; ++c) {
                    const double t = c == g.label ? 1.0 : 0.0;
                    const double zc = cls.at(c, y, x);
                    lb.classification_loss += bce(zc, t) / norm;
                    g_cls[li].at(c, y, x) = (sigmoid(zc) - t) * kClsLossWeight / norm;
                }
                BoxGrad bg;
                lb.box_loss += iou_loss_and_grad(reg.at(0, y, x), reg.at(1, y, x), reg.at(2, y, x),
                                                 reg.at(3, y, x), x, y, ho.stride, g.box, bg) /
                               norm;
                for (int k = 0; k < 4; ++k)
                    g_reg[li].at(k, y, x) = bg.d[k] * kBoxLossWeight / norm;
            }
        }
    }
    lb.total = kBoxLossWeight * lb.box_loss + kObjLossWeight * lb.objectness_loss +
               kClsLossWeight * lb.classification_loss;

    if (total_out) {
        std::vector<Var> parents;
        for (const HeadOutput& ho : head_out) {
            parents.push_back(ho.cls_logits);
            parents.push_back(ho.obj_logits);
            parents.push_back(ho.box_reg);
        }
        auto node = std::make_shared<Node>();
        node->value = Tensor({1});
        node->value[0] = lb.total;
        bool needs = grad_enabled();
        if (needs) {
            auto gc = std::make_shared<std::vector<Tensor>>(std::move(g_cls));
            auto go = std::make_shared<std::vector<Tensor>>(std::move(g_obj));
            auto gr = std::make_shared<std::vector<Tensor>>(std::move(g_reg));
            node->requires_grad = true;
            node->parents = parents;
            node->backward_fn = [gc, go, gr](Node& n) {
                const double up = n.grad[0];
                for (std::size_t li = 0; li < gc->size(); ++li) {
                    Var& pc = n.parents[li * 3 + 0];
                    Var& po = n.parents[li * 3 + 1];
                    Var& pr = n.parents[li * 3 + 2];
                    if (pc->requires_grad) {
                        Tensor& g = pc->ensure_grad();
                        for (std::size_t i = 0; i < g.size(); ++i) g[i] += up * (*gc)[li][i];
                    }
                    if (po->requires_grad) {
                        Tensor& g = po->ensure_grad();
                        for (std::size_t i = 0; i < g.size(); ++i) g[i] += up * (*go)[li][i];
                    }
                    if (pr->requires_grad) {
                        Tensor& g = pr->ensure_grad();
                        for (std::size_t i = 0; i < g.size(); ++i) g[i] += up * (*gr)[li][i];
                    }
                }
            };
        }
        *total_out = node;
    }
    return lb;
}

double warmup_lr(double base_lr, int iteration, int warmup_iters) {
    if (warmup_iters <= 0 || iteration >= warmup_iters) return base_lr;
    return base_lr * static_cast<double>(iteration) / static_cast<double>(warmup_iters);
}

double scheduled_lr(double base_lr, int iteration, int warmup_iters, int total_iters,
                    double final_fraction) {
    if (iteration < warmup_iters) return warmup_lr(base_lr, iteration, warmup_iters);
    const int span = total_iters - 1 - warmup_iters;
    if (span <= 0 || final_fraction >= 1.0) return base_lr;
    const double t = static_cast<double>(iteration - warmup_iters) / span;
    const double cos01 = 0.5 * (1.0 + std::cos(3.14159265358979323846 * std::min(t, 1.0)));
    return base_lr * (final_fraction + (1.0 - final_fraction) * cos01);
}

SgdOptimizer::SgdOptimizer(nn::ParamStore store, const TrainConfig& cfg)
    : store_(std::move(store)),
      momentum_(cfg.momentum),
      weight_decay_(cfg.weight_decay),
      max_grad_norm_(cfg.max_grad_norm) {
    for (const auto& [k, v] : store_.params) velocity_.push_back(Tensor::zeros(v->value.dims()));
}

void SgdOptimizer::step(double lr) {
    double clip = 1.0;
    if (max_grad_norm_ > 0) {
        double sq = 0;
        for (const auto& [k, p] : store_.params)
            if (!p->grad.empty())
                for (std::size_t i = 0; i < p->grad.size(); ++i) sq += p->grad[i] * p->grad[i];
        const double norm = std::sqrt(sq);
        if (norm > max_grad_norm_) clip = max_grad_norm_ / norm;
    }
    for (std::size_t pi = 0; pi < store_.params.size(); ++pi) {
        Var& p = store_.params[pi].second;
        Tensor& vel = velocity_[pi];
        if (!p->grad.empty()) {
            for (std::size_t i = 0; i < vel.size(); ++i) {
                vel[i] = momentum_ * vel[i] + clip * p->grad[i];
                p->value[i] -= lr * vel[i];
            }
        }
        if (weight_decay_ > 0) {
            // decoupled decay
            const double f = 1.0 - lr * weight_decay_;
            for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] *= f;
        }
    }
}

namespace {

void flip_frame(Frame& f) {
    const int w = f.width();
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < f.height(); ++y)
            for (int x = 0; x < w / 2; ++x)
                std::swap(f.image.at(c, y, x), f.image.at(c, y, w - 1 - x));
}

}  // namespace

std::vector<LossRow> train(DetectionModel& model, const DatasetIndex& data,
                           const TrainConfig& cfg) {
    cfg.validate();
    const int n_ctx = model.aggregator().context_radius_n();
    auto samples = sample_clips(data, cfg.target_fps, n_ctx);
    if (samples.empty()) throw InvalidConfig("train: dataset yields no clip samples");

    SgdOptimizer opt(model.params(), cfg);
    std::mt19937_64 rng(cfg.seed);
    const int target = model.config().image_size;
    const AssignConfig acfg;

    std::vector<LossRow> history;
    int iteration = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(samples.begin(), samples.end(), rng);
        for (const ClipSample& sample : samples) {
            FrameWindow window = window_for_sample(data, sample, n_ctx);
            const VideoEntry& v = data.videos[static_cast<std::size_t>(sample.video_index)];
            std::vector<GroundTruthInstance> gts = data.gts(v.id, sample.t);

            LetterboxTransform tf;
            for (auto& f : window.frames) {
                auto [boxed, t] = letterbox(f, {target, target});
                f = std::move(boxed);
                tf = t;
            }
            for (auto& g : gts) g.box = tf.apply(g.box);

            const bool flip = cfg.horizontal_flip && (rng() & 1);
            if (flip) {
                for (auto& f : window.frames) flip_frame(f);
                for (auto& g : gts) {
                    double x0 = g.box.x_min, x1 = g.box.x_max;
                    g.box.x_min = target - x1;
                    g.box.x_max = target - x0;
                }
            }

            auto outs = model.forward_window(window, true);
            Var total;
            LossBreakdown lb = compute_loss(outs, gts, acfg, &total);
            if (!std::isfinite(lb.total))
                throw DivergenceError("train: loss diverged at iteration " +
                                      std::to_string(iteration));
            nn::zero_grads(opt.store());
            backward(total);
            const double lr =
                scheduled_lr(cfg.learning_rate, iteration, cfg.warmup_iters,
                             cfg.epochs * static_cast<int>(samples.size()), cfg.final_lr_fraction);
            opt.step(lr);

            history.push_back(LossRow{iteration, lr, lb});
            ++iteration;
        }
    }
    return history;
}

void write_loss_csv(const std::vector<LossRow>& history, const std::string& path) {
    std::ofstream f(path);
    f << "iteration,lr,box_loss,obj_loss,cls_loss,total_loss\n";
    char buf[256];
    for (const auto& row : history) {
        std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", row.iteration, row.lr,
                      row.loss.box_loss, row.loss.objectness_loss, row.loss.classification_loss,
                      row.loss.total);
        f << buf;
    }
}

}  // namespace vodet
