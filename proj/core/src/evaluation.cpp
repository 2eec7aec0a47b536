#include "vodet/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "vodet/errors.hpp"

namespace vodet {

std::vector<MatchRecord> match_detections(const std::vector<Detection>& dets,
                                          const std::vector<GroundTruthInstance>& gts,
                                          double iou_threshold) {
    if (iou_threshold <= 0.0 || iou_threshold > 1.0)
        throw InvalidConfig("match_detections: iou_threshold outside (0,1]");

    std::vector<int> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return dets[static_cast<std::size_t>(a)].score > dets[static_cast<std::size_t>(b)].score;
    });

    std::vector<bool> gt_used(gts.size(), false);
    std::vector<MatchRecord> records;
    records.reserve(dets.size());
    for (int di : order) {
        const Detection& d = dets[static_cast<std::size_t>(di)];
        MatchRecord r;
        r.det_index = di;
        r.score = d.score;
        r.label = d.label;
        double best_iou = 0.0;
        int best_gt = -1;
        for (std::size_t gi = 0; gi < gts.size(); ++gi) {
            if (gt_used[gi] || gts[gi].label != d.label) continue;
            double v = iou(d.box, gts[gi].box);
            if (v >= iou_threshold && v > best_iou) {
                best_iou = v;
                best_gt = static_cast<int>(gi);
            }
        }
        if (best_gt >= 0) {
            gt_used[static_cast<std::size_t>(best_gt)] = true;
            r.gt_index = best_gt;
            r.iou = best_iou;
            r.is_true_positive = true;
        }
        records.push_back(r);
    }
    return records;
}

double average_precision(const std::vector<bool>& tp_flags, int num_gt) {
    if (num_gt <= 0) throw InvalidConfig("average_precision: class has no ground truth");
    if (tp_flags.empty()) return 0.0;

    std::vector<double> precision(tp_flags.size()), recall(tp_flags.size());
    int tp = 0;
    for (std::size_t i = 0; i < tp_flags.size(); ++i) {
        if (tp_flags[i]) ++tp;
        precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
        recall[i] = static_cast<double>(tp) / num_gt;
    }
    // monotone non-increasing precision envelope
    for (std::size_t i = precision.size() - 1; i > 0; --i)
        precision[i - 1] = std::max(precision[i - 1], precision[i]);

    double sum = 0.0;
    for (int k = 0; k <= 100; ++k) {
        const double r = k / 100.0;
        // first operating point with recall >= r
        auto it = std::lower_bound(recall.begin(), recall.end(), r);
        if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
    }
    return sum / 101.0;
}

namespace {

struct PooledRecord {
    double score;
    bool tp;
};

// AP for one class at one IoU threshold, matching per frame, ranking
// globally.
double class_ap(const std::vector<std::vector<Detection>>& dets_per_frame,
                const std::vector<std::vector<GroundTruthInstance>>& gts_per_frame, int cls,
                double thr, bool& defined) {
    std::vector<PooledRecord> pooled;
    int num_gt = 0;
    for (std::size_t f = 0; f < dets_per_frame.size(); ++f) {
        for (const auto& g : gts_per_frame[f])
            if (g.label == cls) ++num_gt;
        auto records = match_detections(dets_per_frame[f], gts_per_frame[f], thr);
        for (const auto& r : records)
            if (r.label == cls) pooled.push_back({r.score, r.is_true_positive});
    }
    if (num_gt == 0) {
        defined = false;
        return 0.0;
    }
    defined = true;
    std::stable_sort(pooled.begin(), pooled.end(),
                     [](const PooledRecord& a, const PooledRecord& b) { return a.score > b.score; });
    std::vector<bool> flags;
    flags.reserve(pooled.size());
    for (const auto& p : pooled) flags.push_back(p.tp);
    return average_precision(flags, num_gt);
}

}  // namespace

std::vector<std::vector<int>> confusion_matrix_counts(
    const std::vector<std::vector<Detection>>& dets_per_frame,
    const std::vector<std::vector<GroundTruthInstance>>& gts_per_frame, int num_classes,
    double iou_threshold, double score_threshold) {
    const int n = num_classes + 1;  // + background
    std::vector<std::vector<int>> counts(static_cast<std::size_t>(n),
                                         std::vector<int>(static_cast<std::size_t>(n), 0));
    for (std::size_t f = 0; f < dets_per_frame.size(); ++f) {
        std::vector<Detection> dets;
        for (const auto& d : dets_per_frame[f])
            if (d.score >= score_threshold) dets.push_back(d);
        const auto& gts = gts_per_frame[f];

        std::vector<int> order(dets.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return dets[static_cast<std::size_t>(a)].score > dets[static_cast<std::size_t>(b)].score;
        });

        // label-agnostic spatial matching
        std::vector<bool> gt_used(gts.size(), false);
        std::vector<bool> det_matched(dets.size(), false);
        for (int di : order) {
            const Detection& d = dets[static_cast<std::size_t>(di)];
            double best_iou = 0.0;
            int best_gt = -1;
            for (std::size_t gi = 0; gi < gts.size(); ++gi) {
                if (gt_used[gi]) continue;
                double v = iou(d.box, gts[gi].box);
                if (v >= iou_threshold && v > best_iou) {
                    best_iou = v;
                    best_gt = static_cast<int>(gi);
                }
            }
            if (best_gt >= 0) {
                gt_used[static_cast<std::size_t>(best_gt)] = true;
                det_matched[static_cast<std::size_t>(di)] = true;
                auto row = static_cast<std::size_t>(gts[static_cast<std::size_t>(best_gt)].label);
                counts[row][static_cast<std::size_t>(d.label)] += 1;
            }
        }
        for (std::size_t gi = 0; gi < gts.size(); ++gi)
            if (!gt_used[gi])
                counts[static_cast<std::size_t>(gts[gi].label)][static_cast<std::size_t>(num_classes)] += 1;
        for (std::size_t di = 0; di < dets.size(); ++di)
            if (!det_matched[di])
                counts[static_cast<std::size_t>(num_classes)][static_cast<std::size_t>(dets[di].label)] += 1;
    }
    return counts;
}

std::vector<std::vector<double>> normalize_confusion(const std::vector<std::vector<int>>& counts) {
    std::vector<std::vector<double>> out(counts.size(),
                                         std::vector<double>(counts.size(), 0.0));
    for (std::size_t r = 0; r < counts.size(); ++r) {
        long total = 0;
        for (int v : counts[r]) total += v;
        if (total == 0) continue;
        for (std::size_t c = 0; c < counts[r].size(); ++c)
            out[r][c] = static_cast<double>(counts[r][c]) / static_cast<double>(total);
    }
    return out;
}

EvalReport evaluate(const std::vector<std::vector<Detection>>& dets_per_frame,
                    const std::vector<std::vector<GroundTruthInstance>>& gts_per_frame,
                    const EvalConfig& config) {
    if (dets_per_frame.size() != gts_per_frame.size())
        throw InvalidConfig("evaluate: frame count mismatch");
    EvalReport rep;
    rep.num_classes = config.num_classes;
    rep.confusion_iou_threshold = config.confusion_iou_threshold;
    rep.confusion_score_threshold = config.confusion_score_threshold;

    std::vector<double> thresholds;
    for (int k = 0; k < 10; ++k) thresholds.push_back(0.50 + 0.05 * k);

    int defined_classes = 0;
    for (int c = 0; c < config.num_classes; ++c) {
        double ap_sum = 0.0, ap50 = 0.0;
        bool defined = true;
        for (double thr : thresholds) {
            bool d = true;
            double ap = class_ap(dets_per_frame, gts_per_frame, c, thr, d);
            if (!d) {
                defined = false;
                break;
            }
            ap_sum += ap;
            if (thr == 0.50) ap50 = ap;
        }
        if (defined) {
            rep.per_class_ap.push_back(ap_sum / static_cast<double>(thresholds.size()));
            rep.per_class_ap50.push_back(ap50);
            rep.map += rep.per_class_ap.back();
            rep.map50 += ap50;
            ++defined_classes;
        } else {
            rep.per_class_ap.push_back(-1.0);
            rep.per_class_ap50.push_back(-1.0);
        }
    }
    if (defined_classes > 0) {
        rep.map /= defined_classes;
        rep.map50 /= defined_classes;
    }

    rep.confusion_counts =
        confusion_matrix_counts(dets_per_frame, gts_per_frame, config.num_classes,
                                config.confusion_iou_threshold, config.confusion_score_threshold);
    rep.confusion = normalize_confusion(rep.confusion_counts);
    return rep;
}

namespace {
std::vector<std::string> row_names(const std::vector<std::string>& class_names) {
    std::vector<std::string> names = class_names;
    names.push_back("background");
    return names;
}
}

void write_report_text(const EvalReport& r, const std::vector<std::string>& class_names,
                       const std::string& path) {
    std::ofstream f(path);
    char buf[256];
    std::snprintf(buf, sizeof buf, "mAP       %.6f\nmAP@50    %.6f\n", r.map, r.map50);
    f << buf;
    for (int c = 0; c < r.num_classes; ++c) {
        auto ci = static_cast<std::size_t>(c);
        if (r.per_class_ap[ci] < 0) {
            f << "AP-" << class_names[ci] << "  (no ground truth)\n";
        } else {
            std::snprintf(buf, sizeof buf, "AP-%s  %.6f  (AP@50 %.6f)\n", class_names[ci].c_str(),
                          r.per_class_ap[ci], r.per_class_ap50[ci]);
            f << buf;
        }
    }
    std::snprintf(buf, sizeof buf, "\nconfusion matrix (IoU %.2f, score %.2f), rows = actual:\n",
                  r.confusion_iou_threshold, r.confusion_score_threshold);
    f << buf;
    auto names = row_names(class_names);
    for (std::size_t row = 0; row < r.confusion.size(); ++row) {
        f << "  " << names[row] << ":";
        for (double v : r.confusion[row]) {
            std::snprintf(buf, sizeof buf, " %.3f", v);
            f << buf;
        }
        f << "\n";
    }
}

void write_report_kv(const EvalReport& r, const std::vector<std::string>& class_names,
                     const std::string& path) {
    std::ofstream f(path);
    char buf[256];
    std::snprintf(buf, sizeof buf, "map=%.9f\nmap50=%.9f\n", r.map, r.map50);
    f << buf;
    for (int c = 0; c < r.num_classes; ++c) {
        auto ci = static_cast<std::size_t>(c);
        std::snprintf(buf, sizeof buf, "ap_%s=%.9f\nap50_%s=%.9f\n", class_names[ci].c_str(),
                      r.per_class_ap[ci], class_names[ci].c_str(), r.per_class_ap50[ci]);
        f << buf;
    }
}

void write_confusion_csv(const EvalReport& r, const std::vector<std::string>& class_names,
                         const std::string& path) {
    std::ofstream f(path);
    auto names = row_names(class_names);
    char buf[64];
    std::snprintf(buf, sizeof buf, "# iou_threshold=%.2f score_threshold=%.2f\n",
                  r.confusion_iou_threshold, r.confusion_score_threshold);
    f << buf;
    f << "actual";
    for (const auto& n : names) f << "," << n;
    f << "\n";
    for (std::size_t row = 0; row < r.confusion.size(); ++row) {
        f << names[row];
        for (double v : r.confusion[row]) {
            std::snprintf(buf, sizeof buf, ",%.6f", v);
            f << buf;
        }
        f << "\n";
    }
}

void export_predictions_coco(const std::vector<std::vector<Detection>>& dets_per_frame,
                             const std::string& path) {
    nlohmann::json j = nlohmann::json::array();
    for (std::size_t f = 0; f < dets_per_frame.size(); ++f) {
        for (const auto& d : dets_per_frame[f]) {
            j.push_back({{"image_id", static_cast<int>(f) + 1},
                         {"category_id", d.label + 1},
                         {"bbox", {d.box.x_min, d.box.y_min, d.box.width(), d.box.height()}},
                         {"score", d.score}});
        }
    }
    std::ofstream file(path);
    file << j.dump(2) << "\n";
}

std::vector<std::vector<Detection>> load_predictions_coco(const std::string& path,
                                                          int num_frames) {
    std::ifstream file(path);
    if (!file) throw ParseError("cannot open predictions file: " + path);
    nlohmann::json j;
    try {
        file >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("invalid predictions json: ") + e.what());
    }
    std::vector<std::vector<Detection>> out(static_cast<std::size_t>(num_frames));
    for (const auto& e : j) {
        int image_id = e.at("image_id").get<int>();
        if (image_id < 1 || image_id > num_frames)
            throw ValidationError("prediction references unknown image_id " +
                                  std::to_string(image_id));
        const auto& b = e.at("bbox");
        Detection d;
        d.label = e.at("category_id").get<int>() - 1;
        d.score = e.at("score").get<double>();
        double x = b.at(0).get<double>(), y = b.at(1).get<double>();
        d.box = BoundingBox{x, y, x + b.at(2).get<double>(), y + b.at(3).get<double>()};
        out[static_cast<std::size_t>(image_id - 1)].push_back(d);
    }
    return out;
}

}  // namespace vodet
