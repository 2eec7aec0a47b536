#pragma once

#include <string>
#include <vector>

#include "vodet/datamodel.hpp"

namespace vodet {

struct MatchRecord {
    int det_index = -1;   // index into the input detection list
    int gt_index = -1;    // matched ground truth, or -1
    double iou = 0.0;
    bool is_true_positive = false;
    double score = 0.0;
    int label = 0;
};

// Greedy per-class matching under the COCO double-detection rule. Records
// come back in processing order (score descending, stable).
std::vector<MatchRecord> match_detections(const std::vector<Detection>& dets,
                                          const std::vector<GroundTruthInstance>& gts,
                                          double iou_threshold);

// COCO-style AP: precision envelope sampled at 101 recall points.
// `tp_flags` are globally score-ranked records for one class.
double average_precision(const std::vector<bool>& tp_flags, int num_gt);

struct EvalReport {
    int num_classes = 0;
    std::vector<double> per_class_ap;    // IoU 0.50:0.05:0.95 average; -1 = undefined (no GT)
    std::vector<double> per_class_ap50;
    double map = 0.0;
    double map50 = 0.0;
    std::vector<std::vector<int>> confusion_counts;   // (nc+1) x (nc+1), last = background
    std::vector<std::vector<double>> confusion;       // row-normalized over non-zero rows
    double confusion_iou_threshold = 0.5;
    double confusion_score_threshold = 0.3;
};

struct EvalConfig {
    int num_classes = 3;
    double confusion_iou_threshold = 0.5;
    double confusion_score_threshold = 0.3;
};

EvalReport evaluate(const std::vector<std::vector<Detection>>& dets_per_frame,
                    const std::vector<std::vector<GroundTruthInstance>>& gts_per_frame,
                    const EvalConfig& config);

// Label-agnostic spatial matching, then (actual class -> predicted class)
// tabulation; unmatched GTs go to the Background column, unmatched
// detections to the Background row.
std::vector<std::vector<int>> confusion_matrix_counts(
    const std::vector<std::vector<Detection>>& dets_per_frame,
    const std::vector<std::vector<GroundTruthInstance>>& gts_per_frame, int num_classes,
    double iou_threshold, double score_threshold);

std::vector<std::vector<double>> normalize_confusion(const std::vector<std::vector<int>>& counts);

void write_report_text(const EvalReport& r, const std::vector<std::string>& class_names,
                       const std::string& path);
void write_report_kv(const EvalReport& r, const std::vector<std::string>& class_names,
                     const std::string& path);
void write_confusion_csv(const EvalReport& r, const std::vector<std::string>& class_names,
                         const std::string& path);

// COCO results format: [{image_id, category_id, bbox [x,y,w,h], score}]
void export_predictions_coco(const std::vector<std::vector<Detection>>& dets_per_frame,
                             const std::string& path);
std::vector<std::vector<Detection>> load_predictions_coco(const std::string& path,
                                                          int num_frames);

}  // namespace vodet
