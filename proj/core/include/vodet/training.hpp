#pragma once

#include <array>
#include <string>
#include <vector>

#include "vodet/datasets.hpp"
#include "vodet/detector.hpp"

namespace vodet {

struct TrainConfig {
    double learning_rate = 1e-4;
    double momentum = 0.9;
    double weight_decay = 1e-5;
    int epochs = 3;
    int warmup_iters = 500;
    double final_lr_fraction = 0.05;  // cosine decay target after warmup; 1 = constant lr
    double max_grad_norm = 10.0;      // global-norm gradient clip; 0 disables
    int batch_windows = 1;
    unsigned long long seed = 0;
    double target_fps = 10.0;
    bool horizontal_flip = false;

    void validate() const;
};

struct LossBreakdown {
    double box_loss = 0;
    double objectness_loss = 0;
    double classification_loss = 0;
    double total = 0;
};

// loss weights (box / objectness / classification)
inline constexpr double kBoxLossWeight = 5.0;
inline constexpr double kObjLossWeight = 1.0;
inline constexpr double kClsLossWeight = 1.0;

struct AssignConfig {
    // sqrt(area) band upper bounds routing a box to level 0 / 1 / 2
    std::array<double, 2> scale_bands = {32.0, 64.0};
    double center_radius_cells = 1.5;
};

// Per-level, per-cell assigned GT index (-1 = negative). Center sampling:
// positive when the cell center lies inside the box and within
// center_radius_cells of the box center, at the level matching the box
// scale band. Ties go to the smaller box, then input order. A box covering
// no cell center (thinner than its level's cell spacing) falls back to the
// block of cells its extent spans per axis (nearest row/column when it spans
// none), so a thin box still trains every cell along its length.
std::vector<std::vector<int>> assign_targets(const std::vector<GroundTruthInstance>& gts,
                                             const std::vector<HeadOutput>& head_geometry,
                                             const AssignConfig& config);

// IoU box loss + BCE objectness + BCE classification, normalized by
// max(1, num_positives). When total_out is non-null it receives a scalar
// Var wired into the autograd graph of the head outputs.
LossBreakdown compute_loss(const std::vector<HeadOutput>& head_out,
                           const std::vector<GroundTruthInstance>& gts,
                           const AssignConfig& config, Var* total_out = nullptr);

struct LossRow {
    int iteration = 0;
    double lr = 0;
    LossBreakdown loss;
};

double warmup_lr(double base_lr, int iteration, int warmup_iters);

// Linear warmup to base_lr, then cosine decay to base_lr * final_fraction
// at total_iters - 1.
double scheduled_lr(double base_lr, int iteration, int warmup_iters, int total_iters,
                    double final_fraction);

// SGD with momentum and decoupled weight decay over a ParamStore.
class SgdOptimizer {
public:
    SgdOptimizer(nn::ParamStore store, const TrainConfig& cfg);
    void step(double lr);
    nn::ParamStore& store() { return store_; }

private:
    nn::ParamStore store_;
    double momentum_, weight_decay_, max_grad_norm_;
    std::vector<Tensor> velocity_;
};

std::vector<LossRow> train(DetectionModel& model, const DatasetIndex& data,
                           const TrainConfig& cfg);

void write_loss_csv(const std::vector<LossRow>& history, const std::string& path);

}  // namespace vodet
