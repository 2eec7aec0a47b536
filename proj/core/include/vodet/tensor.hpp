#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

namespace vodet {

// Dense row-major double tensor. Feature maps use CHW layout.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> dims);

    static Tensor zeros(std::vector<int> dims) { return Tensor(std::move(dims)); }
    static Tensor full(std::vector<int> dims, double v);

    const std::vector<int>& dims() const { return dims_; }
    int dim(int i) const { return dims_[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(dims_.size()); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // CHW accessor
    double& at(int c, int y, int x) {
        return data_[(static_cast<std::size_t>(c) * dims_[1] + y) * dims_[2] + x];
    }
    double at(int c, int y, int x) const {
        return data_[(static_cast<std::size_t>(c) * dims_[1] + y) * dims_[2] + x];
    }

    bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }
    bool all_finite() const;
    void fill(double v);

private:
    std::vector<int> dims_;
    std::vector<double> data_;
};

struct Node;
using Var = std::shared_ptr<Node>;

// Autograd node: eager forward, tape backward. Single-threaded.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backward_fn;

    Tensor& ensure_grad();
};

Var make_var(Tensor v, bool requires_grad = false);

// Disables graph construction (inference). Nestable.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};
bool grad_enabled();

// Elementwise / structural ops
Var add(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var silu(const Var& x);
Var sigmoid_v(const Var& x);
Var concat_channels(const std::vector<Var>& xs);
Var sum_all(const Var& x);
Var sum_squares(const Var& x);

// Spatial ops on CHW tensors
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var upsample2x(const Var& x);                       // nearest neighbour
Var bilinear_resize(const Var& x, int out_h, int out_w);  // half-pixel centers

// Backward-warp `feat` (CxHxW) by per-cell displacement `flow` (2xHxW,
// plane 0 = x, plane 1 = y, feature-cell units). Out-of-bounds reads are zero.
Var grid_sample_shift(const Var& feat, const Var& flow);

// Batch-norm over the spatial axes of a CHW map.
Var batchnorm_train(const Var& x, const Var& gamma, const Var& beta,
                    Tensor& running_mean, Tensor& running_var,
                    double momentum, double eps);
Var batchnorm_eval(const Var& x, const Var& gamma, const Var& beta,
                   const Tensor& running_mean, const Tensor& running_var,
                   double eps);

// Group normalization of a CHW map: per-group mean/variance over the group's
// channels and all spatial positions, then per-channel affine. Independent of
// any batch, so training and inference behave identically.
Var groupnorm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps);

// Runs the tape from `root` (scalar), accumulating into .grad of every
// reachable node with requires_grad.
void backward(const Var& root);

}  // namespace vodet
