#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "vodet/tensor.hpp"

namespace vodet {
namespace nn {

// Flat key -> parameter registry. Keys are dotted module paths. Buffers
// (running statistics) are saved alongside parameters.
struct ParamStore {
    std::vector<std::pair<std::string, Var>> params;
    std::vector<std::pair<std::string, Tensor*>> buffers;

    void add(const std::string& key, const Var& v) { params.emplace_back(key, v); }
    void add_buffer(const std::string& key, Tensor* t) { buffers.emplace_back(key, t); }
    std::size_t num_scalars() const;
};

void save_checkpoint(const ParamStore& store, const std::string& path);
void load_checkpoint(ParamStore& store, const std::string& path);
void zero_grads(ParamStore& store);

using Rng = std::mt19937_64;

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(int in_ch, int out_ch, int kernel, int stride, Rng& rng, bool zero_init = false);

    Var forward(const Var& x) const;
    void register_into(ParamStore& s, const std::string& prefix) const;

    Var weight, bias;
    int stride = 1, pad = 0;
};

class BatchNorm2d {
public:
    BatchNorm2d() = default;
    explicit BatchNorm2d(int channels);

    Var forward(const Var& x, bool training);
    void register_into(ParamStore& s, const std::string& prefix);

    Var gamma, beta;
    Tensor running_mean, running_var;
    double momentum = 0.1, eps = 1e-5;
};

// Group normalization (per-sample, batch-independent): identical behaviour
// in training and inference, which batch norm cannot offer at batch size 1.
class GroupNorm2d {
public:
    GroupNorm2d() = default;
    explicit GroupNorm2d(int channels);

    Var forward(const Var& x);
    void register_into(ParamStore& s, const std::string& prefix);

    Var gamma, beta;
    int groups = 1;
    double eps = 1e-5;
};

// conv + group-norm + SiLU
class ConvBlock {
public:
    ConvBlock() = default;
    ConvBlock(int in_ch, int out_ch, int kernel, int stride, Rng& rng);

    Var forward(const Var& x, bool training);
    void register_into(ParamStore& s, const std::string& prefix);

    Conv2d conv;
    GroupNorm2d norm;
};

}  // namespace nn
}  // namespace vodet
