#include "vodet/nn.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>

#include "vodet/errors.hpp"

namespace vodet {
namespace nn {

std::size_t ParamStore::num_scalars() const {
    std::size_t n = 0;
    for (const auto& [k, v] : params) n += v->value.size();
    return n;
}

namespace {

constexpr char kMagic[8] = {'V', 'O', 'D', 'T', 'C', 'K', 'P', '1'};

void write_tensor(std::ofstream& f, const std::string& key, const Tensor& t) {
    auto klen = static_cast<std::uint32_t>(key.size());
    f.write(reinterpret_cast<const char*>(&klen), 4);
    f.write(key.data(), klen);
    auto nd = static_cast<std::uint32_t>(t.ndim());
    f.write(reinterpret_cast<const char*>(&nd), 4);
    for (int d : t.dims()) {
        auto dd = static_cast<std::uint32_t>(d);
        f.write(reinterpret_cast<const char*>(&dd), 4);
    }
    f.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
}

Tensor read_tensor(std::ifstream& f, std::string& key) {
    std::uint32_t klen = 0;
    f.read(reinterpret_cast<char*>(&klen), 4);
    key.resize(klen);
    f.read(key.data(), klen);
    std::uint32_t nd = 0;
    f.read(reinterpret_cast<char*>(&nd), 4);
    std::vector<int> dims(nd);
    for (auto& d : dims) {
        std::uint32_t dd = 0;
        f.read(reinterpret_cast<char*>(&dd), 4);
        d = static_cast<int>(dd);
    }
    Tensor t(dims);
    f.read(reinterpret_cast<char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!f) throw CheckpointError("truncated checkpoint entry '" + key + "'");
    return t;
}

}  // namespace

void save_checkpoint(const ParamStore& store, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint for writing: " + path);
    f.write(kMagic, 8);
    auto count = static_cast<std::uint32_t>(store.params.size() + store.buffers.size());
    f.write(reinterpret_cast<const char*>(&count), 4);
    for (const auto& [k, v] : store.params) write_tensor(f, k, v->value);
    for (const auto& [k, t] : store.buffers) write_tensor(f, k, *t);
}

void load_checkpoint(ParamStore& store, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::string(magic, 8) != std::string(kMagic, 8))
        throw CheckpointError("bad checkpoint magic: " + path);
    std::uint32_t count = 0;
    f.read(reinterpret_cast<char*>(&count), 4);

    std::vector<std::pair<std::string, Tensor>> entries;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string key;
        Tensor t = read_tensor(f, key);
        entries.emplace_back(std::move(key), std::move(t));
    }
    auto find = [&](const std::string& key) -> Tensor* {
        for (auto& [k, t] : entries)
            if (k == key) return &t;
        return nullptr;
    };
    for (auto& [k, v] : store.params) {
        Tensor* t = find(k);
        if (!t) throw CheckpointError("missing parameter '" + k + "' in " + path);
        if (!t->same_shape(v->value))
            throw CheckpointError("shape mismatch for '" + k + "' in " + path);
        v->value = *t;
    }
    for (auto& [k, buf] : store.buffers) {
        Tensor* t = find(k);
        if (!t) throw CheckpointError("missing buffer '" + k + "' in " + path);
        if (!t->same_shape(*buf))
            throw CheckpointError("shape mismatch for buffer '" + k + "' in " + path);
        *buf = *t;
    }
}

void zero_grads(ParamStore& store) {
    for (auto& [k, v] : store.params)
        if (!v->grad.empty()) v->grad.fill(0.0);
}

Conv2d::Conv2d(int in_ch, int out_ch, int kernel, int stride_, Rng& rng, bool zero_init) {
    Tensor w({out_ch, in_ch, kernel, kernel});
    Tensor b({out_ch});
    if (!zero_init) {
        // Kaiming-style fan-in scaling
        double std_dev = std::sqrt(2.0 / (in_ch * kernel * kernel));
        std::normal_distribution<double> dist(0.0, std_dev);
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = dist(rng);
    }
    weight = make_var(std::move(w), true);
    bias = make_var(std::move(b), true);
    stride = stride_;
    pad = kernel / 2;
}

Var Conv2d::forward(const Var& x) const { return conv2d(x, weight, bias, stride, pad); }

void Conv2d::register_into(ParamStore& s, const std::string& prefix) const {
    s.add(prefix + ".weight", weight);
    s.add(prefix + ".bias", bias);
}

BatchNorm2d::BatchNorm2d(int channels) {
    gamma = make_var(Tensor::full({channels}, 1.0), true);
    beta = make_var(Tensor::zeros({channels}), true);
    running_mean = Tensor::zeros({channels});
    running_var = Tensor::full({channels}, 1.0);
}

Var BatchNorm2d::forward(const Var& x, bool training) {
    if (training)
        return batchnorm_train(x, gamma, beta, running_mean, running_var, momentum, eps);
    return batchnorm_eval(x, gamma, beta, running_mean, running_var, eps);
}

void BatchNorm2d::register_into(ParamStore& s, const std::string& prefix) {
    s.add(prefix + ".gamma", gamma);
    s.add(prefix + ".beta", beta);
    s.add_buffer(prefix + ".running_mean", &running_mean);
    s.add_buffer(prefix + ".running_var", &running_var);
}

GroupNorm2d::GroupNorm2d(int channels) {
    gamma = make_var(Tensor::full({channels}, 1.0), true);
    beta = make_var(Tensor::zeros({channels}), true);
    // largest power-of-two group count <= 8 that divides the channel count
    groups = 1;
    for (int g = 2; g <= 8; g *= 2)
        if (channels % g == 0) groups = g;
}

Var GroupNorm2d::forward(const Var& x) { return groupnorm(x, gamma, beta, groups, eps); }

void GroupNorm2d::register_into(ParamStore& s, const std::string& prefix) {
    s.add(prefix + ".gamma", gamma);
    s.add(prefix + ".beta", beta);
}

ConvBlock::ConvBlock(int in_ch, int out_ch, int kernel, int stride, Rng& rng)
    : conv(in_ch, out_ch, kernel, stride, rng), norm(out_ch) {}

Var ConvBlock::forward(const Var& x, bool training) {
    (void)training;  // group norm is batch-free: train and eval paths coincide
    return silu(norm.forward(conv.forward(x)));
}

void ConvBlock::register_into(ParamStore& s, const std::string& prefix) {
    conv.register_into(s, prefix + ".conv");
    norm.register_into(s, prefix + ".norm");
}

}  // namespace nn
}  // namespace vodet
