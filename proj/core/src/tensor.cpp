#include "vodet/tensor.hpp"

#include <Eigen/Dense>
#include <cassert>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace vodet {

namespace {
std::size_t numel(const std::vector<int>& dims) {
    std::size_t n = 1;
    for (int d : dims) {
        if (d <= 0) throw std::invalid_argument("tensor dims must be positive");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}
}  // namespace

Tensor::Tensor(std::vector<int> dims) : dims_(std::move(dims)), data_(numel(dims_), 0.0) {}

Tensor Tensor::full(std::vector<int> dims, double v) {
    Tensor t(std::move(dims));
    t.fill(v);
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tensor::fill(double v) {
    for (double& x : data_) x = v;
}

Tensor& Node::ensure_grad() {
    if (grad.empty()) grad = Tensor::zeros(value.dims());
    return grad;
}

Var make_var(Tensor v, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    return n;
}

namespace {
int g_no_grad_depth = 0;
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

namespace {

bool track(const std::vector<Var>& parents) {
    if (!grad_enabled()) return false;
    for (const auto& p : parents)
        if (p->requires_grad) return true;
    return false;
}

// Wires the result node. When tracking is off the node keeps no parents,
// so intermediate graphs free as the locals go out of scope.
Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
    auto out = std::make_shared<Node>();
    out->value = std::move(value);
    if (track(parents)) {
        out->requires_grad = true;
        out->parents = std::move(parents);
        out->backward_fn = std::move(fn);
    }
    return out;
}

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

}  // namespace

Var add(const Var& a, const Var& b) {
    if (!a->value.same_shape(b->value)) throw std::invalid_argument("add: shape mismatch");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
    return make_result(std::move(out), {a, b}, [](Node& n) {
        for (int k = 0; k < 2; ++k) {
            Var& p = n.parents[static_cast<std::size_t>(k)];
            if (!p->requires_grad) continue;
            Tensor& g = p->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
    return make_result(std::move(out), {a}, [s](Node& n) {
        Var& p = n.parents[0];
        if (!p->requires_grad) return;
        Tensor& g = p->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * n.grad[i];
    });
}

Var silu(const Var& x) {
    Tensor out = x->value;
    for (std::size_t i = 0; i < out.size(); ++i) {
        double v = out[i];
        out[i] = v / (1.0 + std::exp(-v));
    }
    return make_result(std::move(out), {x}, [](Node& n) {
        Var& p = n.parents[0];
        if (!p->requires_grad) return;
        Tensor& g = p->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            double v = p->value[i];
            double s = 1.0 / (1.0 + std::exp(-v));
            g[i] += n.grad[i] * (s * (1.0 + v * (1.0 - s)));
        }
    });
}

Var sigmoid_v(const Var& x) {
    Tensor out = x->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    return make_result(std::move(out), {x}, [](Node& n) {
        Var& p = n.parents[0];
        if (!p->requires_grad) return;
        Tensor& g = p->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            double s = n.value[i];
            g[i] += n.grad[i] * s * (1.0 - s);
        }
    });
}

Var concat_channels(const std::vector<Var>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_channels: empty input");
    int h = xs[0]->value.dim(1), w = xs[0]->value.dim(2);
    int c_total = 0;
    for (const auto& x : xs) {
        if (x->value.ndim() != 3 || x->value.dim(1) != h || x->value.dim(2) != w)
            throw std::invalid_argument("concat_channels: spatial mismatch");
        c_total += x->value.dim(0);
    }
    Tensor out({c_total, h, w});
    std::size_t off = 0;
    for (const auto& x : xs) {
        std::copy(x->value.data(), x->value.data() + x->value.size(), out.data() + off);
        off += x->value.size();
    }
    return make_result(std::move(out), xs, [](Node& n) {
        std::size_t off = 0;
        for (auto& p : n.parents) {
            std::size_t sz = p->value.size();
            if (p->requires_grad) {
                Tensor& g = p->ensure_grad();
                for (std::size_t i = 0; i < sz; ++i) g[i] += n.grad[off + i];
            }
            off += sz;
        }
    });
}

Var sum_all(const Var& x) {
    double s = 0;
    for (std::size_t i = 0; i < x->value.size(); ++i) s += x->value[i];
    Tensor out({1});
    out[0] = s;
    return make_result(std::move(out), {x}, [](Node& n) {
        Var& p = n.parents[0];
        if (!p->requires_grad) return;
        Tensor& g = p->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[0];
    });
}

Var sum_squares(const Var& x) {
    double s = 0;
    for (std::size_t i = 0; i < x->value.size(); ++i) s += x->value[i] * x->value[i];
    Tensor out({1});
    out[0] = s;
    return make_result(std::move(out), {x}, [](Node& n) {
        Var& p = n.parents[0];
        if (!p->requires_grad) return;
        Tensor& g = p->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * p->value[i] * n.grad[0];
    });
}

namespace {

void im2col(const Tensor& x, int kh, int kw, int stride, int pad, int oh, int ow, MatRM& cols) {
    const int ic = x.dim(0), h = x.dim(1), w = x.dim(2);
    cols.setZero(ic * kh * kw, oh * ow);
    for (int c = 0; c < ic; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                const int row = (c * kh + ky) * kw + kx;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= w) continue;
                        cols(row, oy * ow + ox) = x.at(c, iy, ix);
                    }
                }
            }
        }
    }
}

void col2im_accum(const MatRM& cols, int ic, int h, int w, int kh, int kw, int stride, int pad,
                  int oh, int ow, Tensor& gx) {
    for (int c = 0; c < ic; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                const int row = (c * kh + ky) * kw + kx;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= w) continue;
                        gx.at(c, iy, ix) += cols(row, oy * ow + ox);
                    }
                }
            }
        }
    }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    const Tensor& xv = x->value;
    const Tensor& wv = w->value;
    if (xv.ndim() != 3 || wv.ndim() != 4) throw std::invalid_argument("conv2d: bad rank");
    const int ic = xv.dim(0), h = xv.dim(1), ww = xv.dim(2);
    const int oc = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    if (wv.dim(1) != ic) throw std::invalid_argument("conv2d: channel mismatch");
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (ww + 2 * pad - kw) / stride + 1;
    if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: empty output");

    MatRM cols;
    im2col(xv, kh, kw, stride, pad, oh, ow, cols);
    CMapRM wm(wv.data(), oc, ic * kh * kw);

    Tensor out({oc, oh, ow});
    MapRM om(out.data(), oc, oh * ow);
    om.noalias() = wm * cols;
    if (b) {
        for (int c = 0; c < oc; ++c)
            om.row(c).array() += b->value[static_cast<std::size_t>(c)];
    }

    std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
    return make_result(std::move(out), std::move(parents),
                       [stride, pad, ic, h, ww, oc, kh, kw, oh, ow](Node& n) {
        Var& px = n.parents[0];
        Var& pw = n.parents[1];
        CMapRM gy(n.grad.data(), oc, oh * ow);
        if (pw->requires_grad || px->requires_grad) {
            MatRM cols;
            im2col(px->value, kh, kw, stride, pad, oh, ow, cols);
            if (pw->requires_grad) {
                MapRM gw(pw->ensure_grad().data(), oc, ic * kh * kw);
                gw.noalias() += gy * cols.transpose();
            }
            if (px->requires_grad) {
                CMapRM wm(pw->value.data(), oc, ic * kh * kw);
                MatRM gcols = wm.transpose() * gy;
                col2im_accum(gcols, ic, h, ww, kh, kw, stride, pad, oh, ow, px->ensure_grad());
            }
        }
        if (n.parents.size() == 3 && n.parents[2]->requires_grad) {
            Tensor& gb = n.parents[2]->ensure_grad();
            for (int c = 0; c < oc; ++c) gb[static_cast<std::size_t>(c)] += gy.row(c).sum();
        }
    });
}

Var upsample2x(const Var& x) {
    const Tensor& xv = x->value;
    const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    Tensor out({c, h * 2, w * 2});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < 2 * h; ++y)
            for (int xx = 0; xx < 2 * w; ++xx)
                out.at(ch, y, xx) = xv.at(ch, y / 2, xx / 2);
    return make_result(std::move(out), {x}, [c, h, w](Node& n) {
        Var& p = n.parents[0];
        if (!p->requires_grad) return;
        Tensor& g = p->ensure_grad();
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < 2 * h; ++y)
                for (int xx = 0; xx < 2 * w; ++xx)
                    g.at(ch, y / 2, xx / 2) += n.grad.at(ch, y, xx);
    });
}

namespace {
// half-pixel-center source coordinate
inline double src_coord(int dst, double scl) { return (dst + 0.5) * scl - 0.5; }
}

Var bilinear_resize(const Var& x, int out_h, int out_w) {
    const Tensor& xv = x->value;
    const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    const double sy = static_cast<double>(h) / out_h;
    const double sx = static_cast<double>(w) / out_w;
    Tensor out({c, out_h, out_w});
    for (int oy = 0; oy < out_h; ++oy) {
        double fy = src_coord(oy, sy);
        int y0 = static_cast<int>(std::floor(fy));
        double ty = fy - y0;
        int y0c = std::min(std::max(y0, 0), h - 1);
        int y1c = std::min(std::max(y0 + 1, 0), h - 1);
        for (int ox = 0; ox < out_w; ++ox) {
            double fx = src_coord(ox, sx);
            int x0 = static_cast<int>(std::floor(fx));
            double tx = fx - x0;
            int x0c = std::min(std::max(x0, 0), w - 1);
            int x1c = std::min(std::max(x0 + 1, 0), w - 1);
            for (int ch = 0; ch < c; ++ch) {
                double v = (1 - ty) * ((1 - tx) * xv.at(ch, y0c, x0c) + tx * xv.at(ch, y0c, x1c)) +
                           ty * ((1 - tx) * xv.at(ch, y1c, x0c) + tx * xv.at(ch, y1c, x1c));
                out.at(ch, oy, ox) = v;
            }
        }
    }
    return make_result(std::move(out), {x}, [c, h, w, out_h, out_w, sy, sx](Node& n) {
        Var& p = n.parents[0];
        if (!p->requires_grad) return;
        Tensor& g = p->ensure_grad();
        for (int oy = 0; oy < out_h; ++oy) {
            double fy = src_coord(oy, sy);
            int y0 = static_cast<int>(std::floor(fy));
            double ty = fy - y0;
            int y0c = std::min(std::max(y0, 0), h - 1);
            int y1c = std::min(std::max(y0 + 1, 0), h - 1);
            for (int ox = 0; ox < out_w; ++ox) {
                double fx = src_coord(ox, sx);
                int x0 = static_cast<int>(std::floor(fx));
                double tx = fx - x0;
                int x0c = std::min(std::max(x0, 0), w - 1);
                int x1c = std::min(std::max(x0 + 1, 0), w - 1);
                for (int ch = 0; ch < c; ++ch) {
                    double gv = n.grad.at(ch, oy, ox);
                    g.at(ch, y0c, x0c) += gv * (1 - ty) * (1 - tx);
                    g.at(ch, y0c, x1c) += gv * (1 - ty) * tx;
                    g.at(ch, y1c, x0c) += gv * ty * (1 - tx);
                    g.at(ch, y1c, x1c) += gv * ty * tx;
                }
            }
        }
    });
}

namespace {
inline double sample_zero(const Tensor& f, int c, int y, int x, int h, int w) {
    if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
    return f.at(c, y, x);
}
}

Var grid_sample_shift(const Var& feat, const Var& flow) {
    const Tensor& fv = feat->value;
    const Tensor& flv = flow->value;
    if (fv.ndim() != 3 || flv.ndim() != 3 || flv.dim(0) != 2 || flv.dim(1) != fv.dim(1) ||
        flv.dim(2) != fv.dim(2))
        throw std::invalid_argument("grid_sample_shift: shape mismatch");
    const int c = fv.dim(0), h = fv.dim(1), w = fv.dim(2);

    Tensor out({c, h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double sx = x + flv.at(0, y, x);
            double sy = y + flv.at(1, y, x);
            // Exact identity when the displacement is zero: skip interpolation.
            if (sx == static_cast<double>(x) && sy == static_cast<double>(y)) {
                for (int ch = 0; ch < c; ++ch) out.at(ch, y, x) = fv.at(ch, y, x);
                continue;
            }
            int x0 = static_cast<int>(std::floor(sx));
            int y0 = static_cast<int>(std::floor(sy));
            double tx = sx - x0, ty = sy - y0;
            for (int ch = 0; ch < c; ++ch) {
                double v00 = sample_zero(fv, ch, y0, x0, h, w);
                double v01 = sample_zero(fv, ch, y0, x0 + 1, h, w);
                double v10 = sample_zero(fv, ch, y0 + 1, x0, h, w);
                double v11 = sample_zero(fv, ch, y0 + 1, x0 + 1, h, w);
                out.at(ch, y, x) = (1 - ty) * ((1 - tx) * v00 + tx * v01) +
                                   ty * ((1 - tx) * v10 + tx * v11);
            }
        }
    }
    return make_result(std::move(out), {feat, flow}, [c, h, w](Node& n) {
        Var& pf = n.parents[0];
        Var& pl = n.parents[1];
        const Tensor& fv = pf->value;
        const Tensor& flv = pl->value;
        Tensor* gf = pf->requires_grad ? &pf->ensure_grad() : nullptr;
        Tensor* gl = pl->requires_grad ? &pl->ensure_grad() : nullptr;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double sx = x + flv.at(0, y, x);
                double sy = y + flv.at(1, y, x);
                int x0 = static_cast<int>(std::floor(sx));
                int y0 = static_cast<int>(std::floor(sy));
                double tx = sx - x0, ty = sy - y0;
                double dfx = 0, dfy = 0;
                for (int ch = 0; ch < c; ++ch) {
                    double go = n.grad.at(ch, y, x);
                    if (go == 0.0 && !gl) continue;
                    double v00 = sample_zero(fv, ch, y0, x0, h, w);
                    double v01 = sample_zero(fv, ch, y0, x0 + 1, h, w);
                    double v10 = sample_zero(fv, ch, y0 + 1, x0, h, w);
                    double v11 = sample_zero(fv, ch, y0 + 1, x0 + 1, h, w);
                    if (gf) {
                        auto scatter = [&](int yy, int xx, double wgt) {
                            if (yy >= 0 && yy < h && xx >= 0 && xx < w)
                                gf->at(ch, yy, xx) += go * wgt;
                        };
                        scatter(y0, x0, (1 - ty) * (1 - tx));
                        scatter(y0, x0 + 1, (1 - ty) * tx);
                        scatter(y0 + 1, x0, ty * (1 - tx));
                        scatter(y0 + 1, x0 + 1, ty * tx);
                    }
                    if (gl) {
                        dfx += go * ((1 - ty) * (v01 - v00) + ty * (v11 - v10));
                        dfy += go * ((1 - tx) * (v10 - v00) + tx * (v11 - v01));
                    }
                }
                if (gl) {
                    gl->at(0, y, x) += dfx;
                    gl->at(1, y, x) += dfy;
                }
            }
        }
    });
}

Var batchnorm_train(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
                    Tensor& running_var, double momentum, double eps) {
    const Tensor& xv = x->value;
    const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    const double n_spatial = static_cast<double>(h) * w;

    Tensor mean({c}), var({c});
    for (int ch = 0; ch < c; ++ch) {
        double s = 0;
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) s += xv.at(ch, y, xx);
        mean[static_cast<std::size_t>(ch)] = s / n_spatial;
    }
    for (int ch = 0; ch < c; ++ch) {
        double m = mean[static_cast<std::size_t>(ch)], s = 0;
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                double d = xv.at(ch, y, xx) - m;
                s += d * d;
            }
        var[static_cast<std::size_t>(ch)] = s / n_spatial;
    }
    for (int ch = 0; ch < c; ++ch) {
        auto i = static_cast<std::size_t>(ch);
        running_mean[i] = (1 - momentum) * running_mean[i] + momentum * mean[i];
        running_var[i] = (1 - momentum) * running_var[i] + momentum * var[i];
    }

    Tensor out({c, h, w});
    Tensor xhat({c, h, w});
    for (int ch = 0; ch < c; ++ch) {
        auto i = static_cast<std::size_t>(ch);
        double inv = 1.0 / std::sqrt(var[i] + eps);
        double g = gamma->value[i], b = beta->value[i];
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                double xh = (xv.at(ch, y, xx) - mean[i]) * inv;
                xhat.at(ch, y, xx) = xh;
                out.at(ch, y, xx) = g * xh + b;
            }
    }

    auto xhat_p = std::make_shared<Tensor>(std::move(xhat));
    auto var_p = std::make_shared<Tensor>(std::move(var));
    return make_result(std::move(out), {x, gamma, beta},
                       [c, h, w, n_spatial, eps, xhat_p, var_p](Node& n) {
        Var& px = n.parents[0];
        Var& pg = n.parents[1];
        Var& pb = n.parents[2];
        for (int ch = 0; ch < c; ++ch) {
            auto i = static_cast<std::size_t>(ch);
            double sum_dy = 0, sum_dy_xhat = 0;
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) {
                    double dy = n.grad.at(ch, y, xx);
                    sum_dy += dy;
                    sum_dy_xhat += dy * xhat_p->at(ch, y, xx);
                }
            if (pb->requires_grad) pb->ensure_grad()[i] += sum_dy;
            if (pg->requires_grad) pg->ensure_grad()[i] += sum_dy_xhat;
            if (px->requires_grad) {
                Tensor& gx = px->ensure_grad();
                double inv = 1.0 / std::sqrt((*var_p)[i] + eps);
                double g = pg->value[i];
                double mdy = sum_dy / n_spatial, mdyx = sum_dy_xhat / n_spatial;
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx) {
                        double dy = n.grad.at(ch, y, xx);
                        gx.at(ch, y, xx) +=
                            g * inv * (dy - mdy - xhat_p->at(ch, y, xx) * mdyx);
                    }
            }
        }
    });
}

Var batchnorm_eval(const Var& x, const Var& gamma, const Var& beta, const Tensor& running_mean,
                   const Tensor& running_var, double eps) {
    const Tensor& xv = x->value;
    const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    Tensor out({c, h, w});
    std::vector<double> inv(static_cast<std::size_t>(c));
    for (int ch = 0; ch < c; ++ch) {
        auto i = static_cast<std::size_t>(ch);
        inv[i] = 1.0 / std::sqrt(running_var[i] + eps);
        double g = gamma->value[i], b = beta->value[i], m = running_mean[i];
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx)
                out.at(ch, y, xx) = g * (xv.at(ch, y, xx) - m) * inv[i] + b;
    }
    auto inv_p = std::make_shared<std::vector<double>>(std::move(inv));
    Tensor rm = running_mean;
    auto rm_p = std::make_shared<Tensor>(std::move(rm));
    return make_result(std::move(out), {x, gamma, beta}, [c, h, w, inv_p, rm_p](Node& n) {
        Var& px = n.parents[0];
        Var& pg = n.parents[1];
        Var& pb = n.parents[2];
        for (int ch = 0; ch < c; ++ch) {
            auto i = static_cast<std::size_t>(ch);
            double sum_dy = 0, sum_dy_xhat = 0;
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) {
                    double dy = n.grad.at(ch, y, xx);
                    sum_dy += dy;
                    sum_dy_xhat += dy * (px->value.at(ch, y, xx) - (*rm_p)[i]) * (*inv_p)[i];
                }
            if (pb->requires_grad) pb->ensure_grad()[i] += sum_dy;
            if (pg->requires_grad) pg->ensure_grad()[i] += sum_dy_xhat;
            if (px->requires_grad) {
                Tensor& gx = px->ensure_grad();
                double k = pg->value[i] * (*inv_p)[i];
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx)
                        gx.at(ch, y, xx) += k * n.grad.at(ch, y, xx);
            }
        }
    });
}

Var groupnorm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps) {
    const Tensor& xv = x->value;
    const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    if (groups <= 0 || c % groups != 0)
        throw std::invalid_argument("groupnorm: groups must divide channels");
    const int gc = c / groups;  // channels per group
    const double m = static_cast<double>(gc) * h * w;  // elements per group

    Tensor mean({groups}), inv_std({groups});
    for (int g = 0; g < groups; ++g) {
        double s = 0;
        for (int ch = g * gc; ch < (g + 1) * gc; ++ch)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) s += xv.at(ch, y, xx);
        const double mu = s / m;
        double v = 0;
        for (int ch = g * gc; ch < (g + 1) * gc; ++ch)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) {
                    const double d = xv.at(ch, y, xx) - mu;
                    v += d * d;
                }
        mean[static_cast<std::size_t>(g)] = mu;
        inv_std[static_cast<std::size_t>(g)] = 1.0 / std::sqrt(v / m + eps);
    }

    Tensor out({c, h, w});
    Tensor xhat({c, h, w});
    for (int ch = 0; ch < c; ++ch) {
        const auto g = static_cast<std::size_t>(ch / gc);
        const double inv = inv_std[g], mu = mean[g];
        const double ga = gamma->value[static_cast<std::size_t>(ch)];
        const double be = beta->value[static_cast<std::size_t>(ch)];
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                const double xh = (xv.at(ch, y, xx) - mu) * inv;
                xhat.at(ch, y, xx) = xh;
                out.at(ch, y, xx) = ga * xh + be;
            }
    }

    auto xhat_p = std::make_shared<Tensor>(std::move(xhat));
    auto inv_p = std::make_shared<Tensor>(std::move(inv_std));
    return make_result(std::move(out), {x, gamma, beta},
                       [groups, gc, h, w, m, xhat_p, inv_p](Node& n) {
        Var& px = n.parents[0];
        Var& pg = n.parents[1];
        Var& pb = n.parents[2];
        const int c = groups * gc;
        // per-channel affine grads
        for (int ch = 0; ch < c; ++ch) {
            double sum_dy = 0, sum_dy_xhat = 0;
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) {
                    const double dy = n.grad.at(ch, y, xx);
                    sum_dy += dy;
                    sum_dy_xhat += dy * xhat_p->at(ch, y, xx);
                }
            const auto i = static_cast<std::size_t>(ch);
            if (pb->requires_grad) pb->ensure_grad()[i] += sum_dy;
            if (pg->requires_grad) pg->ensure_grad()[i] += sum_dy_xhat;
        }
        if (!px->requires_grad) return;
        Tensor& gx = px->ensure_grad();
        for (int g = 0; g < groups; ++g) {
            // dL/dx via the normalized values: dx = inv * (gdy - mean(gdy)
            // - xhat * mean(gdy * xhat)) with gdy = dy * gamma_c
            double sum_g = 0, sum_g_xhat = 0;
            for (int ch = g * gc; ch < (g + 1) * gc; ++ch) {
                const double ga = pg->value[static_cast<std::size_t>(ch)];
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx) {
                        const double gdy = n.grad.at(ch, y, xx) * ga;
                        sum_g += gdy;
                        sum_g_xhat += gdy * xhat_p->at(ch, y, xx);
                    }
            }
            const double mg = sum_g / m, mgx = sum_g_xhat / m;
            const double inv = (*inv_p)[static_cast<std::size_t>(g)];
            for (int ch = g * gc; ch < (g + 1) * gc; ++ch) {
                const double ga = pg->value[static_cast<std::size_t>(ch)];
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx) {
                        const double gdy = n.grad.at(ch, y, xx) * ga;
                        gx.at(ch, y, xx) +=
                            inv * (gdy - mg - xhat_p->at(ch, y, xx) * mgx);
                    }
            }
        }
    });
}

void backward(const Var& root) {
    if (root->value.size() != 1) throw std::invalid_argument("backward: root must be scalar");
    // topological order via iterative DFS
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx].get();
            ++idx;
            if (p->backward_fn && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad()[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

}  // namespace vodet
