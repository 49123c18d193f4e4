#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "bevseg/rng.hpp"
#include "bevseg/tensor.hpp"

namespace bevseg {

// y[.., Cout] = x[.., Cin] * weight[Cout, Cin]^T + bias[Cout]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {}) {
    if (weight.rank() != 2 || x.dim(x.rank() - 1) != weight.dim(1) ||
        (bias.defined() && (bias.rank() != 1 || bias.dim(0) != weight.dim(0))))
        throw DimensionError("linear: input " + shape_str(x.shape()) + ", weight " + shape_str(weight.shape()) +
                             (bias.defined() ? ", bias " + shape_str(bias.shape()) : std::string()));
    const std::size_t cin = weight.dim(1), cout = weight.dim(0);
    const std::size_t rows = x.numel() / cin;
    Shape s = x.shape();
    s.back() = cout;
    Tensor<T> out(s);
    kernel::gemm_nt(rows, cout, cin, x.data().data(), weight.data().data(), out.data().data(), false);
    if (bias.defined()) {
        auto o = out.data();
        auto b = bias.data();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cout; ++c) o[r * cout + c] += b[c];
    }
    bool rec = detail::needs_grad(x, weight, bias);
    return detail::finish(out, rec, "linear", [x, weight, bias, out, rows, cin, cout]() mutable {
        const T* g = out.grad().data();
        if (x.requires_grad())
            kernel::gemm_nn(rows, cin, cout, g, weight.data().data(), x.grad().data(), true);
        if (weight.requires_grad())
            kernel::gemm_tn(cout, cin, rows, g, x.data().data(), weight.grad().data(), true);
        if (bias.defined() && bias.requires_grad()) {
            auto gb = bias.grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cout; ++c) gb[c] += g[r * cout + c];
        }
    });
}

struct Conv2dGeometry {
    std::size_t n, cin, h, w, cout, kh, kw, stride, pad, ho, wo;
    bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

namespace detail {

template <typename T>
void im2col(const T* x, const Conv2dGeometry& g, T* col) {
    const std::size_t hw = g.ho * g.wo;
    for (std::size_t c = 0; c < g.cin; ++c)
        for (std::size_t ki = 0; ki < g.kh; ++ki)
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                T* row = col + ((c * g.kh + ki) * g.kw + kj) * hw;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
                        row[oy * g.wo + ox] = (iy >= 0 && iy < static_cast<long>(g.h) && ix >= 0 &&
                                               ix < static_cast<long>(g.w))
                                                  ? x[(c * g.h + iy) * g.w + ix]
                                                  : T(0);
                    }
                }
            }
}

template <typename T>
void col2im_add(const T* col, const Conv2dGeometry& g, T* x) {
    const std::size_t hw = g.ho * g.wo;
    for (std::size_t c = 0; c < g.cin; ++c)
        for (std::size_t ki = 0; ki < g.kh; ++ki)
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                const T* row = col + ((c * g.kh + ki) * g.kw + kj) * hw;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
                    if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
                        if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
                        x[(c * g.h + iy) * g.w + ix] += row[oy * g.wo + ox];
                    }
                }
            }
}

}  // namespace detail

// Cross-correlation (no kernel flip). x is [N,Cin,H,W] or [Cin,H,W].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad) {
    const bool batched = x.rank() == 4;
    if ((x.rank() != 3 && x.rank() != 4) || kernel.rank() != 4)
        throw DimensionError("conv2d: input " + shape_str(x.shape()) + ", kernel " + shape_str(kernel.shape()));
    Conv2dGeometry g{};
    g.n = batched ? x.dim(0) : 1;
    g.cin = x.dim(x.rank() - 3);
    g.h = x.dim(x.rank() - 2);
    g.w = x.dim(x.rank() - 1);
    g.cout = kernel.dim(0);
    g.kh = kernel.dim(2);
    g.kw = kernel.dim(3);
    g.stride = stride;
    g.pad = pad;
    if (kernel.dim(1) != g.cin)
        throw DimensionError("conv2d: input channels " + std::to_string(g.cin) + " vs kernel " +
                             shape_str(kernel.shape()));
    if (stride == 0 || g.h + 2 * pad < g.kh || g.w + 2 * pad < g.kw)
        throw DimensionError("conv2d: non-positive output size for input " + shape_str(x.shape()) + ", kernel " +
                             shape_str(kernel.shape()));
    g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
    g.wo = (g.w + 2 * pad - g.kw) / stride + 1;
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.cout))
        throw DimensionError("conv2d: bias " + shape_str(bias.shape()));

    Shape s = batched ? Shape{g.n, g.cout, g.ho, g.wo} : Shape{g.cout, g.ho, g.wo};
    Tensor<T> out(s);
    const std::size_t ckk = g.cin * g.kh * g.kw, hw = g.ho * g.wo;
    std::vector<T> col(g.pointwise() ? 0 : ckk * hw);
    for (std::size_t i = 0; i < g.n; ++i) {
        const T* xi = x.data().data() + i * g.cin * g.h * g.w;
        const T* src = xi;
        if (!g.pointwise()) {
            detail::im2col(xi, g, col.data());
            src = col.data();
        }
        T* oi = out.data().data() + i * g.cout * hw;
        kernel::gemm_nn(g.cout, hw, ckk, kernel.data().data(), src, oi, false);
        if (bias.defined())
            for (std::size_t c = 0; c < g.cout; ++c)
                for (std::size_t p = 0; p < hw; ++p) oi[c * hw + p] += bias[c];
    }
    bool rec = detail::needs_grad(x, kernel, bias);
    return detail::finish(out, rec, "conv2d", [x, kernel, bias, out, g]() mutable {
        const std::size_t ckk = g.cin * g.kh * g.kw, hw = g.ho * g.wo;
        std::vector<T> col(g.pointwise() ? 0 : ckk * hw);
        std::vector<T> gcol(x.requires_grad() && !g.pointwise() ? ckk * hw : 0);
        const T* go = out.grad().data();
        for (std::size_t i = 0; i < g.n; ++i) {
            const T* gi = go + i * g.cout * hw;
            if (kernel.requires_grad()) {
                const T* xi = x.data().data() + i * g.cin * g.h * g.w;
                const T* src = xi;
                if (!g.pointwise()) {
                    detail::im2col(xi, g, col.data());
                    src = col.data();
                }
                kernel::gemm_nt(g.cout, ckk, hw, gi, src, kernel.grad().data(), true);
            }
            if (x.requires_grad()) {
                T* gx = x.grad().data() + i * g.cin * g.h * g.w;
                if (g.pointwise()) {
                    kernel::gemm_tn(ckk, hw, g.cout, kernel.data().data(), gi, gx, true);
                } else {
                    kernel::gemm_tn(ckk, hw, g.cout, kernel.data().data(), gi, gcol.data(), false);
                    detail::col2im_add(gcol.data(), g, gx);
                }
            }
            if (bias.defined() && bias.requires_grad()) {
                auto gb = bias.grad();
                for (std::size_t c = 0; c < g.cout; ++c)
                    for (std::size_t p = 0; p < hw; ++p) gb[c] += gi[c * hw + p];
            }
        }
    });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, std::size_t stride = 1, std::size_t pad = 0) {
    return conv2d(x, kernel, Tensor<T>{}, stride, pad);
}

struct BatchNormOptions {
    double momentum = 0.9;  // weight kept on the running statistic per update
    double eps = 1e-5;
    bool eval_batch_stats = false;  // eval mode normalizes with batch statistics too
};

// Per-channel normalization over (N,H,W) for x [N,C,H,W] or (H,W) for [C,H,W].
// In training mode batch statistics are used and the running buffers updated;
// otherwise the running buffers are used, unless opt.eval_batch_stats is set, in
// which case eval mode also normalizes with batch statistics (buffers untouched).
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T> running_mean,
                     Tensor<T> running_var, bool training, BatchNormOptions opt = {}) {
    if (x.rank() != 3 && x.rank() != 4) throw DimensionError("batch_norm: input " + shape_str(x.shape()));
    const std::size_t n = x.rank() == 4 ? x.dim(0) : 1;
    const std::size_t c = x.dim(x.rank() - 3);
    const std::size_t hw = x.dim(x.rank() - 2) * x.dim(x.rank() - 1);
    if (gamma.numel() != c || beta.numel() != c || running_mean.numel() != c || running_var.numel() != c)
        throw DimensionError("batch_norm: parameter size mismatch for " + shape_str(x.shape()));
    const std::size_t count = n * hw;
    const bool batch_stats = training || opt.eval_batch_stats;
    std::vector<T> mu(c), inv_std(c);
    auto xv = x.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
        if (batch_stats) {
            double s = 0, s2 = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const T* p = xv.data() + (i * c + ch) * hw;
                for (std::size_t j = 0; j < hw; ++j) s += p[j];
            }
            const double m = s / static_cast<double>(count);
            for (std::size_t i = 0; i < n; ++i) {
                const T* p = xv.data() + (i * c + ch) * hw;
                for (std::size_t j = 0; j < hw; ++j) s2 += (p[j] - m) * (p[j] - m);
            }
            const double var = s2 / static_cast<double>(count);
            mu[ch] = static_cast<T>(m);
            inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + opt.eps));
            if (!training) continue;
            const double unbiased = count > 1 ? s2 / static_cast<double>(count - 1) : var;
            running_mean[ch] = static_cast<T>(opt.momentum * running_mean[ch] + (1.0 - opt.momentum) * m);
            running_var[ch] = static_cast<T>(opt.momentum * running_var[ch] + (1.0 - opt.momentum) * unbiased);
        } else {
            mu[ch] = running_mean[ch];
            inv_std[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[ch]) + opt.eps));
        }
    }
    Tensor<T> out(x.shape());
    Tensor<T> xhat(x.shape());
    auto o = out.data();
    auto xh = xhat.data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t base = (i * c + ch) * hw;
            for (std::size_t j = 0; j < hw; ++j) {
                xh[base + j] = (xv[base + j] - mu[ch]) * inv_std[ch];
                o[base + j] = gamma[ch] * xh[base + j] + beta[ch];
            }
        }
    bool rec = detail::needs_grad(x, gamma, beta);
    return detail::finish(out, rec, "batch_norm",
                          [x, gamma, beta, out, xhat, inv_std, n, c, hw, count, batch_stats]() mutable {
                              auto g = out.grad();
                              auto xh = xhat.data();
                              for (std::size_t ch = 0; ch < c; ++ch) {
                                  T sg = 0, sgx = 0;
                                  for (std::size_t i = 0; i < n; ++i) {
                                      const std::size_t base = (i * c + ch) * hw;
                                      for (std::size_t j = 0; j < hw; ++j) {
                                          sg += g[base + j];
                                          sgx += g[base + j] * xh[base + j];
                                      }
                                  }
                                  if (gamma.requires_grad()) gamma.grad()[ch] += sgx;
                                  if (beta.requires_grad()) beta.grad()[ch] += sg;
                                  if (!x.requires_grad()) continue;
                                  auto gx = x.grad();
                                  const T k = gamma[ch] * inv_std[ch];
                                  const T inv_count = T(1) / static_cast<T>(count);
                                  for (std::size_t i = 0; i < n; ++i) {
                                      const std::size_t base = (i * c + ch) * hw;
                                      for (std::size_t j = 0; j < hw; ++j) {
                                          if (batch_stats)
                                              gx[base + j] +=
                                                  k * (g[base + j] - inv_count * (sg + xh[base + j] * sgx));
                                          else
                                              gx[base + j] += k * g[base + j];
                                      }
                                  }
                              }
                          });
}

// Normalizes over the last axis; gamma/beta may be left undefined.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma = {}, const Tensor<T>& beta = {},
                     double eps = 1e-5) {
    const std::size_t c = x.dim(x.rank() - 1);
    if ((gamma.defined() && gamma.numel() != c) || (beta.defined() && beta.numel() != c))
        throw DimensionError("layer_norm: affine size mismatch for " + shape_str(x.shape()));
    const std::size_t rows = x.numel() / c;
    Tensor<T> out(x.shape());
    Tensor<T> xhat(x.shape());
    std::vector<T> inv_std(rows);
    auto xv = x.data();
    auto xh = xhat.data();
    auto o = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* p = xv.data() + r * c;
        double s = 0, s2 = 0;
        for (std::size_t j = 0; j < c; ++j) s += p[j];
        const double m = s / static_cast<double>(c);
        for (std::size_t j = 0; j < c; ++j) s2 += (p[j] - m) * (p[j] - m);
        const double is = 1.0 / std::sqrt(s2 / static_cast<double>(c) + eps);
        inv_std[r] = static_cast<T>(is);
        for (std::size_t j = 0; j < c; ++j) {
            const T v = static_cast<T>((p[j] - m) * is);
            xh[r * c + j] = v;
            o[r * c + j] = (gamma.defined() ? gamma[j] * v : v) + (beta.defined() ? beta[j] : T(0));
        }
    }
    bool rec = detail::needs_grad(x, gamma, beta);
    return detail::finish(out, rec, "layer_norm", [x, gamma, beta, out, xhat, inv_std, rows, c]() mutable {
        auto g = out.grad();
        auto xh = xhat.data();
        std::vector<T> gh(c);
        for (std::size_t r = 0; r < rows; ++r) {
            T sg = 0, sgx = 0;
            for (std::size_t j = 0; j < c; ++j) {
                const T gj = g[r * c + j];
                if (gamma.defined() && gamma.requires_grad()) gamma.grad()[j] += gj * xh[r * c + j];
                if (beta.defined() && beta.requires_grad()) beta.grad()[j] += gj;
                gh[j] = gamma.defined() ? gj * gamma[j] : gj;
                sg += gh[j];
                sgx += gh[j] * xh[r * c + j];
            }
            if (!x.requires_grad()) continue;
            auto gx = x.grad();
            const T inv_c = T(1) / static_cast<T>(c);
            for (std::size_t j = 0; j < c; ++j)
                gx[r * c + j] += inv_std[r] * (gh[j] - inv_c * (sg + xh[r * c + j] * sgx));
        }
    });
}

// Inverted dropout: survivors scaled by 1/(1-rate) in training, identity otherwise.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must lie in [0,1)");
    if (!training || rate == 0.0) return x;
    Tensor<T> mask(x.shape());
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    for (auto& m : mask.data()) m = rng.bernoulli(rate) ? T(0) : keep_scale;
    return mul(x, mask);
}

namespace detail {

struct ResizeAxis {
    std::vector<std::size_t> i0;
    std::vector<double> frac;
};

// Align-corners source coordinates for `out` samples over `in` cells.
inline ResizeAxis resize_axis(std::size_t in, std::size_t out) {
    ResizeAxis a;
    a.i0.resize(out);
    a.frac.resize(out);
    for (std::size_t o = 0; o < out; ++o) {
        const double src = out > 1 ? static_cast<double>(o) * static_cast<double>(in - 1) / static_cast<double>(out - 1)
                                   : 0.0;
        std::size_t i = static_cast<std::size_t>(std::floor(src));
        if (i >= in - 1) i = in > 1 ? in - 2 : 0;
        a.i0[o] = i;
        a.frac[o] = in > 1 ? src - static_cast<double>(i) : 0.0;
    }
    return a;
}

}  // namespace detail

// Bilinear resize with align-corners sampling over the last two axes.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
    if (x.rank() < 2) throw DimensionError("resize_bilinear: input " + shape_str(x.shape()));
    const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
    const std::size_t planes = x.numel() / (h * w);
    Shape s = x.shape();
    s[s.size() - 2] = out_h;
    s[s.size() - 1] = out_w;
    Tensor<T> out(s);
    auto ay = detail::resize_axis(h, out_h);
    auto ax = detail::resize_axis(w, out_w);
    auto xv = x.data();
    auto o = out.data();
    for (std::size_t p = 0; p < planes; ++p) {
        const T* src = xv.data() + p * h * w;
        T* dst = o.data() + p * out_h * out_w;
        for (std::size_t i = 0; i < out_h; ++i) {
            const std::size_t y0 = ay.i0[i], y1 = h > 1 ? y0 + 1 : y0;
            const T fy = static_cast<T>(ay.frac[i]);
            for (std::size_t j = 0; j < out_w; ++j) {
                const std::size_t x0 = ax.i0[j], x1 = w > 1 ? x0 + 1 : x0;
                const T fx = static_cast<T>(ax.frac[j]);
                const T top = src[y0 * w + x0] * (T(1) - fx) + src[y0 * w + x1] * fx;
                const T bot = src[y1 * w + x0] * (T(1) - fx) + src[y1 * w + x1] * fx;
                dst[i * out_w + j] = top * (T(1) - fy) + bot * fy;
            }
        }
    }
    bool rec = detail::needs_grad(x);
    return detail::finish(out, rec, "resize_bilinear", [x, out, ay, ax, h, w, out_h, out_w, planes]() mutable {
        auto g = out.grad();
        auto gx = x.grad();
        for (std::size_t p = 0; p < planes; ++p) {
            T* dst = gx.data() + p * h * w;
            const T* go = g.data() + p * out_h * out_w;
            for (std::size_t i = 0; i < out_h; ++i) {
                const std::size_t y0 = ay.i0[i], y1 = h > 1 ? y0 + 1 : y0;
                const T fy = static_cast<T>(ay.frac[i]);
                for (std::size_t j = 0; j < out_w; ++j) {
                    const std::size_t x0 = ax.i0[j], x1 = w > 1 ? x0 + 1 : x0;
                    const T fx = static_cast<T>(ax.frac[j]);
                    const T v = go[i * out_w + j];
                    dst[y0 * w + x0] += v * (T(1) - fy) * (T(1) - fx);
                    dst[y0 * w + x1] += v * (T(1) - fy) * fx;
                    dst[y1 * w + x0] += v * fy * (T(1) - fx);
                    dst[y1 * w + x1] += v * fy * fx;
                }
            }
        }
    });
}

}  // namespace bevseg
