#pragma once

// Bilinear sampling of feature maps at continuous pixel locations, with
// gradients to both the sampled values and the sampling coordinates.
//
// Coordinates follow the align-corners convention: normalized 0 and 1 land on
// the first and last cell centers. Cells outside the map read as zero, so a
// sample strictly outside [-1, W] x [-1, H] is zero with zero gradient.

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "bevseg/tensor.hpp"

namespace bevseg {

struct NormalizedPoint2 {
    double u = 0;
    double v = 0;
};

struct PixelPoint {
    double x = 0;
    double y = 0;
};

enum class CornerConvention { align_corners, half_pixel };

// Convention used by every sampler in this library.
inline constexpr CornerConvention kCornerConvention = CornerConvention::align_corners;

inline PixelPoint rescale(NormalizedPoint2 p, std::size_t height, std::size_t width,
                          CornerConvention conv = kCornerConvention) {
    if (conv == CornerConvention::align_corners)
        return {p.u * static_cast<double>(width - 1), p.v * static_cast<double>(height - 1)};
    return {p.u * static_cast<double>(width) - 0.5, p.v * static_cast<double>(height) - 0.5};
}

template <typename T>
struct FeatureMap {
    Tensor<T> values;  // [C, H, W]
    int stride = 32;
    int scale = 0;
    int camera = 0;

    std::size_t channels() const { return values.dim(0); }
    std::size_t height() const { return values.dim(1); }
    std::size_t width() const { return values.dim(2); }
};

template <typename T>
struct BilinearTap {
    std::size_t index;  // y * W + x
    T w;
    T dw_dx;
    T dw_dy;
};

// In-range corners of the bilinear stencil at (x, y); returns how many.
template <typename T>
std::size_t bilinear_taps(T x, T y, std::size_t height, std::size_t width, std::array<BilinearTap<T>, 4>& taps) {
    if (!(x > T(-1) && x < static_cast<T>(width) && y > T(-1) && y < static_cast<T>(height))) return 0;
    const T fx0 = std::floor(x), fy0 = std::floor(y);
    const long x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
    const T ax = x - fx0, ay = y - fy0;
    const long W = static_cast<long>(width), H = static_cast<long>(height);
    std::size_t n = 0;
    auto push = [&](long cx, long cy, T w, T dx, T dy) {
        if (cx >= 0 && cx < W && cy >= 0 && cy < H)
            taps[n++] = {static_cast<std::size_t>(cy * W + cx), w, dx, dy};
    };
    push(x0, y0, (T(1) - ax) * (T(1) - ay), -(T(1) - ay), -(T(1) - ax));
    push(x0 + 1, y0, ax * (T(1) - ay), T(1) - ay, -ax);
    push(x0, y0 + 1, (T(1) - ax) * ay, -ay, T(1) - ax);
    push(x0 + 1, y0 + 1, ax * ay, ay, ax);
    return n;
}

// Samples map [C,H,W] at K pixel-space points [K,2] given as (x, y). Returns [K,C].
template <typename T>
Tensor<T> grid_sample(const Tensor<T>& map, const Tensor<T>& points) {
    if (map.rank() != 3 || points.rank() != 2 || points.dim(1) != 2)
        throw DimensionError("grid_sample: map " + shape_str(map.shape()) + ", points " + shape_str(points.shape()));
    const std::size_t c = map.dim(0), h = map.dim(1), w = map.dim(2), k = points.dim(0);
    const std::size_t hw = h * w;
    Tensor<T> out({k, c});
    auto mv = map.data();
    auto pv = points.data();
    auto o = out.data();
    std::array<BilinearTap<T>, 4> taps{};
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t nt = bilinear_taps(pv[2 * i], pv[2 * i + 1], h, w, taps);
        for (std::size_t ch = 0; ch < c; ++ch) {
            T acc = 0;
            for (std::size_t t = 0; t < nt; ++t) acc += taps[t].w * mv[ch * hw + taps[t].index];
            o[i * c + ch] = acc;
        }
    }
    bool rec = detail::needs_grad(map, points);
    return detail::finish(out, rec, "grid_sample", [map, points, out, c, h, w, k, hw]() mutable {
        auto g = out.grad();
        auto mv = map.data();
        auto pv = points.data();
        std::array<BilinearTap<T>, 4> taps{};
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t nt = bilinear_taps(pv[2 * i], pv[2 * i + 1], h, w, taps);
            if (nt == 0) continue;
            if (map.requires_grad()) {
                auto gm = map.grad();
                for (std::size_t ch = 0; ch < c; ++ch)
                    for (std::size_t t = 0; t < nt; ++t) gm[ch * hw + taps[t].index] += taps[t].w * g[i * c + ch];
            }
            if (points.requires_grad()) {
                T gx = 0, gy = 0;
                for (std::size_t ch = 0; ch < c; ++ch)
                    for (std::size_t t = 0; t < nt; ++t) {
                        const T v = mv[ch * hw + taps[t].index] * g[i * c + ch];
                        gx += taps[t].dw_dx * v;
                        gy += taps[t].dw_dy * v;
                    }
                auto gp = points.grad();
                gp[2 * i] += gx;
                gp[2 * i + 1] += gy;
            }
        }
    });
}

// Normalized (u, v) in the last axis -> pixel (x, y) on an H x W map.
template <typename T>
Tensor<T> rescale(const Tensor<T>& normalized, std::size_t height, std::size_t width) {
    if (normalized.dim(normalized.rank() - 1) != 2)
        throw DimensionError("rescale: last axis must be 2, got " + shape_str(normalized.shape()));
    Tensor<T> factors({2}, std::vector<T>{static_cast<T>(width - 1), static_cast<T>(height - 1)});
    return mul(normalized, factors);
}

// Single-point sample; point is a pixel-space [2] tensor. Returns [C].
template <typename T>
Tensor<T> bilinear_sample(const FeatureMap<T>& map, const Tensor<T>& point) {
    return reshape(grid_sample(map.values, reshape(point, {1, 2})), {map.channels()});
}

// Samples at rescale(reference) + offsets[k]; offsets in pixels of `map`. Returns [K,C].
template <typename T>
Tensor<T> sample_points(const FeatureMap<T>& map, const Tensor<T>& reference, const Tensor<T>& offsets) {
    if (reference.numel() != 2 || offsets.rank() != 2 || offsets.dim(1) != 2)
        throw DimensionError("sample_points: reference " + shape_str(reference.shape()) + ", offsets " +
                             shape_str(offsets.shape()));
    auto ref_px = rescale(reshape(reference, {2}), map.height(), map.width());
    return grid_sample(map.values, add(offsets, ref_px));
}

struct MapExtent {
    std::size_t height;
    std::size_t width;
};

// Pixel sampling locations for deformable attention:
//   loc[q,m,l,k,:] = reference[q, m|0, l|0, :] * (W_l - 1, H_l - 1) + offsets[q,m,l,k,:]
// reference is [Nq, M or 1, L or 1, 2] (normalized); offsets [Nq, M, L, K, 2] in pixels.
template <typename T>
Tensor<T> sampling_locations(const Tensor<T>& reference, const Tensor<T>& offsets,
                             const std::vector<MapExtent>& extents) {
    if (offsets.rank() != 5 || offsets.dim(4) != 2 || reference.rank() != 4 || reference.dim(3) != 2)
        throw DimensionError("sampling_locations: reference " + shape_str(reference.shape()) + ", offsets " +
                             shape_str(offsets.shape()));
    const std::size_t nq = offsets.dim(0), m = offsets.dim(1), l = offsets.dim(2), k = offsets.dim(3);
    const std::size_t rm = reference.dim(1), rl = reference.dim(2);
    if (reference.dim(0) != nq || (rm != 1 && rm != m) || (rl != 1 && rl != l) || extents.size() != l)
        throw DimensionError("sampling_locations: reference " + shape_str(reference.shape()) + ", offsets " +
                             shape_str(offsets.shape()) + ", levels " + std::to_string(extents.size()));
    Tensor<T> out(offsets.shape());
    auto rv = reference.data();
    auto ov = offsets.data();
    auto o = out.data();
    auto ref_index = [=](std::size_t q, std::size_t hm, std::size_t lv) {
        return ((q * rm + (rm == 1 ? 0 : hm)) * rl + (rl == 1 ? 0 : lv)) * 2;
    };
    for (std::size_t q = 0; q < nq; ++q)
        for (std::size_t hm = 0; hm < m; ++hm)
            for (std::size_t lv = 0; lv < l; ++lv) {
                const std::size_t ri = ref_index(q, hm, lv);
                const T sx = static_cast<T>(extents[lv].width - 1), sy = static_cast<T>(extents[lv].height - 1);
                const T bx = rv[ri] * sx, by = rv[ri + 1] * sy;
                for (std::size_t p = 0; p < k; ++p) {
                    const std::size_t oi = (((q * m + hm) * l + lv) * k + p) * 2;
                    o[oi] = bx + ov[oi];
                    o[oi + 1] = by + ov[oi + 1];
                }
            }
    bool rec = detail::needs_grad(reference, offsets);
    return detail::finish(out, rec, "sampling_locations",
                          [reference, offsets, out, extents, nq, m, l, k, ref_index]() mutable {
                              auto g = out.grad();
                              if (offsets.requires_grad()) {
                                  auto go = offsets.grad();
                                  for (std::size_t i = 0; i < go.size(); ++i) go[i] += g[i];
                              }
                              if (!reference.requires_grad()) return;
                              auto gr = reference.grad();
                              for (std::size_t q = 0; q < nq; ++q)
                                  for (std::size_t hm = 0; hm < m; ++hm)
                                      for (std::size_t lv = 0; lv < l; ++lv) {
                                          const std::size_t ri = ref_index(q, hm, lv);
                                          const T sx = static_cast<T>(extents[lv].width - 1);
                                          const T sy = static_cast<T>(extents[lv].height - 1);
                                          for (std::size_t p = 0; p < k; ++p) {
                                              const std::size_t oi = (((q * m + hm) * l + lv) * k + p) * 2;
                                              gr[ri] += g[oi] * sx;
                                              gr[ri + 1] += g[oi + 1] * sy;
                                          }
                                      }
                          });
}

// Deformable aggregation core shared by the multi-scale encoder (levels are
// scales) and the multi-camera decoder (levels are cameras):
//
//   out[q, m*D + d] = sum_l sum_k A[q,m,l,k] * bilinear(values_l[:, m*D + d], loc[q,m,l,k])
//
// values_l is [H_l*W_l, C] in token (row-major y, x) layout with C = M*D;
// loc is [Nq, M, L, K, 2] pixels, A is [Nq, M, L, K]. The inner sum over k is
// completed per level before levels are added in index order.
template <typename T>
Tensor<T> deform_aggregate(const std::vector<Tensor<T>>& values, const std::vector<MapExtent>& extents,
                           const Tensor<T>& locations, const Tensor<T>& weights, std::size_t heads) {
    if (values.empty() || values.size() != extents.size() || locations.rank() != 5 || weights.rank() != 4)
        throw DimensionError("deform_aggregate: malformed inputs");
    const std::size_t nq = locations.dim(0), m = locations.dim(1), l = locations.dim(2), k = locations.dim(3);
    const std::size_t c = values[0].dim(1);
    if (m != heads || l != values.size() || c % heads != 0 || weights.shape() != Shape{nq, m, l, k})
        throw DimensionError("deform_aggregate: locations " + shape_str(locations.shape()) + ", weights " +
                             shape_str(weights.shape()) + ", levels " + std::to_string(values.size()));
    for (std::size_t lv = 0; lv < l; ++lv)
        if (values[lv].rank() != 2 || values[lv].dim(1) != c ||
            values[lv].dim(0) != extents[lv].height * extents[lv].width)
            throw DimensionError("deform_aggregate: level " + std::to_string(lv) + " values " +
                                 shape_str(values[lv].shape()));
    const std::size_t d = c / heads;
    Tensor<T> out({nq, c});
    auto lv_ = locations.data();
    auto wv = weights.data();
    auto o = out.data();
    std::vector<T> level_acc(d), sample(d);
    std::array<BilinearTap<T>, 4> taps{};
    for (std::size_t q = 0; q < nq; ++q)
        for (std::size_t hm = 0; hm < m; ++hm) {
            T* dst = o.data() + q * c + hm * d;
            for (std::size_t lv = 0; lv < l; ++lv) {
                const T* val = values[lv].data().data();
                std::fill(level_acc.begin(), level_acc.end(), T(0));
                for (std::size_t p = 0; p < k; ++p) {
                    const std::size_t wi = ((q * m + hm) * l + lv) * k + p;
                    const std::size_t nt =
                        bilinear_taps(lv_[2 * wi], lv_[2 * wi + 1], extents[lv].height, extents[lv].width, taps);
                    if (nt == 0) continue;
                    std::fill(sample.begin(), sample.end(), T(0));
                    for (std::size_t t = 0; t < nt; ++t) {
                        const T* src = val + taps[t].index * c + hm * d;
                        for (std::size_t j = 0; j < d; ++j) sample[j] += taps[t].w * src[j];
                    }
                    const T a = wv[wi];
                    for (std::size_t j = 0; j < d; ++j) level_acc[j] += a * sample[j];
                }
                for (std::size_t j = 0; j < d; ++j) dst[j] += level_acc[j];
            }
        }
    std::vector<Tensor<T>> inputs = values;
    bool rec = detail::needs_grad_list(inputs) || detail::needs_grad(locations, weights);
    return detail::finish(out, rec, "deform_aggregate",
                          [values, extents, locations, weights, out, nq, m, l, k, c, d]() mutable {
                              auto g = out.grad();
                              auto lv_ = locations.data();
                              auto wv = weights.data();
                              const bool need_loc = locations.requires_grad();
                              const bool need_w = weights.requires_grad();
                              std::span<T> gl = need_loc ? locations.grad() : std::span<T>{};
                              std::span<T> gw = need_w ? weights.grad() : std::span<T>{};
                              std::array<BilinearTap<T>, 4> taps{};
                              for (std::size_t lv = 0; lv < l; ++lv) {
                                  const T* val = values[lv].data().data();
                                  T* gval = values[lv].requires_grad() ? values[lv].grad().data() : nullptr;
                                  for (std::size_t q = 0; q < nq; ++q)
                                      for (std::size_t hm = 0; hm < m; ++hm) {
                                          const T* go = g.data() + q * c + hm * d;
                                          for (std::size_t p = 0; p < k; ++p) {
                                              const std::size_t wi = ((q * m + hm) * l + lv) * k + p;
                                              const std::size_t nt =
                                                  bilinear_taps(lv_[2 * wi], lv_[2 * wi + 1], extents[lv].height,
                                                                extents[lv].width, taps);
                                              if (nt == 0) continue;
                                              const T a = wv[wi];
                                              T ga = 0, gx = 0, gy = 0;
                                              for (std::size_t t = 0; t < nt; ++t) {
                                                  const T* src = val + taps[t].index * c + hm * d;
                                                  T dot = 0;
                                                  for (std::size_t j = 0; j < d; ++j) dot += go[j] * src[j];
                                                  ga += taps[t].w * dot;
                                                  gx += taps[t].dw_dx * dot;
                                                  gy += taps[t].dw_dy * dot;
                                                  if (gval) {
                                                      T* dst = gval + taps[t].index * c + hm * d;
                                                      const T s = a * taps[t].w;
                                                      for (std::size_t j = 0; j < d; ++j) dst[j] += s * go[j];
                                                  }
                                              }
                                              if (need_w) gw[wi] += ga;
                                              if (need_loc) {
                                                  gl[2 * wi] += a * gx;
                                                  gl[2 * wi + 1] += a * gy;
                                              }
                                          }
                                      }
                              }
                          });
}

}  // namespace bevseg
