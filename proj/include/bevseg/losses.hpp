#pragma once

// Class-weighted pixel cross-entropy and argmax decoding.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "bevseg/tensor.hpp"

namespace bevseg {

// Integer class raster [H, W], row-major.
struct ClassRaster {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> ids;

    ClassRaster() = default;
    ClassRaster(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), ids(h * w, fill) {}

    std::uint8_t& at(std::size_t r, std::size_t c) { return ids[r * width + c]; }
    std::uint8_t at(std::size_t r, std::size_t c) const { return ids[r * width + c]; }
    std::size_t size() const { return ids.size(); }
    bool operator==(const ClassRaster&) const = default;
};

// sum_p w[t_p] * -log softmax(logits[:, p])[t_p] / sum_p w[t_p]
// logits [C, H, W]; the softmax runs over the channel axis.
template <typename T>
Tensor<T> weighted_cross_entropy(const Tensor<T>& logits, const ClassRaster& target, const std::vector<double>& weights) {
    if (logits.rank() != 3 || logits.dim(1) != target.height || logits.dim(2) != target.width)
        throw DimensionError("weighted_cross_entropy: logits " + shape_str(logits.shape()) + " vs target " +
                             std::to_string(target.height) + "x" + std::to_string(target.width));
    const std::size_t c = logits.dim(0), hw = target.size();
    if (weights.size() != c)
        throw DimensionError("weighted_cross_entropy: " + std::to_string(weights.size()) + " weights for " +
                             std::to_string(c) + " classes");
    for (double w : weights)
        if (!(w > 0.0)) throw std::invalid_argument("weighted_cross_entropy: weights must be positive");
    for (auto t : target.ids)
        if (t >= c) throw std::invalid_argument("weighted_cross_entropy: target id " + std::to_string(t) +
                                                " >= classes " + std::to_string(c));

    auto lv = logits.data();
    double total = 0.0, wsum = 0.0;
    std::vector<T> probs(c * hw);
    for (std::size_t p = 0; p < hw; ++p) {
        double mx = lv[p];
        for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, static_cast<double>(lv[k * hw + p]));
        double z = 0.0;
        for (std::size_t k = 0; k < c; ++k) z += std::exp(static_cast<double>(lv[k * hw + p]) - mx);
        for (std::size_t k = 0; k < c; ++k)
            probs[k * hw + p] = static_cast<T>(std::exp(static_cast<double>(lv[k * hw + p]) - mx) / z);
        const std::size_t t = target.ids[p];
        const double w = weights[t];
        total += w * (std::log(z) + mx - static_cast<double>(lv[t * hw + p]));
        wsum += w;
    }
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / wsum));
    bool rec = detail::needs_grad(logits);
    return detail::finish(out, rec, "weighted_cross_entropy",
                          [logits, out, probs = std::move(probs), target, weights, wsum, c, hw]() mutable {
                              const T g = out.grad()[0];
                              auto gl = logits.grad();
                              for (std::size_t p = 0; p < hw; ++p) {
                                  const std::size_t t = target.ids[p];
                                  const T s = static_cast<T>(weights[t] / wsum) * g;
                                  for (std::size_t k = 0; k < c; ++k) {
                                      const T onehot = k == t ? T(1) : T(0);
                                      gl[k * hw + p] += s * (probs[k * hw + p] - onehot);
                                  }
                              }
                          });
}

// Per-pixel argmax over channels; ties go to the lower class id.
template <typename T>
ClassRaster rasterize_prediction(const Tensor<T>& logits) {
    if (logits.rank() != 3) throw DimensionError("rasterize_prediction: logits " + shape_str(logits.shape()));
    const std::size_t c = logits.dim(0), h = logits.dim(1), w = logits.dim(2), hw = h * w;
    ClassRaster out(h, w);
    auto lv = logits.data();
    for (std::size_t p = 0; p < hw; ++p) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < c; ++k)
            if (lv[k * hw + p] > lv[best * hw + p]) best = k;
        out.ids[p] = static_cast<std::uint8_t>(best);
    }
    return out;
}

}  // namespace bevseg
