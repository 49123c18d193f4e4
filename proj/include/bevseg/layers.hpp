#pragma once

// Parameterized building blocks and the named-parameter registry used by the
// optimizer and checkpoints.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "bevseg/nn_ops.hpp"
#include "bevseg/rng.hpp"
#include "bevseg/tensor.hpp"

namespace bevseg {

enum class ParamGroup : std::size_t { backbone = 0, transformer = 1 };

template <typename T>
struct NamedParam {
    std::string name;
    Tensor<T> tensor;
    bool trainable = true;  // false for running statistics
    ParamGroup group = ParamGroup::transformer;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

struct ForwardMode {
    bool training = false;
    Rng* rng = nullptr;
};

template <typename T>
Tensor<T> make_param(Shape shape, double bound, Rng& rng) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    t.set_requires_grad(true);
    return t;
}

template <typename T>
Tensor<T> make_param_const(Shape shape, T value) {
    Tensor<T> t(std::move(shape), value);
    t.set_requires_grad(true);
    return t;
}

template <typename T>
struct Linear {
    Tensor<T> weight;  // [out, in]
    Tensor<T> bias;    // [out]

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true) {
        const double bound = std::sqrt(1.0 / static_cast<double>(in));
        weight = make_param<T>({out, in}, bound, rng);
        if (with_bias) bias = make_param<T>({out}, bound, rng);
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }

    std::size_t in_features() const { return weight.dim(1); }
    std::size_t out_features() const { return weight.dim(0); }

    void zero_init() {
        std::fill(weight.data().begin(), weight.data().end(), T(0));
        if (bias.defined()) std::fill(bias.data().begin(), bias.data().end(), T(0));
    }

    void collect(ParamList<T>& out, const std::string& prefix, ParamGroup group) const {
        out.push_back({prefix + ".weight", weight, true, group});
        if (bias.defined()) out.push_back({prefix + ".bias", bias, true, group});
    }
};

template <typename T>
struct Conv2d {
    Tensor<T> kernel;  // [out, in, k, k]
    Tensor<T> bias;
    std::size_t stride = 1;
    std::size_t pad = 0;

    Conv2d() = default;
    Conv2d(std::size_t in, std::size_t out, std::size_t k, std::size_t stride_, std::size_t pad_, Rng& rng,
           bool with_bias = false)
        : stride(stride_), pad(pad_) {
        const double bound = std::sqrt(1.0 / static_cast<double>(in * k * k));
        kernel = make_param<T>({out, in, k, k}, bound, rng);
        if (with_bias) bias = make_param<T>({out}, bound, rng);
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, kernel, bias, stride, pad); }

    void collect(ParamList<T>& out, const std::string& prefix, ParamGroup group) const {
        out.push_back({prefix + ".kernel", kernel, true, group});
        if (bias.defined()) out.push_back({prefix + ".bias", bias, true, group});
    }
};

template <typename T>
struct BatchNorm2d {
    Tensor<T> gamma, beta;
    Tensor<T> running_mean, running_var;
    BatchNormOptions options;

    BatchNorm2d() = default;
    explicit BatchNorm2d(std::size_t channels, BatchNormOptions opt = {})
        : gamma(make_param_const<T>({channels}, T(1))),
          beta(make_param_const<T>({channels}, T(0))),
          running_mean({channels}, T(0)),
          running_var({channels}, T(1)),
          options(opt) {}

    Tensor<T> operator()(const Tensor<T>& x, const ForwardMode& mode) const {
        return batch_norm(x, gamma, beta, running_mean, running_var, mode.training, options);
    }

    void collect(ParamList<T>& out, const std::string& prefix, ParamGroup group) const {
        out.push_back({prefix + ".gamma", gamma, true, group});
        out.push_back({prefix + ".beta", beta, true, group});
        out.push_back({prefix + ".running_mean", running_mean, false, group});
        out.push_back({prefix + ".running_var", running_var, false, group});
    }
};

template <typename T>
struct LayerNorm {
    Tensor<T> gamma, beta;

    LayerNorm() = default;
    explicit LayerNorm(std::size_t dim) : gamma(make_param_const<T>({dim}, T(1))), beta(make_param_const<T>({dim}, T(0))) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }

    void collect(ParamList<T>& out, const std::string& prefix, ParamGroup group) const {
        out.push_back({prefix + ".gamma", gamma, true, group});
        out.push_back({prefix + ".beta", beta, true, group});
    }
};

// conv -> batch norm -> relu
template <typename T>
struct ConvBlock {
    Conv2d<T> conv;
    BatchNorm2d<T> bn;

    ConvBlock() = default;
    ConvBlock(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, Rng& rng,
              BatchNormOptions bn_opt = {})
        : conv(in, out, k, stride, k / 2, rng), bn(out, bn_opt) {}

    Tensor<T> operator()(const Tensor<T>& x, const ForwardMode& mode) const { return relu(bn(conv(x), mode)); }

    void collect(ParamList<T>& out, const std::string& prefix, ParamGroup group) const {
        conv.collect(out, prefix + ".conv", group);
        bn.collect(out, prefix + ".bn", group);
    }
};

// Position-wise two-layer MLP with ReLU.
template <typename T>
struct FeedForward {
    Linear<T> fc1, fc2;

    FeedForward() = default;
    FeedForward(std::size_t dim, std::size_t hidden, Rng& rng) : fc1(dim, hidden, rng), fc2(hidden, dim, rng) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return fc2(relu(fc1(x))); }

    void collect(ParamList<T>& out, const std::string& prefix, ParamGroup group) const {
        fc1.collect(out, prefix + ".fc1", group);
        fc2.collect(out, prefix + ".fc2", group);
    }
};

// Fixed 2D sinusoidal embedding for an h x w grid, [h*w, dim]; the first half of
// the channels encodes the row, the second half the column.
template <typename T>
Tensor<T> sine_embedding_2d(std::size_t h, std::size_t w, std::size_t dim) {
    Tensor<T> out({h * w, dim});
    const std::size_t half = dim / 2;
    auto encode = [](double pos, std::size_t i, std::size_t n) {
        const std::size_t pair = i / 2;
        const double freq = std::pow(10000.0, -2.0 * static_cast<double>(pair) / static_cast<double>(std::max<std::size_t>(n, 1)));
        return i % 2 == 0 ? std::sin(pos * freq) : std::cos(pos * freq);
    };
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            // positions normalized to [0, 2*pi] so small grids still vary
            const double py = h > 1 ? 6.283185307179586 * static_cast<double>(y) / static_cast<double>(h - 1) : 0.0;
            const double px = w > 1 ? 6.283185307179586 * static_cast<double>(x) / static_cast<double>(w - 1) : 0.0;
            T* row = out.data().data() + (y * w + x) * dim;
            for (std::size_t i = 0; i < half; ++i) row[i] = static_cast<T>(encode(py, i, half));
            for (std::size_t i = half; i < dim; ++i) row[i] = static_cast<T>(encode(px, i - half, dim - half));
        }
    return out;
}

// [C, H, W] (or a [1, C, H, W] slice) -> [H*W, C] tokens.
template <typename T>
Tensor<T> map_to_tokens(const Tensor<T>& map) {
    const std::size_t c = map.dim(map.rank() - 3), h = map.dim(map.rank() - 2), w = map.dim(map.rank() - 1);
    return transpose(reshape(map, {c, h * w}));
}

// [H*W, C] tokens -> [C, H, W].
template <typename T>
Tensor<T> tokens_to_map(const Tensor<T>& tokens, std::size_t h, std::size_t w) {
    if (tokens.rank() != 2 || tokens.dim(0) != h * w)
        throw DimensionError("tokens_to_map: " + shape_str(tokens.shape()) + " into " + std::to_string(h) + "x" +
                             std::to_string(w));
    return reshape(transpose(tokens), {tokens.dim(1), h, w});
}

}  // namespace bevseg
