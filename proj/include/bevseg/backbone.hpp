#pragma once

// Shared residual convolutional backbone. One set of weights is applied to
// every camera; cameras travel together as the batch axis.

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "bevseg/layers.hpp"
#include "bevseg/sampling.hpp"

namespace bevseg {

struct BackboneConfig {
    std::array<std::size_t, 3> widths{32, 64, 128};  // C3, C4, C5
    std::size_t blocks_per_stage = 2;
    std::size_t image_height = 128;
    std::size_t image_width = 224;
    BatchNormOptions bn;

    void validate() const {
        if (!(widths[0] <= widths[1] && widths[1] <= widths[2]) || widths[0] == 0)
            throw std::invalid_argument("backbone: widths must be positive and non-decreasing");
        if (blocks_per_stage == 0) throw std::invalid_argument("backbone: blocks_per_stage must be >= 1");
        if (image_height % 32 != 0 || image_width % 32 != 0 || image_height == 0 || image_width == 0)
            throw std::invalid_argument("backbone: input height/width must be divisible by 32");
    }
};

inline constexpr std::array<int, 3> kStageStrides{8, 16, 32};

template <typename T>
struct ResidualBlock {
    ConvBlock<T> conv1;
    Conv2d<T> conv2;
    BatchNorm2d<T> bn2;
    bool project = false;
    Conv2d<T> shortcut;
    BatchNorm2d<T> shortcut_bn;

    ResidualBlock() = default;
    ResidualBlock(std::size_t in, std::size_t out, std::size_t stride, Rng& rng, BatchNormOptions bn = {})
        : conv1(in, out, 3, stride, rng, bn), conv2(out, out, 3, 1, 1, rng), bn2(out, bn),
          project(stride != 1 || in != out) {
        if (project) {
            shortcut = Conv2d<T>(in, out, 1, stride, 0, rng);
            shortcut_bn = BatchNorm2d<T>(out, bn);
        }
    }

    Tensor<T> operator()(const Tensor<T>& x, const ForwardMode& mode) const {
        auto y = bn2(conv2(conv1(x, mode)), mode);
        auto s = project ? shortcut_bn(shortcut(x), mode) : x;
        return relu(add(y, s));
    }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        const auto g = ParamGroup::backbone;
        conv1.collect(out, prefix + ".conv1", g);
        conv2.collect(out, prefix + ".conv2", g);
        bn2.collect(out, prefix + ".bn2", g);
        if (project) {
            shortcut.collect(out, prefix + ".shortcut", g);
            shortcut_bn.collect(out, prefix + ".shortcut_bn", g);
        }
    }
};

template <typename T>
class Backbone {
public:
    Backbone() = default;
    Backbone(const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        // stride-4 stem
        stem_ = ConvBlock<T>(3, cfg.widths[0], 5, 4, rng, cfg.bn);
        std::size_t in = cfg.widths[0];
        for (std::size_t s = 0; s < 3; ++s) {
            std::vector<ResidualBlock<T>> stage;
            for (std::size_t b = 0; b < cfg.blocks_per_stage; ++b) {
                stage.emplace_back(in, cfg.widths[s], b == 0 ? 2 : 1, rng, cfg.bn);
                in = cfg.widths[s];
            }
            stages_.push_back(std::move(stage));
        }
    }

    // images [N_c, 3, H, W] -> stage outputs at strides 8/16/32, each [N_c, C_l, H/s, W/s].
    std::array<Tensor<T>, 3> operator()(const Tensor<T>& images, const ForwardMode& mode) const {
        if (images.rank() != 4 || images.dim(1) != 3)
            throw DimensionError("backbone: expected [N,3,H,W], got " + shape_str(images.shape()));
        if (images.dim(2) % 32 != 0 || images.dim(3) % 32 != 0)
            throw DimensionError("backbone: input " + shape_str(images.shape()) + " not divisible by 32");
        std::array<Tensor<T>, 3> out;
        Tensor<T> x = stem_(images, mode);
        for (std::size_t s = 0; s < 3; ++s) {
            for (const auto& block : stages_[s]) x = block(x, mode);
            out[s] = x;
        }
        return out;
    }

    const BackboneConfig& config() const { return cfg_; }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        stem_.collect(out, prefix + ".stem", ParamGroup::backbone);
        for (std::size_t s = 0; s < stages_.size(); ++s)
            for (std::size_t b = 0; b < stages_[s].size(); ++b)
                stages_[s][b].collect(out, prefix + ".stage" + std::to_string(s + 3) + "." + std::to_string(b));
    }

private:
    BackboneConfig cfg_;
    ConvBlock<T> stem_;
    std::vector<std::vector<ResidualBlock<T>>> stages_;
};

// Splits a camera-batched stage output into per-camera feature maps.
template <typename T>
std::vector<FeatureMap<T>> split_cameras(const Tensor<T>& batched, int stride, int scale) {
    std::vector<FeatureMap<T>> maps;
    const std::size_t n = batched.dim(0);
    for (std::size_t c = 0; c < n; ++c) {
        auto s = slice(batched, c, c + 1);
        maps.push_back({reshape(s, {batched.dim(1), batched.dim(2), batched.dim(3)}), stride, scale,
                        static_cast<int>(c)});
    }
    return maps;
}

}  // namespace bevseg
