#pragma once

// Decoded BEV queries -> dense class logits: reshape to the query grid, two
// (3x3 block, 1x1 block, 2x bilinear) stages, dropout, 1x1 classifier.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

#include "bevseg/layers.hpp"

namespace bevseg {

struct HeadConfig {
    std::size_t dim = 64;  // input query width; stage 2 halves it
    std::size_t classes = 4;
    double dropout = 0.1;
    bool final_resize_to_gt = true;
    std::size_t gt_height = 160;
    std::size_t gt_width = 80;
    // classifier bias starts at log priors: this much background, the rest
    // split evenly; 0 leaves the random init
    double background_prior = 0.9;
    BatchNormOptions bn;

    void validate() const {
        if (dim < 2) throw std::invalid_argument("head: dim must be >= 2");
        if (classes < 2) throw std::invalid_argument("head: need at least 2 classes");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("head: dropout outside [0,1)");
        if (!(background_prior >= 0.0 && background_prior < 1.0))
            throw std::invalid_argument("head: background_prior outside [0,1)");
    }
};

// [N_q, C] -> [C, H_q, W_q]; query (r, c) lands at spatial (r, c).
template <typename T>
Tensor<T> reshape_queries(const Tensor<T>& z, std::size_t rows, std::size_t cols) {
    if (z.rank() != 2 || z.dim(0) != rows * cols)
        throw DimensionError("reshape_queries: " + shape_str(z.shape()) + " into " + std::to_string(rows) + "x" +
                             std::to_string(cols));
    return tokens_to_map(z, rows, cols);
}

template <typename T>
struct UpsampleStage {
    ConvBlock<T> conv3, conv1;

    UpsampleStage() = default;
    UpsampleStage(std::size_t in, std::size_t out, Rng& rng, BatchNormOptions bn = {})
        : conv3(in, out, 3, 1, rng, bn), conv1(out, out, 1, 1, rng, bn) {}

    Tensor<T> operator()(const Tensor<T>& x, const ForwardMode& mode) const {
        auto y = conv1(conv3(x, mode), mode);
        return resize_bilinear(y, 2 * y.dim(y.rank() - 2), 2 * y.dim(y.rank() - 1));
    }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        conv3.collect(out, prefix + ".conv3", ParamGroup::transformer);
        conv1.collect(out, prefix + ".conv1", ParamGroup::transformer);
    }
};

template <typename T>
class SemanticDecoder {
public:
    SemanticDecoder() = default;
    SemanticDecoder(const HeadConfig& cfg, Rng& rng)
        : cfg_(cfg), stage1_(cfg.dim, cfg.dim, rng, cfg.bn), stage2_(cfg.dim, cfg.dim / 2, rng, cfg.bn),
          classifier_(cfg.dim / 2, cfg.classes, 1, 1, 0, rng, true) {
        cfg.validate();
        if (cfg.background_prior > 0.0) {
            auto b = classifier_.bias.data();
            const double rest = (1.0 - cfg.background_prior) / static_cast<double>(cfg.classes - 1);
            for (std::size_t k = 0; k < cfg.classes; ++k)
                b[k] = static_cast<T>(std::log(k == 0 ? cfg.background_prior : rest));
        }
    }

    // z [N_q, C] -> logits [classes, 4*H_q, 4*W_q] (or the GT size when resizing).
    Tensor<T> operator()(const Tensor<T>& z, std::size_t rows, std::size_t cols, const ForwardMode& mode) const {
        auto f = reshape_queries(z, rows, cols);
        f = stage2_(stage1_(f, mode), mode);
        if (mode.training && cfg_.dropout > 0.0) {
            if (!mode.rng) throw std::invalid_argument("head: dropout in training mode needs an rng");
            f = dropout(f, cfg_.dropout, true, *mode.rng);
        }
        auto logits = classifier_(f);
        if (cfg_.final_resize_to_gt && (logits.dim(1) != cfg_.gt_height || logits.dim(2) != cfg_.gt_width))
            logits = resize_bilinear(logits, cfg_.gt_height, cfg_.gt_width);
        return logits;
    }

    const HeadConfig& config() const { return cfg_; }
    Conv2d<T>& classifier() { return classifier_; }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        stage1_.collect(out, prefix + ".stage1");
        stage2_.collect(out, prefix + ".stage2");
        classifier_.collect(out, prefix + ".classifier", ParamGroup::transformer);
    }

private:
    HeadConfig cfg_;
    UpsampleStage<T> stage1_, stage2_;
    Conv2d<T> classifier_;
};

}  // namespace bevseg
