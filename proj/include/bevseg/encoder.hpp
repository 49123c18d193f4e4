#pragma once

// Per-camera transformer encoder over the three backbone scales. Tokens of all
// scales are concatenated (finest first); each token carries a fixed 2D sine
// embedding of its location within its scale plus a learnable per-scale
// embedding. Cameras share weights and never exchange information here.

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bevseg/attention.hpp"
#include "bevseg/layers.hpp"
#include "bevseg/sampling.hpp"

namespace bevseg {

enum class AttentionKind { deformable, standard };

inline const char* to_string(AttentionKind k) { return k == AttentionKind::deformable ? "deformable" : "standard"; }

struct EncoderConfig {
    std::size_t num_layers = 2;
    std::size_t heads = 2;
    std::size_t points = 4;  // sampling points per scale
    std::size_t dim = 64;
    std::size_t ffn_dim = 128;
    AttentionKind attention = AttentionKind::deformable;
    bool cross_scale = true;
    double dropout = 0.0;
    std::array<std::size_t, 3> in_channels{32, 64, 128};

    void validate() const {
        if (num_layers == 0) throw std::invalid_argument("encoder: num_layers must be >= 1");
        if (heads == 0 || dim % heads != 0) throw std::invalid_argument("encoder: dim must be divisible by heads");
        if (points == 0) throw std::invalid_argument("encoder: points must be >= 1");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("encoder: dropout outside [0,1)");
    }
};

// One camera's flattened multi-scale tokens.
template <typename T>
struct EncoderTokens {
    Tensor<T> tokens;                  // [sum_l H_l*W_l, C]
    std::vector<MapExtent> extents;    // per scale
    std::vector<std::size_t> starts;   // first token row of each scale

    std::size_t count() const { return tokens.dim(0); }
    Tensor<T> level(std::size_t l) const {
        return slice(tokens, starts[l], starts[l] + extents[l].height * extents[l].width);
    }
    FeatureMap<T> level_map(std::size_t l, int camera = 0) const {
        return {tokens_to_map(level(l), extents[l].height, extents[l].width), kStageStridesEnc[l], static_cast<int>(l),
                camera};
    }
    static constexpr std::array<int, 3> kStageStridesEnc{8, 16, 32};
};

// Normalized own-location reference for every token, [T, 1, 1, 2] as (x, y).
template <typename T>
Tensor<T> token_reference_points(const std::vector<MapExtent>& extents) {
    std::size_t total = 0;
    for (auto e : extents) total += e.height * e.width;
    Tensor<T> ref({total, 1, 1, 2});
    std::size_t row = 0;
    for (auto e : extents)
        for (std::size_t i = 0; i < e.height; ++i)
            for (std::size_t j = 0; j < e.width; ++j, ++row) {
                ref[2 * row] = e.width > 1 ? static_cast<T>(j) / static_cast<T>(e.width - 1) : T(0.5);
                ref[2 * row + 1] = e.height > 1 ? static_cast<T>(i) / static_cast<T>(e.height - 1) : T(0.5);
            }
    return ref;
}

// Radial initial offsets: head m points along angle 2*pi*m/M, point k at
// distance k+1 pixels. Layout matches an [M, L, K, 2] bias vector.
template <typename T>
void radial_offset_bias(Tensor<T>& bias, std::size_t heads, std::size_t levels, std::size_t points) {
    for (std::size_t m = 0; m < heads; ++m) {
        const double theta = 6.283185307179586 * static_cast<double>(m) / static_cast<double>(heads);
        double dx = std::cos(theta), dy = std::sin(theta);
        const double norm = std::max(std::abs(dx), std::abs(dy));
        dx /= norm;
        dy /= norm;
        for (std::size_t l = 0; l < levels; ++l)
            for (std::size_t k = 0; k < points; ++k) {
                const std::size_t i = ((m * levels + l) * points + k) * 2;
                bias[i] = static_cast<T>(dx * static_cast<double>(k + 1));
                bias[i + 1] = static_cast<T>(dy * static_cast<double>(k + 1));
            }
    }
}

// Deformable attention over L maps: per query, per head, K learned offsets
// around a reference point on each map, softmax weights over all L*K samples.
template <typename T>
struct DeformableAttention {
    std::size_t dim = 0, heads = 0, levels = 0, points = 0;
    Linear<T> offsets, weights, value, output;

    DeformableAttention() = default;
    DeformableAttention(std::size_t dim_, std::size_t heads_, std::size_t levels_, std::size_t points_, Rng& rng)
        : dim(dim_), heads(heads_), levels(levels_), points(points_),
          offsets(dim_, heads_ * levels_ * points_ * 2, rng),
          weights(dim_, heads_ * levels_ * points_, rng),
          value(dim_, dim_, rng),
          output(dim_, dim_, rng) {
        offsets.zero_init();
        radial_offset_bias(offsets.bias, heads, levels, points);
        weights.zero_init();
    }

    struct Trace {
        Tensor<T> weights;    // [Nq, M, L, K]
        Tensor<T> locations;  // [Nq, M, L, K, 2] pixels
    };

    // Offsets [Nq, M, L, K, 2] in pixels and weights [Nq, M, L, K] whose
    // softmax runs jointly over L*K per (query, head).
    std::pair<Tensor<T>, Tensor<T>> offsets_and_weights(const Tensor<T>& query) const {
        const std::size_t nq = query.dim(0);
        auto off = reshape(offsets(query), {nq, heads, levels, points, 2});
        auto logits = reshape(weights(query), {nq, heads, levels * points});
        return {off, reshape(softmax(logits, 2, points), {nq, heads, levels, points})};
    }

    // query [Nq, C]; reference [Nq, M|1, L|1, 2] normalized; level_inputs are
    // per-level token tensors [H_l*W_l, C] that get value-projected here.
    Tensor<T> operator()(const Tensor<T>& query, const Tensor<T>& reference, const std::vector<Tensor<T>>& level_inputs,
                         const std::vector<MapExtent>& extents, Trace* trace = nullptr) const {
        auto [off, attn] = offsets_and_weights(query);
        auto loc = sampling_locations(reference, off, extents);
        std::vector<Tensor<T>> values;
        values.reserve(level_inputs.size());
        for (const auto& in : level_inputs) values.push_back(value(in));
        if (trace) *trace = {attn.detach(), loc.detach()};
        return output(deform_aggregate(values, extents, loc, attn, heads));
    }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        offsets.collect(out, prefix + ".offsets", ParamGroup::transformer);
        weights.collect(out, prefix + ".weights", ParamGroup::transformer);
        value.collect(out, prefix + ".value", ParamGroup::transformer);
        output.collect(out, prefix + ".output", ParamGroup::transformer);
    }
};

// Dense multi-head attention with separate q/k/v/output projections.
template <typename T>
struct DenseAttention {
    std::size_t heads = 0;
    Linear<T> q_proj, k_proj, v_proj, output;

    DenseAttention() = default;
    DenseAttention(std::size_t dim, std::size_t heads_, Rng& rng)
        : heads(heads_), q_proj(dim, dim, rng), k_proj(dim, dim, rng), v_proj(dim, dim, rng), output(dim, dim, rng) {}

    Tensor<T> operator()(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, Tensor<T>* probs = nullptr) const {
        return output(multihead_attention(q_proj(q), k_proj(k), v_proj(v), heads, probs));
    }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        q_proj.collect(out, prefix + ".q", ParamGroup::transformer);
        k_proj.collect(out, prefix + ".k", ParamGroup::transformer);
        v_proj.collect(out, prefix + ".v", ParamGroup::transformer);
        output.collect(out, prefix + ".output", ParamGroup::transformer);
    }
};

template <typename T>
Tensor<T> residual_dropout(const Tensor<T>& x, double rate, const ForwardMode& mode) {
    if (!mode.training || rate == 0.0) return x;
    if (!mode.rng) throw std::invalid_argument("dropout in training mode needs an rng");
    return dropout(x, rate, true, *mode.rng);
}

template <typename T>
class EncoderLayer {
public:
    EncoderLayer() = default;
    EncoderLayer(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg), norm1_(cfg.dim), ffn_(cfg.dim, cfg.ffn_dim, rng), norm2_(cfg.dim) {
        if (cfg.attention == AttentionKind::deformable)
            deform_ = DeformableAttention<T>(cfg.dim, cfg.heads, cfg.cross_scale ? 3 : 1, cfg.points, rng);
        else
            dense_ = DenseAttention<T>(cfg.dim, cfg.heads, rng);
    }

    // Self-attention sublayer only (no residual, no FFN).
    Tensor<T> attend(const EncoderTokens<T>& in, const Tensor<T>& pos) const {
        auto q = add(in.tokens, pos);
        if (cfg_.attention == AttentionKind::standard) return dense_(q, q, in.tokens);
        std::vector<Tensor<T>> levels;
        for (std::size_t l = 0; l < in.extents.size(); ++l) levels.push_back(in.level(l));
        if (cfg_.cross_scale) return deform_(q, token_reference_points<T>(in.extents), levels, in.extents);
        std::vector<Tensor<T>> parts;
        for (std::size_t l = 0; l < in.extents.size(); ++l) {
            const std::size_t n = in.extents[l].height * in.extents[l].width;
            auto ql = slice(q, in.starts[l], in.starts[l] + n);
            parts.push_back(deform_(ql, token_reference_points<T>({in.extents[l]}), {levels[l]}, {in.extents[l]}));
        }
        return concat(parts);
    }

    EncoderTokens<T> operator()(const EncoderTokens<T>& in, const Tensor<T>& pos, const ForwardMode& mode) const {
        auto x = norm1_(add(in.tokens, residual_dropout(attend(in, pos), cfg_.dropout, mode)));
        x = norm2_(add(x, residual_dropout(ffn_(x), cfg_.dropout, mode)));
        return {x, in.extents, in.starts};
    }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        if (cfg_.attention == AttentionKind::deformable)
            deform_.collect(out, prefix + ".attn");
        else
            dense_.collect(out, prefix + ".attn");
        norm1_.collect(out, prefix + ".norm1", ParamGroup::transformer);
        ffn_.collect(out, prefix + ".ffn", ParamGroup::transformer);
        norm2_.collect(out, prefix + ".norm2", ParamGroup::transformer);
    }

    DeformableAttention<T>& deformable() { return deform_; }
    DenseAttention<T>& dense() { return dense_; }

private:
    EncoderConfig cfg_;
    DeformableAttention<T> deform_;
    DenseAttention<T> dense_;
    LayerNorm<T> norm1_;
    FeedForward<T> ffn_;
    LayerNorm<T> norm2_;
};

template <typename T>
class Encoder {
public:
    Encoder() = default;
    Encoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        for (std::size_t l = 0; l < 3; ++l) input_proj_[l] = Conv2d<T>(cfg.in_channels[l], cfg.dim, 1, 1, 0, rng, true);
        level_embed_ = make_param<T>({3, cfg.dim}, 1.0, rng);
        for (std::size_t i = 0; i < cfg.num_layers; ++i) layers_.emplace_back(cfg, rng);
    }

    // 1x1 projections of the stage outputs to the common width, batched over
    // cameras: each [N_c, C_l, H_l, W_l] -> [N_c, C, H_l, W_l].
    std::array<Tensor<T>, 3> project_scales(const std::array<Tensor<T>, 3>& stages) const {
        std::array<Tensor<T>, 3> out;
        for (std::size_t l = 0; l < 3; ++l) {
            if (stages[l].dim(1) != cfg_.in_channels[l])
                throw DimensionError("encoder: scale " + std::to_string(l) + " has " + std::to_string(stages[l].dim(1)) +
                                     " channels, expected " + std::to_string(cfg_.in_channels[l]));
            out[l] = input_proj_[l](stages[l]);
        }
        return out;
    }

    // Position + scale embedding for the concatenated tokens, [T, C].
    Tensor<T> position_embedding(const std::vector<MapExtent>& extents) const {
        std::vector<Tensor<T>> parts;
        for (std::size_t l = 0; l < extents.size(); ++l) {
            auto sine = sine_embedding_2d<T>(extents[l].height, extents[l].width, cfg_.dim);
            parts.push_back(add(sine, reshape(slice(level_embed_, l, l + 1), {cfg_.dim})));
        }
        return concat(parts);
    }

    // Tokens of one camera from projected, camera-batched scales.
    static EncoderTokens<T> gather_tokens(const std::array<Tensor<T>, 3>& projected, std::size_t camera) {
        EncoderTokens<T> t;
        std::vector<Tensor<T>> parts;
        std::size_t start = 0;
        for (std::size_t l = 0; l < 3; ++l) {
            const auto& p = projected[l];
            parts.push_back(map_to_tokens(slice(p, camera, camera + 1)));
            t.extents.push_back({p.dim(2), p.dim(3)});
            t.starts.push_back(start);
            start += p.dim(2) * p.dim(3);
        }
        t.tokens = concat(parts);
        return t;
    }

    // Stage outputs (camera-batched) -> enhanced tokens per camera.
    std::vector<EncoderTokens<T>> operator()(const std::array<Tensor<T>, 3>& stages, const ForwardMode& mode) const {
        auto projected = project_scales(stages);
        const std::size_t cams = projected[0].dim(0);
        std::vector<EncoderTokens<T>> out;
        Tensor<T> pos;
        for (std::size_t c = 0; c < cams; ++c) {
            auto t = gather_tokens(projected, c);
            if (!pos.defined()) pos = position_embedding(t.extents);
            for (const auto& layer : layers_) t = layer(t, pos, mode);
            out.push_back(std::move(t));
        }
        return out;
    }

    const EncoderConfig& config() const { return cfg_; }
    std::vector<EncoderLayer<T>>& layers() { return layers_; }
    std::array<Conv2d<T>, 3>& input_projections() { return input_proj_; }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        for (std::size_t l = 0; l < 3; ++l)
            input_proj_[l].collect(out, prefix + ".input_proj" + std::to_string(l), ParamGroup::transformer);
        out.push_back({prefix + ".level_embed", level_embed_, true, ParamGroup::transformer});
        for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(out, prefix + ".layer" + std::to_string(i));
    }

private:
    EncoderConfig cfg_;
    std::array<Conv2d<T>, 3> input_proj_;
    Tensor<T> level_embed_;
    std::vector<EncoderLayer<T>> layers_;
};

}  // namespace bevseg
