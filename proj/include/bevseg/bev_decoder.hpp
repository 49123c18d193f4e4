#pragma once

// BEV transformer decoder. A dense grid of learnable BEV queries attends to the
// stride-32 encoder tokens of every camera. In the deformable variant each
// query predicts, per head and per camera, a normalized reference point from
// its positional embedding, then K offsets and weights from its content; the
// weights of one (query, head) are normalized jointly over cameras and points.
// No camera geometry enters anywhere.

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bevseg/attention.hpp"
#include "bevseg/encoder.hpp"
#include "bevseg/layers.hpp"
#include "bevseg/sampling.hpp"

namespace bevseg {

struct DecoderConfig {
    std::size_t num_layers = 2;
    std::size_t heads = 2;
    std::size_t points = 4;
    std::size_t cameras = 2;
    std::size_t dim = 64;
    std::size_t ffn_dim = 128;
    std::size_t query_rows = 40;  // H_q
    std::size_t query_cols = 20;  // W_q
    AttentionKind attention = AttentionKind::deformable;
    std::optional<bool> camera_embedding;  // unset: on for standard, off for deformable
    bool query_self_attn = true;
    double dropout = 0.0;

    bool use_camera_embedding() const {
        return camera_embedding.value_or(attention == AttentionKind::standard);
    }
    std::size_t num_queries() const { return query_rows * query_cols; }

    void validate() const {
        if (num_layers == 0) throw std::invalid_argument("decoder: num_layers must be >= 1");
        if (heads == 0 || dim % heads != 0) throw std::invalid_argument("decoder: dim must be divisible by heads");
        if (points == 0) throw std::invalid_argument("decoder: points must be >= 1");
        if (cameras == 0) throw std::invalid_argument("decoder: cameras must be >= 1");
        if (query_rows == 0 || query_cols == 0) throw std::invalid_argument("decoder: empty query grid");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("decoder: dropout outside [0,1)");
    }
};

// Learnable query content z_q and positional embedding, both [N_q, C], laid out
// row-major over the H_q x W_q grid.
template <typename T>
struct BEVQueryGrid {
    std::size_t rows = 0, cols = 0;
    Tensor<T> embed;
    Tensor<T> pos;

    BEVQueryGrid() = default;
    BEVQueryGrid(std::size_t rows_, std::size_t cols_, std::size_t dim, Rng& rng) : rows(rows_), cols(cols_) {
        embed = make_param<T>({rows * cols, dim}, 1.0, rng);
        pos = sine_embedding_2d<T>(rows, cols, dim);
        pos.set_requires_grad(true);
    }

    std::size_t size() const { return rows * cols; }
    std::size_t index(std::size_t r, std::size_t c) const { return r * cols + c; }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        out.push_back({prefix + ".embed", embed, true, ParamGroup::transformer});
        out.push_back({prefix + ".pos", pos, true, ParamGroup::transformer});
    }
};

// Per-camera stride-32 tokens handed to the decoder.
template <typename T>
struct CameraTokens {
    std::vector<Tensor<T>> tokens;  // per camera [H*W, C]
    MapExtent extent{0, 0};
};

// sigmoid(linear(pos)) reshaped to [N_q, M, N_c, 2].
template <typename T>
Tensor<T> predict_reference_points(const Linear<T>& proj, const Tensor<T>& query_pos, std::size_t heads,
                                   std::size_t cameras) {
    if (proj.out_features() != heads * cameras * 2)
        throw DimensionError("reference points: projection has " + std::to_string(proj.out_features()) +
                             " outputs, expected " + std::to_string(heads * cameras * 2));
    return reshape(sigmoid(proj(query_pos)), {query_pos.dim(0), heads, cameras, 2});
}

// Offsets (pixels) and jointly normalized weights from the query.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> predict_offsets_and_weights(const DeformableAttention<T>& attn, const Tensor<T>& query) {
    return attn.offsets_and_weights(query);
}

// Multi-camera deformable attention: per head m, camera c and point k the
// value-projected camera map is sampled at rescale(ref[q,m,c]) + offset[q,m,c,k],
// weighted by A[q,m,c,k], summed, and output-projected.
template <typename T>
Tensor<T> multi_camera_deform_attn(const DeformableAttention<T>& attn, const Tensor<T>& query,
                                   const Tensor<T>& reference, const CameraTokens<T>& maps,
                                   typename DeformableAttention<T>::Trace* trace = nullptr) {
    if (maps.tokens.size() != attn.levels)
        throw DimensionError("multi-camera attention: got " + std::to_string(maps.tokens.size()) +
                             " cameras, configured for " + std::to_string(attn.levels));
    std::vector<MapExtent> extents(maps.tokens.size(), maps.extent);
    return attn(query, reference, maps.tokens, extents, trace);
}

template <typename T>
class DecoderLayer {
public:
    DecoderLayer() = default;
    DecoderLayer(const DecoderConfig& cfg, Rng& rng)
        : cfg_(cfg), norm1_(cfg.dim), norm2_(cfg.dim), ffn_(cfg.dim, cfg.ffn_dim, rng), norm3_(cfg.dim) {
        if (cfg.query_self_attn) self_attn_ = DenseAttention<T>(cfg.dim, cfg.heads, rng);
        if (cfg.attention == AttentionKind::deformable)
            cross_ = DeformableAttention<T>(cfg.dim, cfg.heads, cfg.cameras, cfg.points, rng);
        else
            dense_cross_ = DenseAttention<T>(cfg.dim, cfg.heads, rng);
    }

    // z [N_q, C], pos [N_q, C], reference [N_q, M, N_c, 2] (deformable only).
    // camera_pos is [N_c*H*W, C] key embedding (standard only).
    Tensor<T> operator()(const Tensor<T>& z, const Tensor<T>& pos, const Tensor<T>& reference,
                         const CameraTokens<T>& maps, const Tensor<T>& camera_pos, const ForwardMode& mode,
                         typename DeformableAttention<T>::Trace* trace = nullptr,
                         Tensor<T>* dense_probs = nullptr) const {
        Tensor<T> x = z;
        if (cfg_.query_self_attn) {
            auto qk = add(x, pos);
            x = norm1_(add(x, residual_dropout(self_attn_(qk, qk, x), cfg_.dropout, mode)));
        }
        x = norm2_(add(x, residual_dropout(cross(x, pos, reference, maps, camera_pos, trace, dense_probs),
                                           cfg_.dropout, mode)));
        return norm3_(add(x, residual_dropout(ffn_(x), cfg_.dropout, mode)));
    }

    Tensor<T> cross(const Tensor<T>& x, const Tensor<T>& pos, const Tensor<T>& reference, const CameraTokens<T>& maps,
                    const Tensor<T>& camera_pos, typename DeformableAttention<T>::Trace* trace = nullptr,
                    Tensor<T>* dense_probs = nullptr) const {
        auto q = add(x, pos);
        if (cfg_.attention == AttentionKind::deformable) return multi_camera_deform_attn(cross_, q, reference, maps, trace);
        auto values = concat(maps.tokens);
        return dense_cross_(q, add(values, camera_pos), values, dense_probs);
    }

    DeformableAttention<T>& deformable() { return cross_; }
    const DeformableAttention<T>& deformable() const { return cross_; }
    DenseAttention<T>& dense_cross() { return dense_cross_; }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        if (cfg_.query_self_attn) {
            self_attn_.collect(out, prefix + ".self_attn");
            norm1_.collect(out, prefix + ".norm1", ParamGroup::transformer);
        }
        if (cfg_.attention == AttentionKind::deformable)
            cross_.collect(out, prefix + ".cross_attn");
        else
            dense_cross_.collect(out, prefix + ".cross_attn");
        norm2_.collect(out, prefix + ".norm2", ParamGroup::transformer);
        ffn_.collect(out, prefix + ".ffn", ParamGroup::transformer);
        norm3_.collect(out, prefix + ".norm3", ParamGroup::transformer);
    }

private:
    DecoderConfig cfg_;
    DenseAttention<T> self_attn_;
    LayerNorm<T> norm1_;
    DeformableAttention<T> cross_;
    DenseAttention<T> dense_cross_;
    LayerNorm<T> norm2_;
    FeedForward<T> ffn_;
    LayerNorm<T> norm3_;
};

// Attention introspection for one decoder layer (the last by default).
template <typename T>
struct DecoderTrace {
    std::size_t layer = static_cast<std::size_t>(-1);  // input: layer to record
    Tensor<T> reference;  // [N_q, M, N_c, 2] normalized
    Tensor<T> weights;    // [N_q, M, N_c, K]
    Tensor<T> locations;  // [N_q, M, N_c, K, 2] pixels on the stride-32 map
    Tensor<T> dense_probs;  // standard variant: [M, N_q, N_c*H*W]
};

template <typename T>
class BEVDecoder {
public:
    BEVDecoder() = default;
    BEVDecoder(const DecoderConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        queries_ = BEVQueryGrid<T>(cfg.query_rows, cfg.query_cols, cfg.dim, rng);
        if (cfg.attention == AttentionKind::deformable) reference_ = Linear<T>(cfg.dim, cfg.heads * cfg.cameras * 2, rng);
        if (cfg.use_camera_embedding()) camera_embed_ = make_param<T>({cfg.cameras, cfg.dim}, 1.0, rng);
        for (std::size_t i = 0; i < cfg.num_layers; ++i) layers_.emplace_back(cfg, rng);
    }

    // Adds the per-camera embedding (when enabled) to each camera's tokens.
    CameraTokens<T> embed_cameras(const CameraTokens<T>& maps) const {
        if (maps.tokens.size() != cfg_.cameras)
            throw DimensionError("decoder: got " + std::to_string(maps.tokens.size()) + " cameras, configured for " +
                                 std::to_string(cfg_.cameras));
        if (!camera_embed_.defined()) return maps;
        CameraTokens<T> out{{}, maps.extent};
        for (std::size_t c = 0; c < maps.tokens.size(); ++c)
            out.tokens.push_back(add(maps.tokens[c], reshape(slice(camera_embed_, c, c + 1), {cfg_.dim})));
        return out;
    }

    Tensor<T> reference_points() const {
        return predict_reference_points(reference_, queries_.pos, cfg_.heads, cfg_.cameras);
    }

    // Camera tokens -> decoded queries [N_q, C].
    Tensor<T> operator()(const CameraTokens<T>& maps, const ForwardMode& mode, DecoderTrace<T>* trace = nullptr) const {
        auto cams = embed_cameras(maps);
        Tensor<T> ref, camera_pos;
        if (cfg_.attention == AttentionKind::deformable) {
            ref = reference_points();
        } else {
            auto sine = sine_embedding_2d<T>(maps.extent.height, maps.extent.width, cfg_.dim);
            camera_pos = concat(std::vector<Tensor<T>>(cfg_.cameras, sine));
        }
        Tensor<T> z = queries_.embed;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            const std::size_t wanted = trace ? std::min(trace->layer, layers_.size() - 1) : 0;
            const bool record = trace && i == wanted;
            typename DeformableAttention<T>::Trace t;
            Tensor<T> probs;
            z = layers_[i](z, queries_.pos, ref, cams, camera_pos, mode, record ? &t : nullptr,
                           record ? &probs : nullptr);
            if (record) {
                trace->reference = ref.defined() ? ref.detach() : Tensor<T>{};
                trace->weights = t.weights;
                trace->locations = t.locations;
                trace->dense_probs = probs;
            }
        }
        return z;
    }

    const DecoderConfig& config() const { return cfg_; }
    BEVQueryGrid<T>& queries() { return queries_; }
    Linear<T>& reference_projection() { return reference_; }
    Tensor<T>& camera_embedding() { return camera_embed_; }
    std::vector<DecoderLayer<T>>& layers() { return layers_; }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        queries_.collect(out, prefix + ".query");
        if (reference_.weight.defined()) reference_.collect(out, prefix + ".reference", ParamGroup::transformer);
        if (camera_embed_.defined()) out.push_back({prefix + ".camera_embed", camera_embed_, true, ParamGroup::transformer});
        for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(out, prefix + ".layer" + std::to_string(i));
    }

private:
    DecoderConfig cfg_;
    BEVQueryGrid<T> queries_;
    Linear<T> reference_;
    Tensor<T> camera_embed_;
    std::vector<DecoderLayer<T>> layers_;
};

// ---- camera permutation transport ----------------------------------------

inline void validate_permutation(const std::vector<std::size_t>& perm) {
    std::vector<bool> seen(perm.size(), false);
    for (auto p : perm) {
        if (p >= perm.size() || seen[p]) throw std::invalid_argument("invalid camera permutation");
        seen[p] = true;
    }
}

// (first then second)[i] == first[second[i]]: transporting by `first` and then
// by `second` equals one transport by the composition.
inline std::vector<std::size_t> compose_permutations(const std::vector<std::size_t>& first,
                                                     const std::vector<std::size_t>& second) {
    validate_permutation(first);
    validate_permutation(second);
    if (first.size() != second.size()) throw std::invalid_argument("permutation sizes differ");
    std::vector<std::size_t> out(first.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = first[second[i]];
    return out;
}

namespace detail {

// Rows of a [rows, ...] tensor (or vector) are grouped as [outer, cameras, inner];
// new camera slot i takes old block perm[i].
template <typename T>
void permute_camera_rows(Tensor<T>& t, std::size_t outer, std::size_t cameras, std::size_t inner,
                         const std::vector<std::size_t>& perm) {
    const std::size_t row_width = t.rank() == 1 ? 1 : t.numel() / t.dim(0);
    if (t.dim(0) != outer * cameras * inner) throw DimensionError("transport: unexpected rows in " + shape_str(t.shape()));
    std::vector<T> old(t.data().begin(), t.data().end());
    auto v = t.data();
    const std::size_t block = inner * row_width;
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t c = 0; c < cameras; ++c)
            std::copy_n(old.begin() + static_cast<long>((o * cameras + perm[c]) * block), block,
                        v.begin() + static_cast<long>((o * cameras + c) * block));
}

}  // namespace detail

// Re-indexes every camera-indexed parameter block so that feeding cameras in
// the order (old[perm[0]], old[perm[1]], ...) reproduces the original outputs.
template <typename T>
void camera_permutation_transport(BEVDecoder<T>& dec, const std::vector<std::size_t>& perm) {
    const auto& cfg = dec.config();
    if (perm.size() != cfg.cameras) throw std::invalid_argument("transport: permutation size != cameras");
    validate_permutation(perm);
    if (auto& ref = dec.reference_projection(); ref.weight.defined()) {
        detail::permute_camera_rows(ref.weight, cfg.heads, cfg.cameras, 2, perm);
        detail::permute_camera_rows(ref.bias, cfg.heads, cfg.cameras, 2, perm);
    }
    if (auto& ce = dec.camera_embedding(); ce.defined()) detail::permute_camera_rows(ce, 1, cfg.cameras, 1, perm);
    for (auto& layer : dec.layers()) {
        if (cfg.attention != AttentionKind::deformable) continue;
        auto& a = layer.deformable();
        detail::permute_camera_rows(a.offsets.weight, cfg.heads, cfg.cameras, cfg.points * 2, perm);
        detail::permute_camera_rows(a.offsets.bias, cfg.heads, cfg.cameras, cfg.points * 2, perm);
        detail::permute_camera_rows(a.weights.weight, cfg.heads, cfg.cameras, cfg.points, perm);
        detail::permute_camera_rows(a.weights.bias, cfg.heads, cfg.cameras, cfg.points, perm);
    }
}

}  // namespace bevseg
