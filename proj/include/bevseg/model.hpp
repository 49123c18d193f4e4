#pragma once

// Full network: shared backbone -> per-camera encoder -> BEV decoder over the
// stride-32 tokens of all cameras -> semantic head. Inputs are images only.

#include <cstddef>
#include <string>
#include <vector>

#include "bevseg/backbone.hpp"
#include "bevseg/bev_decoder.hpp"
#include "bevseg/checkpoint.hpp"
#include "bevseg/encoder.hpp"
#include "bevseg/semantic_decoder.hpp"

namespace bevseg {

struct ModelConfig {
    BackboneConfig backbone;
    EncoderConfig encoder;
    DecoderConfig decoder;
    HeadConfig head;

    // Copies shared sizes between sub-configs and validates the whole.
    void sync_and_validate() {
        encoder.in_channels = backbone.widths;
        head.dim = decoder.dim;
        backbone.validate();
        encoder.validate();
        decoder.validate();
        head.validate();
        if (encoder.dim != decoder.dim) throw std::invalid_argument("model: encoder.dim != decoder.dim");
    }
};

template <typename T>
struct ModelOutput {
    Tensor<T> logits;  // [classes, H_out, W_out]
};

template <typename T>
class BEVSegFormer {
public:
    BEVSegFormer() = default;
    BEVSegFormer(ModelConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
        cfg_.sync_and_validate();
        backbone_ = Backbone<T>(cfg_.backbone, rng);
        encoder_ = Encoder<T>(cfg_.encoder, rng);
        decoder_ = BEVDecoder<T>(cfg_.decoder, rng);
        head_ = SemanticDecoder<T>(cfg_.head, rng);
    }

    // Stride-32 encoder tokens for every camera.
    CameraTokens<T> camera_tokens(const Tensor<T>& images, const ForwardMode& mode) const {
        if (images.dim(0) != cfg_.decoder.cameras)
            throw DimensionError("model: got " + std::to_string(images.dim(0)) + " cameras, configured for " +
                                 std::to_string(cfg_.decoder.cameras));
        auto enc = encoder_(backbone_(images, mode), mode);
        CameraTokens<T> out;
        for (const auto& t : enc) out.tokens.push_back(t.level(2));
        out.extent = enc.front().extents[2];
        return out;
    }

    // images [N_c, 3, H, W] -> logits [classes, H_out, W_out].
    Tensor<T> operator()(const Tensor<T>& images, const ForwardMode& mode, DecoderTrace<T>* trace = nullptr) const {
        if (images.rank() != 4 || images.dim(2) != cfg_.backbone.image_height ||
            images.dim(3) != cfg_.backbone.image_width)
            throw DimensionError("model: images " + shape_str(images.shape()) + " do not match configured " +
                                 std::to_string(cfg_.backbone.image_height) + "x" +
                                 std::to_string(cfg_.backbone.image_width));
        auto z = decoder_(camera_tokens(images, mode), mode, trace);
        return head_(z, cfg_.decoder.query_rows, cfg_.decoder.query_cols, mode);
    }

    ParamList<T> parameters() const {
        ParamList<T> out;
        backbone_.collect(out, "backbone");
        encoder_.collect(out, "encoder");
        decoder_.collect(out, "decoder");
        head_.collect(out, "head");
        return out;
    }

    std::size_t num_trainable() const {
        std::size_t n = 0;
        for (const auto& p : parameters())
            if (p.trainable) n += p.tensor.numel();
        return n;
    }

    void save_to(Checkpoint& ck) const {
        for (const auto& p : parameters()) ck.put(p.name, p.tensor);
    }

    void load_from(const Checkpoint& ck) {
        for (auto& p : parameters()) ck.load_into(p.name, p.tensor);
    }

    const ModelConfig& config() const { return cfg_; }
    Backbone<T>& backbone() { return backbone_; }
    Encoder<T>& encoder() { return encoder_; }
    BEVDecoder<T>& decoder() { return decoder_; }
    SemanticDecoder<T>& head() { return head_; }

private:
    ModelConfig cfg_;
    Backbone<T> backbone_;
    Encoder<T> encoder_;
    BEVDecoder<T> decoder_;
    SemanticDecoder<T> head_;
};

}  // namespace bevseg
