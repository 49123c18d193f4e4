#pragma once

// Finite-difference gradient checks over every differentiable operation and
// the composed layers, all at f64. Shared by the test suite and the CLI.

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "bevseg/attention.hpp"
#include "bevseg/bev_decoder.hpp"
#include "bevseg/encoder.hpp"
#include "bevseg/grad_check.hpp"
#include "bevseg/losses.hpp"
#include "bevseg/semantic_decoder.hpp"

namespace bevseg {

enum class GradKind { elementwise, composed };

inline constexpr double kElementwiseTolerance = 1e-6;
inline constexpr double kComposedTolerance = 1e-4;

struct GradCase {
    std::string name;
    GradKind kind = GradKind::composed;
    std::function<GradCheckResult()> run;

    double tolerance() const { return kind == GradKind::elementwise ? kElementwiseTolerance : kComposedTolerance; }
};

struct GradCaseResult {
    std::string name;
    GradKind kind;
    double tolerance = 0;
    GradCheckResult result;
    double seconds = 0;
    bool passed() const { return result.checked > 0 && result.max_rel_error < tolerance; }
};

namespace gradsuite {

using D = Tensor<double>;

inline D random(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    D t(std::move(shape));
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

// Random values bounded away from zero (keeps relu off its kink).
inline D random_signed(Shape shape, Rng& rng) {
    D t(std::move(shape));
    for (auto& v : t.data()) v = (rng.bernoulli(0.5) ? 1 : -1) * rng.uniform(0.1, 1.0);
    return t;
}

// Scalar probe: sum(out * R) with a fixed random R, so every output element
// contributes a distinct weight.
inline D probe(const D& out, std::uint64_t seed) {
    Rng rng(seed);
    return sum(mul(out, random(out.shape(), rng)));
}

// Gives every parameter random values so no sampling point sits on a grid line
// and no weight sits at its initial symmetric value.
inline std::vector<D> randomize(const ParamList<double>& params, Rng& rng, double amplitude = 0.3) {
    std::vector<D> out;
    for (const auto& p : params) {
        if (!p.trainable) continue;
        D t = p.tensor;  // shared handle
        for (auto& v : t.data()) v += rng.uniform(-amplitude, amplitude);
        out.push_back(t);
    }
    return out;
}

}  // namespace gradsuite

inline std::vector<GradCase> gradient_cases(std::size_t probes_per_input = 48) {
    using namespace gradsuite;
    std::vector<GradCase> cases;
    GradCheckOptions opt;
    opt.max_per_input = probes_per_input;
    auto add_case = [&](std::string name, GradKind kind, std::function<GradCheckResult()> run) {
        cases.push_back({std::move(name), kind, std::move(run)});
    };
    const auto E = GradKind::elementwise;
    const auto C = GradKind::composed;

    add_case("add", E, [opt] {
        Rng r(1);
        D a = random({3, 4}, r), b = random({4}, r);
        return grad_check([=] { return probe(add(a, b), 11); }, {a, b}, opt);
    });
    add_case("sub", E, [opt] {
        Rng r(2);
        D a = random({3, 4}, r), b = random({3, 4}, r);
        return grad_check([=] { return probe(sub(a, b), 12); }, {a, b}, opt);
    });
    add_case("mul", E, [opt] {
        Rng r(3);
        D a = random({2, 3, 4}, r), b = random({3, 4}, r);
        return grad_check([=] { return probe(mul(a, b), 13); }, {a, b}, opt);
    });
    add_case("scale", E, [opt] {
        Rng r(4);
        D a = random({5, 2}, r);
        return grad_check([=] { return probe(scale(a, 0.7), 14); }, {a}, opt);
    });
    add_case("sum", E, [opt] {
        Rng r(5);
        D a = random({4, 3}, r);
        return grad_check([=] { return sum(a); }, {a}, opt);
    });
    add_case("mean", E, [opt] {
        Rng r(6);
        D a = random({4, 3}, r);
        return grad_check([=] { return mean(a); }, {a}, opt);
    });
    add_case("reshape", E, [opt] {
        Rng r(7);
        D a = random({4, 3}, r);
        return grad_check([=] { return probe(reshape(a, {2, 6}), 17); }, {a}, opt);
    });
    add_case("transpose", E, [opt] {
        Rng r(8);
        D a = random({2, 3, 4}, r);
        return grad_check([=] { return probe(transpose(a), 18); }, {a}, opt);
    });
    add_case("concat", E, [opt] {
        Rng r(9);
        D a = random({2, 3}, r), b = random({4, 3}, r);
        return grad_check([=] { return probe(concat(std::vector<D>{a, b}), 19); }, {a, b}, opt);
    });
    add_case("slice", E, [opt] {
        Rng r(10);
        D a = random({5, 3}, r);
        return grad_check([=] { return probe(slice(a, 1, 4), 20); }, {a}, opt);
    });
    add_case("relu", E, [opt] {
        Rng r(11);
        D a = random_signed({4, 5}, r);
        return grad_check([=] { return probe(relu(a), 21); }, {a}, opt);
    });
    add_case("sigmoid", E, [opt] {
        Rng r(12);
        D a = random({4, 5}, r, -3, 3);
        return grad_check([=] { return probe(sigmoid(a), 22); }, {a}, opt);
    });
    add_case("dropout", E, [opt] {
        Rng r(13);
        D a = random({6, 5}, r);
        return grad_check(
            [=] {
                Rng mask(99);  // same mask on every evaluation
                return probe(dropout(a, 0.3, true, mask), 23);
            },
            {a}, opt);
    });

    add_case("matmul", C, [opt] {
        Rng r(20);
        D a = random({2, 3, 4}, r), b = random({4, 5}, r);
        return grad_check([=] { return probe(matmul(a, b), 30); }, {a, b}, opt);
    });
    add_case("softmax", C, [opt] {
        Rng r(21);
        D a = random({3, 8}, r, -2, 2);
        return grad_check([=] { return probe(softmax(a, 1), 31); }, {a}, opt);
    });
    add_case("softmax_grouped", C, [opt] {
        Rng r(22);
        D a = random({2, 3, 8}, r, -2, 2);
        return grad_check([=] { return probe(softmax(a, 2, 4), 32); }, {a}, opt);
    });
    add_case("linear", C, [opt] {
        Rng r(23);
        D x = random({5, 4}, r), w = random({3, 4}, r), b = random({3}, r);
        return grad_check([=] { return probe(linear(x, w, b), 33); }, {x, w, b}, opt);
    });
    add_case("conv2d", C, [opt] {
        Rng r(24);
        D x = random({2, 3, 6, 5}, r), k = random({4, 3, 3, 3}, r), b = random({4}, r);
        return grad_check([=] { return probe(conv2d(x, k, b, 2, 1), 34); }, {x, k, b}, opt);
    });
    add_case("batch_norm_train", C, [opt] {
        Rng r(25);
        D x = random({2, 3, 4, 4}, r), g = random({3}, r, 0.5, 1.5), b = random({3}, r);
        return grad_check(
            [=] {
                D rm({3}, 0.0), rv({3}, 1.0);
                return probe(batch_norm(x, g, b, rm, rv, true), 35);
            },
            {x, g, b}, opt);
    });
    add_case("batch_norm_eval", C, [opt] {
        Rng r(26);
        D x = random({3, 4, 4}, r), g = random({3}, r, 0.5, 1.5), b = random({3}, r);
        D rm = random({3}, r), rv = random({3}, r, 0.5, 2.0);
        return grad_check([=] { return probe(batch_norm(x, g, b, rm, rv, false), 36); }, {x, g, b}, opt);
    });
    add_case("layer_norm", C, [opt] {
        Rng r(27);
        D x = random({4, 6}, r), g = random({6}, r, 0.5, 1.5), b = random({6}, r);
        return grad_check([=] { return probe(layer_norm(x, g, b), 37); }, {x, g, b}, opt);
    });
    add_case("resize_bilinear", C, [opt] {
        Rng r(28);
        D x = random({2, 3, 4}, r);
        return grad_check([=] { return probe(resize_bilinear(x, 7, 9), 38); }, {x}, opt);
    });
    add_case("grid_sample", C, [opt] {
        Rng r(29);
        D map = random({3, 5, 6}, r), pts = random({7, 2}, r, -0.7, 5.6);
        return grad_check([=] { return probe(grid_sample(map, pts), 39); }, {map, pts}, opt);
    });
    add_case("sampling_locations", C, [opt] {
        Rng r(30);
        D ref = random({3, 2, 2, 2}, r, 0, 1), off = random({3, 2, 2, 3, 2}, r);
        const std::vector<MapExtent> ext{{4, 5}, {3, 3}};
        return grad_check([=] { return probe(sampling_locations(ref, off, ext), 40); }, {ref, off}, opt);
    });
    add_case("deform_aggregate", C, [opt] {
        Rng r(31);
        const std::vector<MapExtent> ext{{4, 5}, {3, 3}};
        D v0 = random({20, 4}, r), v1 = random({9, 4}, r);
        D loc = random({3, 2, 2, 3, 2}, r, -0.5, 3.4);
        D w = softmax(random({3, 2, 6}, r), 2).detach();
        w = reshape(w, {3, 2, 2, 3}).detach();
        return grad_check([=] { return probe(deform_aggregate(std::vector<D>{v0, v1}, ext, loc, w, 2), 41); },
                          {v0, v1, loc, w}, opt);
    });
    add_case("multihead_attention", C, [opt] {
        Rng r(32);
        D q = random({3, 4}, r), k = random({5, 4}, r), v = random({5, 4}, r);
        return grad_check([=] { return probe(multihead_attention(q, k, v, 2), 42); }, {q, k, v}, opt);
    });
    add_case("weighted_cross_entropy", C, [opt] {
        Rng r(33);
        D logits = random({4, 3, 5}, r, -2, 2);
        ClassRaster t(3, 5);
        for (auto& id : t.ids) id = static_cast<std::uint8_t>(r.below(4));
        return grad_check([=] { return weighted_cross_entropy(logits, t, {1, 15, 15, 15}); }, {logits}, opt);
    });

    auto encoder_case = [opt](AttentionKind kind, bool cross_scale) {
        return [opt, kind, cross_scale] {
            Rng r(40);
            EncoderConfig cfg;
            cfg.dim = 8;
            cfg.heads = 2;
            cfg.points = 2;
            cfg.ffn_dim = 12;
            cfg.attention = kind;
            cfg.cross_scale = cross_scale;
            EncoderLayer<double> layer(cfg, r);
            ParamList<double> params;
            layer.collect(params, "enc");
            auto inputs = randomize(params, r);
            const std::vector<MapExtent> ext{{4, 4}, {2, 2}, {1, 1}};
            D tokens = random({21, 8}, r), pos = random({21, 8}, r);
            inputs.insert(inputs.begin(), tokens);
            return grad_check(
                [=, &layer] {
                    EncoderTokens<double> in{tokens, ext, {0, 16, 20}};
                    return probe(layer(in, pos, ForwardMode{}).tokens, 43);
                },
                inputs, opt);
        };
    };
    add_case("encoder_layer_deformable_cross_scale", C, encoder_case(AttentionKind::deformable, true));
    add_case("encoder_layer_deformable_per_scale", C, encoder_case(AttentionKind::deformable, false));
    add_case("encoder_layer_standard", C, encoder_case(AttentionKind::standard, true));

    auto decoder_case = [opt](AttentionKind kind) {
        return [opt, kind] {
            Rng r(50);
            DecoderConfig cfg;
            cfg.dim = 8;
            cfg.heads = 2;
            cfg.points = 2;
            cfg.cameras = 2;
            cfg.ffn_dim = 12;
            cfg.query_rows = 3;
            cfg.query_cols = 2;
            cfg.attention = kind;
            DecoderLayer<double> layer(cfg, r);
            ParamList<double> params;
            layer.collect(params, "dec");
            auto inputs = randomize(params, r);
            D z = random({6, 8}, r), pos = random({6, 8}, r);
            D ref = random({6, 2, 2, 2}, r, 0.05, 0.95);
            D t0 = random({9, 8}, r), t1 = random({9, 8}, r);
            D cam_pos = random({18, 8}, r);
            inputs.insert(inputs.begin(), {z, pos, t0, t1});
            if (kind == AttentionKind::deformable) inputs.push_back(ref);
            return grad_check(
                [=, &layer] {
                    CameraTokens<double> maps{{t0, t1}, {3, 3}};
                    return probe(layer(z, pos, ref, maps, cam_pos, ForwardMode{}), 44);
                },
                inputs, opt);
        };
    };
    add_case("decoder_layer_deformable", C, decoder_case(AttentionKind::deformable));
    add_case("decoder_layer_standard", C, decoder_case(AttentionKind::standard));

    add_case("bev_decoder", C, [opt] {
        Rng r(55);
        DecoderConfig cfg;
        cfg.dim = 8;
        cfg.heads = 2;
        cfg.points = 2;
        cfg.cameras = 2;
        cfg.ffn_dim = 12;
        cfg.query_rows = 2;
        cfg.query_cols = 2;
        cfg.num_layers = 2;
        cfg.camera_embedding = true;
        BEVDecoder<double> dec(cfg, r);
        ParamList<double> params;
        dec.collect(params, "dec");
        auto inputs = randomize(params, r);
        D t0 = random({6, 8}, r), t1 = random({6, 8}, r);
        inputs.insert(inputs.begin(), {t0, t1});
        return grad_check(
            [=, &dec] {
                CameraTokens<double> maps{{t0, t1}, {2, 3}};
                return probe(dec(maps, ForwardMode{}), 45);
            },
            inputs, opt);
    });

    add_case("semantic_decoder", C, [opt] {
        Rng r(60);
        HeadConfig cfg;
        cfg.dim = 8;
        cfg.classes = 3;
        cfg.dropout = 0.2;
        cfg.gt_height = 8;
        cfg.gt_width = 12;
        SemanticDecoder<double> head(cfg, r);
        ParamList<double> params;
        head.collect(params, "head");
        auto inputs = randomize(params, r);
        D z = random({6, 8}, r);
        inputs.insert(inputs.begin(), z);
        return grad_check(
            [=, &head] {
                Rng drop(7);  // fixed dropout mask
                return probe(head(z, 2, 3, ForwardMode{true, &drop}), 46);
            },
            inputs, opt);
    });
    return cases;
}

inline std::vector<GradCaseResult> run_gradient_suite(std::size_t probes_per_input = 48) {
    std::vector<GradCaseResult> out;
    for (const auto& c : gradient_cases(probes_per_input)) {
        const auto t0 = std::chrono::steady_clock::now();
        GradCaseResult r{c.name, c.kind, c.tolerance(), c.run(), 0};
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace bevseg
