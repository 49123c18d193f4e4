#include "test_util.hpp"

#include "bevseg/encoder.hpp"
#include "oracles.hpp"

using namespace bevseg;
using namespace bevseg::testing;

namespace {

void set_identity(Linear<double>& lin) {
    lin.zero_init();
    for (std::size_t i = 0; i < std::min(lin.in_features(), lin.out_features()); ++i)
        lin.weight[i * lin.in_features() + i] = 1;
}

EncoderConfig small_encoder(AttentionKind kind, bool cross_scale = true) {
    EncoderConfig c;
    c.num_layers = 2;
    c.heads = 2;
    c.points = 2;
    c.dim = 16;
    c.ffn_dim = 24;
    c.attention = kind;
    c.cross_scale = cross_scale;
    c.in_channels = {8, 16, 32};
    return c;
}

// Camera-batched stage outputs for an 8x8 / 4x4 / 2x2 pyramid.
std::array<D, 3> random_stages(std::size_t cams, Rng& rng) {
    return {rand_tensor({cams, 8, 8, 8}, rng), rand_tensor({cams, 16, 4, 4}, rng), rand_tensor({cams, 32, 2, 2}, rng)};
}

std::array<D, 3> select_cameras(const std::array<D, 3>& stages, const std::vector<std::size_t>& order) {
    std::array<D, 3> out;
    for (std::size_t l = 0; l < 3; ++l) {
        std::vector<D> parts;
        for (auto c : order) parts.push_back(slice(stages[l], c, c + 1));
        out[l] = concat(parts);
    }
    return out;
}

}  // namespace

TEST(MultiheadAttention, MatchesLoopOracle) {
    Rng rng(1);
    auto q = rand_tensor({5, 8}, rng), k = rand_tensor({7, 8}, rng), v = rand_tensor({7, 8}, rng);
    for (std::size_t heads : {1, 2, 4}) {
        auto y = multihead_attention(q, k, v, heads);
        auto ref = oracle::dense_attention(q, k, v, heads);
        for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
    }
}

TEST(MultiheadAttention, SingleTokenGetsFullWeight) {
    Rng rng(2);
    auto q = rand_tensor({3, 4}, rng), k = rand_tensor({1, 4}, rng), v = rand_tensor({1, 4}, rng);
    D probs;
    auto y = multihead_attention(q, k, v, 2, &probs);
    for (double p : probs.values()) EXPECT_EQ(p, 1.0);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(y[i * 4 + j], v[j]);
}

TEST(MultiheadAttention, IdenticalTokensSplitEvenly) {
    Rng rng(3);
    auto q = rand_tensor({2, 4}, rng), tok = rand_tensor({1, 4}, rng);
    auto kv = concat(std::vector<D>{tok, tok});
    D probs;
    multihead_attention(q, kv, kv, 1, &probs);
    for (double p : probs.values()) EXPECT_DOUBLE_EQ(p, 0.5);
}

TEST(MultiheadAttention, RowsAreStochastic) {
    Rng rng(4);
    auto q = rand_tensor({6, 8}, rng, -4, 4), k = rand_tensor({9, 8}, rng, -4, 4);
    D probs;
    multihead_attention(q, k, k, 2, &probs);
    for (std::size_t r = 0; r < 12; ++r) {
        double s = 0;
        for (std::size_t j = 0; j < 9; ++j) s += probs[r * 9 + j];
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(DeformableAttention, FreshWeightsAreUniform) {
    Rng rng(5);
    DeformableAttention<double> attn(16, 2, 3, 4, rng);
    auto [off, w] = attn.offsets_and_weights(rand_tensor({5, 16}, rng));
    EXPECT_EQ(w.shape(), (Shape{5, 2, 3, 4}));
    for (double a : w.values()) EXPECT_NEAR(a, 1.0 / 12, 1e-15);
}

TEST(DeformableAttention, ZeroInitSamplesOwnLocation) {
    Rng rng(6);
    DeformableAttention<double> attn(8, 2, 1, 3, rng);
    attn.offsets.zero_init();
    const std::vector<MapExtent> ext{{4, 5}};
    auto ref = token_reference_points<double>(ext);
    auto tokens = rand_tensor({20, 8}, rng);
    DeformableAttention<double>::Trace tr;
    attn(tokens, ref, {tokens}, ext, &tr);
    for (std::size_t t = 0; t < 20; ++t)
        for (std::size_t m = 0; m < 2; ++m)
            for (std::size_t k = 0; k < 3; ++k) {
                const std::size_t i = ((t * 2 + m) * 3 + k) * 2;
                EXPECT_NEAR(tr.locations[i], double(t % 5), 1e-12);
                EXPECT_NEAR(tr.locations[i + 1], double(t / 5), 1e-12);
            }
}

TEST(DeformableAttention, SingleScaleSinglePointIdentityReturnsInput) {
    Rng rng(7);
    DeformableAttention<double> attn(8, 1, 1, 1, rng);
    attn.offsets.zero_init();
    set_identity(attn.value);
    set_identity(attn.output);
    const std::vector<MapExtent> ext{{3, 4}};
    auto tokens = rand_tensor({12, 8}, rng);
    auto y = attn(tokens, token_reference_points<double>(ext), {tokens}, ext);
    EXPECT_LT(max_abs_diff(y, tokens), 1e-12);
}

TEST(DeformableAttention, RadialInitialOffsets) {
    Rng rng(8);
    DeformableAttention<double> attn(8, 4, 2, 3, rng);
    auto [off, w] = attn.offsets_and_weights(D({1, 8}, 0.0));
    // head 0 points along +x, head 1 along +y; point k sits k+1 pixels out
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_NEAR(off[(0 * 3 + k) * 2], double(k + 1), 1e-12);
        EXPECT_NEAR(off[(0 * 3 + k) * 2 + 1], 0.0, 1e-12);
        EXPECT_NEAR(off[((1 * 2) * 3 + k) * 2], 0.0, 1e-12);
        EXPECT_NEAR(off[((1 * 2) * 3 + k) * 2 + 1], double(k + 1), 1e-12);
    }
}

TEST(Encoder, IdentityProjectionPassesChannelsThrough) {
    Rng rng(9);
    Encoder<double> enc(small_encoder(AttentionKind::deformable), rng);
    for (std::size_t l = 0; l < 3; ++l) {
        auto& k = enc.input_projections()[l].kernel;
        const std::size_t in = k.dim(1);
        std::fill(k.data().begin(), k.data().end(), 0.0);
        for (std::size_t o = 0; o < std::min<std::size_t>(16, in); ++o) k[o * in + o] = 1;
        auto& b = enc.input_projections()[l].bias;
        std::fill(b.data().begin(), b.data().end(), 0.0);
    }
    auto stages = random_stages(1, rng);
    auto p = enc.project_scales(stages);
    EXPECT_EQ(p[0].shape(), (Shape{1, 16, 8, 8}));
    EXPECT_EQ(p[2].shape(), (Shape{1, 16, 2, 2}));
    for (std::size_t c = 0; c < 16; ++c)
        for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(p[0][c * 64 + i], c < 8 ? stages[0][c * 64 + i] : 0.0);
    for (std::size_t i = 0; i < p[1].numel(); ++i) EXPECT_EQ(p[1][i], stages[1][i]);
    for (std::size_t i = 0; i < p[2].numel(); ++i) EXPECT_EQ(p[2][i], stages[2][i]);
}

TEST(Encoder, RejectsWrongChannelCount) {
    Rng rng(10);
    Encoder<double> enc(small_encoder(AttentionKind::deformable), rng);
    std::array<D, 3> bad{D({1, 9, 8, 8}), D({1, 16, 4, 4}), D({1, 32, 2, 2})};
    EXPECT_THROW(enc(bad, {}), DimensionError);
}

TEST(Encoder, TokenLayoutAndShapes) {
    Rng rng(11);
    Encoder<double> enc(small_encoder(AttentionKind::deformable), rng);
    auto out = enc(random_stages(2, rng), {});
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out[0].tokens.shape(), (Shape{64 + 16 + 4, 16}));
    EXPECT_EQ(out[0].starts, (std::vector<std::size_t>{0, 64, 80}));
    EXPECT_EQ(out[1].level_map(2).values.shape(), (Shape{16, 2, 2}));
}

TEST(Encoder, CameraPermutationEquivariance) {
    for (auto kind : {AttentionKind::deformable, AttentionKind::standard}) {
        Rng rng(12);
        Encoder<double> enc(small_encoder(kind), rng);
        auto stages = random_stages(3, rng);
        auto a = enc(stages, {});
        auto b = enc(select_cameras(stages, {2, 0, 1}), {});
        EXPECT_TRUE(bitwise_equal(b[0].tokens, a[2].tokens));
        EXPECT_TRUE(bitwise_equal(b[1].tokens, a[0].tokens));
        EXPECT_TRUE(bitwise_equal(b[2].tokens, a[1].tokens));
    }
}

TEST(Encoder, NoInformationFlowsBetweenCameras) {
    for (bool cross : {true, false}) {
        Rng rng(13);
        Encoder<double> enc(small_encoder(AttentionKind::deformable, cross), rng);
        auto stages = random_stages(2, rng);
        auto a = enc(stages, {});
        auto zeroed = stages;
        for (std::size_t l = 0; l < 3; ++l) {
            zeroed[l] = stages[l].clone();
            const std::size_t half = zeroed[l].numel() / 2;
            std::fill(zeroed[l].data().begin() + long(half), zeroed[l].data().end(), 0.0);
        }
        auto b = enc(zeroed, {});
        EXPECT_TRUE(bitwise_equal(a[0].tokens, b[0].tokens));
        EXPECT_GT(max_abs_diff(a[1].tokens, b[1].tokens), 1e-3);
    }
}

TEST(Encoder, StandardAttentionMatchesDenseOracle) {
    Rng rng(14);
    auto cfg = small_encoder(AttentionKind::standard);
    EncoderLayer<double> layer(cfg, rng);
    auto tokens = rand_tensor({10, 16}, rng), pos = rand_tensor({10, 16}, rng);
    EncoderTokens<double> in{tokens, {{2, 5}}, {0}};
    auto y = layer.attend(in, pos);
    auto& a = layer.dense();
    auto q = add(tokens, pos);
    auto heads = oracle::dense_attention(a.q_proj(q), a.k_proj(q), a.v_proj(tokens), 2);
    for (std::size_t r = 0; r < 10; ++r) {
        auto row = oracle::affine(a.output, heads.data() + r * 16);
        for (std::size_t j = 0; j < 16; ++j) EXPECT_NEAR(y[r * 16 + j], row[j], 1e-12);
    }
}

TEST(Encoder, PerScaleAttentionKeepsScalesApart) {
    Rng rng(15);
    auto cfg = small_encoder(AttentionKind::deformable, false);
    cfg.num_layers = 1;
    EncoderLayer<double> layer(cfg, rng);
    EncoderTokens<double> in{rand_tensor({64 + 16 + 4, 16}, rng), {{8, 8}, {4, 4}, {2, 2}}, {0, 64, 80}};
    auto pos = rand_tensor({84, 16}, rng);
    auto a = layer.attend(in, pos);
    auto changed = in;
    changed.tokens = in.tokens.clone();
    for (std::size_t i = 80 * 16; i < 84 * 16; ++i) changed.tokens[i] += 1.0;
    auto b = layer.attend(changed, pos);
    for (std::size_t i = 0; i < 80 * 16; ++i) ASSERT_EQ(a[i], b[i]);
}

TEST(SineEmbedding, BoundedAndDistinct) {
    auto e = sine_embedding_2d<double>(4, 6, 16);
    EXPECT_EQ(e.shape(), (Shape{24, 16}));
    for (double v : e.values()) EXPECT_LE(std::abs(v), 1.0);
    for (std::size_t a = 0; a < 24; ++a)
        for (std::size_t b = a + 1; b < 24; ++b) {
            double d = 0;
            for (std::size_t j = 0; j < 16; ++j) d += std::abs(e[a * 16 + j] - e[b * 16 + j]);
            EXPECT_GT(d, 1e-6);
        }
}
