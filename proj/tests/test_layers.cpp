#include "test_util.hpp"

#include "bevseg/backbone.hpp"
#include "bevseg/grad_suite.hpp"
#include "bevseg/semantic_decoder.hpp"

using namespace bevseg;
using namespace bevseg::testing;

namespace {

BackboneConfig tiny_backbone(std::size_t h, std::size_t w) {
    BackboneConfig c;
    c.widths = {8, 16, 32};
    c.blocks_per_stage = 1;
    c.image_height = h;
    c.image_width = w;
    return c;
}

HeadConfig tiny_head(std::size_t dim, std::size_t classes, std::size_t gh, std::size_t gw) {
    HeadConfig h;
    h.dim = dim;
    h.classes = classes;
    h.gt_height = gh;
    h.gt_width = gw;
    return h;
}

}  // namespace

TEST(Backbone, StageStridesAndShapes) {
    Rng rng(1);
    Backbone<float> bb(tiny_backbone(64, 96), rng);
    auto out = bb(rand_tensor<float>({2, 3, 64, 96}, rng), {});
    EXPECT_EQ(out[0].shape(), (Shape{2, 8, 8, 12}));
    EXPECT_EQ(out[1].shape(), (Shape{2, 16, 4, 6}));
    EXPECT_EQ(out[2].shape(), (Shape{2, 32, 2, 3}));
    EXPECT_EQ(kStageStrides, (std::array<int, 3>{8, 16, 32}));
}

TEST(Backbone, PaperResolutionGives14By25) {
    Rng rng(2);
    auto cfg = tiny_backbone(448, 800);
    cfg.widths = {4, 4, 8};
    Backbone<float> bb(cfg, rng);
    NoGradScope<float> ng;
    auto out = bb(rand_tensor<float>({1, 3, 448, 800}, rng), {});
    EXPECT_EQ(out[2].shape(), (Shape{1, 8, 14, 25}));
    EXPECT_EQ(out[0].shape(), (Shape{1, 4, 56, 100}));
}

TEST(Backbone, RejectsBadInputs) {
    Rng rng(3);
    Backbone<float> bb(tiny_backbone(64, 64), rng);
    EXPECT_THROW(bb(F({1, 1, 64, 64}), {}), DimensionError);
    EXPECT_THROW(bb(F({1, 3, 60, 64}), {}), DimensionError);
    EXPECT_THROW(tiny_backbone(60, 64).validate(), std::invalid_argument);
}

TEST(Backbone, IdenticalImagesGiveIdenticalFeatures) {
    Rng rng(4);
    Backbone<float> bb(tiny_backbone(64, 64), rng);
    auto img = rand_tensor<float>({1, 3, 64, 64}, rng);
    auto out = bb(concat(std::vector<F>{img, img}), {});
    for (const auto& s : out) EXPECT_TRUE(bitwise_equal(slice(s, 0, 1), slice(s, 1, 2)));
}

TEST(Backbone, CameraPermutationEquivariance) {
    Rng rng(5);
    Backbone<double> bb(tiny_backbone(64, 64), rng);
    auto a = rand_tensor({1, 3, 64, 64}, rng), b = rand_tensor({1, 3, 64, 64}, rng);
    auto ab = bb(concat(std::vector<D>{a, b}), {});
    auto ba = bb(concat(std::vector<D>{b, a}), {});
    for (std::size_t l = 0; l < 3; ++l) {
        EXPECT_TRUE(bitwise_equal(slice(ab[l], 0, 1), slice(ba[l], 1, 2)));
        EXPECT_TRUE(bitwise_equal(slice(ab[l], 1, 2), slice(ba[l], 0, 1)));
    }
}

TEST(Backbone, SampleStatisticsKeepCamerasEquivariant) {
    Rng rng(6);
    auto cfg = tiny_backbone(64, 64);
    cfg.bn.eval_batch_stats = true;
    Backbone<double> bb(cfg, rng);
    auto a = rand_tensor({1, 3, 64, 64}, rng), b = rand_tensor({1, 3, 64, 64}, rng);
    auto ab = bb(concat(std::vector<D>{a, b}), {});
    auto ba = bb(concat(std::vector<D>{b, a}), {});
    for (std::size_t l = 0; l < 3; ++l) EXPECT_LT(max_abs_diff(slice(ab[l], 0, 1), slice(ba[l], 1, 2)), 1e-12);
}

TEST(Backbone, GradientCheckTinyConfig) {
    Rng rng(7);
    Backbone<double> bb(tiny_backbone(64, 64), rng);
    auto img = rand_tensor({1, 3, 64, 64}, rng);
    ParamList<double> params;
    bb.collect(params, "b");
    // random offsets on every parameter keep ReLUs and BN betas off their kinks
    auto inputs = gradsuite::randomize(params, rng);
    inputs.insert(inputs.begin(), img);
    GradCheckOptions opt;
    opt.max_per_input = 24;
    auto r = grad_check(
        [&] {
            auto out = bb(img, {});
            return add(add(weighted_sum(out[0], 1), weighted_sum(out[1], 2)), weighted_sum(out[2], 3));
        },
        inputs, opt);
    EXPECT_LT(r.max_rel_error, 1e-4) << "input " << r.worst_input << " index " << r.worst_index << " analytic "
                                      << r.worst_analytic << " numeric " << r.worst_numeric;
}

TEST(Backbone, TrainingModeUpdatesOnlyRunningStatistics) {
    Rng rng(8);
    Backbone<float> bb(tiny_backbone(32, 32), rng);
    ParamList<float> params;
    bb.collect(params, "b");
    std::vector<std::vector<float>> before;
    for (const auto& p : params) before.push_back(p.tensor.values());
    bb(rand_tensor<float>({2, 3, 32, 32}, rng), ForwardMode{true, &rng});
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].trainable)
            EXPECT_EQ(params[i].tensor.values(), before[i]) << params[i].name;
        else
            EXPECT_NE(params[i].tensor.values(), before[i]) << params[i].name;
    }
}

TEST(SemanticHead, ReshapeFlattenBijection) {
    Rng rng(9);
    auto z = rand_tensor({12, 5}, rng);
    auto m = reshape_queries(z, 3, 4);
    EXPECT_EQ(m.shape(), (Shape{5, 3, 4}));
    EXPECT_TRUE(bitwise_equal(map_to_tokens(m), z));
    // query (r, c) lands at spatial (r, c)
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 4; ++c)
            for (std::size_t ch = 0; ch < 5; ++ch) EXPECT_EQ(m[(ch * 3 + r) * 4 + c], z[(r * 4 + c) * 5 + ch]);
    EXPECT_THROW(reshape_queries(z, 4, 4), DimensionError);
}

TEST(SemanticHead, FiveThousandQueriesFormA100By50Grid) {
    auto m = reshape_queries(D({5000, 2}, 0.0), 100, 50);
    EXPECT_EQ(m.shape(), (Shape{2, 100, 50}));
}

TEST(SemanticHead, ConstantInputWithIdentityConvsStaysConstant) {
    Rng rng(10);
    const std::size_t C = 4;
    UpsampleStage<double> st(C, C, rng);
    std::fill(st.conv3.conv.kernel.data().begin(), st.conv3.conv.kernel.data().end(), 0.0);
    std::fill(st.conv1.conv.kernel.data().begin(), st.conv1.conv.kernel.data().end(), 0.0);
    for (std::size_t c = 0; c < C; ++c) {
        st.conv3.conv.kernel[((c * C + c) * 3 + 1) * 3 + 1] = 1;
        st.conv1.conv.kernel[c * C + c] = 1;
    }
    auto y = st(D({C, 3, 5}, 0.7), {});
    EXPECT_EQ(y.shape(), (Shape{C, 6, 10}));
    for (double v : y.values()) EXPECT_NEAR(v, y[0], 1e-12);
    EXPECT_NEAR(y[0], 0.7 / (1 + 1e-5), 1e-12);  // two eval BN layers with unit variance
}

TEST(SemanticHead, OutputIsFourTimesTheQueryGrid) {
    Rng rng(11);
    auto cfg = tiny_head(8, 4, 400, 200);
    cfg.final_resize_to_gt = false;
    SemanticDecoder<float> head(cfg, rng);
    NoGradScope<float> ng;
    auto y = head(rand_tensor<float>({5000, 8}, rng), 100, 50, {});
    EXPECT_EQ(y.shape(), (Shape{4, 400, 200}));
}

TEST(SemanticHead, SmallerQueryGridIsResizedToGt) {
    Rng rng(12);
    SemanticDecoder<float> head(tiny_head(8, 4, 400, 200), rng);
    NoGradScope<float> ng;
    EXPECT_EQ(head(rand_tensor<float>({1250, 8}, rng), 50, 25, {}).shape(), (Shape{4, 400, 200}));
}

TEST(SemanticHead, TwoClassHead) {
    Rng rng(13);
    SemanticDecoder<double> head(tiny_head(8, 2, 16, 8), rng);
    EXPECT_EQ(head(rand_tensor({8, 8}, rng), 4, 2, {}).shape(), (Shape{2, 16, 8}));
    EXPECT_THROW(SemanticDecoder<double>(tiny_head(8, 1, 16, 8), rng), std::invalid_argument);
}

TEST(SemanticHead, EvalIsDeterministicAndDropoutFree) {
    Rng rng(14);
    auto cfg = tiny_head(8, 4, 16, 8);
    cfg.dropout = 0.5;
    SemanticDecoder<double> head(cfg, rng);
    auto z = rand_tensor({8, 8}, rng);
    auto a = head(z, 4, 2, {});
    EXPECT_TRUE(bitwise_equal(a, head(z, 4, 2, {})));
    auto no_drop = cfg;
    no_drop.dropout = 0.0;
    Rng r2(14);
    SemanticDecoder<double> head2(no_drop, r2);
    EXPECT_TRUE(bitwise_equal(a, head2(z, 4, 2, {})));
    EXPECT_THROW(head(z, 4, 2, ForwardMode{true, nullptr}), std::invalid_argument);
}

TEST(SemanticHead, GradientCheckTinyDims) {
    Rng rng(15);
    SemanticDecoder<double> head(tiny_head(8, 3, 8, 12), rng);
    auto z = rand_tensor({6, 8}, rng);
    ParamList<double> params;
    head.collect(params, "h");
    auto inputs = gradsuite::randomize(params, rng);
    inputs.insert(inputs.begin(), z);
    auto r = grad_check([&] { return weighted_sum(head(z, 2, 3, {}), 4); }, inputs);
    EXPECT_LT(r.max_rel_error, 1e-5) << "input " << r.worst_input << " index " << r.worst_index << " analytic "
                                      << r.worst_analytic << " numeric " << r.worst_numeric;
}
