#include "test_util.hpp"

#include "bevseg/losses.hpp"
#include "bevseg/metrics.hpp"

using namespace bevseg;
using namespace bevseg::testing;

namespace {

ClassRaster raster(std::size_t h, std::size_t w, std::vector<std::uint8_t> ids) {
    ClassRaster r(h, w);
    r.ids = std::move(ids);
    return r;
}

ClassRaster random_raster(std::size_t h, std::size_t w, std::size_t classes, Rng& rng) {
    ClassRaster r(h, w);
    for (auto& v : r.ids) v = static_cast<std::uint8_t>(rng.below(classes));
    return r;
}

std::vector<double> grad_of_loss(const D& logits, const ClassRaster& t, const std::vector<double>& w) {
    D x = logits.clone();
    x.set_requires_grad();
    Tape<double> tape;
    D loss;
    {
        TapeScope<double> sc(tape);
        loss = weighted_cross_entropy(x, t, w);
    }
    tape.backward(loss);
    return {x.grad().begin(), x.grad().end()};
}

}  // namespace

TEST(WeightedCrossEntropy, UniformLogitsGiveLnFour) {
    Rng rng(1);
    auto t = random_raster(5, 6, 4, rng);
    for (auto w : {std::vector<double>{1, 15, 15, 15}, std::vector<double>{2, 1, 7, 3}})
        EXPECT_NEAR(weighted_cross_entropy(D({4, 5, 6}, 0.3), t, w).item(), std::log(4.0), 1e-12);
}

TEST(WeightedCrossEntropy, LargeMarginApproachesZero) {
    ClassRaster t = raster(1, 3, {0, 2, 1});
    D logits({3, 1, 3}, 0.0);
    for (std::size_t p = 0; p < 3; ++p) logits[t.ids[p] * 3 + p] = 60;
    EXPECT_LT(weighted_cross_entropy(logits, t, {1, 15, 15}).item(), 1e-20);
}

TEST(WeightedCrossEntropy, TwoPixelHandComputation) {
    // pixel 0: logits (1, 2), target 0, weight 1; pixel 1: logits (0, -1), target 1, weight 3
    auto logits = make<double>({2, 2, 1}, {1, 0, 2, -1});
    auto t = raster(2, 1, {0, 1});
    const double l0 = -std::log(std::exp(1.0) / (std::exp(1.0) + std::exp(2.0)));
    const double l1 = -std::log(std::exp(-1.0) / (std::exp(0.0) + std::exp(-1.0)));
    EXPECT_NEAR(weighted_cross_entropy(logits, t, {1, 3}).item(), (1 * l0 + 3 * l1) / 4, 1e-14);
}

TEST(WeightedCrossEntropy, ShiftInvariancePerPixel) {
    Rng rng(2);
    auto logits = rand_tensor({4, 3, 5}, rng, -3, 3);
    auto t = random_raster(3, 5, 4, rng);
    auto shifted = logits.clone();
    for (std::size_t p = 0; p < 15; ++p) {
        const double s = rng.uniform(-50, 50);
        for (std::size_t c = 0; c < 4; ++c) shifted[c * 15 + p] += s;
    }
    const std::vector<double> w{1, 15, 15, 15};
    EXPECT_NEAR(weighted_cross_entropy(logits, t, w).item(), weighted_cross_entropy(shifted, t, w).item(), 1e-6);
}

TEST(WeightedCrossEntropy, WeightScaleInvariantValueAndGradient) {
    Rng rng(3);
    auto logits = rand_tensor({4, 4, 4}, rng, -2, 2);
    auto t = random_raster(4, 4, 4, rng);
    const std::vector<double> w{1, 15, 15, 15}, w7{7, 105, 105, 105};
    EXPECT_NEAR(weighted_cross_entropy(logits, t, w).item(), weighted_cross_entropy(logits, t, w7).item(), 1e-6);
    auto g1 = grad_of_loss(logits, t, w), g2 = grad_of_loss(logits, t, w7);
    for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(g1[i], g2[i], 1e-6);
}

TEST(WeightedCrossEntropy, GradientCheck) {
    Rng rng(4);
    auto logits = rand_tensor({3, 3, 4}, rng, -2, 2);
    auto t = random_raster(3, 4, 3, rng);
    auto r = grad_check([&] { return weighted_cross_entropy(logits, t, {1, 5, 9}); }, {logits});
    EXPECT_LT(r.max_rel_error, 1e-7);
}

TEST(WeightedCrossEntropy, RejectsBadInputs) {
    auto t = raster(1, 2, {0, 3});
    EXPECT_THROW(weighted_cross_entropy(D({3, 1, 2}, 0.0), t, {1, 1, 1}), std::invalid_argument);
    EXPECT_THROW(weighted_cross_entropy(D({4, 1, 2}, 0.0), t, {1, 1, 1}), DimensionError);
    EXPECT_THROW(weighted_cross_entropy(D({4, 2, 2}, 0.0), t, {1, 1, 1, 1}), DimensionError);
    EXPECT_THROW(weighted_cross_entropy(D({4, 1, 2}, 0.0), t, {1, 0, 1, 1}), std::invalid_argument);
}

TEST(Iou, IdenticalRastersGiveOne) {
    Rng rng(5);
    auto a = random_raster(6, 6, 3, rng);
    for (std::uint8_t k = 0; k < 3; ++k) EXPECT_EQ(iou(a, a, k), 1.0);
}

TEST(Iou, TwoOfSixOverlap) {
    // pred mask {0,1,2,3}, gt mask {2,3,4,5}
    auto pred = raster(2, 4, {1, 1, 1, 1, 0, 0, 0, 0});
    auto gt = raster(2, 4, {0, 0, 1, 1, 1, 1, 0, 0});
    auto c = iou_counts(pred, gt, 1);
    EXPECT_EQ(c.intersection, 2u);
    EXPECT_EQ(c.uni, 6u);
    EXPECT_DOUBLE_EQ(iou(pred, gt, 1), 2.0 / 6.0);
}

TEST(Iou, SymmetricAndMatchesCountingOracle) {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        auto a = random_raster(5, 7, 4, rng), b = random_raster(5, 7, 4, rng);
        for (std::uint8_t k = 0; k < 4; ++k) {
            EXPECT_EQ(iou(a, b, k), iou(b, a, k));
            std::size_t inter = 0, uni = 0;
            for (std::size_t i = 0; i < a.size(); ++i) {
                inter += a.ids[i] == k && b.ids[i] == k;
                uni += a.ids[i] == k || b.ids[i] == k;
            }
            EXPECT_DOUBLE_EQ(iou(a, b, k), uni ? double(inter) / double(uni) : 1.0);
        }
    }
}

TEST(Iou, EmptyMasks) {
    auto bg = raster(1, 3, {0, 0, 0}), one = raster(1, 3, {0, 2, 0});
    EXPECT_EQ(iou(bg, bg, 2), 1.0);
    EXPECT_EQ(iou(bg, one, 2), 0.0);
    EXPECT_EQ(iou(one, bg, 2), 0.0);
}

TEST(Iou, MonotoneInIntersectionWithFixedUnion) {
    // union fixed at 6 pixels; move predicted pixels onto the gt mask one at a time
    auto gt = raster(1, 6, {1, 1, 1, 0, 0, 0});
    auto pred = raster(1, 6, {0, 0, 0, 1, 1, 1});
    double last = iou(pred, gt, 1);
    for (std::size_t i = 0; i < 3; ++i) {
        pred.ids[i] = 1;
        pred.ids[i + 3] = 1;
        const double v = iou(pred, gt, 1);
        EXPECT_GE(v, last);
        last = v;
    }
    EXPECT_EQ(last, 0.5);
}

TEST(Iou, RejectsDimensionMismatch) {
    EXPECT_THROW(iou(ClassRaster(2, 3), ClassRaster(3, 2), 0), DimensionError);
}

TEST(Miou, SingleClassEqualsIou) {
    Rng rng(7);
    auto a = random_raster(4, 4, 3, rng), b = random_raster(4, 4, 3, rng);
    EXPECT_EQ(miou(a, b, {2}), iou(a, b, 2));
    EXPECT_THROW(miou(a, b, {}), std::invalid_argument);
}

TEST(Miou, MeanOfPointTwoAndPointFour) {
    // class 1: 1/5; class 2: 2/5
    auto pred = raster(1, 10, {1, 1, 1, 0, 0, 2, 2, 2, 2, 0});
    auto gt = raster(1, 10, {1, 0, 0, 1, 1, 2, 2, 0, 0, 2});
    EXPECT_DOUBLE_EQ(iou(pred, gt, 1), 0.2);
    EXPECT_DOUBLE_EQ(iou(pred, gt, 2), 0.4);
    EXPECT_DOUBLE_EQ(miou(pred, gt, {1, 2}), 0.3);
}

TEST(MetricAccumulator, AccumulatesCountsBeforeDividing) {
    // sample A: class 1 IoU 1/1; sample B: class 1 IoU 1/3
    auto pa = raster(1, 4, {1, 0, 0, 0}), ga = raster(1, 4, {1, 0, 0, 0});
    auto pb = raster(1, 4, {1, 1, 1, 0}), gb = raster(1, 4, {1, 0, 0, 0});
    MetricAccumulator acc({"background", "lane"}, {1});
    acc.add(pa, ga);
    acc.add(pb, gb);
    auto r = acc.report();
    EXPECT_DOUBLE_EQ(r.classes[1].iou, 2.0 / 4.0);
    EXPECT_DOUBLE_EQ(r.all_merged, 0.5);
    EXPECT_DOUBLE_EQ(acc.per_sample_merged(), (1.0 + 1.0 / 3.0) / 2.0);
    EXPECT_NE(r.all_merged, acc.per_sample_merged());
    EXPECT_EQ(r.samples, 2u);
    EXPECT_EQ(r.pixels, 8u);
}

TEST(MetricAccumulator, MergedAndMeanVariants) {
    // classes 1 and 2 confused with each other: merged IoU is 1, per-class IoU 0
    auto pred = raster(1, 4, {1, 2, 0, 0}), gt = raster(1, 4, {2, 1, 0, 0});
    MetricAccumulator acc({"background", "a", "b"}, {1, 2});
    acc.add(pred, gt);
    auto r = acc.report();
    EXPECT_EQ(r.all_merged, 1.0);
    EXPECT_EQ(r.all_mean, 0.0);
    EXPECT_EQ(r.miou, r.all_mean);
    const auto table = r.to_table();
    EXPECT_NE(table.find("All (merged)"), std::string::npos);
    EXPECT_NE(table.find("All (mean)"), std::string::npos);
}

TEST(MetricAccumulator, MergeIsOrderIndependent) {
    Rng rng(8);
    std::vector<std::pair<ClassRaster, ClassRaster>> s;
    for (int i = 0; i < 6; ++i) s.emplace_back(random_raster(4, 5, 4, rng), random_raster(4, 5, 4, rng));
    const std::vector<std::string> names{"bg", "a", "b", "c"};
    MetricAccumulator all(names, {1, 2, 3}), first(names, {1, 2, 3}), second(names, {1, 2, 3});
    for (int i = 0; i < 6; ++i) {
        all.add(s[i].first, s[i].second);
        (i % 2 ? first : second).add(s[i].first, s[i].second);
    }
    second.merge(first);
    EXPECT_EQ(all.report().to_key_values(), second.report().to_key_values());
}

TEST(MetricAccumulator, RejectsBadClassLists) {
    EXPECT_THROW(MetricAccumulator({"bg"}, {}), std::invalid_argument);
    EXPECT_THROW(MetricAccumulator({"bg", "a"}, {2}), std::invalid_argument);
}

TEST(Rasterize, DominantChannelGivesConstantRaster) {
    D logits({3, 2, 4}, 0.0);
    for (std::size_t p = 0; p < 8; ++p) logits[2 * 8 + p] = 5;
    auto r = rasterize_prediction(logits);
    EXPECT_EQ(r.height, 2u);
    EXPECT_EQ(r.width, 4u);
    for (auto v : r.ids) EXPECT_EQ(v, 2);
}

TEST(Rasterize, TiesGoToLowerId) {
    auto r = rasterize_prediction(make<double>({3, 1, 2}, {0, 1, 2, 1, 2, 0}));
    EXPECT_EQ(r.ids, (std::vector<std::uint8_t>{1, 0}));
    EXPECT_EQ(rasterize_prediction(D({4, 1, 1}, 0.5)).ids[0], 0);
}

TEST(Rasterize, MatchesLoopOracleAndIgnoresPixelShifts) {
    Rng rng(9);
    auto logits = rand_tensor({4, 6, 5}, rng);
    auto r = rasterize_prediction(logits);
    auto shifted = logits.clone();
    for (std::size_t p = 0; p < 30; ++p) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < 4; ++c)
            if (logits[c * 30 + p] > logits[best * 30 + p]) best = c;
        EXPECT_EQ(r.ids[p], best);
        const double s = rng.uniform(-10, 10);
        for (std::size_t c = 0; c < 4; ++c) shifted[c * 30 + p] += s;
    }
    EXPECT_EQ(rasterize_prediction(shifted).ids, r.ids);
}
