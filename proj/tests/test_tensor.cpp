#include "test_util.hpp"

#include "bevseg/adamw.hpp"
#include "bevseg/grad_check.hpp"
#include "bevseg/tensor.hpp"

using namespace bevseg;
using namespace bevseg::testing;

TEST(Tensor, ShapeAndValues) {
    D t({2, 3}, 1.5);
    EXPECT_EQ(t.rank(), 2u);
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_EQ(t.dim(1), 3u);
    EXPECT_DOUBLE_EQ(t[4], 1.5);
    EXPECT_THROW(D({2, 0}), DimensionError);
    EXPECT_THROW(make<double>({2, 2}, {1, 2, 3}), DimensionError);
}

TEST(Tensor, HandleSharesStorageAndDetachCopies) {
    D a({2}, 1.0);
    D b = a;
    b[0] = 5;
    EXPECT_DOUBLE_EQ(a[0], 5);
    D c = a.detach();
    c[0] = 7;
    EXPECT_DOUBLE_EQ(a[0], 5);
}

TEST(Matmul, IdentityCase) {
    auto i2 = make<double>({2, 2}, {1, 0, 0, 1});
    auto b = make<double>({2, 2}, {5, 6, 7, 8});
    EXPECT_EQ(matmul(i2, b).values(), b.values());
}

TEST(Matmul, RowTimesColumn) {
    auto out = matmul(make<double>({1, 2}, {1, 2}), make<double>({2, 1}, {3, 4}));
    EXPECT_EQ(out.shape(), (Shape{1, 1}));
    EXPECT_DOUBLE_EQ(out.item(), 11);
}

TEST(Matmul, MatchesLoopOracle) {
    Rng rng(3);
    auto a = rand_tensor({2, 5, 7}, rng), b = rand_tensor({7, 6}, rng);
    auto c = matmul(a, b);
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = 0; j < 6; ++j) {
                double s = 0;
                for (std::size_t k = 0; k < 7; ++k) s += a[(n * 5 + i) * 7 + k] * b[k * 6 + j];
                EXPECT_NEAR(c[(n * 5 + i) * 6 + j], s, 1e-12);
            }
}

TEST(Matmul, GradientCheck) {
    Rng rng(4);
    auto a = rand_tensor({3, 4}, rng), b = rand_tensor({4, 2}, rng);
    auto r = grad_check([&] { return weighted_sum(matmul(a, b), 1); }, {a, b});
    EXPECT_LT(r.max_rel_error, 1e-7);
}

TEST(Matmul, ShapeMismatchThrows) {
    EXPECT_THROW(matmul(D({2, 3}), D({4, 2})), DimensionError);
}

TEST(Softmax, UniformOnZeros) {
    auto s = softmax(D({3}, 0.0), 0);
    for (double v : s.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeInputsDoNotOverflow) {
    auto s = softmax(make<double>({2}, {1000, 1000}), 0);
    EXPECT_DOUBLE_EQ(s[0], 0.5);
    EXPECT_DOUBLE_EQ(s[1], 0.5);
    auto f = softmax(make<float>({2}, {1000.f, 1000.f}), 0);
    EXPECT_FLOAT_EQ(f[0], 0.5f);
}

TEST(Softmax, GroupedNormalizesEachGroup) {
    Rng rng(5);
    auto x = rand_tensor({2, 12}, rng, -3, 3);
    auto s = softmax(x, 1, 4);  // joint over 12 entries laid out as 3 groups of 4
    for (std::size_t r = 0; r < 2; ++r) {
        double total = 0;
        for (std::size_t j = 0; j < 12; ++j) total += s[r * 12 + j];
        EXPECT_NEAR(total, 1.0, 1e-12);
    }
    // the grouping changes only summation order, not the values
    auto plain = softmax(x, 1);
    EXPECT_LT(max_abs_diff(s, plain), 1e-15);
}

TEST(Softmax, GradientCheck) {
    Rng rng(6);
    auto x = rand_tensor({5}, rng);
    auto r = grad_check([&] { return weighted_sum(softmax(x, 0), 2); }, {x});
    EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Elementwise, ReluExample) {
    EXPECT_EQ(relu(make<double>({3}, {-1, 0, 2})).values(), (std::vector<double>{0, 0, 2}));
    EXPECT_TRUE(std::isnan(relu(make<double>({1}, {std::nan("")}))[0]));
}

TEST(Elementwise, SuffixBroadcast) {
    auto a = make<double>({2, 2}, {1, 2, 3, 4});
    auto b = make<double>({2}, {10, 20});
    EXPECT_EQ(add(a, b).values(), (std::vector<double>{11, 22, 13, 24}));
    EXPECT_EQ(mul(a, b).values(), (std::vector<double>{10, 40, 30, 80}));
    EXPECT_THROW(add(a, D({3})), DimensionError);
}

TEST(Elementwise, TransposeConcatSlice) {
    auto a = make<double>({2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(transpose(a).values(), (std::vector<double>{1, 4, 2, 5, 3, 6}));
    auto c = concat(std::vector<D>{a, a});
    EXPECT_EQ(c.shape(), (Shape{4, 3}));
    EXPECT_EQ(slice(c, 1, 3).values(), (std::vector<double>{4, 5, 6, 1, 2, 3}));
}

TEST(Autodiff, SumOfSquares) {
    auto x = make<double>({3}, {1, 2, 3});
    x.set_requires_grad();
    Tape<double> tape;
    D y;
    {
        TapeScope<double> s(tape);
        y = sum(mul(x, x));
    }
    tape.backward(y);
    EXPECT_NEAR(x.grad()[0], 2, 1e-9);
    EXPECT_NEAR(x.grad()[1], 4, 1e-9);
    EXPECT_NEAR(x.grad()[2], 6, 1e-9);
    auto r = grad_check([&] { return sum(mul(x, x)); }, {x});
    EXPECT_LT(r.max_abs_error, 1e-9);
}

TEST(Autodiff, FanOutDoublesGradientExactly) {
    Rng rng(8);
    auto x = rand_tensor({4}, rng);
    auto grad_of = [&](bool twice) {
        D xx = x.detach();
        xx.set_requires_grad();
        Tape<double> tape;
        D y;
        {
            TapeScope<double> s(tape);
            auto t = sigmoid(xx);
            y = twice ? sum(add(t, t)) : sum(t);
        }
        tape.backward(y);
        auto g = xx.grad();
        return std::vector<double>(g.begin(), g.end());
    };
    auto once = grad_of(false), twice = grad_of(true);
    for (std::size_t i = 0; i < once.size(); ++i) EXPECT_EQ(twice[i], 2 * once[i]);
}

TEST(Autodiff, BackwardIsLinear) {
    Rng rng(9);
    auto x = rand_tensor({6}, rng);
    const double a = 0.7, b = -1.3;
    auto grad_of = [&](auto f) {
        D xx = x.detach();
        xx.set_requires_grad();
        Tape<double> tape;
        D y;
        {
            TapeScope<double> s(tape);
            y = f(xx);
        }
        tape.backward(y);
        auto g = xx.grad();
        return std::vector<double>(g.begin(), g.end());
    };
    auto f = [](const D& v) { return sum(mul(sigmoid(v), v)); };
    auto g = [](const D& v) { return weighted_sum(softmax(v, 0), 4); };
    auto gf = grad_of(f), gg = grad_of(g);
    auto gh = grad_of([&](const D& v) { return add(scale(f(v), a), scale(g(v), b)); });
    for (std::size_t i = 0; i < gf.size(); ++i) EXPECT_NEAR(gh[i], a * gf[i] + b * gg[i], 1e-10);
}

TEST(Autodiff, NoGradScopeRecordsNothing) {
    D x({2}, 1.0);
    x.set_requires_grad();
    Tape<double> tape;
    TapeScope<double> s(tape);
    {
        NoGradScope<double> ng;
        auto y = add(x, x);
        EXPECT_FALSE(y.requires_grad());
    }
    EXPECT_EQ(tape.size(), 0u);
}

TEST(Autodiff, DeterministicBitwise) {
    auto run = [] {
        Rng rng(10);
        auto a = rand_tensor<float>({16, 24}, rng), b = rand_tensor<float>({24, 8}, rng);
        return softmax(matmul(a, b), 1);
    };
    EXPECT_TRUE(bitwise_equal(run(), run()));
}

TEST(GradCheck, EveryElementwiseOpOnThreeShapes) {
    Rng rng(11);
    for (Shape s : {Shape{3}, Shape{2, 3}, Shape{2, 2, 3}}) {
        auto a = rand_tensor(s, rng), b = rand_tensor(s, rng);
        for (auto& v : a.data()) v += (v >= 0 ? 0.1 : -0.1);  // keep relu off its kink
        EXPECT_LT(grad_check([&] { return weighted_sum(add(a, b), 1); }, {a, b}).max_rel_error, 1e-5);
        EXPECT_LT(grad_check([&] { return weighted_sum(sub(a, b), 1); }, {a, b}).max_rel_error, 1e-5);
        EXPECT_LT(grad_check([&] { return weighted_sum(mul(a, b), 1); }, {a, b}).max_rel_error, 1e-5);
        EXPECT_LT(grad_check([&] { return weighted_sum(relu(a), 1); }, {a}).max_rel_error, 1e-5);
        EXPECT_LT(grad_check([&] { return weighted_sum(sigmoid(a), 1); }, {a}).max_rel_error, 1e-5);
        EXPECT_LT(grad_check([&] { return weighted_sum(softmax(a, s.size() - 1), 1); }, {a}).max_rel_error, 1e-5);
        EXPECT_LT(grad_check([&] { return mean(mul(a, a)); }, {a}).max_rel_error, 1e-5);
    }
}

TEST(GradCheck, SoftmaxSumOfSquares) {
    Rng rng(12);
    auto x = rand_tensor({7}, rng, -2, 2);
    auto r = grad_check(
        [&] {
            auto s = softmax(x, 0);
            return sum(mul(s, s));
        },
        {x});
    EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(AdamW, ZeroGradientAppliesDecoupledDecayOnly) {
    std::vector<double> p{2.0, -4.0}, g{0, 0}, m{0, 0}, v{0, 0};
    AdamWOptions o;
    o.weight_decay = 0.1;
    adamw_update<double>(p, g, m, v, 1, 0.01, o);
    EXPECT_NEAR(p[0], 2.0 * (1 - 0.01 * 0.1), 1e-15);
    EXPECT_NEAR(p[1], -4.0 * (1 - 0.01 * 0.1), 1e-15);
}

TEST(AdamW, ConstantGradientStepApproachesLr) {
    std::vector<double> p{0.0}, g{0.37}, m{0}, v{0};
    AdamWOptions o;
    o.weight_decay = 0;
    double prev = 0;
    double last_step = 0;
    for (std::uint64_t t = 1; t <= 200; ++t) {
        adamw_update<double>(p, g, m, v, t, 1e-3, o);
        last_step = prev - p[0];
        prev = p[0];
    }
    EXPECT_NEAR(last_step, 1e-3, 1e-5);
}

TEST(AdamW, ZeroLearningRateLeavesParameters) {
    D w({3}, 0.5);
    w.set_requires_grad();
    for (auto& gv : w.grad()) gv = 1.0;
    AdamW<double> opt({w}, {}, AdamWOptions{0.0, 0.9, 0.999, 1e-8, 1e-4});
    opt.step();
    for (double x : w.values()) EXPECT_EQ(x, 0.5);
}

TEST(AdamW, ParameterGroupsUseTheirOwnRate) {
    D a({1}, 1.0), b({1}, 1.0);
    a.grad()[0] = 1;
    b.grad()[0] = 1;
    AdamWOptions o;
    o.weight_decay = 0;
    AdamW<double> opt({a, b}, {0, 1}, o);
    opt.set_group_lr(0, 1e-5);
    opt.set_group_lr(1, 1e-4);
    opt.step();
    EXPECT_NEAR(1.0 - a[0], 1e-5, 1e-9);
    EXPECT_NEAR(1.0 - b[0], 1e-4, 1e-9);
}
