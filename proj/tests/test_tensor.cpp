#include <gtest/gtest.h>

#include "support.hpp"

using namespace cogsc;
using support::check_gradients;
using support::probe_loss;
using support::random_tensor;

namespace {

constexpr double kGradTol = 1e-4;

// Values bounded away from zero so ReLU-type kinks stay out of reach of the FD step.
Tensor away_from_zero(Shape shape, std::mt19937_64& rng, bool grad = true) {
    auto t = random_tensor(std::move(shape), rng, 0.2, 1.0, grad);
    std::bernoulli_distribution flip(0.5);
    for (auto& v : t.data())
        if (flip(rng)) v = -v;
    return t;
}

void expect_grad_ok(const std::function<Tensor()>& f, std::vector<Tensor> inputs) {
    auto r = check_gradients(f, std::move(inputs));
    EXPECT_GT(r.checked, 0u);
    EXPECT_LT(r.max_rel, kGradTol);
}

}  // namespace

TEST(TensorBasics, ShapeAndDataAgree) {
    Tensor t({2, 3, 4}, 1.5);
    EXPECT_EQ(t.size(), 24u);
    EXPECT_EQ(numel(t.shape()), t.size());
    EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
    EXPECT_THROW(Tensor({2, 0}, 0.0), ShapeError);
}

TEST(TensorBasics, GradientHasDataShape) {
    std::mt19937_64 rng(1);
    auto x = random_tensor({3, 4}, rng, -1, 1, true);
    sum(square(x)).backward();
    ASSERT_TRUE(x.has_grad());
    EXPECT_EQ(x.grad().size(), x.size());
}

TEST(TensorBasics, ElementwiseShapeMismatchIsRejected) {
    Tensor a({2, 3}, 1.0), b({3, 2}, 1.0);
    try {
        add(a, b);
        FAIL() << "expected a shape error";
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("[2x3] vs [3x2]"), std::string::npos) << e.what();
    }
}

TEST(Primitives, GlobalAveragePoolOfConstants) {
    Tensor x({2, 2, 2}, std::vector<double>{1, 1, 1, 1, 3, 3, 3, 3});
    EXPECT_EQ(global_average_pool(x).values(), (std::vector<double>{1, 3}));
}

TEST(Primitives, SoftmaxOfZerosIsUniform) {
    auto y = softmax(Tensor::vector({0, 0, 0}));
    for (double v : y.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Primitives, SoftmaxRowsSumToOne) {
    std::mt19937_64 rng(2);
    auto y = softmax(random_tensor({7, 5}, rng, -20, 20));
    for (std::size_t i = 0; i < 7; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < 5; ++j) s += y[i * 5 + j];
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Primitives, SigmoidIsStrictlyInsideUnitInterval) {
    auto y = sigmoid(Tensor::vector({-30, -1, 0, 1, 30}));
    for (double v : y.values()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
    }
    EXPECT_DOUBLE_EQ(y[2], 0.5);
}

TEST(Primitives, FullyConnectedMatchesMatmulOracle) {
    std::mt19937_64 rng(3);
    auto x = random_tensor({4}, rng), w = random_tensor({4, 3}, rng), b = random_tensor({3}, rng);
    auto y = fully_connected(x, w, b);
    ASSERT_EQ(y.shape(), (Shape{3}));
    for (std::size_t j = 0; j < 3; ++j) {
        double acc = b[j];
        for (std::size_t i = 0; i < 4; ++i) acc += x[i] * w[i * 3 + j];
        EXPECT_NEAR(y[j], acc, 1e-12);
    }
}

TEST(Primitives, ConcatAndSliceRoundTrip) {
    std::mt19937_64 rng(4);
    auto a = random_tensor({2, 3}, rng), b = random_tensor({1, 3}, rng);
    auto c = concat({a, b});
    EXPECT_EQ(c.shape(), (Shape{3, 3}));
    EXPECT_EQ(slice(c, 0, 2).values(), a.values());
    EXPECT_EQ(slice(c, 2, 3).values(), b.values());
    EXPECT_THROW(concat({a, random_tensor({1, 2}, rng)}), ShapeError);
}

TEST(Primitives, ConcatColumnsInterleavesRows) {
    Tensor a({2, 1}, std::vector<double>{1, 2}), b({2, 2}, std::vector<double>{3, 4, 5, 6});
    EXPECT_EQ(concat_columns({a, b}).values(), (std::vector<double>{1, 3, 4, 2, 5, 6}));
}

TEST(Primitives, SegmentSoftmaxNormalizesEachSegment) {
    std::mt19937_64 rng(5);
    auto s = random_tensor({6}, rng, -3, 3);
    std::vector<std::size_t> seg{0, 2, 0, 2, 2, 0};
    auto a = segment_softmax(s, seg, 3);
    double s0 = 0, s2 = 0;
    for (std::size_t i = 0; i < 6; ++i) (seg[i] == 0 ? s0 : s2) += a[i];
    EXPECT_NEAR(s0, 1.0, 1e-12);
    EXPECT_NEAR(s2, 1.0, 1e-12);
}

TEST(Backward, SumGivesOnes) {
    Tensor x({2, 3}, 0.7, true);
    sum(x).backward();
    for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SquareGivesTwiceInput) {
    std::mt19937_64 rng(6);
    auto x = random_tensor({5}, rng, -2, 2, true);
    sum(elementwise_mul(x, x)).backward();
    for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2 * x[i]);
}

TEST(Backward, NonScalarIsRejected) {
    Tensor x({3}, 1.0, true);
    EXPECT_THROW(scale(x, 2.0).backward(), ShapeError);
}

TEST(Backward, RepeatedCallsAccumulateUntilReset) {
    Tensor x({2}, 1.0, true);
    auto loss = sum(scale(x, 3.0));
    loss.backward();
    loss.backward();
    EXPECT_EQ(x.grad()[0], 6.0);
    x.zero_grad();
    loss.backward();
    EXPECT_EQ(x.grad()[0], 3.0);
}

TEST(Backward, NoGradGuardRecordsNothing) {
    Tensor x({2}, 1.0, true);
    NoGradGuard guard;
    auto y = sum(square(x));
    EXPECT_FALSE(y.requires_grad());
}

TEST(Backward, ResultsAreFinite) {
    std::mt19937_64 rng(7);
    auto x = random_tensor({4, 6}, rng, -50, 50, true);
    auto y = sum(log_softmax(x));
    y.backward();
    EXPECT_TRUE(all_finite(y));
    for (double g : x.grad()) EXPECT_TRUE(std::isfinite(g));
}

TEST(Backward, DeterministicAcrossRuns) {
    auto run = [] {
        std::mt19937_64 rng(8);
        auto x = random_tensor({2, 6, 6}, rng, -1, 1, true);
        auto w = random_tensor({3, 2, 3, 3}, rng, -1, 1, true);
        auto y = sum(sigmoid(conv2d(x, w, 1, 1)));
        y.backward();
        auto out = x.grad_or_zero();
        auto gw = w.grad_or_zero();
        out.insert(out.end(), gw.begin(), gw.end());
        out.push_back(y.item());
        return out;
    };
    EXPECT_EQ(run(), run());
}

TEST(Init, XavierBoundsAndZeroBiases) {
    std::mt19937_64 rng(9);
    auto w = xavier_uniform({20, 30}, 20, 30, rng);
    const double a = std::sqrt(6.0 / 50.0);
    for (double v : w.values()) EXPECT_LE(std::fabs(v), a);
    EXPECT_TRUE(w.requires_grad());
    auto b = zeros_param({30});
    for (double v : b.values()) EXPECT_EQ(v, 0.0);
}

// ---------------------------------------------------------------------------
// Finite-difference checks, one per primitive

class GradientCheck : public ::testing::Test {
protected:
    std::mt19937_64 rng{1234};
};

TEST_F(GradientCheck, AddSubMul) {
    auto a = random_tensor({3, 4}, rng, -1, 1, true), b = random_tensor({3, 4}, rng, -1, 1, true);
    auto p = random_tensor({3, 4}, rng);
    expect_grad_ok([&] { return probe_loss(elementwise_mul(sub(add(a, b), scale(b, 0.3)), a), p); }, {a, b});
}

TEST_F(GradientCheck, ReluAndLeakyRelu) {
    auto x = away_from_zero({10}, rng);
    auto p = random_tensor({10}, rng);
    expect_grad_ok([&] { return probe_loss(add(relu(x), leaky_relu(x, 0.2)), p); }, {x});
}

TEST_F(GradientCheck, SigmoidTanhExp) {
    auto x = random_tensor({8}, rng, -2, 2, true);
    auto p = random_tensor({8}, rng);
    expect_grad_ok([&] { return probe_loss(add(add(sigmoid(x), tanh(x)), exp(scale(x, 0.5))), p); }, {x});
}

TEST_F(GradientCheck, LogSquareSmoothL1) {
    auto pos = random_tensor({6}, rng, 0.5, 2.0, true);
    auto x = away_from_zero({6}, rng);
    for (auto& v : x.data()) v *= (std::fabs(v) > 0.6 ? 2.5 : 1.0);  // both branches, away from |x| = 1
    auto p = random_tensor({6}, rng);
    expect_grad_ok([&] { return probe_loss(add(add(log(pos), square(pos)), smooth_l1(x)), p); }, {pos, x});
}

TEST_F(GradientCheck, SumMeanReshape) {
    auto x = random_tensor({2, 3, 2}, rng, -1, 1, true);
    expect_grad_ok([&] { return add(mean(square(x)), sum(reshape(x, {6, 2}))); }, {x});
}

TEST_F(GradientCheck, ConcatSliceColumnsPick) {
    auto a = random_tensor({2, 3}, rng, -1, 1, true), b = random_tensor({1, 3}, rng, -1, 1, true);
    auto c = random_tensor({3, 2}, rng, -1, 1, true);
    auto p = random_tensor({3, 5}, rng);
    expect_grad_ok(
        [&] {
            auto stacked = concat({a, b});
            auto wide = concat_columns({stacked, c});
            return add(probe_loss(wide, p), sum(square(pick(slice(stacked, 1, 3), {0, 4, 5}))));
        },
        {a, b, c});
}

TEST_F(GradientCheck, MatmulAddRowFullyConnected) {
    auto x = random_tensor({4, 3}, rng, -1, 1, true), w = random_tensor({3, 5}, rng, -1, 1, true);
    auto b = random_tensor({5}, rng, -1, 1, true), v = random_tensor({3}, rng, -1, 1, true);
    auto p = random_tensor({4, 5}, rng), q = random_tensor({5}, rng);
    expect_grad_ok(
        [&] { return add(probe_loss(add_row(matmul(x, w), b), p), probe_loss(fully_connected(v, w, b), q)); },
        {x, w, b, v});
}

TEST_F(GradientCheck, RowScale) {
    auto x = random_tensor({3, 4}, rng, -1, 1, true), s = random_tensor({3}, rng, -1, 1, true);
    auto p = random_tensor({3, 4}, rng);
    expect_grad_ok([&] { return probe_loss(row_scale(x, s), p); }, {x, s});
}

TEST_F(GradientCheck, SoftmaxAndLogSoftmax) {
    auto x = random_tensor({3, 4}, rng, -2, 2, true);
    auto p = random_tensor({3, 4}, rng);
    expect_grad_ok([&] { return add(probe_loss(softmax(x), p), probe_loss(log_softmax(x), p)); }, {x});
}

TEST_F(GradientCheck, L2NormalizeRows) {
    auto x = random_tensor({3, 4}, rng, -1, 1, true);
    auto p = random_tensor({3, 4}, rng);
    expect_grad_ok([&] { return probe_loss(l2_normalize_rows(x), p); }, {x});
}

TEST_F(GradientCheck, GatherScatterSegmentSoftmax) {
    auto x = random_tensor({4, 3}, rng, -1, 1, true), s = random_tensor({6}, rng, -1, 1, true);
    std::vector<std::size_t> src{0, 1, 3, 3, 2, 0}, dst{1, 1, 0, 2, 2, 2};
    auto p = random_tensor({3, 3}, rng);
    expect_grad_ok(
        [&] {
            auto alpha = segment_softmax(s, dst, 3);
            return probe_loss(scatter_add_rows(row_scale(gather_rows(x, src), alpha), dst, 3), p);
        },
        {x, s});
}
