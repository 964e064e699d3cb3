#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "lanedet/checkpoint.hpp"
#include "lanedet/errors.hpp"
#include "lanedet/nn.hpp"
#include "lanedet/ops.hpp"
#include "test_support.hpp"

using namespace lanedet;
using lanedet::testing::gradient_check;
using lanedet::testing::random_param;
using lanedet::testing::random_tensor;

namespace {

// Direct reference convolution, written independently of the library kernels.
std::vector<double> reference_conv(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t dilation,
                                   std::size_t groups, std::size_t pad) {
    const auto n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const auto cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    const auto oh = (h + 2 * pad - dilation * (kh - 1) - 1) / stride + 1;
    const auto ow = (w + 2 * pad - dilation * (kw - 1) - 1) / stride + 1;
    const auto cin_g = cin / groups, cout_g = cout / groups;
    std::vector<double> out(n * cout * oh * ow, 0.0);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t co = 0; co < cout; ++co)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t x = 0; x < ow; ++x) {
                    double acc = 0.0;
                    for (std::size_t ci = 0; ci < cin_g; ++ci)
                        for (std::size_t ky = 0; ky < kh; ++ky)
                            for (std::size_t kx = 0; kx < kw; ++kx) {
                                const long iy = static_cast<long>(y * stride + ky * dilation) - static_cast<long>(pad);
                                const long ix = static_cast<long>(x * stride + kx * dilation) - static_cast<long>(pad);
                                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                                const auto c = (co / cout_g) * cin_g + ci;
                                acc += input.at(((b * cin + c) * h + iy) * w + ix) *
                                       kernel.at(((co * cin_g + ci) * kh + ky) * kw + kx);
                            }
                    out[((b * cout + co) * oh + y) * ow + x] = acc;
                }
    return out;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

Tensor weighted_sum(const Tensor& t, const Tensor& weights) { return ops::sum(ops::mul(t, weights)); }

}  // namespace

TEST(Conv2d, AllOnesCenterIsNine) {
    const Tensor input(Shape{1, 1, 3, 3}, 1.0);
    const Tensor kernel(Shape{1, 1, 3, 3}, 1.0);
    const auto out = ops::conv2d(input, kernel, {.stride = 1, .dilation = 1, .groups = 1, .padding = 1});
    ASSERT_EQ(out.shape(), (Shape{1, 1, 3, 3}));
    EXPECT_EQ(out.at(4), 9.0);
    EXPECT_EQ(out.at(0), 4.0);
}

TEST(Conv2d, IdentityKernelIsExactForEveryDilation) {
    Rng rng(1);
    for (std::size_t dilation : {1, 2, 4}) {
        const auto input = random_tensor({2, 3, 9, 11}, rng);
        Tensor depthwise(Shape{3, 1, 3, 3}, 0.0);
        for (std::size_t c = 0; c < 3; ++c) depthwise.mutable_data()[c * 9 + 4] = 1.0;
        const auto out = ops::conv2d(input, depthwise,
                                     {.stride = 1, .dilation = dilation, .groups = 3, .padding = ops::same_padding(3, dilation)});
        ASSERT_EQ(out.shape(), input.shape());
        EXPECT_TRUE(std::equal(out.data().begin(), out.data().end(), input.data().begin()));

        Tensor dense(Shape{3, 3, 3, 3}, 0.0);
        for (std::size_t c = 0; c < 3; ++c) dense.mutable_data()[(c * 3 + c) * 9 + 4] = 1.0;
        const auto out2 = ops::conv2d(input, dense, {.stride = 1, .dilation = dilation, .groups = 1, .padding = dilation});
        EXPECT_TRUE(std::equal(out2.data().begin(), out2.data().end(), input.data().begin()));
    }
}

TEST(Conv2d, DepthwiseDilatedMatchesLoopOracle) {
    Rng rng(2);
    const auto input = random_tensor({1, 2, 8, 8}, rng);
    const auto kernel = random_tensor({2, 1, 3, 3}, rng);
    const auto out = ops::conv2d(input, kernel, {.stride = 1, .dilation = 2, .groups = 2, .padding = 2});
    const auto expected = reference_conv(input, kernel, 1, 2, 2, 2);
    EXPECT_LE(max_abs_diff(out.data(), expected), 1e-12);
}

TEST(Conv2d, FastPathsMatchOracleAcrossConfigurations) {
    Rng rng(3);
    struct Case {
        std::size_t cin, cout, k, stride, dilation, groups, pad;
    };
    const Case cases[] = {{4, 4, 3, 2, 1, 4, 1}, {4, 4, 3, 1, 4, 4, 4}, {3, 5, 1, 1, 1, 1, 0}, {4, 6, 3, 1, 2, 2, 2},
                          {2, 2, 3, 2, 2, 1, 2}, {6, 6, 3, 2, 4, 6, 4}};
    for (const auto& c : cases) {
        const auto input = random_tensor({2, c.cin, 10, 13}, rng);
        const auto kernel = random_tensor({c.cout, c.cin / c.groups, c.k, c.k}, rng);
        const auto out =
            ops::conv2d(input, kernel, {.stride = c.stride, .dilation = c.dilation, .groups = c.groups, .padding = c.pad});
        const auto expected = reference_conv(input, kernel, c.stride, c.dilation, c.groups, c.pad);
        ASSERT_EQ(out.size(), expected.size());
        EXPECT_LE(max_abs_diff(out.data(), expected), 1e-12);
    }
}

TEST(Conv2d, GroupedEqualsIndependentSingleChannelConvolutions) {
    Rng rng(4);
    const auto input = random_tensor({1, 3, 7, 7}, rng);
    const auto kernel = random_tensor({3, 1, 3, 3}, rng);
    const auto grouped = ops::conv2d(input, kernel, {.stride = 1, .dilation = 2, .groups = 3, .padding = 2});
    for (std::size_t c = 0; c < 3; ++c) {
        const Tensor plane(Shape{1, 1, 7, 7},
                           std::vector<double>(input.data().begin() + c * 49, input.data().begin() + (c + 1) * 49));
        const Tensor k(Shape{1, 1, 3, 3},
                       std::vector<double>(kernel.data().begin() + c * 9, kernel.data().begin() + (c + 1) * 9));
        const auto single = ops::conv2d(plane, k, {.stride = 1, .dilation = 2, .groups = 1, .padding = 2});
        EXPECT_LE(max_abs_diff(single.data(), grouped.data().subspan(c * 49, 49)), 1e-12);
    }
}

TEST(Conv2d, ShapeMismatchNamesAxis) {
    const Tensor input(Shape{1, 3, 5, 5}, 0.0);
    const Tensor kernel(Shape{4, 2, 3, 3}, 0.0);
    try {
        ops::conv2d(input, kernel, {.stride = 1, .dilation = 1, .groups = 2, .padding = 1});
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        EXPECT_NE(std::string(e.what()).find("axis 1"), std::string::npos) << e.what();
    }
    const Tensor kernel2(Shape{4, 2, 3, 3}, 0.0);
    EXPECT_THROW(ops::conv2d(Tensor(Shape{1, 4, 5, 5}), kernel2, {.stride = 1, .dilation = 1, .groups = 1, .padding = 1}),
                 DimensionError);
}

TEST(PixelShuffle, DefinitionalRearrangement) {
    const Tensor input(Shape{1, 4, 1, 1}, {0, 1, 2, 3});
    const auto out = ops::pixel_shuffle(input, 2);
    ASSERT_EQ(out.shape(), (Shape{1, 1, 2, 2}));
    EXPECT_EQ(std::vector<double>(out.data().begin(), out.data().end()), (std::vector<double>{0, 1, 2, 3}));
}

TEST(PixelShuffle, SpaceToDepthIsExactInverse) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        const std::size_t r = static_cast<std::size_t>(rng.uniform_int(1, 3));
        const std::size_t c = static_cast<std::size_t>(rng.uniform_int(1, 3));
        const auto x = random_tensor({2, c * r * r, static_cast<std::size_t>(rng.uniform_int(1, 5)),
                                      static_cast<std::size_t>(rng.uniform_int(1, 5))},
                                     rng);
        const auto back = ops::space_to_depth(ops::pixel_shuffle(x, r), r);
        ASSERT_EQ(back.shape(), x.shape());
        EXPECT_EQ(std::memcmp(back.data().data(), x.data().data(), x.size() * sizeof(double)), 0);
        const auto forth = ops::pixel_shuffle(ops::space_to_depth(ops::pixel_shuffle(x, r), r), r);
        EXPECT_EQ(std::memcmp(forth.data().data(), ops::pixel_shuffle(x, r).data().data(), x.size() * sizeof(double)), 0);
    }
}

TEST(PixelShuffle, SumGradientIsAllOnes) {
    Rng rng(5);
    auto x = random_param({2, 8, 3, 4}, rng);
    backward(ops::sum(ops::pixel_shuffle(x, 2)));
    for (double g : x.grad()) EXPECT_EQ(g, 1.0);
    Tape::current().clear();
}

TEST(PixelShuffle, IndivisibleChannelsRejected) {
    EXPECT_THROW(ops::pixel_shuffle(Tensor(Shape{1, 6, 2, 2}), 2), DimensionError);
}

TEST(Nonlinearities, PointValues) {
    EXPECT_EQ(ops::sigmoid(Tensor::scalar(0.0)).item(), 0.5);
    EXPECT_EQ(ops::relu(Tensor::scalar(-3.0)).item(), 0.0);
    EXPECT_EQ(ops::relu(Tensor::scalar(2.5)).item(), 2.5);
    EXPECT_EQ(ops::tanh(Tensor::scalar(0.0)).item(), 0.0);
}

TEST(Nonlinearities, ReluSubgradientAtZeroIsZero) {
    auto x = Tensor(Shape{3}, {-1.0, 0.0, 1.0}).set_requires_grad(true);
    backward(ops::sum(ops::relu(x)));
    EXPECT_EQ(x.grad()[0], 0.0);
    EXPECT_EQ(x.grad()[1], 0.0);
    EXPECT_EQ(x.grad()[2], 1.0);
    Tape::current().clear();
}

TEST(Nonlinearities, FiniteDifferenceOnRandom4x4) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(100 + seed);
        auto x = random_param({4, 4}, rng, -2.0, 2.0);
        const auto w = random_tensor({4, 4}, rng);
        for (auto op : {&ops::relu, &ops::sigmoid, &ops::tanh}) {
            const auto r = gradient_check([&] { return weighted_sum(op(x), w); }, {x});
            EXPECT_LE(r.max_rel_error, 1e-6);
        }
    }
}

TEST(Pooling, MaxAndAverageOverPoints) {
    auto x = Tensor(Shape{1, 1, 3}, {1, 5, 3}).set_requires_grad(true);
    const auto m = ops::max_over_points(x);
    EXPECT_EQ(m.item(), 5.0);
    backward(ops::sum(m));
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0, 1, 0}));
    Tape::current().clear();
    EXPECT_EQ(ops::avg_over_points(Tensor(Shape{1, 1, 3}, {1, 5, 3})).item(), 3.0);
}

TEST(Pooling, MaxTieGoesToLowestIndex) {
    auto x = Tensor(Shape{1, 1, 4}, {2, 7, 7, 1}).set_requires_grad(true);
    backward(ops::sum(ops::max_over_points(x)));
    EXPECT_EQ(x.grad()[1], 1.0);
    EXPECT_EQ(x.grad()[2], 0.0);
    Tape::current().clear();
    auto y = Tensor(Shape{1, 1, 2, 2}, {3, 3, 3, 3}).set_requires_grad(true);
    backward(ops::sum(ops::max_pool2d(y, 2, 2)));
    EXPECT_EQ(std::vector<double>(y.grad().begin(), y.grad().end()), (std::vector<double>{1, 0, 0, 0}));
    Tape::current().clear();
}

TEST(Pooling, EmptyPointAxisRejected) {
    EXPECT_THROW(ops::max_over_points(Tensor(Shape{1, 2, 0})), EmptyInputError);
    EXPECT_THROW(ops::avg_over_points(Tensor(Shape{1, 2, 0})), EmptyInputError);
    const std::size_t zero[] = {0};
    EXPECT_THROW(ops::max_over_points(Tensor(Shape{1, 2, 3}), zero), EmptyInputError);
}

TEST(Pooling, CountsIgnorePadding) {
    const Tensor x(Shape{2, 1, 4}, {1, 2, 100, 100, 4, 3, 2, 1});
    const std::size_t counts[] = {2, 4};
    const auto m = ops::max_over_points(x, counts);
    const auto a = ops::avg_over_points(x, counts);
    EXPECT_EQ(m.at(0), 2.0);
    EXPECT_EQ(m.at(1), 4.0);
    EXPECT_EQ(a.at(0), 1.5);
    EXPECT_EQ(a.at(1), 2.5);
}

TEST(Pooling, PermutationInvariance) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(200 + seed);
        const std::size_t p = 17;
        const auto x = random_tensor({2, 5, p}, rng);
        const auto kernel = random_tensor({6, 5, 1}, rng);
        const auto bias = random_tensor({6}, rng);
        std::vector<std::size_t> perm(p);
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);
        std::vector<double> permuted(x.size());
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t c = 0; c < 5; ++c)
                for (std::size_t i = 0; i < p; ++i) permuted[(b * 5 + c) * p + i] = x.at((b * 5 + c) * p + perm[i]);
        const Tensor xp(x.shape(), permuted);

        const auto m1 = ops::max_over_points(x), m2 = ops::max_over_points(xp);
        EXPECT_EQ(std::memcmp(m1.data().data(), m2.data().data(), m1.size() * sizeof(double)), 0);
        const auto c1 = ops::max_over_points(ops::conv1d(x, kernel, bias));
        const auto c2 = ops::max_over_points(ops::conv1d(xp, kernel, bias));
        EXPECT_EQ(std::memcmp(c1.data().data(), c2.data().data(), c1.size() * sizeof(double)), 0);
        const auto a1 = ops::avg_over_points(x), a2 = ops::avg_over_points(xp);
        EXPECT_LE(max_abs_diff(a1.data(), a2.data()), 1e-9);
    }
}

TEST(Conv1d, IdentityPermutationAndOracle) {
    Rng rng(6);
    const auto x = random_tensor({2, 3, 9}, rng);
    Tensor eye(Shape{3, 3, 1}, 0.0);
    for (std::size_t i = 0; i < 3; ++i) eye.mutable_data()[i * 3 + i] = 1.0;
    const auto same = ops::conv1d(x, eye, Tensor{});
    EXPECT_TRUE(std::equal(same.data().begin(), same.data().end(), x.data().begin()));

    const auto kernel = random_tensor({4, 3, 1}, rng);
    const auto bias = random_tensor({4}, rng);
    const auto out = ops::conv1d(x, kernel, bias);
    double worst = 0.0;
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t p = 0; p < 9; ++p)
            for (std::size_t o = 0; o < 4; ++o) {
                double acc = bias.at(o);
                for (std::size_t i = 0; i < 3; ++i) acc += kernel.at(o * 3 + i) * x.at((b * 3 + i) * 9 + p);
                worst = std::max(worst, std::abs(acc - out.at((b * 4 + o) * 9 + p)));
            }
    EXPECT_LE(worst, 1e-12);

    // Swapping two points swaps the corresponding outputs exactly.
    std::vector<double> swapped(x.data().begin(), x.data().end());
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t c = 0; c < 3; ++c) std::swap(swapped[(b * 3 + c) * 9 + 1], swapped[(b * 3 + c) * 9 + 7]);
    const auto out2 = ops::conv1d(Tensor(x.shape(), swapped), kernel, bias);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t o = 0; o < 4; ++o) {
            EXPECT_EQ(out2.at((b * 4 + o) * 9 + 1), out.at((b * 4 + o) * 9 + 7));
            EXPECT_EQ(out2.at((b * 4 + o) * 9 + 7), out.at((b * 4 + o) * 9 + 1));
        }
    EXPECT_THROW(ops::conv1d(x, Tensor(Shape{4, 2, 1}), Tensor{}), DimensionError);
}

TEST(Lstm, ZeroParametersGiveZeroState) {
    const std::size_t d = 3, h = 4;
    const ops::LstmParams params{Tensor(Shape{4 * h, d}), Tensor(Shape{4 * h, h}), Tensor(Shape{4 * h})};
    const auto s = ops::lstm_cell(Tensor(Shape{2, d}), {Tensor(Shape{2, h}), Tensor(Shape{2, h})}, params);
    for (double v : s.hidden.data()) EXPECT_EQ(v, 0.0);
    for (double v : s.cell.data()) EXPECT_EQ(v, 0.0);
}

TEST(Lstm, SaturatedForgetGateKeepsCell) {
    Rng rng(7);
    const std::size_t d = 3, h = 4;
    ops::LstmParams params{random_tensor({4 * h, d}, rng), random_tensor({4 * h, h}, rng), random_tensor({4 * h}, rng)};
    for (std::size_t j = h; j < 2 * h; ++j) params.bias.mutable_data()[j] = 50.0;
    const auto x = random_tensor({2, d}, rng);
    const ops::LstmState prev{random_tensor({2, h}, rng), random_tensor({2, h}, rng)};
    const auto next = ops::lstm_cell(x, prev, params);
    // Closed-form gates.
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t j = 0; j < h; ++j) {
            auto pre = [&](std::size_t gate) {
                double acc = params.bias.at(gate * h + j);
                for (std::size_t i = 0; i < d; ++i) acc += params.input_weight.at((gate * h + j) * d + i) * x.at(b * d + i);
                for (std::size_t i = 0; i < h; ++i)
                    acc += params.hidden_weight.at((gate * h + j) * h + i) * prev.hidden.at(b * h + i);
                return acc;
            };
            const double ig = 1.0 / (1.0 + std::exp(-pre(0)));
            const double g = std::tanh(pre(2));
            EXPECT_LE(std::abs(next.cell.at(b * h + j) - prev.cell.at(b * h + j) - ig * g), 1e-9);
        }
}

TEST(Lstm, GradientThroughThreeSteps) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(300 + seed);
        const std::size_t d = 3, h = 4;
        ops::LstmParams params{random_param({4 * h, d}, rng), random_param({4 * h, h}, rng), random_param({4 * h}, rng)};
        auto x = random_param({2, d}, rng);
        const auto w = random_tensor({2, h}, rng);
        auto loss = [&] {
            ops::LstmState s{Tensor(Shape{2, h}), Tensor(Shape{2, h})};
            for (int step = 0; step < 3; ++step) s = ops::lstm_cell(x, s, params);
            return ops::add(weighted_sum(s.hidden, w), weighted_sum(s.cell, w));
        };
        const auto r = gradient_check(loss, {x, params.input_weight, params.hidden_weight, params.bias});
        EXPECT_LE(r.max_rel_error, 1e-4) << "seed " << seed;
    }
}

TEST(Backward, SumOfParameterGivesOnes) {
    auto p = Tensor(Shape{3}, {0.5, -1.0, 2.0}).set_requires_grad(true);
    backward(ops::sum(p));
    EXPECT_EQ(std::vector<double>(p.grad().begin(), p.grad().end()), (std::vector<double>{1, 1, 1}));
    Tape::current().clear();
}

TEST(Backward, SquaredSumAndOneSgdStep) {
    ParameterSet params;
    auto& p = params.add("p", Tensor(Shape{2}, {1.0, 2.0}));
    backward(ops::sum(ops::mul(p, p)));
    EXPECT_EQ(p.grad()[0], 2.0);
    EXPECT_EQ(p.grad()[1], 4.0);
    SgdOptimizer sgd(0.1, 0.0);
    sgd.step(params);
    EXPECT_DOUBLE_EQ(p.at(0), 0.8);
    EXPECT_DOUBLE_EQ(p.at(1), 1.6);
    EXPECT_EQ(Tape::current().size(), 0u);
    EXPECT_FALSE(p.has_grad());
}

TEST(Backward, NonScalarLossRejected) {
    auto p = Tensor(Shape{3}, 1.0).set_requires_grad(true);
    EXPECT_THROW(backward(ops::relu(p)), ContractError);
    Tape::current().clear();
}

TEST(Backward, SharedSubexpressionVisitedOnce) {
    auto x = Tensor(Shape{1}, {3.0}).set_requires_grad(true);
    const auto y = ops::mul(x, x);
    backward(ops::add(y, y));  // d/dx 2x^2 = 4x
    EXPECT_EQ(x.grad()[0], 12.0);
    Tape::current().clear();
}

TEST(Backward, NoGradModeRecordsNothing) {
    auto x = Tensor(Shape{2}, 1.0).set_requires_grad(true);
    {
        NoGradGuard guard;
        const auto y = ops::relu(x);
        EXPECT_FALSE(y.requires_grad());
    }
    EXPECT_EQ(Tape::current().size(), 0u);
}

TEST(Backward, TwoLayerNetMatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(400 + seed);
        auto w1 = random_param({5, 3}, rng), b1 = random_param({5}, rng);
        auto w2 = random_param({2, 5}, rng), b2 = random_param({2}, rng);
        const auto x = random_tensor({4, 3}, rng);
        const auto target = random_tensor({4, 2}, rng);
        auto loss = [&] {
            const auto out = ops::linear(ops::tanh(ops::linear(x, w1, b1)), w2, b2);
            const auto diff = ops::sub(out, target);
            return ops::mean(ops::mul(diff, diff));
        };
        EXPECT_LE(gradient_check(loss, {w1, b1, w2, b2}).max_rel_error, 1e-4);
    }
}

TEST(Sgd, ZeroLearningRateLeavesParametersBitIdentical) {
    Rng rng(8);
    ParameterSet params;
    auto& w = params.add("w", random_tensor({4, 4}, rng));
    const std::vector<double> before(w.data().begin(), w.data().end());
    SgdOptimizer sgd(0.0, 0.9);
    for (int i = 0; i < 3; ++i) {
        backward(ops::sum(ops::mul(w, w)));
        sgd.step(params);
    }
    EXPECT_EQ(std::memcmp(before.data(), w.data().data(), before.size() * sizeof(double)), 0);
}

// Finite-difference check of every differentiable op on >= 20 random instances.
TEST(GradientCheck, EveryOperator) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(1000 + seed);
        double worst = 0.0;
        auto check = [&](const char* name, auto&& make, std::vector<Tensor> params) {
            const auto out = make();
            const auto w = random_tensor(out.shape(), rng);
            const auto r = gradient_check([&] { return weighted_sum(make(), w); }, params);
            EXPECT_LE(r.max_rel_error, 1e-4) << name << " seed " << seed;
            worst = std::max(worst, r.max_rel_error);
        };

        auto x4 = random_param({2, 4, 6, 6}, rng);
        auto dw = random_param({4, 1, 3, 3}, rng);
        auto db = random_param({4}, rng);
        const std::size_t dil = static_cast<std::size_t>(1) << rng.uniform_int(0, 2);
        const std::size_t stride = static_cast<std::size_t>(rng.uniform_int(1, 2));
        check("depthwise conv2d",
              [&] { return ops::conv2d(x4, dw, db, {.stride = stride, .dilation = dil, .groups = 4, .padding = dil}); },
              {x4, dw, db});
        auto pw = random_param({3, 4, 1, 1}, rng);
        auto pb = random_param({3}, rng);
        check("pointwise conv2d", [&] { return ops::conv2d(x4, pw, pb, {}); }, {x4, pw, pb});
        auto gk = random_param({6, 2, 3, 3}, rng);
        auto gb = random_param({6}, rng);
        check("grouped conv2d",
              [&] { return ops::conv2d(x4, gk, gb, {.stride = stride, .dilation = 1, .groups = 2, .padding = 1}); },
              {x4, gk, gb});
        check("pixel_shuffle", [&] { return ops::pixel_shuffle(x4, 2); }, {x4});
        check("space_to_depth", [&] { return ops::space_to_depth(x4, 2); }, {x4});
        check("max_pool2d", [&] { return ops::max_pool2d(x4, 2, 2); }, {x4});

        auto a = random_param({3, 5}, rng), b = random_param({3, 5}, rng);
        check("add", [&] { return ops::add(a, b); }, {a, b});
        check("sub", [&] { return ops::sub(a, b); }, {a, b});
        check("mul", [&] { return ops::mul(a, b); }, {a, b});
        check("scale", [&] { return ops::scale(a, -1.7); }, {a});
        check("mean", [&] { return ops::mean(ops::mul(a, a)); }, {a});
        check("slice_cols", [&] { return ops::slice_cols(a, 1, 4); }, {a});
        check("stack_steps", [&] { return ops::stack_steps({a, ops::tanh(b), a}); }, {a, b});
        auto lw = random_param({4, 5}, rng), lb = random_param({4}, rng);
        check("linear", [&] { return ops::linear(a, lw, lb); }, {a, lw, lb});

        auto pts = random_param({2, 3, 7}, rng);
        auto glob = random_param({2, 2}, rng);
        auto k1 = random_param({4, 3, 1}, rng), b1 = random_param({4}, rng);
        const std::size_t counts[] = {7, 4};
        check("conv1d", [&] { return ops::conv1d(pts, k1, b1); }, {pts, k1, b1});
        check("max_over_points", [&] { return ops::max_over_points(pts, counts); }, {pts});
        check("avg_over_points", [&] { return ops::avg_over_points(pts, counts); }, {pts});
        check("concat_broadcast", [&] { return ops::concat_broadcast(pts, glob); }, {pts, glob});
        EXPECT_LE(worst, 1e-4);
    }
}

TEST(Checkpoint, RoundTripAndValidation) {
    Rng rng(9);
    ParameterSet params;
    params.add("enc.w", random_tensor({3, 2, 1}, rng));
    params.add("bias", random_tensor({5}, rng));
    const auto bytes = encode_checkpoint(params);
    ASSERT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "LNCK");
    const auto back = decode_checkpoint(bytes);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(encode_checkpoint(back), bytes);

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    EXPECT_THROW(decode_checkpoint(bad_magic), FormatError);
    auto bad_version = bytes;
    bad_version[4] = 9;
    EXPECT_THROW(decode_checkpoint(bad_version), FormatError);
    for (std::size_t cut : {std::size_t{2}, std::size_t{9}, bytes.size() - 3}) {
        const std::vector<std::uint8_t> truncated(bytes.begin(), bytes.begin() + static_cast<long>(cut));
        EXPECT_THROW(decode_checkpoint(truncated), FormatError) << cut;
    }

    ParameterSet other;
    other.add("enc.w", Tensor(Shape{3, 2, 1}));
    other.add("bias", Tensor(Shape{4}));
    EXPECT_THROW(assign_parameters(other, back), DimensionError);
}
