#include <gtest/gtest.h>

#include <cmath>

#include "lanedet/config.hpp"
#include "lanedet/errors.hpp"
#include "lanedet/geometry.hpp"
#include "lanedet/rng.hpp"

using namespace lanedet;

namespace {

QuadraticLane random_lane(Rng& rng) {
    return {rng.uniform(-0.01, 0.01), rng.uniform(-1.0, 1.0), rng.uniform(0.0, 256.0)};
}

}  // namespace

TEST(KeyValues, ConstantLaneIsVertical) {
    const auto k = params_to_keys({0, 0, 42.5}, 128);
    EXPECT_EQ(k.k1, 42.5);
    EXPECT_EQ(k.k2, 42.5);
    EXPECT_EQ(k.k3, 42.5);
    const auto p = keys_to_params({42.5, 42.5, 42.5}, 128);
    EXPECT_EQ(p.p2, 0.0);
    EXPECT_EQ(p.p1, 0.0);
    EXPECT_EQ(p.p0, 42.5);
}

TEST(KeyValues, PureLinearTerm) {
    const auto k = params_to_keys({0, 1, 0}, 128);
    EXPECT_EQ(k.k1, 0.0);
    EXPECT_EQ(k.k2, 64.0);
    EXPECT_EQ(k.k3, 128.0);
    const auto p = keys_to_params({0, 64, 128}, 128);
    EXPECT_NEAR(p.p2, 0.0, 1e-15);
    EXPECT_NEAR(p.p1, 1.0, 1e-15);
    EXPECT_NEAR(p.p0, 0.0, 1e-15);
}

TEST(KeyValues, MatchDirectEvaluation) {
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
        const auto lane = random_lane(rng);
        const auto k = params_to_keys(lane, 128);
        EXPECT_NEAR(k.k1, lane.p2 * 0 * 0 + lane.p1 * 0 + lane.p0, 1e-12);
        EXPECT_NEAR(k.k2, lane.p2 * 64 * 64 + lane.p1 * 64 + lane.p0, 1e-12);
        EXPECT_NEAR(k.k3, lane.p2 * 128 * 128 + lane.p1 * 128 + lane.p0, 1e-12);
    }
}

TEST(KeyValues, RoundTripAtSeveralHeights) {
    Rng rng(2);
    for (double h : {64.0, 128.0, 256.0}) {
        double worst = 0.0;
        for (int i = 0; i < 1000; ++i) {
            const auto lane = random_lane(rng);
            const auto back = keys_to_params(params_to_keys(lane, h), h);
            worst = std::max({worst, std::abs(back.p2 - lane.p2), std::abs(back.p1 - lane.p1), std::abs(back.p0 - lane.p0)});
            const KeyValues k{rng.uniform(0, 256), rng.uniform(0, 256), rng.uniform(0, 256)};
            const auto k2 = params_to_keys(keys_to_params(k, h), h);
            worst = std::max({worst, std::abs(k2.k1 - k.k1), std::abs(k2.k2 - k.k2), std::abs(k2.k3 - k.k3)});
        }
        EXPECT_LE(worst, 1e-9) << "h=" << h;
    }
}

TEST(KeyValues, CorrectedMatrixIsInvertible) {
    for (double h : {1.0, 64.0, 128.0, 256.0, 1000.0}) {
        const auto m = key_transform_matrix(h);
        const auto inv = inverse_key_transform_matrix(h);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double acc = 0.0;
                for (int k = 0; k < 3; ++k) acc += m[i][k] * inv[k][j];
                EXPECT_NEAR(acc, i == j ? 1.0 : 0.0, 1e-12);
            }
    }
}

TEST(KeyValues, TransformIsLinear) {
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
        const auto p = random_lane(rng), q = random_lane(rng);
        const double a = rng.uniform(-3, 3), b = rng.uniform(-3, 3);
        const QuadraticLane mix{a * p.p2 + b * q.p2, a * p.p1 + b * q.p1, a * p.p0 + b * q.p0};
        const auto kp = params_to_keys(p, 128), kq = params_to_keys(q, 128), km = params_to_keys(mix, 128);
        EXPECT_NEAR(km.k1, a * kp.k1 + b * kq.k1, 1e-12);
        EXPECT_NEAR(km.k2, a * kp.k2 + b * kq.k2, 1e-12);
        EXPECT_NEAR(km.k3, a * kp.k3 + b * kq.k3, 1e-12);
    }
}

TEST(KeyValues, WeightsReproduceLaneEvaluation) {
    Rng rng(4);
    for (int i = 0; i < 100; ++i) {
        const auto lane = random_lane(rng);
        const auto k = params_to_keys(lane, 128);
        const double y = rng.uniform(0, 128);
        const auto w = key_weights_at(y, 128);
        EXPECT_NEAR(w[0] * k.k1 + w[1] * k.k2 + w[2] * k.k3, lane.x_at(y), 1e-9);
    }
}

TEST(HorizontalDistance, Examples) {
    const QuadraticLane lane{0.001, 0.2, 30};
    EXPECT_EQ(horizontal_distance({lane.x_at(17), 17}, lane), 0.0);
    EXPECT_EQ(horizontal_distance({10, 0}, {0, 0, 4}), 6.0);
}

TEST(HorizontalDistance, BruteForceAndTranslation) {
    Rng rng(5);
    for (int i = 0; i < 1000; ++i) {
        const auto lane = random_lane(rng);
        const Point2 p{rng.uniform(0, 256), rng.uniform(0, 128)};
        const double direct = std::abs(p.x - (lane.p2 * p.y * p.y + lane.p1 * p.y + lane.p0));
        EXPECT_NEAR(horizontal_distance(p, lane), direct, 1e-12);
        const double t = rng.uniform(-50, 50);
        EXPECT_NEAR(horizontal_distance({p.x + t, p.y}, {lane.p2, lane.p1, lane.p0 + t}), direct, 1e-12);
    }
}

TEST(Lane, ValidationRejectsSteepCurvature) {
    EXPECT_NO_THROW(validate_lane({0.005, 0, 0}));
    EXPECT_THROW(validate_lane({0.02, 0, 0}), ContractError);
    EXPECT_THROW(validate_lane({0, NAN, 0}), ContractError);
}

TEST(Homography, IdentityWarpIsExact) {
    Rng rng(6);
    std::vector<double> v(2 * 5 * 7);
    for (auto& x : v) x = rng.uniform();
    const Tensor image(Shape{2, 5, 7}, v);
    const auto out = ipm_warp(image, Homography(), 5, 7);
    EXPECT_TRUE(std::equal(out.data().begin(), out.data().end(), image.data().begin()));
}

TEST(Homography, TranslationShiftsAndZeroFills) {
    std::vector<double> v(6 * 12);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0 + static_cast<double>(i);
    const Tensor image(Shape{1, 6, 12}, v);
    const auto out = ipm_warp(image, Homography::translation(5, 0), 6, 12);
    for (std::size_t y = 0; y < 6; ++y)
        for (std::size_t x = 0; x < 12; ++x) {
            const double expected = x < 5 ? 0.0 : image.at(y * 12 + x - 5);
            EXPECT_EQ(out.at(y * 12 + x), expected);
        }
}

TEST(Homography, PointRoundTrip) {
    Rng rng(7);
    const std::array<Point2, 4> src{{{100, 80}, {156, 80}, {250, 127}, {6, 127}}};
    const std::array<Point2, 4> dst{{{64, 0}, {192, 0}, {192, 127}, {64, 127}}};
    const auto hom = homography_from_correspondences(src, dst);
    const auto inv = hom.inverse();
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const Point2 p{rng.uniform(0, 256), rng.uniform(60, 128)};
        const auto back = warp_point(warp_point(p, hom), inv);
        worst = std::max({worst, std::abs(back.x - p.x), std::abs(back.y - p.y)});
    }
    EXPECT_LE(worst, 1e-9);
}

TEST(Homography, HorizonRaises) {
    const Homography hom(Matrix3{{{1, 0, 0}, {0, 1, 0}, {0, 1, -10}}});
    EXPECT_THROW(warp_point({3, 10}, hom), HorizonError);
}

TEST(Homography, FromCorrespondencesExamples) {
    const std::array<Point2, 4> square{{{0, 0}, {1, 0}, {1, 1}, {0, 1}}};
    const auto id = homography_from_correspondences(square, square);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) EXPECT_NEAR(id.matrix()[i][j], i == j ? 1.0 : 0.0, 1e-12);
    const std::array<Point2, 4> shifted{{{1, 0}, {2, 0}, {2, 1}, {1, 1}}};
    const auto t = homography_from_correspondences(square, shifted);
    const Matrix3 expected{{{1, 0, 1}, {0, 1, 0}, {0, 0, 1}}};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) EXPECT_NEAR(t.matrix()[i][j], expected[i][j], 1e-12);
}

TEST(Homography, RandomQuadsMapExactly) {
    Rng rng(8);
    int solved = 0;
    for (int trial = 0; trial < 200; ++trial) {
        std::array<Point2, 4> src, dst;
        // Perturbed convex quads keep the system well posed.
        const std::array<Point2, 4> base{{{0, 0}, {100, 0}, {100, 100}, {0, 100}}};
        for (int i = 0; i < 4; ++i) {
            src[i] = {base[i].x + rng.uniform(-20, 20), base[i].y + rng.uniform(-20, 20)};
            dst[i] = {base[i].x * 2 + rng.uniform(-30, 30), base[i].y + rng.uniform(-20, 20)};
        }
        const auto hom = homography_from_correspondences(src, dst);
        for (int i = 0; i < 4; ++i) {
            const auto p = hom.apply(src[i]);
            EXPECT_LE(std::abs(p.x - dst[i].x), 1e-6);
            EXPECT_LE(std::abs(p.y - dst[i].y), 1e-6);
        }
        ++solved;
    }
    EXPECT_EQ(solved, 200);
}

TEST(Homography, DegenerateQuadRejected) {
    const std::array<Point2, 4> collinear{{{0, 0}, {1, 1}, {2, 2}, {0, 5}}};
    const std::array<Point2, 4> square{{{0, 0}, {1, 0}, {1, 1}, {0, 1}}};
    EXPECT_THROW(homography_from_correspondences(collinear, square), SingularSystemError);
    EXPECT_THROW(homography_from_correspondences(square, collinear), SingularSystemError);
}

TEST(Config, ParsesKeyValuesAndIpmBlock) {
    const auto cfg = Config::parse(
        "# comment\n"
        "seed = 12   # trailing\n"
        "widths = 16, 32, 64\n"
        "ipm.src = 100 80 156 80 250 127 6 127\n"
        "ipm.dst = 64 0 192 0 192 127 64 127\n"
        "ipm.out_h = 128\n");
    EXPECT_EQ(cfg.get_int("seed", 0), 12);
    EXPECT_EQ(cfg.get_sizes("widths", {}), (std::vector<std::size_t>{16, 32, 64}));
    const auto ipm = ipm_config_from(cfg);
    EXPECT_EQ(ipm.src[2].x, 250);
    EXPECT_EQ(ipm.dst[3].y, 127);
    const auto hom = ipm.homography();
    const auto p = hom.apply(ipm.src[1]);
    EXPECT_NEAR(p.x, 192, 1e-6);
    EXPECT_THROW(Config::parse("novalue\n"), ConfigError);
    EXPECT_THROW(Config::parse("x = abc\n").get_double("x", 0), ConfigError);
}
