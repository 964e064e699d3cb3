#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "lanedet/binary_io.hpp"
#include "lanedet/errors.hpp"
#include "lanedet/rng.hpp"
#include "lanedet/scenes.hpp"

using namespace lanedet;

namespace {

SceneSpec clean_spec() {
    SceneSpec s;
    s.arrows = s.text_blobs = s.vehicles = 0;
    s.dash_probability = 0.0;
    return s;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("lanedet_" + name)).string();
}

}  // namespace

TEST(Scene, StraightLaneGivesTwoVerticalRuns) {
    auto spec = clean_spec();
    spec.fixed_lanes = {{0, 0, 100}};
    spec.lane_width_min = spec.lane_width_max = 5.0;
    const auto s = generate_scene(spec, 3);
    for (std::size_t y = 0; y < s.height; ++y)
        for (std::size_t x = 0; x < s.width; ++x) {
            const bool expected = x == 98 || x == 103;  // round(97.5), round(102.5)
            EXPECT_EQ(s.edges[y * s.width + x], expected ? 1 : 0) << x << "," << y;
        }
    EXPECT_EQ(s.lanes.size(), 1u);
    EXPECT_EQ(s.weak_count, 1u);
}

TEST(Scene, DeterministicPerSeed) {
    const auto spec = hard_scene_spec();
    EXPECT_EQ(generate_scene(spec, 77), generate_scene(spec, 77));
    EXPECT_NE(generate_scene(spec, 77).image, generate_scene(spec, 78).image);
}

TEST(Scene, ImpossibleGapRaises) {
    auto spec = clean_spec();
    spec.min_lanes = spec.max_lanes = 8;
    EXPECT_THROW(generate_scene(spec, 1), GenerationError);
}

TEST(Scene, EdgesLieOnBandBoundaries) {
    for (const auto& spec : {easy_scene_spec(), hard_scene_spec()}) {
        for (std::uint64_t seed = 0; seed < 500; ++seed) {
            const auto g = generate_scene_detailed(spec, seed);
            const auto& s = g.sample;
            for (std::size_t y = 0; y < s.height; ++y)
                for (std::size_t x = 0; x < s.width; ++x) {
                    if (!s.edges[y * s.width + x]) continue;
                    bool near = false;
                    for (std::size_t i = 0; i < s.lanes.size() && !near; ++i) {
                        const double c = s.lanes[i].x_at(static_cast<double>(y));
                        const double hw = g.styles[i].half_width;
                        near = std::abs(static_cast<double>(x) - (c - hw)) <= 1.0 ||
                               std::abs(static_cast<double>(x) - (c + hw)) <= 1.0;
                    }
                    ASSERT_TRUE(near) << "seed " << seed << " pixel " << x << "," << y;
                }
        }
    }
}

TEST(Scene, LanesAreVisibleAboveBackground) {
    for (const auto& spec : {easy_scene_spec(), hard_scene_spec()}) {
        for (std::uint64_t seed = 0; seed < 200; ++seed) {
            const auto g = generate_scene_detailed(spec, seed);
            const auto& s = g.sample;
            std::vector<bool> band(s.image.size(), false);
            for (std::size_t i = 0; i < s.lanes.size(); ++i)
                for (std::size_t y = 0; y < s.height; ++y) {
                    const double c = s.lanes[i].x_at(static_cast<double>(y));
                    for (long x = std::lround(c - g.styles[i].half_width); x <= std::lround(c + g.styles[i].half_width); ++x)
                        if (x >= 0 && x < static_cast<long>(s.width)) band[y * s.width + static_cast<std::size_t>(x)] = true;
                }
            double bg = 0.0;
            std::size_t n = 0;
            for (std::size_t k = 0; k < band.size(); ++k)
                if (!band[k]) bg += s.image[k], ++n;
            bg /= static_cast<double>(n);
            for (std::size_t i = 0; i < s.lanes.size(); ++i)
                for (std::size_t y = 0; y < s.height; ++y) {
                    if (!g.styles[i].rendered_at(y)) continue;
                    const long x = std::lround(s.lanes[i].x_at(static_cast<double>(y)));
                    ASSERT_GE(s.image[y * s.width + static_cast<std::size_t>(x)], bg + 2 * spec.noise_sigma)
                        << "seed " << seed << " lane " << i << " row " << y;
                }
        }
    }
}

TEST(Scene, ClassBalanceAndLaneInvariants) {
    const auto spec = easy_scene_spec();
    double lo = 1.0, hi = 0.0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        const auto s = generate_scene(spec, Rng::derive_seed(9, seed));
        const double frac = static_cast<double>(s.positive_count()) / static_cast<double>(s.edges.size());
        lo = std::min(lo, frac);
        hi = std::max(hi, frac);
        ASSERT_GE(s.lanes.size(), spec.min_lanes);
        ASSERT_LE(s.lanes.size(), spec.max_lanes);
        for (std::size_t i = 0; i < s.lanes.size(); ++i) {
            ASSERT_LE(std::abs(s.lanes[i].p2), spec.max_curvature);
            if (i) {
                ASSERT_GE(s.lanes[i].x_at(128) - s.lanes[i - 1].x_at(128), spec.min_gap);
            }
        }
    }
    EXPECT_GT(lo, 0.001);
    EXPECT_LT(hi, 0.20);
}

TEST(Scene, MergesShareAnEndpoint) {
    auto spec = hard_scene_spec();
    spec.merge_split_probability = 1.0;
    spec.min_lanes = 2;
    int shared = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto s = generate_scene(spec, seed);
        for (std::size_t i = 0; i < s.lanes.size(); ++i)
            for (std::size_t j = 0; j < i; ++j) {
                if (std::abs(s.lanes[i].x_at(0) - s.lanes[j].x_at(0)) < 1e-9 ||
                    std::abs(s.lanes[i].x_at(128) - s.lanes[j].x_at(128)) < 1e-9)
                    ++shared;
            }
    }
    EXPECT_EQ(shared, 50);
}

TEST(Dataset, RoundTripIsBitExact) {
    auto samples = generate_dataset(hard_scene_spec(), 10, 4);
    samples[3] = samples[3].as_weak();
    const auto path = temp_path("roundtrip.lnds");
    write_dataset(samples, path);
    const auto back = read_dataset(path);
    EXPECT_EQ(back, samples);
    EXPECT_EQ(encode_dataset(back), read_file_bytes(path));
    std::filesystem::remove(path);
}

TEST(Dataset, EmptyRoundTrips) {
    const auto bytes = encode_dataset({});
    EXPECT_EQ(bytes.size(), 12u);
    EXPECT_TRUE(decode_dataset(bytes).empty());
}

TEST(Dataset, BitsetIsMsbFirst) {
    Sample s;
    s.height = 1;
    s.width = 10;
    s.image.assign(10, 0.5f);
    s.edges = {1, 0, 0, 0, 0, 0, 0, 1, 0, 1};
    s.weak_count = 0;
    const auto bytes = encode_dataset({s});
    EXPECT_EQ(bytes[12 + 4 + 40], 0x81);
    EXPECT_EQ(bytes[12 + 4 + 41], 0x40);
}

TEST(Dataset, CorruptInputsRaiseFormatError) {
    const auto good = encode_dataset(generate_dataset(easy_scene_spec(), 2, 5));
    for (std::size_t cut : {std::size_t{2}, std::size_t{9}, std::size_t{100}, good.size() - 3}) {
        const std::vector<std::uint8_t> truncated(good.begin(), good.begin() + static_cast<long>(cut));
        try {
            decode_dataset(truncated);
            FAIL() << "no error at cut " << cut;
        } catch (const FormatError& e) {
            EXPECT_LE(e.offset(), cut);
        }
    }
    auto bad = good;
    bad[0] = 'X';
    EXPECT_THROW(decode_dataset(bad), FormatError);
    bad = good;
    bad[4] = 9;
    EXPECT_THROW(decode_dataset(bad), FormatError);
    EXPECT_THROW(read_dataset("/nonexistent/dir/file.lnds"), IoError);
}
