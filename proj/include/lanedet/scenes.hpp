#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lanedet/config.hpp"
#include "lanedet/geometry.hpp"
#include "lanedet/tensor.hpp"

namespace lanedet {

// Parameters of the synthetic top-down road scene generator. Distractor
// counts are upper bounds; each scene draws uniformly in [0, count].
struct SceneSpec {
    std::size_t height = 128;
    std::size_t width = 256;
    std::size_t min_lanes = 1;
    std::size_t max_lanes = 4;
    double max_curvature = 0.0015;   // |p2|, px / px^2
    double max_slope = 0.25;         // |p1| of the shared road direction
    double lane_jitter_slope = 0.04; // per-lane deviation from the shared direction
    double lane_width_min = 3.0;
    double lane_width_max = 6.0;
    double min_gap = 36.0;           // px between lane centres
    double margin = 6.0;             // lanes stay inside [margin, w - 1 - margin]
    double dash_probability = 0.3;
    bool all_dashed = false;
    double dash_period_min = 20.0;
    double dash_period_max = 40.0;
    double dash_duty = 0.5;
    double merge_split_probability = 0.0;
    std::size_t arrows = 1;
    std::size_t text_blobs = 1;
    std::size_t vehicles = 0;
    double noise_sigma = 0.03;
    double background_min = 0.15;
    double background_max = 0.35;
    double lane_intensity_min = 0.75;
    double lane_intensity_max = 0.95;
    // When non-empty these lanes are rendered as given instead of sampled.
    std::vector<QuadraticLane> fixed_lanes;
};

SceneSpec easy_scene_spec();
// More distractors, more noise, stronger curvature, every lane dashed.
SceneSpec hard_scene_spec();
// Overrides fields of `base` from `scene.*` keys.
SceneSpec scene_spec_from(const Config& config, SceneSpec base = easy_scene_spec());

// One labelled scene. Images are stored at f32 precision, which is what the
// dataset file holds. `lanes` is sorted left to right by bottom intercept and
// is empty for weakly labelled samples.
struct Sample {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> image;          // row-major, [0, 1]
    std::vector<std::uint8_t> edges;   // row-major, 0 / 1
    std::vector<QuadraticLane> lanes;
    std::size_t weak_count = 0;
    bool full_labels = true;

    Tensor image_tensor() const;       // [1, h, w]
    Tensor edge_tensor() const;        // [1, h, w]
    std::size_t positive_count() const;
    // Copy that keeps only the lane count.
    Sample as_weak() const;

    bool operator==(const Sample&) const = default;
};

// Generator-side rendering details kept for validation; not persisted.
struct LaneStyle {
    double half_width = 0.0;
    bool dashed = false;
    double dash_period = 0.0;
    double dash_phase = 0.0;
    double dash_duty = 1.0;

    bool rendered_at(std::size_t row) const;
};

struct GeneratedScene {
    Sample sample;
    std::vector<LaneStyle> styles;   // parallel to sample.lanes
};

// Pure function of (spec, seed). Throws GenerationError when lane placement
// fails 100 rejection attempts.
GeneratedScene generate_scene_detailed(const SceneSpec& spec, std::uint64_t seed);
Sample generate_scene(const SceneSpec& spec, std::uint64_t seed);

// Sample i uses seed derive_seed(seed, first_index + i).
std::vector<Sample> generate_dataset(const SceneSpec& spec, std::size_t count, std::uint64_t seed,
                                     std::size_t first_index = 0);

// Left-to-right order by bottom intercept k3, ties by top intercept k1.
void sort_lanes_left_to_right(std::vector<QuadraticLane>& lanes, double height);

// "LNDS" | version u32 | count u32 | samples (see README for the layout).
inline constexpr std::uint32_t kDatasetVersion = 1;

std::vector<std::uint8_t> encode_dataset(const std::vector<Sample>& samples);
std::vector<Sample> decode_dataset(const std::vector<std::uint8_t>& bytes);
void write_dataset(const std::vector<Sample>& samples, const std::string& path);
std::vector<Sample> read_dataset(const std::string& path);

}  // namespace lanedet
