#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lanedet/geometry.hpp"
#include "lanedet/localizer.hpp"
#include "lanedet/scenes.hpp"
#include "lanedet/train.hpp"

namespace lanedet {

inline constexpr double kDefaultMatchThreshold = 8.0;

// Both stages, run image to lanes.
struct Detector {
    ProposalStage proposal;
    LocalizerConfig localizer;
    ParameterSet localizer_params;
    std::uint64_t point_seed = 0;

    PointSet points(const Tensor& image) const;
    LanePrediction detect(const Tensor& image) const;
};

// Mean |x_a(y) - x_b(y)| over y = k*h/8, k = 0..8.
double mean_lane_distance(const QuadraticLane& a, const QuadraticLane& b, double height);

struct LaneMatch {
    std::size_t prediction;
    std::size_t target;
    double distance;
};

struct MatchResult {
    std::vector<LaneMatch> matches;
    std::size_t targets = 0;
    std::size_t predictions = 0;

    std::size_t detected() const { return matches.size(); }
    std::size_t false_positives() const { return predictions - matches.size(); }
};

// Pairs within `tau` taken in ascending distance order, each lane used once.
// Exact distance ties fall back to (prediction, target) index order.
MatchResult match_lanes(const std::vector<QuadraticLane>& predicted, const std::vector<QuadraticLane>& targets,
                        double height, double tau);

struct ImageDiagnostics {
    std::size_t index = 0;
    std::size_t targets = 0;
    std::size_t predictions = 0;
    std::size_t detected = 0;
    std::size_t false_positives = 0;
};

struct SplitReport {
    std::string split;
    std::size_t targets = 0;
    std::size_t detected = 0;
    std::size_t false_positives = 0;
    double tau_match = kDefaultMatchThreshold;
    std::vector<ImageDiagnostics> images;

    double tpr() const;
    double fpr() const;
};

struct EvalReport {
    std::vector<SplitReport> splits;
};

// Scores precomputed predictions against fully labelled samples.
SplitReport score_predictions(const std::string& split, const std::vector<std::vector<QuadraticLane>>& predicted,
                              const std::vector<Sample>& data, double tau);

// Runs the detector on every sample, `threads` images at a time (0 picks
// the hardware concurrency). Results do not depend on the thread count.
SplitReport evaluate(const Detector& detector, const std::vector<Sample>& data, const std::string& split, double tau,
                     unsigned threads = 0);

// Header line then one line per split: split, targets, detected, TPR, FPR,
// tau_match.
std::string format_report(const EvalReport& report);

std::vector<QuadraticLane> lanes_of(const LanePrediction& prediction);

}  // namespace lanedet
