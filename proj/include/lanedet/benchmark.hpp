#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "lanedet/evaluate.hpp"

namespace lanedet {

struct LatencyStats {
    double median_ms = 0.0;
    double p95_ms = 0.0;
    double fps() const { return median_ms > 0.0 ? 1000.0 / median_ms : 0.0; }
};

LatencyStats latency_stats(std::vector<double> samples_ms);

struct BenchmarkReport {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t iterations = 0;
    std::size_t points = 0;  // stage-two input size
    LatencyStats stage_one;
    LatencyStats stage_two;
    LatencyStats end_to_end;

    // Stage-two FPS over stage-one FPS.
    double stage_ratio() const;
};

// Times both stages on one synthetic scene of the requested size. The first
// `warmup` runs (at least 3) are discarded.
BenchmarkReport fps_benchmark(const Detector& detector, std::size_t height, std::size_t width,
                              std::size_t iterations, std::size_t warmup = 3, std::uint64_t seed = 1);

std::string format_benchmark(const BenchmarkReport& report);

}  // namespace lanedet
