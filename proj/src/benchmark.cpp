#include "lanedet/benchmark.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "lanedet/errors.hpp"
#include "lanedet/scenes.hpp"

namespace lanedet {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

}  // namespace

LatencyStats latency_stats(std::vector<double> samples) {
    if (samples.empty()) throw ContractError("latency statistics need at least one sample");
    std::sort(samples.begin(), samples.end());
    const std::size_t n = samples.size();
    LatencyStats s;
    s.median_ms = n % 2 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
    s.p95_ms = samples[std::clamp<std::size_t>(rank, 1, n) - 1];
    return s;
}

double BenchmarkReport::stage_ratio() const {
    const double one = stage_one.fps();
    return one > 0.0 ? stage_two.fps() / one : 0.0;
}

BenchmarkReport fps_benchmark(const Detector& detector, std::size_t height, std::size_t width,
                              std::size_t iterations, std::size_t warmup, std::uint64_t seed) {
    if (iterations == 0) throw ConfigError("benchmark needs at least one timed iteration");
    warmup = std::max<std::size_t>(warmup, 3);
    Detector sized = detector;
    sized.proposal.config.height = height;
    sized.proposal.config.width = width;
    sized.localizer.height = height;
    sized.localizer.width = width;

    SceneSpec spec = easy_scene_spec();
    spec.height = height;
    spec.width = width;
    const double scale = static_cast<double>(width) / 256.0;
    spec.min_gap *= scale;
    spec.margin *= scale;
    spec.max_lanes = std::clamp<std::size_t>(static_cast<std::size_t>(4 * scale), 1, spec.max_lanes);
    spec.min_lanes = std::min(spec.min_lanes, spec.max_lanes);
    const Tensor image = generate_scene(spec, seed).image_tensor();

    BenchmarkReport r;
    r.height = height;
    r.width = width;
    r.iterations = iterations;
    std::vector<double> t1, t2, t12;
    NoGradGuard guard;
    for (std::size_t i = 0; i < warmup + iterations; ++i) {
        auto start = Clock::now();
        const PointSet pts = sized.points(image);
        const double a = elapsed_ms(start);
        start = Clock::now();
        const auto lanes = localize(pts, sized.localizer, sized.localizer_params);
        const double b = elapsed_ms(start);
        start = Clock::now();
        const auto full = sized.detect(image);
        const double c = elapsed_ms(start);
        if (i < warmup) continue;
        r.points = pts.size();
        t1.push_back(a);
        t2.push_back(b);
        t12.push_back(c);
        (void)lanes;
        (void)full;
    }
    r.stage_one = latency_stats(t1);
    r.stage_two = latency_stats(t2);
    r.end_to_end = latency_stats(t12);
    return r;
}

std::string format_benchmark(const BenchmarkReport& r) {
    char buf[1024];
    std::snprintf(buf, sizeof buf,
                  "size\t%zux%zu\titerations\t%zu\tpoints\t%zu\n"
                  "stage\tmedian_ms\tp95_ms\tfps\n"
                  "proposal\t%.3f\t%.3f\t%.1f\n"
                  "localizer\t%.3f\t%.3f\t%.1f\n"
                  "end_to_end\t%.3f\t%.3f\t%.1f\n"
                  "stage_two_over_stage_one\t%.2f\n",
                  r.height, r.width, r.iterations, r.points, r.stage_one.median_ms, r.stage_one.p95_ms,
                  r.stage_one.fps(), r.stage_two.median_ms, r.stage_two.p95_ms, r.stage_two.fps(),
                  r.end_to_end.median_ms, r.end_to_end.p95_ms, r.end_to_end.fps(), r.stage_ratio());
    return buf;
}

}  // namespace lanedet
