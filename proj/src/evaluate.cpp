#include "lanedet/evaluate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>
#include <tuple>

#include "lanedet/errors.hpp"

namespace lanedet {

PointSet Detector::points(const Tensor& image) const {
    return proposal.points(image, localizer.max_points, point_seed);
}

LanePrediction Detector::detect(const Tensor& image) const {
    NoGradGuard guard;
    return localize(points(image), localizer, localizer_params);
}

double mean_lane_distance(const QuadraticLane& a, const QuadraticLane& b, double height) {
    double total = 0.0;
    for (int k = 0; k <= 8; ++k) {
        const double y = height * k / 8.0;
        total += std::abs(a.x_at(y) - b.x_at(y));
    }
    return total / 9.0;
}

MatchResult match_lanes(const std::vector<QuadraticLane>& predicted, const std::vector<QuadraticLane>& targets,
                        double height, double tau) {
    MatchResult r;
    r.targets = targets.size();
    r.predictions = predicted.size();
    std::vector<LaneMatch> candidates;
    for (std::size_t p = 0; p < predicted.size(); ++p)
        for (std::size_t t = 0; t < targets.size(); ++t) {
            const double d = mean_lane_distance(predicted[p], targets[t], height);
            if (d <= tau) candidates.push_back({p, t, d});
        }
    std::sort(candidates.begin(), candidates.end(), [](const LaneMatch& a, const LaneMatch& b) {
        return std::tie(a.distance, a.prediction, a.target) < std::tie(b.distance, b.prediction, b.target);
    });
    std::vector<bool> used_p(predicted.size(), false), used_t(targets.size(), false);
    for (const auto& c : candidates) {
        if (used_p[c.prediction] || used_t[c.target]) continue;
        used_p[c.prediction] = used_t[c.target] = true;
        r.matches.push_back(c);
    }
    return r;
}

double SplitReport::tpr() const {
    return targets ? static_cast<double>(detected) / static_cast<double>(targets) : 0.0;
}

double SplitReport::fpr() const {
    return targets ? static_cast<double>(false_positives) / static_cast<double>(targets) : 0.0;
}

SplitReport score_predictions(const std::string& split, const std::vector<std::vector<QuadraticLane>>& predicted,
                              const std::vector<Sample>& data, double tau) {
    if (data.empty()) throw ConfigError("evaluation set '" + split + "' is empty");
    if (predicted.size() != data.size()) throw DimensionError("one prediction list per sample is required");
    if (!(tau > 0.0)) throw ConfigError("match threshold must be positive");
    SplitReport report;
    report.split = split;
    report.tau_match = tau;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!data[i].full_labels) throw ContractError("evaluation needs fully labelled samples");
        const auto m = match_lanes(predicted[i], data[i].lanes, static_cast<double>(data[i].height), tau);
        report.images.push_back({i, m.targets, m.predictions, m.detected(), m.false_positives()});
        report.targets += m.targets;
        report.detected += m.detected();
        report.false_positives += m.false_positives();
    }
    return report;
}

std::vector<QuadraticLane> lanes_of(const LanePrediction& prediction) {
    std::vector<QuadraticLane> lanes;
    for (const auto& e : prediction) lanes.push_back(e.lane);
    return lanes;
}

SplitReport evaluate(const Detector& detector, const std::vector<Sample>& data, const std::string& split, double tau,
                     unsigned threads) {
    if (data.empty()) throw ConfigError("evaluation set '" + split + "' is empty");
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = std::min<unsigned>(threads, static_cast<unsigned>(data.size()));
    std::vector<std::vector<QuadraticLane>> predicted(data.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::atomic<bool> failed{false};
    auto worker = [&] {
        try {
            for (std::size_t i = next++; i < data.size() && !failed; i = next++) {
                predicted[i] = lanes_of(detector.detect(data[i].image_tensor()));
            }
        } catch (...) {
            if (!failed.exchange(true)) failure = std::current_exception();
        }
    };
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
    return score_predictions(split, predicted, data, tau);
}

std::string format_report(const EvalReport& report) {
    std::ostringstream os;
    os << "split\ttargets\tdetected\tTPR\tFPR\ttau_match\n";
    char line[256];
    for (const auto& s : report.splits) {
        std::snprintf(line, sizeof line, "%s\t%zu\t%zu\t%.4f\t%.4f\t%g\n", s.split.c_str(), s.targets, s.detected,
                      s.tpr(), s.fpr(), s.tau_match);
        os << line;
    }
    return os.str();
}

}  // namespace lanedet
