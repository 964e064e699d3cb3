#include "lanedet/localizer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lanedet/errors.hpp"
#include "lanedet/ops.hpp"

namespace lanedet {

namespace {

std::string layer_name(std::size_t stage, std::size_t layer) {
    return "loc.s" + std::to_string(stage) + ".fc" + std::to_string(layer);
}

ops::LstmParams lstm_params(const ParameterSet& p) {
    return {p.get("loc.lstm.input_weight"), p.get("loc.lstm.hidden_weight"), p.get("loc.lstm.bias")};
}

double clamp_probability(double q) { return std::clamp(q, kProbabilityClamp, 1.0 - kProbabilityClamp); }

}  // namespace

void LocalizerConfig::validate() const {
    if (stage_widths.size() < 2) throw ConfigError("localizer needs at least two encoder stages");
    for (auto w : stage_widths)
        if (w == 0) throw ConfigError("localizer stage widths must be positive");
    if (hidden == 0) throw ConfigError("localizer hidden width must be positive");
    if (max_lanes == 0) throw ConfigError("localizer max_lanes must be >= 1");
    if (!(score_threshold > 0.0 && score_threshold < 1.0)) throw ConfigError("score threshold must lie in (0, 1)");
    if (alpha < 0.0) throw ConfigError("loss mix weight alpha must be >= 0");
    if (height == 0 || width == 0) throw ConfigError("localizer image size must be positive");
    if (max_points == 0) throw ConfigError("localizer max_points must be >= 1");
}

LocalizerConfig localizer_config_from(const Config& c, LocalizerConfig b) {
    b.height = static_cast<std::size_t>(c.get_int("localizer.height", static_cast<std::int64_t>(b.height)));
    b.width = static_cast<std::size_t>(c.get_int("localizer.width", static_cast<std::int64_t>(b.width)));
    b.stage_widths = c.get_sizes("localizer.stage_widths", b.stage_widths);
    b.hidden = static_cast<std::size_t>(c.get_int("localizer.hidden", static_cast<std::int64_t>(b.hidden)));
    b.max_lanes = static_cast<std::size_t>(c.get_int("localizer.max_lanes", static_cast<std::int64_t>(b.max_lanes)));
    b.score_threshold = c.get_double("localizer.score_threshold", b.score_threshold);
    b.alpha = c.get_double("localizer.alpha", b.alpha);
    b.max_points = static_cast<std::size_t>(c.get_int("localizer.max_points", static_cast<std::int64_t>(b.max_points)));
    b.validate();
    return b;
}

ParameterSet init_localizer_params(const LocalizerConfig& cfg, Rng& rng) {
    cfg.validate();
    ParameterSet p;
    std::size_t in = 2;
    for (std::size_t s = 0; s < cfg.stage_widths.size(); ++s) {
        const std::size_t w = cfg.stage_widths[s];
        p.add(layer_name(s, 0) + ".weight", glorot_uniform({w, in, 1}, in, w, rng));
        p.add(layer_name(s, 0) + ".bias", Tensor(Shape{w}, 0.0));
        p.add(layer_name(s, 1) + ".weight", glorot_uniform({w, w, 1}, w, w, rng));
        p.add(layer_name(s, 1) + ".bias", Tensor(Shape{w}, 0.0));
        in = 2 * w;
    }
    const std::size_t rep = cfg.representation_width(), h = cfg.hidden;
    p.add("loc.lstm.input_weight", glorot_uniform({4 * h, rep}, rep, 4 * h, rng));
    p.add("loc.lstm.hidden_weight", glorot_uniform({4 * h, h}, h, 4 * h, rng));
    Tensor bias(Shape{4 * h}, 0.0);
    auto bv = bias.mutable_data();
    std::fill(bv.begin() + static_cast<std::ptrdiff_t>(h), bv.begin() + static_cast<std::ptrdiff_t>(2 * h), 1.0);
    p.add("loc.lstm.bias", std::move(bias));
    p.add("loc.head.weight", glorot_uniform({4, h}, h, 4, rng));
    p.add("loc.head.bias", Tensor(Shape{4}, 0.0));
    return p;
}

PointBatch make_point_batch(const std::vector<const PointSet*>& sets, const LocalizerConfig& cfg) {
    if (sets.empty()) throw EmptyInputError("point batch has no samples");
    std::size_t longest = 0;
    for (const auto* s : sets) {
        if (s->empty()) throw EmptyInputError("point set is empty");
        longest = std::max(longest, s->size());
    }
    const double w = static_cast<double>(cfg.width), h = static_cast<double>(cfg.height);
    std::vector<double> v(sets.size() * 2 * longest, 0.0);
    PointBatch batch;
    for (std::size_t n = 0; n < sets.size(); ++n) {
        double* xs = v.data() + n * 2 * longest;
        double* ys = xs + longest;
        for (std::size_t i = 0; i < sets[n]->size(); ++i) {
            xs[i] = sets[n]->points[i].x / w;
            ys[i] = sets[n]->points[i].y / h;
        }
        batch.counts.push_back(sets[n]->size());
    }
    batch.coords = Tensor(Shape{sets.size(), 2, longest}, std::move(v));
    return batch;
}

PointBatch make_point_batch(const PointSet& set, const LocalizerConfig& cfg) {
    return make_point_batch(std::vector<const PointSet*>{&set}, cfg);
}

Tensor encode_points(const PointBatch& points, const LocalizerConfig& cfg, const ParameterSet& p) {
    Tensor x = points.coords;
    for (std::size_t s = 0; s < cfg.stage_widths.size(); ++s) {
        x = ops::relu(ops::conv1d(x, p.get(layer_name(s, 0) + ".weight"), p.get(layer_name(s, 0) + ".bias")));
        x = ops::relu(ops::conv1d(x, p.get(layer_name(s, 1) + ".weight"), p.get(layer_name(s, 1) + ".bias")));
        x = ops::concat_broadcast(x, ops::max_over_points(x, points.counts));
    }
    return ops::avg_over_points(x, points.counts);
}

namespace {

struct StepOutput {
    ops::LstmState state;
    Tensor keys;    // [N, 3]
    Tensor score;   // [N, 1]
};

StepOutput decoder_step(const Tensor& rep, const ops::LstmState& state, const ParameterSet& p) {
    StepOutput out;
    out.state = ops::lstm_cell(rep, state, lstm_params(p));
    const Tensor head = ops::linear(out.state.hidden, p.get("loc.head.weight"), p.get("loc.head.bias"));
    out.keys = ops::sigmoid(ops::slice_cols(head, 0, 3));
    out.score = ops::sigmoid(ops::slice_cols(head, 3, 4));
    return out;
}

ops::LstmState zero_state(std::size_t n, std::size_t hidden) {
    return {Tensor(Shape{n, hidden}, 0.0), Tensor(Shape{n, hidden}, 0.0)};
}

void check_representation(const Tensor& rep, const LocalizerConfig& cfg) {
    if (rep.rank() != 2 || rep.dim(1) != cfg.representation_width()) {
        throw DimensionError("decoder input " + shape_to_string(rep.shape()) + " does not match representation width " +
                             std::to_string(cfg.representation_width()));
    }
}

LaneEstimate make_estimate(const double* keys, double score, const LocalizerConfig& cfg) {
    const double w = static_cast<double>(cfg.width);
    LaneEstimate e;
    e.keys = {keys[0] * w, keys[1] * w, keys[2] * w};
    e.lane = keys_to_params(e.keys, static_cast<double>(cfg.height));
    e.score = score;
    return e;
}

}  // namespace

DecoderOutput decode_lanes(const Tensor& rep, const LocalizerConfig& cfg, const ParameterSet& p) {
    check_representation(rep, cfg);
    auto state = zero_state(rep.dim(0), cfg.hidden);
    std::vector<Tensor> keys, scores;
    for (std::size_t t = 0; t < cfg.max_lanes; ++t) {
        auto step = decoder_step(rep, state, p);
        state = step.state;
        keys.push_back(step.keys);
        scores.push_back(step.score);
    }
    return {ops::stack_steps(keys), ops::stack_steps(scores)};
}

std::vector<LanePrediction> to_predictions(const DecoderOutput& out, const LocalizerConfig& cfg, DecodeMode mode) {
    const std::size_t n = out.batch(), steps = out.steps();
    const auto k = out.keys.data();
    const auto s = out.scores.data();
    std::vector<LanePrediction> result(n);
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t t = 0; t < steps; ++t) {
            const double score = s[b * steps + t];
            if (mode == DecodeMode::infer && score < cfg.score_threshold) break;
            result[b].push_back(make_estimate(k.data() + (b * steps + t) * 3, score, cfg));
        }
    }
    return result;
}

std::vector<LanePrediction> decode_lanes(const Tensor& rep, const LocalizerConfig& cfg, const ParameterSet& p,
                                         DecodeMode mode) {
    if (mode == DecodeMode::train) return to_predictions(decode_lanes(rep, cfg, p), cfg, mode);
    check_representation(rep, cfg);
    NoGradGuard no_grad;
    const std::size_t n = rep.dim(0);
    std::vector<LanePrediction> result(n);
    std::vector<bool> open(n, true);
    auto state = zero_state(n, cfg.hidden);
    for (std::size_t t = 0; t < cfg.max_lanes; ++t) {
        auto step = decoder_step(rep, state, p);
        state = step.state;
        bool any_open = false;
        for (std::size_t b = 0; b < n; ++b) {
            if (!open[b]) continue;
            const double score = step.score.at(b);
            if (score < cfg.score_threshold) {
                open[b] = false;
                continue;
            }
            result[b].push_back(make_estimate(step.keys.data().data() + b * 3, score, cfg));
            any_open = true;
        }
        if (!any_open) break;
    }
    return result;
}

LanePrediction localize(const PointSet& points, const LocalizerConfig& cfg, const ParameterSet& p) {
    if (points.empty()) return {};
    NoGradGuard no_grad;
    return decode_lanes(encode_points(make_point_batch(points, cfg), cfg, p), cfg, p, DecodeMode::infer).front();
}

Tensor key_term(const DecoderOutput& pred, const std::vector<std::vector<KeyValues>>& gt, const LocalizerConfig& cfg) {
    const std::size_t n = pred.batch(), steps = pred.steps();
    if (gt.size() != n) {
        throw DimensionError("key loss: " + std::to_string(gt.size()) + " label lists for batch of " + std::to_string(n));
    }
    const double w = static_cast<double>(cfg.width);
    std::vector<double> target(n * steps * 3, 0.0);
    std::vector<double> weight(n, 0.0);
    for (std::size_t b = 0; b < n; ++b) {
        if (gt[b].size() > steps) {
            throw CapacityError("sample has " + std::to_string(gt[b].size()) + " lanes but the decoder emits at most " +
                                std::to_string(steps));
        }
        if (gt[b].empty()) continue;
        weight[b] = 1.0 / (3.0 * static_cast<double>(gt[b].size()) * static_cast<double>(n));
        for (std::size_t t = 0; t < gt[b].size(); ++t) {
            double* row = target.data() + (b * steps + t) * 3;
            row[0] = gt[b][t].k1 / w;
            row[1] = gt[b][t].k2 / w;
            row[2] = gt[b][t].k3 / w;
        }
    }
    std::vector<std::size_t> used(n);
    for (std::size_t b = 0; b < n; ++b) used[b] = gt[b].size();
    const auto k = pred.keys.data();
    double loss = 0.0;
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t t = 0; t < used[b]; ++t)
            for (std::size_t j = 0; j < 3; ++j) {
                const std::size_t i = (b * steps + t) * 3 + j;
                const double d = k[i] - target[i];
                loss += weight[b] * d * d;
            }
    const Tensor keys = pred.keys;
    return make_result(Shape{1}, {loss}, {keys},
                       [keys, target = std::move(target), weight = std::move(weight), used = std::move(used),
                        steps](const Tensor& out) {
                           const double g = out.grad()[0];
                           const auto k = keys.data();
                           auto dk = keys.grad_buffer();
                           for (std::size_t b = 0; b < used.size(); ++b)
                               for (std::size_t t = 0; t < used[b]; ++t)
                                   for (std::size_t j = 0; j < 3; ++j) {
                                       const std::size_t i = (b * steps + t) * 3 + j;
                                       dk[i] += g * 2.0 * weight[b] * (k[i] - target[i]);
                                   }
                       });
}

Tensor confidence_loss(const DecoderOutput& pred, const std::vector<std::size_t>& counts) {
    const std::size_t n = pred.batch(), steps = pred.steps();
    if (counts.size() != n) throw DimensionError("confidence loss: counts do not match batch");
    for (auto c : counts)
        if (c > steps) {
            throw CapacityError("sample has " + std::to_string(c) + " lanes but the decoder emits at most " +
                                std::to_string(steps));
        }
    const auto s = pred.scores.data();
    const double scale = 1.0 / (static_cast<double>(steps) * static_cast<double>(n));
    auto* probe = active_branch_probe();
    double loss = 0.0;
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t t = 0; t < steps; ++t) {
            const double q = s[b * steps + t];
            if (probe) probe->note(q < kProbabilityClamp || q > 1.0 - kProbabilityClamp);
            const double c = clamp_probability(q);
            loss -= scale * (t < counts[b] ? std::log(c) : std::log(1.0 - c));
        }
    const Tensor scores = pred.scores;
    return make_result(Shape{1}, {loss}, {scores}, [scores, counts, steps, scale](const Tensor& out) {
        const double g = out.grad()[0];
        const auto s = scores.data();
        auto ds = scores.grad_buffer();
        for (std::size_t b = 0; b < counts.size(); ++b)
            for (std::size_t t = 0; t < steps; ++t) {
                const double q = s[b * steps + t];
                if (q < kProbabilityClamp || q > 1.0 - kProbabilityClamp) continue;
                ds[b * steps + t] += g * scale * (t < counts[b] ? -1.0 / q : 1.0 / (1.0 - q));
            }
    });
}

Tensor key_value_loss(const DecoderOutput& pred, const std::vector<std::vector<KeyValues>>& gt,
                      const LocalizerConfig& cfg) {
    std::vector<std::size_t> counts;
    for (const auto& lanes : gt) counts.push_back(lanes.size());
    const Tensor keys = key_term(pred, gt, cfg);
    return ops::add(keys, confidence_loss(pred, counts));
}

std::vector<std::vector<bool>> score_lane_mask(const DecoderOutput& pred, double tau) {
    const std::size_t n = pred.batch(), steps = pred.steps();
    const auto s = pred.scores.data();
    std::vector<std::vector<bool>> mask(n, std::vector<bool>(steps, false));
    for (std::size_t b = 0; b < n; ++b) {
        bool any = false;
        for (std::size_t t = 0; t < steps; ++t) {
            mask[b][t] = s[b * steps + t] >= tau;
            any = any || mask[b][t];
        }
        if (!any) std::fill(mask[b].begin(), mask[b].end(), true);
    }
    return mask;
}

Tensor min_distance_loss(const DecoderOutput& pred, const std::vector<std::vector<bool>>& mask,
                         const PointBatch& points, const std::vector<bool>& active) {
    const std::size_t n = pred.batch(), steps = pred.steps();
    if (points.batch() != n || mask.size() != n) throw DimensionError("min-distance loss: batch sizes differ");
    if (!active.empty() && active.size() != n) throw DimensionError("min-distance loss: active flags differ from batch");
    const std::size_t stride = points.coords.dim(2);
    const auto k = pred.keys.data();
    const auto c = points.coords.data();
    auto* probe = active_branch_probe();

    // Per point: chosen lane and the signed residual's sign.
    struct Hit {
        std::size_t lane;
        double sign;
        std::array<double, 3> weights;
    };
    std::vector<std::vector<Hit>> hits(n);
    double loss = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
        if (!active.empty() && !active[b]) continue;
        if (mask[b].size() != steps) throw DimensionError("min-distance loss: lane mask length differs from steps");
        if (points.counts[b] == 0) throw ContractError("min-distance loss needs at least one point per sample");
        if (std::none_of(mask[b].begin(), mask[b].end(), [](bool v) { return v; }))
            throw ContractError("min-distance loss needs at least one selected lane per sample");
        const double share = 1.0 / (static_cast<double>(points.counts[b]) * static_cast<double>(n));
        const double* xs = c.data() + b * 2 * stride;
        const double* ys = xs + stride;
        double sample = 0.0;
        for (std::size_t i = 0; i < points.counts[b]; ++i) {
            const auto wts = key_weights_at(ys[i], 1.0);
            std::size_t best = steps;
            double best_d = 0.0, best_r = 0.0;
            for (std::size_t t = 0; t < steps; ++t) {
                if (!mask[b][t]) continue;
                const double* kt = k.data() + (b * steps + t) * 3;
                const double r = wts[0] * kt[0] + wts[1] * kt[1] + wts[2] * kt[2] - xs[i];
                if (best == steps || std::abs(r) < best_d) {
                    best = t;
                    best_d = std::abs(r);
                    best_r = r;
                }
            }
            if (probe) probe->note(best * 2 + (best_r > 0.0));
            sample += best_d;
            hits[b].push_back({best, best_r > 0.0 ? 1.0 : (best_r < 0.0 ? -1.0 : 0.0), wts});
        }
        loss += sample * share;
    }
    const Tensor keys = pred.keys;
    std::vector<std::size_t> counts = points.counts;
    return make_result(Shape{1}, {loss}, {keys}, [keys, hits = std::move(hits), counts, steps, n](const Tensor& out) {
        const double g = out.grad()[0];
        auto dk = keys.grad_buffer();
        for (std::size_t b = 0; b < n; ++b) {
            const double share = g / (static_cast<double>(counts[b]) * static_cast<double>(n));
            for (const auto& h : hits[b]) {
                double* d = dk.data() + (b * steps + h.lane) * 3;
                for (std::size_t j = 0; j < 3; ++j) d[j] += share * h.sign * h.weights[j];
            }
        }
    });
}

Tensor combined_loss(const DecoderOutput& pred, const std::vector<std::vector<KeyValues>>& gt,
                     const PointBatch& points, double alpha, const LocalizerConfig& cfg) {
    if (alpha < 0.0) throw ConfigError("loss mix weight alpha must be >= 0");
    const Tensor supervised = key_value_loss(pred, gt, cfg);
    if (alpha == 0.0) return supervised;
    return ops::add(supervised, ops::scale(min_distance_loss(pred, score_lane_mask(pred, cfg.score_threshold), points), alpha));
}

}  // namespace lanedet
