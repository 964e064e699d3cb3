#include "lanedet/proposal.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "lanedet/errors.hpp"
#include "lanedet/ops.hpp"

namespace lanedet {

namespace {

std::string block_name(std::size_t b, std::size_t k, const char* part) {
    return "enc" + std::to_string(b) + "." + part + std::to_string(k);
}

}  // namespace

void ProposalNetConfig::validate() const {
    if (widths.empty()) throw ConfigError("proposal net needs at least one block");
    if (upsample != 2) throw ConfigError("proposal net upsample factor must be 2");
    if (in_channels == 0 || head_width == 0) throw ConfigError("proposal net channel counts must be positive");
    for (auto w : widths)
        if (w == 0) throw ConfigError("proposal net widths must be positive");
    const std::size_t factor = std::size_t{1} << widths.size();
    if (height % factor != 0 || width % factor != 0) {
        throw ConfigError("proposal input " + std::to_string(height) + "x" + std::to_string(width) +
                          " is not divisible by 2^" + std::to_string(widths.size()));
    }
}

ProposalNetConfig proposal_config_from(const Config& c, ProposalNetConfig base) {
    base.height = static_cast<std::size_t>(c.get_int("proposal.height", static_cast<std::int64_t>(base.height)));
    base.width = static_cast<std::size_t>(c.get_int("proposal.width", static_cast<std::int64_t>(base.width)));
    base.widths = c.get_sizes("proposal.widths", base.widths);
    base.head_width = static_cast<std::size_t>(c.get_int("proposal.head_width", static_cast<std::int64_t>(base.head_width)));
    base.validate();
    return base;
}

ParameterSet init_proposal_params(const ProposalNetConfig& cfg, Rng& rng) {
    cfg.validate();
    ParameterSet p;
    std::size_t cin = cfg.in_channels;
    for (std::size_t b = 0; b < cfg.blocks(); ++b) {
        const std::size_t cout = cfg.widths[b];
        for (std::size_t k = 0; k < 3; ++k) {
            const std::size_t c = k == 0 ? cin : cout;
            p.add(block_name(b, k, "dw"), glorot_uniform({c, 1, 3, 3}, 9, 9, rng));
            p.add(block_name(b, k, "pw") + ".weight", glorot_uniform({cout, c, 1, 1}, c, cout, rng));
            p.add(block_name(b, k, "pw") + ".bias", Tensor(Shape{cout}, 0.0));
        }
        cin = cout;
    }
    const std::size_t r2 = cfg.upsample * cfg.upsample;
    for (std::size_t s = 0; s < cfg.blocks(); ++s) {
        // Stage s restores the resolution of encoder level B-1-s.
        const std::size_t level = cfg.blocks() - 1 - s;
        const std::size_t out = level == 0 ? cfg.head_width : cfg.widths[level - 1];
        const std::string name = "dec" + std::to_string(s);
        p.add(name + ".weight", glorot_uniform({r2 * out, cin, 1, 1}, cin, r2 * out, rng));
        p.add(name + ".bias", Tensor(Shape{r2 * out}, 0.0));
        cin = out;
    }
    p.add("skip.weight", glorot_uniform({cfg.head_width, cfg.in_channels, 1, 1}, cfg.in_channels, cfg.head_width, rng));
    p.add("skip.bias", Tensor(Shape{cfg.head_width}, 0.0));
    p.add("head.weight", glorot_uniform({1, cfg.head_width, 1, 1}, cfg.head_width, 1, rng));
    p.add("head.bias", Tensor(Shape{1}, 0.0));
    return p;
}

Tensor proposal_forward(const Tensor& image, const ProposalNetConfig& cfg, const ParameterSet& p) {
    if (image.rank() != 4 || image.dim(1) != cfg.in_channels || image.dim(2) != cfg.height || image.dim(3) != cfg.width) {
        throw DimensionError("proposal input " + shape_to_string(image.shape()) + " does not match configured [N," +
                             std::to_string(cfg.in_channels) + "," + std::to_string(cfg.height) + "," +
                             std::to_string(cfg.width) + "]");
    }
    std::vector<Tensor> skips;
    Tensor x = image;
    const std::size_t dilations[3] = {1, 2, 4};
    for (std::size_t b = 0; b < cfg.blocks(); ++b) {
        for (std::size_t k = 0; k < 3; ++k) {
            const std::size_t channels = x.dim(1);
            ops::Conv2dOptions opt;
            opt.dilation = dilations[k];
            opt.padding = dilations[k];
            opt.groups = channels;
            opt.stride = k == 0 ? 2 : 1;
            x = ops::conv2d(x, p.get(block_name(b, k, "dw")), opt);
            x = ops::relu(ops::conv2d(x, p.get(block_name(b, k, "pw") + ".weight"),
                                      p.get(block_name(b, k, "pw") + ".bias"), {}));
        }
        skips.push_back(x);
    }
    for (std::size_t s = 0; s < cfg.blocks(); ++s) {
        const std::size_t level = cfg.blocks() - 1 - s;
        const std::string name = "dec" + std::to_string(s);
        x = ops::pixel_shuffle(ops::conv2d(x, p.get(name + ".weight"), p.get(name + ".bias"), {}), cfg.upsample);
        const Tensor skip = level == 0 ? ops::conv2d(image, p.get("skip.weight"), p.get("skip.bias"), {})
                                       : skips[level - 1];
        x = ops::relu(ops::add(x, skip));
    }
    return ops::sigmoid(ops::conv2d(x, p.get("head.weight"), p.get("head.bias"), {}));
}

double balance_beta(const Tensor& target) {
    double positives = 0.0;
    for (double v : target.data()) {
        if (v != 0.0 && v != 1.0) throw ContractError("edge targets must be 0 or 1");
        positives += v;
    }
    const double negatives = static_cast<double>(target.size()) - positives;
    if (positives == 0.0 || negatives == 0.0) {
        throw DegenerateBalanceError("balanced loss needs both classes in the batch (" + std::to_string(positives) +
                                     " positives of " + std::to_string(target.size()) + " pixels)");
    }
    return positives / negatives;
}

Tensor weighted_bce_loss(const Tensor& pred, const Tensor& target, double beta) {
    if (pred.shape() != target.shape()) {
        throw DimensionError("bce: prediction " + shape_to_string(pred.shape()) + " vs target " +
                             shape_to_string(target.shape()));
    }
    const auto p = pred.data();
    const auto y = target.data();
    // Neumaier-compensated sum; maps have tens of thousands of terms.
    double loss = 0.0, carry = 0.0;
    auto* probe = active_branch_probe();
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (probe) probe->note(p[i] < kProbabilityClamp || p[i] > 1.0 - kProbabilityClamp);
        const double q = std::clamp(p[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
        const double term = -(y[i] * std::log(q) + beta * (1.0 - y[i]) * std::log(1.0 - q));
        const double t = loss + term;
        carry += std::abs(loss) >= std::abs(term) ? (loss - t) + term : (term - t) + loss;
        loss = t;
    }
    loss += carry;
    return make_result(Shape{1}, {loss}, {pred}, [pred, target, beta](const Tensor& out) {
        const double g = out.grad()[0];
        const auto p = pred.data();
        const auto y = target.data();
        auto dp = pred.grad_buffer();
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (p[i] < kProbabilityClamp || p[i] > 1.0 - kProbabilityClamp) continue;
            dp[i] += g * (-y[i] / p[i] + beta * (1.0 - y[i]) / (1.0 - p[i]));
        }
    });
}

Tensor balanced_bce_loss(const Tensor& pred, const Tensor& target) {
    return weighted_bce_loss(pred, target, balance_beta(target));
}

namespace {

PointSet subsample(std::vector<Point2> candidates, std::size_t max_points, std::uint64_t seed) {
    PointSet out;
    if (candidates.size() <= max_points) {
        out.points = std::move(candidates);
        return out;
    }
    std::vector<std::size_t> idx(candidates.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    for (std::size_t i = 0; i < max_points; ++i) {
        const auto j = static_cast<std::size_t>(
            rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(idx.size()) - 1));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(max_points);
    std::sort(idx.begin(), idx.end());
    out.points.reserve(max_points);
    for (auto i : idx) out.points.push_back(candidates[i]);
    return out;
}

}  // namespace

PointSet extract_points(const Tensor& map, double threshold, std::size_t max_points, std::uint64_t seed) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw ContractError("extract_points threshold must lie in (0, 1)");
    std::size_t h = 0, w = 0;
    if (map.rank() == 2) {
        h = map.dim(0);
        w = map.dim(1);
    } else if (map.rank() == 3 && map.dim(0) == 1) {
        h = map.dim(1);
        w = map.dim(2);
    } else if (map.rank() == 4 && map.dim(0) == 1 && map.dim(1) == 1) {
        h = map.dim(2);
        w = map.dim(3);
    } else {
        throw DimensionError("extract_points expects a single map, got " + shape_to_string(map.shape()));
    }
    const auto v = map.data();
    std::vector<Point2> candidates;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            if (v[y * w + x] >= threshold) candidates.push_back({static_cast<double>(x), static_cast<double>(y)});
    return subsample(std::move(candidates), max_points, seed);
}

PointSet edge_points(const std::vector<std::uint8_t>& edges, std::size_t height, std::size_t width,
                     std::size_t max_points, std::uint64_t seed) {
    if (edges.size() != height * width) throw DimensionError("edge raster does not match its size");
    std::vector<Point2> candidates;
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x)
            if (edges[y * width + x]) candidates.push_back({static_cast<double>(x), static_cast<double>(y)});
    return subsample(std::move(candidates), max_points, seed);
}

}  // namespace lanedet
