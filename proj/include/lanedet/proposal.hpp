#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "lanedet/config.hpp"
#include "lanedet/geometry.hpp"
#include "lanedet/nn.hpp"
#include "lanedet/rng.hpp"
#include "lanedet/tensor.hpp"

namespace lanedet {

// Stage-one encoder-decoder. Block b halves the resolution and produces
// widths[b] channels; decoder stage outputs match the encoder width at the
// target resolution, the last one `head_width`.
struct ProposalNetConfig {
    std::size_t height = 128;
    std::size_t width = 256;
    std::size_t in_channels = 1;
    std::vector<std::size_t> widths{16, 32, 64};
    std::size_t head_width = 8;
    std::size_t upsample = 2;

    std::size_t blocks() const { return widths.size(); }
    // Throws ConfigError when the invariants do not hold.
    void validate() const;
};

ProposalNetConfig proposal_config_from(const Config& config, ProposalNetConfig base = {});

ParameterSet init_proposal_params(const ProposalNetConfig& config, Rng& rng);

// image [N, C, h, w] in [0, 1] -> probabilities [N, 1, h, w].
Tensor proposal_forward(const Tensor& image, const ProposalNetConfig& config, const ParameterSet& params);

// Negative class-balanced log-likelihood summed over pixels and batch.
// beta = positives / negatives over the whole batch weights the negative term.
Tensor balanced_bce_loss(const Tensor& pred, const Tensor& target);
// Same with a caller-chosen beta.
Tensor weighted_bce_loss(const Tensor& pred, const Tensor& target, double beta);
double balance_beta(const Tensor& target);

inline constexpr double kProbabilityClamp = 1e-7;

struct PointSet {
    std::vector<Point2> points;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

// Pixels of a [1, h, w] (or [h, w]) probability map with p >= threshold, in
// raster order. More than `max_points` candidates are subsampled uniformly
// without replacement; the result is empty when nothing passes.
PointSet extract_points(const Tensor& map, double threshold, std::size_t max_points, std::uint64_t seed);
// Same for a binary edge raster of size h x w.
PointSet edge_points(const std::vector<std::uint8_t>& edges, std::size_t height, std::size_t width,
                     std::size_t max_points, std::uint64_t seed);

}  // namespace lanedet
