#pragma once

#include <cstddef>
#include <vector>

#include "lanedet/config.hpp"
#include "lanedet/geometry.hpp"
#include "lanedet/nn.hpp"
#include "lanedet/proposal.hpp"
#include "lanedet/rng.hpp"
#include "lanedet/tensor.hpp"

namespace lanedet {

// Stage-two point-set network. Each encoder stage is two shared per-point
// layers, a max over points, and the max broadcast back onto every point.
struct LocalizerConfig {
    std::size_t height = 128;
    std::size_t width = 256;
    std::vector<std::size_t> stage_widths{32, 64};
    std::size_t hidden = 64;
    std::size_t max_lanes = 5;
    double score_threshold = 0.5;
    double alpha = 1.0;
    std::size_t max_points = 256;

    // Width of the final representation: mean of per-point features
    // followed by the last stage's max.
    std::size_t representation_width() const { return 2 * stage_widths.back(); }
    void validate() const;
};

LocalizerConfig localizer_config_from(const Config& config, LocalizerConfig base = {});

ParameterSet init_localizer_params(const LocalizerConfig& config, Rng& rng);

// Padded batch of point sets, coordinates normalised to (x / w, y / h).
struct PointBatch {
    Tensor coords;                     // [N, 2, P]
    std::vector<std::size_t> counts;   // valid points per sample

    std::size_t batch() const { return counts.size(); }
};

// Throws EmptyInputError when any set is empty.
PointBatch make_point_batch(const std::vector<const PointSet*>& sets, const LocalizerConfig& config);
PointBatch make_point_batch(const PointSet& set, const LocalizerConfig& config);

// [N, representation_width()].
Tensor encode_points(const PointBatch& points, const LocalizerConfig& config, const ParameterSet& params);

// Key values are kept normalised by the image width.
struct DecoderOutput {
    Tensor keys;     // [N, T, 3]
    Tensor scores;   // [N, T, 1]

    std::size_t batch() const { return keys.dim(0); }
    std::size_t steps() const { return keys.dim(1); }
};

enum class DecodeMode { train, infer };

struct LaneEstimate {
    KeyValues keys;   // px
    QuadraticLane lane;
    double score = 0.0;
};

// Left to right.
using LanePrediction = std::vector<LaneEstimate>;

// Runs exactly max_lanes steps.
DecoderOutput decode_lanes(const Tensor& representation, const LocalizerConfig& config, const ParameterSet& params);
// Train mode returns every step; infer mode stops at the first step whose
// score falls below the threshold.
std::vector<LanePrediction> decode_lanes(const Tensor& representation, const LocalizerConfig& config,
                                         const ParameterSet& params, DecodeMode mode);
std::vector<LanePrediction> to_predictions(const DecoderOutput& out, const LocalizerConfig& config, DecodeMode mode);

// Full stage two for one point set; an empty set yields no lanes.
LanePrediction localize(const PointSet& points, const LocalizerConfig& config, const ParameterSet& params);

// Squared normalised key error averaged over keys and ground-truth lanes,
// plus the step confidence cross-entropy averaged over steps; both are
// averaged over the batch. `gt` holds key values in px, left to right.
Tensor key_value_loss(const DecoderOutput& pred, const std::vector<std::vector<KeyValues>>& gt,
                      const LocalizerConfig& config);
Tensor key_term(const DecoderOutput& pred, const std::vector<std::vector<KeyValues>>& gt, const LocalizerConfig& config);
// Targets: 1 for the first counts[n] steps, 0 afterwards.
Tensor confidence_loss(const DecoderOutput& pred, const std::vector<std::size_t>& counts);

// Steps taking part in the min-distance loss: those with score >= tau, or
// every step when none passes.
std::vector<std::vector<bool>> score_lane_mask(const DecoderOutput& pred, double tau);

// Mean over points of the horizontal distance to the nearest selected lane,
// in units of the image width, averaged over the batch. Ties go to the
// lowest step index. Samples flagged false in `active` (when given) add
// nothing.
Tensor min_distance_loss(const DecoderOutput& pred, const std::vector<std::vector<bool>>& lane_mask,
                         const PointBatch& points, const std::vector<bool>& active = {});

// key_value_loss + alpha * min_distance_loss with the score mask.
Tensor combined_loss(const DecoderOutput& pred, const std::vector<std::vector<KeyValues>>& gt,
                     const PointBatch& points, double alpha, const LocalizerConfig& config);

}  // namespace lanedet
