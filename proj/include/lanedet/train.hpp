#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "lanedet/config.hpp"
#include "lanedet/localizer.hpp"
#include "lanedet/nn.hpp"
#include "lanedet/proposal.hpp"
#include "lanedet/scenes.hpp"

namespace lanedet {

enum class LossRegime { supervised, combined, weak_finetune };

LossRegime parse_loss_regime(const std::string& text);
std::string to_string(LossRegime regime);

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 8;
    double learning_rate = 0.01;
    double momentum = 0.9;
    double clip_norm = 0.0;  // 0 disables clipping
    // The learning rate falls linearly, step by step, to this fraction of
    // its initial value at the end of training.
    double final_lr_fraction = 1.0;
    std::uint64_t seed = 1;
    double alpha = 1.0;
    LossRegime regime = LossRegime::supervised;
    // Every `checkpoint_every` epochs the current parameters are written to
    // `<checkpoint_prefix>.epoch<N>.lnck`. 0 disables.
    std::size_t checkpoint_every = 0;
    std::string checkpoint_prefix;

    void validate() const;
};

// Reads `<prefix>.epochs`, `.batch`, `.lr`, `.final_lr_fraction`,
// `.momentum`, `.clip`, `.seed`, `.alpha`, `.regime`, `.checkpoint_every`.
TrainConfig train_config_from(const Config& config, const std::string& prefix, TrainConfig base = {});

TrainConfig default_proposal_training();
TrainConfig default_localizer_training();
TrainConfig default_weak_finetuning();

// Parameters plus scalar metadata, stored in one checkpoint file as extra
// `meta.<key>` records of shape [1].
struct ModelFile {
    ParameterSet params;
    std::map<std::string, double> meta;
};

std::vector<std::uint8_t> encode_model(const ParameterSet& params, const std::map<std::string, double>& meta);
ModelFile decode_model(const std::vector<std::uint8_t>& bytes);
void save_model(const std::string& path, const ParameterSet& params, const std::map<std::string, double>& meta);
ModelFile load_model(const std::string& path);

// Meta key counting supervised optimizer steps behind a localizer checkpoint.
inline constexpr const char* kSupervisedStepsKey = "supervised_steps";

struct TrainResult {
    ParameterSet params;
    std::vector<double> epoch_loss;  // mean batch loss per epoch
    std::size_t steps = 0;
    std::map<std::string, double> meta;
};

using EpochCallback = std::function<void(std::size_t epoch, double mean_loss)>;

TrainResult train_proposal(const std::vector<Sample>& data, const ProposalNetConfig& net, const TrainConfig& train,
                           const EpochCallback& on_epoch = {});

// Stage-one network used at inference: probability map, thresholded points.
struct ProposalStage {
    ProposalNetConfig config;
    ParameterSet params;
    double threshold = 0.5;

    Tensor probability(const Sample& sample) const;
    Tensor probability(const Tensor& image) const;
    PointSet points(const Tensor& image, std::size_t max_points, std::uint64_t seed) const;
};

enum class PointSource { ground_truth, proposal };

// Everything the localizer trains on, with point sets computed once.
struct LocalizerData {
    std::vector<PointSet> points;
    std::vector<std::vector<KeyValues>> keys;  // empty per sample for weak data
    std::vector<std::size_t> counts;
    bool full_labels = true;

    std::size_t size() const { return points.size(); }
};

// Key values are sorted left to right. `jitter_px` > 0 adds independent
// uniform noise in [-jitter_px, jitter_px] to every key of every lane.
// Samples whose point set is empty are dropped.
LocalizerData prepare_localizer_data(const std::vector<Sample>& data, const LocalizerConfig& config, PointSource source,
                                     const ProposalStage* stage_one, double jitter_px, std::uint64_t seed);

TrainResult train_localizer(const LocalizerData& data, const LocalizerConfig& net, const TrainConfig& train,
                            const EpochCallback& on_epoch = {});

// Continues from a supervised checkpoint with min-distance plus confidence
// loss. Raises ColdStartError when `start` carries no supervised steps.
TrainResult finetune_weak(const LocalizerData& data, const LocalizerConfig& net, const ModelFile& start,
                          const TrainConfig& train, const EpochCallback& on_epoch = {});

}  // namespace lanedet
