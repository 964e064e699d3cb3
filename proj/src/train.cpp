#include "lanedet/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lanedet/binary_io.hpp"
#include "lanedet/checkpoint.hpp"
#include "lanedet/errors.hpp"
#include "lanedet/ops.hpp"

namespace lanedet {

namespace {

constexpr std::uint64_t kInitStream = 0x1a17;
constexpr std::uint64_t kJitterStream = 0x7177;
constexpr std::uint64_t kPointStream = 0x9017;
const std::string kMetaPrefix = "meta.";

double scheduled_lr(const TrainConfig& cfg, std::size_t step, std::size_t total_steps) {
    if (total_steps <= 1) return cfg.learning_rate;
    const double t = static_cast<double>(step) / static_cast<double>(total_steps - 1);
    return cfg.learning_rate * (1.0 - (1.0 - cfg.final_lr_fraction) * t);
}

std::size_t batches_per_epoch(std::size_t n, std::size_t batch) { return (n + batch - 1) / batch; }

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(Rng::derive_seed(seed, epoch));
    rng.shuffle(order);
    return order;
}

void maybe_checkpoint(const TrainConfig& cfg, std::size_t epoch, const ParameterSet& params,
                      const std::map<std::string, double>& meta) {
    if (cfg.checkpoint_every == 0 || cfg.checkpoint_prefix.empty()) return;
    if ((epoch + 1) % cfg.checkpoint_every != 0) return;
    save_model(cfg.checkpoint_prefix + ".epoch" + std::to_string(epoch + 1) + ".lnck", params, meta);
}

Tensor stack_images(const std::vector<Sample>& data, const std::vector<std::size_t>& idx, bool edges) {
    const std::size_t h = data[idx.front()].height, w = data[idx.front()].width;
    std::vector<double> v;
    v.reserve(idx.size() * h * w);
    for (auto i : idx) {
        if (edges) v.insert(v.end(), data[i].edges.begin(), data[i].edges.end());
        else v.insert(v.end(), data[i].image.begin(), data[i].image.end());
    }
    return Tensor(Shape{idx.size(), 1, h, w}, std::move(v));
}

// Shared mini-batch loop over a localizer dataset.
template <typename LossFn>
TrainResult run_localizer_loop(const LocalizerData& data, const LocalizerConfig& net, const TrainConfig& train,
                               ParameterSet params, std::map<std::string, double> meta, const char* step_key,
                               LossFn&& loss_fn, const EpochCallback& on_epoch) {
    TrainResult result;
    SgdOptimizer opt(train.learning_rate, train.momentum, train.clip_norm);
    const std::size_t total_steps = train.epochs * batches_per_epoch(data.size(), train.batch_size);
    for (std::size_t epoch = 0; epoch < train.epochs; ++epoch) {
        const auto order = epoch_order(data.size(), train.seed, epoch);
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += train.batch_size) {
            const std::size_t end = std::min(order.size(), start + train.batch_size);
            opt.set_learning_rate(scheduled_lr(train, result.steps, total_steps));
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
            std::vector<const PointSet*> sets;
            for (auto i : idx) sets.push_back(&data.points[i]);
            const auto batch = make_point_batch(sets, net);
            const auto out = decode_lanes(encode_points(batch, net, params), net, params);
            const Tensor loss = loss_fn(out, batch, idx);
            total += loss.item();
            ++batches;
            backward(loss);
            opt.step(params);
            ++result.steps;
        }
        const double mean = batches ? total / static_cast<double>(batches) : 0.0;
        result.epoch_loss.push_back(mean);
        meta[step_key] += static_cast<double>(batches);
        maybe_checkpoint(train, epoch, params, meta);
        if (on_epoch) on_epoch(epoch, mean);
    }
    result.params = std::move(params);
    result.meta = std::move(meta);
    return result;
}

}  // namespace

LossRegime parse_loss_regime(const std::string& text) {
    if (text == "supervised") return LossRegime::supervised;
    if (text == "combined") return LossRegime::combined;
    if (text == "weak-finetune" || text == "weak_finetune") return LossRegime::weak_finetune;
    throw ConfigError("unknown loss regime '" + text + "' (expected supervised, combined or weak-finetune)");
}

std::string to_string(LossRegime regime) {
    switch (regime) {
        case LossRegime::supervised: return "supervised";
        case LossRegime::combined: return "combined";
        case LossRegime::weak_finetune: return "weak-finetune";
    }
    return "?";
}

void TrainConfig::validate() const {
    if (batch_size == 0) throw ConfigError("batch size must be at least 1");
    if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (clip_norm < 0.0) throw ConfigError("clip norm must be non-negative");
    if (!(final_lr_fraction >= 0.0 && final_lr_fraction <= 1.0)) {
        throw ConfigError("final learning-rate fraction must lie in [0, 1]");
    }
    if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative, got " + std::to_string(alpha));
}

TrainConfig train_config_from(const Config& c, const std::string& prefix, TrainConfig b) {
    const auto key = [&](const char* k) { return prefix + "." + k; };
    b.epochs = static_cast<std::size_t>(c.get_int(key("epochs"), static_cast<std::int64_t>(b.epochs)));
    b.batch_size = static_cast<std::size_t>(c.get_int(key("batch"), static_cast<std::int64_t>(b.batch_size)));
    b.learning_rate = c.get_double(key("lr"), b.learning_rate);
    b.final_lr_fraction = c.get_double(key("final_lr_fraction"), b.final_lr_fraction);
    b.momentum = c.get_double(key("momentum"), b.momentum);
    b.clip_norm = c.get_double(key("clip"), b.clip_norm);
    b.seed = static_cast<std::uint64_t>(c.get_int(key("seed"), static_cast<std::int64_t>(b.seed)));
    b.alpha = c.get_double(key("alpha"), b.alpha);
    if (c.has(key("regime"))) b.regime = parse_loss_regime(c.get_string(key("regime"), ""));
    b.checkpoint_every =
        static_cast<std::size_t>(c.get_int(key("checkpoint_every"), static_cast<std::int64_t>(b.checkpoint_every)));
    b.validate();
    return b;
}

TrainConfig default_proposal_training() {
    TrainConfig t;
    t.epochs = 3;
    t.batch_size = 4;
    t.learning_rate = 1e-5;
    t.momentum = 0.9;
    t.clip_norm = 0.0;
    return t;
}

TrainConfig default_localizer_training() {
    TrainConfig t;
    t.epochs = 60;
    t.batch_size = 8;
    t.learning_rate = 0.1;
    t.final_lr_fraction = 0.02;
    t.momentum = 0.9;
    t.clip_norm = 1.0;
    return t;
}

TrainConfig default_weak_finetuning() {
    TrainConfig t = default_localizer_training();
    t.epochs = 5;
    t.learning_rate = 0.005;
    t.regime = LossRegime::weak_finetune;
    return t;
}

std::vector<std::uint8_t> encode_model(const ParameterSet& params, const std::map<std::string, double>& meta) {
    ParameterSet all = params;
    for (const auto& [k, v] : meta) all.add(kMetaPrefix + k, Tensor::scalar(v));
    return encode_checkpoint(all);
}

ModelFile decode_model(const std::vector<std::uint8_t>& bytes) {
    ModelFile file;
    const ParameterSet all = decode_checkpoint(bytes);
    for (const auto& p : all.items()) {
        if (p.name.starts_with(kMetaPrefix) && p.value.size() == 1) {
            file.meta[p.name.substr(kMetaPrefix.size())] = p.value.item();
        } else {
            file.params.add(p.name, p.value);
        }
    }
    return file;
}

void save_model(const std::string& path, const ParameterSet& params, const std::map<std::string, double>& meta) {
    write_file_bytes(path, encode_model(params, meta));
}

ModelFile load_model(const std::string& path) { return decode_model(read_file_bytes(path)); }

TrainResult train_proposal(const std::vector<Sample>& data, const ProposalNetConfig& net, const TrainConfig& train,
                           const EpochCallback& on_epoch) {
    net.validate();
    train.validate();
    if (data.empty()) throw ConfigError("proposal training set is empty");
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data[i].height != net.height || data[i].width != net.width) {
            throw ConfigError("sample " + std::to_string(i) + " is " + std::to_string(data[i].height) + "x" +
                              std::to_string(data[i].width) + " but the network expects " +
                              std::to_string(net.height) + "x" + std::to_string(net.width));
        }
        if (!data[i].full_labels) throw ContractError("proposal training needs fully labelled samples");
    }
    Rng init(Rng::derive_seed(train.seed, kInitStream));
    ParameterSet params = init_proposal_params(net, init);
    std::map<std::string, double> meta{{"proposal_steps", 0.0}};
    TrainResult result;
    SgdOptimizer opt(train.learning_rate, train.momentum, train.clip_norm);
    const std::size_t total_steps = train.epochs * batches_per_epoch(data.size(), train.batch_size);
    for (std::size_t epoch = 0; epoch < train.epochs; ++epoch) {
        const auto order = epoch_order(data.size(), train.seed, epoch);
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += train.batch_size) {
            const std::size_t end = std::min(order.size(), start + train.batch_size);
            opt.set_learning_rate(scheduled_lr(train, result.steps, total_steps));
            const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                               order.begin() + static_cast<std::ptrdiff_t>(end));
            const Tensor pred = proposal_forward(stack_images(data, idx, false), net, params);
            const Tensor loss = balanced_bce_loss(pred, stack_images(data, idx, true));
            total += loss.item();
            ++batches;
            backward(loss);
            opt.step(params);
            ++result.steps;
        }
        const double mean = total / static_cast<double>(batches);
        result.epoch_loss.push_back(mean);
        meta["proposal_steps"] += static_cast<double>(batches);
        maybe_checkpoint(train, epoch, params, meta);
        if (on_epoch) on_epoch(epoch, mean);
    }
    result.params = std::move(params);
    result.meta = std::move(meta);
    return result;
}

Tensor ProposalStage::probability(const Tensor& image) const {
    NoGradGuard guard;
    if (image.rank() == 4) return proposal_forward(image, config, params);
    const std::size_t r = image.rank();
    if (r < 2) throw DimensionError("proposal input needs an [h,w] image");
    const Tensor batched(Shape{1, 1, image.dim(r - 2), image.dim(r - 1)},
                         std::vector<double>(image.data().begin(), image.data().end()));
    return proposal_forward(batched, config, params);
}

Tensor ProposalStage::probability(const Sample& sample) const { return probability(sample.image_tensor()); }

PointSet ProposalStage::points(const Tensor& image, std::size_t max_points, std::uint64_t seed) const {
    return extract_points(probability(image), threshold, max_points, seed);
}

LocalizerData prepare_localizer_data(const std::vector<Sample>& data, const LocalizerConfig& cfg, PointSource source,
                                     const ProposalStage* stage_one, double jitter_px, std::uint64_t seed) {
    cfg.validate();
    if (source == PointSource::proposal && stage_one == nullptr) {
        throw ConfigError("proposal point source needs a stage-one checkpoint");
    }
    LocalizerData out;
    out.full_labels = std::all_of(data.begin(), data.end(), [](const Sample& s) { return s.full_labels; });
    const double h = static_cast<double>(cfg.height);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const Sample& s = data[i];
        if (s.height != cfg.height || s.width != cfg.width) {
            throw ConfigError("sample " + std::to_string(i) + " does not match the localizer image size");
        }
        const std::uint64_t point_seed = Rng::derive_seed(seed ^ kPointStream, i);
        PointSet pts = source == PointSource::ground_truth
                           ? edge_points(s.edges, s.height, s.width, cfg.max_points, point_seed)
                           : stage_one->points(s.image_tensor(), cfg.max_points, point_seed);
        if (pts.empty()) continue;
        std::vector<KeyValues> keys;
        if (out.full_labels) {
            auto lanes = s.lanes;
            sort_lanes_left_to_right(lanes, h);
            Rng jitter(Rng::derive_seed(seed ^ kJitterStream, i));
            for (const auto& lane : lanes) {
                KeyValues k = params_to_keys(lane, h);
                if (jitter_px > 0.0) {
                    k.k1 += jitter.uniform(-jitter_px, jitter_px);
                    k.k2 += jitter.uniform(-jitter_px, jitter_px);
                    k.k3 += jitter.uniform(-jitter_px, jitter_px);
                }
                keys.push_back(k);
            }
            if (keys.size() > cfg.max_lanes) {
                throw CapacityError("sample " + std::to_string(i) + " has " + std::to_string(keys.size()) +
                                    " lanes, more than max_lanes " + std::to_string(cfg.max_lanes));
            }
        }
        out.points.push_back(std::move(pts));
        out.keys.push_back(std::move(keys));
        out.counts.push_back(s.full_labels ? s.lanes.size() : s.weak_count);
    }
    if (out.points.empty()) throw ConfigError("no sample yielded any lane points");
    return out;
}

TrainResult train_localizer(const LocalizerData& data, const LocalizerConfig& net, const TrainConfig& train,
                            const EpochCallback& on_epoch) {
    net.validate();
    train.validate();
    if (train.regime == LossRegime::weak_finetune) {
        throw ConfigError("weak fine-tuning starts from a checkpoint; use finetune-weak");
    }
    if (data.size() == 0) throw ConfigError("localizer training set is empty");
    if (!data.full_labels) throw ContractError("supervised localizer training needs fully labelled samples");
    Rng init(Rng::derive_seed(train.seed, kInitStream));
    ParameterSet params = init_localizer_params(net, init);
    const bool combined = train.regime == LossRegime::combined;
    auto loss_fn = [&](const DecoderOutput& out, const PointBatch& batch, const std::vector<std::size_t>& idx) {
        std::vector<std::vector<KeyValues>> gt;
        for (auto i : idx) gt.push_back(data.keys[i]);
        return combined ? combined_loss(out, gt, batch, train.alpha, net) : key_value_loss(out, gt, net);
    };
    return run_localizer_loop(data, net, train, std::move(params), {{kSupervisedStepsKey, 0.0}}, kSupervisedStepsKey,
                              loss_fn, on_epoch);
}

TrainResult finetune_weak(const LocalizerData& data, const LocalizerConfig& net, const ModelFile& start,
                          const TrainConfig& train, const EpochCallback& on_epoch) {
    net.validate();
    train.validate();
    const auto it = start.meta.find(kSupervisedStepsKey);
    if (it == start.meta.end() || !(it->second > 0.0)) {
        throw ColdStartError(
            "weak fine-tuning needs a checkpoint trained with supervision first; starting from scratch risks "
            "trapping in a poor local minimum");
    }
    if (data.size() == 0) throw ConfigError("weak fine-tuning set is empty");
    Rng init(0);
    ParameterSet params = init_localizer_params(net, init);
    assign_parameters(params, start.params);
    auto meta = start.meta;
    meta.try_emplace("weak_steps", 0.0);
    auto loss_fn = [&](const DecoderOutput& out, const PointBatch& batch, const std::vector<std::size_t>& idx) {
        std::vector<std::size_t> counts;
        std::vector<bool> active;
        for (auto i : idx) {
            if (data.counts[i] > out.steps()) throw CapacityError("weak lane count exceeds max_lanes");
            counts.push_back(data.counts[i]);
            active.push_back(data.counts[i] > 0);
        }
        const Tensor conf = confidence_loss(out, counts);
        if (std::none_of(active.begin(), active.end(), [](bool a) { return a; })) return conf;
        return ops::add(min_distance_loss(out, score_lane_mask(out, net.score_threshold), batch, active), conf);
    };
    return run_localizer_loop(data, net, train, std::move(params), std::move(meta), "weak_steps", loss_fn, on_epoch);
}

}  // namespace lanedet
