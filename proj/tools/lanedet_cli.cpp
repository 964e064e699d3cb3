#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "lanedet/benchmark.hpp"
#include "lanedet/checkpoint.hpp"
#include "lanedet/config.hpp"
#include "lanedet/errors.hpp"
#include "lanedet/evaluate.hpp"
#include "lanedet/render.hpp"
#include "lanedet/scenes.hpp"
#include "lanedet/train.hpp"

using namespace lanedet;

namespace {

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    bool verbose = false;

    Config config() const { return config_path.empty() ? Config{} : Config::load(config_path); }
    std::uint64_t seed_or(std::uint64_t fallback) const { return seed.value_or(fallback); }
};

void log(const Globals& g, const std::string& line) {
    if (g.verbose) std::cerr << line << '\n';
}

EpochCallback epoch_logger(const std::string& what) {
    return [what](std::size_t epoch, double loss) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "%s epoch %zu loss %.6g", what.c_str(), epoch + 1, loss);
        std::cout << buf << std::endl;
    };
}

ParameterSet load_into(ParameterSet params, const std::string& path) {
    assign_parameters(params, load_model(path).params);
    return params;
}

ProposalStage load_proposal(const Config& cfg, const std::string& path) {
    ProposalStage stage;
    stage.config = proposal_config_from(cfg);
    stage.threshold = cfg.get_double("proposal.threshold", stage.threshold);
    Rng rng(0);
    stage.params = load_into(init_proposal_params(stage.config, rng), path);
    return stage;
}

Detector load_detector(const Config& cfg, const std::string& proposal_path, const std::string& localizer_path) {
    Detector d;
    d.proposal = load_proposal(cfg, proposal_path);
    d.localizer = localizer_config_from(cfg);
    Rng rng(0);
    d.localizer_params = load_into(init_localizer_params(d.localizer, rng), localizer_path);
    return d;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw IoError("short write to '" + path + "'");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-stage lane detector: synthetic data, training, evaluation and benchmarking"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config_path, "Text config of key = value lines")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "Seed overriding the config");
    app.add_flag("--verbose,-v", g.verbose, "Progress on stderr");
    app.fallthrough();

    // generate-data
    auto* gen = app.add_subcommand("generate-data", "Render a synthetic dataset");
    std::string gen_spec, gen_out, gen_split = "easy";
    std::size_t gen_count = 0;
    bool gen_weak = false;
    gen->add_option("--spec", gen_spec, "Scene config (scene.* keys)")->check(CLI::ExistingFile);
    gen->add_option("--split", gen_split, "Base scene preset")->check(CLI::IsMember({"easy", "hard"}));
    gen->add_option("--count", gen_count, "Number of samples")->required();
    gen->add_option("--out", gen_out, "Dataset file")->required();
    gen->add_flag("--weak", gen_weak, "Keep only lane counts as labels");

    // train-proposal
    auto* tp = app.add_subcommand("train-proposal", "Train the edge proposal network");
    std::string tp_data, tp_out;
    tp->add_option("--data", tp_data, "Training dataset")->required()->check(CLI::ExistingFile);
    tp->add_option("--out", tp_out, "Checkpoint to write")->required();

    // propose
    auto* pr = app.add_subcommand("propose", "Write the stage-one probability map of one image");
    std::string pr_ckpt, pr_image, pr_out;
    pr->add_option("--checkpoint", pr_ckpt)->required()->check(CLI::ExistingFile);
    pr->add_option("--image", pr_image, "Grayscale PGM")->required()->check(CLI::ExistingFile);
    pr->add_option("--out", pr_out, "16-bit PGM")->required();

    // train-localizer
    auto* tl = app.add_subcommand("train-localizer", "Train the lane localization network");
    std::string tl_data, tl_out, tl_prop;
    bool tl_gt = false;
    double tl_jitter = 0.0;
    tl->add_option("--data", tl_data)->required()->check(CLI::ExistingFile);
    auto* tl_prop_opt = tl->add_option("--proposal-ckpt", tl_prop, "Points from a frozen stage-one network");
    auto* tl_gt_opt = tl->add_flag("--gt-edges", tl_gt, "Points from ground-truth edge maps");
    tl_prop_opt->excludes(tl_gt_opt);
    tl->add_option("--jitter", tl_jitter, "Uniform key-value noise in pixels");
    tl->add_option("--out", tl_out)->required();

    // finetune-weak
    auto* fw = app.add_subcommand("finetune-weak", "Refine a localizer on lane-count labels");
    std::string fw_data, fw_ckpt, fw_out, fw_prop;
    bool fw_gt = false;
    fw->add_option("--data", fw_data)->required()->check(CLI::ExistingFile);
    fw->add_option("--ckpt", fw_ckpt, "Supervised localizer checkpoint")->required()->check(CLI::ExistingFile);
    auto* fw_prop_opt = fw->add_option("--proposal-ckpt", fw_prop);
    auto* fw_gt_opt = fw->add_flag("--gt-edges", fw_gt);
    fw_prop_opt->excludes(fw_gt_opt);
    fw->add_option("--out", fw_out)->required();

    // detect
    auto* dt = app.add_subcommand("detect", "Detect lanes in one image");
    std::string dt_prop, dt_loc, dt_image, dt_out, dt_lanes;
    dt->add_option("--proposal-ckpt", dt_prop)->required()->check(CLI::ExistingFile);
    dt->add_option("--localizer-ckpt", dt_loc)->required()->check(CLI::ExistingFile);
    dt->add_option("--image", dt_image)->required()->check(CLI::ExistingFile);
    dt->add_option("--out", dt_out, "Overlay PPM");
    dt->add_option("--json", dt_lanes, "Lane text file: p2 p1 p0 k1 k2 k3 score per line");

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "TPR/FPR over labelled datasets");
    std::string ev_prop, ev_loc, ev_out;
    std::vector<std::string> ev_data, ev_split;
    double ev_tau = kDefaultMatchThreshold;
    unsigned ev_threads = 0;
    ev->add_option("--proposal-ckpt", ev_prop)->required()->check(CLI::ExistingFile);
    ev->add_option("--localizer-ckpt", ev_loc)->required()->check(CLI::ExistingFile);
    ev->add_option("--data", ev_data, "One or more datasets")->required()->check(CLI::ExistingFile);
    ev->add_option("--split", ev_split, "Split name per dataset");
    ev->add_option("--tau", ev_tau, "Match threshold in pixels");
    ev->add_option("--threads", ev_threads, "Worker threads (0 = all cores)");
    ev->add_option("--out", ev_out, "Report file (tab separated)");

    // benchmark
    auto* bm = app.add_subcommand("benchmark", "Per-stage latency and FPS");
    std::string bm_prop, bm_loc;
    std::size_t bm_h = 128, bm_w = 256, bm_iter = 50, bm_warm = 3;
    bm->add_option("--proposal-ckpt", bm_prop)->required()->check(CLI::ExistingFile);
    bm->add_option("--localizer-ckpt", bm_loc)->required()->check(CLI::ExistingFile);
    bm->add_option("--height", bm_h);
    bm->add_option("--width", bm_w);
    bm->add_option("--iterations", bm_iter);
    bm->add_option("--warmup", bm_warm)->check(CLI::Range(3, 1000000));

    // render
    auto* rd = app.add_subcommand("render", "Draw lanes over an image");
    std::string rd_data, rd_image, rd_lanes, rd_out, rd_image_out;
    std::size_t rd_index = 0;
    rd->add_option("--data", rd_data, "Dataset; draws ground-truth lanes of --index")->check(CLI::ExistingFile);
    rd->add_option("--index", rd_index);
    rd->add_option("--image", rd_image, "PGM image")->check(CLI::ExistingFile);
    rd->add_option("--lanes", rd_lanes, "Lane text file from detect")->check(CLI::ExistingFile);
    rd->add_option("--out", rd_out, "Overlay PPM")->required();
    rd->add_option("--image-out", rd_image_out, "Also write the dataset image as PGM");

    CLI11_PARSE(app, argc, argv);

    try {
        const Config cfg = g.config();
        if (gen->parsed()) {
            SceneSpec base = gen_split == "hard" ? hard_scene_spec() : easy_scene_spec();
            const SceneSpec spec = gen_spec.empty() ? base : scene_spec_from(Config::load(gen_spec), base);
            auto data = generate_dataset(spec, gen_count, g.seed_or(1));
            if (gen_weak)
                for (auto& s : data) s = s.as_weak();
            write_dataset(data, gen_out);
            log(g, "wrote " + std::to_string(data.size()) + " samples to " + gen_out);
        } else if (tp->parsed()) {
            const auto net = proposal_config_from(cfg);
            auto train = train_config_from(cfg, "train_proposal", default_proposal_training());
            train.seed = g.seed_or(train.seed);
            train.checkpoint_prefix = tp_out;
            const auto r = train_proposal(read_dataset(tp_data), net, train, epoch_logger("proposal"));
            save_model(tp_out, r.params, r.meta);
        } else if (pr->parsed()) {
            const auto stage = load_proposal(cfg, pr_ckpt);
            write_pgm(pr_out, stage.probability(read_pgm(pr_image)), true);
        } else if (tl->parsed()) {
            if (!tl_gt && tl_prop.empty()) throw ConfigError("train-localizer needs --proposal-ckpt or --gt-edges");
            const auto net = localizer_config_from(cfg);
            TrainConfig base = default_localizer_training();
            base.alpha = net.alpha;
            auto train = train_config_from(cfg, "train_localizer", base);
            train.seed = g.seed_or(train.seed);
            train.checkpoint_prefix = tl_out;
            std::optional<ProposalStage> stage;
            if (!tl_gt) stage = load_proposal(cfg, tl_prop);
            const auto data = prepare_localizer_data(read_dataset(tl_data), net,
                                                     tl_gt ? PointSource::ground_truth : PointSource::proposal,
                                                     stage ? &*stage : nullptr, tl_jitter, train.seed);
            const auto r = train_localizer(data, net, train, epoch_logger("localizer"));
            save_model(tl_out, r.params, r.meta);
        } else if (fw->parsed()) {
            if (!fw_gt && fw_prop.empty()) throw ConfigError("finetune-weak needs --proposal-ckpt or --gt-edges");
            const auto net = localizer_config_from(cfg);
            auto train = train_config_from(cfg, "finetune_weak", default_weak_finetuning());
            train.seed = g.seed_or(train.seed);
            train.checkpoint_prefix = fw_out;
            std::optional<ProposalStage> stage;
            if (!fw_gt) stage = load_proposal(cfg, fw_prop);
            const auto data = prepare_localizer_data(read_dataset(fw_data), net,
                                                     fw_gt ? PointSource::ground_truth : PointSource::proposal,
                                                     stage ? &*stage : nullptr, 0.0, train.seed);
            const auto r = finetune_weak(data, net, load_model(fw_ckpt), train, epoch_logger("weak"));
            save_model(fw_out, r.params, r.meta);
        } else if (dt->parsed()) {
            const auto detector = load_detector(cfg, dt_prop, dt_loc);
            const Tensor image = read_pgm(dt_image);
            const auto lanes = detector.detect(image);
            const std::string text = format_lanes(lanes);
            if (!dt_lanes.empty()) write_text(dt_lanes, text);
            else std::cout << text;
            if (!dt_out.empty()) render_overlay(image, lanes_of(lanes), dt_out);
        } else if (ev->parsed()) {
            if (!ev_split.empty() && ev_split.size() != ev_data.size()) {
                throw ConfigError("give one --split name per --data file");
            }
            const auto detector = load_detector(cfg, ev_prop, ev_loc);
            EvalReport report;
            for (std::size_t i = 0; i < ev_data.size(); ++i) {
                const std::string name = ev_split.empty() ? "split" + std::to_string(i) : ev_split[i];
                report.splits.push_back(evaluate(detector, read_dataset(ev_data[i]), name, ev_tau, ev_threads));
            }
            const auto text = format_report(report);
            if (!ev_out.empty()) write_text(ev_out, text);
            std::cout << text;
        } else if (bm->parsed()) {
            const auto detector = load_detector(cfg, bm_prop, bm_loc);
            std::cout << format_benchmark(fps_benchmark(detector, bm_h, bm_w, bm_iter, bm_warm, g.seed_or(1)));
        } else if (rd->parsed()) {
            Tensor image;
            std::vector<QuadraticLane> lanes;
            if (!rd_data.empty()) {
                const auto data = read_dataset(rd_data);
                if (rd_index >= data.size()) throw ConfigError("--index beyond the dataset");
                image = data[rd_index].image_tensor();
                lanes = data[rd_index].lanes;
                if (!rd_image_out.empty()) write_pgm(rd_image_out, image);
            } else {
                if (rd_image.empty()) throw ConfigError("render needs --data or --image");
                image = read_pgm(rd_image);
                if (!rd_lanes.empty()) {
                    std::ifstream in(rd_lanes);
                    double p2, p1, p0, k1, k2, k3, score;
                    while (in >> p2 >> p1 >> p0 >> k1 >> k2 >> k3 >> score) lanes.push_back({p2, p1, p0});
                }
            }
            render_overlay(image, lanes, rd_out);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
