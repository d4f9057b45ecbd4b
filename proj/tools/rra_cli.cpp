// Command-line front end: dataset generation, training, evaluation,
// visualization and ablation sweeps over the glimpse classifier.
//
// Exit codes: 0 success, 2 usage/config error, 3 training diverged,
// 4 unreadable or version-mismatched checkpoint.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "rra/harness.hpp"
#include "rra/visualize.hpp"

namespace fs = std::filesystem;
using namespace rra;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitCheckpoint = 4;

int env_threads() {
    if (const char* v = std::getenv("RRA_THREADS")) {
        const int n = std::atoi(v);
        if (n >= 1) return n;
    }
    return 1;
}

struct Overrides {
    std::optional<std::int64_t> glimpses, epochs, batch_size, segments, eval_segments, seed;
    std::optional<int> eval_crops;
    std::optional<double> lr, dropout, noise_sigma, fraction;
    std::optional<std::string> loss, variant;
    std::optional<bool> parallel, eval_flip, freeze_bn_stats;

    void apply(KeyValueConfig& kv) const {
        if (glimpses) kv.set("glimpses", std::to_string(*glimpses));
        if (epochs) kv.set("epochs", std::to_string(*epochs));
        if (batch_size) kv.set("batch_size", std::to_string(*batch_size));
        if (segments) kv.set("segments", std::to_string(*segments));
        if (eval_segments) kv.set("eval_segments", std::to_string(*eval_segments));
        if (seed) kv.set("seed", std::to_string(*seed));
        if (eval_crops) kv.set("eval_crops", std::to_string(*eval_crops));
        if (lr) kv.set("lr", format_double(*lr));
        if (dropout) kv.set("dropout", format_double(*dropout));
        if (noise_sigma) kv.set("noise_sigma", format_double(*noise_sigma));
        if (fraction) kv.set("fraction", format_double(*fraction));
        if (loss) kv.set("loss", *loss);
        if (variant) kv.set("variant", *variant);
        if (parallel) kv.set("parallel", *parallel ? "true" : "false");
        if (eval_flip) kv.set("eval_flip", *eval_flip ? "true" : "false");
        if (freeze_bn_stats) kv.set("freeze_bn_stats", *freeze_bn_stats ? "true" : "false");
    }
};

/// precedence: flag > config file > default
ExperimentConfig resolve_config(const std::string& config_path, const Overrides& over) {
    KeyValueConfig kv = ExperimentConfig{}.to_key_values();
    if (!config_path.empty()) {
        const KeyValueConfig file = KeyValueConfig::from_file(config_path);
        for (const auto& [k, v] : file.values()) kv.set(k, v);
    }
    over.apply(kv);
    return ExperimentConfig::from(kv);
}

void add_override_flags(CLI::App* cmd, Overrides& over) {
    cmd->add_option("--glimpses", over.glimpses, "number of glimpse iterations");
    cmd->add_option("--loss", over.loss, "loss terms, e.g. li+le");
    cmd->add_option("--epochs", over.epochs, "training epochs");
    cmd->add_option("--lr", over.lr, "initial learning rate");
    cmd->add_option("--batch", over.batch_size, "batch size (videos)");
    cmd->add_option("--segments", over.segments, "training frames per video");
    cmd->add_option("--seed", over.seed, "run seed");
    cmd->add_option("--variant", over.variant,
                    "block variant: full|avg_pool|spatial|no_bn|no_relu|no_tanh|neg_relu");
    cmd->add_option("--dropout", over.dropout, "classifier dropout probability");
    cmd->add_flag("--parallel,!--no-parallel", over.parallel, "parallel-glimpse baseline");
    cmd->add_flag("--freeze-bn-stats,!--no-freeze-bn-stats", over.freeze_bn_stats,
                  "freeze running normalization statistics");
}

Model<float> model_from_checkpoint(const fs::path& path, ExperimentConfig& cfg_out) {
    CheckpointContainer container = read_container(path); // throws CheckpointError
    cfg_out = ExperimentConfig::from(KeyValueConfig::from_text(container.config_text));
    Model<float> model(cfg_out.model_config());
    load_checkpoint<float>(path, model, nullptr);
    return model;
}

// ---------------------------------------------------------------------------

int cmd_gen(const std::string& config_path, const Overrides& over, const fs::path& out_dir) {
    const ExperimentConfig cfg = resolve_config(config_path, over);
    const SyntheticDataset data = generate_synthetic(cfg.data);
    fs::create_directories(out_dir);
    write_dataset(out_dir / "train", data.train);
    write_dataset(out_dir / "test", data.test);
    std::ofstream snapshot(out_dir / "config.txt");
    snapshot << cfg.snapshot();
    std::cout << "generated " << data.train.size() << " train / " << data.test.size()
              << " test videos, " << cfg.data.num_classes << " classes, "
              << cfg.data.frames_per_video << " frames each -> " << out_dir.string() << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const Overrides& over, const fs::path& data_dir,
              const fs::path& out_dir, const std::string& resume) {
    ExperimentConfig cfg = resolve_config(config_path, over);
    const auto train_videos = load_dataset(data_dir / "train");
    std::vector<VideoSample> eval_videos;
    if (fs::exists(data_dir / "test" / "manifest.txt")) eval_videos = load_dataset(data_dir / "test");

    const int classes = num_classes_of(train_videos);
    if (classes != cfg.data.num_classes) {
        ExperimentConfig adjusted = cfg;
        adjusted.data.num_classes = classes;
        cfg = adjusted;
    }

    Model<float> model(cfg.model_config());
    Adam<float> optimizer;
    std::int64_t start_epoch = 0;
    if (!resume.empty()) {
        const auto loaded = load_checkpoint<float>(resume, model, &optimizer);
        if (loaded.config_hash != fnv1a(cfg.snapshot()))
            throw CheckpointError("resume checkpoint was produced by a different configuration");
        start_epoch = loaded.epoch;
    }

    fs::create_directories(out_dir);
    std::ofstream snapshot(out_dir / "config.txt");
    snapshot << cfg.snapshot();

    const auto history =
        train(model, optimizer, train_videos, eval_videos, cfg.train, start_epoch,
              [](const EpochMetrics& em) {
                  std::cout << "epoch " << em.epoch << " lr " << format_double(em.lr) << " loss "
                            << format_double(em.loss_total);
                  if (em.eval_top1) std::cout << " top1 " << format_double(*em.eval_top1);
                  std::cout << "\n";
              });

    write_metrics_csv(out_dir / "metrics.csv", history, cfg.train.loss);
    save_checkpoint(out_dir / "checkpoint.rra", model, &optimizer, cfg.train.total_epochs,
                    cfg.snapshot());
    std::cout << "wrote " << (out_dir / "checkpoint.rra").string() << "\n";
    return 0;
}

int cmd_eval(const fs::path& checkpoint, const fs::path& data_dir, std::int64_t segments, int crops,
             bool flip, const std::string& mode_name, const std::string& per_class_csv) {
    ExperimentConfig cfg;
    Model<float> model = model_from_checkpoint(checkpoint, cfg);
    const auto videos = load_dataset(data_dir);
    const int classes = cfg.data.num_classes;

    EvalProtocol protocol{segments, crops, flip};
    const PredictMode mode = mode_name == "concat" ? PredictMode::concat : PredictMode::ensemble;
    ModelScorer<float> scorer(model, protocol, mode);
    const EvalResult result = evaluate(scorer, videos, classes);

    std::cout << "videos " << result.videos << ", inputs per video " << result.inputs_per_video
              << "\n";
    std::cout << "top1 " << format_double(result.top1) << "\n";
    std::cout << "mean_per_class " << format_double(result.mean_per_class) << "\n";
    if (!per_class_csv.empty()) {
        std::ofstream os(per_class_csv);
        os << "class,accuracy\n";
        for (std::size_t c = 0; c < result.per_class_accuracy.size(); ++c)
            os << c << ',' << format_double(result.per_class_accuracy[c]) << '\n';
    }
    return 0;
}

int cmd_viz(const fs::path& checkpoint, const fs::path& data_dir, const std::string& video_id,
            const fs::path& out_dir, std::int64_t segments, const std::string& suppression,
            double sigma, const std::string& colormap, double alpha, bool overlay) {
    ExperimentConfig cfg;
    Model<float> model = model_from_checkpoint(checkpoint, cfg);
    const auto videos = load_dataset(data_dir);
    const VideoSample* video = nullptr;
    for (const auto& v : videos)
        if (v.id == video_id) video = &v;
    if (!video) {
        std::cerr << "error: unknown video id '" << video_id << "'\n";
        return kExitUsage;
    }

    const std::int64_t hw = cfg.input_hw;
    const auto indices = sample_test_frames(video->frame_count(), segments);
    const std::int64_t n = static_cast<std::int64_t>(indices.size());
    Tensor<float> stack(Shape{n, video->channels(), hw, hw});
    std::vector<Tensor<float>> base_frames;
    const std::int64_t per = video->channels() * hw * hw;
    for (std::int64_t t = 0; t < n; ++t) {
        const auto variant = test_crop_variants(video->frame(indices[static_cast<std::size_t>(t)]), hw,
                                                1, false);
        base_frames.push_back(variant[0]);
        for (std::int64_t i = 0; i < per; ++i) stack[t * per + i] = variant[0][i];
    }

    fs::create_directories(out_dir);
    HeatmapRequest request;
    request.gaussian_sigma = sigma;
    request.colormap = colormap;
    request.overlay_alpha = alpha;

    int written = 0;
    for (int k = 0; k < cfg.glimpses; ++k) {
        const auto maps = influence_map(model, stack, k);
        for (std::int64_t t = 0; t < n; ++t) {
            const auto img = render(maps[static_cast<std::size_t>(t)], request,
                                    overlay ? &base_frames[static_cast<std::size_t>(t)] : nullptr);
            char name[160];
            std::snprintf(name, sizeof(name), "%s_g%d_influence_f%lld.ppm", video_id.c_str(), k,
                          static_cast<long long>(t));
            write_ppm(out_dir / name, img);
            ++written;
        }
    }

    if (!suppression.empty()) {
        const auto comma = suppression.find(',');
        if (comma == std::string::npos) {
            std::cerr << "error: --suppression expects k,m\n";
            return kExitUsage;
        }
        const int k = std::stoi(suppression.substr(0, comma));
        const int top_m = std::stoi(suppression.substr(comma + 1));
        const auto maps = suppression_map(model, stack, k, top_m);
        request.target = HeatmapRequest::Target::suppression;
        for (std::int64_t t = 0; t < n; ++t) {
            const auto img = render(maps[static_cast<std::size_t>(t)], request,
                                    overlay ? &base_frames[static_cast<std::size_t>(t)] : nullptr);
            char name[160];
            std::snprintf(name, sizeof(name), "%s_g%d_suppression_f%lld.ppm", video_id.c_str(), k,
                          static_cast<long long>(t));
            write_ppm(out_dir / name, img);
            ++written;
        }
    }
    std::cout << "wrote " << written << " heatmaps to " << out_dir.string() << "\n";
    return 0;
}

int cmd_sweep(const std::string& kind, const std::string& config_path, const Overrides& over,
              const fs::path& out_dir, const std::string& k_list_text,
              const std::string& seeds_text, int jobs) {
    const ExperimentConfig cfg = resolve_config(config_path, over);
    HarnessOptions options;
    options.jobs = jobs;
    options.cell_dir = out_dir / "cells";
    if (!seeds_text.empty()) {
        options.seeds.clear();
        std::stringstream ss(seeds_text);
        std::string tok;
        while (std::getline(ss, tok, ',')) options.seeds.push_back(std::stoull(tok));
    }

    const SyntheticDataset data = generate_synthetic(cfg.data);
    SweepResult result;
    if (kind == "losses") {
        result = sweep_losses(data, cfg, options);
    } else if (kind == "glimpses") {
        std::vector<int> ks{1, 2, 3, 4, 5};
        if (!k_list_text.empty()) {
            ks.clear();
            std::stringstream ss(k_list_text);
            std::string tok;
            while (std::getline(ss, tok, ',')) ks.push_back(std::stoi(tok));
        }
        result = sweep_glimpses(data, cfg, ks, options);
    } else if (kind == "components") {
        result = sweep_components(data, cfg, options);
    } else if (kind == "parallel") {
        result = compare_parallel(data, cfg, options);
    } else {
        std::cerr << "error: unknown sweep kind '" << kind
                  << "' (expected losses|glimpses|components|parallel)\n";
        return kExitUsage;
    }

    fs::create_directories(out_dir);
    result.write_csv(out_dir / (kind + ".csv"));
    const std::string table = result.render_table();
    std::ofstream summary(out_dir / (kind + "_summary.txt"));
    summary << table;
    std::cout << table;
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"iterative glimpse classifier: synthetic data, training, evaluation, heatmaps"};
    app.require_subcommand(1);

    std::string config_path, resume, video_id, suppression, mode_name = "ensemble";
    std::string kind, k_list, seeds_text, per_class_csv, colormap = "jet";
    fs::path out_dir = "out", data_dir = "data", checkpoint;
    std::int64_t segments = 25, viz_segments = 4;
    int crops = 5, jobs = env_threads();
    bool flip = false, overlay = false;
    double sigma = 2.0, alpha = 0.6;
    Overrides over;

    auto* gen = app.add_subcommand("gen", "generate a synthetic planted-pattern dataset");
    gen->add_option("--config", config_path, "key=value config file");
    gen->add_option("--out", out_dir, "output dataset directory")->required();
    gen->add_option("--seed", over.seed, "")->group(""); // accepted for symmetry, affects train seed only
    gen->add_option("--noise-sigma", over.noise_sigma, "pixel noise level");
    gen->add_option("--fraction", over.fraction, "fraction of frames carrying the class pattern");

    auto* tr = app.add_subcommand("train", "train a model on a generated dataset");
    tr->add_option("--config", config_path, "key=value config file");
    tr->add_option("--data", data_dir, "dataset directory (train/ and test/ inside)")->required();
    tr->add_option("--out", out_dir, "output directory")->required();
    tr->add_option("--resume", resume, "checkpoint to continue from");
    add_override_flags(tr, over);

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint under the test protocol");
    ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    ev->add_option("--data", data_dir, "dataset directory (e.g. data/test)")->required();
    ev->add_option("--segments", segments, "temporal segments");
    ev->add_option("--crops", crops, "crops per frame (1 or 5)");
    ev->add_flag("--flip", flip, "add horizontal flips");
    ev->add_option("--mode", mode_name, "ensemble|concat");
    ev->add_option("--per-class", per_class_csv, "write per-class accuracies to this CSV");

    auto* vz = app.add_subcommand("viz", "render per-glimpse influence heatmaps");
    vz->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    vz->add_option("--data", data_dir, "dataset directory")->required();
    vz->add_option("--video", video_id, "video id from the manifest")->required();
    vz->add_option("--out", out_dir, "output directory")->required();
    vz->add_option("--segments", viz_segments, "frames to sample");
    vz->add_option("--suppression", suppression, "k,m: decrement maps for glimpse k, top m channels");
    vz->add_option("--sigma", sigma, "gaussian blur sigma (pixels)");
    vz->add_option("--colormap", colormap, "gray|jet");
    vz->add_option("--alpha", alpha, "heatmap weight when overlaying");
    vz->add_flag("--overlay", overlay, "blend heatmaps over the input frame");

    auto* sw = app.add_subcommand("sweep", "run an ablation sweep");
    sw->add_option("kind", kind, "losses|glimpses|components|parallel")->required();
    sw->add_option("--config", config_path, "key=value config file");
    sw->add_option("--out", out_dir, "output directory")->required();
    sw->add_option("--k", k_list, "glimpse counts, e.g. 1,2,3,4,5");
    sw->add_option("--seeds", seeds_text, "run seeds, e.g. 1,2,3,4,5");
    sw->add_option("--jobs", jobs, "parallel cells (default: RRA_THREADS or 1)");
    add_override_flags(sw, over);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (gen->parsed()) return cmd_gen(config_path, over, out_dir);
        if (tr->parsed()) return cmd_train(config_path, over, data_dir, out_dir, resume);
        if (ev->parsed())
            return cmd_eval(checkpoint, data_dir, segments, crops, flip, mode_name, per_class_csv);
        if (vz->parsed())
            return cmd_viz(checkpoint, data_dir, video_id, out_dir, viz_segments, suppression, sigma,
                           colormap, alpha, overlay);
        if (sw->parsed())
            return cmd_sweep(kind, config_path, over, out_dir, k_list, seeds_text, jobs);
    } catch (const TrainDiverged& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDiverged;
    } catch (const CheckpointError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitCheckpoint;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
