#include "rra/harness.hpp"

#include <algorithm>
#include <fstream>
#include <future>
#include <sstream>

namespace rra {

// ---------------------------------------------------------------------------
// ExperimentConfig
// ---------------------------------------------------------------------------

ExperimentConfig ExperimentConfig::from(const KeyValueConfig& kv) {
    ExperimentConfig c;
    c.data.num_classes = static_cast<int>(kv.get_int("classes", c.data.num_classes));
    c.data.train_per_class = static_cast<int>(kv.get_int("train_per_class", c.data.train_per_class));
    c.data.test_per_class = static_cast<int>(kv.get_int("test_per_class", c.data.test_per_class));
    c.data.frames_per_video = static_cast<int>(kv.get_int("frames_per_video", c.data.frames_per_video));
    c.data.frame_hw = static_cast<int>(kv.get_int("frame_size", c.data.frame_hw));
    c.data.channels = static_cast<int>(kv.get_int("channels", c.data.channels));
    c.data.discriminative_fraction = kv.get_double("fraction", c.data.discriminative_fraction);
    c.data.pattern_size = static_cast<int>(kv.get_int("pattern_size", c.data.pattern_size));
    c.data.distractor_count = static_cast<int>(kv.get_int("distractors", c.data.distractor_count));
    c.data.noise_sigma = kv.get_double("noise_sigma", c.data.noise_sigma);
    c.data.seed = static_cast<std::uint64_t>(kv.get_int("data_seed", static_cast<std::int64_t>(c.data.seed)));

    c.input_hw = kv.get_int("input_size", c.input_hw);
    c.backbone_channels = kv.get_int_list("backbone_channels", c.backbone_channels);
    c.backbone_batchnorm = kv.get_bool("backbone_batchnorm", c.backbone_batchnorm);
    c.glimpses = static_cast<int>(kv.get_int("glimpses", c.glimpses));
    c.variant = rra_variant_from(kv.get("variant", rra_variant_name(c.variant)));
    c.parallel = kv.get_bool("parallel", c.parallel);
    c.dropout = kv.get_double("dropout", c.dropout);

    c.train.loss = LossSpec::parse(kv.get("loss", c.train.loss.str()));
    c.train.lr = kv.get_double("lr", c.train.lr);
    c.train.lr_decay = kv.get_double("lr_decay", c.train.lr_decay);
    c.train.decay_every_epochs = kv.get_int("decay_every", c.train.decay_every_epochs);
    c.train.total_epochs = kv.get_int("epochs", c.train.total_epochs);
    c.train.batch_size = kv.get_int("batch_size", c.train.batch_size);
    c.train.freeze_backbone_until_epoch =
        kv.get_int("freeze_backbone_until", c.train.freeze_backbone_until_epoch);
    c.train.freeze_bn_stats = kv.get_bool("freeze_bn_stats", c.train.freeze_bn_stats);
    c.train.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<std::int64_t>(c.train.seed)));
    c.train.train_segments = kv.get_int("segments", c.train.train_segments);
    c.train.eval_every = kv.get_int("eval_every", c.train.eval_every);
    c.train.eval.segments = kv.get_int("eval_segments", c.train.eval.segments);
    c.train.eval.crops = static_cast<int>(kv.get_int("eval_crops", c.train.eval.crops));
    c.train.eval.flip = kv.get_bool("eval_flip", c.train.eval.flip);
    c.validate();
    return c;
}

KeyValueConfig ExperimentConfig::to_key_values() const {
    KeyValueConfig kv;
    kv.set("classes", std::to_string(data.num_classes));
    kv.set("train_per_class", std::to_string(data.train_per_class));
    kv.set("test_per_class", std::to_string(data.test_per_class));
    kv.set("frames_per_video", std::to_string(data.frames_per_video));
    kv.set("frame_size", std::to_string(data.frame_hw));
    kv.set("channels", std::to_string(data.channels));
    kv.set("fraction", format_double(data.discriminative_fraction));
    kv.set("pattern_size", std::to_string(data.pattern_size));
    kv.set("distractors", std::to_string(data.distractor_count));
    kv.set("noise_sigma", format_double(data.noise_sigma));
    kv.set("data_seed", std::to_string(data.seed));

    std::string channels_list;
    for (std::size_t i = 0; i < backbone_channels.size(); ++i) {
        if (i) channels_list += ',';
        channels_list += std::to_string(backbone_channels[i]);
    }
    kv.set("input_size", std::to_string(input_hw));
    kv.set("backbone_channels", channels_list);
    kv.set("backbone_batchnorm", backbone_batchnorm ? "true" : "false");
    kv.set("glimpses", std::to_string(glimpses));
    kv.set("variant", rra_variant_name(variant));
    kv.set("parallel", parallel ? "true" : "false");
    kv.set("dropout", format_double(dropout));

    kv.set("loss", train.loss.str());
    kv.set("lr", format_double(train.lr));
    kv.set("lr_decay", format_double(train.lr_decay));
    kv.set("decay_every", std::to_string(train.decay_every_epochs));
    kv.set("epochs", std::to_string(train.total_epochs));
    kv.set("batch_size", std::to_string(train.batch_size));
    kv.set("freeze_backbone_until", std::to_string(train.freeze_backbone_until_epoch));
    kv.set("freeze_bn_stats", train.freeze_bn_stats ? "true" : "false");
    kv.set("seed", std::to_string(train.seed));
    kv.set("segments", std::to_string(train.train_segments));
    kv.set("eval_every", std::to_string(train.eval_every));
    kv.set("eval_segments", std::to_string(train.eval.segments));
    kv.set("eval_crops", std::to_string(train.eval.crops));
    kv.set("eval_flip", train.eval.flip ? "true" : "false");
    return kv;
}

ModelConfig<float> ExperimentConfig::model_config() const {
    ModelConfig<float> mc;
    mc.backbone.in_channels = data.channels;
    mc.backbone.input_hw = input_hw;
    mc.backbone.stages.clear();
    for (const auto c : backbone_channels) mc.backbone.stages.push_back({c, 3, 2});
    mc.backbone.with_batchnorm = backbone_batchnorm;
    mc.num_classes = data.num_classes;
    mc.glimpses = glimpses;
    mc.variant = variant;
    mc.parallel_attention = parallel;
    mc.dropout = dropout;
    mc.init_seed = derive_seed(train.seed, fnv1a("init"));
    return mc;
}

void ExperimentConfig::validate() const {
    data.validate();
    train.validate();
    model_config().validate();
    if (input_hw > data.frame_hw)
        throw std::invalid_argument("config: input_size exceeds generated frame_size");
}

// ---------------------------------------------------------------------------
// sweeps
// ---------------------------------------------------------------------------

double median(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("median of empty set");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::pair<double, double> run_cell(const ExperimentConfig& cfg, const SyntheticDataset& data,
                                   std::uint64_t seed) {
    ExperimentConfig cell = cfg;
    cell.train.seed = seed;
    Model<float> model(cell.model_config());
    Adam<float> opt;
    TrainConfig tc = cell.train;
    tc.eval_every = 0;
    train(model, opt, data.train, {}, tc); // metrics kept by caller via run CSVs if needed
    ModelScorer<float> ens(model, cell.train.eval, PredictMode::ensemble);
    ModelScorer<float> cat(model, cell.train.eval, PredictMode::concat);
    const double acc_e = evaluate(ens, data.test, cell.data.num_classes).top1;
    const double acc_c = evaluate(cat, data.test, cell.data.num_classes).top1;
    return {acc_e, acc_c};
}

namespace {

struct Cell {
    std::string name;
    ExperimentConfig cfg;
};

std::filesystem::path cache_path(const HarnessOptions& opt, const std::string& kind,
                                 const std::string& cell, std::uint64_t seed) {
    return opt.cell_dir / (kind + "__" + cell + "__s" + std::to_string(seed) + ".txt");
}

std::optional<std::pair<double, double>> read_cache(const std::filesystem::path& p) {
    std::ifstream is(p);
    if (!is) return std::nullopt;
    double e = 0, c = 0;
    if (!(is >> e >> c)) return std::nullopt;
    return std::make_pair(e, c);
}

void write_cache(const std::filesystem::path& p, std::pair<double, double> acc) {
    std::ofstream os(p);
    os << format_double(acc.first) << ' ' << format_double(acc.second) << '\n';
}

SweepResult run_sweep(const std::string& kind, const std::vector<Cell>& cells,
                      const SyntheticDataset& data, const HarnessOptions& options) {
    SweepResult result;
    result.kind = kind;
    result.seeds = options.seeds;
    if (options.seeds.empty()) throw std::invalid_argument("sweep: needs at least one seed");
    if (!options.cell_dir.empty()) std::filesystem::create_directories(options.cell_dir);

    struct Job {
        std::size_t cell_index;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (std::size_t ci = 0; ci < cells.size(); ++ci)
        for (const auto seed : options.seeds) jobs.push_back({ci, seed});

    std::vector<std::pair<double, double>> accs(jobs.size());
    auto run_job = [&](std::size_t ji) {
        const auto& job = jobs[ji];
        const auto& cell = cells[job.cell_index];
        if (!options.cell_dir.empty()) {
            if (auto cached = read_cache(cache_path(options, kind, cell.name, job.seed))) {
                accs[ji] = *cached;
                return;
            }
        }
        accs[ji] = run_cell(cell.cfg, data, job.seed);
        if (!options.cell_dir.empty())
            write_cache(cache_path(options, kind, cell.name, job.seed), accs[ji]);
    };

    const int jobs_n = std::max(1, options.jobs);
    if (jobs_n == 1) {
        for (std::size_t ji = 0; ji < jobs.size(); ++ji) run_job(ji);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::future<void>> workers;
        for (int t = 0; t < jobs_n; ++t)
            workers.push_back(std::async(std::launch::async, [&] {
                for (std::size_t ji = next.fetch_add(1); ji < jobs.size(); ji = next.fetch_add(1))
                    run_job(ji);
            }));
        for (auto& w : workers) w.get();
    }

    for (std::size_t ci = 0; ci < cells.size(); ++ci) {
        SweepRow row;
        row.cell = cells[ci].name;
        for (std::size_t si = 0; si < options.seeds.size(); ++si) {
            const auto& acc = accs[ci * options.seeds.size() + si];
            row.ensemble_acc.push_back(acc.first);
            row.concat_acc.push_back(acc.second);
        }
        row.median_ensemble = median(row.ensemble_acc);
        row.median_concat = median(row.concat_acc);
        result.rows.push_back(std::move(row));
    }
    return result;
}

std::int64_t count_parameters(const ExperimentConfig& cfg) {
    Model<float> model(cfg.model_config());
    std::int64_t total = 0;
    for (const auto& p : model.parameters()) total += p.node->value.numel();
    return total;
}

} // namespace

SweepResult sweep_losses(const SyntheticDataset& data, const ExperimentConfig& base,
                         const HarnessOptions& options) {
    static const char* combos[] = {"lc", "le", "lc+le", "li", "lc+li", "le+li", "lc+li+le"};
    std::vector<Cell> cells;
    for (const char* combo : combos) {
        Cell cell;
        cell.name = combo;
        cell.cfg = base;
        cell.cfg.train.loss = LossSpec::parse(combo);
        cells.push_back(std::move(cell));
    }
    SweepResult result = run_sweep("losses", cells, data, options);
    const double chance = 1.0 / static_cast<double>(base.data.num_classes);
    for (auto& row : result.rows) row.converged = row.median_ensemble >= 2.0 * chance;
    return result;
}

SweepResult sweep_glimpses(const SyntheticDataset& data, const ExperimentConfig& base,
                           const std::vector<int>& k_list, const HarnessOptions& options) {
    if (k_list.empty()) throw std::invalid_argument("sweep_glimpses: empty glimpse-count list");
    std::vector<Cell> cells;
    for (const int k : k_list) {
        Cell cell;
        cell.name = "k" + std::to_string(k);
        cell.cfg = base;
        cell.cfg.glimpses = k;
        cells.push_back(std::move(cell));
    }
    return run_sweep("glimpses", cells, data, options);
}

SweepResult sweep_components(const SyntheticDataset& data, const ExperimentConfig& base,
                             const HarnessOptions& options) {
    static const RraVariant variants[] = {RraVariant::full,       RraVariant::avg_pool,
                                          RraVariant::spatial_attention, RraVariant::no_batchnorm,
                                          RraVariant::no_relu,    RraVariant::no_tanh,
                                          RraVariant::neg_relu};
    std::vector<Cell> cells;
    for (const auto v : variants) {
        Cell cell;
        cell.name = rra_variant_name(v);
        cell.cfg = base;
        cell.cfg.variant = v;
        cells.push_back(std::move(cell));
    }
    return run_sweep("components", cells, data, options);
}

SweepResult compare_parallel(const SyntheticDataset& data, const ExperimentConfig& base,
                             const HarnessOptions& options) {
    Cell iterative;
    iterative.name = "iterative";
    iterative.cfg = base;
    iterative.cfg.parallel = false;
    Cell parallel;
    parallel.name = "parallel";
    parallel.cfg = base;
    parallel.cfg.parallel = true;
    SweepResult result = run_sweep("parallel", {iterative, parallel}, data, options);
    result.rows[0].param_count = count_parameters(iterative.cfg);
    result.rows[1].param_count = count_parameters(parallel.cfg);
    return result;
}

// ---------------------------------------------------------------------------
// reporting
// ---------------------------------------------------------------------------

std::string SweepResult::render_table() const {
    std::ostringstream os;
    os << "sweep: " << kind << " (" << seeds.size() << " seeds, median)\n";
    os << "  cell           acc_ensemble  acc_concat";
    if (!rows.empty() && rows.front().param_count) os << "  params";
    if (!rows.empty() && rows.front().converged) os << "  converged";
    os << '\n';
    for (const auto& row : rows) {
        char line[160];
        std::snprintf(line, sizeof(line), "  %-14s %12.4f %11.4f", row.cell.c_str(), row.median_ensemble,
                      row.median_concat);
        os << line;
        if (row.param_count) os << "  " << *row.param_count;
        if (row.converged) os << "  " << (*row.converged ? "yes" : "no");
        os << '\n';
    }
    return os.str();
}

void SweepResult::write_csv(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write sweep CSV: " + path.string());
    os << "kind,cell,seed,acc_ensemble,acc_concat\n";
    for (const auto& row : rows)
        for (std::size_t si = 0; si < seeds.size(); ++si)
            os << kind << ',' << row.cell << ',' << seeds[si] << ',' << format_double(row.ensemble_acc[si])
               << ',' << format_double(row.concat_acc[si]) << '\n';
    for (const auto& row : rows) {
        os << kind << ',' << row.cell << ",median," << format_double(row.median_ensemble) << ','
           << format_double(row.median_concat) << '\n';
    }
    if (!os) throw std::runtime_error("sweep CSV write failed: " + path.string());
}

} // namespace rra
