#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rra/config.hpp"
#include "rra/model.hpp"
#include "rra/synthetic.hpp"
#include "rra/trainer.hpp"

namespace rra {

/// Everything one run needs, resolvable from a KeyValueConfig and
/// serializable back to one (canonical key set, documented in the README).
struct ExperimentConfig {
    SyntheticSpec data;
    std::int64_t input_hw = 32;
    std::vector<std::int64_t> backbone_channels{8, 16, 32};
    bool backbone_batchnorm = true;
    int glimpses = 4;
    RraVariant variant = RraVariant::full;
    bool parallel = false;
    double dropout = 0.2;
    TrainConfig train;

    static ExperimentConfig from(const KeyValueConfig& kv);
    KeyValueConfig to_key_values() const;
    std::string snapshot() const { return to_key_values().serialize(); }

    ModelConfig<float> model_config() const;
    void validate() const;
};

/// One sweep cell: a named variant evaluated over several seeds.
struct SweepRow {
    std::string cell;
    std::vector<double> ensemble_acc; // per seed
    std::vector<double> concat_acc;   // per seed
    double median_ensemble = 0.0;
    double median_concat = 0.0;
    std::optional<bool> converged;          // set by the loss sweep
    std::optional<std::int64_t> param_count; // set by the parallel comparison
};

struct SweepResult {
    std::string kind;
    std::vector<std::uint64_t> seeds;
    std::vector<SweepRow> rows;

    std::string render_table() const;
    void write_csv(const std::filesystem::path& path) const;
};

struct HarnessOptions {
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    int jobs = 1; // >1 runs independent cells on worker threads
    std::filesystem::path cell_dir; // when set, completed cells are cached and reused
};

double median(std::vector<double> values);

/// Trains one configuration and returns (ensemble accuracy, concat accuracy)
/// on the test split.
std::pair<double, double> run_cell(const ExperimentConfig& cfg, const SyntheticDataset& data,
                                   std::uint64_t seed);

/// All seven combinations of the three loss terms, both score columns each.
/// The ensemble-only cell carries the convergence flag (non-converged when
/// median accuracy is below twice chance level).
SweepResult sweep_losses(const SyntheticDataset& data, const ExperimentConfig& base,
                         const HarnessOptions& options);

/// One model per glimpse count.
SweepResult sweep_glimpses(const SyntheticDataset& data, const ExperimentConfig& base,
                           const std::vector<int>& k_list, const HarnessOptions& options);

/// The six block ablations plus the full model.
SweepResult sweep_components(const SyntheticDataset& data, const ExperimentConfig& base,
                             const HarnessOptions& options);

/// Iterative glimpses versus the same-width parallel-glimpse baseline, with
/// parameter counts.
SweepResult compare_parallel(const SyntheticDataset& data, const ExperimentConfig& base,
                             const HarnessOptions& options);

} // namespace rra
