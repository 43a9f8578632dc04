#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "samlab/diagnostics.hpp"
#include "samlab/merge.hpp"
#include "samlab/nn.hpp"
#include "samlab/optim.hpp"
#include "samlab/taskgen.hpp"

namespace samlab {

// One merge method to evaluate, with its search grids. Ties ignores nothing;
// the other methods ignore prune_grid.
struct MergeRequest {
    MergeMethod method = MergeMethod::Arithmetic;
    std::vector<double> alpha_grid = default_alpha_grid();
    std::vector<double> prune_grid = default_prune_grid();
};

// Which diagnostics the pipeline runs and with what knobs. Pair-indexed
// diagnostics run for every entry of `pairs` (defaulting to all unordered
// task pairs); eigenvalue work is per task.
struct DiagnosticsConfig {
    bool xi_pair = true;
    bool xi_all = false;
    bool jtl_grid = false;
    bool ctl = false;
    bool barrier = false;
    bool jtl_gap_curve = false;
    bool eigen_segment = false;
    bool task_eigenvalues = false;
    std::vector<std::pair<int, int>> pairs;
    double fixed_alpha = 0.3;
    double ctl_lambda = 0.3;
    GridSpec grid;
    int eigen_max_iters = 500;
    double eigen_tol = 1e-10;
    int eigen_points = 11;
    int barrier_points = 11;
    int gap_points = 11;
};

// Optimizer/sharpness/schedule triple for one training stage.
struct StageConfig {
    OptimizerConfig optimizer;
    SharpnessConfig sharpness;
    TrainConfig train;
};

// CSV-backed task data: train is split into train/val at runtime.
struct TaskDataConfig {
    std::string train_csv;
    std::string test_csv;
};

// Full experiment description. Exactly one data source is active: a
// generated suite (use_suite) or CSV files. Stage seeds are derived from
// `seed`, so the master seed alone pins every random choice.
struct ExperimentConfig {
    uint64_t seed = 0;
    std::string out_dir = "run_out";
    int threads = 0;  // 0 = hardware concurrency

    std::vector<int> hidden = {32, 32};
    Activation activation = Activation::Tanh;

    bool use_suite = true;
    SuiteConfig suite;  // suite.seed is ignored; the pipeline derives it

    int csv_num_classes = 0;
    double csv_val_ratio = 0.1;
    std::string pretrain_csv;  // optional; empty = start from random init
    std::vector<TaskDataConfig> task_csvs;

    StageConfig pretrain;            // sharpness is forced off for this stage
    StageConfig finetune;            // applied to every task...
    std::vector<StageConfig> per_task;  // ...unless one triple per task is given

    std::vector<MergeRequest> merges;  // default: average, arithmetic, ties
    DiagnosticsConfig diagnostics;

    // dotted names of fields the parser filled with defaults, for the manifest
    std::vector<std::string> defaults_applied;
};

// Strict JSON parse: unknown fields, wrong types, and missing required
// fields throw ConfigError naming the field. Defaults fill everything else
// and are recorded in defaults_applied.
ExperimentConfig parse_config(const std::string& path);

// Same parser over in-memory text; source_name labels error messages.
ExperimentConfig parse_config_text(const std::string& text,
                                   const std::string& source_name = "<inline>");

// Canonical JSON echo of a filled config: parse_config_text(config_to_json(c))
// reproduces c. Used for the manifest's config echo and determinism checks.
std::string config_to_json(const ExperimentConfig& config);

}  // namespace samlab
