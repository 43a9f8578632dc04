#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "samlab/config.hpp"

namespace samlab {

inline constexpr const char* kToolVersion = "samlab 0.1.0";

// Pipeline stages in dependency order. A run can start late (resuming from
// checkpoints already in out_dir) and stop early.
enum class Stage { Pretrain, Finetune, Merge, Diagnostics };

Stage stage_from_name(const std::string& name);  // ConfigError on unknown names
std::string stage_name(Stage stage);

// Outcome of one merge method, evaluated on the test splits.
struct MergeOutcome {
    std::string method;
    double best_alpha = 0.0;
    double best_prune = 0.0;          // ties only; 0 otherwise
    double search_score = 0.0;        // mean validation accuracy of the winner
    std::vector<double> task_abs_accuracy;
    std::vector<double> task_norm_accuracy;  // abs / fine-tuned; NaN = undefined (omitted in JSON)
    double mean_abs_accuracy = 0.0;
    double mean_norm_accuracy = 0.0;  // mean over the defined ratios
    std::string checkpoint_path;
    std::string search_table_path;
};

struct StageRecord {
    std::string name;
    double wall_seconds = 0.0;
};

// Everything a run produced. Identical configs and master seed give
// identical manifests except for the wall-clock fields.
struct RunManifest {
    std::string tool_version;
    std::string status;  // "ok" or "failed:<stage>"
    uint64_t master_seed = 0;
    std::string config_echo;  // canonical JSON of the filled config
    std::vector<std::string> defaults_applied;
    std::string pretrain_checkpoint;
    std::vector<std::string> task_checkpoints;
    std::vector<double> task_accuracies;      // fine-tuned, on test splits
    std::vector<double> task_lambda_max;      // filled when task_eigenvalues is on
    std::vector<MergeOutcome> merges;
    std::vector<std::string> diagnostic_artifacts;
    std::vector<StageRecord> stages;
    std::map<std::string, std::string> file_digests;  // path -> content digest
};

void write_manifest(const RunManifest& manifest, const std::string& path);
RunManifest read_manifest(const std::string& path);  // IoError on malformed files

// Model spec and splits derived from a config: the synthetic suite (with its
// seed derived from the master seed) or the configured CSV files.
struct PreparedData {
    ModelSpec spec;
    bool has_pretrain = false;
    TaskDataset pretrain_train, pretrain_val;
    std::vector<TaskSplits> tasks;
};

PreparedData prepare_experiment_data(const ExperimentConfig& config);

// Runs stages [first, last] of: pretrain -> fine-tune each task -> merge +
// coefficient search -> diagnostics, then writes out_dir/manifest.json.
// Starting after Pretrain loads earlier checkpoints from out_dir. A stage
// failure writes a failed-status manifest plus an out_dir/FAILED marker and
// rethrows as StageError; on success the marker is removed.
RunManifest run_pipeline(const ExperimentConfig& config, Stage first = Stage::Pretrain,
                         Stage last = Stage::Diagnostics);

}  // namespace samlab
