#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "samlab/nn.hpp"

namespace samlab {

// Synthetic multi-task suite: every task draws from C Gaussian clusters laid
// out on a circle of radius `separation` in the first coordinate 2-plane.
// Task t rotates that layout by rotation_deg[t] and relabels clusters by a
// cyclic class shift of t, so tasks share geometry but genuinely conflict.
struct SuiteConfig {
    int num_tasks = 4;
    int input_dim = 16;
    int num_classes = 4;
    int train_per_task = 512;
    int test_per_task = 256;
    int pretrain_samples = 2048;
    double separation = 3.0;
    double noise_scale = 1.0;
    std::vector<double> rotation_deg = {0.0, 25.0, 50.0, 75.0};
    double val_ratio = 0.1;
    uint64_t seed = 0;
};

struct TaskSplits {
    TaskDataset train;
    TaskDataset val;
    TaskDataset test;
};

struct TaskSuite {
    TaskDataset pretrain;  // task_id -1: identity labels over the task mixture
    std::vector<TaskSplits> tasks;
    SuiteConfig config;
};

// Deterministic in config.seed; every stream is sub-seeded by purpose and
// task index. Validation is carved from the train draw class-by-class
// (floor(val_ratio * per-class count) rows each), which keeps every emitted
// split balanced within one sample per class.
TaskSuite generate_suite(const SuiteConfig& config);

// Seeded shuffle, then partition: val takes the first floor(val_ratio * N)
// shuffled rows, train the rest. Returned as (train, val).
std::pair<TaskDataset, TaskDataset> split(const TaskDataset& dataset, double val_ratio,
                                          uint64_t seed);

// CSV with header "f0,...,f{d-1},label"; values at full round-trip precision.
void save_csv(const TaskDataset& dataset, const std::string& path);

// Strict reader for the same format; errors cite 1-based line numbers.
TaskDataset load_csv(const std::string& path, int num_classes);

}  // namespace samlab
