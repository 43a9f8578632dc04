#pragma once

#include <cstdint>
#include <vector>

#include "samlab/nn.hpp"

namespace samlab {

// Difference between a fine-tuned checkpoint and the base it started from.
// base_hash is the param_digest of that base; every combining operation
// demands matching hashes so vectors from different bases never mix silently.
struct TaskVector {
    std::vector<double> values;
    uint64_t base_hash = 0;
    int task_id = 0;

    size_t size() const { return values.size(); }
};

enum class MergeMethod { Average, Arithmetic, Ties };

// Sign election rule for ties_merge: summed mass (default) or a vote count
// over nonzero entries. Both elect + on an exact tie.
enum class SignElection { TotalMass, CountMajority };

struct MergeConfig {
    MergeMethod method = MergeMethod::Arithmetic;
    double alpha = 1.0;
    double ties_prune_fraction = 0.0;
};

TaskVector task_vector(const ParamVector& theta_t, const ParamVector& theta_0, int task_id = 0);

// theta_0 + sum_t alphas[t] * taus[t].
ParamVector merge_arithmetic(const ParamVector& theta_0, const std::vector<TaskVector>& taus,
                             const std::vector<double>& alphas);

// Elementwise arithmetic mean of the checkpoints.
ParamVector merge_average(const std::vector<ParamVector>& thetas);

// Zeroes the floor(prune_fraction * len) smallest-magnitude coordinates;
// magnitude ties are broken by zeroing the lower index first.
TaskVector ties_trim(const TaskVector& tau, double prune_fraction);

// Trim each vector, elect a per-coordinate sign, average the entries whose
// sign matches (coordinates with no survivor become 0), then apply the
// merged vector: theta_0 + alpha * tau_merged.
ParamVector ties_merge(const ParamVector& theta_0, const std::vector<TaskVector>& taus,
                       double alpha, double prune_fraction,
                       SignElection election = SignElection::TotalMass);

struct SearchEntry {
    double alpha = 0.0;
    double prune_fraction = 0.0;
    std::vector<double> per_task_accuracy;
    double score = 0.0;  // unweighted mean of the per-task accuracies
};

struct SearchResult {
    MergeConfig best;
    ParamVector merged;
    std::vector<SearchEntry> table;
};

std::vector<double> default_alpha_grid();  // {0.1, 0.3, 0.5, 0.7, 0.9, 1.0}
std::vector<double> default_prune_grid();  // {0.7, 0.8, 0.9}

// Grid search with one alpha shared across tasks (crossed with the prune grid
// for ties). Score = mean validation accuracy; ties prefer the smaller alpha,
// then the smaller prune fraction. Averaging has nothing to search and yields
// a single-row table.
SearchResult coefficient_search(const ParamVector& theta_0, const ModelSpec& spec,
                                const std::vector<TaskVector>& taus, MergeMethod method,
                                const std::vector<TaskDataset>& val_sets,
                                const std::vector<double>& alpha_grid = default_alpha_grid(),
                                const std::vector<double>& prune_grid = default_prune_grid());

}  // namespace samlab
