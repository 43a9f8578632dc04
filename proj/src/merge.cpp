#include "samlab/merge.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace samlab {

namespace {

void check_shared_base(const ParamVector& theta_0, const std::vector<TaskVector>& taus) {
    uint64_t base = param_digest(theta_0);
    for (const TaskVector& tau : taus) {
        if (tau.base_hash != base)
            throw std::invalid_argument("merge: task vector was built from a different base");
        if (tau.values.size() != theta_0.values.size())
            throw std::invalid_argument("merge: task vector length does not match the base");
    }
}

}  // namespace

TaskVector task_vector(const ParamVector& theta_t, const ParamVector& theta_0, int task_id) {
    if (theta_t.spec_hash != theta_0.spec_hash)
        throw std::invalid_argument("task_vector: checkpoints bind to different specs");
    if (theta_t.values.size() != theta_0.values.size())
        throw std::invalid_argument("task_vector: checkpoint lengths differ");
    TaskVector tau;
    tau.base_hash = param_digest(theta_0);
    tau.task_id = task_id;
    tau.values.resize(theta_t.values.size());
    for (size_t i = 0; i < tau.values.size(); ++i)
        tau.values[i] = theta_t.values[i] - theta_0.values[i];
    return tau;
}

ParamVector merge_arithmetic(const ParamVector& theta_0, const std::vector<TaskVector>& taus,
                             const std::vector<double>& alphas) {
    if (alphas.size() != taus.size())
        throw std::invalid_argument("merge_arithmetic: one alpha per task vector required");
    check_shared_base(theta_0, taus);
    ParamVector out = theta_0;
    for (size_t t = 0; t < taus.size(); ++t)
        for (size_t i = 0; i < out.values.size(); ++i)
            out.values[i] += alphas[t] * taus[t].values[i];
    return out;
}

ParamVector merge_average(const std::vector<ParamVector>& thetas) {
    if (thetas.empty()) throw std::invalid_argument("merge_average: no models given");
    const ParamVector& first = thetas.front();
    for (const ParamVector& th : thetas) {
        if (th.spec_hash != first.spec_hash)
            throw std::invalid_argument("merge_average: models bind to different specs");
        if (th.values.size() != first.values.size())
            throw std::invalid_argument("merge_average: model lengths differ");
    }
    ParamVector out = first;
    for (size_t t = 1; t < thetas.size(); ++t)
        for (size_t i = 0; i < out.values.size(); ++i) out.values[i] += thetas[t].values[i];
    double inv = static_cast<double>(thetas.size());
    for (double& v : out.values) v /= inv;
    return out;
}

TaskVector ties_trim(const TaskVector& tau, double prune_fraction) {
    if (prune_fraction < 0.0 || prune_fraction >= 1.0)
        throw std::invalid_argument("ties_trim: prune_fraction must lie in [0, 1)");
    size_t len = tau.values.size();
    size_t k = static_cast<size_t>(std::floor(prune_fraction * static_cast<double>(len)));
    TaskVector out = tau;
    if (k == 0) return out;
    std::vector<size_t> order(len);
    for (size_t i = 0; i < len; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        double ma = std::abs(tau.values[a]), mb = std::abs(tau.values[b]);
        if (ma != mb) return ma < mb;
        return a < b;  // equal magnitudes: the lower index is pruned first
    });
    for (size_t i = 0; i < k; ++i) out.values[order[i]] = 0.0;
    return out;
}

ParamVector ties_merge(const ParamVector& theta_0, const std::vector<TaskVector>& taus,
                       double alpha, double prune_fraction, SignElection election) {
    check_shared_base(theta_0, taus);
    std::vector<TaskVector> trimmed;
    trimmed.reserve(taus.size());
    for (const TaskVector& tau : taus) trimmed.push_back(ties_trim(tau, prune_fraction));

    ParamVector out = theta_0;
    for (size_t i = 0; i < out.values.size(); ++i) {
        double mass = 0.0;
        int pos = 0, neg = 0;
        for (const TaskVector& t : trimmed) {
            double v = t.values[i];
            mass += v;
            if (v > 0.0) ++pos;
            if (v < 0.0) ++neg;
        }
        bool plus = election == SignElection::TotalMass ? (mass >= 0.0) : (pos >= neg);
        double sum = 0.0;
        int cnt = 0;
        for (const TaskVector& t : trimmed) {
            double v = t.values[i];
            if (v == 0.0) continue;  // trimmed or originally zero: not a survivor
            if ((v > 0.0) == plus) {
                sum += v;
                ++cnt;
            }
        }
        double merged = cnt > 0 ? sum / cnt : 0.0;
        out.values[i] += alpha * merged;
    }
    return out;
}

std::vector<double> default_alpha_grid() { return {0.1, 0.3, 0.5, 0.7, 0.9, 1.0}; }
std::vector<double> default_prune_grid() { return {0.7, 0.8, 0.9}; }

SearchResult coefficient_search(const ParamVector& theta_0, const ModelSpec& spec,
                                const std::vector<TaskVector>& taus, MergeMethod method,
                                const std::vector<TaskDataset>& val_sets,
                                const std::vector<double>& alpha_grid,
                                const std::vector<double>& prune_grid) {
    if (theta_0.spec_hash != spec_digest(spec))
        throw std::invalid_argument("coefficient_search: base was built for a different spec");
    if (taus.empty()) throw std::invalid_argument("coefficient_search: no task vectors");
    if (val_sets.size() != taus.size())
        throw std::invalid_argument("coefficient_search: one validation set per task required");
    check_shared_base(theta_0, taus);

    SearchResult res;
    double best_score = -1.0;
    auto consider = [&](double alpha, double prune, const ParamVector& merged) {
        SearchEntry entry;
        entry.alpha = alpha;
        entry.prune_fraction = prune;
        double total = 0.0;
        for (const TaskDataset& val : val_sets) {
            double acc = accuracy(merged, spec, val);
            entry.per_task_accuracy.push_back(acc);
            total += acc;
        }
        entry.score = total / static_cast<double>(val_sets.size());
        res.table.push_back(entry);
        // strictly-greater keeps the earliest grid point; ascending iteration
        // order turns that into the smaller-alpha-then-prune tie rule
        if (entry.score > best_score) {
            best_score = entry.score;
            res.best.method = method;
            res.best.alpha = alpha;
            res.best.ties_prune_fraction = prune;
            res.merged = merged;
        }
    };

    if (method == MergeMethod::Average) {
        std::vector<ParamVector> thetas;
        thetas.reserve(taus.size());
        for (const TaskVector& tau : taus)
            thetas.push_back(merge_arithmetic(theta_0, {tau}, {1.0}));
        ParamVector merged = merge_average(thetas);
        consider(1.0 / static_cast<double>(taus.size()), 0.0, merged);
        return res;
    }

    if (alpha_grid.empty()) throw std::invalid_argument("coefficient_search: empty alpha grid");
    std::vector<double> alphas = alpha_grid;
    std::sort(alphas.begin(), alphas.end());

    if (method == MergeMethod::Arithmetic) {
        for (double a : alphas) {
            std::vector<double> shared(taus.size(), a);
            consider(a, 0.0, merge_arithmetic(theta_0, taus, shared));
        }
        return res;
    }

    if (prune_grid.empty()) throw std::invalid_argument("coefficient_search: empty prune grid");
    std::vector<double> prunes = prune_grid;
    std::sort(prunes.begin(), prunes.end());
    for (double a : alphas)
        for (double p : prunes) consider(a, p, ties_merge(theta_0, taus, a, p));
    return res;
}

}  // namespace samlab
