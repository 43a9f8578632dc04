#include "samlab/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "samlab/parallel.hpp"
#include "samlab/rng.hpp"

namespace samlab {

namespace {

std::vector<double> make_axis(double lo, double hi, int n) {
    if (n < 1) throw std::invalid_argument("grid axis needs at least one point");
    std::vector<double> axis(static_cast<size_t>(n));
    if (n == 1) {
        axis[0] = lo;
        return axis;
    }
    if (!(hi > lo)) throw std::invalid_argument("grid axis needs hi > lo");
    double step = (hi - lo) / (n - 1);
    for (int i = 0; i < n; ++i) axis[static_cast<size_t>(i)] = lo + i * step;
    return axis;
}

void check_model_binding(const ParamVector& params, const ModelSpec& spec, const char* who) {
    if (params.spec_hash != spec_digest(spec))
        throw std::invalid_argument(std::string(who) + ": checkpoint does not match the model spec");
}

void check_tau_binding(const TaskVector& tau, const ParamVector& theta_0, uint64_t base_digest,
                       const char* who) {
    if (tau.base_hash != base_digest)
        throw std::invalid_argument(std::string(who) +
                                    ": task vector was not taken against this base");
    if (tau.values.size() != theta_0.values.size())
        throw std::invalid_argument(std::string(who) + ": task vector length mismatch");
}

void check_dataset(const TaskDataset& data, const ModelSpec& spec, const char* who) {
    if (data.size() < 1) throw std::invalid_argument(std::string(who) + ": dataset is empty");
    if (data.features.cols != spec.layer_sizes.front())
        throw std::invalid_argument(std::string(who) + ": dataset width does not match the model");
}

// One merged model per cell; every scan kind goes through this single path so
// that scans differing only in an all-zero offset are bit-identical.
GridScan scan_core(const ParamVector& theta_0, const TaskVector& tau_1, const TaskVector& tau_2,
                   const std::vector<double>& offset, const ModelSpec& spec,
                   const TaskDataset& data_1, const TaskDataset& data_2, const GridSpec& grid,
                   int threads, GridMetric metric) {
    GridScan scan;
    scan.metric = metric;
    scan.task_a = tau_1.task_id;
    scan.task_b = tau_2.task_id;
    scan.alpha1_axis = make_axis(grid.lo1, grid.hi1, grid.n1);
    scan.alpha2_axis = make_axis(grid.lo2, grid.hi2, grid.n2);
    scan.values = Matrix(grid.n1, grid.n2);

    const size_t dim = theta_0.values.size();
    const bool xi = metric != GridMetric::JtlLoss;

    // Single-task reference predictions depend on one axis each; the folded
    // extras never enter them.
    std::vector<Matrix> ref_1, ref_2;
    if (xi) {
        ref_1.reserve(scan.alpha1_axis.size());
        for (double a : scan.alpha1_axis) {
            ParamVector p = theta_0;
            for (size_t k = 0; k < dim; ++k) p.values[k] = theta_0.values[k] + a * tau_1.values[k];
            ref_1.push_back(forward(p, spec, data_1.features));
        }
        ref_2.reserve(scan.alpha2_axis.size());
        for (double a : scan.alpha2_axis) {
            ParamVector p = theta_0;
            for (size_t k = 0; k < dim; ++k) p.values[k] = theta_0.values[k] + a * tau_2.values[k];
            ref_2.push_back(forward(p, spec, data_2.features));
        }
    }

    parallel_for(grid.n1 * grid.n2, threads, [&](int cell) {
        int i = cell / grid.n2;
        int j = cell % grid.n2;
        double a1 = scan.alpha1_axis[static_cast<size_t>(i)];
        double a2 = scan.alpha2_axis[static_cast<size_t>(j)];
        ParamVector merged = theta_0;
        for (size_t k = 0; k < dim; ++k)
            merged.values[k] = theta_0.values[k] + a1 * tau_1.values[k] + a2 * tau_2.values[k] +
                               offset[k];
        double value;
        if (xi) {
            value = output_distance(ref_1[static_cast<size_t>(i)], forward(merged, spec, data_1.features)) +
                    output_distance(ref_2[static_cast<size_t>(j)], forward(merged, spec, data_2.features));
        } else {
            value = loss(merged, spec, data_1) + loss(merged, spec, data_2);
        }
        scan.values.at(i, j) = value;
    });

    for (int i = 0; i < grid.n1; ++i)
        for (int j = 0; j < grid.n2; ++j)
            if (!std::isfinite(scan.values.at(i, j)))
                throw std::runtime_error("grid scan produced a non-finite value at cell (" +
                                         std::to_string(i) + ", " + std::to_string(j) + ")");
    return scan;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

}  // namespace

double output_distance(const Matrix& logits_a, const Matrix& logits_b) {
    if (logits_a.rows != logits_b.rows || logits_a.cols != logits_b.cols)
        throw std::invalid_argument("output_distance: logit shapes differ");
    if (logits_a.rows < 1 || logits_a.cols < 1)
        throw std::invalid_argument("output_distance: logits are empty");
    int differ = 0;
    for (int i = 0; i < logits_a.rows; ++i) {
        int pa = 0, pb = 0;
        for (int j = 1; j < logits_a.cols; ++j) {
            if (logits_a.at(i, j) > logits_a.at(i, pa)) pa = j;
            if (logits_b.at(i, j) > logits_b.at(i, pb)) pb = j;
        }
        if (pa != pb) ++differ;
    }
    return static_cast<double>(differ) / logits_a.rows;
}

GridScan disentanglement_grid_pair(const ParamVector& theta_0, const TaskVector& tau_1,
                                   const TaskVector& tau_2, const ModelSpec& spec,
                                   const TaskDataset& data_1, const TaskDataset& data_2,
                                   const GridSpec& grid, int threads) {
    check_model_binding(theta_0, spec, "disentanglement_grid_pair");
    uint64_t base = param_digest(theta_0);
    check_tau_binding(tau_1, theta_0, base, "disentanglement_grid_pair");
    check_tau_binding(tau_2, theta_0, base, "disentanglement_grid_pair");
    check_dataset(data_1, spec, "disentanglement_grid_pair");
    check_dataset(data_2, spec, "disentanglement_grid_pair");
    std::vector<double> offset(theta_0.values.size(), 0.0);
    return scan_core(theta_0, tau_1, tau_2, offset, spec, data_1, data_2, grid, threads,
                     GridMetric::XiPair);
}

GridScan disentanglement_grid_all(const ParamVector& theta_0,
                                  const std::vector<TaskVector>& all_taus, int task_a, int task_b,
                                  const ModelSpec& spec, const TaskDataset& data_a,
                                  const TaskDataset& data_b, double fixed_alpha,
                                  const GridSpec& grid, int threads) {
    check_model_binding(theta_0, spec, "disentanglement_grid_all");
    if (all_taus.size() < 2)
        throw std::invalid_argument("disentanglement_grid_all: need at least two task vectors");
    int n = static_cast<int>(all_taus.size());
    if (task_a < 0 || task_a >= n || task_b < 0 || task_b >= n || task_a == task_b)
        throw std::invalid_argument("disentanglement_grid_all: bad pair indices");
    if (!std::isfinite(fixed_alpha))
        throw std::invalid_argument("disentanglement_grid_all: fixed_alpha must be finite");
    uint64_t base = param_digest(theta_0);
    for (const TaskVector& tau : all_taus)
        check_tau_binding(tau, theta_0, base, "disentanglement_grid_all");
    check_dataset(data_a, spec, "disentanglement_grid_all");
    check_dataset(data_b, spec, "disentanglement_grid_all");

    std::vector<double> offset(theta_0.values.size(), 0.0);
    std::vector<int> others;
    for (int s = 0; s < n; ++s) {
        if (s == task_a || s == task_b) continue;
        const TaskVector& tau = all_taus[static_cast<size_t>(s)];
        for (size_t k = 0; k < offset.size(); ++k) offset[k] += fixed_alpha * tau.values[k];
        others.push_back(tau.task_id);
    }
    GridScan scan = scan_core(theta_0, all_taus[static_cast<size_t>(task_a)],
                              all_taus[static_cast<size_t>(task_b)], offset, spec, data_a, data_b,
                              grid, threads, GridMetric::XiAll);
    scan.fixed_alpha = fixed_alpha;
    scan.other_tasks = std::move(others);
    return scan;
}

GridScan jtl_landscape_grid(const ParamVector& theta_0, const TaskVector& tau_1,
                            const TaskVector& tau_2, const std::vector<TaskVector>& extra_taus,
                            double fixed_alpha, const ModelSpec& spec, const TaskDataset& data_1,
                            const TaskDataset& data_2, const GridSpec& grid, int threads) {
    check_model_binding(theta_0, spec, "jtl_landscape_grid");
    if (!std::isfinite(fixed_alpha))
        throw std::invalid_argument("jtl_landscape_grid: fixed_alpha must be finite");
    uint64_t base = param_digest(theta_0);
    check_tau_binding(tau_1, theta_0, base, "jtl_landscape_grid");
    check_tau_binding(tau_2, theta_0, base, "jtl_landscape_grid");
    check_dataset(data_1, spec, "jtl_landscape_grid");
    check_dataset(data_2, spec, "jtl_landscape_grid");

    std::vector<double> offset(theta_0.values.size(), 0.0);
    std::vector<int> others;
    for (const TaskVector& tau : extra_taus) {
        check_tau_binding(tau, theta_0, base, "jtl_landscape_grid");
        for (size_t k = 0; k < offset.size(); ++k) offset[k] += fixed_alpha * tau.values[k];
        others.push_back(tau.task_id);
    }
    GridScan scan = scan_core(theta_0, tau_1, tau_2, offset, spec, data_1, data_2, grid, threads,
                              GridMetric::JtlLoss);
    scan.fixed_alpha = fixed_alpha;
    scan.other_tasks = std::move(others);
    return scan;
}

CtlResult ctl_block_metric(const ParamVector& theta_0, const TaskVector& tau_s,
                           const TaskVector& tau_t, const ModelSpec& spec, const Matrix& inputs,
                           double lambda) {
    check_model_binding(theta_0, spec, "ctl_block_metric");
    uint64_t base = param_digest(theta_0);
    check_tau_binding(tau_s, theta_0, base, "ctl_block_metric");
    check_tau_binding(tau_t, theta_0, base, "ctl_block_metric");
    if (inputs.rows < 1) throw std::invalid_argument("ctl_block_metric: no input rows");
    if (inputs.cols != spec.layer_sizes.front())
        throw std::invalid_argument("ctl_block_metric: input width does not match the model");
    if (!std::isfinite(lambda))
        throw std::invalid_argument("ctl_block_metric: lambda must be finite");

    const size_t dim = theta_0.values.size();
    ParamVector mid = theta_0, s2 = theta_0, t2 = theta_0;
    for (size_t k = 0; k < dim; ++k) {
        mid.values[k] = theta_0.values[k] + lambda * (tau_s.values[k] + tau_t.values[k]);
        s2.values[k] = theta_0.values[k] + (2.0 * lambda) * tau_s.values[k];
        t2.values[k] = theta_0.values[k] + (2.0 * lambda) * tau_t.values[k];
    }

    CtlResult res;
    int blocks = spec.num_layers();
    res.per_block.resize(static_cast<size_t>(blocks), 0.0);
    for (int b = 0; b < blocks; ++b) {
        Matrix u = layer_features(mid, spec, inputs, b);
        Matrix fa = layer_features(s2, spec, inputs, b);
        Matrix fb = layer_features(t2, spec, inputs, b);
        double acc = 0.0;
        for (int i = 0; i < inputs.rows; ++i) {
            double uv = 0.0, uu = 0.0, vv = 0.0;
            for (int j = 0; j < u.cols; ++j) {
                double ux = u.at(i, j);
                double vx = 0.5 * fa.at(i, j) + 0.5 * fb.at(i, j);
                uv += ux * vx;
                uu += ux * ux;
                vv += vx * vx;
            }
            if (uu == 0.0 || vv == 0.0) {
                ++res.zero_norm_pairs;
                continue;  // degenerate direction: counts as no deviation
            }
            double cosine = uv / (std::sqrt(uu) * std::sqrt(vv));
            cosine = std::min(1.0, std::max(-1.0, cosine));
            acc += 1.0 - cosine;
        }
        res.per_block[static_cast<size_t>(b)] = acc / inputs.rows;
    }
    return res;
}

Curve loss_barrier_path(const ParamVector& theta_a, const ParamVector& theta_b,
                        const ModelSpec& spec, const TaskDataset& dataset, int n_points) {
    check_model_binding(theta_a, spec, "loss_barrier_path");
    check_model_binding(theta_b, spec, "loss_barrier_path");
    check_dataset(dataset, spec, "loss_barrier_path");
    if (n_points < 2) throw std::invalid_argument("loss_barrier_path: need at least two points");

    Curve curve;
    curve.kind = CurveKind::LossBarrier;
    const size_t dim = theta_a.values.size();
    ParamVector p = theta_a;
    for (int k = 0; k < n_points; ++k) {
        double s = static_cast<double>(k) / (n_points - 1);
        for (size_t i = 0; i < dim; ++i)
            p.values[i] = (1.0 - s) * theta_a.values[i] + s * theta_b.values[i];
        curve.abscissa.push_back(s);
        curve.values.push_back(loss(p, spec, dataset));
    }
    return curve;
}

double jtl_gap_fn(const std::function<double(const std::vector<double>&)>& f,
                  const std::vector<double>& theta_s, const std::vector<double>& theta_t,
                  double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw std::invalid_argument("jtl_gap: alpha must lie in [0, 1]");
    if (theta_s.size() != theta_t.size())
        throw std::invalid_argument("jtl_gap: endpoint lengths differ");
    std::vector<double> mix(theta_s.size());
    for (size_t i = 0; i < mix.size(); ++i)
        mix[i] = alpha * theta_s[i] + (1.0 - alpha) * theta_t[i];
    return f(mix) - alpha * f(theta_s) - (1.0 - alpha) * f(theta_t);
}

double jtl_gap(const ParamVector& theta_s, const ParamVector& theta_t, const ModelSpec& spec,
               double alpha, const TaskDataset& data_s, const TaskDataset& data_t) {
    check_model_binding(theta_s, spec, "jtl_gap");
    check_model_binding(theta_t, spec, "jtl_gap");
    check_dataset(data_s, spec, "jtl_gap");
    check_dataset(data_t, spec, "jtl_gap");
    uint64_t h = theta_s.spec_hash;
    auto joint = [&](const std::vector<double>& v) {
        ParamVector p;
        p.values = v;
        p.spec_hash = h;
        return loss(p, spec, data_s) + loss(p, spec, data_t);
    };
    return jtl_gap_fn(joint, theta_s.values, theta_t.values, alpha);
}

EigenResult power_iteration(
    const std::function<void(const std::vector<double>&, std::vector<double>&)>& apply, size_t dim,
    int max_iters, double tol, double shift, uint64_t start_seed) {
    if (dim == 0) throw std::invalid_argument("power_iteration: zero-dimensional operator");
    if (max_iters < 1) throw std::invalid_argument("power_iteration: max_iters must be positive");
    if (!(tol > 0.0)) throw std::invalid_argument("power_iteration: tol must be positive");
    if (!std::isfinite(shift)) throw std::invalid_argument("power_iteration: shift must be finite");

    Rng rng(start_seed);
    std::vector<double> v(dim);
    for (double& x : v) x = rng.normal();
    double nv = std::sqrt(dot(v, v));
    if (nv == 0.0) {
        v.assign(dim, 0.0);
        v[0] = 1.0;
    } else {
        for (double& x : v) x /= nv;
    }

    std::vector<double> w(dim);
    EigenResult res;
    double prev_q = 0.0;
    bool have_prev = false;
    for (int k = 0; k < max_iters; ++k) {
        apply(v, w);
        if (w.size() != dim) throw std::invalid_argument("power_iteration: operator changed size");
        if (shift != 0.0)
            for (size_t i = 0; i < dim; ++i) w[i] += shift * v[i];
        double q = dot(v, w);  // Rayleigh quotient of the shifted operator, ||v|| = 1
        res.iterations = k + 1;
        res.value = q - shift;
        if (have_prev && std::abs(q - prev_q) < tol * std::max(1.0, std::abs(q))) {
            res.converged = true;
            return res;
        }
        prev_q = q;
        have_prev = true;
        double nw = std::sqrt(dot(w, w));
        if (nw == 0.0) {
            // v sits in the kernel of the shifted operator: exact eigenvector.
            res.value = 0.0 - shift;
            res.converged = true;
            return res;
        }
        for (size_t i = 0; i < dim; ++i) v[i] = w[i] / nw;
    }
    return res;  // iteration cap: best estimate, converged stays false
}

EigenResult dominant_eigenvalue(const ParamVector& params, const ModelSpec& spec,
                                const TaskDataset& dataset, int max_iters, double tol,
                                double shift, uint64_t seed) {
    check_model_binding(params, spec, "dominant_eigenvalue");
    check_dataset(dataset, spec, "dominant_eigenvalue");
    uint64_t h = params.spec_hash;
    auto apply = [&](const std::vector<double>& v, std::vector<double>& out) {
        ParamVector dir;
        dir.values = v;
        dir.spec_hash = h;
        out = hvp(params, spec, dataset, dir, HvpMethod::Exact).values;
    };
    return power_iteration(apply, params.values.size(), max_iters, tol, shift, seed);
}

Curve eigenvalue_along_segment(const ParamVector& theta_0, const ParamVector& theta_t,
                               const ModelSpec& spec, const TaskDataset& dataset, int n_points,
                               int max_iters, double tol, double shift, uint64_t seed) {
    check_model_binding(theta_0, spec, "eigenvalue_along_segment");
    check_model_binding(theta_t, spec, "eigenvalue_along_segment");
    check_dataset(dataset, spec, "eigenvalue_along_segment");
    if (n_points < 2)
        throw std::invalid_argument("eigenvalue_along_segment: need at least two points");

    Curve curve;
    curve.kind = CurveKind::EigenvalueSegment;
    const size_t dim = theta_0.values.size();
    ParamVector p = theta_0;
    for (int k = 0; k < n_points; ++k) {
        double g = static_cast<double>(k) / (n_points - 1);
        for (size_t i = 0; i < dim; ++i)
            p.values[i] = theta_0.values[i] + g * (theta_t.values[i] - theta_0.values[i]);
        EigenResult r = dominant_eigenvalue(p, spec, dataset, max_iters, tol, shift,
                                            sub_seed(seed, "segment_point", static_cast<uint64_t>(k)));
        curve.abscissa.push_back(g);
        curve.values.push_back(r.value);
        if (!r.converged) ++curve.non_converged;
    }
    return curve;
}

BoundCheck jtl_bound_check(const ParamVector& theta_s, const ParamVector& theta_t,
                           const ModelSpec& spec, double alpha, const TaskDataset& data_s,
                           const TaskDataset& data_t, int max_iters, double tol, uint64_t seed) {
    double delta = jtl_gap(theta_s, theta_t, spec, alpha, data_s, data_t);
    EigenResult es =
        dominant_eigenvalue(theta_s, spec, data_s, max_iters, tol, 0.0, sub_seed(seed, "bound_s"));
    EigenResult et =
        dominant_eigenvalue(theta_t, spec, data_t, max_iters, tol, 0.0, sub_seed(seed, "bound_t"));
    double dist2 = 0.0;
    for (size_t i = 0; i < theta_s.values.size(); ++i) {
        double d = theta_t.values[i] - theta_s.values[i];
        dist2 += d * d;
    }
    BoundCheck out;
    out.abs_delta = std::abs(delta);
    out.bound = 0.5 * alpha * (1.0 - alpha) * (es.value + et.value) * dist2;
    out.residual = std::max(0.0, out.abs_delta - out.bound);
    out.eigen_converged = es.converged && et.converged;
    return out;
}

}  // namespace samlab
