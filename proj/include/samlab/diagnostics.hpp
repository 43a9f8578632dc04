#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "samlab/merge.hpp"
#include "samlab/nn.hpp"

namespace samlab {

// What a grid cell measures: prediction disentanglement against the two
// single-task models (pair form, or with the remaining task vectors folded in
// at a fixed coefficient), or the summed joint-task loss.
enum class GridMetric { XiPair, XiAll, JtlLoss };

// Axis layout of a 2-d coefficient scan. Defaults cover [-0.5, 1.5] on both
// axes with 21 evenly spaced points, which places 0.0 and 1.0 exactly on the
// lattice. A single-point axis pins the coefficient at `lo`.
struct GridSpec {
    double lo1 = -0.5;
    double hi1 = 1.5;
    int n1 = 21;
    double lo2 = -0.5;
    double hi2 = 1.5;
    int n2 = 21;
};

// Result of a 2-d scan. values.at(i, j) is the metric at
// (alpha1_axis[i], alpha2_axis[j]); axes are ascending. focus_box_* record
// the sub-region of interest for plots and summaries; they annotate the
// output only and never affect the computed values.
struct GridScan {
    std::vector<double> alpha1_axis;
    std::vector<double> alpha2_axis;
    Matrix values{0, 0};
    GridMetric metric = GridMetric::XiPair;
    int task_a = 0;                // task id scaled by alpha1
    int task_b = 0;                // task id scaled by alpha2
    double fixed_alpha = 0.0;      // coefficient on the folded-in extras
    std::vector<int> other_tasks;  // ids folded in at fixed_alpha
    double focus_box_lo = 0.1;
    double focus_box_hi = 1.0;
};

enum class CurveKind { LossBarrier, EigenvalueSegment, JtlGap };

// A 1-d diagnostic: values[k] measured at abscissa[k], abscissa ascending.
// non_converged counts points whose underlying eigenvalue iteration hit the
// iteration cap (always 0 for the other curve kinds).
struct Curve {
    std::vector<double> abscissa;
    std::vector<double> values;
    CurveKind kind = CurveKind::LossBarrier;
    int non_converged = 0;
};

// Fraction of rows on which the two logit matrices pick different argmax
// classes; ties break to the lowest class index on both sides. Symmetric,
// in [0, 1], and exactly 0 when the matrices agree elementwise.
double output_distance(const Matrix& logits_a, const Matrix& logits_b);

// Prediction-disentanglement scan for one task pair. The cell at
// (a1, a2) evaluates theta_0 + a1 tau_1 + a2 tau_2 and sums, over t in {1, 2},
// the output_distance between that merged model and the single-task model
// theta_0 + a_t tau_t on task t's dataset. Cell (0, 0) is exactly 0 and every
// value lies in [0, 2]. Cells are independent; any `threads` count produces
// bit-identical values.
GridScan disentanglement_grid_pair(const ParamVector& theta_0, const TaskVector& tau_1,
                                   const TaskVector& tau_2, const ModelSpec& spec,
                                   const TaskDataset& data_1, const TaskDataset& data_2,
                                   const GridSpec& grid = {}, int threads = 1);

// Same scan with every task vector outside the pair folded into the merged
// model at coefficient fixed_alpha (the single-task references are
// unchanged). task_a / task_b index into all_taus. When the extra vectors
// are all zero this reproduces disentanglement_grid_pair bit for bit: both
// run the same cell evaluator, here with a zero offset.
GridScan disentanglement_grid_all(const ParamVector& theta_0,
                                  const std::vector<TaskVector>& all_taus, int task_a, int task_b,
                                  const ModelSpec& spec, const TaskDataset& data_a,
                                  const TaskDataset& data_b, double fixed_alpha = 0.3,
                                  const GridSpec& grid = {}, int threads = 1);

// Joint-task loss surface over the same merged models: each cell is
// loss(merged, data_1) + loss(merged, data_2). extra_taus (possibly empty)
// are folded in at fixed_alpha exactly as in disentanglement_grid_all.
GridScan jtl_landscape_grid(const ParamVector& theta_0, const TaskVector& tau_1,
                            const TaskVector& tau_2, const std::vector<TaskVector>& extra_taus,
                            double fixed_alpha, const ModelSpec& spec, const TaskDataset& data_1,
                            const TaskDataset& data_2, const GridSpec& grid = {}, int threads = 1);

// Cross-task linearity, one score per block (hidden blocks, then logits).
// Per input row x and block f: 1 - cos(f(theta_0 + lambda (tau_s + tau_t), x),
// 0.5 f(theta_0 + 2 lambda tau_s, x) + 0.5 f(theta_0 + 2 lambda tau_t, x)),
// averaged over rows. A row whose feature vector has exactly zero norm on
// either side contributes 0 and increments zero_norm_pairs.
struct CtlResult {
    std::vector<double> per_block;
    int zero_norm_pairs = 0;
};

CtlResult ctl_block_metric(const ParamVector& theta_0, const TaskVector& tau_s,
                           const TaskVector& tau_t, const ModelSpec& spec, const Matrix& inputs,
                           double lambda = 0.3);

// Loss along the straight segment (1-s) theta_a + s theta_b at n_points
// evenly spaced s in [0, 1]. Endpoints reproduce the direct losses.
Curve loss_barrier_path(const ParamVector& theta_a, const ParamVector& theta_b,
                        const ModelSpec& spec, const TaskDataset& dataset, int n_points);

// Interpolation gap of an arbitrary scalar function:
//   f(alpha ts + (1-alpha) tt) - alpha f(ts) - (1-alpha) f(tt).
// Exactly 0 at alpha = 0 and alpha = 1. alpha outside [0, 1] throws.
double jtl_gap_fn(const std::function<double(const std::vector<double>&)>& f,
                  const std::vector<double>& theta_s, const std::vector<double>& theta_t,
                  double alpha);

// jtl_gap_fn applied to the joint-task loss
// L(theta) = loss(theta, data_s) + loss(theta, data_t).
double jtl_gap(const ParamVector& theta_s, const ParamVector& theta_t, const ModelSpec& spec,
               double alpha, const TaskDataset& data_s, const TaskDataset& data_t);

struct EigenResult {
    double value = 0.0;  // eigenvalue estimate (shift already removed)
    int iterations = 0;  // Hessian-vector products spent
    bool converged = false;
};

// Power iteration for the largest-magnitude eigenvalue of a symmetric
// operator, seen through shifted products v -> apply(v) + shift v. Starts
// from a seeded random unit vector; converged when successive Rayleigh
// quotients differ by less than tol * max(1, |quotient|). Hitting max_iters
// returns the best estimate with converged = false.
EigenResult power_iteration(
    const std::function<void(const std::vector<double>&, std::vector<double>&)>& apply, size_t dim,
    int max_iters, double tol, double shift, uint64_t start_seed);

// Largest-magnitude Hessian eigenvalue of the loss at params via
// power_iteration over exact Hessian-vector products.
EigenResult dominant_eigenvalue(const ParamVector& params, const ModelSpec& spec,
                                const TaskDataset& dataset, int max_iters = 500,
                                double tol = 1e-10, double shift = 0.0, uint64_t seed = 0);

// dominant_eigenvalue at n_points evenly spaced points of
// theta_0 + gamma (theta_t - theta_0), gamma in [0, 1]. Point k starts its
// iteration from sub_seed(seed, "segment_point", k), so endpoint values
// reproduce direct calls made with those seeds. Non-converged points are
// counted on the curve.
Curve eigenvalue_along_segment(const ParamVector& theta_0, const ParamVector& theta_t,
                               const ModelSpec& spec, const TaskDataset& dataset,
                               int n_points = 11, int max_iters = 500, double tol = 1e-10,
                               double shift = 0.0, uint64_t seed = 0);

// Second-order sanity check of the interpolation gap: compares |delta| at
// alpha against 0.5 alpha (1-alpha) (lambda_s + lambda_t) ||theta_t -
// theta_s||^2, with lambda_s the dominant eigenvalue at theta_s on data_s and
// lambda_t likewise at theta_t on data_t. residual is the excess
// max(0, |delta| - bound).
struct BoundCheck {
    double abs_delta = 0.0;
    double bound = 0.0;
    double residual = 0.0;
    bool eigen_converged = true;  // false if either eigenvalue hit the cap
};

BoundCheck jtl_bound_check(const ParamVector& theta_s, const ParamVector& theta_t,
                           const ModelSpec& spec, double alpha, const TaskDataset& data_s,
                           const TaskDataset& data_t, int max_iters = 500, double tol = 1e-10,
                           uint64_t seed = 0);

}  // namespace samlab
