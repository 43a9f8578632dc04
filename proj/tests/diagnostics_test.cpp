#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "samlab/diagnostics.hpp"
#include "samlab/merge.hpp"
#include "samlab/nn.hpp"
#include "samlab/rng.hpp"
#include "support/helpers.hpp"
#include "support/oracles.hpp"

using namespace samlab;

namespace {

ModelSpec tiny_spec() {
    ModelSpec spec;
    spec.layer_sizes = {2, 4, 2};
    return spec;
}

// Checkpoint one rounded perturbation away from base, so every coordinate is
// the result of a single addition.
ParamVector drift_checkpoint(const ParamVector& base, uint64_t seed, double scale = 0.5) {
    ParamVector out = base;
    Rng rng(sub_seed(seed, "drift"));
    for (double& v : out.values) v = v + scale * rng.normal();
    return out;
}

TaskVector random_tau(const ParamVector& base, uint64_t seed, int task_id, double scale = 0.5) {
    return task_vector(drift_checkpoint(base, seed, scale), base, task_id);
}

// Mirrors the scan's merged-model arithmetic exactly, term for term.
std::vector<double> merged_vec(const ParamVector& t0, const TaskVector& t1, const TaskVector& t2,
                               const std::vector<double>& off, double a1, double a2) {
    std::vector<double> m(t0.values.size());
    for (size_t k = 0; k < m.size(); ++k)
        m[k] = t0.values[k] + a1 * t1.values[k] + a2 * t2.values[k] + off[k];
    return m;
}

std::vector<double> single_task_vec(const ParamVector& t0, const TaskVector& tau, double a) {
    std::vector<double> m(t0.values.size());
    for (size_t k = 0; k < m.size(); ++k) m[k] = t0.values[k] + a * tau.values[k];
    return m;
}

std::vector<std::vector<double>> random_symmetric(int n, uint64_t seed, double diag_boost = 0.0) {
    Rng rng(sub_seed(seed, "sym"));
    std::vector<std::vector<double>> h(static_cast<size_t>(n),
                                       std::vector<double>(static_cast<size_t>(n), 0.0));
    for (int i = 0; i < n; ++i) {
        for (int j = i; j < n; ++j) {
            double v = rng.normal();
            h[static_cast<size_t>(i)][static_cast<size_t>(j)] = v;
            h[static_cast<size_t>(j)][static_cast<size_t>(i)] = v;
        }
        h[static_cast<size_t>(i)][static_cast<size_t>(i)] += diag_boost;
    }
    return h;
}

std::vector<std::vector<double>> diag_matrix(const std::vector<double>& d) {
    std::vector<std::vector<double>> h(d.size(), std::vector<double>(d.size(), 0.0));
    for (size_t i = 0; i < d.size(); ++i) h[i][i] = d[i];
    return h;
}

}  // namespace

TEST_SUITE_BEGIN("diagnostics");

TEST_CASE("output distance counts argmax disagreements") {
    Matrix a(3, 2), b(3, 2);
    a.at(0, 0) = 0.1, a.at(0, 1) = 0.9;  // argmax 1
    a.at(1, 0) = 0.8, a.at(1, 1) = 0.2;  // argmax 0
    a.at(2, 0) = 0.7, a.at(2, 1) = 0.7;  // tie: lowest index wins, argmax 0
    b.at(0, 0) = -1.0, b.at(0, 1) = 4.0;  // 1: agree
    b.at(1, 0) = 0.0, b.at(1, 1) = 1.0;   // 1: differ
    b.at(2, 0) = 0.1, b.at(2, 1) = 0.9;   // 1: differ (tie rule on a side)
    CHECK(output_distance(a, b) == 2.0 / 3.0);
    CHECK(output_distance(a, a) == 0.0);
    CHECK(output_distance(b, b) == 0.0);

    Matrix c(2, 2);
    CHECK_THROWS_AS(output_distance(a, c), std::invalid_argument);
    Matrix empty(0, 2);
    CHECK_THROWS_AS(output_distance(empty, empty), std::invalid_argument);
}

TEST_CASE("output distance agrees with the reference disagreement count") {
    for (uint64_t trial = 0; trial < 5; ++trial) {
        Rng rng(sub_seed(900, "dist", trial));
        Matrix a(50, 4), b(50, 4);
        for (double& v : a.data) v = rng.normal();
        for (double& v : b.data) v = rng.normal();
        double got = output_distance(a, b);
        CHECK(got == oracle::prediction_disagreement(a, b));
        CHECK(got == output_distance(b, a));
    }
}

TEST_CASE("pair grid defaults put zero and one exactly on the lattice") {
    ModelSpec spec = tiny_spec();
    ParamVector theta0 = testutil::random_params(spec, 11);
    TaskVector tau1 = random_tau(theta0, 21, 1);
    TaskVector tau2 = random_tau(theta0, 22, 2);
    TaskDataset d1 = testutil::random_dataset(31, 6, 2, 2);
    TaskDataset d2 = testutil::random_dataset(32, 6, 2, 2);

    GridScan scan = disentanglement_grid_pair(theta0, tau1, tau2, spec, d1, d2);
    REQUIRE(scan.alpha1_axis.size() == 21);
    REQUIRE(scan.alpha2_axis.size() == 21);
    CHECK(scan.alpha1_axis.front() == -0.5);
    CHECK(scan.alpha1_axis.back() == 1.5);
    CHECK(scan.alpha1_axis[5] == 0.0);
    CHECK(scan.alpha1_axis[15] == 1.0);
    for (size_t i = 1; i < scan.alpha1_axis.size(); ++i)
        CHECK(scan.alpha1_axis[i] > scan.alpha1_axis[i - 1]);
    CHECK(scan.values.rows == 21);
    CHECK(scan.values.cols == 21);
    CHECK(scan.metric == GridMetric::XiPair);
    CHECK(scan.task_a == 1);
    CHECK(scan.task_b == 2);
    CHECK(scan.other_tasks.empty());
    CHECK(scan.focus_box_lo == 0.1);
    CHECK(scan.focus_box_hi == 1.0);

    // the (0, 0) coefficient cell compares the base model against itself
    CHECK(scan.values.at(5, 5) == 0.0);
    for (double v : scan.values.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 2.0);
    }
}

TEST_CASE("pair grid matches per-cell reference evaluation") {
    ModelSpec spec = tiny_spec();
    ParamVector theta0 = testutil::random_params(spec, 40);
    TaskVector tau1 = random_tau(theta0, 41, 0);
    TaskVector tau2 = random_tau(theta0, 42, 1);
    TaskDataset d1 = testutil::random_dataset(43, 8, 2, 2);
    TaskDataset d2 = testutil::random_dataset(44, 8, 2, 2);

    GridSpec grid{-0.25, 1.25, 4, 0.0, 1.0, 3};
    GridScan scan = disentanglement_grid_pair(theta0, tau1, tau2, spec, d1, d2, grid);
    std::vector<double> off(theta0.values.size(), 0.0);
    for (int i = 0; i < grid.n1; ++i) {
        for (int j = 0; j < grid.n2; ++j) {
            double a1 = scan.alpha1_axis[static_cast<size_t>(i)];
            double a2 = scan.alpha2_axis[static_cast<size_t>(j)];
            std::vector<double> m = merged_vec(theta0, tau1, tau2, off, a1, a2);
            double want = oracle::prediction_disagreement(
                              oracle::forward(single_task_vec(theta0, tau1, a1), spec, d1.features),
                              oracle::forward(m, spec, d1.features)) +
                          oracle::prediction_disagreement(
                              oracle::forward(single_task_vec(theta0, tau2, a2), spec, d2.features),
                              oracle::forward(m, spec, d2.features));
            CHECK(scan.values.at(i, j) == want);
        }
    }
}

TEST_CASE("zero second vector reduces the grid to the other task's drift") {
    ModelSpec spec = tiny_spec();
    ParamVector theta0 = testutil::random_params(spec, 50);
    TaskVector tau1 = random_tau(theta0, 51, 0);
    TaskVector tau2 = task_vector(theta0, theta0, 1);  // identically zero
    TaskDataset d1 = testutil::random_dataset(52, 10, 2, 2);
    TaskDataset d2 = testutil::random_dataset(53, 10, 2, 2);

    GridSpec grid{0.0, 1.0, 3, 0.0, 1.0, 3};
    GridScan scan = disentanglement_grid_pair(theta0, tau1, tau2, spec, d1, d2, grid);
    for (int i = 0; i < grid.n1; ++i) {
        double a1 = scan.alpha1_axis[static_cast<size_t>(i)];
        // task-1 term vanishes (merged == its own reference); only task 2 drifts
        double want = oracle::prediction_disagreement(
            oracle::forward(theta0.values, spec, d2.features),
            oracle::forward(single_task_vec(theta0, tau1, a1), spec, d2.features));
        for (int j = 0; j < grid.n2; ++j) {
            CHECK(scan.values.at(i, j) == scan.values.at(i, 0));
            CHECK(scan.values.at(i, j) == want);
        }
    }
    CHECK(scan.values.at(0, 0) == 0.0);
    CHECK(scan.values.at(0, 1) == 0.0);  // a1 = 0 row is all zero
}

TEST_CASE("folded extras reproduce the pair scan bit-for-bit when zero") {
    ModelSpec spec = tiny_spec();
    ParamVector theta0 = testutil::random_params(spec, 60);
    std::vector<TaskVector> taus = {random_tau(theta0, 61, 3), random_tau(theta0, 62, 5),
                                    task_vector(theta0, theta0, 7),
                                    task_vector(theta0, theta0, 9)};
    TaskDataset da = testutil::random_dataset(63, 7, 2, 2);
    TaskDataset db = testutil::random_dataset(64, 7, 2, 2);

    GridSpec grid{-0.5, 1.5, 5, -0.5, 1.5, 5};
    GridScan pair = disentanglement_grid_pair(theta0, taus[0], taus[1], spec, da, db, grid);
    GridScan all = disentanglement_grid_all(theta0, taus, 0, 1, spec, da, db, 0.3, grid);

    REQUIRE(all.values.data.size() == pair.values.data.size());
    for (size_t k = 0; k < all.values.data.size(); ++k)
        CHECK(all.values.data[k] == pair.values.data[k]);
    CHECK(all.metric == GridMetric::XiAll);
    CHECK(all.fixed_alpha == 0.3);
    CHECK(all.task_a == 3);
    CHECK(all.task_b == 5);
    REQUIRE(all.other_tasks.size() == 2);
    CHECK(all.other_tasks[0] == 7);
    CHECK(all.other_tasks[1] == 9);
}

TEST_CASE("folded extras shift every merged model but not the references") {
    ModelSpec spec = tiny_spec();
    ParamVector theta0 = testutil::random_params(spec, 70);
    std::vector<TaskVector> taus = {random_tau(theta0, 71, 0), random_tau(theta0, 72, 1),
                                    random_tau(theta0, 73, 2), random_tau(theta0, 74, 3)};
    TaskDataset da = testutil::random_dataset(75, 9, 2, 2);
    TaskDataset db = testutil::random_dataset(76, 9, 2, 2);

    double fixed = 0.3;
    GridSpec grid{0.0, 1.0, 3, 0.0, 1.0, 3};
    GridScan all = disentanglement_grid_all(theta0, taus, 0, 1, spec, da, db, fixed, grid);

    std::vector<double> off(theta0.values.size(), 0.0);
    for (size_t s : {size_t{2}, size_t{3}})
        for (size_t k = 0; k < off.size(); ++k) off[k] += fixed * taus[s].values[k];
    for (int i = 0; i < grid.n1; ++i) {
        for (int j = 0; j < grid.n2; ++j) {
            double a1 = all.alpha1_axis[static_cast<size_t>(i)];
            double a2 = all.alpha2_axis[static_cast<size_t>(j)];
            std::vector<double> m = merged_vec(theta0, taus[0], taus[1], off, a1, a2);
            double want = oracle::prediction_disagreement(
                              oracle::forward(single_task_vec(theta0, taus[0], a1), spec, da.features),
                              oracle::forward(m, spec, da.features)) +
                          oracle::prediction_disagreement(
                              oracle::forward(single_task_vec(theta0, taus[1], a2), spec, db.features),
                              oracle::forward(m, spec, db.features));
            CHECK(all.values.at(i, j) == want);
        }
    }

    // with nonzero extras the origin cell no longer compares equal models
    GridScan pair = disentanglement_grid_pair(theta0, taus[0], taus[1], spec, da, db, grid);
    bool any_differs = false;
    for (size_t k = 0; k < all.values.data.size(); ++k)
        if (all.values.data[k] != pair.values.data[k]) any_differs = true;
    CHECK(any_differs);
}

TEST_CASE("thread count never changes scan values") {
    ModelSpec spec = tiny_spec();
    ParamVector theta0 = testutil::random_params(spec, 80);
    TaskVector tau1 = random_tau(theta0, 81, 0);
    TaskVector tau2 = random_tau(theta0, 82, 1);
    TaskDataset d1 = testutil::random_dataset(83, 8, 2, 2);
    TaskDataset d2 = testutil::random_dataset(84, 8, 2, 2);

    GridSpec grid{-0.5, 1.5, 7, -0.5, 1.5, 7};
    GridScan serial = disentanglement_grid_pair(theta0, tau1, tau2, spec, d1, d2, grid, 1);
    GridScan wide = disentanglement_grid_pair(theta0, tau1, tau2, spec, d1, d2, grid, 4);
    GridScan again = disentanglement_grid_pair(theta0, tau1, tau2, spec, d1, d2, grid, 3);
    for (size_t k = 0; k < serial.values.data.size(); ++k) {
        CHECK(serial.values.data[k] == wide.values.data[k]);
        CHECK(serial.values.data[k] == again.values.data[k]);
    }

    GridScan lserial = jtl_landscape_grid(theta0, tau1, tau2, {}, 0.0, spec, d1, d2, grid, 1);
    GridScan lwide = jtl_landscape_grid(theta0, tau1, tau2, {}, 0.0, spec, d1, d2, grid, 4);
    for (size_t k = 0; k < lserial.values.data.size(); ++k)
        CHECK(lserial.values.data[k] == lwide.values.data[k]);
}

TEST_CASE("joint loss surface sums the two task losses") {
    ModelSpec spec = tiny_spec();
    ParamVector theta0 = testutil::random_params(spec, 90);
    TaskVector tau1 = random_tau(theta0, 91, 0);
    TaskVector tau2 = random_tau(theta0, 92, 1);
    TaskVector tau3 = random_tau(theta0, 93, 2);
    TaskDataset d1 = testutil::random_dataset(94, 8, 2, 2);
    TaskDataset d2 = testutil::random_dataset(95, 8, 2, 2);

    GridSpec grid{0.0, 1.0, 3, 0.0, 1.0, 3};
    double fixed = 0.25;
    GridScan scan = jtl_landscape_grid(theta0, tau1, tau2, {tau3}, fixed, spec, d1, d2, grid);
    CHECK(scan.metric == GridMetric::JtlLoss);
    CHECK(scan.fixed_alpha == fixed);
    REQUIRE(scan.other_tasks.size() == 1);
    CHECK(scan.other_tasks[0] == 2);

    std::vector<double> off(theta0.values.size(), 0.0);
    for (size_t k = 0; k < off.size(); ++k) off[k] += fixed * tau3.values[k];
    for (int i = 0; i < grid.n1; ++i) {
        for (int j = 0; j < grid.n2; ++j) {
            ParamVector p = theta0;
            p.values = merged_vec(theta0, tau1, tau2, off,
                                  scan.alpha1_axis[static_cast<size_t>(i)],
                                  scan.alpha2_axis[static_cast<size_t>(j)]);
            double want = loss(p, spec, d1) + loss(p, spec, d2);
            CHECK(scan.values.at(i, j) == doctest::Approx(want).epsilon(1e-12));
            double independent = oracle::loss(p.values, spec, d1) + oracle::loss(p.values, spec, d2);
            CHECK(scan.values.at(i, j) == doctest::Approx(independent).epsilon(1e-10));
        }
    }
}

TEST_CASE("ctl of identical task vectors vanishes") {
    ModelSpec spec;
    spec.layer_sizes = {3, 6, 4, 2};
    ParamVector theta0 = testutil::random_params(spec, 100);
    TaskVector taus = random_tau(theta0, 101, 0, 0.4);
    TaskVector taut = random_tau(theta0, 101, 1, 0.4);  // same seed: identical values
    Matrix inputs = testutil::random_dataset(102, 10, 3, 2).features;

    CtlResult res = ctl_block_metric(theta0, taus, taut, spec, inputs);
    REQUIRE(res.per_block.size() == 3);
    for (double v : res.per_block) {
        CHECK(v >= 0.0);
        CHECK(v <= 1e-12);
    }
    CHECK(res.zero_norm_pairs == 0);
}

TEST_CASE("ctl matches a per-row cosine reference") {
    ModelSpec spec;
    spec.layer_sizes = {3, 6, 4, 2};
    spec.activation = Activation::Relu;
    ParamVector theta0 = testutil::random_params(spec, 110);
    TaskVector taus = random_tau(theta0, 111, 0, 0.4);
    TaskVector taut = random_tau(theta0, 112, 1, 0.4);
    Matrix inputs = testutil::random_dataset(113, 12, 3, 2).features;
    double lambda = 0.3;

    CtlResult res = ctl_block_metric(theta0, taus, taut, spec, inputs, lambda);
    REQUIRE(res.per_block.size() == 3);

    std::vector<double> mid(theta0.values.size()), s2(theta0.values.size()),
        t2(theta0.values.size());
    for (size_t k = 0; k < theta0.values.size(); ++k) {
        mid[k] = theta0.values[k] + lambda * (taus.values[k] + taut.values[k]);
        s2[k] = theta0.values[k] + (2.0 * lambda) * taus.values[k];
        t2[k] = theta0.values[k] + (2.0 * lambda) * taut.values[k];
    }
    std::vector<Matrix> bm = oracle::forward_blocks(mid, spec, inputs);
    std::vector<Matrix> bs = oracle::forward_blocks(s2, spec, inputs);
    std::vector<Matrix> bt = oracle::forward_blocks(t2, spec, inputs);
    int zero_rows = 0;
    for (size_t b = 0; b < bm.size(); ++b) {
        double acc = 0.0;
        for (int i = 0; i < inputs.rows; ++i) {
            double uv = 0.0, uu = 0.0, vv = 0.0;
            for (int j = 0; j < bm[b].cols; ++j) {
                double ux = bm[b].at(i, j);
                double vx = 0.5 * bs[b].at(i, j) + 0.5 * bt[b].at(i, j);
                uv += ux * vx;
                uu += ux * ux;
                vv += vx * vx;
            }
            if (uu == 0.0 || vv == 0.0) {
                ++zero_rows;  // relu can blank a whole block for one row
                continue;
            }
            acc += 1.0 - uv / (std::sqrt(uu) * std::sqrt(vv));
        }
        CHECK(res.per_block[b] == doctest::Approx(acc / inputs.rows).epsilon(1e-9));
    }
    CHECK(res.zero_norm_pairs == zero_rows);
}

TEST_CASE("ctl counts rows with zero-norm features") {
    ModelSpec spec;
    spec.layer_sizes = {2, 3, 2};
    spec.activation = Activation::Relu;
    // zero weights, hidden biases -1: relu kills the hidden block entirely
    ParamVector theta0;
    theta0.spec_hash = spec_digest(spec);
    theta0.values.assign(static_cast<size_t>(param_count(spec)), 0.0);
    theta0.values[6] = -1.0;
    theta0.values[7] = -1.0;
    theta0.values[8] = -1.0;
    theta0.values[15] = 1.0;  // output biases keep the logits block nonzero
    theta0.values[16] = 2.0;
    TaskVector zs = task_vector(theta0, theta0, 0);
    TaskVector zt = task_vector(theta0, theta0, 1);
    Matrix inputs = testutil::random_dataset(120, 2, 2, 2).features;

    CtlResult res = ctl_block_metric(theta0, zs, zt, spec, inputs);
    REQUIRE(res.per_block.size() == 2);
    CHECK(res.per_block[0] == 0.0);  // every hidden row skipped: mean of nothing
    // logits block compares the bias vector with itself; sqrt rounding leaves
    // cos a hair under 1
    CHECK(res.per_block[1] >= 0.0);
    CHECK(res.per_block[1] <= 1e-12);
    CHECK(res.zero_norm_pairs == 2);
}

TEST_CASE("loss path reproduces endpoint losses exactly") {
    ModelSpec spec = tiny_spec();
    ParamVector ta = testutil::random_params(spec, 130);
    ParamVector tb = drift_checkpoint(ta, 131);
    TaskDataset data = testutil::random_dataset(132, 12, 2, 2);

    Curve curve = loss_barrier_path(ta, tb, spec, data, 5);
    CHECK(curve.kind == CurveKind::LossBarrier);
    REQUIRE(curve.abscissa.size() == 5);
    CHECK(curve.abscissa.front() == 0.0);
    CHECK(curve.abscissa.back() == 1.0);
    CHECK(curve.abscissa[2] == 0.5);
    CHECK(curve.values.front() == loss(ta, spec, data));
    CHECK(curve.values.back() == loss(tb, spec, data));
    CHECK(curve.non_converged == 0);
    CHECK_THROWS_AS(loss_barrier_path(ta, tb, spec, data, 1), std::invalid_argument);
}

TEST_CASE("single affine layer keeps the path under the chord") {
    // cross-entropy of a linear model is convex in the parameters
    ModelSpec spec;
    spec.layer_sizes = {4, 3};
    ParamVector ta = testutil::random_params(spec, 140);
    ParamVector tb = drift_checkpoint(ta, 141, 1.0);
    TaskDataset data = testutil::random_dataset(142, 20, 4, 3);

    Curve curve = loss_barrier_path(ta, tb, spec, data, 9);
    double la = curve.values.front(), lb = curve.values.back();
    for (size_t k = 0; k < curve.values.size(); ++k) {
        double s = curve.abscissa[k];
        CHECK(curve.values[k] <= (1.0 - s) * la + s * lb + 1e-12);
    }
}

TEST_CASE("interpolation gap vanishes exactly at the endpoints") {
    ModelSpec spec = tiny_spec();
    ParamVector ts = testutil::random_params(spec, 150);
    ParamVector tt = drift_checkpoint(ts, 151);
    TaskDataset ds = testutil::random_dataset(152, 8, 2, 2);
    TaskDataset dt = testutil::random_dataset(153, 8, 2, 2);

    CHECK(jtl_gap(ts, tt, spec, 0.0, ds, dt) == 0.0);
    CHECK(jtl_gap(ts, tt, spec, 1.0, ds, dt) == 0.0);
    CHECK_THROWS_AS(jtl_gap(ts, tt, spec, 1.5, ds, dt), std::invalid_argument);
    CHECK_THROWS_AS(jtl_gap(ts, tt, spec, -0.1, ds, dt), std::invalid_argument);

    oracle::Quadratic quad{diag_matrix({1.0, 2.0}), {0.0, 0.0}, 0.5};
    auto f = [&](const std::vector<double>& v) { return quad.loss(v); };
    CHECK(jtl_gap_fn(f, {1.0, 2.0}, {3.0, -1.0}, 0.0) == 0.0);
    CHECK(jtl_gap_fn(f, {1.0, 2.0}, {3.0, -1.0}, 1.0) == 0.0);
}

TEST_CASE("interpolation gap matches the quadratic closed form") {
    int checked = 0;
    for (uint64_t trial = 0; trial < 120; ++trial) {
        int dim = 2 + static_cast<int>(trial % 5);
        Rng rng(sub_seed(160, "quadgap", trial));
        oracle::Quadratic quad;
        quad.h = random_symmetric(dim, sub_seed(160, "h", trial));
        quad.m.resize(static_cast<size_t>(dim));
        for (double& v : quad.m) v = rng.normal();
        quad.c = rng.normal();
        std::vector<double> ts(static_cast<size_t>(dim)), tt(static_cast<size_t>(dim));
        for (double& v : ts) v = rng.normal();
        for (double& v : tt) v = rng.normal();
        double alpha = rng.uniform01();

        auto f = [&](const std::vector<double>& v) { return quad.loss(v); };
        double got = jtl_gap_fn(f, ts, tt, alpha);

        std::vector<double> d(static_cast<size_t>(dim));
        for (int i = 0; i < dim; ++i)
            d[static_cast<size_t>(i)] = ts[static_cast<size_t>(i)] - tt[static_cast<size_t>(i)];
        double quad_form = 0.0;
        for (int i = 0; i < dim; ++i)
            for (int j = 0; j < dim; ++j)
                quad_form += d[static_cast<size_t>(i)] *
                             quad.h[static_cast<size_t>(i)][static_cast<size_t>(j)] *
                             d[static_cast<size_t>(j)];
        double want = -0.5 * alpha * (1.0 - alpha) * quad_form;
        CHECK(std::abs(got - want) < 1e-10 * std::max(1.0, std::abs(want)));
        ++checked;
    }
    CHECK(checked == 120);
}

TEST_CASE("mlp interpolation gap equals its defining losses") {
    ModelSpec spec = tiny_spec();
    ParamVector ts = testutil::random_params(spec, 170);
    ParamVector tt = drift_checkpoint(ts, 171);
    TaskDataset ds = testutil::random_dataset(172, 9, 2, 2);
    TaskDataset dt = testutil::random_dataset(173, 9, 2, 2);
    double alpha = 0.37;

    ParamVector mix = ts;
    for (size_t i = 0; i < mix.values.size(); ++i)
        mix.values[i] = alpha * ts.values[i] + (1.0 - alpha) * tt.values[i];
    double jm = loss(mix, spec, ds) + loss(mix, spec, dt);
    double js = loss(ts, spec, ds) + loss(ts, spec, dt);
    double jt = loss(tt, spec, ds) + loss(tt, spec, dt);
    double want = jm - alpha * js - (1.0 - alpha) * jt;
    CHECK(jtl_gap(ts, tt, spec, alpha, ds, dt) == want);

    double om = oracle::loss(mix.values, spec, ds) + oracle::loss(mix.values, spec, dt);
    double os = oracle::loss(ts.values, spec, ds) + oracle::loss(ts.values, spec, dt);
    double ot = oracle::loss(tt.values, spec, ds) + oracle::loss(tt.values, spec, dt);
    CHECK(jtl_gap(ts, tt, spec, alpha, ds, dt) ==
          doctest::Approx(om - alpha * os - (1.0 - alpha) * ot).epsilon(1e-10));
}

TEST_CASE("power iteration recovers known spectra") {
    auto apply_of = [](const oracle::Quadratic& q) {
        return [&q](const std::vector<double>& v, std::vector<double>& out) { out = q.hvp(v); };
    };

    oracle::Quadratic asc{diag_matrix({1.0, 2.0, 3.0}), {0, 0, 0}, 0.0};
    EigenResult r = power_iteration(apply_of(asc), 3, 2000, 1e-12, 0.0, 1);
    CHECK(r.converged);
    CHECK(r.iterations >= 2);
    CHECK(r.value == doctest::Approx(3.0).epsilon(1e-8));

    oracle::Quadratic tied{diag_matrix({2.0, 2.0, 1.0}), {0, 0, 0}, 0.0};
    r = power_iteration(apply_of(tied), 3, 2000, 1e-12, 0.0, 2);
    CHECK(r.converged);
    CHECK(r.value == doctest::Approx(2.0).epsilon(1e-8));

    oracle::Quadratic negdom{diag_matrix({1.0, -3.0}), {0, 0}, 0.0};
    r = power_iteration(apply_of(negdom), 2, 2000, 1e-12, 0.0, 3);
    CHECK(r.converged);
    CHECK(r.value == doctest::Approx(-3.0).epsilon(1e-8));

    oracle::Quadratic null{diag_matrix({0.0, 0.0}), {0, 0}, 0.0};
    r = power_iteration(apply_of(null), 2, 50, 1e-12, 0.0, 4);
    CHECK(r.converged);
    CHECK(r.iterations == 1);
    CHECK(r.value == 0.0);

    CHECK_THROWS_AS(power_iteration(apply_of(asc), 0, 10, 1e-12, 0.0, 5), std::invalid_argument);
    CHECK_THROWS_AS(power_iteration(apply_of(asc), 3, 0, 1e-12, 0.0, 5), std::invalid_argument);
    CHECK_THROWS_AS(power_iteration(apply_of(asc), 3, 10, 0.0, 0.0, 5), std::invalid_argument);
}

TEST_CASE("positive shift steers the iteration to the most positive eigenvalue") {
    oracle::Quadratic q{diag_matrix({1.0, -3.0}), {0, 0}, 0.0};
    auto apply = [&q](const std::vector<double>& v, std::vector<double>& out) { out = q.hvp(v); };
    // shifted operator has spectrum {11, 7}: the +1 eigenvalue now dominates
    EigenResult r = power_iteration(apply, 2, 5000, 1e-13, 10.0, 6);
    CHECK(r.converged);
    CHECK(r.value == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("power iteration hitting the cap reports non-convergence") {
    oracle::Quadratic q{diag_matrix({1.0, 2.0, 3.0}), {0, 0, 0}, 0.0};
    auto apply = [&q](const std::vector<double>& v, std::vector<double>& out) { out = q.hvp(v); };
    EigenResult r = power_iteration(apply, 3, 2, 1e-16, 0.0, 7);
    CHECK_FALSE(r.converged);
    CHECK(r.iterations == 2);
    CHECK(std::isfinite(r.value));
}

TEST_CASE("power iteration tracks the dense reference on random operators") {
    for (uint64_t trial = 0; trial < 10; ++trial) {
        oracle::Quadratic q;
        q.h = random_symmetric(6, sub_seed(180, "op", trial), 3.0);
        q.m.assign(6, 0.0);
        auto apply = [&q](const std::vector<double>& v, std::vector<double>& out) {
            out = q.hvp(v);
        };
        double want = oracle::max_abs_eigenvalue(q.h);
        EigenResult r = power_iteration(apply, 6, 20000, 1e-12, 0.0, sub_seed(180, "start", trial));
        CHECK(std::abs(r.value - want) < 1e-6 * std::max(1.0, std::abs(want)));
    }
}

TEST_CASE("hessian power iteration matches the dense eigensolver") {
    ModelSpec spec;
    spec.layer_sizes = {2, 3, 2};
    ParamVector params = testutil::random_params(spec, 190);
    TaskDataset data = testutil::random_dataset(191, 6, 2, 2);
    const int n = param_count(spec);

    std::vector<std::vector<double>> h(static_cast<size_t>(n),
                                       std::vector<double>(static_cast<size_t>(n), 0.0));
    for (int k = 0; k < n; ++k) {
        ParamVector basis;
        basis.spec_hash = params.spec_hash;
        basis.values.assign(static_cast<size_t>(n), 0.0);
        basis.values[static_cast<size_t>(k)] = 1.0;
        ParamVector col = hvp(params, spec, data, basis, HvpMethod::Exact);
        for (int i = 0; i < n; ++i)
            h[static_cast<size_t>(i)][static_cast<size_t>(k)] = col.values[static_cast<size_t>(i)];
    }
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            double s = 0.5 * (h[static_cast<size_t>(i)][static_cast<size_t>(j)] +
                              h[static_cast<size_t>(j)][static_cast<size_t>(i)]);
            h[static_cast<size_t>(i)][static_cast<size_t>(j)] = s;
            h[static_cast<size_t>(j)][static_cast<size_t>(i)] = s;
        }
    double want = oracle::max_abs_eigenvalue(h);

    EigenResult r = dominant_eigenvalue(params, spec, data, 3000, 1e-12, 0.0, 5);
    CHECK(r.converged);
    CHECK(std::abs(r.value - want) < 1e-5 * std::max(1.0, std::abs(want)));
}

TEST_CASE("segment endpoints reproduce direct eigenvalue calls") {
    ModelSpec spec = tiny_spec();
    ParamVector theta0 = testutil::random_params(spec, 200);
    ParamVector thetat = drift_checkpoint(theta0, 201, 0.001);
    TaskDataset data = testutil::random_dataset(202, 8, 2, 2);
    uint64_t seed = 77;

    Curve curve = eigenvalue_along_segment(theta0, thetat, spec, data, 5, 2000, 1e-11, 0.0, seed);
    CHECK(curve.kind == CurveKind::EigenvalueSegment);
    REQUIRE(curve.abscissa.size() == 5);
    CHECK(curve.abscissa.front() == 0.0);
    CHECK(curve.abscissa.back() == 1.0);
    for (size_t i = 1; i < curve.abscissa.size(); ++i)
        CHECK(curve.abscissa[i] > curve.abscissa[i - 1]);
    CHECK(curve.non_converged == 0);

    EigenResult left = dominant_eigenvalue(theta0, spec, data, 2000, 1e-11, 0.0,
                                           sub_seed(seed, "segment_point", 0));
    EigenResult right = dominant_eigenvalue(thetat, spec, data, 2000, 1e-11, 0.0,
                                            sub_seed(seed, "segment_point", 4));
    CHECK(curve.values.front() == left.value);
    CHECK(curve.values.back() == right.value);

    Curve again = eigenvalue_along_segment(theta0, thetat, spec, data, 5, 2000, 1e-11, 0.0, seed);
    for (size_t k = 0; k < curve.values.size(); ++k) CHECK(curve.values[k] == again.values[k]);

    CHECK_THROWS_AS(eigenvalue_along_segment(theta0, thetat, spec, data, 1), std::invalid_argument);
}

TEST_CASE("bound check composes gap, eigenvalues, and distance") {
    ModelSpec spec = tiny_spec();
    ParamVector ts = testutil::random_params(spec, 210);
    ParamVector tt = drift_checkpoint(ts, 211);
    TaskDataset ds = testutil::random_dataset(212, 8, 2, 2);
    TaskDataset dt = testutil::random_dataset(213, 8, 2, 2);
    double alpha = 0.3;
    uint64_t seed = 9;

    BoundCheck bc = jtl_bound_check(ts, tt, spec, alpha, ds, dt, 2000, 1e-11, seed);
    CHECK(bc.abs_delta == std::abs(jtl_gap(ts, tt, spec, alpha, ds, dt)));
    double ls =
        dominant_eigenvalue(ts, spec, ds, 2000, 1e-11, 0.0, sub_seed(seed, "bound_s")).value;
    double lt =
        dominant_eigenvalue(tt, spec, dt, 2000, 1e-11, 0.0, sub_seed(seed, "bound_t")).value;
    double dist2 = 0.0;
    for (size_t i = 0; i < ts.values.size(); ++i) {
        double d = tt.values[i] - ts.values[i];
        dist2 += d * d;
    }
    CHECK(bc.bound == 0.5 * alpha * (1.0 - alpha) * (ls + lt) * dist2);
    CHECK(bc.residual == std::max(0.0, bc.abs_delta - bc.bound));
    CHECK(bc.eigen_converged);

    BoundCheck at_end = jtl_bound_check(ts, tt, spec, 0.0, ds, dt, 2000, 1e-11, seed);
    CHECK(at_end.abs_delta == 0.0);
    CHECK(at_end.bound == 0.0);
    CHECK(at_end.residual == 0.0);
}

TEST_CASE("isotropic quadratic bound is tight and anisotropy adds slack") {
    // two isotropic tasks: |gap| should equal the second-order bound
    double a = 1.7, b = 0.6, alpha = 0.35;
    oracle::Quadratic qs{diag_matrix({a, a, a, a}), {0.3, -0.2, 0.9, 0.0}, 0.1};
    oracle::Quadratic qt{diag_matrix({b, b, b, b}), {-1.0, 0.4, 0.2, 0.7}, -0.3};
    auto joint = [&](const std::vector<double>& v) { return qs.loss(v) + qt.loss(v); };
    std::vector<double> ts = {1.0, -0.5, 0.25, 2.0};
    std::vector<double> tt = {-0.75, 1.5, 0.0, -1.25};

    double delta = jtl_gap_fn(joint, ts, tt, alpha);
    auto apply_s = [&qs](const std::vector<double>& v, std::vector<double>& out) {
        out = qs.hvp(v);
    };
    auto apply_t = [&qt](const std::vector<double>& v, std::vector<double>& out) {
        out = qt.hvp(v);
    };
    double ls = power_iteration(apply_s, 4, 2000, 1e-13, 0.0, 11).value;
    double lt = power_iteration(apply_t, 4, 2000, 1e-13, 0.0, 12).value;
    double dist2 = 0.0;
    for (size_t i = 0; i < ts.size(); ++i) dist2 += (tt[i] - ts[i]) * (tt[i] - ts[i]);
    double bound = 0.5 * alpha * (1.0 - alpha) * (ls + lt) * dist2;
    CHECK(std::abs(std::abs(delta) - bound) < 1e-10 * std::max(1.0, bound));

    // anisotropic pair measured along the soft axis: bound exceeds |gap| 3x
    oracle::Quadratic qa{diag_matrix({3.0, 1.0}), {0.0, 0.0}, 0.0};
    auto joint2 = [&](const std::vector<double>& v) { return qa.loss(v) + qa.loss(v); };
    std::vector<double> us = {0.0, 0.0};
    std::vector<double> ut = {0.0, 2.0};
    double delta2 = jtl_gap_fn(joint2, us, ut, alpha);
    auto apply_a = [&qa](const std::vector<double>& v, std::vector<double>& out) {
        out = qa.hvp(v);
    };
    double la = power_iteration(apply_a, 2, 2000, 1e-13, 0.0, 13).value;
    double bound2 = 0.5 * alpha * (1.0 - alpha) * (la + la) * 4.0;
    CHECK(bound2 == doctest::Approx(3.0 * std::abs(delta2)).epsilon(1e-9));
    CHECK(bound2 > std::abs(delta2));
}

TEST_CASE("scans reject malformed grids and mismatched inputs") {
    ModelSpec spec = tiny_spec();
    ParamVector theta0 = testutil::random_params(spec, 220);
    TaskVector tau1 = random_tau(theta0, 221, 0);
    TaskVector tau2 = random_tau(theta0, 222, 1);
    TaskDataset d1 = testutil::random_dataset(223, 6, 2, 2);
    TaskDataset d2 = testutil::random_dataset(224, 6, 2, 2);

    GridSpec zero_points{0.0, 1.0, 0, 0.0, 1.0, 3};
    CHECK_THROWS_AS(disentanglement_grid_pair(theta0, tau1, tau2, spec, d1, d2, zero_points),
                    std::invalid_argument);
    GridSpec backwards{1.0, 0.0, 3, 0.0, 1.0, 3};
    CHECK_THROWS_AS(disentanglement_grid_pair(theta0, tau1, tau2, spec, d1, d2, backwards),
                    std::invalid_argument);

    // a single-point axis is legal and pins the coefficient at lo
    GridSpec thin{0.5, 0.5, 1, 0.0, 1.0, 3};
    GridScan scan = disentanglement_grid_pair(theta0, tau1, tau2, spec, d1, d2, thin);
    REQUIRE(scan.alpha1_axis.size() == 1);
    CHECK(scan.alpha1_axis[0] == 0.5);
    CHECK(scan.values.rows == 1);
    CHECK(scan.values.cols == 3);

    // task vector taken against some other base
    ParamVector other = testutil::random_params(spec, 225);
    TaskVector foreign = task_vector(drift_checkpoint(other, 226), other, 0);
    CHECK_THROWS_AS(disentanglement_grid_pair(theta0, foreign, tau2, spec, d1, d2),
                    std::invalid_argument);

    // dataset width mismatch
    TaskDataset wide = testutil::random_dataset(227, 6, 3, 2);
    CHECK_THROWS_AS(disentanglement_grid_pair(theta0, tau1, tau2, spec, wide, d2),
                    std::invalid_argument);

    std::vector<TaskVector> taus = {tau1, tau2};
    CHECK_THROWS_AS(disentanglement_grid_all(theta0, taus, 0, 0, spec, d1, d2),
                    std::invalid_argument);
    CHECK_THROWS_AS(disentanglement_grid_all(theta0, taus, 0, 2, spec, d1, d2),
                    std::invalid_argument);
    CHECK_THROWS_AS(disentanglement_grid_all(theta0, {tau1}, 0, 0, spec, d1, d2),
                    std::invalid_argument);
    double bad_alpha = std::nan("");
    CHECK_THROWS_AS(disentanglement_grid_all(theta0, taus, 0, 1, spec, d1, d2, bad_alpha),
                    std::invalid_argument);
}

TEST_SUITE_END();
