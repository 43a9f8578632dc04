#include "samlab/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

#include "samlab/rng.hpp"

namespace samlab {

namespace {

double l2_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

void check_optimizer_config(const OptimizerConfig& c) {
    if (!(c.lr > 0.0)) throw std::invalid_argument("optimizer: lr must be positive");
    if (c.momentum < 0.0 || c.momentum >= 1.0)
        throw std::invalid_argument("optimizer: momentum must lie in [0, 1)");
    if (c.beta1 < 0.0 || c.beta1 >= 1.0 || c.beta2 < 0.0 || c.beta2 >= 1.0)
        throw std::invalid_argument("optimizer: betas must lie in [0, 1)");
    if (c.weight_decay < 0.0) throw std::invalid_argument("optimizer: weight_decay must be nonnegative");
    if (!(c.eps > 0.0)) throw std::invalid_argument("optimizer: eps must be positive");
}

}  // namespace

ParamVector sam_perturbation(const ParamVector& grad, double rho) {
    if (rho < 0.0) throw std::invalid_argument("sam_perturbation: rho must be nonnegative");
    ParamVector out;
    out.spec_hash = grad.spec_hash;
    out.values.assign(grad.values.size(), 0.0);
    double norm = l2_norm(grad.values);
    if (rho == 0.0 || norm < 1e-12) return out;  // stationary point: no ascent direction
    double scale = rho / norm;
    for (size_t i = 0; i < grad.values.size(); ++i) out.values[i] = scale * grad.values[i];
    return out;
}

ParamVector asam_perturbation(const ParamVector& params, const ParamVector& grad, double rho,
                              AsamNorm norm_mode) {
    if (rho < 0.0) throw std::invalid_argument("asam_perturbation: rho must be nonnegative");
    size_t n = params.values.size();
    if (grad.values.size() != n)
        throw std::invalid_argument("asam_perturbation: params and grad lengths differ");
    ParamVector out;
    out.spec_hash = params.spec_hash;
    out.values.assign(n, 0.0);
    double denom = 0.0;
    if (norm_mode == AsamNorm::Paper) {
        denom = l2_norm(grad.values);
    } else {
        double s = 0.0;
        for (size_t i = 0; i < n; ++i) {
            double tg = params.values[i] * grad.values[i];
            s += tg * tg;
        }
        denom = std::sqrt(s);
    }
    if (rho == 0.0 || denom < 1e-12) return out;
    double scale = rho / denom;
    for (size_t i = 0; i < n; ++i) {
        double t = params.values[i];
        out.values[i] = scale * (t * t * grad.values[i]);
    }
    return out;
}

OptimizerState init_optimizer_state(size_t n) {
    OptimizerState st;
    st.m.assign(n, 0.0);
    st.v.assign(n, 0.0);
    st.step = 0;
    return st;
}

void optimizer_step(OptimizerState& state, ParamVector& params, const ParamVector& grad,
                    double lr, const OptimizerConfig& config) {
    size_t n = params.values.size();
    if (grad.values.size() != n)
        throw std::invalid_argument("optimizer_step: params and grad lengths differ");
    if (state.m.size() != n || state.v.size() != n)
        throw std::invalid_argument("optimizer_step: state not initialized for this length");
    if (!(lr > 0.0)) throw std::invalid_argument("optimizer_step: lr must be positive");
    check_optimizer_config(config);

    state.step += 1;
    double* p = params.values.data();
    const double* g = grad.values.data();
    double wd = config.weight_decay;
    if (config.base == BaseOptimizer::Sgd) {
        for (size_t i = 0; i < n; ++i) {
            state.m[i] = config.momentum * state.m[i] + g[i];
            p[i] -= lr * (state.m[i] + wd * p[i]);  // decoupled decay
        }
    } else {
        double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
        double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
        for (size_t i = 0; i < n; ++i) {
            state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g[i];
            state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g[i] * g[i];
            double mhat = state.m[i] / bc1;
            double vhat = state.v[i] / bc2;
            p[i] -= lr * (mhat / (std::sqrt(vhat) + config.eps) + wd * p[i]);
        }
    }
}

double lr_schedule(int step, double base_lr, const TrainConfig& cfg) {
    if (step < 0 || step >= cfg.steps) throw std::out_of_range("lr_schedule: step outside [0, steps)");
    if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
        return base_lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
    if (cfg.schedule == LrScheduleKind::Constant) return base_lr;
    int t = step - cfg.warmup_steps;
    int span = cfg.steps - cfg.warmup_steps;
    return base_lr * 0.5 *
           (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) / static_cast<double>(span)));
}

FineTuneResult finetune(const ParamVector& base_params, const ModelSpec& spec,
                        const TaskDataset& train_set, const TaskDataset& val_set,
                        const OptimizerConfig& opt_cfg, const SharpnessConfig& sharp_cfg,
                        const TrainConfig& train_cfg) {
    if (base_params.spec_hash != spec_digest(spec))
        throw std::invalid_argument("finetune: params were built for a different spec");
    if (train_set.size() == 0 || val_set.size() == 0)
        throw std::invalid_argument("finetune: train and val sets must be nonempty");
    if (train_set.features.cols != spec.layer_sizes.front() ||
        val_set.features.cols != spec.layer_sizes.front())
        throw std::invalid_argument("finetune: dataset width does not match the model input");
    if (train_cfg.batch_size <= 0) throw std::invalid_argument("finetune: batch_size must be positive");
    if (train_cfg.batch_size > train_set.size())
        throw std::invalid_argument("finetune: batch_size exceeds the train set");
    if (train_cfg.steps < 0) throw std::invalid_argument("finetune: steps must be nonnegative");
    if (train_cfg.eval_every <= 0) throw std::invalid_argument("finetune: eval_every must be positive");
    if (train_cfg.warmup_steps < 0)
        throw std::invalid_argument("finetune: warmup_steps must be nonnegative");
    if (train_cfg.steps > 0 && train_cfg.warmup_steps >= train_cfg.steps)
        throw std::invalid_argument("finetune: warmup_steps must stay below steps");
    if (sharp_cfg.rho < 0.0) throw std::invalid_argument("finetune: rho must be nonnegative");
    check_optimizer_config(opt_cfg);

    FineTuneResult res;
    res.seed = train_cfg.seed;
    res.opt_config = opt_cfg;
    res.sharp_config = sharp_cfg;
    res.train_config = train_cfg;

    ParamVector params = base_params;
    OptimizerState state = init_optimizer_state(params.size());
    const bool lin = train_cfg.linearized;
    ParamVector eval_scratch;

    bool have_best = false;
    auto evaluate = [&](int step_count) {
        double train_loss = lin ? linearized_loss_and_gradient(params, base_params, spec,
                                                               train_set, eval_scratch)
                                : loss(params, spec, train_set);
        double val_acc;
        if (lin) {
            Matrix logits = linearized_forward(params, base_params, spec, val_set.features);
            val_acc = accuracy_of_logits(logits, val_set.labels);
        } else {
            val_acc = accuracy(params, spec, val_set);
        }
        res.eval_steps.push_back(step_count);
        res.loss_curve.push_back(train_loss);
        res.val_acc_curve.push_back(val_acc);
        if (!have_best || val_acc > res.best_val_accuracy) {  // ties keep the earlier checkpoint
            have_best = true;
            res.best_val_accuracy = val_acc;
            res.best_step = step_count;
            res.best_params = params;
        }
    };
    evaluate(0);

    int n_train = train_set.size();
    int batch = train_cfg.batch_size;
    int d = train_set.features.cols;
    int steps_per_epoch = n_train / batch;  // trailing partial batch is dropped

    std::vector<int> perm(static_cast<size_t>(n_train));
    TaskDataset minibatch;
    minibatch.split = train_set.split;
    minibatch.task_id = train_set.task_id;
    minibatch.features = Matrix(batch, d);
    minibatch.labels.resize(static_cast<size_t>(batch));

    ParamVector g1, g2, perturbed;
    for (int s = 0; s < train_cfg.steps; ++s) {
        int k = s % steps_per_epoch;
        if (k == 0) {
            int64_t epoch = s / steps_per_epoch;
            std::iota(perm.begin(), perm.end(), 0);
            Rng rng(sub_seed(train_cfg.seed, "epoch", static_cast<uint64_t>(epoch)));
            rng.shuffle(perm);
        }
        for (int i = 0; i < batch; ++i) {
            int src = perm[static_cast<size_t>(k) * batch + i];
            const double* from = train_set.features.row(src);
            std::copy(from, from + d, minibatch.features.row(i));
            minibatch.labels[static_cast<size_t>(i)] = train_set.labels[static_cast<size_t>(src)];
        }

        double l1 = lin ? linearized_loss_and_gradient(params, base_params, spec, minibatch, g1)
                        : loss_and_gradient(params, spec, minibatch, g1);
        if (!std::isfinite(l1))
            throw std::runtime_error("finetune: non-finite loss at step " + std::to_string(s));

        const ParamVector* g_update = &g1;
        if (sharp_cfg.mode != SharpnessMode::None && sharp_cfg.rho > 0.0) {
            ParamVector eps_hat =
                sharp_cfg.mode == SharpnessMode::Sam
                    ? sam_perturbation(g1, sharp_cfg.rho)
                    : asam_perturbation(params, g1, sharp_cfg.rho, sharp_cfg.asam_norm);
            if (l2_norm(eps_hat.values) > 0.0) {
                perturbed = params;
                for (size_t i = 0; i < perturbed.values.size(); ++i)
                    perturbed.values[i] += eps_hat.values[i];
                double l2 = lin ? linearized_loss_and_gradient(perturbed, base_params, spec,
                                                               minibatch, g2)
                                : loss_and_gradient(perturbed, spec, minibatch, g2);
                if (!std::isfinite(l2))
                    throw std::runtime_error("finetune: non-finite perturbed loss at step " +
                                             std::to_string(s));
                g_update = &g2;
            }
            // zero perturbation (stationary point): the second pass would land on
            // the same parameters, so g1 is reused as is
        }

        double lr = lr_schedule(s, opt_cfg.lr, train_cfg);
        optimizer_step(state, params, *g_update, lr, opt_cfg);

        int done = s + 1;
        if (done % train_cfg.eval_every == 0 || done == train_cfg.steps) evaluate(done);
    }

    res.final_params = params;
    return res;
}

}  // namespace samlab
