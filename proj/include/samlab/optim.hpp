#pragma once

#include <cstdint>
#include <vector>

#include "samlab/nn.hpp"

namespace samlab {

enum class BaseOptimizer { Sgd, Adamw };
enum class SharpnessMode { None, Sam, Asam };

// Two normalizations for the adaptive perturbation denominator:
// Paper  : rho * (theta^2 ⊙ g) / ||g||            (plain gradient norm)
// Original: rho * (theta^2 ⊙ g) / ||theta ⊙ g||   (scaled norm of the ASAM publication)
enum class AsamNorm { Paper, Original };

enum class LrScheduleKind { Constant, Cosine };

struct OptimizerConfig {
    BaseOptimizer base = BaseOptimizer::Adamw;
    double lr = 1e-3;
    double momentum = 0.0;  // sgd only, in [0, 1)
    double beta1 = 0.9;     // adamw, in [0, 1)
    double beta2 = 0.999;   // adamw, in [0, 1)
    double weight_decay = 0.0;
    double eps = 1e-8;      // adamw denominator guard
};

struct SharpnessConfig {
    SharpnessMode mode = SharpnessMode::None;
    double rho = 0.5;
    AsamNorm asam_norm = AsamNorm::Paper;
};

struct TrainConfig {
    int steps = 1000;
    int batch_size = 32;
    LrScheduleKind schedule = LrScheduleKind::Cosine;
    int warmup_steps = 0;   // must stay below steps
    bool linearized = false;  // train the displacement of the tangent model
    uint64_t seed = 0;
    int eval_every = 100;
};

// Moment buffers for the base optimizer. step counts applied updates and
// drives AdamW bias correction.
struct OptimizerState {
    std::vector<double> m;
    std::vector<double> v;
    int64_t step = 0;
};

struct FineTuneResult {
    ParamVector final_params;
    ParamVector best_params;  // highest validation accuracy; ties -> earliest
    double best_val_accuracy = 0.0;
    int best_step = 0;
    std::vector<int> eval_steps;       // update counts at which evals ran
    std::vector<double> loss_curve;    // full train-set loss at each eval
    std::vector<double> val_acc_curve; // validation accuracy at each eval
    uint64_t seed = 0;
    OptimizerConfig opt_config;
    SharpnessConfig sharp_config;
    TrainConfig train_config;
};

// rho * grad / ||grad||_2; the zero vector when ||grad||_2 < 1e-12.
ParamVector sam_perturbation(const ParamVector& grad, double rho);

// Elementwise theta^2-scaled ascent direction, normalized per `norm_mode`;
// the zero vector when the denominator < 1e-12.
ParamVector asam_perturbation(const ParamVector& params, const ParamVector& grad, double rho,
                              AsamNorm norm_mode);

OptimizerState init_optimizer_state(size_t n);

// One base-optimizer update, in place. SGD: momentum buffer plus decoupled
// decay. AdamW: bias-corrected moments plus decoupled decay. Deterministic.
void optimizer_step(OptimizerState& state, ParamVector& params, const ParamVector& grad,
                    double lr, const OptimizerConfig& config);

// Linear warmup to base_lr over warmup_steps, then cosine decay to 0 over the
// remaining steps (constant mode holds base_lr instead). step is 0-based.
double lr_schedule(int step, double base_lr, const TrainConfig& cfg);

// Minibatch fine-tuning from base_params. Sharpness modes run two passes per
// step: g1 at theta, perturbation from g1, g2 at theta + perturbation, and the
// base update at theta using g2 (moments see g2 only). Deterministic in seed:
// epoch e draws one Fisher-Yates permutation from sub_seed(seed, "epoch", e)
// and consumes floor(N / batch_size) full batches from it in order.
FineTuneResult finetune(const ParamVector& base_params, const ModelSpec& spec,
                        const TaskDataset& train_set, const TaskDataset& val_set,
                        const OptimizerConfig& opt_cfg, const SharpnessConfig& sharp_cfg,
                        const TrainConfig& train_cfg);

}  // namespace samlab
