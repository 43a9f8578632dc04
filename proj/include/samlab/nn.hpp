#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "samlab/digest.hpp"

namespace samlab {

// Dense row-major matrix of doubles. All model arithmetic is 64-bit;
// the test tolerances (1e-6 .. 1e-12) are unreachable in single precision.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * static_cast<size_t>(c), 0.0) {}

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
    const double* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }
    double* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
};

enum class Activation { Tanh, Relu };

// Architecture descriptor: layer_sizes = {d, h1, ..., C}. Activation is applied
// after every affine map except the last; the last map's output is the logits.
struct ModelSpec {
    std::vector<int> layer_sizes;
    Activation activation = Activation::Tanh;

    int num_layers() const { return static_cast<int>(layer_sizes.size()) - 1; }
};

// Σ over layers of (in*out + out).
int param_count(const ModelSpec& spec);

// Structural digest: any change to sizes or activation changes the value.
uint64_t spec_digest(const ModelSpec& spec);

// Flat parameter vector. Layout, fixed for every consumer of raw values:
// for each layer l = 1..L, the weight matrix W_l (out x in, row-major)
// followed by the bias b_l (out). spec_hash binds the vector to its ModelSpec.
struct ParamVector {
    std::vector<double> values;
    uint64_t spec_hash = 0;

    size_t size() const { return values.size(); }
};

// Content digest over spec binding plus parameter bit patterns.
uint64_t param_digest(const ParamVector& params);

enum class SplitTag { Train, Val, Test };

struct TaskDataset {
    Matrix features;           // N x d
    std::vector<int> labels;   // values in [0, C)
    SplitTag split = SplitTag::Train;
    int task_id = 0;

    int size() const { return features.rows; }
};

// Weights uniform on [-sqrt(1/fan_in), +sqrt(1/fan_in)], biases zero.
// Deterministic function of (spec, seed).
ParamVector init_params(const ModelSpec& spec, uint64_t seed);

// Logits for each input row; no softmax.
Matrix forward(const ParamVector& params, const ModelSpec& spec, const Matrix& inputs);

// Post-activation output of hidden block `block_index`; the final index
// (== number of hidden layers) yields the logits.
Matrix layer_features(const ParamVector& params, const ModelSpec& spec, const Matrix& inputs,
                      int block_index);

// Mean cross-entropy with max-shifted log-sum-exp.
double loss(const ParamVector& params, const ModelSpec& spec, const TaskDataset& data);

// Exact reverse-mode gradient of loss.
ParamVector gradient(const ParamVector& params, const ModelSpec& spec, const TaskDataset& data);

// Loss and gradient from one pass; the training loop's workhorse.
double loss_and_gradient(const ParamVector& params, const ModelSpec& spec, const TaskDataset& data,
                         ParamVector& grad_out);

enum class HvpMethod { Exact, FiniteDifference };

// Hessian-vector product of loss at params. Exact mode propagates second-order
// tangents; the finite-difference mode (central, step 1e-5) exists for
// cross-checking and is selectable from configs.
ParamVector hvp(const ParamVector& params, const ModelSpec& spec, const TaskDataset& data,
                const ParamVector& v, HvpMethod method = HvpMethod::Exact);

// First-order Taylor expansion of forward around base_params, evaluated at
// params: forward(base) plus a Jacobian-vector product along (params - base).
// The incoming tangent of layer 1 is zero, so a single-layer model evaluates
// through the same affine path as forward and matches it bit for bit.
Matrix linearized_forward(const ParamVector& params, const ParamVector& base_params,
                          const ModelSpec& spec, const Matrix& inputs);

// Mean cross-entropy of the linearized model, with gradient taken through the
// base-point Jacobian (the quantity fine-tuned in linearized mode).
double linearized_loss_and_gradient(const ParamVector& params, const ParamVector& base_params,
                                    const ModelSpec& spec, const TaskDataset& data,
                                    ParamVector& grad_out);

// Fraction of rows whose argmax logit equals the label; argmax ties break to
// the lowest class index.
double accuracy(const ParamVector& params, const ModelSpec& spec, const TaskDataset& data);

double accuracy_of_logits(const Matrix& logits, const std::vector<int>& labels);

}  // namespace samlab
