#include "samlab/nn.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "samlab/rng.hpp"

namespace samlab {

namespace {

struct LayerView {
    size_t w_off;  // weights: out x in, row-major
    size_t b_off;  // biases: out
    int in;
    int out;
};

std::vector<LayerView> layer_views(const ModelSpec& spec) {
    std::vector<LayerView> views;
    size_t off = 0;
    for (size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l) {
        int in = spec.layer_sizes[l];
        int out = spec.layer_sizes[l + 1];
        views.push_back({off, off + static_cast<size_t>(out) * in, in, out});
        off += static_cast<size_t>(out) * in + out;
    }
    return views;
}

void check_spec(const ModelSpec& spec) {
    if (spec.layer_sizes.size() < 2)
        throw std::invalid_argument("ModelSpec: need at least input and output sizes");
    for (int s : spec.layer_sizes)
        if (s <= 0) throw std::invalid_argument("ModelSpec: layer sizes must be positive");
}

void check_params(const ParamVector& params, const ModelSpec& spec, const char* who) {
    if (static_cast<int>(params.values.size()) != param_count(spec))
        throw std::invalid_argument(std::string(who) + ": parameter length does not match spec");
}

void check_inputs(const Matrix& inputs, const ModelSpec& spec, const char* who) {
    if (inputs.cols != spec.layer_sizes[0])
        throw std::invalid_argument(std::string(who) + ": input width does not match spec");
}

void check_dataset(const TaskDataset& data, const ModelSpec& spec, const char* who) {
    if (data.size() == 0) throw std::invalid_argument(std::string(who) + ": empty dataset");
    check_inputs(data.features, spec, who);
    if (static_cast<int>(data.labels.size()) != data.features.rows)
        throw std::invalid_argument(std::string(who) + ": label count does not match rows");
    int c = spec.layer_sizes.back();
    for (int y : data.labels)
        if (y < 0 || y >= c)
            throw std::invalid_argument(std::string(who) + ": label out of range for spec");
}

// out = x * W^T + b. The single affine routine every forward-like path uses;
// accumulation order (bias first, then k ascending) is part of the
// reproducibility contract.
void affine(const Matrix& x, const double* theta, const LayerView& lv, Matrix& out) {
    out = Matrix(x.rows, lv.out);
    for (int i = 0; i < x.rows; ++i) {
        const double* xi = x.row(i);
        double* oi = out.row(i);
        for (int j = 0; j < lv.out; ++j) {
            const double* wj = theta + lv.w_off + static_cast<size_t>(j) * lv.in;
            double acc = theta[lv.b_off + static_cast<size_t>(j)];
            for (int k = 0; k < lv.in; ++k) acc += xi[k] * wj[k];
            oi[j] = acc;
        }
    }
}

// out += x * W^T with W given as a bare out x in block (no bias).
void matvec_add(const Matrix& x, const double* w, int in, int out_dim, Matrix& out) {
    for (int i = 0; i < x.rows; ++i) {
        const double* xi = x.row(i);
        double* oi = out.row(i);
        for (int j = 0; j < out_dim; ++j) {
            const double* wj = w + static_cast<size_t>(j) * in;
            double acc = oi[j];
            for (int k = 0; k < in; ++k) acc += xi[k] * wj[k];
            oi[j] = acc;
        }
    }
}

// e += delta * W (backprop through the affine map). Caller zero-initializes.
void backprop_matvec_add(const Matrix& delta, const double* theta, const LayerView& lv,
                         Matrix& e) {
    for (int i = 0; i < delta.rows; ++i) {
        const double* di = delta.row(i);
        double* ei = e.row(i);
        for (int j = 0; j < lv.out; ++j) {
            const double* wj = theta + lv.w_off + static_cast<size_t>(j) * lv.in;
            double dij = di[j];
            for (int k = 0; k < lv.in; ++k) ei[k] += dij * wj[k];
        }
    }
}

// grad_W += delta^T * x, grad_b += column sums of delta.
void accumulate_layer_grads(const Matrix& delta, const Matrix& x, const LayerView& lv,
                            double* grad) {
    for (int j = 0; j < lv.out; ++j) {
        double* gw = grad + lv.w_off + static_cast<size_t>(j) * lv.in;
        double gb = 0.0;
        for (int i = 0; i < delta.rows; ++i) {
            double dij = delta.at(i, j);
            gb += dij;
            const double* xi = x.row(i);
            for (int k = 0; k < lv.in; ++k) gw[k] += dij * xi[k];
        }
        grad[lv.b_off + static_cast<size_t>(j)] += gb;
    }
}

// Weight-only variant for the HVP cross term delta^T * dx (the bias gradient
// has no such term: it does not touch the activations).
void accumulate_weight_grads(const Matrix& delta, const Matrix& x, const LayerView& lv,
                             double* grad) {
    for (int j = 0; j < lv.out; ++j) {
        double* gw = grad + lv.w_off + static_cast<size_t>(j) * lv.in;
        for (int i = 0; i < delta.rows; ++i) {
            double dij = delta.at(i, j);
            const double* xi = x.row(i);
            for (int k = 0; k < lv.in; ++k) gw[k] += dij * xi[k];
        }
    }
}

double act(double pre, Activation a) {
    return a == Activation::Tanh ? std::tanh(pre) : (pre > 0.0 ? pre : 0.0);
}

// First and second activation derivatives from the post-activation value:
// tanh' = 1 - t^2, tanh'' = -2 t (1 - t^2); relu' is the 0/1 gate, relu'' = 0 a.e.
double act_d_from_post(double post, Activation a) {
    return a == Activation::Tanh ? 1.0 - post * post : (post > 0.0 ? 1.0 : 0.0);
}

double act_dd_from_post(double post, Activation a) {
    return a == Activation::Tanh ? -2.0 * post * (1.0 - post * post) : 0.0;
}

struct ForwardCache {
    std::vector<Matrix> post;  // post[0] = inputs, post[l] = hidden block l output
    Matrix logits;
};

ForwardCache forward_cached(const ParamVector& params, const ModelSpec& spec,
                            const Matrix& inputs) {
    auto views = layer_views(spec);
    ForwardCache cache;
    cache.post.reserve(views.size());
    cache.post.push_back(inputs);
    for (size_t l = 0; l < views.size(); ++l) {
        Matrix pre;
        affine(cache.post.back(), params.values.data(), views[l], pre);
        if (l + 1 == views.size()) {
            cache.logits = std::move(pre);
        } else {
            for (double& v : pre.data) v = act(v, spec.activation);
            cache.post.push_back(std::move(pre));
        }
    }
    return cache;
}

// Mean cross-entropy of logits plus the residual delta = (softmax - onehot)/N.
double softmax_loss_and_delta(const Matrix& logits, const std::vector<int>& labels,
                              Matrix& delta) {
    const int n = logits.rows, c = logits.cols;
    delta = Matrix(n, c);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const double* zi = logits.row(i);
        double m = zi[0];
        for (int j = 1; j < c; ++j) m = std::max(m, zi[j]);
        double denom = 0.0;
        for (int j = 0; j < c; ++j) denom += std::exp(zi[j] - m);
        double lse = m + std::log(denom);
        total += lse - zi[labels[static_cast<size_t>(i)]];
        double* di = delta.row(i);
        for (int j = 0; j < c; ++j) di[j] = std::exp(zi[j] - lse) / n;
        di[labels[static_cast<size_t>(i)]] -= 1.0 / n;
    }
    return total / n;
}

// Reverse pass shared by the standard and linearized gradients; activations
// and weights are whatever the caller cached (current point vs base point).
void backward(const ForwardCache& cache, const double* theta,
              const std::vector<LayerView>& views, Matrix delta, const ModelSpec& spec,
              double* grad) {
    for (int l = static_cast<int>(views.size()) - 1; l >= 0; --l) {
        const LayerView& lv = views[static_cast<size_t>(l)];
        const Matrix& x = cache.post[static_cast<size_t>(l)];
        accumulate_layer_grads(delta, x, lv, grad);
        if (l > 0) {
            Matrix e(delta.rows, lv.in);
            backprop_matvec_add(delta, theta, lv, e);
            for (size_t idx = 0; idx < e.data.size(); ++idx)
                e.data[idx] *= act_d_from_post(x.data[idx], spec.activation);
            delta = std::move(e);
        }
    }
}

}  // namespace

int param_count(const ModelSpec& spec) {
    check_spec(spec);
    int total = 0;
    for (size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l)
        total += spec.layer_sizes[l] * spec.layer_sizes[l + 1] + spec.layer_sizes[l + 1];
    return total;
}

uint64_t spec_digest(const ModelSpec& spec) {
    check_spec(spec);
    uint64_t h = fnv1a64("mlp-spec");
    for (int s : spec.layer_sizes) {
        int64_t v = s;
        h = fnv1a64(&v, sizeof v, h);
    }
    int32_t a = spec.activation == Activation::Tanh ? 0 : 1;
    return fnv1a64(&a, sizeof a, h);
}

uint64_t param_digest(const ParamVector& params) {
    uint64_t h = fnv1a64(&params.spec_hash, sizeof params.spec_hash);
    return fnv1a64_doubles(params.values, h);
}

ParamVector init_params(const ModelSpec& spec, uint64_t seed) {
    check_spec(spec);
    ParamVector p;
    p.values.assign(static_cast<size_t>(param_count(spec)), 0.0);
    p.spec_hash = spec_digest(spec);
    Rng rng(sub_seed(seed, "init_params"));
    for (const LayerView& lv : layer_views(spec)) {
        double bound = std::sqrt(1.0 / lv.in);
        for (int j = 0; j < lv.out; ++j)
            for (int k = 0; k < lv.in; ++k)
                p.values[lv.w_off + static_cast<size_t>(j) * lv.in + k] =
                    rng.uniform(-bound, bound);
        // biases stay zero
    }
    return p;
}

Matrix forward(const ParamVector& params, const ModelSpec& spec, const Matrix& inputs) {
    check_params(params, spec, "forward");
    check_inputs(inputs, spec, "forward");
    return forward_cached(params, spec, inputs).logits;
}

Matrix layer_features(const ParamVector& params, const ModelSpec& spec, const Matrix& inputs,
                      int block_index) {
    check_params(params, spec, "layer_features");
    check_inputs(inputs, spec, "layer_features");
    int hidden = static_cast<int>(spec.layer_sizes.size()) - 2;
    if (block_index < 0 || block_index > hidden)
        throw std::out_of_range("layer_features: block index out of range");
    ForwardCache cache = forward_cached(params, spec, inputs);
    if (block_index == hidden) return cache.logits;
    return cache.post[static_cast<size_t>(block_index) + 1];
}

double loss(const ParamVector& params, const ModelSpec& spec, const TaskDataset& data) {
    check_params(params, spec, "loss");
    check_dataset(data, spec, "loss");
    ForwardCache cache = forward_cached(params, spec, data.features);
    Matrix delta;
    return softmax_loss_and_delta(cache.logits, data.labels, delta);
}

double loss_and_gradient(const ParamVector& params, const ModelSpec& spec,
                         const TaskDataset& data, ParamVector& grad_out) {
    check_params(params, spec, "gradient");
    check_dataset(data, spec, "gradient");
    auto views = layer_views(spec);
    ForwardCache cache = forward_cached(params, spec, data.features);
    Matrix delta;
    double value = softmax_loss_and_delta(cache.logits, data.labels, delta);
    grad_out.values.assign(params.values.size(), 0.0);
    grad_out.spec_hash = params.spec_hash;
    backward(cache, params.values.data(), views, std::move(delta), spec,
             grad_out.values.data());
    return value;
}

ParamVector gradient(const ParamVector& params, const ModelSpec& spec, const TaskDataset& data) {
    ParamVector g;
    loss_and_gradient(params, spec, data, g);
    return g;
}

ParamVector hvp(const ParamVector& params, const ModelSpec& spec, const TaskDataset& data,
                const ParamVector& v, HvpMethod method) {
    check_params(params, spec, "hvp");
    check_dataset(data, spec, "hvp");
    if (v.values.size() != params.values.size())
        throw std::invalid_argument("hvp: direction length does not match params");

    if (method == HvpMethod::FiniteDifference) {
        const double h = 1e-5;  // documented cross-check step
        ParamVector up = params, dn = params;
        for (size_t i = 0; i < params.values.size(); ++i) {
            up.values[i] = params.values[i] + h * v.values[i];
            dn.values[i] = params.values[i] - h * v.values[i];
        }
        ParamVector gu = gradient(up, spec, data);
        ParamVector gd = gradient(dn, spec, data);
        ParamVector out;
        out.values.resize(params.values.size());
        out.spec_hash = params.spec_hash;
        for (size_t i = 0; i < params.values.size(); ++i)
            out.values[i] = (gu.values[i] - gd.values[i]) / (2.0 * h);
        return out;
    }

    // Exact second-order propagation (forward-over-reverse): the forward and
    // backward passes carry first-order tangents along v, so the tangent of
    // the gradient is exactly H v.
    auto views = layer_views(spec);
    const double* theta = params.values.data();
    const double* dir = v.values.data();
    const int n = data.features.rows;

    // Forward: primals post[l], pre-activation tangents dpre[l] (hidden only),
    // post-activation tangents dpost[l]. dpost[0] (input tangent) is zero and
    // its propagation term is skipped.
    std::vector<Matrix> post{data.features};
    std::vector<Matrix> dpre_hidden;
    std::vector<Matrix> dpost{Matrix(n, data.features.cols)};
    Matrix logits, dlogits;
    for (size_t l = 0; l < views.size(); ++l) {
        const LayerView& lv = views[l];
        Matrix pre;
        affine(post[l], theta, lv, pre);
        Matrix dpre;
        affine(post[l], dir, lv, dpre);  // x * dW^T + db
        if (l > 0) matvec_add(dpost[l], theta + lv.w_off, lv.in, lv.out, dpre);
        if (l + 1 == views.size()) {
            logits = std::move(pre);
            dlogits = std::move(dpre);
        } else {
            Matrix p(n, lv.out), dp(n, lv.out);
            for (size_t idx = 0; idx < pre.data.size(); ++idx) {
                double t = act(pre.data[idx], spec.activation);
                p.data[idx] = t;
                dp.data[idx] = act_d_from_post(t, spec.activation) * dpre.data[idx];
            }
            post.push_back(std::move(p));
            dpre_hidden.push_back(std::move(dpre));
            dpost.push_back(std::move(dp));
        }
    }

    // Softmax residual delta = (p - onehot)/n and its tangent
    // ddelta = p .* (dz - p.dz) / n (Jacobian of softmax applied to dz).
    Matrix delta(n, logits.cols), ddelta(n, logits.cols);
    for (int i = 0; i < n; ++i) {
        const double* zi = logits.row(i);
        const double* dzi = dlogits.row(i);
        double m = zi[0];
        for (int j = 1; j < logits.cols; ++j) m = std::max(m, zi[j]);
        double denom = 0.0;
        for (int j = 0; j < logits.cols; ++j) denom += std::exp(zi[j] - m);
        double pdz = 0.0;
        double* di = delta.row(i);
        double* ddi = ddelta.row(i);
        for (int j = 0; j < logits.cols; ++j) {
            double p = std::exp(zi[j] - m) / denom;
            di[j] = p / n;
            ddi[j] = p;
            pdz += p * dzi[j];
        }
        di[data.labels[static_cast<size_t>(i)]] -= 1.0 / n;
        for (int j = 0; j < logits.cols; ++j) ddi[j] = ddi[j] * (dzi[j] - pdz) / n;
    }

    ParamVector out;
    out.values.assign(params.values.size(), 0.0);
    out.spec_hash = params.spec_hash;
    double* hv = out.values.data();

    // Backward with tangents. Per layer: d(grad_W) = ddelta^T x + delta^T dx,
    // d(grad_b) = colsum(ddelta); then through the affine and activation,
    // d(delta_{l-1}) = (ddelta W + delta dW) .* act'(pre) + (delta W) .* act''(pre) .* dpre.
    Matrix cur = std::move(delta), dcur = std::move(ddelta);
    for (int l = static_cast<int>(views.size()) - 1; l >= 0; --l) {
        const LayerView& lv = views[static_cast<size_t>(l)];
        const Matrix& x = post[static_cast<size_t>(l)];
        accumulate_layer_grads(dcur, x, lv, hv);
        accumulate_weight_grads(cur, dpost[static_cast<size_t>(l)], lv, hv);
        if (l > 0) {
            Matrix e(n, lv.in), de(n, lv.in);
            backprop_matvec_add(cur, theta, lv, e);
            backprop_matvec_add(dcur, theta, lv, de);
            backprop_matvec_add(cur, dir, lv, de);
            const Matrix& xp = post[static_cast<size_t>(l)];
            const Matrix& dt = dpre_hidden[static_cast<size_t>(l) - 1];
            Matrix ncur(n, lv.in), ndcur(n, lv.in);
            for (size_t idx = 0; idx < e.data.size(); ++idx) {
                double d1 = act_d_from_post(xp.data[idx], spec.activation);
                double d2 = act_dd_from_post(xp.data[idx], spec.activation);
                ncur.data[idx] = e.data[idx] * d1;
                ndcur.data[idx] = de.data[idx] * d1 + e.data[idx] * d2 * dt.data[idx];
            }
            cur = std::move(ncur);
            dcur = std::move(ndcur);
        }
    }
    return out;
}

Matrix linearized_forward(const ParamVector& params, const ParamVector& base_params,
                          const ModelSpec& spec, const Matrix& inputs) {
    check_params(params, spec, "linearized_forward");
    check_params(base_params, spec, "linearized_forward");
    check_inputs(inputs, spec, "linearized_forward");
    if (params.spec_hash != base_params.spec_hash)
        throw std::invalid_argument("linearized_forward: params bound to different specs");

    auto views = layer_views(spec);
    const double* base = base_params.values.data();
    const double* full = params.values.data();
    std::vector<double> delta(params.values.size());
    for (size_t i = 0; i < delta.size(); ++i) delta[i] = full[i] - base[i];

    // Tangent recursion around the base point. The final layer is folded as
    // s_{L-1} W0_L^T + (post_{L-1} W_L^T + b_L): algebraically the Taylor
    // value, and for a single-layer model (no incoming tangent) literally the
    // same affine evaluation as forward(params).
    Matrix posts = inputs;  // base post-activation of previous block
    Matrix tangent;         // post-activation tangent of previous block
    for (size_t l = 0; l < views.size(); ++l) {
        const LayerView& lv = views[l];
        bool last = (l + 1 == views.size());
        if (last) {
            Matrix out;
            affine(posts, full, lv, out);
            if (l > 0) matvec_add(tangent, base + lv.w_off, lv.in, lv.out, out);
            return out;
        }
        Matrix pre;
        affine(posts, base, lv, pre);
        Matrix dpre;
        affine(posts, delta.data(), lv, dpre);
        if (l > 0) matvec_add(tangent, base + lv.w_off, lv.in, lv.out, dpre);
        Matrix p(pre.rows, pre.cols), dp(pre.rows, pre.cols);
        for (size_t idx = 0; idx < pre.data.size(); ++idx) {
            double t = act(pre.data[idx], spec.activation);
            p.data[idx] = t;
            dp.data[idx] = act_d_from_post(t, spec.activation) * dpre.data[idx];
        }
        posts = std::move(p);
        tangent = std::move(dp);
    }
    throw std::logic_error("linearized_forward: unreachable");
}

double linearized_loss_and_gradient(const ParamVector& params, const ParamVector& base_params,
                                    const ModelSpec& spec, const TaskDataset& data,
                                    ParamVector& grad_out) {
    check_params(params, spec, "linearized_gradient");
    check_params(base_params, spec, "linearized_gradient");
    check_dataset(data, spec, "linearized_gradient");
    if (params.spec_hash != base_params.spec_hash)
        throw std::invalid_argument("linearized_gradient: params bound to different specs");

    auto views = layer_views(spec);
    Matrix lin_logits = linearized_forward(params, base_params, spec, data.features);
    Matrix delta;
    double value = softmax_loss_and_delta(lin_logits, data.labels, delta);

    // The linearized map is linear in params with Jacobian taken at the base
    // point, so the reverse pass runs through base activations and weights.
    ForwardCache base_cache = forward_cached(base_params, spec, data.features);
    grad_out.values.assign(params.values.size(), 0.0);
    grad_out.spec_hash = params.spec_hash;
    backward(base_cache, base_params.values.data(), views, std::move(delta), spec,
             grad_out.values.data());
    return value;
}

double accuracy_of_logits(const Matrix& logits, const std::vector<int>& labels) {
    if (logits.rows == 0) throw std::invalid_argument("accuracy: empty logits");
    int hits = 0;
    for (int i = 0; i < logits.rows; ++i) {
        const double* zi = logits.row(i);
        int best = 0;
        for (int j = 1; j < logits.cols; ++j)
            if (zi[j] > zi[best]) best = j;  // ties keep the lowest index
        if (best == labels[static_cast<size_t>(i)]) ++hits;
    }
    return static_cast<double>(hits) / logits.rows;
}

double accuracy(const ParamVector& params, const ModelSpec& spec, const TaskDataset& data) {
    check_params(params, spec, "accuracy");
    check_dataset(data, spec, "accuracy");
    return accuracy_of_logits(forward(params, spec, data.features), data.labels);
}

}  // namespace samlab
