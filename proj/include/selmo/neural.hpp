#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "selmo/error.hpp"
#include "selmo/rng.hpp"

namespace selmo::nn {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class Activation { identity, elu, tanh };
enum class InputActivation { none, tanh };

inline std::string_view to_string(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::elu: return "elu";
        case Activation::tanh: return "tanh";
    }
    return "?";
}

inline Activation activation_from_string(std::string_view s) {
    if (s == "identity") return Activation::identity;
    if (s == "elu") return Activation::elu;
    if (s == "tanh") return Activation::tanh;
    throw FormatError("unknown activation '" + std::string(s) + "'");
}

struct LayerSpec {
    int width = 0;
    Activation activation = Activation::identity;

    bool operator==(const LayerSpec&) const = default;
};

struct MLPSpec {
    int input_dim = 0;
    std::vector<LayerSpec> layers;
    InputActivation input_activation = InputActivation::none;

    int output_dim() const { return layers.empty() ? input_dim : layers.back().width; }

    void validate() const {
        if (input_dim < 1) throw InvalidInput("MLPSpec: input_dim must be positive");
        if (layers.empty()) throw InvalidInput("MLPSpec: at least one layer required");
        for (const auto& l : layers)
            if (l.width < 1) throw InvalidInput("MLPSpec: layer width must be positive");
        if (layers.back().activation != Activation::identity)
            throw InvalidInput("MLPSpec: last layer must be linear");
    }

    bool operator==(const MLPSpec&) const = default;
};

/// Builds `hidden` layers with one activation followed by a linear output layer.
inline MLPSpec make_spec(int input_dim, const std::vector<int>& hidden, Activation hidden_activation, int output_dim,
                         InputActivation input_activation = InputActivation::none) {
    MLPSpec spec{input_dim, {}, input_activation};
    for (int w : hidden) spec.layers.push_back({w, hidden_activation});
    spec.layers.push_back({output_dim, Activation::identity});
    return spec;
}

struct Layer {
    Mat weight;  ///< out x in
    Vec bias;    ///< out

    bool operator==(const Layer& o) const {
        return weight.rows() == o.weight.rows() && weight.cols() == o.weight.cols() && bias.size() == o.bias.size() &&
               weight == o.weight && bias == o.bias;
    }
};

struct MLPParams {
    std::vector<Layer> layers;

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
        return n;
    }

    bool all_finite() const {
        for (const auto& l : layers)
            if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
        return true;
    }

    bool operator==(const MLPParams&) const = default;
};

inline MLPParams zeros_like(const MLPParams& p) {
    MLPParams z;
    for (const auto& l : p.layers)
        z.layers.push_back({Mat::Zero(l.weight.rows(), l.weight.cols()), Vec::Zero(l.bias.size())});
    return z;
}

inline MLPParams zero_params(const MLPSpec& spec) {
    MLPParams p;
    int fan_in = spec.input_dim;
    for (const auto& l : spec.layers) {
        p.layers.push_back({Mat::Zero(l.width, fan_in), Vec::Zero(l.width)});
        fan_in = l.width;
    }
    return p;
}

/// Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], zero biases.
inline MLPParams init_params(const MLPSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    MLPParams p = zero_params(spec);
    for (auto& l : p.layers) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(l.weight.cols()));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
            for (Eigen::Index r = 0; r < l.weight.rows(); ++r) l.weight(r, c) = dist(rng);
    }
    return p;
}

namespace detail {

inline void activate(Mat& z, Activation a) {
    switch (a) {
        case Activation::identity: break;
        case Activation::elu: z = z.unaryExpr([](double x) { return x > 0.0 ? x : std::expm1(x); }); break;
        case Activation::tanh: z = z.array().tanh().matrix(); break;
    }
}

// Multiplies the upstream gradient in place by the activation derivative, given pre-activations.
inline void activation_backward(Mat& grad, const Mat& pre, Activation a) {
    switch (a) {
        case Activation::identity: break;
        case Activation::elu:
            grad.array() *= pre.unaryExpr([](double x) { return x > 0.0 ? 1.0 : std::exp(x); }).array();
            break;
        case Activation::tanh: grad.array() *= 1.0 - pre.array().tanh().square(); break;
    }
}

inline void check_shapes(const MLPParams& params, const MLPSpec& spec) {
    if (params.layers.size() != spec.layers.size())
        throw InvalidInput("MLP: parameter layer count does not match spec");
    int fan_in = spec.input_dim;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = params.layers[i];
        if (l.weight.rows() != spec.layers[i].width || l.weight.cols() != fan_in || l.bias.size() != spec.layers[i].width)
            throw InvalidInput("MLP: parameter shape mismatch at layer " + std::to_string(i));
        fan_in = spec.layers[i].width;
    }
}

}  // namespace detail

/// Intermediate values of a batched forward pass, kept for backpropagation.
struct ForwardTrace {
    std::vector<Mat> inputs;  ///< input to layer i (columns are samples)
    std::vector<Mat> pre;     ///< pre-activation of layer i
    Mat output;
};

/// Forward pass over a batch stored column-wise (input_dim x n).
///
/// Each output column depends only on its own input column and is computed identically for any
/// batch size, so a single-sample call reproduces the matching column of a batched call bit for bit.
inline ForwardTrace forward_trace(const MLPParams& params, const MLPSpec& spec, const Mat& input) {
    detail::check_shapes(params, spec);
    if (input.rows() != spec.input_dim)
        throw InvalidInput("MLP forward: expected input dim " + std::to_string(spec.input_dim) + ", got " +
                           std::to_string(input.rows()));
    ForwardTrace trace;
    trace.inputs.reserve(spec.layers.size());
    trace.pre.reserve(spec.layers.size());
    Mat x = input;
    if (spec.input_activation == InputActivation::tanh) x = x.array().tanh().matrix();
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = params.layers[i];
        Mat z = l.weight.lazyProduct(x);
        z.colwise() += l.bias;
        trace.inputs.push_back(std::move(x));
        trace.pre.push_back(z);
        detail::activate(z, spec.layers[i].activation);
        x = std::move(z);
    }
    trace.output = std::move(x);
    return trace;
}

inline Mat forward_batch(const MLPParams& params, const MLPSpec& spec, const Mat& input) {
    detail::check_shapes(params, spec);
    if (input.rows() != spec.input_dim) throw InvalidInput("MLP forward: input dimension mismatch");
    Mat x = input;
    if (spec.input_activation == InputActivation::tanh) x = x.array().tanh().matrix();
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = params.layers[i];
        Mat z = l.weight.lazyProduct(x);
        z.colwise() += l.bias;
        detail::activate(z, spec.layers[i].activation);
        x = std::move(z);
    }
    return x;
}

inline Vec forward(const MLPParams& params, const MLPSpec& spec, const Vec& input) {
    Mat out = forward_batch(params, spec, Mat(input));
    return out.col(0);
}

/// Parameter gradients given dLoss/dOutput for every column of the traced batch.
inline MLPParams backward(const MLPParams& params, const MLPSpec& spec, const ForwardTrace& trace, Mat grad_output) {
    MLPParams grads = zeros_like(params);
    Mat g = std::move(grad_output);
    for (std::size_t k = spec.layers.size(); k-- > 0;) {
        detail::activation_backward(g, trace.pre[k], spec.layers[k].activation);
        grads.layers[k].weight.noalias() = g * trace.inputs[k].transpose();
        grads.layers[k].bias = g.rowwise().sum();
        if (k > 0) {
            Mat prev = params.layers[k].weight.transpose() * g;
            g = std::move(prev);
        }
    }
    return grads;
}

struct LossAndGrad {
    double loss = 0.0;
    MLPParams grads;
};

/// Sum of squared errors over every output component of every sample, with exact gradients.
inline LossAndGrad loss_and_grad(const MLPParams& params, const MLPSpec& spec, const Mat& inputs, const Mat& targets) {
    if (inputs.cols() != targets.cols() || targets.rows() != spec.output_dim())
        throw InvalidInput("loss_and_grad: inputs/targets shape mismatch");
    ForwardTrace trace = forward_trace(params, spec, inputs);
    Mat diff = trace.output - targets;
    LossAndGrad out;
    out.loss = diff.squaredNorm();
    out.grads = backward(params, spec, trace, 2.0 * diff);
    return out;
}

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    MLPParams m;
    MLPParams v;
    std::int64_t t = 0;

    static AdamState for_params(const MLPParams& p) { return {zeros_like(p), zeros_like(p), 0}; }
};

/// Moments for a free-standing parameter vector (e.g. a policy's log-std).
struct AdamVectorState {
    Vec m;
    Vec v;
    std::int64_t t = 0;

    static AdamVectorState for_size(Eigen::Index n) { return {Vec::Zero(n), Vec::Zero(n), 0}; }
};

namespace detail {

inline void adam_apply(Mat& param, Mat& m, Mat& v, const Mat& g, double lr, double c1, double c2,
                       const AdamConfig& cfg) {
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.epsilon);
}

inline void adam_apply_vec(Vec& param, Vec& m, Vec& v, const Vec& g, double lr, double c1, double c2,
                           const AdamConfig& cfg) {
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.epsilon);
}

}  // namespace detail

/// Bias-corrected Adam update in place. Non-finite gradients reject the whole step before any change.
inline void adam_step(MLPParams& params, const MLPParams& grads, AdamState& state, double lr,
                      const AdamConfig& cfg = {}) {
    if (grads.layers.size() != params.layers.size()) throw InvalidInput("adam_step: gradient shape mismatch");
    for (std::size_t i = 0; i < grads.layers.size(); ++i) {
        const auto& g = grads.layers[i];
        if (g.weight.rows() != params.layers[i].weight.rows() || g.weight.cols() != params.layers[i].weight.cols() ||
            g.bias.size() != params.layers[i].bias.size())
            throw InvalidInput("adam_step: gradient shape mismatch at layer " + std::to_string(i));
        if (!g.weight.allFinite() || !g.bias.allFinite())
            throw NonFiniteError("adam_step: non-finite gradient", static_cast<std::ptrdiff_t>(i));
    }
    if (state.m.layers.empty()) state = AdamState::for_params(params);
    ++state.t;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        auto& p = params.layers[i];
        auto& m = state.m.layers[i];
        auto& v = state.v.layers[i];
        detail::adam_apply(p.weight, m.weight, v.weight, grads.layers[i].weight, lr, c1, c2, cfg);
        detail::adam_apply_vec(p.bias, m.bias, v.bias, grads.layers[i].bias, lr, c1, c2, cfg);
    }
}

inline void adam_step(Vec& param, const Vec& grad, AdamVectorState& state, double lr, const AdamConfig& cfg = {}) {
    if (grad.size() != param.size()) throw InvalidInput("adam_step: gradient shape mismatch");
    if (!grad.allFinite()) throw NonFiniteError("adam_step: non-finite gradient");
    if (state.m.size() != param.size()) state = AdamVectorState::for_size(param.size());
    ++state.t;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    detail::adam_apply_vec(param, state.m, state.v, grad, lr, c1, c2, cfg);
}

}  // namespace selmo::nn
