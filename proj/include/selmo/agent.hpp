#pragma once

// MPO-style off-policy actor-critic with a fixed E-step temperature and a fixed KL penalty.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "selmo/core.hpp"
#include "selmo/error.hpp"
#include "selmo/neural.hpp"
#include "selmo/rng.hpp"
#include "selmo/serialize.hpp"

namespace selmo {

struct LearnerConfig {
    double lr = 3e-4;
    double discount = 0.99;
    int target_update_period = 100;
    int action_samples = 20;          ///< K actions per state in the E-step
    double e_step_temperature = 0.5;
    double kl_penalty = 0.1;
    int batch_size = 64;              ///< trajectories per update
    int transitions_per_trajectory = 0;  ///< 0 uses every transition; otherwise a random subset per trajectory
    double init_log_std = 0.0;
    std::vector<int> policy_hidden{256, 256, 128};
    std::vector<int> critic_hidden{512, 512, 256};

    void validate() const {
        if (!(lr > 0.0)) throw InvalidInput("LearnerConfig: lr must be positive");
        if (!(discount >= 0.0 && discount < 1.0)) throw InvalidInput("LearnerConfig: discount must be in [0, 1)");
        if (target_update_period < 1) throw InvalidInput("LearnerConfig: target_update_period must be positive");
        if (action_samples < 1) throw InvalidInput("LearnerConfig: action_samples must be positive");
        if (!(e_step_temperature > 0.0)) throw InvalidInput("LearnerConfig: temperature must be positive");
        if (kl_penalty < 0.0) throw InvalidInput("LearnerConfig: kl_penalty must be non-negative");
        if (batch_size < 1) throw InvalidInput("LearnerConfig: batch_size must be positive");
        if (transitions_per_trajectory < 0) throw InvalidInput("LearnerConfig: transitions_per_trajectory must be >= 0");
    }
};

inline constexpr double kMinLogStd = -5.0;
inline constexpr double kMaxLogStd = 1.0;

/// Hidden layers use elu except the last hidden layer, which stays linear (FC(256) elu FC(256) elu FC(128) FC(out)).
inline nn::MLPSpec make_head_spec(int input_dim, const std::vector<int>& hidden, int output_dim,
                                  nn::InputActivation input_activation = nn::InputActivation::none) {
    nn::MLPSpec spec{input_dim, {}, input_activation};
    for (std::size_t i = 0; i < hidden.size(); ++i)
        spec.layers.push_back({hidden[i], i + 1 < hidden.size() ? nn::Activation::elu : nn::Activation::identity});
    spec.layers.push_back({output_dim, nn::Activation::identity});
    spec.validate();
    return spec;
}

/// Diagonal Gaussian with a state-dependent mean and a state-independent learnable log-std.
struct GaussianPolicy {
    nn::MLPSpec spec;
    nn::MLPParams net;
    Vec log_std;

    int state_dim() const { return spec.input_dim; }
    int action_dim() const { return spec.output_dim(); }

    Vec mean(const Vec& s) const { return nn::forward(net, spec, s); }
    Mat mean_batch(const Mat& states) const { return nn::forward_batch(net, spec, states); }
    Vec std_dev() const { return log_std.array().exp().matrix(); }

    bool operator==(const GaussianPolicy& o) const {
        return spec == o.spec && net == o.net && log_std.size() == o.log_std.size() && log_std == o.log_std;
    }
};

inline GaussianPolicy make_policy(int state_dim, int action_dim, const std::vector<int>& hidden, double init_log_std,
                                  std::uint64_t seed) {
    GaussianPolicy p;
    p.spec = make_head_spec(state_dim, hidden, action_dim);
    p.net = nn::init_params(p.spec, seed);
    p.log_std = Vec::Constant(action_dim, std::clamp(init_log_std, kMinLogStd, kMaxLogStd));
    return p;
}

/// Q(s, a) with a tanh squashing of the concatenated input.
struct Critic {
    nn::MLPSpec spec;
    nn::MLPParams net;
    int state_dim = 0;

    double value(const Vec& s, const Vec& a) const {
        Vec x(s.size() + a.size());
        x << s, a;
        return nn::forward(net, spec, x)[0];
    }

    Vec values(const Mat& states, const Mat& actions) const {
        Mat x(states.rows() + actions.rows(), states.cols());
        x.topRows(states.rows()) = states;
        x.bottomRows(actions.rows()) = actions;
        return nn::forward_batch(net, spec, x).row(0).transpose();
    }

    bool operator==(const Critic&) const = default;
};

inline Critic make_critic(int state_dim, int action_dim, const std::vector<int>& hidden, std::uint64_t seed) {
    Critic c;
    c.spec = make_head_spec(state_dim + action_dim, hidden, 1, nn::InputActivation::tanh);
    c.net = nn::init_params(c.spec, seed);
    c.state_dim = state_dim;
    return c;
}

/// Samples a ~ N(mean(s), exp(log_std)^2), clipped to [-1, 1].
inline Vec act(const GaussianPolicy& policy, const Vec& s, Rng& rng) {
    Vec a = policy.mean(s);
    const Vec sd = policy.std_dev();
    for (Eigen::Index i = 0; i < a.size(); ++i) a[i] = std::clamp(a[i] + sd[i] * standard_normal(rng), -1.0, 1.0);
    return a;
}

/// Deterministic action used for evaluation: the clipped mean.
inline Vec act_mean(const GaussianPolicy& policy, const Vec& s) {
    return policy.mean(s).cwiseMax(-1.0).cwiseMin(1.0);
}

inline double log_prob(const Vec& mean, const Vec& log_std, const Vec& a) {
    double lp = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        const double z = (a[i] - mean[i]) * std::exp(-log_std[i]);
        lp += -0.5 * z * z - log_std[i] - 0.5 * std::log(2.0 * std::numbers::pi);
    }
    return lp;
}

/// KL(N(mean_p, std_p) || N(mean_q, std_q)) for diagonal Gaussians.
inline double gaussian_kl(const Vec& mean_p, const Vec& log_std_p, const Vec& mean_q, const Vec& log_std_q) {
    double kl = 0.0;
    for (Eigen::Index i = 0; i < mean_p.size(); ++i) {
        const double var_p = std::exp(2.0 * log_std_p[i]);
        const double var_q = std::exp(2.0 * log_std_q[i]);
        const double d = mean_p[i] - mean_q[i];
        kl += log_std_q[i] - log_std_p[i] + (var_p + d * d) / (2.0 * var_q) - 0.5;
    }
    return kl;
}

/// Transitions flattened column-wise for the learners; trajectories are treated as bags of steps.
struct TransitionBatch {
    Mat states;       ///< state_dim x n
    Mat actions;      ///< action_dim x n
    Vec rewards;      ///< n
    Mat next_states;  ///< state_dim x n
    Vec continues;    ///< n; 0 where the step terminated the episode early, 1 otherwise

    Eigen::Index size() const { return states.cols(); }
};

/// Flattens labeled trajectories. With `per_trajectory` > 0, keeps that many distinct random steps per trajectory.
template <typename TrajectoryLike, typename RewardsOf>
TransitionBatch flatten_batch(std::span<const TrajectoryLike> batch, RewardsOf&& rewards_of, int per_trajectory,
                              Rng& rng) {
    std::vector<std::pair<const Transition*, double>> picked;
    for (const auto& item : batch) {
        const Trajectory& traj = item.trajectory;
        const std::vector<double>& rewards = rewards_of(item);
        if (rewards.size() != traj.size()) throw InvalidInput("flatten_batch: reward/transition count mismatch");
        const std::size_t n = traj.size();
        if (per_trajectory <= 0 || static_cast<std::size_t>(per_trajectory) >= n) {
            for (std::size_t k = 0; k < n; ++k) picked.emplace_back(&traj.transitions[k], rewards[k]);
        } else {
            std::vector<std::size_t> idx(n);
            for (std::size_t k = 0; k < n; ++k) idx[k] = k;
            for (int k = 0; k < per_trajectory; ++k) {
                std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(k), n - 1);
                std::swap(idx[static_cast<std::size_t>(k)], idx[pick(rng)]);
                picked.emplace_back(&traj.transitions[idx[static_cast<std::size_t>(k)]], rewards[idx[static_cast<std::size_t>(k)]]);
            }
        }
    }
    if (picked.empty()) throw InvalidInput("flatten_batch: empty batch");
    const auto n = static_cast<Eigen::Index>(picked.size());
    const auto sd = picked.front().first->s.size();
    const auto ad = picked.front().first->a.size();
    TransitionBatch out{Mat(sd, n), Mat(ad, n), Vec(n), Mat(sd, n), Vec(n)};
    for (Eigen::Index c = 0; c < n; ++c) {
        const Transition& t = *picked[static_cast<std::size_t>(c)].first;
        out.states.col(c) = t.s;
        out.actions.col(c) = t.a;
        out.rewards[c] = picked[static_cast<std::size_t>(c)].second;
        out.next_states.col(c) = t.s_next;
        out.continues[c] = t.terminal ? 0.0 : 1.0;
    }
    return out;
}

inline TransitionBatch flatten_batch(std::span<const LabeledTrajectory> batch, int per_trajectory, Rng& rng) {
    return flatten_batch(batch, [](const LabeledTrajectory& lt) -> const std::vector<double>& { return lt.rewards; },
                         per_trajectory, rng);
}

/// Samples one clipped action per column of `states` from `policy`.
inline Mat sample_actions(const GaussianPolicy& policy, const Mat& states, Rng& rng) {
    Mat a = policy.mean_batch(states);
    const Vec sd = policy.std_dev();
    for (Eigen::Index c = 0; c < a.cols(); ++c)
        for (Eigen::Index i = 0; i < a.rows(); ++i)
            a(i, c) = std::clamp(a(i, c) + sd[i] * standard_normal(rng), -1.0, 1.0);
    return a;
}

/// One Adam step on the mean squared one-step TD error. Early-terminated steps do not bootstrap.
/// Returns the TD loss before the step. Throws NonFiniteError and leaves the critic unchanged on NaN/Inf.
inline double critic_update(Critic& critic, nn::AdamState& adam, const GaussianPolicy& target_policy,
                            const Critic& target_critic, const TransitionBatch& batch, const LearnerConfig& cfg,
                            Rng& rng) {
    const Eigen::Index n = batch.size();
    if (n == 0) throw InvalidInput("critic_update: empty batch");
    const Mat next_actions = sample_actions(target_policy, batch.next_states, rng);
    const Vec next_q = target_critic.values(batch.next_states, next_actions);
    const Vec targets = batch.rewards + cfg.discount * batch.continues.cwiseProduct(next_q);

    Mat x(batch.states.rows() + batch.actions.rows(), n);
    x.topRows(batch.states.rows()) = batch.states;
    x.bottomRows(batch.actions.rows()) = batch.actions;
    const nn::ForwardTrace trace = nn::forward_trace(critic.net, critic.spec, x);
    const Vec err = trace.output.row(0).transpose() - targets;
    const double loss = err.squaredNorm() / static_cast<double>(n);
    if (!std::isfinite(loss)) throw NonFiniteError("critic_update: non-finite TD loss");
    const Mat grad_out = (2.0 / static_cast<double>(n)) * err.transpose();
    const nn::MLPParams grads = nn::backward(critic.net, critic.spec, trace, grad_out);
    nn::MLPParams next = critic.net;
    nn::AdamState next_adam = adam;
    nn::adam_step(next, grads, next_adam, cfg.lr);
    critic.net = std::move(next);
    adam = std::move(next_adam);
    return loss;
}

/// Softmax of Q / temperature over the K sampled actions of one state.
inline Vec e_step_weights(const Vec& q, double temperature) {
    if (q.size() == 0) return q;
    const double top = q.maxCoeff();
    Vec w = ((q.array() - top) / temperature).exp().matrix();
    return w / w.sum();
}

struct PolicyLossAndGrad {
    double loss = 0.0;
    double weighted_nll = 0.0;
    double kl = 0.0;
    nn::MLPParams net_grads;
    Vec log_std_grad;
};

/// Weighted maximum-likelihood objective with a KL penalty towards the target policy:
///   sum_s [ -sum_k w_sk log pi(a_sk | s) + kl_penalty * KL(pi_target(.|s) || pi(.|s)) ]
/// `actions` holds K columns per state, state-major (column s*K + k); `weights` is K x S.
inline PolicyLossAndGrad policy_loss_and_grad(const GaussianPolicy& policy, const Mat& states, const Mat& actions,
                                              const Mat& weights, const Mat& target_means, const Vec& target_log_std,
                                              double kl_penalty) {
    const Eigen::Index S = states.cols();
    const Eigen::Index K = weights.rows();
    const Eigen::Index ad = policy.action_dim();
    if (weights.cols() != S || actions.cols() != S * K || actions.rows() != ad || target_means.cols() != S)
        throw InvalidInput("policy_loss_and_grad: shape mismatch");

    const nn::ForwardTrace trace = nn::forward_trace(policy.net, policy.spec, states);
    const Mat& mu = trace.output;
    const Vec inv_var = (-2.0 * policy.log_std.array()).exp().matrix();
    const Vec target_var = (2.0 * target_log_std.array()).exp().matrix();
    const double log_2pi = std::log(2.0 * std::numbers::pi);

    PolicyLossAndGrad out;
    Mat grad_mu = Mat::Zero(ad, S);
    out.log_std_grad = Vec::Zero(ad);
    for (Eigen::Index s = 0; s < S; ++s) {
        for (Eigen::Index k = 0; k < K; ++k) {
            const double w = weights(k, s);
            for (Eigen::Index i = 0; i < ad; ++i) {
                const double d = actions(i, s * K + k) - mu(i, s);
                const double z2 = d * d * inv_var[i];
                out.weighted_nll += w * (0.5 * z2 + policy.log_std[i] + 0.5 * log_2pi);
                grad_mu(i, s) -= w * d * inv_var[i];
                out.log_std_grad[i] += w * (1.0 - z2);
            }
        }
        if (kl_penalty > 0.0) {
            for (Eigen::Index i = 0; i < ad; ++i) {
                const double d = target_means(i, s) - mu(i, s);
                out.kl += policy.log_std[i] - target_log_std[i] + (target_var[i] + d * d) * 0.5 * inv_var[i] - 0.5;
                grad_mu(i, s) += kl_penalty * (-d) * inv_var[i];
                out.log_std_grad[i] += kl_penalty * (1.0 - (target_var[i] + d * d) * inv_var[i]);
            }
        }
    }
    out.loss = out.weighted_nll + kl_penalty * out.kl;
    out.net_grads = nn::backward(policy.net, policy.spec, trace, grad_mu);
    return out;
}

struct PolicyOptimizer {
    nn::AdamState net;
    nn::AdamVectorState log_std;
};

struct PolicyUpdateStats {
    double loss = 0.0;
    double mean_kl = 0.0;      ///< per-state KL(target || updated-before-step)
    double mean_q = 0.0;       ///< mean Q over all sampled actions
    double weight_entropy = 0.0;  ///< mean entropy of the per-state E-step weights
};

/// E-step: sample K actions per state from the target policy and weight them by softmax(Q / temperature).
/// M-step: one Adam step on the weighted log-likelihood with a KL penalty to the target policy.
///
/// `q_fn(states, actions)` returns one Q value per column; states arrive replicated K times.
template <typename QFn>
PolicyUpdateStats policy_update(GaussianPolicy& policy, PolicyOptimizer& opt, const GaussianPolicy& target,
                                QFn&& q_fn, const Mat& states, const LearnerConfig& cfg, Rng& rng) {
    const Eigen::Index S = states.cols();
    const Eigen::Index K = cfg.action_samples;
    if (S == 0) throw InvalidInput("policy_update: empty batch");

    const Mat target_means = target.mean_batch(states);
    const Vec target_sd = target.std_dev();
    // The likelihood is fitted to the raw Gaussian samples; only the critic sees them clipped, as the
    // environment would. Fitting clipped samples would shrink the policy's spread on every update.
    Mat rep_states(states.rows(), S * K);
    Mat actions(policy.action_dim(), S * K);
    for (Eigen::Index s = 0; s < S; ++s) {
        for (Eigen::Index k = 0; k < K; ++k) {
            rep_states.col(s * K + k) = states.col(s);
            for (Eigen::Index i = 0; i < actions.rows(); ++i)
                actions(i, s * K + k) = target_means(i, s) + target_sd[i] * standard_normal(rng);
        }
    }
    const Vec q = q_fn(rep_states, actions.cwiseMax(-1.0).cwiseMin(1.0).eval());
    if (q.size() != S * K) throw InvalidInput("policy_update: Q function returned wrong count");
    if (!q.allFinite()) throw NonFiniteError("policy_update: non-finite Q values");

    Mat weights(K, S);
    PolicyUpdateStats stats;
    for (Eigen::Index s = 0; s < S; ++s) {
        const Vec w = e_step_weights(q.segment(s * K, K), cfg.e_step_temperature);
        weights.col(s) = w;
        for (Eigen::Index k = 0; k < K; ++k)
            if (w[k] > 0.0) stats.weight_entropy -= w[k] * std::log(w[k]);
    }
    stats.weight_entropy /= static_cast<double>(S);
    stats.mean_q = q.mean();

    PolicyLossAndGrad lg =
        policy_loss_and_grad(policy, states, actions, weights, target_means, target.log_std, cfg.kl_penalty);
    if (!std::isfinite(lg.loss)) throw NonFiniteError("policy_update: non-finite objective");
    stats.loss = lg.loss;
    stats.mean_kl = lg.kl / static_cast<double>(S);

    GaussianPolicy next = policy;
    PolicyOptimizer next_opt = opt;
    nn::adam_step(next.net, lg.net_grads, next_opt.net, cfg.lr);
    nn::adam_step(next.log_std, lg.log_std_grad, next_opt.log_std, cfg.lr);
    next.log_std = next.log_std.cwiseMax(kMinLogStd).cwiseMin(kMaxLogStd);
    policy = std::move(next);
    opt = std::move(next_opt);
    return stats;
}

inline bool sync_due(const LearnerConfig& cfg, std::int64_t step) {
    return step > 0 && step % cfg.target_update_period == 0;
}

struct LearnerStats {
    double td_loss = 0.0;
    PolicyUpdateStats policy;
    bool synced = false;
};

/// Owns the online and target networks plus optimizer state for one off-policy learner.
class Learner {
public:
    Learner(int state_dim, int action_dim, LearnerConfig cfg, std::uint64_t seed)
        : cfg_(std::move(cfg)),
          policy_(make_policy(state_dim, action_dim, cfg_.policy_hidden, cfg_.init_log_std, derive_seed(seed, 1))),
          critic_(make_critic(state_dim, action_dim, cfg_.critic_hidden, derive_seed(seed, 2))),
          target_policy_(policy_),
          target_critic_(critic_),
          rng_(derive_seed(seed, 3)) {
        cfg_.validate();
    }

    const LearnerConfig& config() const noexcept { return cfg_; }
    const GaussianPolicy& policy() const noexcept { return policy_; }
    const GaussianPolicy& target_policy() const noexcept { return target_policy_; }
    const Critic& critic() const noexcept { return critic_; }
    const Critic& target_critic() const noexcept { return target_critic_; }
    std::int64_t steps() const noexcept { return steps_; }

    LearnerStats update(std::span<const LabeledTrajectory> batch) {
        return update(flatten_batch(batch, cfg_.transitions_per_trajectory, rng_));
    }

    /// Trains on any trajectory-bearing items, reading per-step rewards through `rewards_of(item)`.
    template <typename TrajectoryLike, typename RewardsOf>
    LearnerStats update(std::span<const TrajectoryLike> batch, RewardsOf&& rewards_of) {
        return update(flatten_batch(batch, std::forward<RewardsOf>(rewards_of), cfg_.transitions_per_trajectory, rng_));
    }

    /// critic step, policy step, then a target copy every target_update_period updates.
    LearnerStats update(const TransitionBatch& batch) {
        LearnerStats stats;
        stats.td_loss = critic_update(critic_, critic_adam_, target_policy_, target_critic_, batch, cfg_, rng_);
        const Critic& q = critic_;
        stats.policy = policy_update(
            policy_, policy_opt_, target_policy_, [&q](const Mat& s, const Mat& a) { return q.values(s, a); },
            batch.states, cfg_, rng_);
        ++steps_;
        if (sync_due(cfg_, steps_)) {
            sync_targets();
            stats.synced = true;
        }
        return stats;
    }

    void sync_targets() {
        target_policy_ = policy_;
        target_critic_ = critic_;
    }

private:
    LearnerConfig cfg_;
    GaussianPolicy policy_;
    Critic critic_;
    GaussianPolicy target_policy_;
    Critic target_critic_;
    nn::AdamState critic_adam_;
    PolicyOptimizer policy_opt_;
    Rng rng_;
    std::int64_t steps_ = 0;
};

struct PolicySnapshot {
    GaussianPolicy policy;
    std::int64_t episode = 0;
    std::string run_id;
};

inline nn::Checkpoint policy_to_checkpoint(const GaussianPolicy& policy, std::int64_t episode, const std::string& run_id) {
    nn::Checkpoint ck{"gaussian_policy", policy.spec, policy.net, {{"log_std", policy.log_std}}, nn::json::object()};
    ck.metadata["episode"] = episode;
    ck.metadata["run_id"] = run_id;
    return ck;
}

inline PolicySnapshot policy_from_checkpoint(const nn::Checkpoint& ck) {
    if (ck.kind != "gaussian_policy") throw FormatError("checkpoint is not a gaussian policy");
    const nn::NamedArray* ls = nn::find_array(ck, "log_std");
    if (ls == nullptr || ls->values.size() != ck.spec.output_dim()) throw FormatError("policy checkpoint lacks log_std");
    PolicySnapshot snap;
    snap.policy.spec = ck.spec;
    snap.policy.net = ck.params;
    snap.policy.log_std = ls->values;
    snap.episode = ck.metadata.at("episode").get<std::int64_t>();
    snap.run_id = ck.metadata.at("run_id").get<std::string>();
    return snap;
}

inline void save_policy(const std::filesystem::path& stem, const GaussianPolicy& policy, std::int64_t episode,
                        const std::string& run_id) {
    nn::save_checkpoint(stem, policy_to_checkpoint(policy, episode, run_id));
}

inline PolicySnapshot load_policy(const std::filesystem::path& stem) {
    return policy_from_checkpoint(nn::load_checkpoint(stem));
}

}  // namespace selmo
