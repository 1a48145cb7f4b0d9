#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "selmo/core.hpp"
#include "selmo/error.hpp"
#include "selmo/neural.hpp"
#include "selmo/serialize.hpp"

namespace selmo {

struct WorldModelConfig {
    std::vector<int> hidden{256, 256};
    double lr = 3e-4;            ///< learning rate of the dynamics model
    double reward_scale = 10.0;  ///< multiplier inside the tanh squashing of the prediction error
};

/// Result of one label-then-learn step on a batch of trajectories.
struct LabelResult {
    std::vector<LabeledTrajectory> labeled;
    double loss = 0.0;  ///< summed squared prediction error of the pre-update model
};

/// Forward dynamics model s' = f(s, a). Rewards surprising transitions and learns from them.
///
/// version() counts the Adam steps taken; labels always carry the version of the parameters that
/// produced them.
class WorldModel {
public:
    WorldModel(int state_dim, int action_dim, WorldModelConfig config = {}, std::uint64_t seed = 0)
        : state_dim_(state_dim),
          action_dim_(action_dim),
          config_(std::move(config)),
          spec_(nn::make_spec(state_dim + action_dim, config_.hidden, nn::Activation::elu, state_dim)),
          params_(nn::init_params(spec_, seed)) {}

    int state_dim() const noexcept { return state_dim_; }
    int action_dim() const noexcept { return action_dim_; }
    std::uint64_t version() const noexcept { return version_; }
    const WorldModelConfig& config() const noexcept { return config_; }
    const nn::MLPSpec& spec() const noexcept { return spec_; }
    const nn::MLPParams& params() const noexcept { return params_; }

    void set_params(nn::MLPParams params) {
        nn::detail::check_shapes(params, spec_);
        params_ = std::move(params);
    }

    Vec predict(const Vec& s, const Vec& a) const {
        check_dims(s, a);
        Vec x(state_dim_ + action_dim_);
        x << s, a;
        return nn::forward(params_, spec_, x);
    }

    /// tanh(reward_scale * mean_i (prediction_i - s_next_i)^2), in [0, 1).
    double curiosity_reward(const Transition& t) const {
        if (t.s_next.size() != state_dim_) throw InvalidInput("curiosity_reward: s_next dimension mismatch");
        const Vec err = predict(t.s, t.a) - t.s_next;
        return squash(err.squaredNorm() / static_cast<double>(state_dim_));
    }

    /// Labels a batch with the current parameters without learning from it.
    std::vector<LabeledTrajectory> label(std::span<const Trajectory> batch) const {
        const Packed p = pack(batch);
        const Mat pred = nn::forward_batch(params_, spec_, p.inputs);
        return make_labels(batch, pred, p.targets);
    }

    /// Labels every transition with the current (pre-update) parameters, then takes exactly one Adam
    /// step on the summed squared prediction error of the batch. On a non-finite loss or gradient the
    /// model is left untouched and NonFiniteError is thrown.
    LabelResult label_and_update(std::span<const Trajectory> batch) {
        if (batch.empty()) throw InvalidInput("label_and_update: empty batch");
        const Packed p = pack(batch);
        const nn::ForwardTrace trace = nn::forward_trace(params_, spec_, p.inputs);
        const Mat diff = trace.output - p.targets;

        LabelResult result;
        result.labeled = make_labels(batch, trace.output, p.targets);
        result.loss = diff.squaredNorm();
        if (!std::isfinite(result.loss)) throw NonFiniteError("world model: non-finite prediction loss");

        const nn::MLPParams grads = nn::backward(params_, spec_, trace, 2.0 * diff);
        nn::MLPParams next = params_;
        nn::AdamState next_adam = adam_;
        nn::adam_step(next, grads, next_adam, config_.lr);
        if (!next.all_finite()) throw NonFiniteError("world model: update produced non-finite parameters");
        params_ = std::move(next);
        adam_ = std::move(next_adam);
        ++version_;
        return result;
    }

    /// Summed squared prediction error over a batch, without updating.
    double loss(std::span<const Trajectory> batch) const {
        const Packed p = pack(batch);
        return (nn::forward_batch(params_, spec_, p.inputs) - p.targets).squaredNorm();
    }

    nn::Checkpoint to_checkpoint() const {
        nn::Checkpoint ck{"world_model", spec_, params_, {}, nn::json::object()};
        ck.metadata["version"] = version_;
        ck.metadata["state_dim"] = state_dim_;
        ck.metadata["action_dim"] = action_dim_;
        ck.metadata["reward_scale"] = config_.reward_scale;
        ck.metadata["lr"] = config_.lr;
        return ck;
    }

    static WorldModel from_checkpoint(const nn::Checkpoint& ck) {
        if (ck.kind != "world_model") throw FormatError("checkpoint is not a world model");
        WorldModelConfig cfg;
        cfg.hidden.clear();
        for (std::size_t i = 0; i + 1 < ck.spec.layers.size(); ++i) cfg.hidden.push_back(ck.spec.layers[i].width);
        cfg.reward_scale = ck.metadata.at("reward_scale").get<double>();
        cfg.lr = ck.metadata.at("lr").get<double>();
        WorldModel wm(ck.metadata.at("state_dim").get<int>(), ck.metadata.at("action_dim").get<int>(), cfg);
        wm.set_params(ck.params);
        wm.version_ = ck.metadata.at("version").get<std::uint64_t>();
        return wm;
    }

private:
    struct Packed {
        Mat inputs;   // (state_dim + action_dim) x n
        Mat targets;  // state_dim x n
    };

    // tanh rounds to exactly 1.0 for large arguments; keep the reward strictly below 1.
    double squash(double mse) const {
        return std::min(std::tanh(config_.reward_scale * mse), std::nextafter(1.0, 0.0));
    }

    void check_dims(const Vec& s, const Vec& a) const {
        if (s.size() != state_dim_ || a.size() != action_dim_)
            throw InvalidInput("world model: state/action dimension mismatch");
    }

    Packed pack(std::span<const Trajectory> batch) const {
        std::size_t n = 0;
        for (const auto& traj : batch) n += traj.size();
        Packed p{Mat(state_dim_ + action_dim_, static_cast<Eigen::Index>(n)),
                 Mat(state_dim_, static_cast<Eigen::Index>(n))};
        Eigen::Index col = 0;
        for (const auto& traj : batch) {
            for (const auto& t : traj.transitions) {
                check_dims(t.s, t.a);
                if (t.s_next.size() != state_dim_) throw InvalidInput("world model: s_next dimension mismatch");
                p.inputs.col(col).head(state_dim_) = t.s;
                p.inputs.col(col).tail(action_dim_) = t.a;
                p.targets.col(col) = t.s_next;
                ++col;
            }
        }
        return p;
    }

    std::vector<LabeledTrajectory> make_labels(std::span<const Trajectory> batch, const Mat& pred,
                                               const Mat& targets) const {
        std::vector<LabeledTrajectory> out;
        out.reserve(batch.size());
        Eigen::Index col = 0;
        for (const auto& traj : batch) {
            LabeledTrajectory lt{traj, {}, version_};
            lt.rewards.reserve(traj.size());
            for (std::size_t k = 0; k < traj.size(); ++k, ++col) {
                const Vec err = pred.col(col) - targets.col(col);
                lt.rewards.push_back(squash(err.squaredNorm() / static_cast<double>(state_dim_)));
            }
            out.push_back(std::move(lt));
        }
        return out;
    }

    int state_dim_;
    int action_dim_;
    WorldModelConfig config_;
    nn::MLPSpec spec_;
    nn::MLPParams params_;
    nn::AdamState adam_;
    std::uint64_t version_ = 0;
};

}  // namespace selmo
