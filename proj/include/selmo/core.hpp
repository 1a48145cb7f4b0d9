#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "selmo/error.hpp"

namespace selmo {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Static description of an environment's observation and action spaces.
struct EnvSpec {
    int state_dim = 0;
    int action_dim = 0;
    Vec obs_low;   ///< raw observation lower bound per dimension
    Vec obs_high;  ///< raw observation upper bound per dimension
    int episode_length = 1;
    double control_dt = 0.05;

    void validate() const {
        if (state_dim <= 0 || action_dim <= 0)
            throw InvalidInput("EnvSpec: state_dim and action_dim must be positive");
        if (obs_low.size() != state_dim || obs_high.size() != state_dim)
            throw InvalidInput("EnvSpec: observation bounds must have length state_dim");
        for (int i = 0; i < state_dim; ++i)
            if (!(obs_low[i] < obs_high[i]))
                throw InvalidInput("EnvSpec: obs_low[" + std::to_string(i) + "] must be < obs_high");
        if (episode_length < 1) throw InvalidInput("EnvSpec: episode_length must be >= 1");
    }
};

/// One normalized environment step. `terminal` marks early termination only, never time-limit truncation.
struct Transition {
    Vec s;
    Vec a;
    Vec s_next;
    bool terminal = false;

    bool operator==(const Transition&) const = default;
};

struct Trajectory {
    std::uint64_t id = 0;
    std::vector<Transition> transitions;

    std::size_t size() const noexcept { return transitions.size(); }
    bool operator==(const Trajectory&) const = default;
};

/// A trajectory paired with per-transition curiosity rewards and the world-model version that produced them.
struct LabeledTrajectory {
    Trajectory trajectory;
    std::vector<double> rewards;
    std::uint64_t model_version = 0;

    std::uint64_t id() const noexcept { return trajectory.id; }
    bool operator==(const LabeledTrajectory&) const = default;
};

/// Hands out monotonically increasing trajectory ids. One instance per run keeps runs reproducible.
class TrajectoryIdSource {
public:
    explicit TrajectoryIdSource(std::uint64_t first = 1) : next_(first) {}
    std::uint64_t next() noexcept { return next_.fetch_add(1, std::memory_order_relaxed); }
    std::uint64_t peek() const noexcept { return next_.load(std::memory_order_relaxed); }

private:
    std::atomic<std::uint64_t> next_;
};

inline TrajectoryIdSource& global_trajectory_ids() {
    static TrajectoryIdSource ids;
    return ids;
}

/// Affine map of [obs_low, obs_high] onto [-1, 1] per dimension, clipped.
inline Vec normalize(const Vec& raw_obs, const EnvSpec& spec) {
    if (raw_obs.size() != spec.state_dim)
        throw InvalidInput("normalize: expected " + std::to_string(spec.state_dim) + " values, got " +
                           std::to_string(raw_obs.size()));
    Vec out(spec.state_dim);
    for (int i = 0; i < spec.state_dim; ++i) {
        const double v = 2.0 * (raw_obs[i] - spec.obs_low[i]) / (spec.obs_high[i] - spec.obs_low[i]) - 1.0;
        out[i] = std::clamp(v, -1.0, 1.0);
    }
    return out;
}

inline Vec denormalize(const Vec& obs, const EnvSpec& spec) {
    if (obs.size() != spec.state_dim)
        throw InvalidInput("denormalize: dimension mismatch");
    Vec out(spec.state_dim);
    for (int i = 0; i < spec.state_dim; ++i)
        out[i] = spec.obs_low[i] + (obs[i] + 1.0) * 0.5 * (spec.obs_high[i] - spec.obs_low[i]);
    return out;
}

/// Splits an episode into consecutive chunks of at most `chunk_length` transitions.
/// The last chunk keeps the remainder; it is neither padded nor dropped.
inline std::vector<Trajectory> chunk_episode(std::span<const Transition> episode, int chunk_length,
                                             TrajectoryIdSource& ids) {
    if (chunk_length < 1) throw InvalidInput("chunk_episode: chunk length must be positive");
    std::vector<Trajectory> chunks;
    for (std::size_t start = 0; start < episode.size(); start += static_cast<std::size_t>(chunk_length)) {
        const std::size_t end = std::min(episode.size(), start + static_cast<std::size_t>(chunk_length));
        Trajectory traj;
        traj.id = ids.next();
        traj.transitions.assign(episode.begin() + static_cast<std::ptrdiff_t>(start),
                                episode.begin() + static_cast<std::ptrdiff_t>(end));
        chunks.push_back(std::move(traj));
    }
    return chunks;
}

inline std::vector<Trajectory> chunk_episode(std::span<const Transition> episode, int chunk_length) {
    return chunk_episode(episode, chunk_length, global_trajectory_ids());
}

/// Checks the chaining and terminal-placement invariants of a trajectory.
inline bool is_well_formed(const Trajectory& traj) {
    const auto& ts = traj.transitions;
    if (ts.empty()) return false;
    for (std::size_t k = 0; k + 1 < ts.size(); ++k) {
        if (ts[k].terminal) return false;
        if (ts[k].s_next != ts[k + 1].s) return false;
    }
    return true;
}

inline bool is_well_formed(const LabeledTrajectory& lt) {
    if (!is_well_formed(lt.trajectory) || lt.rewards.size() != lt.trajectory.size()) return false;
    return std::all_of(lt.rewards.begin(), lt.rewards.end(), [](double r) { return r >= 0.0 && r < 1.0; });
}

}  // namespace selmo
