#pragma once

// Downstream reuse of curiosity snapshots. A mixture agent switches between a learnable task
// policy and a set of auxiliary options every `option_horizon` steps; all experience is relabeled
// with the task reward and trains the task policy off-policy.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "selmo/agent.hpp"
#include "selmo/config.hpp"
#include "selmo/core.hpp"
#include "selmo/csv.hpp"
#include "selmo/envs.hpp"
#include "selmo/orchestrator.hpp"
#include "selmo/replay.hpp"
#include "selmo/rng.hpp"

namespace selmo {

enum class Phase { early, mid, late };

inline std::string to_string(Phase p) {
    switch (p) {
        case Phase::early: return "early";
        case Phase::mid: return "mid";
        case Phase::late: return "late";
    }
    return "?";
}

/// Episode interval [lo, hi] (inclusive, in episodes) of a phase for a run of `total_episodes`:
/// early [0, 10%], mid (10%, 20%], late (20%, 30%].
struct PhaseInterval {
    double lo = 0.0;
    double hi = 0.0;
    bool lo_inclusive = true;

    bool contains(std::int64_t episode) const {
        const double e = static_cast<double>(episode);
        return (lo_inclusive ? e >= lo : e > lo) && e <= hi;
    }
};

inline PhaseInterval phase_interval(Phase p, int total_episodes) {
    const double n = total_episodes;
    switch (p) {
        case Phase::early: return {0.0, 0.1 * n, true};
        case Phase::mid: return {0.1 * n, 0.2 * n, false};
        case Phase::late: return {0.2 * n, 0.3 * n, false};
    }
    return {};
}

struct SkillOption {
    GaussianPolicy policy;
    std::int64_t source_episode = 0;
    std::string source_run_id;
};

/// Frozen policies used as exploration options. Nothing in this module updates them.
struct SkillLibrary {
    std::vector<SkillOption> options;

    std::size_t size() const noexcept { return options.size(); }
};

/// Snapshot indices found in `directory` (files named ep_XXXXXX.manifest), ascending.
inline std::vector<std::int64_t> list_snapshots(const std::filesystem::path& directory) {
    std::vector<std::int64_t> out;
    if (!std::filesystem::is_directory(directory)) return out;
    static const std::regex pattern(R"(ep_(\d+)\.manifest)");
    for (const auto& entry : std::filesystem::directory_iterator(directory)) {
        std::smatch m;
        const std::string name = entry.path().filename().string();
        if (std::regex_match(name, m, pattern)) out.push_back(std::stoll(m[1].str()));
    }
    std::sort(out.begin(), out.end());
    return out;
}

/// Draws `n` snapshots uniformly without replacement from the phase interval of a run of
/// `total_episodes` episodes. Deterministic per seed.
inline SkillLibrary sample_snapshots(const std::filesystem::path& directory, Phase phase, int n, std::uint64_t seed,
                                     int total_episodes) {
    if (n < 1) throw InvalidInput("sample_snapshots: n must be positive");
    const PhaseInterval interval = phase_interval(phase, total_episodes);
    std::vector<std::int64_t> candidates;
    for (std::int64_t idx : list_snapshots(directory))
        if (interval.contains(idx)) candidates.push_back(idx);
    if (candidates.size() < static_cast<std::size_t>(n)) {
        throw InvalidInput("sample_snapshots: phase " + to_string(phase) + " interval " +
                           (interval.lo_inclusive ? "[" : "(") + csv::format_double(interval.lo) + ", " +
                           csv::format_double(interval.hi) + "] holds " + std::to_string(candidates.size()) +
                           " snapshots in " + directory.string() + ", need " + std::to_string(n));
    }
    Rng rng(seed);
    for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, candidates.size() - 1);
        std::swap(candidates[i], candidates[pick(rng)]);
    }
    SkillLibrary lib;
    for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) {
        PolicySnapshot snap = load_policy(snapshot_stem(directory, candidates[i]));
        lib.options.push_back({std::move(snap.policy), snap.episode, snap.run_id});
    }
    return lib;
}

/// Epsilon-greedy choice over per-option values. Ties go to the lowest index.
inline std::size_t select_option(const Vec& q_values, double epsilon, Rng& rng) {
    if (q_values.size() == 0) throw InvalidInput("select_option: no options");
    if (q_values.size() == 1) return 0;
    if (epsilon > 0.0 && uniform01(rng) < epsilon) {
        std::uniform_int_distribution<std::size_t> pick(0, static_cast<std::size_t>(q_values.size() - 1));
        return pick(rng);
    }
    Eigen::Index best = 0;
    q_values.maxCoeff(&best);
    return static_cast<std::size_t>(best);
}

/// Linear decay from `start` to `end` over the first half of `total` episodes, then constant.
inline double epsilon_schedule(int episode, int total, double start, double end) {
    const double half = std::max(1.0, 0.5 * total);
    const double frac = std::clamp((episode - 1) / half, 0.0, 1.0);
    return start + (end - start) * frac;
}

/// A chunk of downstream experience with every task reward recomputed from environment state.
struct TaskTrajectory {
    Trajectory trajectory;
    std::vector<int> option_ids;                          ///< option that produced each step
    std::map<std::string, std::vector<double>> rewards;  ///< per task name, one per step
};

using TaskReplay = CappedReplay<TaskTrajectory, Eviction::fifo>;

enum class DownstreamKind { snapshots, sacx_lite, scratch };

struct DownstreamMode {
    DownstreamKind kind = DownstreamKind::scratch;
    Phase phase = Phase::mid;

    std::string label() const {
        switch (kind) {
            case DownstreamKind::snapshots: return "snapshots:" + to_string(phase);
            case DownstreamKind::sacx_lite: return "sacx";
            case DownstreamKind::scratch: return "scratch";
        }
        return "?";
    }
};

inline DownstreamMode parse_downstream_mode(const std::string& s) {
    if (s == "scratch") return {DownstreamKind::scratch, Phase::mid};
    if (s == "sacx" || s == "sacx_lite") return {DownstreamKind::sacx_lite, Phase::mid};
    if (s == "snapshots:early") return {DownstreamKind::snapshots, Phase::early};
    if (s == "snapshots:mid") return {DownstreamKind::snapshots, Phase::mid};
    if (s == "snapshots:late") return {DownstreamKind::snapshots, Phase::late};
    throw ConfigError("unknown downstream mode '" + s + "' (expected snapshots:early|snapshots:mid|snapshots:late|sacx|scratch)");
}

/// Auxiliary rewards used by the hand-designed baseline.
inline const std::vector<std::string>& sacx_aux_tasks() {
    static const std::vector<std::string> tasks{"reach_red", "move_red"};
    return tasks;
}

struct CurvePoint {
    int episode = 0;
    double task_return = 0.0;
};

struct DownstreamResult {
    std::string mode;
    std::uint64_t seed = 0;
    std::vector<CurvePoint> curve;
    std::vector<std::int64_t> snapshot_episodes;  ///< source episodes of the frozen options, if any
    std::vector<std::int64_t> option_usage;       ///< control steps executed per option (index 0 = task policy)
};

inline constexpr const char* kCurveHeader = "episode,task_return,mode,seed";

inline std::string curve_csv(const std::vector<DownstreamResult>& runs) {
    std::string out = std::string(kCurveHeader) + "\n";
    for (const auto& r : runs)
        for (const auto& p : r.curve)
            out += std::to_string(p.episode) + "," + csv::format_double(p.task_return) + "," + r.mode + "," +
                   std::to_string(r.seed) + "\n";
    return out;
}

/// First episode whose return reaches `threshold`.
inline std::optional<int> episodes_to_threshold(const std::vector<CurvePoint>& curve, double threshold) {
    for (const auto& p : curve)
        if (p.task_return >= threshold) return p.episode;
    return std::nullopt;
}

struct DownstreamHooks {
    std::function<void(const TaskTrajectory&)> on_store;
    std::function<void(int episode, const std::vector<SkillOption>& frozen)> on_episode_end;
};

namespace detail {

struct DownstreamStreams {
    static constexpr std::uint64_t learner = 21;
    static constexpr std::uint64_t actor = 22;
    static constexpr std::uint64_t replay = 23;
    static constexpr std::uint64_t selector = 24;
    static constexpr std::uint64_t snapshots = 25;
    static constexpr std::uint64_t aux_base = 40;
    static constexpr std::uint64_t env_base = 2'000'000;
};

inline std::vector<TaskTrajectory> chunk_task_episode(const std::vector<Transition>& transitions,
                                                      const std::vector<int>& option_ids,
                                                      const std::map<std::string, std::vector<double>>& rewards,
                                                      int chunk_length, TrajectoryIdSource& ids) {
    std::vector<TaskTrajectory> out;
    std::size_t start = 0;
    for (auto& traj : chunk_episode(transitions, chunk_length, ids)) {
        TaskTrajectory tt;
        const std::size_t n = traj.size();
        tt.option_ids.assign(option_ids.begin() + static_cast<std::ptrdiff_t>(start),
                             option_ids.begin() + static_cast<std::ptrdiff_t>(start + n));
        for (const auto& [task, rs] : rewards)
            tt.rewards[task].assign(rs.begin() + static_cast<std::ptrdiff_t>(start),
                                    rs.begin() + static_cast<std::ptrdiff_t>(start + n));
        tt.trajectory = std::move(traj);
        start += n;
        out.push_back(std::move(tt));
    }
    return out;
}

inline LearnerStats train_on(Learner& learner, const std::vector<TaskTrajectory>& batch, const std::string& task) {
    return learner.update(std::span<const TaskTrajectory>(batch),
                          [&task](const TaskTrajectory& t) -> const std::vector<double>& { return t.rewards.at(task); });
}

}  // namespace detail

/// Plain off-policy training of a single task policy with no options; the no-hierarchy reference.
inline DownstreamResult train_task_agent(const RunConfig& cfg, const std::string& task) {
    cfg.validate();
    auto env = envs::make_env(cfg.env);
    if (!env->has_task(task)) throw ConfigError("unknown task '" + task + "' for env " + cfg.env);
    const EnvSpec& spec = env->spec();
    using S = detail::DownstreamStreams;
    Learner learner(spec.state_dim, spec.action_dim, cfg.learner, derive_seed(cfg.seed, S::learner));
    TaskReplay replay(cfg.downstream.replay, derive_seed(cfg.seed, S::replay));
    Rng actor_rng(derive_seed(cfg.seed, S::actor));
    TrajectoryIdSource ids;
    DownstreamResult result{"scratch", cfg.seed, {}, {}, {0}};
    for (int e = 1; e <= cfg.downstream.episodes; ++e) {
        const GaussianPolicy policy = learner.policy();
        Vec s = normalize(env->reset(derive_seed(cfg.seed, S::env_base + static_cast<std::uint64_t>(e))), spec);
        std::vector<Transition> transitions;
        std::map<std::string, std::vector<double>> rewards;
        double ret = 0.0;
        while (!env->done()) {
            Vec a = act(policy, s, actor_rng);
            envs::StepResult r = env->step(a);
            Vec s_next = normalize(r.observation, spec);
            const double rt = env->eval_rewards().at(task);
            rewards[task].push_back(rt);
            ret += rt;
            transitions.push_back({s, std::move(a), s_next, r.terminal});
            s = std::move(s_next);
        }
        result.option_usage[0] += static_cast<std::int64_t>(transitions.size());
        const std::vector<int> option_ids(transitions.size(), 0);
        replay.push(detail::chunk_task_episode(transitions, option_ids, rewards, cfg.trajectory_length, ids));
        if (replay.size() >= static_cast<std::size_t>(cfg.warmup)) {
            for (int u = 0; u < cfg.downstream.updates_per_episode; ++u) {
                auto batch = replay.sample(cfg.learner.batch_size);
                if (!batch) break;
                detail::train_on(learner, *batch, task);
            }
        }
        result.curve.push_back({e, ret});
    }
    return result;
}

/// Trains a task policy on `cfg.downstream.task` with exploration help chosen by `mode`:
///  - snapshots: frozen curiosity snapshots from one phase of a previous run act as options;
///  - sacx_lite: options are auxiliary learners trained concurrently on reach_red and move_red;
///  - scratch: the task policy explores alone.
/// Every stored step carries the id of the option that acted and the task reward from env state.
inline DownstreamResult train_downstream(const RunConfig& cfg, const DownstreamMode& mode,
                                         const DownstreamHooks& hooks = {}) {
    cfg.validate();
    const DownstreamConfig& dcfg = cfg.downstream;
    auto env = envs::make_env(cfg.env);
    if (!env->has_task(dcfg.task)) throw ConfigError("unknown task '" + dcfg.task + "' for env " + cfg.env);
    const EnvSpec& spec = env->spec();
    using S = detail::DownstreamStreams;

    Learner learner(spec.state_dim, spec.action_dim, cfg.learner, derive_seed(cfg.seed, S::learner));
    TaskReplay replay(dcfg.replay, derive_seed(cfg.seed, S::replay));
    Rng actor_rng(derive_seed(cfg.seed, S::actor));
    Rng selector_rng(derive_seed(cfg.seed, S::selector));
    TrajectoryIdSource ids;

    DownstreamResult result;
    result.mode = mode.label();
    result.seed = cfg.seed;

    SkillLibrary library;
    if (mode.kind == DownstreamKind::snapshots) {
        const int source_total = dcfg.source_total_episodes > 0 ? dcfg.source_total_episodes : cfg.total_episodes;
        library = sample_snapshots(dcfg.snapshot_dir, mode.phase, dcfg.n_snapshots,
                                   derive_seed(cfg.seed, S::snapshots), source_total);
        for (const auto& opt : library.options) {
            if (opt.policy.state_dim() != spec.state_dim || opt.policy.action_dim() != spec.action_dim)
                throw ConfigError("snapshot from episode " + std::to_string(opt.source_episode) +
                                  " does not match environment " + cfg.env);
            result.snapshot_episodes.push_back(opt.source_episode);
        }
    }

    std::vector<std::string> aux_tasks;
    std::vector<Learner> aux_learners;
    if (mode.kind == DownstreamKind::sacx_lite) {
        aux_tasks = sacx_aux_tasks();
        for (std::size_t i = 0; i < aux_tasks.size(); ++i) {
            if (!env->has_task(aux_tasks[i])) throw ConfigError("environment lacks auxiliary task " + aux_tasks[i]);
            aux_learners.emplace_back(spec.state_dim, spec.action_dim, cfg.learner, derive_seed(cfg.seed, S::aux_base + i));
        }
    }
    std::vector<std::string> tracked{dcfg.task};
    for (const auto& t : aux_tasks)
        if (std::find(tracked.begin(), tracked.end(), t) == tracked.end()) tracked.push_back(t);

    const std::size_t n_options = 1 + library.size() + aux_learners.size();
    result.option_usage.assign(n_options, 0);

    for (int e = 1; e <= dcfg.episodes; ++e) {
        const GaussianPolicy task_policy = learner.policy();
        std::vector<GaussianPolicy> aux_policies;
        for (const auto& l : aux_learners) aux_policies.push_back(l.policy());
        std::vector<const GaussianPolicy*> options{&task_policy};
        for (const auto& opt : library.options) options.push_back(&opt.policy);
        for (const auto& p : aux_policies) options.push_back(&p);

        const double epsilon = epsilon_schedule(e, dcfg.episodes, dcfg.epsilon_start, dcfg.epsilon_end);
        Vec s = normalize(env->reset(derive_seed(cfg.seed, S::env_base + static_cast<std::uint64_t>(e))), spec);
        std::vector<Transition> transitions;
        std::vector<int> option_ids;
        std::map<std::string, std::vector<double>> rewards;
        double ret = 0.0;
        std::size_t current = 0;
        while (!env->done()) {
            if (env->steps() % dcfg.option_horizon == 0 && options.size() > 1) {
                Vec q(static_cast<Eigen::Index>(options.size()));
                for (std::size_t o = 0; o < options.size(); ++o)
                    q[static_cast<Eigen::Index>(o)] = learner.critic().value(s, act_mean(*options[o], s));
                current = select_option(q, epsilon, selector_rng);
            }
            Vec a = act(*options[current], s, actor_rng);
            envs::StepResult r = env->step(a);
            Vec s_next = normalize(r.observation, spec);
            const auto task_rewards = env->eval_rewards();
            for (const auto& t : tracked) rewards[t].push_back(task_rewards.at(t));
            ret += task_rewards.at(dcfg.task);
            option_ids.push_back(static_cast<int>(current));
            ++result.option_usage[current];
            transitions.push_back({s, std::move(a), s_next, r.terminal});
            s = std::move(s_next);
        }
        auto chunks = detail::chunk_task_episode(transitions, option_ids, rewards, cfg.trajectory_length, ids);
        if (hooks.on_store)
            for (const auto& c : chunks) hooks.on_store(c);
        replay.push(std::move(chunks));

        if (replay.size() >= static_cast<std::size_t>(cfg.warmup)) {
            for (int u = 0; u < dcfg.updates_per_episode; ++u) {
                auto batch = replay.sample(cfg.learner.batch_size);
                if (!batch) break;
                detail::train_on(learner, *batch, dcfg.task);
                for (std::size_t i = 0; i < aux_learners.size(); ++i) detail::train_on(aux_learners[i], *batch, aux_tasks[i]);
            }
        }
        result.curve.push_back({e, ret});
        if (hooks.on_episode_end) hooks.on_episode_end(e, library.options);
    }
    return result;
}

}  // namespace selmo
