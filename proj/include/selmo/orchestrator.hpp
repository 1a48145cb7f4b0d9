#pragma once

// Actor, model learner and policy learner connected only through the two replays and a
// latest-policy mailbox. Deterministic mode interleaves the three roles on one thread in a fixed
// per-episode schedule; parallel mode runs each role on its own thread.

#include <atomic>
#include <chrono>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "selmo/agent.hpp"
#include "selmo/config.hpp"
#include "selmo/core.hpp"
#include "selmo/csv.hpp"
#include "selmo/envs.hpp"
#include "selmo/replay.hpp"
#include "selmo/rng.hpp"
#include "selmo/worldmodel.hpp"

namespace selmo {

namespace fs = std::filesystem;

inline constexpr const char* kMetricsHeader = "episode,curiosity_return,episode_len,model_loss,model_version,policy_updates";

struct EpisodeMetrics {
    int episode = 0;
    double curiosity_return = 0.0;
    int episode_len = 0;
    double model_loss = 0.0;  ///< loss of the most recent world-model update (0 before the first)
    std::uint64_t model_version = 0;
    std::int64_t policy_updates = 0;

    std::string csv_row() const {
        return std::to_string(episode) + "," + csv::format_double(curiosity_return) + "," +
               std::to_string(episode_len) + "," + csv::format_double(model_loss) + "," +
               std::to_string(model_version) + "," + std::to_string(policy_updates);
    }
};

/// Last-write-wins slot holding the newest policy parameters for the actor.
class PolicyMailbox {
public:
    void publish(GaussianPolicy policy) {
        auto ptr = std::make_shared<const GaussianPolicy>(std::move(policy));
        std::lock_guard lock(mutex_);
        latest_ = std::move(ptr);
    }

    std::shared_ptr<const GaussianPolicy> latest() const {
        std::lock_guard lock(mutex_);
        return latest_;
    }

private:
    mutable std::mutex mutex_;
    std::shared_ptr<const GaussianPolicy> latest_;
};

/// Optional observation points for tests and experiments. Called from the thread of the role involved.
struct RunHooks {
    /// After every environment step, from the actor.
    std::function<void(int episode, const envs::Environment&)> on_step;
    /// After each episode's schedule (deterministic) or after the actor finished the episode (parallel).
    std::function<void(int episode, const ModelReplay&, const PolicyReplay&, std::uint64_t model_version)> on_episode_end;
    /// After each labeled batch is pushed to the policy replay, from the model learner.
    std::function<void(const std::vector<LabeledTrajectory>&, std::uint64_t model_version_after)> on_labeled;
    std::function<void(const EpisodeMetrics&)> on_metrics;
};

struct RunResult {
    fs::path snapshot_dir;
    fs::path metrics_path;
    int episodes_completed = 0;
    std::uint64_t model_version = 0;
    std::int64_t policy_updates = 0;
    std::vector<fs::path> snapshots;
    std::optional<std::string> error;  ///< set when a learner failed and the run halted early
};

inline fs::path snapshot_stem(const fs::path& directory, std::int64_t episode_index) {
    char name[32];
    std::snprintf(name, sizeof(name), "ep_%06lld", static_cast<long long>(episode_index));
    return directory / name;
}

/// Writes a policy snapshot named by its zero-padded episode index; returns the path stem.
inline fs::path snapshot(const GaussianPolicy& policy, std::int64_t episode_index, const fs::path& directory,
                         const std::string& run_id = "") {
    const fs::path stem = snapshot_stem(directory, episode_index);
    save_policy(stem, policy, episode_index, run_id);
    return stem;
}

namespace detail {

struct Episode {
    std::vector<Transition> transitions;
};

// Runs one episode with `policy`, returning normalized transitions.
inline Episode collect_episode(envs::Environment& env, const GaussianPolicy& policy, std::uint64_t env_seed, Rng& rng,
                               int episode_index, const RunHooks& hooks) {
    const EnvSpec& spec = env.spec();
    Episode ep;
    Vec s = normalize(env.reset(env_seed), spec);
    while (!env.done()) {
        Vec a = act(policy, s, rng);
        envs::StepResult r = env.step(a);
        Vec s_next = normalize(r.observation, spec);
        ep.transitions.push_back({s, std::move(a), s_next, r.terminal});
        s = std::move(s_next);
        if (hooks.on_step) hooks.on_step(episode_index, env);
    }
    return ep;
}

inline double curiosity_return(const WorldModel& model, const std::vector<Trajectory>& chunks) {
    double total = 0.0;
    for (const auto& lt : model.label(chunks))
        for (double r : lt.rewards) total += r;
    return total;
}

class MetricsWriter {
public:
    explicit MetricsWriter(const fs::path& path) : out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw FormatError("cannot write metrics file " + path.string());
        out_ << kMetricsHeader << '\n';
        out_.flush();
    }

    void write(const EpisodeMetrics& m) {
        out_ << m.csv_row() << '\n';
        out_.flush();
    }

private:
    std::ofstream out_;
};

struct Streams {
    static constexpr std::uint64_t model_init = 11;
    static constexpr std::uint64_t learner_init = 12;
    static constexpr std::uint64_t actor = 13;
    static constexpr std::uint64_t model_replay = 14;
    static constexpr std::uint64_t policy_replay = 15;
    static constexpr std::uint64_t env_base = 1'000'000;
};

}  // namespace detail

/// The full curiosity loop. Outputs `<output_dir>/metrics.csv` and `<output_dir>/snapshots/ep_XXXXXX.*`.
inline RunResult run_selmo(const RunConfig& cfg, const RunHooks& hooks = {}) {
    cfg.validate();
    auto env = envs::make_env(cfg.env);
    const EnvSpec& spec = env->spec();

    RunResult result;
    const fs::path out_dir(cfg.output_dir);
    result.snapshot_dir = out_dir / "snapshots";
    result.metrics_path = out_dir / "metrics.csv";
    fs::create_directories(result.snapshot_dir);
    detail::MetricsWriter metrics(result.metrics_path);

    ModelReplay model_replay(cfg.model_replay, derive_seed(cfg.seed, detail::Streams::model_replay));
    PolicyReplay policy_replay(cfg.policy_replay, derive_seed(cfg.seed, detail::Streams::policy_replay));
    WorldModel model(spec.state_dim, spec.action_dim, cfg.world_model, derive_seed(cfg.seed, detail::Streams::model_init));
    Learner learner(spec.state_dim, spec.action_dim, cfg.learner, derive_seed(cfg.seed, detail::Streams::learner_init));
    TrajectoryIdSource ids;
    Rng actor_rng(derive_seed(cfg.seed, detail::Streams::actor));
    const std::string run_id = cfg.effective_run_id();
    const int warmup = std::max(cfg.warmup, 0);

    auto env_seed = [&](int episode) {
        return derive_seed(cfg.seed, detail::Streams::env_base + static_cast<std::uint64_t>(episode));
    };

    if (cfg.mode == RunMode::deterministic) {
        GaussianPolicy actor_policy = learner.policy();
        double last_loss = 0.0;
        try {
            for (int e = 1; e <= cfg.total_episodes; ++e) {
                detail::Episode ep = detail::collect_episode(*env, actor_policy, env_seed(e), actor_rng, e, hooks);
                std::vector<Trajectory> chunks = chunk_episode(ep.transitions, cfg.trajectory_length, ids);
                EpisodeMetrics m;
                m.episode = e;
                m.episode_len = static_cast<int>(ep.transitions.size());
                m.curiosity_return = detail::curiosity_return(model, chunks);
                for (auto& c : chunks) push_model(model_replay, std::move(c));

                for (int i = 0; i < cfg.model_updates_per_episode; ++i) {
                    if (model_replay.size() < static_cast<std::size_t>(warmup)) break;
                    auto batch = sample_model_batch(model_replay, cfg.batch_size);
                    if (!batch) break;
                    LabelResult res = model.label_and_update(*batch);
                    last_loss = res.loss;
                    if (hooks.on_labeled) hooks.on_labeled(res.labeled, model.version());
                    push_policy(policy_replay, std::move(res.labeled));
                }
                for (int i = 0; i < cfg.policy_updates_per_episode; ++i) {
                    auto batch = sample_policy_batch(policy_replay, cfg.learner.batch_size);
                    if (!batch) break;
                    learner.update(*batch);
                }
                actor_policy = learner.policy();

                m.model_loss = last_loss;
                m.model_version = model.version();
                m.policy_updates = learner.steps();
                metrics.write(m);
                if (hooks.on_metrics) hooks.on_metrics(m);
                if (e % cfg.snapshot_every == 0)
                    result.snapshots.push_back(snapshot(actor_policy, e, result.snapshot_dir, run_id));
                if (hooks.on_episode_end) hooks.on_episode_end(e, model_replay, policy_replay, model.version());
                result.episodes_completed = e;
            }
        } catch (const std::exception& ex) {
            result.error = ex.what();
        }
        result.model_version = model.version();
        result.policy_updates = learner.steps();
        return result;
    }

    // Parallel mode.
    PolicyMailbox mailbox;
    mailbox.publish(learner.policy());
    std::atomic<bool> actor_done{false};
    std::atomic<bool> failed{false};
    std::atomic<std::int64_t> policy_updates{0};
    std::atomic<std::uint64_t> published_version{0};
    std::mutex error_mutex;
    auto record_error = [&](const std::string& what) {
        std::lock_guard lock(error_mutex);
        if (!result.error) result.error = what;
        failed = true;
    };

    struct MetricsJob {
        int episode;
        int length;
        std::vector<Trajectory> chunks;
    };
    std::mutex jobs_mutex;
    std::deque<MetricsJob> jobs;

    std::thread model_thread([&] {
        double last_loss = 0.0;
        try {
            while (!failed) {
                bool worked = false;
                std::deque<MetricsJob> pending;
                {
                    std::lock_guard lock(jobs_mutex);
                    pending.swap(jobs);
                }
                for (auto& job : pending) {
                    EpisodeMetrics m;
                    m.episode = job.episode;
                    m.episode_len = job.length;
                    m.curiosity_return = detail::curiosity_return(model, job.chunks);
                    m.model_loss = last_loss;
                    m.model_version = model.version();
                    m.policy_updates = policy_updates.load();
                    metrics.write(m);
                    if (hooks.on_metrics) hooks.on_metrics(m);
                    worked = true;
                }
                if (actor_done) {
                    std::lock_guard lock(jobs_mutex);
                    if (jobs.empty()) break;
                    continue;
                }
                if (model_replay.size() >= static_cast<std::size_t>(warmup)) {
                    if (auto batch = sample_model_batch(model_replay, cfg.batch_size)) {
                        LabelResult res = model.label_and_update(*batch);
                        last_loss = res.loss;
                        published_version = model.version();
                        if (hooks.on_labeled) hooks.on_labeled(res.labeled, model.version());
                        push_policy(policy_replay, std::move(res.labeled));
                        worked = true;
                    }
                }
                if (!worked) std::this_thread::sleep_for(std::chrono::microseconds(200));
            }
        } catch (const std::exception& ex) {
            record_error(ex.what());
        }
    });

    std::thread policy_thread([&] {
        try {
            while (!actor_done && !failed) {
                if (auto batch = sample_policy_batch(policy_replay, cfg.learner.batch_size)) {
                    learner.update(*batch);
                    policy_updates = learner.steps();
                    mailbox.publish(learner.policy());
                } else {
                    std::this_thread::sleep_for(std::chrono::microseconds(200));
                }
            }
        } catch (const std::exception& ex) {
            record_error(ex.what());
        }
    });

    try {
        std::shared_ptr<const GaussianPolicy> actor_policy = mailbox.latest();
        for (int e = 1; e <= cfg.total_episodes && !failed; ++e) {
            detail::Episode ep = detail::collect_episode(*env, *actor_policy, env_seed(e), actor_rng, e, hooks);
            std::vector<Trajectory> chunks = chunk_episode(ep.transitions, cfg.trajectory_length, ids);
            {
                std::lock_guard lock(jobs_mutex);
                jobs.push_back({e, static_cast<int>(ep.transitions.size()), chunks});
            }
            for (auto& c : chunks) push_model(model_replay, std::move(c));
            actor_policy = mailbox.latest();
            if (e % cfg.snapshot_every == 0)
                result.snapshots.push_back(snapshot(*actor_policy, e, result.snapshot_dir, run_id));
            if (hooks.on_episode_end) hooks.on_episode_end(e, model_replay, policy_replay, published_version.load());
            result.episodes_completed = e;
        }
    } catch (const std::exception& ex) {
        record_error(ex.what());
    }
    actor_done = true;
    policy_thread.join();
    model_thread.join();
    result.model_version = model.version();
    result.policy_updates = learner.steps();
    return result;
}

}  // namespace selmo
