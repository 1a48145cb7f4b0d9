#pragma once

// Run configuration and its TOML form:
//
//   [section]
//   key = value    # integer, float, "string" or [1, 2, 3]
//
// Every field has exactly one address `section.key`; unknown sections or keys are errors.

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <toml.hpp>

#include "selmo/agent.hpp"
#include "selmo/error.hpp"
#include "selmo/replay.hpp"
#include "selmo/worldmodel.hpp"

namespace selmo {

enum class RunMode { deterministic, parallel };

inline std::string to_string(RunMode m) { return m == RunMode::parallel ? "parallel" : "deterministic"; }

inline RunMode run_mode_from_string(std::string_view s) {
    if (s == "deterministic") return RunMode::deterministic;
    if (s == "parallel") return RunMode::parallel;
    throw ConfigError("unknown mode '" + std::string(s) + "' (expected deterministic|parallel)");
}

/// Settings for reusing curiosity snapshots on a downstream task.
struct DownstreamConfig {
    std::string task = "carry_red_to_corner";
    int episodes = 300;
    int option_horizon = 10;
    int n_snapshots = 5;
    std::string snapshot_dir = "selmo_run/snapshots";
    int source_total_episodes = 0;  ///< length of the run that produced the snapshots; 0 means run.total_episodes
    double epsilon_start = 0.3;
    double epsilon_end = 0.05;
    int updates_per_episode = 4;
    ReplayConfig replay{50000, 32};
    std::string curve_path = "downstream_curve.csv";
};

struct RunConfig {
    std::string env = "pointmass";
    int total_episodes = 5000;
    int trajectory_length = 50;
    int batch_size = 64;
    ReplayConfig model_replay{50000, 32};
    ReplayConfig policy_replay{50000, 32};
    WorldModelConfig world_model;
    LearnerConfig learner;
    int snapshot_every = 100;
    int warmup = 64;
    int model_updates_per_episode = 4;
    int policy_updates_per_episode = 4;
    RunMode mode = RunMode::deterministic;
    std::uint64_t seed = 0;
    std::string output_dir = "selmo_run";
    std::string run_id;  ///< empty: derived from the seed
    DownstreamConfig downstream;

    std::string effective_run_id() const { return run_id.empty() ? "seed" + std::to_string(seed) : run_id; }

    void validate() const {
        if (total_episodes < 0) throw ConfigError("run.total_episodes must be >= 0");
        if (trajectory_length < 1) throw ConfigError("run.trajectory_length must be positive");
        if (batch_size < 1) throw ConfigError("run.batch_size must be positive");
        if (snapshot_every < 1) throw ConfigError("run.snapshot_every must be positive");
        if (warmup < 0) throw ConfigError("run.warmup must be >= 0");
        if (model_updates_per_episode < 0 || policy_updates_per_episode < 0)
            throw ConfigError("run.*_updates_per_episode must be >= 0");
        if (world_model.hidden.empty()) throw ConfigError("world_model.hidden must list at least one width");
        if (!(world_model.lr > 0.0) || !(world_model.reward_scale > 0.0))
            throw ConfigError("world_model.lr and world_model.reward_scale must be positive");
        if (downstream.option_horizon < 1) throw ConfigError("downstream.option_horizon must be positive");
        if (downstream.n_snapshots < 1) throw ConfigError("downstream.n_snapshots must be positive");
        if (downstream.episodes < 0) throw ConfigError("downstream.episodes must be >= 0");
        try {
            model_replay.validate();
            policy_replay.validate();
            downstream.replay.validate();
            learner.validate();
        } catch (const InvalidInput& e) {
            throw ConfigError(e.what());
        }
    }

    bool operator==(const RunConfig& o) const;
};

namespace config_detail {

using Value = std::variant<std::int64_t, double, std::string, std::vector<int>>;

inline std::string where(const toml::node& n) {
    return "line " + std::to_string(n.source().begin.line) + ": ";
}

inline std::int64_t to_int(const std::string& key, const toml::node& n) {
    if (auto v = n.value_exact<std::int64_t>()) return *v;
    throw ConfigError(where(n) + key + ": expected an integer");
}

inline double to_real(const std::string& key, const toml::node& n) {
    if (n.is_floating_point() || n.is_integer()) return *n.value<double>();
    throw ConfigError(where(n) + key + ": expected a number");
}

inline std::string to_str(const std::string& key, const toml::node& n) {
    if (auto v = n.value_exact<std::string>()) return *v;
    throw ConfigError(where(n) + key + ": expected a quoted string");
}

inline std::vector<int> to_int_list(const std::string& key, const toml::node& n) {
    const toml::array* arr = n.as_array();
    if (!arr) throw ConfigError(where(n) + key + ": expected a list like [64, 64]");
    std::vector<int> out;
    for (const auto& item : *arr) out.push_back(static_cast<int>(to_int(key, item)));
    return out;
}

struct Field {
    std::string key;  // "section.name"
    std::function<Value(const RunConfig&)> get;
    std::function<void(RunConfig&, const toml::node&)> set;
};

template <typename Member>
Field int_field(std::string key, Member member) {
    return {key, [member](const RunConfig& c) { return Value(static_cast<std::int64_t>(member(const_cast<RunConfig&>(c)))); },
            [member, key](RunConfig& c, const toml::node& n) {
                member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(to_int(key, n));
            }};
}

template <typename Member>
Field real_field(std::string key, Member member) {
    return {key, [member](const RunConfig& c) { return Value(member(const_cast<RunConfig&>(c))); },
            [member, key](RunConfig& c, const toml::node& n) { member(c) = to_real(key, n); }};
}

template <typename Member>
Field string_field(std::string key, Member member) {
    return {key, [member](const RunConfig& c) { return Value(member(const_cast<RunConfig&>(c))); },
            [member, key](RunConfig& c, const toml::node& n) { member(c) = to_str(key, n); }};
}

template <typename Member>
Field list_field(std::string key, Member member) {
    return {key, [member](const RunConfig& c) { return Value(member(const_cast<RunConfig&>(c))); },
            [member, key](RunConfig& c, const toml::node& n) { member(c) = to_int_list(key, n); }};
}

inline const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        // [run]
        f.push_back(string_field("run.env", [](RunConfig& c) -> auto& { return c.env; }));
        f.push_back(int_field("run.total_episodes", [](RunConfig& c) -> auto& { return c.total_episodes; }));
        f.push_back(int_field("run.trajectory_length", [](RunConfig& c) -> auto& { return c.trajectory_length; }));
        f.push_back(int_field("run.batch_size", [](RunConfig& c) -> auto& { return c.batch_size; }));
        f.push_back(int_field("run.snapshot_every", [](RunConfig& c) -> auto& { return c.snapshot_every; }));
        f.push_back(int_field("run.warmup", [](RunConfig& c) -> auto& { return c.warmup; }));
        f.push_back(int_field("run.model_updates_per_episode",
                              [](RunConfig& c) -> auto& { return c.model_updates_per_episode; }));
        f.push_back(int_field("run.policy_updates_per_episode",
                              [](RunConfig& c) -> auto& { return c.policy_updates_per_episode; }));
        f.push_back({"run.mode", [](const RunConfig& c) { return Value(to_string(c.mode)); },
                     [](RunConfig& c, const toml::node& n) {
                         try {
                             c.mode = run_mode_from_string(to_str("run.mode", n));
                         } catch (const ConfigError& e) {
                             throw ConfigError(where(n) + e.what());
                         }
                     }});
        f.push_back({"run.seed", [](const RunConfig& c) { return Value(static_cast<std::int64_t>(c.seed)); },
                     [](RunConfig& c, const toml::node& n) {
                         const auto s = to_int("run.seed", n);
                         if (s < 0) throw ConfigError(where(n) + "run.seed must be >= 0");
                         c.seed = static_cast<std::uint64_t>(s);
                     }});
        f.push_back(string_field("run.output_dir", [](RunConfig& c) -> auto& { return c.output_dir; }));
        f.push_back(string_field("run.run_id", [](RunConfig& c) -> auto& { return c.run_id; }));
        // replays
        f.push_back(int_field("model_replay.capacity", [](RunConfig& c) -> auto& { return c.model_replay.capacity; }));
        f.push_back(int_field("model_replay.max_samples", [](RunConfig& c) -> auto& { return c.model_replay.max_samples; }));
        f.push_back(int_field("policy_replay.capacity", [](RunConfig& c) -> auto& { return c.policy_replay.capacity; }));
        f.push_back(int_field("policy_replay.max_samples", [](RunConfig& c) -> auto& { return c.policy_replay.max_samples; }));
        // [world_model]
        f.push_back(list_field("world_model.hidden", [](RunConfig& c) -> auto& { return c.world_model.hidden; }));
        f.push_back(real_field("world_model.lr", [](RunConfig& c) -> auto& { return c.world_model.lr; }));
        f.push_back(real_field("world_model.reward_scale", [](RunConfig& c) -> auto& { return c.world_model.reward_scale; }));
        // [learner]
        f.push_back(real_field("learner.lr", [](RunConfig& c) -> auto& { return c.learner.lr; }));
        f.push_back(real_field("learner.discount", [](RunConfig& c) -> auto& { return c.learner.discount; }));
        f.push_back(int_field("learner.target_update_period",
                              [](RunConfig& c) -> auto& { return c.learner.target_update_period; }));
        f.push_back(int_field("learner.action_samples", [](RunConfig& c) -> auto& { return c.learner.action_samples; }));
        f.push_back(real_field("learner.e_step_temperature",
                               [](RunConfig& c) -> auto& { return c.learner.e_step_temperature; }));
        f.push_back(real_field("learner.kl_penalty", [](RunConfig& c) -> auto& { return c.learner.kl_penalty; }));
        f.push_back(int_field("learner.batch_size", [](RunConfig& c) -> auto& { return c.learner.batch_size; }));
        f.push_back(int_field("learner.transitions_per_trajectory",
                              [](RunConfig& c) -> auto& { return c.learner.transitions_per_trajectory; }));
        f.push_back(real_field("learner.init_log_std", [](RunConfig& c) -> auto& { return c.learner.init_log_std; }));
        f.push_back(list_field("learner.policy_hidden", [](RunConfig& c) -> auto& { return c.learner.policy_hidden; }));
        f.push_back(list_field("learner.critic_hidden", [](RunConfig& c) -> auto& { return c.learner.critic_hidden; }));
        // [downstream]
        f.push_back(string_field("downstream.task", [](RunConfig& c) -> auto& { return c.downstream.task; }));
        f.push_back(int_field("downstream.episodes", [](RunConfig& c) -> auto& { return c.downstream.episodes; }));
        f.push_back(int_field("downstream.option_horizon", [](RunConfig& c) -> auto& { return c.downstream.option_horizon; }));
        f.push_back(int_field("downstream.n_snapshots", [](RunConfig& c) -> auto& { return c.downstream.n_snapshots; }));
        f.push_back(string_field("downstream.snapshot_dir", [](RunConfig& c) -> auto& { return c.downstream.snapshot_dir; }));
        f.push_back(int_field("downstream.source_total_episodes",
                              [](RunConfig& c) -> auto& { return c.downstream.source_total_episodes; }));
        f.push_back(real_field("downstream.epsilon_start", [](RunConfig& c) -> auto& { return c.downstream.epsilon_start; }));
        f.push_back(real_field("downstream.epsilon_end", [](RunConfig& c) -> auto& { return c.downstream.epsilon_end; }));
        f.push_back(int_field("downstream.updates_per_episode",
                              [](RunConfig& c) -> auto& { return c.downstream.updates_per_episode; }));
        f.push_back(int_field("downstream.replay_capacity", [](RunConfig& c) -> auto& { return c.downstream.replay.capacity; }));
        f.push_back(int_field("downstream.replay_max_samples",
                              [](RunConfig& c) -> auto& { return c.downstream.replay.max_samples; }));
        f.push_back(string_field("downstream.curve_path", [](RunConfig& c) -> auto& { return c.downstream.curve_path; }));
        return f;
    }();
    return table;
}

}  // namespace config_detail

/// Applies the assignments of a TOML document on top of `base`. Tables name sections, every key
/// must be a known `section.key`, and the result is validated.
inline RunConfig parse_config(std::string_view text, RunConfig base = {}) {
    std::map<std::string, const config_detail::Field*> by_key;
    for (const auto& f : config_detail::fields()) by_key[f.key] = &f;

    toml::table doc;
    try {
        doc = toml::parse(text);
    } catch (const toml::parse_error& e) {
        throw ConfigError("line " + std::to_string(e.source().begin.line) + ": " + std::string(e.description()));
    }
    for (const auto& [section_key, section_node] : doc) {
        const std::string section(section_key.str());
        const toml::table* table = section_node.as_table();
        if (!table) throw ConfigError(config_detail::where(section_node) + "key '" + section + "' outside of a [section]");
        for (const auto& [leaf, node] : *table) {
            const std::string key = section + "." + std::string(leaf.str());
            const auto it = by_key.find(key);
            if (it == by_key.end()) throw ConfigError(config_detail::where(node) + "unknown key '" + key + "'");
            it->second->set(base, node);
        }
    }
    base.validate();
    return base;
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), std::move(base));
}

/// Emits every field as TOML; parse_config(emit_config(c)) == c.
inline std::string emit_config(const RunConfig& cfg) {
    toml::table doc;
    for (const auto& f : config_detail::fields()) {
        const auto dot = f.key.find('.');
        const std::string section = f.key.substr(0, dot);
        const std::string leaf = f.key.substr(dot + 1);
        if (!doc.contains(section)) doc.insert(section, toml::table{});
        toml::table& t = *doc[section].as_table();
        std::visit(
            [&](const auto& v) {
                using T = std::decay_t<decltype(v)>;
                if constexpr (std::is_same_v<T, std::vector<int>>) {
                    toml::array arr;
                    for (int x : v) arr.push_back(static_cast<std::int64_t>(x));
                    t.insert(leaf, std::move(arr));
                } else {
                    t.insert(leaf, v);
                }
            },
            f.get(cfg));
    }
    std::ostringstream out;
    out << doc << '\n';
    return out.str();
}

inline std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& f : config_detail::fields()) keys.push_back(f.key);
    return keys;
}

inline bool RunConfig::operator==(const RunConfig& o) const {
    for (const auto& f : config_detail::fields())
        if (f.get(*this) != f.get(o)) return false;
    return true;
}

}  // namespace selmo
