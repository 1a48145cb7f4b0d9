#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "selmo/core.hpp"
#include "selmo/error.hpp"
#include "selmo/rng.hpp"

namespace selmo::envs {

using Vec2 = Eigen::Vector2d;

struct StepResult {
    Vec observation;         ///< raw (unnormalized) observation
    bool terminal = false;   ///< early termination (constraint violation)
    bool truncated = false;  ///< time limit reached
};

/// Common episode bookkeeping: rejects steps after the episode ended and truncates at episode_length.
class Environment {
public:
    virtual ~Environment() = default;

    virtual const EnvSpec& spec() const = 0;
    virtual std::string name() const = 0;
    virtual std::vector<std::string> task_names() const = 0;
    /// Task rewards of the current state, keyed by task name.
    virtual std::map<std::string, double> eval_rewards() const = 0;
    virtual Vec observation() const = 0;

    Vec reset(std::uint64_t seed) {
        steps_ = 0;
        done_ = false;
        reset_state(seed);
        return observation();
    }

    StepResult step(const Vec& action) {
        if (done_) throw InvalidInput(name() + ": step called after the episode ended");
        if (action.size() != spec().action_dim) throw InvalidInput(name() + ": action dimension mismatch");
        const Vec a = action.cwiseMax(-1.0).cwiseMin(1.0);
        StepResult r;
        r.terminal = advance(a);
        ++steps_;
        r.truncated = !r.terminal && steps_ >= spec().episode_length;
        done_ = r.terminal || r.truncated;
        r.observation = observation();
        return r;
    }

    bool done() const noexcept { return done_; }
    int steps() const noexcept { return steps_; }

    bool has_task(const std::string& task) const {
        const auto names = task_names();
        return std::find(names.begin(), names.end(), task) != names.end();
    }

protected:
    virtual void reset_state(std::uint64_t seed) = 0;
    /// Advances one control step; returns true on early termination.
    virtual bool advance(const Vec& action) = 0;

private:
    int steps_ = 0;
    bool done_ = true;
};

// ---------------------------------------------------------------------------------------------
// PointMassFetch: a disk agent pushing two disk objects inside the box [-1, 1]^2.

struct PointMassParams {
    double max_accel = 1.0;
    double agent_friction = 2.0;   ///< velocity scaled by (1 - friction * dt) every step
    double object_friction = 3.0;
    double agent_radius = 0.05;
    double object_radius = 0.1;
    double agent_mass = 1.0;
    double object_mass = 1.0;
    double max_speed = 1.0;  ///< observation bound for velocities
};

struct PointMassState {
    Vec2 agent_pos = Vec2::Zero();
    Vec2 agent_vel = Vec2::Zero();
    std::array<Vec2, 2> obj_pos{Vec2::Zero(), Vec2::Zero()};  ///< red, blue
    std::array<Vec2, 2> obj_vel{Vec2::Zero(), Vec2::Zero()};

    bool operator==(const PointMassState&) const = default;
};

namespace detail {

// Clips a body into the box; the velocity component driving into a wall is zeroed.
inline void apply_walls(Vec2& pos, Vec2& vel, double radius) {
    const double lim = 1.0 - radius;
    for (int i = 0; i < 2; ++i) {
        if (pos[i] > lim) {
            pos[i] = lim;
            vel[i] = std::min(vel[i], 0.0);
        } else if (pos[i] < -lim) {
            pos[i] = -lim;
            vel[i] = std::max(vel[i], 0.0);
        }
    }
}

// Perfectly inelastic exchange along the contact normal, then separation of the overlap.
// Momentum along the normal is conserved; the tangential components are untouched.
inline void resolve_contact(Vec2& pa, Vec2& va, double ma, double ra, Vec2& pb, Vec2& vb, double mb, double rb,
                            bool move_a) {
    Vec2 delta = pb - pa;
    double dist = delta.norm();
    const double min_dist = ra + rb;
    if (dist >= min_dist) return;
    Vec2 n = dist > 1e-12 ? Vec2(delta / dist) : (va - vb).norm() > 1e-12 ? Vec2((va - vb).normalized()) : Vec2(1.0, 0.0);
    const double ua = va.dot(n);
    const double ub = vb.dot(n);
    if (ua > ub) {
        const double common = (ma * ua + mb * ub) / (ma + mb);
        va += (common - ua) * n;
        vb += (common - ub) * n;
    }
    const double overlap = min_dist - dist;
    if (move_a) {
        const double share = mb / (ma + mb);
        pa -= share * overlap * n;
        pb += (1.0 - share) * overlap * n;
    } else {
        pb += overlap * n;
    }
}

}  // namespace detail

/// Semi-implicit Euler: accelerate, damp, move, collide, clip to walls.
inline PointMassState step_pointmass(const PointMassState& state, const Vec2& action, double dt,
                                     const PointMassParams& p = {}) {
    PointMassState next = state;
    const Vec2 a = action.cwiseMax(-1.0).cwiseMin(1.0);
    next.agent_vel += p.max_accel * dt * a;
    next.agent_vel *= 1.0 - p.agent_friction * dt;
    next.agent_pos += dt * next.agent_vel;
    for (int k = 0; k < 2; ++k) {
        next.obj_vel[k] *= 1.0 - p.object_friction * dt;
        next.obj_pos[k] += dt * next.obj_vel[k];
    }
    detail::apply_walls(next.agent_pos, next.agent_vel, p.agent_radius);
    for (int k = 0; k < 2; ++k) {
        // The agent is actuated; objects yield to it.
        detail::resolve_contact(next.agent_pos, next.agent_vel, p.agent_mass, p.agent_radius, next.obj_pos[k],
                                next.obj_vel[k], p.object_mass, p.object_radius, false);
    }
    detail::resolve_contact(next.obj_pos[0], next.obj_vel[0], p.object_mass, p.object_radius, next.obj_pos[1],
                            next.obj_vel[1], p.object_mass, p.object_radius, true);
    for (int k = 0; k < 2; ++k) detail::apply_walls(next.obj_pos[k], next.obj_vel[k], p.object_radius);
    return next;
}

class PointMassFetch final : public Environment {
public:
    static constexpr double kReachRadius = 0.15;
    static constexpr double kMoveSpeed = 0.05;
    static constexpr double kCornerSize = 0.3;

    explicit PointMassFetch(PointMassParams params = {}) : params_(params) {
        spec_.state_dim = 12;
        spec_.action_dim = 2;
        spec_.episode_length = 200;
        spec_.control_dt = 0.05;
        spec_.obs_low = Vec(12);
        spec_.obs_high = Vec(12);
        for (int body = 0; body < 3; ++body) {
            const int o = 4 * body;
            spec_.obs_low.segment(o, 2).setConstant(-1.0);
            spec_.obs_high.segment(o, 2).setConstant(1.0);
            spec_.obs_low.segment(o + 2, 2).setConstant(-params_.max_speed);
            spec_.obs_high.segment(o + 2, 2).setConstant(params_.max_speed);
        }
    }

    const EnvSpec& spec() const override { return spec_; }
    std::string name() const override { return "pointmass"; }

    std::vector<std::string> task_names() const override {
        return {"carry_red_to_corner", "move_blue", "move_red", "reach_blue", "reach_red"};
    }

    /// Layout: agent pos, agent vel, red pos, red vel, blue pos, blue vel.
    Vec observation() const override {
        Vec o(12);
        o << state_.agent_pos, state_.agent_vel, state_.obj_pos[0], state_.obj_vel[0], state_.obj_pos[1],
            state_.obj_vel[1];
        return o;
    }

    std::map<std::string, double> eval_rewards() const override { return rewards_for(state_); }

    static std::map<std::string, double> rewards_for(const PointMassState& s) {
        auto reach = [&](int k) { return (s.agent_pos - s.obj_pos[k]).norm() < kReachRadius ? 1.0 : 0.0; };
        auto moving = [&](int k) { return s.obj_vel[k].norm() > kMoveSpeed ? 1.0 : 0.0; };
        const double lim = 1.0 - kCornerSize;
        const bool in_corner = s.obj_pos[0].x() > lim && s.obj_pos[0].y() > lim;
        return {{"reach_red", reach(0)},  {"reach_blue", reach(1)}, {"move_red", moving(0)},
                {"move_blue", moving(1)}, {"carry_red_to_corner", in_corner ? 1.0 : 0.0}};
    }

    const PointMassState& state() const noexcept { return state_; }
    void set_state(const PointMassState& s) { state_ = s; }
    const PointMassParams& params() const noexcept { return params_; }

protected:
    void reset_state(std::uint64_t seed) override {
        Rng rng(seed);
        std::uniform_real_distribution<double> jitter(-1.0, 1.0);
        state_ = PointMassState{};
        state_.agent_pos = Vec2(0.1 * jitter(rng), 0.1 * jitter(rng));
        state_.obj_pos[0] = Vec2(0.45 + 0.05 * jitter(rng), 0.45 + 0.05 * jitter(rng));
        state_.obj_pos[1] = Vec2(-0.45 + 0.05 * jitter(rng), 0.45 + 0.05 * jitter(rng));
    }

    bool advance(const Vec& action) override {
        state_ = step_pointmass(state_, Vec2(action[0], action[1]), spec_.control_dt, params_);
        return false;
    }

private:
    PointMassParams params_;
    EnvSpec spec_;
    PointMassState state_;
};

// ---------------------------------------------------------------------------------------------
// BalanceBot: cart-pole; the episode ends early once the pole leaves the upright cone.

struct BalanceBotParams {
    double cart_mass = 1.0;
    double pole_mass = 0.1;
    double pole_half_length = 0.5;  ///< pole of length 1
    double gravity = 9.81;
    double max_force = 10.0;
    double track_limit = 2.4;
    double max_speed = 3.0;         ///< observation bound for cart speed
    double max_angular_speed = 3.0;
    double termination_angle = 15.0 * std::numbers::pi / 180.0;
};

struct BalanceBotState {
    double x = 0.0;
    double x_dot = 0.0;
    double theta = 0.0;  ///< radians from vertical
    double theta_dot = 0.0;

    bool operator==(const BalanceBotState&) const = default;
};

/// Explicit Euler step of the classic cart-pole equations. terminal iff |theta| > termination angle.
inline std::pair<BalanceBotState, bool> step_balancebot(const BalanceBotState& s, double action, double dt,
                                                        const BalanceBotParams& p = {}) {
    const double force = p.max_force * std::clamp(action, -1.0, 1.0);
    const double total_mass = p.cart_mass + p.pole_mass;
    const double pml = p.pole_mass * p.pole_half_length;
    const double sin_t = std::sin(s.theta);
    const double cos_t = std::cos(s.theta);
    const double temp = (force + pml * s.theta_dot * s.theta_dot * sin_t) / total_mass;
    const double theta_acc = (p.gravity * sin_t - cos_t * temp) /
                             (p.pole_half_length * (4.0 / 3.0 - p.pole_mass * cos_t * cos_t / total_mass));
    const double x_acc = temp - pml * theta_acc * cos_t / total_mass;

    BalanceBotState n;
    n.x = s.x + dt * s.x_dot;
    n.x_dot = s.x_dot + dt * x_acc;
    n.theta = s.theta + dt * s.theta_dot;
    n.theta_dot = s.theta_dot + dt * theta_acc;
    if (n.x > p.track_limit) {
        n.x = p.track_limit;
        n.x_dot = std::min(n.x_dot, 0.0);
    } else if (n.x < -p.track_limit) {
        n.x = -p.track_limit;
        n.x_dot = std::max(n.x_dot, 0.0);
    }
    return {n, std::abs(n.theta) > p.termination_angle};
}

class BalanceBot final : public Environment {
public:
    explicit BalanceBot(BalanceBotParams params = {}) : params_(params) {
        spec_.state_dim = 4;
        spec_.action_dim = 1;
        spec_.episode_length = 200;
        spec_.control_dt = 0.05;
        spec_.obs_low = Vec(4);
        spec_.obs_high = Vec(4);
        spec_.obs_low << -params_.track_limit, -params_.max_speed, -params_.termination_angle, -params_.max_angular_speed;
        spec_.obs_high = -spec_.obs_low;
    }

    const EnvSpec& spec() const override { return spec_; }
    std::string name() const override { return "balancebot"; }
    std::vector<std::string> task_names() const override { return {"walk_backward", "walk_forward"}; }

    Vec observation() const override {
        Vec o(4);
        o << state_.x, state_.x_dot, state_.theta, state_.theta_dot;
        return o;
    }

    std::map<std::string, double> eval_rewards() const override { return rewards_for(state_); }

    static std::map<std::string, double> rewards_for(const BalanceBotState& s) {
        return {{"walk_forward", std::clamp(s.x_dot, 0.0, 1.0)}, {"walk_backward", std::clamp(-s.x_dot, 0.0, 1.0)}};
    }

    const BalanceBotState& state() const noexcept { return state_; }
    void set_state(const BalanceBotState& s) { state_ = s; }
    const BalanceBotParams& params() const noexcept { return params_; }

protected:
    void reset_state(std::uint64_t seed) override {
        Rng rng(seed);
        std::uniform_real_distribution<double> u(-0.05, 0.05);
        state_.x = u(rng);
        state_.x_dot = u(rng);
        state_.theta = u(rng);
        state_.theta_dot = u(rng);
    }

    bool advance(const Vec& action) override {
        auto [next, terminal] = step_balancebot(state_, action[0], spec_.control_dt, params_);
        state_ = next;
        return terminal;
    }

private:
    BalanceBotParams params_;
    EnvSpec spec_;
    BalanceBotState state_;
};

inline std::vector<std::string> env_names() { return {"balancebot", "pointmass"}; }

inline std::unique_ptr<Environment> make_env(const std::string& name) {
    if (name == "pointmass" || name == "PointMassFetch") return std::make_unique<PointMassFetch>();
    if (name == "balancebot" || name == "BalanceBot") return std::make_unique<BalanceBot>();
    throw InvalidInput("unknown environment '" + name + "'");
}

}  // namespace selmo::envs
