#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "selmo/envs.hpp"

namespace selmo::envs {
namespace {

constexpr double kDt = 0.05;
constexpr double kDeg = std::numbers::pi / 180.0;

TEST(PointMassTest, RestIsEquilibrium) {
    PointMassState s;
    s.agent_pos = {0.1, -0.2};
    s.obj_pos = {Vec2(0.5, 0.5), Vec2(-0.5, 0.5)};
    EXPECT_EQ(step_pointmass(s, Vec2::Zero(), kDt), s);
}

TEST(PointMassTest, ConstantPushMovesMonotonicallyUntilWall) {
    PointMassState s;
    s.obj_pos = {Vec2(0.0, 0.8), Vec2(0.0, -0.8)};
    double prev = s.agent_pos.x();
    bool reached_wall = false;
    for (int k = 0; k < 2000 && !reached_wall; ++k) {
        s = step_pointmass(s, Vec2(1.0, 0.0), kDt);
        if (s.agent_pos.x() >= 1.0 - 0.05) {
            reached_wall = true;
        } else {
            EXPECT_GT(s.agent_pos.x(), prev);
        }
        prev = s.agent_pos.x();
    }
    EXPECT_TRUE(reached_wall);
    EXPECT_LE(s.agent_pos.x(), 1.0 - 0.05);
}

TEST(PointMassTest, HeadOnContactTransfersMomentumAlongNormal) {
    // Agent moving +x straight at the red object, touching after the move.
    PointMassParams p;
    p.agent_friction = 0.0;
    p.object_friction = 0.0;
    PointMassState s;
    s.agent_pos = {0.0, 0.0};
    s.agent_vel = {0.8, 0.0};
    s.obj_pos = {Vec2(0.16, 0.0), Vec2(-0.7, -0.7)};
    const double momentum_before = p.agent_mass * s.agent_vel.x() + p.object_mass * s.obj_vel[0].x();
    const PointMassState n = step_pointmass(s, Vec2::Zero(), kDt, p);
    const double momentum_after = p.agent_mass * n.agent_vel.x() + p.object_mass * n.obj_vel[0].x();
    EXPECT_NEAR(momentum_after, momentum_before, 1e-12);
    // Inelastic with equal masses: both share the mean velocity along the normal.
    EXPECT_NEAR(n.obj_vel[0].x(), 0.4, 1e-12);
    EXPECT_NEAR(n.agent_vel.x(), 0.4, 1e-12);
    EXPECT_NEAR(n.obj_vel[0].y(), 0.0, 1e-15);
    EXPECT_GT(n.obj_pos[0].x(), s.obj_pos[0].x());
    EXPECT_GE((n.obj_pos[0] - n.agent_pos).norm(), 0.15 - 1e-12);
}

TEST(PointMassTest, FrictionOnlyRemovesMomentum) {
    PointMassState s;
    s.agent_vel = {0.8, 0.0};
    s.obj_pos = {Vec2(0.16, 0.0), Vec2(-0.7, -0.7)};
    const double before = s.agent_vel.x();
    const PointMassState n = step_pointmass(s, Vec2::Zero(), kDt);
    const double after = n.agent_vel.x() + n.obj_vel[0].x();
    EXPECT_LE(after, before);
    EXPECT_GT(n.obj_vel[0].x(), 0.0);
}

TEST(PointMassTest, BodiesStayInsideBox) {
    PointMassFetch env;
    Rng rng(3);
    for (int ep = 0; ep < 20; ++ep) {
        env.reset(static_cast<std::uint64_t>(ep));
        while (!env.done()) {
            Vec a(2);
            a << 2.0 * uniform01(rng) - 1.0, 2.0 * uniform01(rng) - 1.0;
            env.step(a);
            const auto& st = env.state();
            EXPECT_LE(st.agent_pos.cwiseAbs().maxCoeff(), 1.0 - 0.05 + 1e-12);
            for (int k = 0; k < 2; ++k) EXPECT_LE(st.obj_pos[k].cwiseAbs().maxCoeff(), 1.0 - 0.1 + 1e-12);
        }
    }
}

TEST(PointMassTest, RewardsDefinitions) {
    PointMassState s;
    s.obj_pos = {Vec2(0.3, 0.3), Vec2(-0.5, 0.5)};
    s.agent_pos = s.obj_pos[0];
    auto r = PointMassFetch::rewards_for(s);
    EXPECT_EQ(r.at("reach_red"), 1.0);
    EXPECT_EQ(r.at("reach_blue"), 0.0);
    EXPECT_EQ(r.at("move_red"), 0.0);
    EXPECT_EQ(r.at("move_blue"), 0.0);
    EXPECT_EQ(r.at("carry_red_to_corner"), 0.0);
    s.obj_vel[1] = {0.06, 0.0};
    s.obj_pos[0] = {0.8, 0.85};
    r = PointMassFetch::rewards_for(s);
    EXPECT_EQ(r.at("move_blue"), 1.0);
    EXPECT_EQ(r.at("carry_red_to_corner"), 1.0);
}

TEST(PointMassTest, RandomPolicyRarelyReachesCornerTask) {
    PointMassFetch env;
    Rng rng(1);
    double carry = 0.0;
    for (int ep = 0; ep < 50; ++ep) {
        env.reset(static_cast<std::uint64_t>(ep));
        while (!env.done()) {
            Vec a(2);
            a << 2.0 * uniform01(rng) - 1.0, 2.0 * uniform01(rng) - 1.0;
            env.step(a);
            carry += env.eval_rewards().at("carry_red_to_corner");
        }
    }
    EXPECT_EQ(carry, 0.0);
}

TEST(BalanceBotTest, VerticalRestStaysVertical) {
    BalanceBotState s;
    for (int k = 0; k < 100; ++k) {
        auto [n, terminal] = step_balancebot(s, 0.0, kDt);
        EXPECT_FALSE(terminal);
        s = n;
    }
    EXPECT_EQ(s.theta, 0.0);
    EXPECT_EQ(s.x, 0.0);
}

TEST(BalanceBotTest, BeyondThresholdIsTerminal) {
    BalanceBotState s;
    s.theta = 16.0 * kDeg;
    EXPECT_TRUE(step_balancebot(s, 0.0, kDt).second);
}

TEST(BalanceBotTest, SmallTiltGrowsUntilTermination) {
    BalanceBotState s;
    s.theta = 1.0 * kDeg;
    double prev = std::abs(s.theta);
    int steps = 0;
    for (; steps < 1000; ++steps) {
        auto [n, terminal] = step_balancebot(s, 0.0, kDt);
        // First step keeps theta (theta_dot starts at zero under explicit Euler).
        if (steps > 0) {
            EXPECT_GT(std::abs(n.theta), prev);
        }
        prev = std::abs(n.theta);
        s = n;
        if (terminal) break;
    }
    EXPECT_LT(steps, 1000);
    EXPECT_GT(std::abs(s.theta), 15.0 * kDeg);
}

TEST(BalanceBotTest, HandIntegratedFirstSteps) {
    // theta_acc = g sin / (l (4/3 - m cos^2 / M)) at rest with zero force.
    BalanceBotState s;
    s.theta = 0.1;
    const double M = 1.1, m = 0.1, l = 0.5, g = 9.81;
    const double acc = g * std::sin(0.1) / (l * (4.0 / 3.0 - m * std::cos(0.1) * std::cos(0.1) / M));
    auto [n, terminal] = step_balancebot(s, 0.0, kDt);
    EXPECT_FALSE(terminal);
    EXPECT_DOUBLE_EQ(n.theta, 0.1);
    EXPECT_NEAR(n.theta_dot, kDt * acc, 1e-14);
    EXPECT_NEAR(n.x_dot, kDt * (-m * l * acc * std::cos(0.1) / M), 1e-14);
}

TEST(BalanceBotTest, TerminalFlagMatchesPredicate) {
    BalanceBot env;
    Rng rng(9);
    int episodes = 0, steps = 0;
    while (steps < 10000) {
        env.reset(static_cast<std::uint64_t>(episodes++));
        while (!env.done()) {
            const auto r = env.step(Vec::Constant(1, 2.0 * uniform01(rng) - 1.0));
            ++steps;
            EXPECT_EQ(r.terminal, std::abs(env.state().theta) > 15.0 * kDeg);
            if (r.terminal) {
                EXPECT_FALSE(r.truncated);
            }
        }
    }
}

TEST(BalanceBotTest, WalkRewards) {
    BalanceBotState s;
    s.x_dot = 0.5;
    auto r = BalanceBot::rewards_for(s);
    EXPECT_EQ(r.at("walk_forward"), 0.5);
    EXPECT_EQ(r.at("walk_backward"), 0.0);
    s.x_dot = -2.0;
    r = BalanceBot::rewards_for(s);
    EXPECT_EQ(r.at("walk_forward"), 0.0);
    EXPECT_EQ(r.at("walk_backward"), 1.0);
}

TEST(EnvironmentTest, StepAfterEndRejectedAndTruncationAtLength) {
    PointMassFetch env;
    EXPECT_THROW(env.step(Vec::Zero(2)), InvalidInput);
    env.reset(0);
    StepResult last;
    int n = 0;
    while (!env.done()) {
        last = env.step(Vec::Zero(2));
        ++n;
    }
    EXPECT_EQ(n, env.spec().episode_length);
    EXPECT_TRUE(last.truncated);
    EXPECT_FALSE(last.terminal);
    EXPECT_THROW(env.step(Vec::Zero(2)), InvalidInput);
}

TEST(EnvironmentTest, DeterministicGivenSeedAndActions) {
    for (const auto& name : env_names()) {
        auto a = make_env(name);
        auto b = make_env(name);
        Rng ra(4), rb(4);
        std::vector<Vec> oa{a->reset(11)}, ob{b->reset(11)};
        while (!a->done()) {
            Vec act(a->spec().action_dim), act_b(b->spec().action_dim);
            for (Eigen::Index i = 0; i < act.size(); ++i) {
                act[i] = 2.0 * uniform01(ra) - 1.0;
                act_b[i] = 2.0 * uniform01(rb) - 1.0;
            }
            oa.push_back(a->step(act).observation);
            ob.push_back(b->step(act_b).observation);
        }
        ASSERT_EQ(oa.size(), ob.size());
        for (std::size_t k = 0; k < oa.size(); ++k) EXPECT_EQ(oa[k], ob[k]);
    }
}

TEST(EnvironmentTest, NormalizedObservationsInUnitBox) {
    for (const auto& name : env_names()) {
        auto env = make_env(name);
        Rng rng(5);
        for (int ep = 0; ep < 20; ++ep) {
            Vec o = normalize(env->reset(static_cast<std::uint64_t>(ep)), env->spec());
            EXPECT_LE(o.cwiseAbs().maxCoeff(), 1.0);
            while (!env->done()) {
                Vec act(env->spec().action_dim);
                for (Eigen::Index i = 0; i < act.size(); ++i) act[i] = 2.0 * uniform01(rng) - 1.0;
                o = normalize(env->step(act).observation, env->spec());
                EXPECT_LE(o.cwiseAbs().maxCoeff(), 1.0);
            }
        }
    }
}

TEST(EnvironmentTest, UnknownNameRejected) {
    EXPECT_THROW(make_env("humanoid"), InvalidInput);
}

}  // namespace
}  // namespace selmo::envs
