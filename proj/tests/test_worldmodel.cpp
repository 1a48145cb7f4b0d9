#include <gtest/gtest.h>

#include <cmath>

#include "selmo/worldmodel.hpp"

namespace selmo {
namespace {

Vec random_vec(int n, Rng& rng, double scale = 1.0) {
    Vec v(n);
    for (int i = 0; i < n; ++i) v[i] = scale * (2.0 * uniform01(rng) - 1.0);
    return v;
}

std::vector<Trajectory> random_batch(int n_traj, int len, int sd, int ad, Rng& rng) {
    std::vector<Trajectory> batch;
    for (int t = 0; t < n_traj; ++t) {
        Trajectory traj{static_cast<std::uint64_t>(t + 1), {}};
        Vec s = random_vec(sd, rng);
        for (int k = 0; k < len; ++k) {
            Vec next = random_vec(sd, rng);
            traj.transitions.push_back({s, random_vec(ad, rng), next, false});
            s = next;
        }
        batch.push_back(std::move(traj));
    }
    return batch;
}

WorldModelConfig small_config(double lr = 3e-4) {
    WorldModelConfig cfg;
    cfg.hidden = {16, 16};
    cfg.lr = lr;
    return cfg;
}

TEST(WorldModelTest, ZeroParamsPredictZero) {
    WorldModel wm(3, 2, small_config());
    wm.set_params(nn::zero_params(wm.spec()));
    EXPECT_EQ(wm.predict(Vec::Ones(3), Vec::Ones(2)), Vec::Zero(3));
}

TEST(WorldModelTest, PredictDeterministicAndDimChecked) {
    WorldModel wm(3, 2, small_config(), 4);
    EXPECT_EQ(wm.predict(Vec::Ones(3), Vec::Zero(2)), wm.predict(Vec::Ones(3), Vec::Zero(2)));
    EXPECT_THROW(wm.predict(Vec::Ones(2), Vec::Zero(2)), InvalidInput);
}

TEST(WorldModelTest, LearnsIdentityDynamics) {
    Rng rng(1);
    WorldModel wm(3, 1, small_config(3e-3), 2);
    // 10^4 samples of s' = s, as 200 trajectories of 50 steps.
    std::vector<Trajectory> data;
    for (int t = 0; t < 200; ++t) {
        Trajectory traj{static_cast<std::uint64_t>(t), {}};
        for (int k = 0; k < 50; ++k) {
            const Vec s = random_vec(3, rng);
            traj.transitions.push_back({s, random_vec(1, rng), s, false});
        }
        data.push_back(std::move(traj));
    }
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    auto train = [&](WorldModel& m, int steps) {
        for (int step = 0; step < steps; ++step) {
            std::vector<Trajectory> batch;
            for (int b = 0; b < 8; ++b) batch.push_back(data[pick(rng)]);
            m.label_and_update(batch);
        }
    };
    train(wm, 3000);
    // Anneal: continue from the same weights at a tenth of the step size.
    WorldModel fine(3, 1, small_config(3e-4), 2);
    fine.set_params(wm.params());
    train(fine, 3000);
    for (int trial = 0; trial < 100; ++trial) {
        const Vec s = random_vec(3, rng);
        const Vec err = fine.predict(s, random_vec(1, rng)) - s;
        EXPECT_LT(err.cwiseAbs().maxCoeff(), 1e-2);
    }
}

TEST(CuriosityRewardTest, PerfectPredictionIsZero) {
    WorldModel wm(4, 2, small_config(), 3);
    const Vec s = Vec::Constant(4, 0.2), a = Vec::Constant(2, -0.3);
    EXPECT_EQ(wm.curiosity_reward({s, a, wm.predict(s, a), false}), 0.0);
}

TEST(CuriosityRewardTest, MeanSquaredErrorPointOne) {
    WorldModel wm(4, 1, small_config());
    wm.set_params(nn::zero_params(wm.spec()));
    // Prediction is zero; s_next components of magnitude sqrt(0.1) give a mean squared error of 0.1.
    const Vec s_next = Vec::Constant(4, std::sqrt(0.1));
    const double r = wm.curiosity_reward({Vec::Zero(4), Vec::Zero(1), s_next, false});
    EXPECT_NEAR(r, std::tanh(1.0), 1e-12);
    EXPECT_NEAR(r, 0.76159, 1e-5);
}

TEST(CuriosityRewardTest, HugeErrorStaysBelowOne) {
    WorldModel wm(2, 1, small_config());
    wm.set_params(nn::zero_params(wm.spec()));
    for (double mag : {std::sqrt(2.0), 10.0, 1e6}) {
        const double r = wm.curiosity_reward({Vec::Zero(2), Vec::Zero(1), Vec::Constant(2, mag), false});
        EXPECT_GE(r, std::tanh(20.0) - 1e-16);
        EXPECT_GT(r, 0.9999);
        EXPECT_LT(r, 1.0);
    }
}

TEST(CuriosityRewardTest, RangeOverRandomModels) {
    Rng rng(5);
    for (int m = 0; m < 20; ++m) {
        WorldModel wm(5, 2, small_config(), static_cast<std::uint64_t>(m));
        for (int k = 0; k < 500; ++k) {
            const double r = wm.curiosity_reward({random_vec(5, rng), random_vec(2, rng), random_vec(5, rng, 3.0), false});
            EXPECT_GE(r, 0.0);
            EXPECT_LT(r, 1.0);
        }
    }
}

TEST(LabelAndUpdateTest, PerfectBatchGivesZeroRewardLossAndNoMotion) {
    WorldModel wm(3, 1, small_config());
    wm.set_params(nn::zero_params(wm.spec()));
    std::vector<Trajectory> batch{{1, {{Vec::Ones(3), Vec::Ones(1), Vec::Zero(3), false}}}};
    const nn::MLPParams before = wm.params();
    const LabelResult r = wm.label_and_update(batch);
    EXPECT_EQ(r.loss, 0.0);
    EXPECT_EQ(r.labeled[0].rewards[0], 0.0);
    EXPECT_EQ(wm.params(), before);
    EXPECT_EQ(wm.version(), 1u);
}

TEST(LabelAndUpdateTest, LabelsUsePreUpdateParametersBitwise) {
    Rng rng(7);
    WorldModel wm(4, 2, small_config(1e-2), 9);
    for (int round = 0; round < 20; ++round) {
        const auto batch = random_batch(4, 7, 4, 2, rng);
        const WorldModel before = wm;
        const LabelResult r = wm.label_and_update(batch);
        EXPECT_EQ(wm.version(), before.version() + 1);
        for (std::size_t t = 0; t < batch.size(); ++t) {
            EXPECT_EQ(r.labeled[t].model_version, before.version());
            EXPECT_EQ(r.labeled[t].trajectory, batch[t]);
            for (std::size_t k = 0; k < batch[t].size(); ++k)
                ASSERT_EQ(r.labeled[t].rewards[k], before.curiosity_reward(batch[t].transitions[k]));
        }
        EXPECT_EQ(before.label(batch), r.labeled);
        EXPECT_NE(wm.label(batch)[0].rewards, r.labeled[0].rewards);
    }
}

TEST(LabelAndUpdateTest, RelabelingSameVersionIsIdentical) {
    Rng rng(2);
    WorldModel wm(3, 1, small_config(), 1);
    const auto batch = random_batch(3, 5, 3, 1, rng);
    EXPECT_EQ(wm.label(batch), wm.label(batch));
}

TEST(LabelAndUpdateTest, OneStepUsuallyReducesBatchReward) {
    Rng data_rng(123);
    const auto batch = random_batch(4, 10, 3, 1, data_rng);
    auto total = [](const std::vector<LabeledTrajectory>& ls) {
        double s = 0.0;
        for (const auto& l : ls)
            for (double r : l.rewards) s += r;
        return s;
    };
    int reduced = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        WorldModel wm(3, 1, small_config(1e-3), seed);
        const double before = total(wm.label_and_update(batch).labeled);
        if (total(wm.label(batch)) <= before) ++reduced;
    }
    EXPECT_GE(reduced, 80);
}

TEST(LabelAndUpdateTest, NonFiniteLossLeavesModelUntouched) {
    WorldModel wm(2, 1, small_config(), 1);
    std::vector<Trajectory> batch{{1, {{Vec::Zero(2), Vec::Zero(1), Vec::Constant(2, std::nan("")), false}}}};
    const nn::MLPParams before = wm.params();
    EXPECT_THROW(wm.label_and_update(batch), NonFiniteError);
    EXPECT_EQ(wm.version(), 0u);
    EXPECT_EQ(wm.params(), before);
    EXPECT_THROW(wm.label_and_update({}), InvalidInput);
}

TEST(LabelAndUpdateTest, LossIsSummedSquaredError) {
    Rng rng(3);
    WorldModel wm(3, 1, small_config(), 2);
    const auto batch = random_batch(2, 4, 3, 1, rng);
    double expected = 0.0;
    for (const auto& t : batch)
        for (const auto& tr : t.transitions) expected += (wm.predict(tr.s, tr.a) - tr.s_next).squaredNorm();
    EXPECT_NEAR(wm.loss(batch), expected, 1e-12);
    EXPECT_NEAR(wm.label_and_update(batch).loss, expected, 1e-12);
}

TEST(WorldModelTest, CheckpointRoundTrip) {
    Rng rng(3);
    WorldModel wm(3, 1, small_config(), 2);
    wm.label_and_update(random_batch(2, 4, 3, 1, rng));
    const auto [manifest, weights] = nn::encode_checkpoint(wm.to_checkpoint());
    const WorldModel back = WorldModel::from_checkpoint(nn::decode_checkpoint(manifest, weights));
    EXPECT_EQ(back.params(), wm.params());
    EXPECT_EQ(back.version(), 1u);
    EXPECT_EQ(back.config().reward_scale, wm.config().reward_scale);
}

}  // namespace
}  // namespace selmo
