#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "selmo/hierarchy.hpp"

namespace selmo {
namespace {

namespace fs = std::filesystem;

fs::path fake_snapshot_dir(const std::string& name, int total, int every) {
    const fs::path dir = fs::temp_directory_path() / ("selmo_test_hier_" + name);
    fs::remove_all(dir);
    for (int e = every; e <= total; e += every)
        snapshot(make_policy(12, 2, {8, 8, 4}, -0.5, static_cast<std::uint64_t>(e)), e, dir, "src");
    return dir;
}

RunConfig small_downstream(int episodes) {
    RunConfig c;
    c.batch_size = 4;
    c.warmup = 4;
    c.learner.policy_hidden = {16, 16, 8};
    c.learner.critic_hidden = {16, 16, 8};
    c.learner.batch_size = 4;
    c.learner.action_samples = 4;
    c.learner.transitions_per_trajectory = 8;
    c.downstream.episodes = episodes;
    c.downstream.updates_per_episode = 2;
    c.downstream.n_snapshots = 3;
    c.downstream.source_total_episodes = 1000;
    return c;
}

TEST(PhaseTest, IntervalsForThousandEpisodes) {
    const auto early = phase_interval(Phase::early, 1000);
    const auto mid = phase_interval(Phase::mid, 1000);
    const auto late = phase_interval(Phase::late, 1000);
    EXPECT_TRUE(early.contains(0));
    EXPECT_TRUE(early.contains(100));
    EXPECT_FALSE(early.contains(101));
    EXPECT_FALSE(mid.contains(100));
    EXPECT_TRUE(mid.contains(101));
    EXPECT_TRUE(mid.contains(200));
    EXPECT_FALSE(late.contains(200));
    EXPECT_TRUE(late.contains(300));
    EXPECT_FALSE(late.contains(301));
}

TEST(SampleSnapshotsTest, DrawsWithinPhaseWithoutReplacement) {
    const fs::path dir = fake_snapshot_dir("sample", 400, 10);
    for (Phase p : {Phase::early, Phase::mid, Phase::late}) {
        const auto interval = phase_interval(p, 1000);
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const SkillLibrary lib = sample_snapshots(dir, p, 5, seed, 1000);
            ASSERT_EQ(lib.size(), 5u);
            std::set<std::int64_t> seen;
            for (const auto& o : lib.options) {
                EXPECT_TRUE(interval.contains(o.source_episode)) << o.source_episode;
                EXPECT_EQ(o.source_run_id, "src");
                seen.insert(o.source_episode);
            }
            EXPECT_EQ(seen.size(), 5u);
        }
    }
    const SkillLibrary a = sample_snapshots(dir, Phase::mid, 5, 9, 1000);
    const SkillLibrary b = sample_snapshots(dir, Phase::mid, 5, 9, 1000);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.options[i].source_episode, b.options[i].source_episode);
}

TEST(SampleSnapshotsTest, FailsWhenPhaseTooSparse) {
    const fs::path dir = fake_snapshot_dir("sparse", 300, 100);
    // mid of 1000 holds only episode 200
    EXPECT_THROW(sample_snapshots(dir, Phase::mid, 5, 0, 1000), InvalidInput);
    EXPECT_NO_THROW(sample_snapshots(dir, Phase::mid, 1, 0, 1000));
    EXPECT_THROW(sample_snapshots(dir, Phase::mid, 0, 0, 1000), InvalidInput);
    EXPECT_THROW(sample_snapshots(fs::temp_directory_path() / "selmo_no_such_dir", Phase::early, 1, 0, 1000),
                 InvalidInput);
}

TEST(ListSnapshotsTest, IgnoresOtherFiles) {
    const fs::path dir = fake_snapshot_dir("list", 30, 10);
    std::ofstream(dir / "notes.txt") << "x";
    EXPECT_EQ(list_snapshots(dir), (std::vector<std::int64_t>{10, 20, 30}));
}

TEST(SelectOptionTest, GreedyPicksArgmax) {
    Rng rng(0);
    Vec q(4);
    q << 0.1, 2.0, -1.0, 1.9;
    for (int i = 0; i < 20; ++i) EXPECT_EQ(select_option(q, 0.0, rng), 1u);
    EXPECT_EQ(select_option(Vec::Constant(3, 1.0), 0.0, rng), 0u);
    EXPECT_THROW(select_option(Vec(0), 0.0, rng), InvalidInput);
}

TEST(SelectOptionTest, InvariantToConstantShift) {
    Rng a(5), b(5);
    Rng gen(1);
    std::normal_distribution<double> n;
    for (int i = 0; i < 200; ++i) {
        Vec q(5);
        for (auto& v : q) v = n(gen);
        EXPECT_EQ(select_option(q, 0.3, a), select_option((q.array() + 17.0).matrix(), 0.3, b));
    }
}

TEST(SelectOptionTest, ExplorationRateMatchesEpsilon) {
    Rng rng(2);
    Vec q(4);
    q << 0.0, 0.0, 1.0, 0.0;
    int non_greedy = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) non_greedy += select_option(q, 0.4, rng) != 2u;
    // random pick lands on a non-greedy option with probability 0.4 * 3/4
    EXPECT_NEAR(non_greedy / static_cast<double>(n), 0.3, 0.015);
}

TEST(EpsilonScheduleTest, LinearThenConstant) {
    EXPECT_DOUBLE_EQ(epsilon_schedule(1, 100, 0.3, 0.05), 0.3);
    EXPECT_NEAR(epsilon_schedule(26, 100, 0.3, 0.05), 0.175, 1e-12);
    EXPECT_DOUBLE_EQ(epsilon_schedule(51, 100, 0.3, 0.05), 0.05);
    EXPECT_DOUBLE_EQ(epsilon_schedule(100, 100, 0.3, 0.05), 0.05);
}

TEST(DownstreamModeTest, Parse) {
    EXPECT_EQ(parse_downstream_mode("snapshots:late").label(), "snapshots:late");
    EXPECT_EQ(parse_downstream_mode("sacx").kind, DownstreamKind::sacx_lite);
    EXPECT_EQ(parse_downstream_mode("scratch").kind, DownstreamKind::scratch);
    EXPECT_THROW(parse_downstream_mode("snapshots:never"), ConfigError);
    EXPECT_THROW(parse_downstream_mode("options"), ConfigError);
}

TEST(ThresholdTest, FirstEpisodeReachingThreshold) {
    std::vector<CurvePoint> c{{1, 0.0}, {2, 0.5}, {3, 1.0}, {4, 3.0}};
    EXPECT_EQ(episodes_to_threshold(c, 1.0), 3);
    EXPECT_EQ(episodes_to_threshold(c, 0.0), 1);
    EXPECT_FALSE(episodes_to_threshold(c, 5.0).has_value());
}

TEST(TrainDownstreamTest, ScratchMatchesPlainTaskAgent) {
    RunConfig c = small_downstream(4);
    const DownstreamResult plain = train_task_agent(c, c.downstream.task);
    const DownstreamResult scratch = train_downstream(c, parse_downstream_mode("scratch"));
    ASSERT_EQ(plain.curve.size(), 4u);
    ASSERT_EQ(scratch.curve.size(), 4u);
    for (std::size_t i = 0; i < plain.curve.size(); ++i) {
        EXPECT_EQ(plain.curve[i].episode, scratch.curve[i].episode);
        EXPECT_EQ(plain.curve[i].task_return, scratch.curve[i].task_return);
    }
    EXPECT_EQ(plain.option_usage, scratch.option_usage);
    EXPECT_EQ(scratch.option_usage, (std::vector<std::int64_t>{800}));
}

TEST(TrainDownstreamTest, FullHorizonUsesOneOptionPerEpisode) {
    RunConfig c = small_downstream(6);
    c.downstream.snapshot_dir = fake_snapshot_dir("horizon", 300, 10).string();
    c.downstream.option_horizon = 200;
    std::vector<int> ids;
    int checked = 0;
    DownstreamHooks hooks;
    hooks.on_store = [&](const TaskTrajectory& t) { ids.insert(ids.end(), t.option_ids.begin(), t.option_ids.end()); };
    hooks.on_episode_end = [&](int, const std::vector<SkillOption>&) {
        ASSERT_EQ(ids.size(), 200u);
        EXPECT_EQ(std::set<int>(ids.begin(), ids.end()).size(), 1u);
        ids.clear();
        ++checked;
    };
    train_downstream(c, parse_downstream_mode("snapshots:mid"), hooks);
    EXPECT_EQ(checked, 6);
}

TEST(TrainDownstreamTest, FrozenOptionsNeverChange) {
    RunConfig c = small_downstream(5);
    const fs::path dir = fake_snapshot_dir("frozen", 300, 10);
    c.downstream.snapshot_dir = dir.string();
    std::vector<SkillOption> first;
    DownstreamHooks hooks;
    hooks.on_episode_end = [&](int e, const std::vector<SkillOption>& frozen) {
        ASSERT_EQ(frozen.size(), 3u);
        if (e == 1) first = frozen;
        for (std::size_t i = 0; i < frozen.size(); ++i) {
            EXPECT_EQ(frozen[i].policy, first[i].policy);
            EXPECT_EQ(frozen[i].policy, load_policy(snapshot_stem(dir, frozen[i].source_episode)).policy);
        }
    };
    const DownstreamResult r = train_downstream(c, parse_downstream_mode("snapshots:late"), hooks);
    ASSERT_EQ(r.snapshot_episodes.size(), 3u);
    for (auto e : r.snapshot_episodes) EXPECT_TRUE(phase_interval(Phase::late, 1000).contains(e));
    ASSERT_EQ(r.option_usage.size(), 4u);
    std::int64_t total = 0;
    for (auto u : r.option_usage) total += u;
    EXPECT_EQ(total, 5 * 200);
}

TEST(TrainDownstreamTest, StoredStepsCarryOptionIdsAndTaskRewards) {
    RunConfig c = small_downstream(4);
    c.downstream.snapshot_dir = fake_snapshot_dir("stored", 300, 10).string();
    c.downstream.option_horizon = 5;
    const envs::PointMassFetch env;
    std::size_t steps = 0, rewarded = 0;
    std::set<int> used;
    DownstreamHooks hooks;
    hooks.on_store = [&](const TaskTrajectory& t) {
        ASSERT_EQ(t.option_ids.size(), t.trajectory.size());
        ASSERT_EQ(t.rewards.at(c.downstream.task).size(), t.trajectory.size());
        for (std::size_t i = 0; i < t.trajectory.size(); ++i) {
            EXPECT_GE(t.option_ids[i], 0);
            EXPECT_LE(t.option_ids[i], 3);
            used.insert(t.option_ids[i]);
            const Vec raw = denormalize(t.trajectory.transitions[i].s_next, env.spec());
            envs::PointMassState st;
            st.agent_pos = raw.segment<2>(0);
            st.agent_vel = raw.segment<2>(2);
            st.obj_pos[0] = raw.segment<2>(4);
            st.obj_vel[0] = raw.segment<2>(6);
            st.obj_pos[1] = raw.segment<2>(8);
            st.obj_vel[1] = raw.segment<2>(10);
            const double expected = envs::PointMassFetch::rewards_for(st).at(c.downstream.task);
            EXPECT_EQ(t.rewards.at(c.downstream.task)[i], expected);
            rewarded += expected > 0.0;
            ++steps;
        }
    };
    train_downstream(c, parse_downstream_mode("snapshots:early"), hooks);
    EXPECT_EQ(steps, 800u);
    EXPECT_GT(used.size(), 1u);
    (void)rewarded;
}

TEST(TrainDownstreamTest, SacxTracksAuxiliaryRewards) {
    RunConfig c = small_downstream(3);
    std::size_t stores = 0;
    DownstreamHooks hooks;
    hooks.on_store = [&](const TaskTrajectory& t) {
        for (const auto& task : sacx_aux_tasks()) EXPECT_EQ(t.rewards.at(task).size(), t.trajectory.size());
        for (int id : t.option_ids) EXPECT_LT(id, 3);
        ++stores;
    };
    const DownstreamResult r = train_downstream(c, parse_downstream_mode("sacx"), hooks);
    EXPECT_EQ(r.mode, "sacx");
    EXPECT_EQ(r.option_usage.size(), 3u);
    EXPECT_EQ(stores, 12u);
}

TEST(TrainDownstreamTest, DeterministicPerSeed) {
    RunConfig c = small_downstream(3);
    c.downstream.snapshot_dir = fake_snapshot_dir("det", 300, 10).string();
    const auto a = train_downstream(c, parse_downstream_mode("snapshots:mid"));
    const auto b = train_downstream(c, parse_downstream_mode("snapshots:mid"));
    EXPECT_EQ(curve_csv({a}), curve_csv({b}));
    EXPECT_EQ(a.option_usage, b.option_usage);
    EXPECT_EQ(a.snapshot_episodes, b.snapshot_episodes);
}

TEST(TrainDownstreamTest, RejectsMismatchedSnapshots) {
    RunConfig c = small_downstream(1);
    const fs::path dir = fs::temp_directory_path() / "selmo_test_hier_mismatch";
    fs::remove_all(dir);
    snapshot(make_policy(5, 1, {8}, -0.5, 1), 50, dir, "bb");
    c.downstream.snapshot_dir = dir.string();
    c.downstream.n_snapshots = 1;
    EXPECT_THROW(train_downstream(c, parse_downstream_mode("snapshots:early")), ConfigError);
}

TEST(CurveCsvTest, Format) {
    DownstreamResult r{"scratch", 3, {{1, 0.0}, {2, 1.5}}, {}, {}};
    EXPECT_EQ(curve_csv({r}), "episode,task_return,mode,seed\n1,0,scratch,3\n2,1.5,scratch,3\n");
}

}  // namespace
}  // namespace selmo
