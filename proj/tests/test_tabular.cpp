#include <gtest/gtest.h>

#include <random>

#include "atlas/tabular.hpp"

using namespace atlas;

namespace {

TabularMDP single_state(double reward, double gamma) {
    TabularMDP mdp;
    mdp.num_states = mdp.num_actions = 1;
    mdp.next = {{0}};
    mdp.reward = {{reward}};
    mdp.gamma = gamma;
    return mdp;
}

}  // namespace

TEST(Backup, SingleState) {
    const auto mdp = single_state(1.0, 0.5);
    EXPECT_DOUBLE_EQ(bellman_backup(mdp, Vector::Zero(1))(0), 1.0);
    EXPECT_DOUBLE_EQ(bellman_backup(mdp, Vector::Constant(1, 2.0))(0), 2.0);
}

TEST(Backup, ZeroRewardZeroFixedPoint) {
    std::mt19937_64 rng(1);
    auto mdp = random_mdp(10, 3, 0.9, rng);
    for (auto& row : mdp.reward) std::fill(row.begin(), row.end(), 0.0);
    EXPECT_TRUE(bellman_backup(mdp, Vector::Zero(10)).isZero());
}

TEST(Backup, Monotone) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> bump(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const auto mdp = random_mdp(20, 4, 0.9, rng);
        Vector w = Vector::Random(20), w2 = w;
        for (Eigen::Index i = 0; i < 20; ++i) w2(i) += bump(rng);
        EXPECT_TRUE((bellman_backup(mdp, w).array() <= bellman_backup(mdp, w2).array()).all());
    }
}

TEST(ValueIteration, ContractionRatiosBoundedByGamma) {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> states(1, 64), actions(1, 8);
    std::normal_distribution<double> init(0.0, 10.0);
    for (int trial = 0; trial < 50; ++trial) {
        const auto mdp = random_mdp(states(rng), actions(rng), 0.9, rng);
        Vector w0(mdp.num_states);
        for (Eigen::Index i = 0; i < w0.size(); ++i) w0(i) = init(rng);
        const auto r = value_iteration(mdp, w0, 1e-10);
        ASSERT_FALSE(r.contraction_ratios.empty());
        for (double q : r.contraction_ratios) EXPECT_LE(q, 0.9 + 1e-12);
    }
}

TEST(ValueIteration, FixedPointIndependentOfStart) {
    std::mt19937_64 rng(4);
    const auto mdp = random_mdp(30, 5, 0.9, rng);
    const auto a = value_iteration(mdp, Vector::Zero(30), 1e-10);
    const auto b = value_iteration(mdp, Vector::Constant(30, 100.0), 1e-10);
    EXPECT_LE((a.V - b.V).lpNorm<Eigen::Infinity>(), 2.0 * 1e-10 / (1.0 - 0.9));
}

TEST(ValueIteration, StartingAtFixedPointTakesOneSweep) {
    const auto mdp = single_state(1.0, 0.5);
    const auto r = value_iteration(mdp, Vector::Constant(1, 2.0), 1e-10);
    EXPECT_EQ(r.iterations, 1);
    EXPECT_DOUBLE_EQ(r.V(0), 2.0);
}

TEST(ValueIteration, RejectsBadInputs) {
    auto mdp = single_state(1.0, 1.0);
    EXPECT_THROW(value_iteration(mdp, Vector::Zero(1)), Error);
    mdp.gamma = 0.5;
    mdp.next = {{3}};
    EXPECT_THROW(value_iteration(mdp, Vector::Zero(1)), Error);
}

TEST(MdpJson, RoundTrip) {
    std::mt19937_64 rng(5);
    const auto mdp = random_mdp(4, 2, 0.8, rng);
    const auto back = io::mdp_from_json(io::to_json(mdp));
    EXPECT_EQ(back.next, mdp.next);
    EXPECT_EQ(back.reward, mdp.reward);
    EXPECT_DOUBLE_EQ(back.gamma, 0.8);
    EXPECT_THROW(io::mdp_from_json(io::json::parse(R"({"gamma":0.9,"next":[[1]],"reward":[[0]]})")), Error);
}

TEST(Rewards, FromCosts) {
    const auto r = rewards_from_costs({{1.0, -2.0}});
    EXPECT_EQ(r[0][0], -1.0);
    EXPECT_EQ(r[0][1], 2.0);
}
