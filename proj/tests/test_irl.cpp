#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <memory>

#include "iso/irl.hpp"
#include "iso/user_sim.hpp"
#include "support/oracles.hpp"

using namespace iso;

namespace {

// Every action leads uniformly to every state.
FiniteMdp complete(int n, int m) {
  std::vector<int> succ;
  for (int i = 0; i < n * m; ++i)
    for (int s = 0; s < n; ++s) succ.push_back(s);
  auto g = std::make_shared<const ConnectivityGraph>(n, m, n, std::move(succ));
  return FiniteMdp(g, TransitionTable::uniform(*g), std::vector<double>(n, 1.0 / n), 0.9);
}

// 0 - 1 - 2 - 3 with actions forward and back; both ends clamp.
FiniteMdp line4() {
  std::vector<int> succ;
  for (int s = 0; s < 4; ++s) {
    succ.push_back(std::min(s + 1, 3));
    succ.push_back(std::max(s - 1, 0));
  }
  auto g = std::make_shared<const ConnectivityGraph>(4, 2, 1, std::move(succ));
  return FiniteMdp(g, TransitionTable::uniform(*g), {0.25, 0.25, 0.25, 0.25}, 0.9);
}

}  // namespace

TEST_CASE("maxent_irl") {
  SUBCASE("matched moments give a zero gradient at the start point") {
    auto mdp = complete(3, 2);
    std::vector<Trajectory> ds;
    for (int i = 0; i < 3; ++i) {
      Trajectory t;
      for (int k = 0; k < 6; ++k) t.states.push_back((i + k) % 3);
      t.actions.assign(5, 0);
      ds.push_back(t);
    }
    auto rep = maxent_irl(mdp, ds, RewardModel::one_hot({0, 0, 0}), {});
    CHECK(rep.gradient_norm < 1e-12);
    CHECK(rep.steps == 0);
    CHECK(rep.theta_hat == std::vector<double>{0, 0, 0});

    MaxEntConfig ridge;
    ridge.l2 = 0.5;
    CHECK(maxent_irl(mdp, ds, RewardModel::one_hot({0, 0, 0}), ridge).gradient_norm < 1e-12);
  }

  SUBCASE("single-state system leaves theta at zero") {
    auto mdp = complete(1, 2);
    std::vector<Trajectory> ds{{{0, 0, 0}, {0, 1}}, {{0, 0}, {1}}};
    auto rep = maxent_irl(mdp, ds, RewardModel::one_hot({0}), {});
    CHECK(rep.gradient_norm < 1e-12);
    CHECK(rep.theta_hat[0] == 0.0);
  }

  SUBCASE("rewarding end of a line is ranked highest") {
    auto mdp = line4();
    auto pi = soft_value_iteration(mdp, std::vector<double>{0, 0, 0, 1}).policy;
    DatasetSpec spec;
    spec.n_trajectories = 1000;
    spec.min_len = 10;
    spec.max_len = 10;
    spec.seed = 4;
    auto ds = sample_dataset(mdp, pi, spec);
    auto rep = maxent_irl(mdp, ds, RewardModel::one_hot({0, 0, 0, 0}), {}, std::vector<double>{0, 0, 0, 1});
    const auto& th = rep.theta_hat;
    for (int s = 0; s < 3; ++s) CHECK(th[3] > th[s]);
    REQUIRE(rep.quality.spearman);
    CHECK(*rep.quality.spearman > 0.0);
  }

  SUBCASE("log-likelihood never decreases and the result is deterministic") {
    Rng rng(21);
    auto mdp = oracle::random_mdp(rng, 12, 3, 2, 0.9);
    std::vector<double> theta(12, 0.0);
    theta[2] = theta[7] = 1.0;
    auto pi = soft_value_iteration(mdp, theta).policy;
    DatasetSpec spec;
    spec.n_trajectories = 300;
    spec.seed = 5;
    auto ds = sample_dataset(mdp, pi, spec);
    MaxEntConfig cfg;
    cfg.n_gradient_steps = 60;
    cfg.learning_rate = 0.5;
    auto rep = maxent_irl(mdp, ds, RewardModel::one_hot(std::vector<double>(12, 0.0)), cfg, theta);
    for (std::size_t i = 1; i < rep.log_likelihood.size(); ++i)
      CHECK(rep.log_likelihood[i] >= rep.log_likelihood[i - 1]);
    CHECK(rep.log_likelihood.size() == static_cast<std::size_t>(rep.steps) + 1);
    auto again = maxent_irl(mdp, ds, RewardModel::one_hot(std::vector<double>(12, 0.0)), cfg, theta);
    CHECK(again.theta_hat == rep.theta_hat);
  }

  SUBCASE("trajectories off the graph are rejected") {
    auto mdp = line4();
    std::vector<Trajectory> ds{{{0, 3}, {0}}};
    CHECK_THROWS_AS(maxent_irl(mdp, ds, RewardModel::one_hot({0, 0, 0, 0}), {}), ModelError);
  }
}

TEST_CASE("forward_occupancy conserves probability") {
  Rng rng(31);
  auto mdp = oracle::random_mdp(rng, 9, 3, 3, 0.9);
  auto pi = oracle::random_policy(rng, 9, 3);
  auto occ = forward_occupancy(mdp, pi, mdp.d0(), 25);
  REQUIRE(occ.size() == 25);
  for (const auto& row : occ) {
    double total = 0.0;
    for (double p : row) {
      CHECK(p >= 0.0);
      total += p;
    }
    CHECK(std::abs(total - 1.0) < 1e-9);
  }
  CHECK(forward_occupancy(mdp, pi, mdp.d0(), 0).empty());
}

TEST_CASE("empirical_feature_counts") {
  std::vector<Trajectory> ds{{{0, 1, 1}, {0, 0}}, {{2}, {}}};
  CHECK(empirical_feature_counts(ds, RewardModel::one_hot({0, 0, 0})) == std::vector<double>{0.5, 1.0, 0.5});
}

TEST_CASE("dm_irl") {
  SUBCASE("exact line through two points") {
    RewardModel features({0.0}, {1.0, 2.0}, 2);
    std::vector<LabeledTrajectory> ds{{{{0}, {}}, 3.0}, {{{1}, {}}, 6.0}};
    auto rep = dm_irl(ds, features, 0.9);
    CHECK(rep.theta_hat[0] == doctest::Approx(3.0).epsilon(1e-9));
    CHECK(rep.design_rank == 1);
    CHECK_FALSE(rep.rank_deficient);
  }

  SUBCASE("zero scores give zero weights") {
    std::vector<LabeledTrajectory> ds{{{{0, 1}, {0}}, 0.0}, {{{1, 0}, {0}}, 0.0}};
    auto rep = dm_irl(ds, RewardModel::one_hot({0, 0}), 0.9);
    for (double x : rep.theta_hat) CHECK(x == 0.0);
  }

  SUBCASE("full-rank synthetic labels recover theta") {
    Rng rng(41);
    auto mdp = oracle::random_mdp(rng, 16, 4, 2, 0.9);
    auto theta = oracle::random_vector(rng, 16, -2.0, 2.0);
    auto rm = RewardModel::one_hot(theta);
    DatasetSpec spec;
    spec.n_trajectories = 500;
    spec.seed = 6;
    auto ds = sample_dataset(mdp, PolicyTable::uniform(16, 4), spec);
    auto rep = dm_irl(label_dataset(ds, rm, 0.9), RewardModel::one_hot(std::vector<double>(16, 0.0)), 0.9, theta);
    REQUIRE_FALSE(rep.rank_deficient);
    CHECK(oracle::max_abs_diff(rep.theta_hat, theta) < 1e-6);
    CHECK(*rep.quality.pearson == doctest::Approx(1.0).epsilon(1e-9));
  }

  SUBCASE("states never visited make the design rank deficient") {
    std::vector<LabeledTrajectory> ds{{{{0, 0}, {0}}, 1.0}};
    auto rep = dm_irl(ds, RewardModel::one_hot({0, 0}), 0.5);
    CHECK(rep.rank_deficient);
    CHECK(rep.design_rank == 1);
  }
}

TEST_CASE("recovery_quality") {
  std::vector<double> t{0.0, 1.0, 3.0, -2.0, 0.5};
  auto same = recovery_quality(t, t);
  CHECK(*same.pearson == doctest::Approx(1.0));
  CHECK(*same.spearman == doctest::Approx(1.0));

  std::vector<double> neg(t.size()), affine(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    neg[i] = -t[i];
    affine[i] = 2.0 * t[i] + 5.0;
  }
  auto n = recovery_quality(neg, t);
  CHECK(*n.pearson == doctest::Approx(-1.0));
  CHECK(*n.spearman == doctest::Approx(-1.0));
  auto a = recovery_quality(affine, t);
  CHECK(*a.pearson == doctest::Approx(1.0));
  CHECK(*a.spearman == doctest::Approx(1.0));

  auto flat = recovery_quality(std::vector<double>(5, 0.3), t);
  CHECK_FALSE(flat.pearson);
  CHECK_FALSE(flat.spearman);

  // Ties share their average rank.
  auto tied = recovery_quality(std::vector<double>{1, 1, 2}, std::vector<double>{1, 2, 3});
  CHECK(*tied.spearman == doctest::Approx(std::sqrt(3.0) / 2.0));
}
