#include <doctest.h>

#include <cmath>
#include <limits>

#include "iso/harness.hpp"
#include "iso/optimizer.hpp"
#include "support/oracles.hpp"

using namespace iso;

namespace {

IsoConfig oracle_config() {
  IsoConfig cfg;
  cfg.recoverer = Recoverer::DmOracle;
  cfg.dataset.n_trajectories = 300;
  return cfg;
}

}  // namespace

TEST_CASE("build_mdp_plus") {
  Rng rng(1);
  auto sys = sample_system(64, 4, 2, 0.25, 0.9, rng);
  const auto uniform = PolicyTable::uniform(64, 4);
  auto mp = build_mdp_plus(sys.mdp, uniform, sys.reward);
  CHECK(mp.n_plus_states() == 256);
  CHECK(mp.n_plus_actions() == 2);

  for (int p = 0; p < mp.n_plus_states(); ++p) {
    const auto [s, a] = mp.decompose(p);
    CHECK(MdpPlus::plus_index(s, a, 4) == p);
    CHECK(mp.rewards()[p] == sys.reward.state_rewards()[s]);
    for (int j = 0; j < mp.n_plus_actions(); ++j) {
      const int target = mp.plus_actions(p)[j];
      double total = 0.0;
      auto next = mp.next_distribution(p, j);
      CHECK(next.size() == 4);
      for (auto [q, prob] : next) {
        CHECK(mp.decompose(q).first == target);
        CHECK(prob == 0.25);
        total += prob;
      }
      CHECK(std::abs(total - 1.0) < 1e-9);
    }
  }

  double d0_total = 0.0;
  for (double x : mp.d0()) d0_total += x;
  CHECK(std::abs(d0_total - 1.0) < 1e-9);

  auto zero = build_mdp_plus(sys.mdp, uniform, sys.reward.with_theta(std::vector<double>(64, 0.0)));
  for (double r : zero.rewards()) CHECK(r == 0.0);
}

TEST_CASE("solve_mdp_plus") {
  SUBCASE("zero rewards pick the lowest successor everywhere") {
    Rng rng(2);
    auto mdp = oracle::random_mdp(rng, 6, 3, 3, 0.9);
    auto mp = build_mdp_plus(mdp, PolicyTable::uniform(6, 3), RewardModel::one_hot(std::vector<double>(6, 0.0)));
    auto sol = solve_mdp_plus(mp);
    for (double v : sol.values) CHECK(v == 0.0);
    for (int p = 0; p < mp.n_plus_states(); ++p) {
      const auto succ = mp.plus_actions(p);
      CHECK(succ[sol.greedy[p]] == *std::min_element(succ.begin(), succ.end()));
    }
  }

  SUBCASE("the only rewarding state is chosen whenever it is reachable") {
    Rng rng(3);
    auto mdp = oracle::random_mdp(rng, 5, 2, 2, 0.8);
    auto pi = oracle::random_policy(rng, 5, 2);
    auto mp = build_mdp_plus(mdp, pi, RewardModel::one_hot({0, 0, 1, 0, 0}));
    auto sol = solve_mdp_plus(mp);
    int deciding = 0;
    for (int p = 0; p < mp.n_plus_states(); ++p) {
      const auto succ = mp.plus_actions(p);
      if (std::find(succ.begin(), succ.end(), 2) == succ.end()) continue;
      ++deciding;
      CHECK(succ[sol.greedy[p]] == 2);
    }
    CHECK(deciding > 0);
  }

  SUBCASE("values match exhaustive enumeration on tiny systems") {
    Rng rng(4);
    for (int trial = 0; trial < 10; ++trial) {
      const int n = 3 + trial % 2;
      auto mdp = oracle::random_mdp(rng, n, 2, 2, 0.9);
      auto pi = oracle::random_policy(rng, n, 2);
      auto r = oracle::random_vector(rng, n);
      auto sol = solve_mdp_plus(build_mdp_plus(mdp, pi, RewardModel::one_hot(r)));

      std::vector<double> best(static_cast<std::size_t>(n) * 2, -std::numeric_limits<double>::infinity());
      oracle::for_each_deterministic_table(mdp.graph(), [&](const TransitionTable& t) {
        auto q = oracle::pair_values(mdp.with_transitions(t), pi, r);
        for (std::size_t p = 0; p < q.size(); ++p) best[p] = std::max(best[p], q[p]);
      });
      CHECK(oracle::max_abs_diff(sol.values, best) < 1e-9);
    }
  }

  SUBCASE("soft policy rows are a softmax of Q") {
    Rng rng(5);
    auto mdp = oracle::random_mdp(rng, 4, 2, 3, 0.9);
    auto mp = build_mdp_plus(mdp, PolicyTable::uniform(4, 2), RewardModel::one_hot({1, 0, 0, 0.5}));
    auto sol = solve_mdp_plus(mp, 1e-9, 0.5);
    REQUIRE(sol.soft_policy);
    const auto& soft = *sol.soft_policy;
    for (int p = 0; p < mp.n_plus_states(); ++p) {
      double total = 0.0;
      for (int j = 0; j < 3; ++j) total += soft[p * 3 + j];
      CHECK(std::abs(total - 1.0) < 1e-12);
      const double ratio = soft[p * 3 + 0] / soft[p * 3 + 1];
      CHECK(ratio == doctest::Approx(std::exp((sol.q[p * 3 + 0] - sol.q[p * 3 + 1]) / 0.5)).epsilon(1e-9));
    }
    CHECK_FALSE(solve_mdp_plus(mp).soft_policy);
  }
}

TEST_CASE("plus values of the induced policy equal original start values") {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(6));
    const int m = 1 + static_cast<int>(rng.below(3));
    const int cf = 1 + static_cast<int>(rng.below(n));
    auto mdp = oracle::random_mdp(rng, n, m, cf, 0.5 + 0.45 * rng.uniform());
    auto pi = oracle::random_policy(rng, n, m);
    auto rm = RewardModel::one_hot(oracle::random_vector(rng, n));
    auto mp = build_mdp_plus(mdp, pi, rm);
    CHECK(std::abs(expected_plus_value(mp, induced_plus_policy(mdp)) - expected_start_value(mdp, pi, rm)) < 1e-9);
  }
}

TEST_CASE("extract_transition") {
  auto g = std::make_shared<const ConnectivityGraph>(2, 1, 2, std::vector<int>{0, 1, 0, 1});
  FiniteMdp mdp(g, TransitionTable::uniform(*g), {1.0, 0.0}, 0.9);
  auto mp = build_mdp_plus(mdp, PolicyTable::uniform(2, 1), RewardModel::one_hot({1.0, 0.0}));
  auto sol = solve_mdp_plus(mp);
  REQUIRE(sol.greedy == std::vector<int>{0, 0});

  auto greedy = extract_transition(sol, mdp, 1.0, 0.0);
  CHECK(greedy.flat_probs() == std::vector<double>{1.0, 0.0, 1.0, 0.0});
  CHECK(extract_transition(sol, mdp, 0.0, 0.0).flat_probs() == mdp.transitions().flat_probs());
  auto half = extract_transition(sol, mdp, 0.5, 0.0);
  CHECK(half.probs(0, 0)[0] == doctest::Approx(0.75));
  CHECK(half.probs(0, 0)[1] == doctest::Approx(0.25));
  CHECK_THROWS(extract_transition(sol, mdp, 1.5, 0.0));

  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto big = oracle::random_mdp(rng, 8, 3, 3, 0.9);
    auto s = solve_mdp_plus(build_mdp_plus(big, oracle::random_policy(rng, 8, 3),
                                           RewardModel::one_hot(oracle::random_vector(rng, 8))),
                            1e-9, trial % 2 ? 0.3 : 0.0);
    auto next = big.with_transitions(extract_transition(s, big, rng.uniform(), trial % 2 ? 0.3 : 0.0));
    CHECK(validate(next).ok());
    CHECK(next.transitions().flat_targets() == big.graph().flat());
  }
}

TEST_CASE("iso_iteration") {
  SUBCASE("oracle path never loses plus-value") {
    Rng rng(8);
    for (int trial = 0; trial < 5; ++trial) {
      auto sys = sample_system(16, 4, 2, 0.25, 0.9, rng);
      auto out = iso_iteration(sys.mdp, sys.reward, oracle_config(), 100 + trial);
      CHECK(out.record.plus_value_optimal >= out.record.plus_value_previous - 1e-9);
      CHECK(out.record.plus_value_extracted >= out.record.plus_value_previous - 1e-9);
      CHECK(std::abs(out.record.plus_value_extracted - out.record.plus_value_optimal) < 1e-9);
      CHECK(validate(out.system).ok());
      CHECK(out.system.d0() == sys.mdp.d0());
    }
  }

  SUBCASE("one oracle step reaches the enumeration optimum for the modeled user") {
    Rng rng(9);
    for (int trial = 0; trial < 6; ++trial) {
      const int n = 3 + trial % 2;
      auto sys = sample_system(n, 2, 2, 0.34, 0.9, rng);
      auto out = iso_iteration(sys.mdp, sys.reward, oracle_config(), 200 + trial);
      const auto r_hat = RewardModel::one_hot(out.theta_hat).state_rewards();
      const double attained = oracle::start_value(out.system, out.user_model, r_hat);
      CHECK(std::abs(attained - oracle::best_deterministic_start_value(sys.mdp, out.user_model, r_hat)) < 1e-9);
    }
  }

  SUBCASE("zero reward stays at zero value") {
    Rng rng(10);
    auto sys = sample_system(8, 2, 2, 0.25, 0.9, rng);
    auto zero = sys.reward.with_theta(std::vector<double>(8, 0.0));
    CHECK(true_system_value(sys.mdp, zero) == 0.0);
    for (auto rec : {Recoverer::DmOracle, Recoverer::MaxEnt}) {
      auto cfg = oracle_config();
      cfg.recoverer = rec;
      auto out = iso_iteration(sys.mdp, zero, cfg, 1);
      CHECK(out.record.expected_value_true == 0.0);
    }
  }

  SUBCASE("component failures carry their stage") {
    Rng rng(11);
    auto sys = sample_system(6, 1, 2, 0.5, 0.9, rng);
    auto cfg = oracle_config();
    cfg.dataset.behavior = {BehaviorKind::MixOfBehaviors, 0.5};
    try {
      iso_iteration(sys.mdp, sys.reward, cfg, 1);
      FAIL("expected a stage error");
    } catch (const IsoStageError& e) {
      CHECK(e.stage() == "sample");
    }
    cfg = oracle_config();
    cfg.eta = 2.0;
    CHECK_THROWS_AS(iso_iteration(sys.mdp, sys.reward, cfg, 1), IsoStageError);
  }

  SUBCASE("same seed gives the same outcome") {
    Rng rng(12);
    auto sys = sample_system(10, 2, 2, 0.3, 0.9, rng);
    IsoConfig cfg;
    cfg.dataset.n_trajectories = 100;
    cfg.maxent.n_gradient_steps = 20;
    auto a = iso_iteration(sys.mdp, sys.reward, cfg, 5);
    auto b = iso_iteration(sys.mdp, sys.reward, cfg, 5);
    CHECK(a.system.transitions().flat_probs() == b.system.transitions().flat_probs());
    CHECK(a.record.expected_value_true == b.record.expected_value_true);
    CHECK(a.theta_hat == b.theta_hat);
  }
}

TEST_CASE("iso_loop") {
  Rng rng(13);
  auto sys = sample_system(12, 3, 2, 0.25, 0.9, rng);

  SUBCASE("no iterations leaves only the initial record") {
    auto cfg = oracle_config();
    cfg.max_outer_iters = 0;
    auto run = iso_loop(sys.mdp, sys.reward, cfg, 3);
    REQUIRE(run.trace.size() == 1);
    CHECK(run.trace[0].iteration == 0);
    CHECK(run.trace[0].expected_value_true == true_system_value(sys.mdp, sys.reward));
    CHECK_FALSE(run.trace[0].quality.pearson);
  }

  SUBCASE("a converged system stops after patience iterations") {
    auto cfg = oracle_config();
    cfg.max_outer_iters = 40;
    auto first = iso_loop(sys.mdp, sys.reward, cfg, 3);
    CHECK(first.trace.size() < 41);
    auto again = iso_loop(first.final_system, sys.reward, cfg, 4);
    CHECK(again.trace.size() == static_cast<std::size_t>(cfg.patience) + 1);
    for (std::size_t k = 1; k < again.trace.size(); ++k)
      CHECK(std::abs(again.trace[k].expected_value_true - again.trace[k - 1].expected_value_true) < cfg.tol);
  }

  SUBCASE("zero reward converges immediately") {
    auto cfg = oracle_config();
    auto run = iso_loop(sys.mdp, sys.reward.with_theta(std::vector<double>(12, 0.0)), cfg, 3);
    CHECK(run.trace.size() == static_cast<std::size_t>(cfg.patience) + 1);
    for (const auto& rec : run.trace) CHECK(rec.expected_value_true == 0.0);
  }

  SUBCASE("oracle path improves the true value for the user it was optimized against") {
    // The gain is measured before the user re-adapts to the new dynamics.
    Rng tiny(14);
    for (int trial = 0; trial < 10; ++trial) {
      auto small = sample_system(5, 2, 2, 0.4, 0.9, tiny);
      const auto r = small.reward.state_rewards();
      auto cfg = oracle_config();
      FiniteMdp current = small.mdp;
      for (int k = 1; k <= 8; ++k) {
        const auto user = soft_value_iteration(current, small.reward).policy;
        auto out = iso_iteration(current, small.reward, cfg, derive_seed({std::uint64_t(trial), std::uint64_t(k)}), k);
        CHECK(oracle::start_value(out.system, user, r) >= oracle::start_value(current, user, r) - 1e-9);
        current = out.system;
      }
    }
  }

  SUBCASE("records carry seeds derived from the loop seed") {
    auto cfg = oracle_config();
    cfg.max_outer_iters = 3;
    cfg.patience = 10;
    auto run = iso_loop(sys.mdp, sys.reward, cfg, 42);
    REQUIRE(run.trace.size() == 4);
    CHECK(run.trace[1].seed == derive_seed({42, 1}));
    CHECK(run.trace[3].seed == derive_seed({42, 3}));
  }
}

TEST_CASE("recoverer names round-trip") {
  CHECK(parse_recoverer(to_string(Recoverer::MaxEnt)) == Recoverer::MaxEnt);
  CHECK(parse_recoverer("dm-oracle") == Recoverer::DmOracle);
  CHECK_THROWS(parse_recoverer("gail"));
}
