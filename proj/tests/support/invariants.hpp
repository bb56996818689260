#pragma once

// Randomized invariant checks shared by the property test and the acceptance binary.

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "iso/irl.hpp"
#include "iso/optimizer.hpp"
#include "iso/user_sim.hpp"
#include "support/oracles.hpp"

namespace invariants {

struct SuiteResult {
  int instances = 0;
  long checks = 0;
  std::vector<std::string> failures;
};

class Checker {
 public:
  Checker(SuiteResult& out, int instance) : out_(out), instance_(instance) {}
  void expect(bool ok, const std::string& what) {
    ++out_.checks;
    if (!ok && out_.failures.size() < 50) out_.failures.push_back("instance " + std::to_string(instance_) + ": " + what);
  }

 private:
  SuiteResult& out_;
  int instance_;
};

inline bool rows_normalized(const std::vector<double>& flat, int width) {
  for (std::size_t i = 0; i < flat.size(); i += width) {
    double total = 0.0;
    for (int j = 0; j < width; ++j) {
      if (flat[i + j] < 0.0) return false;
      total += flat[i + j];
    }
    if (std::abs(total - 1.0) > iso::kProbTolerance) return false;
  }
  return true;
}

inline void check_instance(iso::Rng& rng, int id, SuiteResult& out) {
  using namespace iso;
  Checker c(out, id);
  const int n = 1 + static_cast<int>(rng.below(8));
  const int m = 1 + static_cast<int>(rng.below(4));
  const int cf = 1 + static_cast<int>(rng.below(n));
  const double gamma = 0.95 * rng.uniform();
  const auto mdp = oracle::random_mdp(rng, n, m, cf, gamma);
  const auto pi = oracle::random_policy(rng, n, m);
  const auto r = oracle::random_vector(rng, n);
  const auto rm = RewardModel::one_hot(r);

  // Row sums.
  c.expect(validate(mdp).ok(), "sampled system validates");
  c.expect(rows_normalized(mdp.transitions().flat_probs(), cf), "transition rows sum to one");
  c.expect(validate(pi).ok(), "policy validates");

  // Bellman residual of exact evaluation.
  const auto v = policy_evaluation(mdp, pi, r);
  c.expect(bellman_residual(mdp, pi, r, v) < 1e-9, "policy evaluation residual");

  // Soft user: normalized rows, converged values.
  const auto soft = soft_value_iteration(mdp, r);
  c.expect(rows_normalized(soft.policy.flat(), m), "soft policy rows sum to one");
  c.expect(soft.residual < 1e-8, "soft value residual");

  // Occupancy conservation.
  const auto occ = forward_occupancy(mdp, soft.policy, mdp.d0(), 12);
  for (const auto& row : occ) {
    double total = 0.0;
    for (double p : row) total += p;
    c.expect(std::abs(total - 1.0) < 1e-9, "occupancy sums to one");
  }

  // Adversarial policy: argmax of the complement is the argmin of the original.
  if (m >= 2) {
    const auto adv = adversarial_policy(pi);
    c.expect(rows_normalized(adv.flat(), m), "adversarial rows sum to one");
    for (int s = 0; s < n; ++s) {
      const auto row = pi.row(s);
      int lo = 0;
      for (int a = 1; a < m; ++a)
        if (row[a] < row[lo]) lo = a;
      int ties = 0;
      for (int a = 0; a < m; ++a) ties += row[a] == row[lo];
      if (ties == 1) c.expect(argmax_action(adv.row(s)) == lo, "adversarial argmax is the original argmin");
    }
  }

  // psi arithmetic against a direct sum, and labels as theta . psi.
  Trajectory traj = sample_trajectory(mdp, pi, 1 + static_cast<int>(rng.below(15)), rng);
  const auto psi = discounted_feature_sum(traj, rm, gamma);
  std::vector<double> direct(n, 0.0);
  double weight = 1.0, score = 0.0;
  for (int s : traj.states) {
    direct[s] += weight;
    score += weight * r[s];
    weight *= gamma;
  }
  c.expect(oracle::max_abs_diff(psi, direct) < 1e-12, "psi equals the discounted visit sum");
  const std::vector<Trajectory> one{traj};
  c.expect(std::abs(label_dataset(one, rm, gamma)[0].score - score) < 1e-12, "label equals theta . psi");
  c.expect(validate(traj, mdp.graph()).ok(), "sampled trajectory stays on the graph");

  // MDP+ duality, improvement and support containment.
  const auto mp = build_mdp_plus(mdp, pi, rm);
  const double old_plus = expected_plus_value(mp, induced_plus_policy(mdp));
  c.expect(std::abs(old_plus - expected_start_value(mdp, pi, rm)) < 1e-9, "plus-value duality");
  const double tau = rng.uniform() < 0.5 ? 0.0 : 0.05 + rng.uniform();
  const auto sol = solve_mdp_plus(mp, 1e-10, tau);
  const double eta = rng.uniform() < 0.5 ? 1.0 : rng.uniform();
  const auto next = mdp.with_transitions(extract_transition(sol, mdp, eta, tau));
  c.expect(validate(next).ok(), "extracted system validates");
  c.expect(next.transitions().flat_targets() == mdp.graph().flat(), "extracted support stays on the graph");
  const auto greedy = mdp.with_transitions(extract_transition(sol, mdp, 1.0, 0.0));
  c.expect(expected_plus_value(mp, induced_plus_policy(greedy)) >= old_plus - 1e-9, "greedy extraction improves");
}

inline SuiteResult run_suite(std::uint64_t seed, int instances) {
  SuiteResult out;
  iso::Rng rng(seed);
  for (int i = 0; i < instances; ++i) {
    try {
      check_instance(rng, i, out);
    } catch (const std::exception& e) {
      out.failures.push_back("instance " + std::to_string(i) + " threw: " + e.what());
    }
    ++out.instances;
  }
  return out;
}

}  // namespace invariants
