#include "iso/optimizer.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace iso {

// ---------------------------------------------------------------------------
// MdpPlus

MdpPlus::MdpPlus(std::shared_ptr<const ConnectivityGraph> graph, PolicyTable user_model, std::vector<double> rewards,
                 std::vector<double> d0, double gamma)
    : graph_(std::move(graph)),
      user_model_(std::move(user_model)),
      rewards_(std::move(rewards)),
      d0_(std::move(d0)),
      gamma_(gamma) {
  if (!graph_) throw ModelError("mdp+: missing graph");
  const auto n_plus = static_cast<std::size_t>(n_plus_states());
  if (user_model_.n_states() != graph_->n_states() || user_model_.n_actions() != graph_->n_actions())
    throw ModelError("mdp+: user model shape does not match graph");
  if (rewards_.size() != n_plus || d0_.size() != n_plus) throw ModelError("mdp+: plus-state vectors have wrong length");
  if (!(gamma_ >= 0.0 && gamma_ < 1.0)) throw ModelError("mdp+: gamma out of range [0, 1)");
}

std::vector<std::pair<int, double>> MdpPlus::next_distribution(int p, int j) const {
  const int next = plus_actions(p)[j];
  std::vector<std::pair<int, double>> out;
  out.reserve(n_actions());
  for (int a = 0; a < n_actions(); ++a) out.emplace_back(plus_index(next, a, n_actions()), user_model_(next, a));
  return out;
}

MdpPlus build_mdp_plus(const FiniteMdp& mdp, const PolicyTable& pi_hat, const RewardModel& rm_hat) {
  require_valid(mdp);
  require_valid(pi_hat, mdp);
  if (rm_hat.n_states() != mdp.n_states()) throw ModelError("build_mdp_plus: reward model covers wrong state count");
  const int n = mdp.n_states();
  const int m = mdp.n_actions();
  const auto r = rm_hat.state_rewards();
  std::vector<double> rewards(static_cast<std::size_t>(n) * m);
  std::vector<double> d0(rewards.size());
  for (int s = 0; s < n; ++s) {
    for (int a = 0; a < m; ++a) {
      const int p = MdpPlus::plus_index(s, a, m);
      rewards[p] = r[s];
      d0[p] = mdp.d0()[s] * pi_hat(s, a);
    }
  }
  return {mdp.shared_graph(), pi_hat, std::move(rewards), std::move(d0), mdp.gamma()};
}

namespace {

// W(s) = sum_a pi_hat(a|s) V+((s, a)): the value of landing in s before the user acts.
void landing_values(const MdpPlus& mp, std::span<const double> v, std::vector<double>& w) {
  const int m = mp.n_actions();
  w.assign(mp.n_states(), 0.0);
  for (int s = 0; s < mp.n_states(); ++s) {
    double total = 0.0;
    for (int a = 0; a < m; ++a) total += mp.user_model()(s, a) * v[static_cast<std::size_t>(s) * m + a];
    w[s] = total;
  }
}

// Index into plus_actions(p) with the largest landing value; ties to the lowest state.
int best_action(std::span<const int> actions, const std::vector<double>& w) {
  int best = 0;
  for (int j = 1; j < static_cast<int>(actions.size()); ++j) {
    const double cand = w[actions[j]];
    const double cur = w[actions[best]];
    if (cand > cur || (cand == cur && actions[j] < actions[best])) best = j;
  }
  return best;
}

PlusPolicy one_hot_policy(const MdpPlus& mp, std::span<const int> choice) {
  const int cf = mp.n_plus_actions();
  PlusPolicy policy(static_cast<std::size_t>(mp.n_plus_states()) * cf, 0.0);
  for (int p = 0; p < mp.n_plus_states(); ++p) policy[static_cast<std::size_t>(p) * cf + choice[p]] = 1.0;
  return policy;
}

PlusPolicy softmax_policy(const MdpPlus& mp, std::span<const double> q, double tau) {
  const int cf = mp.n_plus_actions();
  PlusPolicy policy(q.size());
  for (int p = 0; p < mp.n_plus_states(); ++p) {
    const auto row = q.subspan(static_cast<std::size_t>(p) * cf, cf);
    const double top = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (int j = 0; j < cf; ++j) total += policy[static_cast<std::size_t>(p) * cf + j] = std::exp((row[j] - top) / tau);
    for (int j = 0; j < cf; ++j) policy[static_cast<std::size_t>(p) * cf + j] /= total;
  }
  return policy;
}

constexpr int kDensePlusCap = 1024;

}  // namespace

std::vector<double> plus_policy_value(const MdpPlus& mp, const PlusPolicy& policy) {
  const int n_plus = mp.n_plus_states();
  const int cf = mp.n_plus_actions();
  if (policy.size() != static_cast<std::size_t>(n_plus) * cf) throw ModelError("plus_policy_value: policy has wrong size");
  const double gamma = mp.gamma();

  if (n_plus <= kDensePlusCap) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n_plus, n_plus);
    for (int p = 0; p < n_plus; ++p) {
      for (int j = 0; j < cf; ++j) {
        const double pj = policy[static_cast<std::size_t>(p) * cf + j];
        if (pj == 0.0) continue;
        for (const auto& [next, prob] : mp.next_distribution(p, j)) a(p, next) -= gamma * pj * prob;
      }
    }
    Eigen::Map<const Eigen::VectorXd> r(mp.rewards().data(), n_plus);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
    Eigen::VectorXd x = lu.solve(r);
    x += lu.solve(r - a * x);
    return {x.data(), x.data() + n_plus};
  }

  std::vector<double> v(n_plus, 0.0);
  std::vector<double> w;
  for (int it = 0; it < 1'000'000; ++it) {
    landing_values(mp, v, w);
    double residual = 0.0;
    for (int p = 0; p < n_plus; ++p) {
      auto actions = mp.plus_actions(p);
      double next = 0.0;
      for (int j = 0; j < cf; ++j) next += policy[static_cast<std::size_t>(p) * cf + j] * w[actions[j]];
      const double updated = mp.rewards()[p] + gamma * next;
      residual = std::max(residual, std::abs(updated - v[p]));
      v[p] = updated;
    }
    if (residual < 1e-13) return v;
  }
  throw std::runtime_error("plus_policy_value: iterative solve did not converge");
}

double expected_plus_value(const MdpPlus& mp, const PlusPolicy& policy) {
  const auto v = plus_policy_value(mp, policy);
  double total = 0.0;
  for (int p = 0; p < mp.n_plus_states(); ++p) total += mp.d0()[p] * v[p];
  return total;
}

PlusSolution solve_mdp_plus(const MdpPlus& mp, double tol, double tau) {
  if (!(tol > 0.0)) throw std::invalid_argument("solve_mdp_plus: tol must be positive");
  if (tau < 0.0) throw std::invalid_argument("solve_mdp_plus: tau must be non-negative");
  const int n_plus = mp.n_plus_states();
  const int cf = mp.n_plus_actions();
  const double gamma = mp.gamma();

  PlusSolution sol;
  std::vector<double> v(n_plus, 0.0);
  std::vector<double> next(n_plus);
  std::vector<double> w;
  // gamma < 1 is enforced by MdpPlus, so this cap is never the binding stop.
  constexpr int kMaxSweeps = 10'000'000;
  double residual = std::numeric_limits<double>::infinity();
  while (sol.iterations < kMaxSweeps) {
    ++sol.iterations;
    landing_values(mp, v, w);
    residual = 0.0;
    for (int p = 0; p < n_plus; ++p) {
      auto actions = mp.plus_actions(p);
      double best = -std::numeric_limits<double>::infinity();
      for (int target : actions) best = std::max(best, w[target]);
      next[p] = mp.rewards()[p] + gamma * best;
      residual = std::max(residual, std::abs(next[p] - v[p]));
    }
    v.swap(next);
    if (residual < tol) break;
  }
  if (!(residual < tol)) throw std::runtime_error("solve_mdp_plus: value iteration did not converge");

  landing_values(mp, v, w);
  sol.greedy.resize(n_plus);
  for (int p = 0; p < n_plus; ++p) sol.greedy[p] = best_action(mp.plus_actions(p), w);

  // Policy-iteration polish: evaluate the greedy policy exactly and switch only on a
  // strict improvement, so the returned values are the exact values of the returned policy.
  for (int round = 0; round < 1000; ++round) {
    v = plus_policy_value(mp, one_hot_policy(mp, sol.greedy));
    landing_values(mp, v, w);
    bool changed = false;
    for (int p = 0; p < n_plus; ++p) {
      auto actions = mp.plus_actions(p);
      const int cand = best_action(actions, w);
      const double current = w[actions[sol.greedy[p]]];
      if (w[actions[cand]] > current + 1e-12 * (1.0 + std::abs(current))) {
        sol.greedy[p] = cand;
        changed = true;
      }
    }
    if (!changed) break;
  }

  sol.q.resize(static_cast<std::size_t>(n_plus) * cf);
  sol.residual = 0.0;
  for (int p = 0; p < n_plus; ++p) {
    auto actions = mp.plus_actions(p);
    double best = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < cf; ++j) {
      const double q = mp.rewards()[p] + gamma * w[actions[j]];
      sol.q[static_cast<std::size_t>(p) * cf + j] = q;
      best = std::max(best, q);
    }
    sol.residual = std::max(sol.residual, std::abs(best - v[p]));
  }
  sol.values = std::move(v);
  sol.greedy_policy = one_hot_policy(mp, sol.greedy);
  if (tau > 0.0) sol.soft_policy = softmax_policy(mp, sol.q, tau);
  return sol;
}

PlusPolicy induced_plus_policy(const FiniteMdp& mdp) {
  const auto& graph = mdp.graph();
  const auto& table = mdp.transitions();
  PlusPolicy policy(graph.flat().size());
  for (int s = 0; s < mdp.n_states(); ++s)
    for (int a = 0; a < mdp.n_actions(); ++a) {
      auto succ = graph.successors(s, a);
      for (int j = 0; j < graph.cf(); ++j) policy[graph.row_offset(s, a) + j] = table.prob(s, a, succ[j]);
    }
  return policy;
}

TransitionTable extract_transition(const PlusSolution& solution, const FiniteMdp& mdp, double eta, double tau) {
  const auto& graph = mdp.graph();
  if (!(eta >= 0.0 && eta <= 1.0)) throw std::invalid_argument("extract_transition: eta must lie in [0, 1]");
  if (tau < 0.0) throw std::invalid_argument("extract_transition: tau must be non-negative");
  const auto n_plus = static_cast<std::size_t>(mdp.n_states()) * mdp.n_actions();
  if (solution.greedy.size() != n_plus || solution.q.size() != graph.flat().size() ||
      solution.greedy_policy.size() != graph.flat().size())
    throw ModelError("extract_transition: solution does not match system shape");

  PlusPolicy raw;
  if (tau > 0.0) {
    const int cf = graph.cf();
    raw.resize(solution.q.size());
    for (std::size_t p = 0; p < n_plus; ++p) {
      const auto row = std::span<const double>(solution.q).subspan(p * cf, cf);
      const double top = *std::max_element(row.begin(), row.end());
      double total = 0.0;
      for (int j = 0; j < cf; ++j) total += raw[p * cf + j] = std::exp((row[j] - top) / tau);
      for (int j = 0; j < cf; ++j) raw[p * cf + j] /= total;
    }
  } else {
    raw = solution.greedy_policy;
  }

  const auto old = induced_plus_policy(mdp);
  std::vector<double> probs(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) probs[i] = eta == 1.0 ? raw[i] : (1.0 - eta) * old[i] + eta * raw[i];
  return {graph, std::move(probs)};
}

// ---------------------------------------------------------------------------
// Outer loop

std::string to_string(Recoverer r) { return r == Recoverer::MaxEnt ? "maxent" : "dm-oracle"; }

Recoverer parse_recoverer(const std::string& text) {
  if (text == "maxent" || text == "MaxEnt") return Recoverer::MaxEnt;
  if (text == "dm-oracle" || text == "dm" || text == "DmOracle") return Recoverer::DmOracle;
  throw std::invalid_argument("unknown recoverer: " + text);
}

void IsoConfig::check() const {
  if (max_outer_iters < 0) throw std::invalid_argument("iso: max_outer_iters must be non-negative");
  if (!(tol >= 0.0)) throw std::invalid_argument("iso: tol must be non-negative");
  if (patience < 1) throw std::invalid_argument("iso: patience must be at least 1");
  if (!(tau >= 0.0)) throw std::invalid_argument("iso: tau must be non-negative");
  if (!(eta > 0.0 && eta <= 1.0)) throw std::invalid_argument("iso: eta must lie in (0, 1]");
  dataset.check();
  maxent.check();
}

double true_system_value(const FiniteMdp& mdp, const RewardModel& rm_true, double soft_vi_tol) {
  SoftValueOptions opts;
  opts.tol = soft_vi_tol;
  const auto user = soft_value_iteration(mdp, rm_true, opts);
  return expected_start_value(mdp, user.policy, rm_true);
}

namespace {

template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const IsoStageError&) {
    throw;
  } catch (const std::exception& e) {
    throw IsoStageError(name, e.what());
  }
}

}  // namespace

IterationOutcome iso_iteration(const FiniteMdp& mdp, const RewardModel& rm_true, const IsoConfig& cfg,
                               std::uint64_t seed, int iteration) {
  const auto started = std::chrono::steady_clock::now();
  stage("config", [&] {
    cfg.check();
    require_valid(mdp);
    return 0;
  });
  SoftValueOptions soft_opts;
  soft_opts.tol = cfg.soft_vi_tol;

  // (1) the user adapts to the current system
  const auto user = stage("user-adapt", [&] { return soft_value_iteration(mdp, rm_true, soft_opts); });

  // (2) observe a fresh dataset
  DatasetSpec spec = cfg.dataset;
  spec.seed = seed;
  const auto dataset = stage("sample", [&] { return sample_dataset(mdp, user.policy, spec); });

  // (3) recover the reward; only the feature map of rm_true is visible to the recoverers
  const RewardModel feature_map = rm_true.with_theta(std::vector<double>(rm_true.dim(), 0.0));
  const auto recovery = stage("recover", [&] {
    if (cfg.recoverer == Recoverer::DmOracle) {
      const auto labeled = label_dataset(dataset, rm_true, mdp.gamma());
      return dm_irl(labeled, feature_map, mdp.gamma(), rm_true.theta());
    }
    return maxent_irl(mdp, dataset, feature_map, cfg.maxent, rm_true.theta());
  });
  const RewardModel rm_hat = feature_map.with_theta(recovery.theta_hat);

  // (4) model the user under the recovered reward
  const auto modeled = stage("model-user", [&] { return soft_value_iteration(mdp, rm_hat, soft_opts); });

  // (5)-(6) optimize the system against the modeled user
  const MdpPlus mp = stage("build-plus", [&] { return build_mdp_plus(mdp, modeled.policy, rm_hat); });
  const auto solution = stage("solve-plus", [&] { return solve_mdp_plus(mp, cfg.plus_tol, cfg.tau); });

  // (7) new dynamics
  auto next_system = stage("extract", [&] {
    return mdp.with_transitions(extract_transition(solution, mdp, cfg.eta, cfg.tau));
  });

  IterationRecord record;
  record.iteration = iteration;
  record.seed = seed;
  record.quality = recovery.quality;
  record.config = cfg;
  stage("plus-check", [&] {
    record.plus_value_previous = expected_plus_value(mp, induced_plus_policy(mdp));
    record.plus_value_extracted = expected_plus_value(mp, induced_plus_policy(next_system));
    double optimal = 0.0;
    for (int p = 0; p < mp.n_plus_states(); ++p) optimal += mp.d0()[p] * solution.values[p];
    record.plus_value_optimal = optimal;
    return 0;
  });

  // (8) the user re-adapts; quality is always measured with the true reward
  record.expected_value_true =
      stage("evaluate", [&] { return true_system_value(next_system, rm_true, cfg.soft_vi_tol); });
  record.elapsed_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  return {std::move(next_system), std::move(record), recovery.theta_hat, modeled.policy};
}

IsoRun iso_loop(const FiniteMdp& mdp, const RewardModel& rm_true, const IsoConfig& cfg, std::uint64_t seed) {
  cfg.check();
  IsoRun run{{}, mdp};
  const auto started = std::chrono::steady_clock::now();
  IterationRecord initial;
  initial.iteration = 0;
  initial.seed = seed;
  initial.config = cfg;
  initial.expected_value_true =
      stage("evaluate", [&] { return true_system_value(mdp, rm_true, cfg.soft_vi_tol); });
  initial.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  run.trace.push_back(std::move(initial));

  int streak = 0;
  for (int k = 1; k <= cfg.max_outer_iters; ++k) {
    auto outcome = iso_iteration(run.final_system, rm_true, cfg, derive_seed({seed, static_cast<std::uint64_t>(k)}), k);
    const double change = std::abs(outcome.record.expected_value_true - run.trace.back().expected_value_true);
    run.final_system = std::move(outcome.system);
    run.trace.push_back(std::move(outcome.record));
    streak = change < cfg.tol ? streak + 1 : 0;
    if (streak >= cfg.patience) break;
  }
  return run;
}

}  // namespace iso
