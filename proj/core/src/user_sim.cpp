#include "iso/user_sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace iso {

std::string to_string(BehaviorKind kind) {
  switch (kind) {
    case BehaviorKind::Optimal:
      return "optimal";
    case BehaviorKind::MixOfBehaviors:
      return "mb";
    case BehaviorKind::NoiseInBehavior:
      return "nb";
  }
  return "unknown";
}

BehaviorKind parse_behavior_kind(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "optimal") return BehaviorKind::Optimal;
  if (t == "mb" || t == "mixofbehaviors") return BehaviorKind::MixOfBehaviors;
  if (t == "nb" || t == "noiseinbehavior") return BehaviorKind::NoiseInBehavior;
  throw std::invalid_argument("unknown behavior kind: " + text);
}

void BehaviorSpec::check() const {
  if (!(nf >= 0.0 && nf <= 1.0)) throw std::invalid_argument("behavior: nf must lie in [0, 1]");
  if (kind == BehaviorKind::Optimal && nf != 0.0)
    throw std::invalid_argument("behavior: optimal behavior requires nf = 0");
}

void DatasetSpec::check() const {
  if (n_trajectories <= 0) throw std::invalid_argument("dataset: n_trajectories must be positive");
  if (min_len <= 0 || max_len < min_len) throw std::invalid_argument("dataset: need 0 < min_len <= max_len");
  behavior.check();
}

namespace {

double log_sum_exp(std::span<const double> xs) {
  const double m = *std::max_element(xs.begin(), xs.end());
  double sum = 0.0;
  for (double x : xs) sum += std::exp(x - m);
  return m + std::log(sum);
}

// Q(s, .) = r(s) + gamma * sum_j T_j(s,a) V(target_j)
void soft_q_row(const FiniteMdp& mdp, std::span<const double> rewards, std::span<const double> v, int s,
                std::span<double> q) {
  const auto& table = mdp.transitions();
  for (int a = 0; a < mdp.n_actions(); ++a) {
    auto targets = table.targets(s, a);
    auto probs = table.probs(s, a);
    double next = 0.0;
    for (std::size_t j = 0; j < targets.size(); ++j) next += probs[j] * v[targets[j]];
    q[a] = rewards[s] + mdp.gamma() * next;
  }
}

}  // namespace

SoftValueResult soft_value_iteration(const FiniteMdp& mdp, std::span<const double> rewards,
                                     const SoftValueOptions& opts) {
  require_valid(mdp);
  if (!(opts.tol > 0.0)) throw std::invalid_argument("soft_value_iteration: tol must be positive");
  const int n = mdp.n_states();
  const int m = mdp.n_actions();
  if (rewards.size() != static_cast<std::size_t>(n))
    throw ModelError("soft_value_iteration: reward length mismatch");

  std::vector<double> v(n, 0.0);
  if (!opts.initial_values.empty()) {
    if (opts.initial_values.size() != v.size()) throw ModelError("soft_value_iteration: bad warm start");
    std::copy(opts.initial_values.begin(), opts.initial_values.end(), v.begin());
  }
  std::vector<double> next(n);
  std::vector<double> q(m);

  double residual = std::numeric_limits<double>::infinity();
  int it = 0;
  while (it < opts.max_iters) {
    ++it;
    residual = 0.0;
    for (int s = 0; s < n; ++s) {
      soft_q_row(mdp, rewards, v, s, q);
      next[s] = log_sum_exp(q);
      residual = std::max(residual, std::abs(next[s] - v[s]));
    }
    v.swap(next);
    if (!std::isfinite(residual)) break;
    if (residual < opts.tol) break;
  }
  if (!(residual < opts.tol)) {
    std::ostringstream os;
    os << "soft_value_iteration: no convergence after " << it << " iterations, residual " << residual;
    throw ConvergenceError(os.str(), residual);
  }

  std::vector<double> probs(static_cast<std::size_t>(n) * m);
  for (int s = 0; s < n; ++s) {
    soft_q_row(mdp, rewards, v, s, q);
    const double lse = log_sum_exp(q);
    double total = 0.0;
    for (int a = 0; a < m; ++a) total += probs[static_cast<std::size_t>(s) * m + a] = std::exp(q[a] - lse);
    for (int a = 0; a < m; ++a) probs[static_cast<std::size_t>(s) * m + a] /= total;
  }
  return {PolicyTable(n, m, std::move(probs)), std::move(v), it, residual};
}

SoftValueResult soft_value_iteration(const FiniteMdp& mdp, const RewardModel& rm, const SoftValueOptions& opts) {
  if (rm.n_states() != mdp.n_states()) throw ModelError("soft_value_iteration: reward model covers wrong state count");
  const auto rewards = rm.state_rewards();
  return soft_value_iteration(mdp, rewards, opts);
}

PolicyTable adversarial_policy(const PolicyTable& pi) {
  const int m = pi.n_actions();
  if (m < 2) throw std::invalid_argument("adversarial_policy: needs at least two actions");
  auto report = validate(pi);
  if (!report.ok()) throw ModelError("adversarial_policy: " + report.summary());
  std::vector<double> probs(pi.flat().size());
  for (std::size_t i = 0; i < probs.size(); ++i) probs[i] = (1.0 - pi.flat()[i]) / (m - 1);
  return {pi.n_states(), m, std::move(probs)};
}

int argmax_action(std::span<const double> row) {
  return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

namespace {

int step_state(const FiniteMdp& mdp, int s, int a, Rng& rng) {
  const auto& table = mdp.transitions();
  return table.targets(s, a)[rng.categorical(table.probs(s, a))];
}

}  // namespace

Trajectory sample_trajectory(const FiniteMdp& mdp, const PolicyTable& policy, int len, Rng& rng) {
  if (len < 1) throw std::invalid_argument("sample_trajectory: len must be at least 1");
  Trajectory traj;
  traj.states.reserve(len + 1);
  traj.actions.reserve(len);
  int s = static_cast<int>(rng.categorical(mdp.d0()));
  traj.states.push_back(s);
  for (int t = 0; t < len; ++t) {
    const int a = static_cast<int>(rng.categorical(policy.row(s)));
    s = step_state(mdp, s, a, rng);
    traj.actions.push_back(a);
    traj.states.push_back(s);
  }
  return traj;
}

std::vector<Trajectory> sample_dataset(const FiniteMdp& mdp, const PolicyTable& pi_star, const DatasetSpec& spec) {
  spec.check();
  require_valid(pi_star, mdp);
  const auto kind = spec.behavior.kind;
  const double nf = spec.behavior.nf;
  const int m = mdp.n_actions();
  if (kind != BehaviorKind::Optimal && nf > 0.0 && m < 2)
    throw std::invalid_argument("sample_dataset: suboptimal behavior needs at least two actions");

  std::optional<PolicyTable> pi_adv;
  if (kind == BehaviorKind::MixOfBehaviors && nf > 0.0) pi_adv = adversarial_policy(pi_star);

  std::vector<Trajectory> out;
  out.reserve(spec.n_trajectories);
  for (int i = 0; i < spec.n_trajectories; ++i) {
    // Dynamics and the policy draw come from one stream; behavior perturbations from
    // another, so every behavior kind at nf = 0 reproduces the optimal dataset exactly.
    Rng traj_rng(derive_seed({spec.seed, static_cast<std::uint64_t>(i), 0}));
    Rng noise_rng(derive_seed({spec.seed, static_cast<std::uint64_t>(i), 1}));
    const int len = spec.min_len + static_cast<int>(traj_rng.below(spec.max_len - spec.min_len + 1));

    if (kind != BehaviorKind::NoiseInBehavior) {
      const bool adversarial = kind == BehaviorKind::MixOfBehaviors && noise_rng.uniform() < nf;
      out.push_back(sample_trajectory(mdp, adversarial ? *pi_adv : pi_star, len, traj_rng));
      continue;
    }

    Trajectory traj;
    traj.states.reserve(len + 1);
    traj.actions.reserve(len);
    int s = static_cast<int>(traj_rng.categorical(mdp.d0()));
    traj.states.push_back(s);
    for (int t = 0; t < len; ++t) {
      int a = static_cast<int>(traj_rng.categorical(pi_star.row(s)));
      if (noise_rng.uniform() < nf) {
        const int best = argmax_action(pi_star.row(s));
        const int pick = static_cast<int>(noise_rng.below(m - 1));
        a = pick < best ? pick : pick + 1;
      }
      s = step_state(mdp, s, a, traj_rng);
      traj.actions.push_back(a);
      traj.states.push_back(s);
    }
    out.push_back(std::move(traj));
  }
  return out;
}

std::vector<LabeledTrajectory> label_dataset(std::span<const Trajectory> dataset, const RewardModel& rm_true,
                                             double gamma) {
  std::vector<LabeledTrajectory> out;
  out.reserve(dataset.size());
  for (const auto& traj : dataset) {
    const auto psi = discounted_feature_sum(traj, rm_true, gamma);
    double score = 0.0;
    for (int j = 0; j < rm_true.dim(); ++j) score += rm_true.theta()[j] * psi[j];
    out.push_back({traj, score});
  }
  return out;
}

}  // namespace iso
