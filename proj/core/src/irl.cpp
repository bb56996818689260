#include "iso/irl.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

#include "iso/user_sim.hpp"

namespace iso {

void MaxEntConfig::check() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("maxent: learning_rate must be positive");
  if (n_gradient_steps < 0) throw std::invalid_argument("maxent: n_gradient_steps must be non-negative");
  if (horizon < 0) throw std::invalid_argument("maxent: horizon must be non-negative");
  if (!(soft_vi_tol > 0.0)) throw std::invalid_argument("maxent: soft_vi_tol must be positive");
  if (!(l2 >= 0.0)) throw std::invalid_argument("maxent: l2 must be non-negative");
}

std::vector<std::vector<double>> forward_occupancy(const FiniteMdp& mdp, const PolicyTable& policy,
                                                   std::span<const double> start, int horizon) {
  const int n = mdp.n_states();
  const auto& table = mdp.transitions();
  std::vector<std::vector<double>> occupancy;
  if (horizon <= 0) return occupancy;
  occupancy.reserve(horizon);
  occupancy.emplace_back(start.begin(), start.end());
  for (int t = 1; t < horizon; ++t) {
    const auto& prev = occupancy.back();
    std::vector<double> next(n, 0.0);
    for (int s = 0; s < n; ++s) {
      if (prev[s] == 0.0) continue;
      for (int a = 0; a < mdp.n_actions(); ++a) {
        const double mass = prev[s] * policy(s, a);
        if (mass == 0.0) continue;
        auto targets = table.targets(s, a);
        auto probs = table.probs(s, a);
        for (std::size_t j = 0; j < targets.size(); ++j) next[targets[j]] += mass * probs[j];
      }
    }
    occupancy.push_back(std::move(next));
  }
  return occupancy;
}

std::vector<double> empirical_feature_counts(std::span<const Trajectory> dataset, const RewardModel& features) {
  std::vector<double> counts(features.dim(), 0.0);
  if (dataset.empty()) return counts;
  // Per-trajectory partial sums keep the reduction order fixed.
  std::vector<double> partial(features.dim());
  for (const auto& traj : dataset) {
    std::fill(partial.begin(), partial.end(), 0.0);
    for (int s : traj.states) features.accumulate_features(s, 1.0, partial);
    for (int j = 0; j < features.dim(); ++j) counts[j] += partial[j];
  }
  for (double& c : counts) c /= static_cast<double>(dataset.size());
  return counts;
}

namespace {

double inf_norm(std::span<const double> x) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  return m;
}

struct MaxEntModel {
  SoftValueResult soft;
  double log_likelihood;
  std::vector<double> gradient;
};

class MaxEntProblem {
 public:
  MaxEntProblem(const FiniteMdp& mdp, std::span<const Trajectory> dataset, const RewardModel& features,
                const MaxEntConfig& cfg)
      : mdp_(mdp), dataset_(dataset), features_(features), cfg_(cfg) {
    const int n = mdp.n_states();
    for (const auto& traj : dataset) {
      auto report = validate(traj, mdp.graph());
      if (!report.ok()) throw ModelError("maxent_irl: " + report.summary());
      horizon_ = std::max(horizon_, static_cast<int>(traj.states.size()));
    }
    if (cfg.horizon > 0) horizon_ = cfg.horizon;

    start_.assign(n, 0.0);
    for (const auto& traj : dataset) start_[traj.states.front()] += 1.0;
    for (double& p : start_) p /= static_cast<double>(dataset.size());

    survival_.assign(horizon_, 0.0);
    for (const auto& traj : dataset) {
      const int reach = std::min<int>(horizon_, static_cast<int>(traj.states.size()));
      for (int t = 0; t < reach; ++t) survival_[t] += 1.0;
    }
    for (double& w : survival_) w /= static_cast<double>(dataset.size());

    empirical_ = empirical_feature_counts(dataset, features);
  }

  MaxEntModel evaluate(std::span<const double> theta, std::span<const double> warm_start) const {
    const auto rm = features_.with_theta({theta.begin(), theta.end()});
    const auto rewards = rm.state_rewards();
    SoftValueOptions opts;
    opts.tol = cfg_.soft_vi_tol;
    opts.max_iters = cfg_.soft_vi_max_iters;
    opts.initial_values = warm_start;
    auto soft = soft_value_iteration(mdp_, rewards, opts);

    const auto occupancy = forward_occupancy(mdp_, soft.policy, start_, horizon_);
    std::vector<double> expected(features_.dim(), 0.0);
    for (int t = 0; t < horizon_; ++t) {
      if (survival_[t] == 0.0) continue;
      for (int s = 0; s < mdp_.n_states(); ++s)
        if (occupancy[t][s] != 0.0) features_.accumulate_features(s, survival_[t] * occupancy[t][s], expected);
    }

    std::vector<double> gradient(features_.dim());
    double penalty = 0.0;
    for (int j = 0; j < features_.dim(); ++j) {
      gradient[j] = empirical_[j] - expected[j] - cfg_.l2 * theta[j];
      penalty += theta[j] * theta[j];
    }

    double ll = 0.0;
    for (const auto& traj : dataset_) {
      double partial = 0.0;
      for (std::size_t t = 0; t < traj.actions.size(); ++t)
        partial += std::log(soft.policy(traj.states[t], traj.actions[t]));
      ll += partial;
    }
    ll = ll / static_cast<double>(dataset_.size()) - 0.5 * cfg_.l2 * penalty;
    if (!std::isfinite(ll)) throw std::runtime_error("maxent_irl: non-finite likelihood");
    return {std::move(soft), ll, std::move(gradient)};
  }

 private:
  const FiniteMdp& mdp_;
  std::span<const Trajectory> dataset_;
  const RewardModel& features_;
  const MaxEntConfig& cfg_;
  int horizon_ = 0;
  std::vector<double> start_;
  std::vector<double> survival_;
  std::vector<double> empirical_;
};

}  // namespace

RecoveryReport maxent_irl(const FiniteMdp& mdp, std::span<const Trajectory> dataset, const RewardModel& features,
                          const MaxEntConfig& cfg, std::span<const double> theta_reference) {
  cfg.check();
  require_valid(mdp);
  if (dataset.empty()) throw std::invalid_argument("maxent_irl: empty dataset");
  if (features.n_states() != mdp.n_states()) throw ModelError("maxent_irl: feature map covers wrong state count");

  MaxEntProblem problem(mdp, dataset, features, cfg);
  std::vector<double> theta(features.dim(), 0.0);
  MaxEntModel current = problem.evaluate(theta, {});

  RecoveryReport report;
  report.log_likelihood.push_back(current.log_likelihood);
  double step = cfg.learning_rate;
  const double min_step = cfg.learning_rate * cfg.min_step_fraction;

  for (int it = 0; it < cfg.n_gradient_steps; ++it) {
    if (inf_norm(current.gradient) < cfg.gradient_tol) break;
    std::vector<double> candidate(theta.size());
    for (std::size_t j = 0; j < theta.size(); ++j) candidate[j] = theta[j] + step * current.gradient[j];
    MaxEntModel next = problem.evaluate(candidate, current.soft.values);
    if (next.log_likelihood < current.log_likelihood) {
      step *= 0.5;
      if (step < min_step) break;
      continue;
    }
    theta = std::move(candidate);
    current = std::move(next);
    report.log_likelihood.push_back(current.log_likelihood);
    ++report.steps;
  }

  report.gradient_norm = inf_norm(current.gradient);
  report.theta_hat = std::move(theta);
  if (!theta_reference.empty()) {
    const auto rm_hat = features.with_theta(report.theta_hat);
    const auto rm_ref = features.with_theta({theta_reference.begin(), theta_reference.end()});
    report.quality = recovery_quality(rm_hat.state_rewards(), rm_ref.state_rewards());
  }
  return report;
}

RecoveryReport dm_irl(std::span<const LabeledTrajectory> dataset, const RewardModel& features, double gamma,
                      std::span<const double> theta_reference) {
  if (dataset.empty()) throw std::invalid_argument("dm_irl: empty dataset");
  const int k = features.dim();
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(k, k);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(k);
  Eigen::MatrixXd design(static_cast<Eigen::Index>(dataset.size()), k);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto psi = discounted_feature_sum(dataset[i].trajectory, features, gamma);
    Eigen::Map<const Eigen::VectorXd> x(psi.data(), k);
    design.row(static_cast<Eigen::Index>(i)) = x.transpose();
    gram.selfadjointView<Eigen::Lower>().rankUpdate(x);
    rhs += dataset[i].score * x;
  }
  gram.triangularView<Eigen::StrictlyUpper>() = gram.transpose();
  gram.diagonal().array() += 1e-10;

  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  Eigen::VectorXd theta = ldlt.solve(rhs);
  // Iterative refinement against the regularized system.
  theta += ldlt.solve(rhs - gram * theta);

  RecoveryReport report;
  report.theta_hat.assign(theta.data(), theta.data() + k);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  report.design_rank = static_cast<int>(qr.rank());
  report.rank_deficient = report.design_rank < k;

  Eigen::VectorXd gradient = gram * theta - rhs;
  report.gradient_norm = gradient.cwiseAbs().maxCoeff();
  if (!theta_reference.empty()) {
    const auto rm_hat = features.with_theta(report.theta_hat);
    const auto rm_ref = features.with_theta({theta_reference.begin(), theta_reference.end()});
    report.quality = recovery_quality(rm_hat.state_rewards(), rm_ref.state_rewards());
  }
  return report;
}

namespace {

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

bool is_constant(std::span<const double> x) {
  return std::adjacent_find(x.begin(), x.end(), std::not_equal_to<>()) == x.end();
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (is_constant(x) || is_constant(y)) return std::nullopt;
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace

Correlation recovery_quality(std::span<const double> theta_hat, std::span<const double> theta_true) {
  if (theta_hat.size() != theta_true.size()) throw std::invalid_argument("recovery_quality: length mismatch");
  if (theta_hat.size() < 2) throw std::invalid_argument("recovery_quality: need at least two entries");
  Correlation c;
  c.pearson = pearson(theta_hat, theta_true);
  const auto rx = average_ranks(theta_hat);
  const auto ry = average_ranks(theta_true);
  c.spearman = pearson(rx, ry);
  return c;
}

}  // namespace iso
