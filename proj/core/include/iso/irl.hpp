#pragma once

// Reward recovery from trajectories.

#include <optional>
#include <span>
#include <vector>

#include "iso/mdp.hpp"

namespace iso {

struct MaxEntConfig {
  double learning_rate = 0.05;
  int n_gradient_steps = 200;
  /// Forward-pass length in states; 0 means the longest trajectory in the dataset.
  int horizon = 0;
  double soft_vi_tol = 1e-8;
  int soft_vi_max_iters = 10000;
  /// L2 penalty on theta.
  double l2 = 0.0;
  double gradient_tol = 1e-5;
  /// Backtracking gives up once the step shrinks below learning_rate * min_step_fraction.
  double min_step_fraction = 1e-6;

  void check() const;
};

struct Correlation {
  std::optional<double> pearson;
  std::optional<double> spearman;
};

struct RecoveryReport {
  std::vector<double> theta_hat;
  double gradient_norm = 0.0;
  /// Filled when a reference theta is supplied.
  Correlation quality;
  int steps = 0;
  /// MaxEnt: average per-trajectory action log-likelihood after each accepted step.
  std::vector<double> log_likelihood;
  /// DM-IRL: design matrix rank and whether it was rank deficient.
  int design_rank = 0;
  bool rank_deficient = false;
};

/// Gradient ascent on the maximum-entropy trajectory likelihood with known dynamics.
/// Feature counts are undiscounted; the forward pass starts from the dataset's empirical
/// start-state frequency and weights step t by the fraction of trajectories that reach it.
RecoveryReport maxent_irl(const FiniteMdp& mdp, std::span<const Trajectory> dataset, const RewardModel& features,
                          const MaxEntConfig& cfg, std::span<const double> theta_reference = {});

/// Expected per-step state visitation of the forward pass, D[t][s], t < horizon.
std::vector<std::vector<double>> forward_occupancy(const FiniteMdp& mdp, const PolicyTable& policy,
                                                   std::span<const double> start, int horizon);

/// Empirical feature count (1/n) sum_i sum_t phi(S_t).
std::vector<double> empirical_feature_counts(std::span<const Trajectory> dataset, const RewardModel& features);

/// Least squares theta . psi(traj) ~ score via ridge-stabilized normal equations.
RecoveryReport dm_irl(std::span<const LabeledTrajectory> dataset, const RewardModel& features, double gamma,
                      std::span<const double> theta_reference = {});

/// Pearson and Spearman (average ranks) correlation; empty when either side is constant.
Correlation recovery_quality(std::span<const double> theta_hat, std::span<const double> theta_true);

}  // namespace iso
