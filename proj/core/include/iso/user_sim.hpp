#pragma once

// Simulated users: soft-optimal policies, suboptimal behavior variants and
// trajectory datasets.

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "iso/mdp.hpp"
#include "iso/rng.hpp"

namespace iso {

enum class BehaviorKind { Optimal, MixOfBehaviors, NoiseInBehavior };

std::string to_string(BehaviorKind kind);
/// Accepts "optimal", "mb", "nb" and the full enumerator names.
BehaviorKind parse_behavior_kind(const std::string& text);

struct BehaviorSpec {
  BehaviorKind kind = BehaviorKind::Optimal;
  double nf = 0.0;

  void check() const;
};

struct DatasetSpec {
  int n_trajectories = 15000;
  /// Trajectory lengths count actions and are drawn uniformly from [min_len, max_len].
  int min_len = 30;
  int max_len = 40;
  BehaviorSpec behavior;
  std::uint64_t seed = 0;

  void check() const;
};

class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

struct SoftValueResult {
  PolicyTable policy;
  std::vector<double> values;
  int iterations = 0;
  /// Last ||V_{k+1} - V_k||_inf.
  double residual = 0.0;
};

struct SoftValueOptions {
  double tol = 1e-8;
  int max_iters = 10000;
  /// Optional warm start for V; length n_states.
  std::span<const double> initial_values = {};
};

/// Maximum-entropy (temperature 1) policy pi(a|s) = exp(Q(s,a) - V(s)).
SoftValueResult soft_value_iteration(const FiniteMdp& mdp, std::span<const double> rewards,
                                     const SoftValueOptions& opts = {});
SoftValueResult soft_value_iteration(const FiniteMdp& mdp, const RewardModel& rm,
                                     const SoftValueOptions& opts = {});

/// pi_adv(a|s) = (1 - pi(a|s)) / (|A| - 1).
PolicyTable adversarial_policy(const PolicyTable& pi);

/// Index of the most probable action in a row; ties go to the lowest index.
int argmax_action(std::span<const double> row);

/// Exactly `len` actions; S_0 ~ D0, A_t ~ pi(.|S_t), S_{t+1} ~ T(.|S_t, A_t).
Trajectory sample_trajectory(const FiniteMdp& mdp, const PolicyTable& policy, int len, Rng& rng);

/// Each trajectory i draws from its own stream derived from (spec.seed, i), so the output
/// does not depend on scheduling.
std::vector<Trajectory> sample_dataset(const FiniteMdp& mdp, const PolicyTable& pi_star,
                                       const DatasetSpec& spec);

/// score = theta . psi(trajectory) with the given discount.
std::vector<LabeledTrajectory> label_dataset(std::span<const Trajectory> dataset, const RewardModel& rm_true,
                                             double gamma);

}  // namespace iso
