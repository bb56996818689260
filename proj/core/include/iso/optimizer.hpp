#pragma once

// System-side optimization: the MDP+ in which the system is the agent and the
// (modeled) user is the environment, and the outer loop that alternates reward
// recovery, system optimization and user re-adaptation.

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "iso/irl.hpp"
#include "iso/mdp.hpp"
#include "iso/user_sim.hpp"

namespace iso {

/// States are user (state, action) pairs indexed s * n_actions + a; the actions of a
/// plus-state are the graph successors of that pair; the dynamics are the user policy.
class MdpPlus {
 public:
  MdpPlus(std::shared_ptr<const ConnectivityGraph> graph, PolicyTable user_model, std::vector<double> rewards,
          std::vector<double> d0, double gamma);

  int n_plus_states() const noexcept { return graph_->n_states() * graph_->n_actions(); }
  int n_plus_actions() const noexcept { return graph_->cf(); }
  int n_states() const noexcept { return graph_->n_states(); }
  int n_actions() const noexcept { return graph_->n_actions(); }
  double gamma() const noexcept { return gamma_; }

  const ConnectivityGraph& graph() const noexcept { return *graph_; }
  const PolicyTable& user_model() const noexcept { return user_model_; }
  /// r+((s, a)) = r_hat(s)
  const std::vector<double>& rewards() const noexcept { return rewards_; }
  /// D0+((s, a)) = D0(s) * pi_hat(a | s)
  const std::vector<double>& d0() const noexcept { return d0_; }

  static constexpr int plus_index(int s, int a, int n_actions) noexcept { return s * n_actions + a; }
  std::pair<int, int> decompose(int p) const noexcept { return {p / n_actions(), p % n_actions()}; }

  /// Successor states selectable from plus-state p.
  std::span<const int> plus_actions(int p) const {
    auto [s, a] = decompose(p);
    return graph_->successors(s, a);
  }
  /// Distribution over next plus-states after choosing plus-action j at p, as (index, prob).
  std::vector<std::pair<int, double>> next_distribution(int p, int j) const;

 private:
  std::shared_ptr<const ConnectivityGraph> graph_;
  PolicyTable user_model_;
  std::vector<double> rewards_;
  std::vector<double> d0_;
  double gamma_;
};

/// A system policy over MDP+: per plus-state, probabilities over its plus-actions,
/// laid out exactly like ConnectivityGraph::flat().
using PlusPolicy = std::vector<double>;

struct PlusSolution {
  std::vector<double> values;
  /// Q+(p, j), row-major, cf entries per plus-state.
  std::vector<double> q;
  /// Chosen plus-action index per plus-state.
  std::vector<int> greedy;
  PlusPolicy greedy_policy;
  /// Softmax of Q+ / tau; present when tau > 0.
  std::optional<PlusPolicy> soft_policy;
  int iterations = 0;
  double residual = 0.0;
};

MdpPlus build_mdp_plus(const FiniteMdp& mdp, const PolicyTable& pi_hat, const RewardModel& rm_hat);

/// Hard-max value iteration to ||dV+|| < tol, then exact policy-iteration polishing of
/// the greedy policy. Ties go to the lowest successor state index.
PlusSolution solve_mdp_plus(const MdpPlus& mp, double tol = 1e-9, double tau = 0.0);

/// Exact value of a system policy in MDP+ from a dense linear solve over plus-states.
std::vector<double> plus_policy_value(const MdpPlus& mp, const PlusPolicy& policy);
double expected_plus_value(const MdpPlus& mp, const PlusPolicy& policy);

/// The plus-policy induced by a transition table: pi+(j | (s, a)) = T(succ_j | s, a).
PlusPolicy induced_plus_policy(const FiniteMdp& mdp);

/// T_new = (1 - eta) T_old + eta T_raw with T_raw the greedy (tau = 0) or softmax
/// (tau > 0) plus-policy of the solution.
TransitionTable extract_transition(const PlusSolution& solution, const FiniteMdp& mdp, double eta, double tau);

enum class Recoverer { MaxEnt, DmOracle };

std::string to_string(Recoverer r);
Recoverer parse_recoverer(const std::string& text);

struct IsoConfig {
  int max_outer_iters = 100;
  double tol = 1e-6;
  int patience = 5;
  double tau = 0.0;
  double eta = 1.0;
  Recoverer recoverer = Recoverer::MaxEnt;
  /// The seed field is ignored; per-iteration seeds derive from the loop seed.
  DatasetSpec dataset;
  MaxEntConfig maxent;
  double soft_vi_tol = 1e-8;
  double plus_tol = 1e-9;

  void check() const;
};

struct IterationRecord {
  int iteration = 0;
  /// Expected start value under the true reward and the user's re-adapted policy.
  double expected_value_true = 0.0;
  Correlation quality;
  double elapsed_ms = 0.0;
  std::uint64_t seed = 0;
  /// D0+-weighted plus-values under the recovered reward: the previous system's induced
  /// policy and the extracted one. Not set on the initial evaluation record.
  double plus_value_previous = 0.0;
  double plus_value_extracted = 0.0;
  /// Optimal plus-value reported by the MDP+ solver.
  double plus_value_optimal = 0.0;
  IsoConfig config;
};

/// Component failure inside an outer iteration, tagged with the stage that raised it.
class IsoStageError : public std::runtime_error {
 public:
  IsoStageError(std::string stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

struct IterationOutcome {
  FiniteMdp system;
  IterationRecord record;
  /// Recovered weights and the user model built from them.
  std::vector<double> theta_hat;
  PolicyTable user_model;
};

/// Value of the system for the true user: the user re-adapts (soft-optimal policy for
/// rm_true) and the expected start value is taken with rm_true.
double true_system_value(const FiniteMdp& mdp, const RewardModel& rm_true, double soft_vi_tol = 1e-8);

/// One outer iteration. `seed` drives the dataset sampled in this iteration.
IterationOutcome iso_iteration(const FiniteMdp& mdp, const RewardModel& rm_true, const IsoConfig& cfg,
                               std::uint64_t seed, int iteration = 1);

struct IsoRun {
  std::vector<IterationRecord> trace;
  FiniteMdp final_system;
};

/// Record 0 is the evaluation of the initial system. Stops early once the true value
/// moves less than cfg.tol for cfg.patience consecutive iterations.
IsoRun iso_loop(const FiniteMdp& mdp, const RewardModel& rm_true, const IsoConfig& cfg, std::uint64_t seed);

}  // namespace iso
