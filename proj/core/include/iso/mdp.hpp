#pragma once

// Finite MDP with a fixed connectivity graph, exact policy evaluation and
// trajectory feature sums.

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace iso {

/// Row-sum tolerance for every probability vector in the library.
inline constexpr double kProbTolerance = 1e-9;
/// Rows that drift less than this are renormalized on load; larger drift is rejected.
inline constexpr double kRenormalizeTolerance = 1e-6;

/// Thrown when an input breaks a structural or probabilistic invariant.
class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Frozen support structure: for every (state, action), `cf` distinct successor states.
class ConnectivityGraph {
 public:
  /// `successors` is row-major over (state, action), `cf` entries per row.
  /// Throws ModelError on any shape, range or distinctness violation.
  ConnectivityGraph(int n_states, int n_actions, int cf, std::vector<int> successors);

  int n_states() const noexcept { return n_states_; }
  int n_actions() const noexcept { return n_actions_; }
  int cf() const noexcept { return cf_; }

  std::span<const int> successors(int s, int a) const {
    return {successors_.data() + row_offset(s, a), static_cast<std::size_t>(cf_)};
  }
  bool connects(int s, int a, int next) const;
  const std::vector<int>& flat() const noexcept { return successors_; }

  std::size_t row_offset(int s, int a) const noexcept {
    return (static_cast<std::size_t>(s) * n_actions_ + a) * cf_;
  }

  friend bool operator==(const ConnectivityGraph&, const ConnectivityGraph&) = default;

 private:
  int n_states_;
  int n_actions_;
  int cf_;
  std::vector<int> successors_;
};

/// T(s' | s, a) stored as fixed-width sparse rows. Each row has its own target list so
/// that a table can be checked against a graph; tables built from a graph use its
/// successor lists verbatim.
class TransitionTable {
 public:
  /// Targets taken from `graph`; `probs` laid out like `graph.flat()`.
  TransitionTable(const ConnectivityGraph& graph, std::vector<double> probs);
  TransitionTable(int n_states, int n_actions, int width, std::vector<int> targets,
                  std::vector<double> probs);

  static TransitionTable uniform(const ConnectivityGraph& graph);

  int n_states() const noexcept { return n_states_; }
  int n_actions() const noexcept { return n_actions_; }
  int width() const noexcept { return width_; }

  std::span<const int> targets(int s, int a) const {
    return {targets_.data() + offset(s, a), static_cast<std::size_t>(width_)};
  }
  std::span<const double> probs(int s, int a) const {
    return {probs_.data() + offset(s, a), static_cast<std::size_t>(width_)};
  }
  /// Probability of landing in `next`; 0 when `next` is not a target of the row.
  double prob(int s, int a, int next) const;

  const std::vector<int>& flat_targets() const noexcept { return targets_; }
  const std::vector<double>& flat_probs() const noexcept { return probs_; }

 private:
  std::size_t offset(int s, int a) const noexcept {
    return (static_cast<std::size_t>(s) * n_actions_ + a) * width_;
  }

  int n_states_;
  int n_actions_;
  int width_;
  std::vector<int> targets_;
  std::vector<double> probs_;
};

/// The interactive system: graph, dynamics, start distribution and discount.
class FiniteMdp {
 public:
  /// Checks shapes only; probabilistic invariants are reported by validate().
  FiniteMdp(std::shared_ptr<const ConnectivityGraph> graph, TransitionTable transitions,
            std::vector<double> d0, double gamma);

  /// Same graph, start distribution and discount with new dynamics.
  FiniteMdp with_transitions(TransitionTable transitions) const;

  const ConnectivityGraph& graph() const noexcept { return *graph_; }
  const std::shared_ptr<const ConnectivityGraph>& shared_graph() const noexcept { return graph_; }
  const TransitionTable& transitions() const noexcept { return transitions_; }
  const std::vector<double>& d0() const noexcept { return d0_; }
  double gamma() const noexcept { return gamma_; }
  int n_states() const noexcept { return graph_->n_states(); }
  int n_actions() const noexcept { return graph_->n_actions(); }
  int cf() const noexcept { return graph_->cf(); }

 private:
  std::shared_ptr<const ConnectivityGraph> graph_;
  TransitionTable transitions_;
  std::vector<double> d0_;
  double gamma_;
};

/// Linear reward r(s) = theta . phi(s). One-hot features unless a dense map is given.
class RewardModel {
 public:
  static RewardModel one_hot(std::vector<double> theta);
  /// `features` is row-major n_states x theta.size().
  RewardModel(std::vector<double> theta, std::vector<double> features, int n_states);

  bool is_one_hot() const noexcept { return features_.empty(); }
  int dim() const noexcept { return static_cast<int>(theta_.size()); }
  int n_states() const noexcept { return n_states_; }
  const std::vector<double>& theta() const noexcept { return theta_; }
  /// Empty for one-hot models.
  const std::vector<double>& dense_features() const noexcept { return features_; }

  double feature(int s, int j) const;
  /// out += weight * phi(s)
  void accumulate_features(int s, double weight, std::span<double> out) const;
  std::vector<double> state_rewards() const;

  /// Same feature map, different weights.
  RewardModel with_theta(std::vector<double> theta) const;

 private:
  RewardModel() = default;

  std::vector<double> theta_;
  std::vector<double> features_;
  int n_states_ = 0;
};

/// pi(a | s), row-major over states.
class PolicyTable {
 public:
  PolicyTable(int n_states, int n_actions, std::vector<double> probs);
  static PolicyTable uniform(int n_states, int n_actions);

  int n_states() const noexcept { return n_states_; }
  int n_actions() const noexcept { return n_actions_; }
  std::span<const double> row(int s) const {
    return {probs_.data() + static_cast<std::size_t>(s) * n_actions_,
            static_cast<std::size_t>(n_actions_)};
  }
  double operator()(int s, int a) const { return probs_[static_cast<std::size_t>(s) * n_actions_ + a]; }
  const std::vector<double>& flat() const noexcept { return probs_; }

  friend bool operator==(const PolicyTable&, const PolicyTable&) = default;

 private:
  int n_states_;
  int n_actions_;
  std::vector<double> probs_;
};

/// S_0, A_0, S_1, ..., A_{L-1}, S_L.
struct Trajectory {
  std::vector<int> states;
  std::vector<int> actions;

  std::size_t length() const noexcept { return actions.size(); }
  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

struct LabeledTrajectory {
  Trajectory trajectory;
  double score = 0.0;
};

struct ValidationReport {
  std::vector<std::string> violations;

  bool ok() const noexcept { return violations.empty(); }
  std::string summary() const;
};

ValidationReport validate(const FiniteMdp& mdp);
ValidationReport validate(const PolicyTable& policy);
ValidationReport validate(const Trajectory& trajectory, const ConnectivityGraph& graph);

/// Throws ModelError carrying the report summary when validation fails.
void require_valid(const FiniteMdp& mdp);
void require_valid(const PolicyTable& policy, const FiniteMdp& mdp);

double reward_of(const RewardModel& rm, int s);

struct EvaluationOptions {
  /// Largest state count solved with a dense LU factorization.
  int direct_solve_cap = 1024;
  /// Residual target of the iterative path.
  double iterative_tol = 1e-12;
  int max_iterations = 1'000'000;
};

/// Unique fixed point of v = r + gamma * P_pi v with r(s) = theta . phi(s).
std::vector<double> policy_evaluation(const FiniteMdp& mdp, const PolicyTable& policy,
                                      const RewardModel& rm, const EvaluationOptions& opts = {});
/// Same, with explicit per-state rewards.
std::vector<double> policy_evaluation(const FiniteMdp& mdp, const PolicyTable& policy,
                                      std::span<const double> rewards,
                                      const EvaluationOptions& opts = {});

/// sum_s D0(s) v(s): the system-quality metric.
double expected_start_value(const FiniteMdp& mdp, const PolicyTable& policy, const RewardModel& rm);

/// || v - (r + gamma P_pi v) ||_inf
double bellman_residual(const FiniteMdp& mdp, const PolicyTable& policy,
                        std::span<const double> rewards, std::span<const double> values);

/// psi = sum_t gamma^t phi(S_t) over all states of the trajectory.
std::vector<double> discounted_feature_sum(const Trajectory& trajectory, const RewardModel& rm,
                                           double gamma);

}  // namespace iso
