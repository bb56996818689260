#include "iso/mdp.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace iso {

namespace {

std::string row_name(int s, int a) {
  std::ostringstream os;
  os << "(s=" << s << ", a=" << a << ")";
  return os.str();
}

void check_vector_sum(std::span<const double> probs, const std::string& what,
                      std::vector<std::string>& out) {
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) {
      out.push_back(what + ": negative or non-finite entry");
      return;
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > kProbTolerance) {
    std::ostringstream os;
    os.precision(17);
    os << what << ": row sums to " << sum;
    out.push_back(os.str());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// ConnectivityGraph

ConnectivityGraph::ConnectivityGraph(int n_states, int n_actions, int cf, std::vector<int> successors)
    : n_states_(n_states), n_actions_(n_actions), cf_(cf), successors_(std::move(successors)) {
  if (n_states <= 0 || n_actions <= 0 || cf <= 0)
    throw ModelError("connectivity graph: counts must be positive");
  if (cf > n_states) throw ModelError("connectivity graph: cf exceeds n_states");
  if (successors_.size() != static_cast<std::size_t>(n_states) * n_actions * cf)
    throw ModelError("connectivity graph: successor table has wrong size");
  std::vector<int> scratch(cf);
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      auto row = this->successors(s, a);
      for (int next : row) {
        if (next < 0 || next >= n_states)
          throw ModelError("connectivity graph: successor out of range at " + row_name(s, a));
      }
      std::copy(row.begin(), row.end(), scratch.begin());
      std::sort(scratch.begin(), scratch.end());
      if (std::adjacent_find(scratch.begin(), scratch.end()) != scratch.end())
        throw ModelError("connectivity graph: duplicate successor at " + row_name(s, a));
    }
  }
}

bool ConnectivityGraph::connects(int s, int a, int next) const {
  auto row = successors(s, a);
  return std::find(row.begin(), row.end(), next) != row.end();
}

// ---------------------------------------------------------------------------
// TransitionTable

TransitionTable::TransitionTable(const ConnectivityGraph& graph, std::vector<double> probs)
    : TransitionTable(graph.n_states(), graph.n_actions(), graph.cf(), graph.flat(), std::move(probs)) {}

TransitionTable::TransitionTable(int n_states, int n_actions, int width, std::vector<int> targets,
                                 std::vector<double> probs)
    : n_states_(n_states),
      n_actions_(n_actions),
      width_(width),
      targets_(std::move(targets)),
      probs_(std::move(probs)) {
  const auto expected = static_cast<std::size_t>(n_states) * n_actions * width;
  if (targets_.size() != expected || probs_.size() != expected)
    throw ModelError("transition table: wrong number of entries");
}

TransitionTable TransitionTable::uniform(const ConnectivityGraph& graph) {
  return {graph, std::vector<double>(graph.flat().size(), 1.0 / graph.cf())};
}

double TransitionTable::prob(int s, int a, int next) const {
  auto t = targets(s, a);
  auto p = probs(s, a);
  double total = 0.0;
  for (std::size_t j = 0; j < t.size(); ++j)
    if (t[j] == next) total += p[j];
  return total;
}

// ---------------------------------------------------------------------------
// FiniteMdp

FiniteMdp::FiniteMdp(std::shared_ptr<const ConnectivityGraph> graph, TransitionTable transitions,
                     std::vector<double> d0, double gamma)
    : graph_(std::move(graph)), transitions_(std::move(transitions)), d0_(std::move(d0)), gamma_(gamma) {
  if (!graph_) throw ModelError("mdp: missing connectivity graph");
  if (transitions_.n_states() != graph_->n_states() || transitions_.n_actions() != graph_->n_actions())
    throw ModelError("mdp: transition table shape does not match graph");
  if (d0_.size() != static_cast<std::size_t>(graph_->n_states()))
    throw ModelError("mdp: initial distribution has wrong length");
}

FiniteMdp FiniteMdp::with_transitions(TransitionTable transitions) const {
  return {graph_, std::move(transitions), d0_, gamma_};
}

// ---------------------------------------------------------------------------
// RewardModel

RewardModel RewardModel::one_hot(std::vector<double> theta) {
  RewardModel rm;
  rm.n_states_ = static_cast<int>(theta.size());
  rm.theta_ = std::move(theta);
  return rm;
}

RewardModel::RewardModel(std::vector<double> theta, std::vector<double> features, int n_states)
    : theta_(std::move(theta)), features_(std::move(features)), n_states_(n_states) {
  if (theta_.empty()) throw ModelError("reward model: empty weight vector");
  if (features_.size() != static_cast<std::size_t>(n_states) * theta_.size())
    throw ModelError("reward model: feature matrix has wrong size");
}

double RewardModel::feature(int s, int j) const {
  if (is_one_hot()) return s == j ? 1.0 : 0.0;
  return features_[static_cast<std::size_t>(s) * theta_.size() + j];
}

void RewardModel::accumulate_features(int s, double weight, std::span<double> out) const {
  if (is_one_hot()) {
    out[s] += weight;
    return;
  }
  const double* phi = features_.data() + static_cast<std::size_t>(s) * theta_.size();
  for (std::size_t j = 0; j < theta_.size(); ++j) out[j] += weight * phi[j];
}

std::vector<double> RewardModel::state_rewards() const {
  if (is_one_hot()) return theta_;
  std::vector<double> r(n_states_);
  for (int s = 0; s < n_states_; ++s) r[s] = reward_of(*this, s);
  return r;
}

RewardModel RewardModel::with_theta(std::vector<double> theta) const {
  if (theta.size() != theta_.size()) throw ModelError("reward model: weight dimension mismatch");
  RewardModel rm = *this;
  rm.theta_ = std::move(theta);
  return rm;
}

double reward_of(const RewardModel& rm, int s) {
  if (s < 0 || s >= rm.n_states()) throw std::out_of_range("reward_of: state index out of range");
  if (rm.is_one_hot()) return rm.theta()[s];
  double r = 0.0;
  for (int j = 0; j < rm.dim(); ++j) r += rm.theta()[j] * rm.feature(s, j);
  return r;
}

// ---------------------------------------------------------------------------
// PolicyTable

PolicyTable::PolicyTable(int n_states, int n_actions, std::vector<double> probs)
    : n_states_(n_states), n_actions_(n_actions), probs_(std::move(probs)) {
  if (n_states <= 0 || n_actions <= 0) throw ModelError("policy: counts must be positive");
  if (probs_.size() != static_cast<std::size_t>(n_states) * n_actions)
    throw ModelError("policy: wrong number of entries");
}

PolicyTable PolicyTable::uniform(int n_states, int n_actions) {
  return {n_states, n_actions,
          std::vector<double>(static_cast<std::size_t>(n_states) * n_actions, 1.0 / n_actions)};
}

// ---------------------------------------------------------------------------
// Validation

std::string ValidationReport::summary() const {
  if (ok()) return "pass";
  std::string out;
  for (const auto& v : violations) {
    if (!out.empty()) out += "; ";
    out += v;
  }
  return out;
}

ValidationReport validate(const FiniteMdp& mdp) {
  ValidationReport report;
  auto& out = report.violations;
  if (!(mdp.gamma() >= 0.0 && mdp.gamma() < 1.0)) out.push_back("gamma out of range [0, 1)");

  const auto& graph = mdp.graph();
  const auto& table = mdp.transitions();
  for (int s = 0; s < mdp.n_states(); ++s) {
    for (int a = 0; a < mdp.n_actions(); ++a) {
      auto targets = table.targets(s, a);
      auto probs = table.probs(s, a);
      check_vector_sum(probs, "transition row " + row_name(s, a), out);
      for (std::size_t j = 0; j < targets.size(); ++j) {
        if (probs[j] > 0.0 && !graph.connects(s, a, targets[j])) {
          out.push_back("transition row " + row_name(s, a) + ": mass on non-successor state " +
                        std::to_string(targets[j]));
        }
      }
    }
  }
  check_vector_sum(mdp.d0(), "initial distribution", out);
  return report;
}

ValidationReport validate(const PolicyTable& policy) {
  ValidationReport report;
  for (int s = 0; s < policy.n_states(); ++s)
    check_vector_sum(policy.row(s), "policy row s=" + std::to_string(s), report.violations);
  return report;
}

ValidationReport validate(const Trajectory& trajectory, const ConnectivityGraph& graph) {
  ValidationReport report;
  auto& out = report.violations;
  if (trajectory.states.size() != trajectory.actions.size() + 1) {
    out.push_back("trajectory: |states| must equal |actions| + 1");
    return report;
  }
  for (int s : trajectory.states)
    if (s < 0 || s >= graph.n_states()) {
      out.push_back("trajectory: state index out of range");
      return report;
    }
  for (std::size_t t = 0; t < trajectory.actions.size(); ++t) {
    const int a = trajectory.actions[t];
    if (a < 0 || a >= graph.n_actions()) {
      out.push_back("trajectory: action index out of range at step " + std::to_string(t));
      return report;
    }
    if (!graph.connects(trajectory.states[t], a, trajectory.states[t + 1]))
      out.push_back("trajectory: step " + std::to_string(t) + " leaves the connectivity graph");
  }
  return report;
}

void require_valid(const FiniteMdp& mdp) {
  auto report = validate(mdp);
  if (!report.ok()) throw ModelError("invalid mdp: " + report.summary());
}

void require_valid(const PolicyTable& policy, const FiniteMdp& mdp) {
  if (policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions())
    throw ModelError("policy shape does not match mdp");
  auto report = validate(policy);
  if (!report.ok()) throw ModelError("invalid policy: " + report.summary());
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

// (P_pi v)(s) = sum_a pi(a|s) sum_j T_j(s,a) v(target_j)
double expected_next(const FiniteMdp& mdp, const PolicyTable& policy, std::span<const double> v, int s) {
  const auto& table = mdp.transitions();
  double total = 0.0;
  for (int a = 0; a < mdp.n_actions(); ++a) {
    const double pa = policy(s, a);
    if (pa == 0.0) continue;
    auto targets = table.targets(s, a);
    auto probs = table.probs(s, a);
    double inner = 0.0;
    for (std::size_t j = 0; j < targets.size(); ++j) inner += probs[j] * v[targets[j]];
    total += pa * inner;
  }
  return total;
}

}  // namespace

double bellman_residual(const FiniteMdp& mdp, const PolicyTable& policy, std::span<const double> rewards,
                        std::span<const double> values) {
  double worst = 0.0;
  for (int s = 0; s < mdp.n_states(); ++s) {
    const double backed = rewards[s] + mdp.gamma() * expected_next(mdp, policy, values, s);
    worst = std::max(worst, std::abs(values[s] - backed));
  }
  return worst;
}

std::vector<double> policy_evaluation(const FiniteMdp& mdp, const PolicyTable& policy,
                                      std::span<const double> rewards, const EvaluationOptions& opts) {
  require_valid(mdp);
  require_valid(policy, mdp);
  const int n = mdp.n_states();
  if (rewards.size() != static_cast<std::size_t>(n)) throw ModelError("policy_evaluation: reward length mismatch");

  const double gamma = mdp.gamma();
  std::vector<double> v(n, 0.0);

  if (n <= opts.direct_solve_cap) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n);
    const auto& table = mdp.transitions();
    for (int s = 0; s < n; ++s) {
      for (int act = 0; act < mdp.n_actions(); ++act) {
        const double pa = policy(s, act);
        if (pa == 0.0) continue;
        auto targets = table.targets(s, act);
        auto probs = table.probs(s, act);
        for (std::size_t j = 0; j < targets.size(); ++j) a(s, targets[j]) -= gamma * pa * probs[j];
      }
    }
    Eigen::Map<const Eigen::VectorXd> r(rewards.data(), n);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
    Eigen::VectorXd x = lu.solve(r);
    // One step of iterative refinement.
    x += lu.solve(r - a * x);
    std::copy(x.data(), x.data() + n, v.begin());
    return v;
  }

  // Gauss-Seidel sweeps; contraction factor gamma.
  for (int it = 0; it < opts.max_iterations; ++it) {
    for (int s = 0; s < n; ++s) v[s] = rewards[s] + gamma * expected_next(mdp, policy, v, s);
    if (bellman_residual(mdp, policy, rewards, v) < opts.iterative_tol) return v;
  }
  throw std::runtime_error("policy_evaluation: iterative solve did not converge");
}

std::vector<double> policy_evaluation(const FiniteMdp& mdp, const PolicyTable& policy, const RewardModel& rm,
                                      const EvaluationOptions& opts) {
  if (rm.n_states() != mdp.n_states()) throw ModelError("policy_evaluation: reward model covers wrong state count");
  const auto rewards = rm.state_rewards();
  return policy_evaluation(mdp, policy, rewards, opts);
}

double expected_start_value(const FiniteMdp& mdp, const PolicyTable& policy, const RewardModel& rm) {
  const auto v = policy_evaluation(mdp, policy, rm);
  double total = 0.0;
  for (int s = 0; s < mdp.n_states(); ++s) total += mdp.d0()[s] * v[s];
  return total;
}

std::vector<double> discounted_feature_sum(const Trajectory& trajectory, const RewardModel& rm, double gamma) {
  if (trajectory.states.empty()) throw ModelError("discounted_feature_sum: empty trajectory");
  std::vector<double> psi(rm.dim(), 0.0);
  double weight = 1.0;
  for (int s : trajectory.states) {
    if (s < 0 || s >= rm.n_states()) throw std::out_of_range("discounted_feature_sum: state out of range");
    rm.accumulate_features(s, weight, psi);
    weight *= gamma;
  }
  return psi;
}

}  // namespace iso
