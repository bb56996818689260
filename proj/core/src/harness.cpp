#include "iso/harness.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>
#include <tuple>

#include "iso/persistence.hpp"

namespace iso {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// System sampling

SampledSystem sample_system(int n_states, int n_actions, int cf, double density, double gamma, Rng& rng) {
  if (n_states <= 0 || n_actions <= 0 || cf <= 0) throw std::invalid_argument("sample_system: counts must be positive");
  if (cf > n_states) throw std::invalid_argument("sample_system: cf exceeds n_states");
  if (!(density > 0.0 && density <= 1.0)) throw std::invalid_argument("sample_system: density must lie in (0, 1]");

  std::vector<int> pool(n_states);
  std::vector<int> successors;
  successors.reserve(static_cast<std::size_t>(n_states) * n_actions * cf);
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      std::iota(pool.begin(), pool.end(), 0);
      // Partial Fisher-Yates: the first cf entries are a uniform subset.
      for (int j = 0; j < cf; ++j) {
        const int pick = j + static_cast<int>(rng.below(n_states - j));
        std::swap(pool[j], pool[pick]);
      }
      std::sort(pool.begin(), pool.begin() + cf);
      successors.insert(successors.end(), pool.begin(), pool.begin() + cf);
    }
  }
  auto graph = std::make_shared<const ConnectivityGraph>(n_states, n_actions, cf, std::move(successors));

  auto dirichlet = [&rng](std::span<double> out) {
    double total = 0.0;
    for (double& x : out) total += x = rng.exponential();
    for (double& x : out) x /= total;
  };
  std::vector<double> probs(graph->flat().size());
  for (std::size_t row = 0; row < probs.size(); row += cf) dirichlet(std::span<double>(probs).subspan(row, cf));
  std::vector<double> d0(n_states);
  dirichlet(d0);

  const int rewarding = static_cast<int>(std::lround(density * n_states));
  std::iota(pool.begin(), pool.end(), 0);
  for (int j = 0; j < rewarding; ++j) {
    const int pick = j + static_cast<int>(rng.below(n_states - j));
    std::swap(pool[j], pool[pick]);
  }
  std::vector<double> theta(n_states, 0.0);
  for (int j = 0; j < rewarding; ++j) theta[pool[j]] = 1.0;

  TransitionTable table(*graph, std::move(probs));
  return {FiniteMdp(graph, std::move(table), std::move(d0), gamma), RewardModel::one_hot(std::move(theta))};
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

std::string short_real(double x) { return nlohmann::json(x).dump(); }

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

double to_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw std::invalid_argument("config: '" + key + "' expects a number, got '" + v + "'");
  return x;
}

long long to_integer(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw std::invalid_argument("config: '" + key + "' expects an integer, got '" + v + "'");
  return x;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long x = 0;
  try {
    x = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || v.front() == '-')
    throw std::invalid_argument("config: '" + key + "' expects an unsigned integer, got '" + v + "'");
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config: '" + key + "' expects true or false");
}

}  // namespace

std::string BehaviorCell::key() const {
  return to_string(behavior.kind) + ":" + short_real(behavior.nf) + ":" + to_string(recoverer);
}

BehaviorCell parse_behavior_cell(const std::string& text) {
  const auto parts = split(text, ':');
  if (parts.empty() || parts.size() > 3) throw std::invalid_argument("config: bad behavior entry '" + text + "'");
  BehaviorCell cell;
  if (parts[0] == "dm-oracle" && parts.size() == 1) {
    cell.recoverer = Recoverer::DmOracle;
    return cell;
  }
  cell.behavior.kind = parse_behavior_kind(parts[0]);
  if (parts.size() >= 2) cell.behavior.nf = to_real("behaviors", parts[1]);
  if (parts.size() == 3) cell.recoverer = parse_recoverer(parts[2]);
  cell.behavior.check();
  return cell;
}

std::vector<BehaviorCell> ExperimentConfig::default_behaviors() {
  using K = BehaviorKind;
  return {
      {{K::Optimal, 0.0}, Recoverer::MaxEnt},         {{K::MixOfBehaviors, 0.2}, Recoverer::MaxEnt},
      {{K::MixOfBehaviors, 0.6}, Recoverer::MaxEnt},  {{K::NoiseInBehavior, 0.2}, Recoverer::MaxEnt},
      {{K::NoiseInBehavior, 0.6}, Recoverer::MaxEnt}, {{K::Optimal, 0.0}, Recoverer::DmOracle},
  };
}

ExperimentConfig ExperimentConfig::paper() { return {}; }

ExperimentConfig ExperimentConfig::desk() {
  ExperimentConfig cfg;
  cfg.n_systems = 10;
  cfg.cf = {2};
  cfg.iso.dataset.n_trajectories = 2000;
  cfg.iso.max_outer_iters = 30;
  return cfg;
}

void ExperimentConfig::check() const {
  if (n_systems < 0) throw std::invalid_argument("config: n_systems must be non-negative");
  if (n_states <= 0 || n_actions <= 0) throw std::invalid_argument("config: n_states and n_actions must be positive");
  for (int c : cf)
    if (c <= 0 || c > n_states) throw std::invalid_argument("config: every cf must lie in [1, n_states]");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("config: gamma must lie in [0, 1)");
  if (!(reward_density > 0.0 && reward_density <= 1.0)) throw std::invalid_argument("config: reward_density must lie in (0, 1]");
  if (threads < 1) throw std::invalid_argument("config: threads must be at least 1");
  for (const auto& b : behaviors) b.behavior.check();
  iso.check();
}

ExperimentConfig parse_config(const std::string& text, ExperimentConfig cfg) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));

    if (key == "n_systems") cfg.n_systems = static_cast<int>(to_integer(key, value));
    else if (key == "n_states") cfg.n_states = static_cast<int>(to_integer(key, value));
    else if (key == "n_actions") cfg.n_actions = static_cast<int>(to_integer(key, value));
    else if (key == "cf") {
      cfg.cf.clear();
      for (const auto& part : split(value, ',')) cfg.cf.push_back(static_cast<int>(to_integer(key, part)));
    } else if (key == "gamma") cfg.gamma = to_real(key, value);
    else if (key == "reward_density") cfg.reward_density = to_real(key, value);
    else if (key == "behaviors") {
      cfg.behaviors.clear();
      for (const auto& part : split(value, ',')) cfg.behaviors.push_back(parse_behavior_cell(part));
    } else if (key == "max_outer_iters") cfg.iso.max_outer_iters = static_cast<int>(to_integer(key, value));
    else if (key == "tol") cfg.iso.tol = to_real(key, value);
    else if (key == "patience") cfg.iso.patience = static_cast<int>(to_integer(key, value));
    else if (key == "tau") cfg.iso.tau = to_real(key, value);
    else if (key == "eta") cfg.iso.eta = to_real(key, value);
    else if (key == "soft_vi_tol") cfg.iso.soft_vi_tol = to_real(key, value);
    else if (key == "plus_tol") cfg.iso.plus_tol = to_real(key, value);
    else if (key == "n_trajectories") cfg.iso.dataset.n_trajectories = static_cast<int>(to_integer(key, value));
    else if (key == "min_len") cfg.iso.dataset.min_len = static_cast<int>(to_integer(key, value));
    else if (key == "max_len") cfg.iso.dataset.max_len = static_cast<int>(to_integer(key, value));
    else if (key == "learning_rate") cfg.iso.maxent.learning_rate = to_real(key, value);
    else if (key == "n_gradient_steps") cfg.iso.maxent.n_gradient_steps = static_cast<int>(to_integer(key, value));
    else if (key == "horizon") cfg.iso.maxent.horizon = static_cast<int>(to_integer(key, value));
    else if (key == "l2") cfg.iso.maxent.l2 = to_real(key, value);
    else if (key == "seed") cfg.seed = to_u64(key, value);
    else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "threads") cfg.threads = static_cast<int>(to_integer(key, value));
    else if (key == "record_timing") cfg.record_timing = to_bool(key, value);
    else throw std::invalid_argument("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
  }
  return cfg;
}

std::string format_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  auto join_ints = [](const std::vector<int>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? ", " : "") + std::to_string(xs[i]);
    return out;
  };
  os << "n_systems = " << cfg.n_systems << '\n'
     << "n_states = " << cfg.n_states << '\n'
     << "n_actions = " << cfg.n_actions << '\n'
     << "cf = " << join_ints(cfg.cf) << '\n'
     << "gamma = " << short_real(cfg.gamma) << '\n'
     << "reward_density = " << short_real(cfg.reward_density) << '\n';
  os << "behaviors = ";
  for (std::size_t i = 0; i < cfg.behaviors.size(); ++i) os << (i ? ", " : "") << cfg.behaviors[i].key();
  os << '\n'
     << "max_outer_iters = " << cfg.iso.max_outer_iters << '\n'
     << "tol = " << short_real(cfg.iso.tol) << '\n'
     << "patience = " << cfg.iso.patience << '\n'
     << "tau = " << short_real(cfg.iso.tau) << '\n'
     << "eta = " << short_real(cfg.iso.eta) << '\n'
     << "soft_vi_tol = " << short_real(cfg.iso.soft_vi_tol) << '\n'
     << "plus_tol = " << short_real(cfg.iso.plus_tol) << '\n'
     << "n_trajectories = " << cfg.iso.dataset.n_trajectories << '\n'
     << "min_len = " << cfg.iso.dataset.min_len << '\n'
     << "max_len = " << cfg.iso.dataset.max_len << '\n'
     << "learning_rate = " << short_real(cfg.iso.maxent.learning_rate) << '\n'
     << "n_gradient_steps = " << cfg.iso.maxent.n_gradient_steps << '\n'
     << "horizon = " << cfg.iso.maxent.horizon << '\n'
     << "l2 = " << short_real(cfg.iso.maxent.l2) << '\n'
     << "seed = " << cfg.seed << '\n'
     << "out_dir = " << cfg.out_dir.string() << '\n'
     << "threads = " << cfg.threads << '\n'
     << "record_timing = " << (cfg.record_timing ? "true" : "false") << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Sweep

std::uint64_t system_seed(std::uint64_t master_seed, int system_id) {
  return derive_seed({master_seed, static_cast<std::uint64_t>(system_id)});
}

SampledSystem sample_experiment_system(const ExperimentConfig& cfg, int system_id, int cf) {
  Rng rng(derive_seed({system_seed(cfg.seed, system_id), static_cast<std::uint64_t>(cf)}));
  return sample_system(cfg.n_states, cfg.n_actions, cf, cfg.reward_density, cfg.gamma, rng);
}

namespace {

std::uint64_t cell_seed(std::uint64_t master, int system_id, int cf, const BehaviorCell& cell) {
  std::uint64_t nf_bits = 0;
  std::memcpy(&nf_bits, &cell.behavior.nf, sizeof nf_bits);
  return derive_seed({system_seed(master, system_id), static_cast<std::uint64_t>(cf),
                      static_cast<std::uint64_t>(cell.behavior.kind), nf_bits,
                      static_cast<std::uint64_t>(cell.recoverer)});
}

std::string cell_stem(const CellResult& r) {
  return "cf" + std::to_string(r.cf) + "_" + to_string(r.cell.behavior.kind) + "_nf" + short_real(r.cell.behavior.nf) +
         "_" + to_string(r.cell.recoverer) + "_sys" + std::to_string(r.system_id);
}

std::string optional_real(const std::optional<double>& x) { return x ? format_real(*x) : std::string(); }

void append_iteration_rows(std::ostringstream& os, const CellResult& r, bool record_timing) {
  for (const auto& rec : r.trace) {
    os << r.system_id << ',' << r.cf << ',' << to_string(r.cell.behavior.kind) << ','
       << short_real(r.cell.behavior.nf) << ',' << to_string(r.cell.recoverer) << ',' << rec.iteration << ','
       << format_real(rec.expected_value_true) << ',' << optional_real(rec.quality.pearson) << ','
       << optional_real(rec.quality.spearman) << ',' << (record_timing ? format_real(rec.elapsed_ms) : "0") << ','
       << r.seed << '\n';
  }
}

}  // namespace

int CellResult::plateau_iteration() const {
  if (trace.empty()) return 0;
  const double total = final_value() - initial_value();
  if (total == 0.0) return 0;
  for (const auto& rec : trace) {
    const double gained = rec.expected_value_true - initial_value();
    if (total > 0 ? gained >= 0.9 * total : gained <= 0.9 * total) return rec.iteration;
  }
  return trace.back().iteration;
}

std::vector<const CellResult*> RunSummary::select(int cf, const BehaviorCell& cell) const {
  std::vector<const CellResult*> out;
  for (const auto& r : cells)
    if (r.cf == cf && r.cell == cell && !r.error) out.push_back(&r);
  return out;
}

double quantile(std::vector<double> xs, double q) {
  if (xs.empty()) return std::nan("");
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

double median(std::vector<double> xs) { return quantile(std::move(xs), 0.5); }

std::vector<CurvePoint> aggregate_curves(const std::vector<CellResult>& cells) {
  // Groups keyed by (cf, behavior key); std::map fixes the output order.
  std::map<std::pair<int, std::string>, std::vector<const CellResult*>> groups;
  for (const auto& r : cells)
    if (!r.error && !r.trace.empty()) groups[{r.cf, r.cell.key()}].push_back(&r);

  std::vector<CurvePoint> out;
  for (auto& [key, members] : groups) {
    std::sort(members.begin(), members.end(), [](auto* a, auto* b) { return a->system_id < b->system_id; });
    std::size_t longest = 0;
    for (auto* r : members) longest = std::max(longest, r->trace.size());
    for (std::size_t k = 0; k < longest; ++k) {
      std::vector<double> values;
      for (auto* r : members) values.push_back(r->trace[std::min(k, r->trace.size() - 1)].expected_value_true);
      CurvePoint pt;
      pt.cf = key.first;
      pt.cell = members.front()->cell;
      pt.iteration = static_cast<int>(k);
      pt.n_systems = static_cast<int>(values.size());
      double sum = 0.0;
      for (double v : values) sum += v;
      pt.mean = sum / static_cast<double>(values.size());
      pt.p10 = quantile(values, 0.1);
      pt.p90 = quantile(values, 0.9);
      out.push_back(pt);
    }
  }
  return out;
}

std::string format_iterations_csv(const std::vector<CellResult>& cells, bool record_timing) {
  std::ostringstream os;
  os << kIterationCsvHeader << '\n';
  for (const auto& r : cells)
    if (!r.error) append_iteration_rows(os, r, record_timing);
  return os.str();
}

namespace {
constexpr const char* kSummaryHeader =
    "system_id,cf,behavior,nf,recoverer,initial_value,final_value,improvement,plateau_iteration,iterations,seed,status";
constexpr const char* kCurvesHeader = "cf,behavior,nf,recoverer,iteration,n_systems,mean,p10,p90";
constexpr const char* kReportHeader =
    "behavior,nf,recoverer,cf,n_systems,median_initial,median_final,median_improvement_pct";
}  // namespace

std::string format_summary_csv(const std::vector<CellResult>& cells) {
  std::ostringstream os;
  os << kSummaryHeader << '\n';
  for (const auto& r : cells) {
    os << r.system_id << ',' << r.cf << ',' << to_string(r.cell.behavior.kind) << ',' << short_real(r.cell.behavior.nf)
       << ',' << to_string(r.cell.recoverer) << ',';
    if (r.error || r.trace.empty()) {
      // Commas would break the row; the full message lives in failures.txt.
      os << ",,,,," << r.seed << ",failed\n";
      continue;
    }
    const double improvement =
        r.initial_value() != 0.0 ? (r.final_value() - r.initial_value()) / r.initial_value() : std::nan("");
    os << format_real(r.initial_value()) << ',' << format_real(r.final_value()) << ',' << format_real(improvement)
       << ',' << r.plateau_iteration() << ',' << r.trace.back().iteration << ',' << r.seed << ",ok\n";
  }
  return os.str();
}

std::string format_curves_csv(const std::vector<CurvePoint>& curves) {
  std::ostringstream os;
  os << kCurvesHeader << '\n';
  for (const auto& c : curves) {
    os << c.cf << ',' << to_string(c.cell.behavior.kind) << ',' << short_real(c.cell.behavior.nf) << ','
       << to_string(c.cell.recoverer) << ',' << c.iteration << ',' << c.n_systems << ',' << format_real(c.mean) << ','
       << format_real(c.p10) << ',' << format_real(c.p90) << '\n';
  }
  return os.str();
}

RunSummary run_experiment(const ExperimentConfig& cfg) {
  cfg.check();
  const bool write = !cfg.out_dir.empty();
  if (write) {
    fs::create_directories(cfg.out_dir / "cells");
    fs::create_directories(cfg.out_dir / "systems");
    write_file_atomic(cfg.out_dir / "config.txt", format_config(cfg));
  }

  struct Work {
    int system_index;
    CellResult result;
  };
  std::vector<SampledSystem> systems;
  std::vector<Work> work;
  for (int cf : cfg.cf) {
    for (int i = 0; i < cfg.n_systems; ++i) {
      systems.push_back(sample_experiment_system(cfg, i, cf));
      const int index = static_cast<int>(systems.size()) - 1;
      if (write) {
        save_system(cfg.out_dir / "systems" / ("system_" + std::to_string(i) + "_cf" + std::to_string(cf) + ".json"),
                    systems.back().mdp, systems.back().reward, system_seed(cfg.seed, i));
      }
      for (const auto& cell : cfg.behaviors) {
        CellResult r;
        r.system_id = i;
        r.cf = cf;
        r.cell = cell;
        r.seed = cell_seed(cfg.seed, i, cf, cell);
        work.push_back({index, std::move(r)});
      }
    }
  }

  auto run_cell = [&](Work& w) {
    auto& r = w.result;
    const auto& sys = systems[w.system_index];
    const RewardModel& rm_true = sys.reward;
    IsoConfig iso = cfg.iso;
    iso.dataset.behavior = r.cell.behavior;
    iso.recoverer = r.cell.recoverer;
    try {
      auto run = iso_loop(sys.mdp, rm_true, iso, r.seed);
      r.trace = std::move(run.trace);
      if (write) {
        const auto stem = cell_stem(r);
        std::ostringstream os;
        os << kIterationCsvHeader << '\n';
        append_iteration_rows(os, r, cfg.record_timing);
        write_file_atomic(cfg.out_dir / "cells" / (stem + ".csv"), os.str());
        save_system(cfg.out_dir / "systems" / ("final_" + stem + ".json"), run.final_system, rm_true,
                    system_seed(cfg.seed, r.system_id));
      }
    } catch (const std::exception& e) {
      r.trace.clear();
      r.error = e.what();
    }
  };

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < work.size(); i = next++) run_cell(work[i]);
  };
  const int n_threads = std::min<int>(cfg.threads, static_cast<int>(std::max<std::size_t>(work.size(), 1)));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }

  RunSummary summary;
  summary.cells.reserve(work.size());
  for (auto& w : work) summary.cells.push_back(std::move(w.result));
  summary.curves = aggregate_curves(summary.cells);

  if (write) {
    write_file_atomic(cfg.out_dir / "iterations.csv", format_iterations_csv(summary.cells, cfg.record_timing));
    write_file_atomic(cfg.out_dir / "summary.csv", format_summary_csv(summary.cells));
    write_file_atomic(cfg.out_dir / "curves.csv", format_curves_csv(summary.curves));
    std::ostringstream failures;
    for (const auto& r : summary.cells)
      if (r.error) failures << cell_stem(r) << ": " << *r.error << '\n';
    if (!failures.str().empty()) write_file_atomic(cfg.out_dir / "failures.txt", failures.str());
  }
  return summary;
}

// ---------------------------------------------------------------------------
// Report

namespace {

struct SystemRun {
  int first_iteration = -1;
  double initial = 0.0;
  int last_iteration = -1;
  double final_value = 0.0;
};

using GroupKey = std::tuple<std::string, std::string, std::string, int>;  // behavior, nf, recoverer, cf

void parse_iteration_csv(const std::string& text, std::map<std::tuple<GroupKey, int>, SystemRun>& runs) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  int line_no = 1;
  std::vector<std::pair<std::tuple<GroupKey, int>, std::pair<int, double>>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cols = split(line, ',');
    if (cols.size() != 11) throw std::invalid_argument("line " + std::to_string(line_no) + ": expected 11 columns");
    const int system_id = static_cast<int>(to_integer("system_id", cols[0]));
    const int cf = static_cast<int>(to_integer("cf", cols[1]));
    const int iteration = static_cast<int>(to_integer("iteration", cols[5]));
    const double value = to_real("expected_value_true", cols[6]);
    rows.push_back({{GroupKey{cols[2], cols[3], cols[4], cf}, system_id}, {iteration, value}});
  }
  // Apply only once the whole file parsed.
  for (const auto& [key, point] : rows) {
    auto& run = runs[key];
    if (run.first_iteration < 0 || point.first < run.first_iteration) {
      run.first_iteration = point.first;
      run.initial = point.second;
    }
    if (point.first >= run.last_iteration) {
      run.last_iteration = point.first;
      run.final_value = point.second;
    }
  }
}

}  // namespace

ReportTable report(const fs::path& dir) {
  ReportTable table;
  if (!fs::is_directory(dir)) {
    table.errors.push_back(dir.string() + ": not a directory");
    return table;
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  std::map<std::tuple<GroupKey, int>, SystemRun> runs;
  for (const auto& file : files) {
    std::string text;
    try {
      text = read_file(file);
    } catch (const std::exception& e) {
      table.errors.push_back(file.filename().string() + ": " + e.what());
      continue;
    }
    const auto header = trim(text.substr(0, text.find('\n')));
    if (header == kSummaryHeader || header == kCurvesHeader || header == kReportHeader) continue;
    if (header != kIterationCsvHeader) {
      table.errors.push_back(file.filename().string() + ": unrecognized header");
      continue;
    }
    try {
      parse_iteration_csv(text, runs);
    } catch (const std::exception& e) {
      table.errors.push_back(file.filename().string() + ": " + e.what());
    }
  }

  std::map<GroupKey, std::vector<const SystemRun*>> groups;
  for (const auto& [key, run] : runs) groups[std::get<0>(key)].push_back(&run);
  for (const auto& [key, members] : groups) {
    ReportRow row;
    std::tie(row.behavior, row.nf, row.recoverer, row.cf) = key;
    row.n_systems = static_cast<int>(members.size());
    std::vector<double> initials, finals, improvement;
    for (auto* m : members) {
      initials.push_back(m->initial);
      finals.push_back(m->final_value);
      if (m->initial != 0.0) improvement.push_back(100.0 * (m->final_value - m->initial) / m->initial);
    }
    row.median_initial = median(initials);
    row.median_final = median(finals);
    row.median_improvement_pct = median(improvement);
    table.rows.push_back(row);
  }

  if (!table.rows.empty()) {
    std::ostringstream os;
    os << kReportHeader << '\n';
    for (const auto& r : table.rows)
      os << r.behavior << ',' << r.nf << ',' << r.recoverer << ',' << r.cf << ',' << r.n_systems << ','
         << format_real(r.median_initial) << ',' << format_real(r.median_final) << ','
         << format_real(r.median_improvement_pct) << '\n';
    write_file_atomic(dir / "report.csv", os.str());
  }
  return table;
}

std::string format_report(const ReportTable& table) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-9s %-5s %-10s %4s %8s %14s %14s %12s\n", "behavior", "nf", "recoverer", "cf",
                "systems", "median_init", "median_final", "improvement");
  os << buf;
  for (const auto& r : table.rows) {
    std::snprintf(buf, sizeof buf, "%-9s %-5s %-10s %4d %8d %14.6f %14.6f %11.2f%%\n", r.behavior.c_str(),
                  r.nf.c_str(), r.recoverer.c_str(), r.cf, r.n_systems, r.median_initial, r.median_final,
                  r.median_improvement_pct);
    os << buf;
  }
  for (const auto& e : table.errors) os << "error: " << e << '\n';
  return os.str();
}

}  // namespace iso
