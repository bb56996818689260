#include "iso/persistence.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace iso {

using nlohmann::json;

namespace {

constexpr const char* kSystemFormat = "iso-system/1";
constexpr const char* kPolicyFormat = "iso-policy/1";

template <typename Range, typename F>
void write_list(std::ostringstream& os, const Range& items, F&& emit) {
  os << '[';
  bool first = true;
  for (const auto& item : items) {
    if (!first) os << ", ";
    first = false;
    emit(item);
  }
  os << ']';
}

void write_reals(std::ostringstream& os, std::span<const double> xs) {
  write_list(os, xs, [&](double x) { os << format_real(x); });
}

void write_ints(std::ostringstream& os, std::span<const int> xs) {
  write_list(os, xs, [&](int x) { os << x; });
}

const json& field(const json& doc, const char* name) {
  auto it = doc.find(name);
  if (it == doc.end()) throw ModelError(std::string("document: missing field '") + name + "'");
  return *it;
}

int positive_int(const json& doc, const char* name) {
  const auto& v = field(doc, name);
  if (!v.is_number_integer() || v.get<long long>() <= 0)
    throw ModelError(std::string("document: field '") + name + "' must be a positive integer");
  return v.get<int>();
}

std::vector<double> reals(const json& v, std::size_t expected, const std::string& what) {
  if (!v.is_array() || v.size() != expected) throw ModelError("document: " + what + " has wrong length");
  std::vector<double> out;
  out.reserve(expected);
  for (const auto& x : v) {
    if (!x.is_number()) throw ModelError("document: " + what + " contains a non-number");
    out.push_back(x.get<double>());
  }
  return out;
}

// Rejects rows outside the renormalization window; rescales rows between the two tolerances.
void normalize_row(std::span<double> row, const std::string& what) {
  double sum = 0.0;
  for (double p : row) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw ModelError("document: " + what + " has a negative or non-finite entry");
    sum += p;
  }
  const double drift = std::abs(sum - 1.0);
  if (drift > kRenormalizeTolerance) throw ModelError("document: " + what + " is not a probability vector");
  if (drift > kProbTolerance)
    for (double& p : row) p /= sum;
}

json parse_json(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ModelError(std::string("document: malformed JSON: ") + e.what());
  }
}

}  // namespace

std::string format_real(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string format_system(const FiniteMdp& mdp, const RewardModel& reward, std::uint64_t seed) {
  require_valid(mdp);
  const auto& g = mdp.graph();
  const int n = g.n_states();
  const int m = g.n_actions();
  if (reward.n_states() != n) throw ModelError("format_system: reward model covers wrong state count");

  std::ostringstream os;
  os << "{\n";
  os << "  \"format\": \"" << kSystemFormat << "\",\n";
  os << "  \"n_states\": " << n << ",\n";
  os << "  \"n_actions\": " << m << ",\n";
  os << "  \"cf\": " << g.cf() << ",\n";
  os << "  \"gamma\": " << format_real(mdp.gamma()) << ",\n";
  os << "  \"seed\": " << seed << ",\n";

  os << "  \"successors\": [\n";
  for (int s = 0; s < n; ++s) {
    os << "    [";
    for (int a = 0; a < m; ++a) {
      if (a) os << ", ";
      write_ints(os, g.successors(s, a));
    }
    os << (s + 1 < n ? "],\n" : "]\n");
  }
  os << "  ],\n";

  os << "  \"transitions\": [\n";
  std::vector<double> row(g.cf());
  for (int s = 0; s < n; ++s) {
    os << "    [";
    for (int a = 0; a < m; ++a) {
      if (a) os << ", ";
      auto succ = g.successors(s, a);
      for (int j = 0; j < g.cf(); ++j) row[j] = mdp.transitions().prob(s, a, succ[j]);
      write_reals(os, row);
    }
    os << (s + 1 < n ? "],\n" : "]\n");
  }
  os << "  ],\n";

  os << "  \"d0\": ";
  write_reals(os, mdp.d0());
  os << ",\n  \"theta\": ";
  write_reals(os, reward.theta());
  os << ",\n  \"features\": ";
  if (reward.is_one_hot()) {
    os << "\"one-hot\"\n";
  } else {
    os << "[\n";
    const auto k = static_cast<std::size_t>(reward.dim());
    for (int s = 0; s < n; ++s) {
      os << "    ";
      write_reals(os, std::span<const double>(reward.dense_features()).subspan(s * k, k));
      os << (s + 1 < n ? ",\n" : "\n");
    }
    os << "  ]\n";
  }
  os << "}\n";
  return os.str();
}

SystemDocument parse_system(const std::string& text) {
  const json doc = parse_json(text);
  if (!doc.is_object()) throw ModelError("document: expected an object");
  if (auto it = doc.find("format"); it != doc.end() && *it != kSystemFormat)
    throw ModelError("document: unsupported system format");

  const int n = positive_int(doc, "n_states");
  const int m = positive_int(doc, "n_actions");
  const int cf = positive_int(doc, "cf");
  const double gamma = field(doc, "gamma").get<double>();
  std::uint64_t seed = 0;
  if (auto it = doc.find("seed"); it != doc.end()) seed = it->get<std::uint64_t>();

  const auto& succ_doc = field(doc, "successors");
  const auto& trans_doc = field(doc, "transitions");
  if (!succ_doc.is_array() || succ_doc.size() != static_cast<std::size_t>(n) || !trans_doc.is_array() ||
      trans_doc.size() != static_cast<std::size_t>(n))
    throw ModelError("document: successors/transitions must list every state");

  std::vector<int> successors;
  std::vector<double> probs;
  successors.reserve(static_cast<std::size_t>(n) * m * cf);
  probs.reserve(successors.capacity());
  for (int s = 0; s < n; ++s) {
    if (!succ_doc[s].is_array() || succ_doc[s].size() != static_cast<std::size_t>(m) || !trans_doc[s].is_array() ||
        trans_doc[s].size() != static_cast<std::size_t>(m))
      throw ModelError("document: state " + std::to_string(s) + " must list every action");
    for (int a = 0; a < m; ++a) {
      const std::string where = "row (s=" + std::to_string(s) + ", a=" + std::to_string(a) + ")";
      const auto& srow = succ_doc[s][a];
      if (!srow.is_array() || srow.size() != static_cast<std::size_t>(cf))
        throw ModelError("document: successor " + where + " must have cf entries");
      for (const auto& x : srow) {
        if (!x.is_number_integer()) throw ModelError("document: successor " + where + " has a non-integer entry");
        successors.push_back(x.get<int>());
      }
      auto row = reals(trans_doc[s][a], cf, "transition " + where);
      normalize_row(row, "transition " + where);
      probs.insert(probs.end(), row.begin(), row.end());
    }
  }

  auto d0 = reals(field(doc, "d0"), n, "d0");
  normalize_row(d0, "d0");

  auto graph = std::make_shared<const ConnectivityGraph>(n, m, cf, std::move(successors));
  TransitionTable table(*graph, std::move(probs));
  FiniteMdp mdp(graph, std::move(table), std::move(d0), gamma);
  require_valid(mdp);

  const auto& theta_doc = field(doc, "theta");
  if (!theta_doc.is_array() || theta_doc.empty()) throw ModelError("document: theta must be a non-empty list");
  auto theta = reals(theta_doc, theta_doc.size(), "theta");

  const auto& features = field(doc, "features");
  if (features.is_string()) {
    if (features != "one-hot") throw ModelError("document: unknown feature map descriptor");
    if (theta.size() != static_cast<std::size_t>(n)) throw ModelError("document: one-hot theta must have n_states entries");
    return {std::move(mdp), RewardModel::one_hot(std::move(theta)), seed};
  }
  if (!features.is_array() || features.size() != static_cast<std::size_t>(n))
    throw ModelError("document: feature matrix must have one row per state");
  std::vector<double> dense;
  dense.reserve(static_cast<std::size_t>(n) * theta.size());
  for (const auto& row : features) {
    auto r = reals(row, theta.size(), "feature row");
    dense.insert(dense.end(), r.begin(), r.end());
  }
  return {std::move(mdp), RewardModel(std::move(theta), std::move(dense), n), seed};
}

std::string format_policy(const PolicyTable& policy) {
  std::ostringstream os;
  os << "{\n  \"format\": \"" << kPolicyFormat << "\",\n";
  os << "  \"n_states\": " << policy.n_states() << ",\n";
  os << "  \"n_actions\": " << policy.n_actions() << ",\n";
  os << "  \"probs\": [\n";
  for (int s = 0; s < policy.n_states(); ++s) {
    os << "    ";
    write_reals(os, policy.row(s));
    os << (s + 1 < policy.n_states() ? ",\n" : "\n");
  }
  os << "  ]\n}\n";
  return os.str();
}

PolicyTable parse_policy(const std::string& text) {
  const json doc = parse_json(text);
  if (!doc.is_object()) throw ModelError("document: expected an object");
  if (auto it = doc.find("format"); it != doc.end() && *it != kPolicyFormat)
    throw ModelError("document: unsupported policy format");
  const int n = positive_int(doc, "n_states");
  const int m = positive_int(doc, "n_actions");
  const auto& rows = field(doc, "probs");
  if (!rows.is_array() || rows.size() != static_cast<std::size_t>(n))
    throw ModelError("document: policy must list every state");
  std::vector<double> probs;
  probs.reserve(static_cast<std::size_t>(n) * m);
  for (int s = 0; s < n; ++s) {
    auto row = reals(rows[s], m, "policy row " + std::to_string(s));
    normalize_row(row, "policy row " + std::to_string(s));
    probs.insert(probs.end(), row.begin(), row.end());
  }
  return {n, m, std::move(probs)};
}

namespace {

void write_trajectory(std::ostringstream& os, const Trajectory& t) {
  os << "{\"states\": ";
  write_ints(os, t.states);
  os << ", \"actions\": ";
  write_ints(os, t.actions);
}

}  // namespace

std::string format_dataset(std::span<const Trajectory> dataset) {
  std::ostringstream os;
  for (const auto& t : dataset) {
    write_trajectory(os, t);
    os << "}\n";
  }
  return os.str();
}

std::string format_dataset(std::span<const LabeledTrajectory> dataset) {
  std::ostringstream os;
  for (const auto& t : dataset) {
    write_trajectory(os, t.trajectory);
    os << ", \"score\": " << format_real(t.score) << "}\n";
  }
  return os.str();
}

std::vector<DatasetRecord> parse_dataset(const std::string& text, const ConnectivityGraph& graph) {
  std::vector<DatasetRecord> out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "dataset line " + std::to_string(line_no);
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error&) {
      throw ModelError(where + ": malformed JSON");
    }
    if (!rec.is_object() || !rec.contains("states") || !rec.contains("actions"))
      throw ModelError(where + ": expected states and actions");
    DatasetRecord r;
    try {
      r.trajectory.states = rec["states"].get<std::vector<int>>();
      r.trajectory.actions = rec["actions"].get<std::vector<int>>();
      if (rec.contains("score")) r.score = rec["score"].get<double>();
    } catch (const json::exception&) {
      throw ModelError(where + ": wrong field types");
    }
    auto report = validate(r.trajectory, graph);
    if (!report.ok()) throw ModelError(where + ": " + report.summary());
    out.push_back(std::move(r));
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << contents;
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

SystemDocument load_system(const std::filesystem::path& path) { return parse_system(read_file(path)); }

void save_system(const std::filesystem::path& path, const FiniteMdp& mdp, const RewardModel& reward,
                 std::uint64_t seed) {
  write_file_atomic(path, format_system(mdp, reward, seed));
}

PolicyTable load_policy(const std::filesystem::path& path) { return parse_policy(read_file(path)); }

void save_policy(const std::filesystem::path& path, const PolicyTable& policy) {
  write_file_atomic(path, format_policy(policy));
}

}  // namespace iso
