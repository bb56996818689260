#pragma once

// Text documents for systems, policies and trajectory datasets. Reals are written with
// 17 significant digits so that load followed by save reproduces the input byte for byte.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iso/mdp.hpp"

namespace iso {

struct SystemDocument {
  FiniteMdp mdp;
  RewardModel reward;
  std::uint64_t seed = 0;
};

/// Throws ModelError when the text is malformed or the system breaks an invariant.
/// Probability rows whose sum drifts by more than 1e-9 but at most 1e-6 are renormalized.
SystemDocument parse_system(const std::string& text);
std::string format_system(const FiniteMdp& mdp, const RewardModel& reward, std::uint64_t seed);

SystemDocument load_system(const std::filesystem::path& path);
void save_system(const std::filesystem::path& path, const FiniteMdp& mdp, const RewardModel& reward,
                 std::uint64_t seed);

PolicyTable parse_policy(const std::string& text);
std::string format_policy(const PolicyTable& policy);
PolicyTable load_policy(const std::filesystem::path& path);
void save_policy(const std::filesystem::path& path, const PolicyTable& policy);

/// One JSON object per line: {"states": [...], "actions": [...], "score": x}; score optional.
struct DatasetRecord {
  Trajectory trajectory;
  std::optional<double> score;
};

std::string format_dataset(std::span<const Trajectory> dataset);
std::string format_dataset(std::span<const LabeledTrajectory> dataset);
/// Every record is validated against `graph`; the error names the offending line.
std::vector<DatasetRecord> parse_dataset(const std::string& text, const ConnectivityGraph& graph);

/// printf("%.17g"): the number format used by every document and CSV file.
std::string format_real(double x);

/// Write to a sibling temporary file and rename over the target.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace iso
