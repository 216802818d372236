#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tve/montecarlo.hpp"

namespace tve::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

inline constexpr int kSchemaVersion = 1;

std::string_view version();

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes);

// A scenario grid: the cross product of the listed kinds and coefficients,
// everything else shared.
struct GridConfig {
  std::vector<DgdKind> dgd;
  std::vector<double> beta_p;
  std::vector<double> beta_psi;
  std::vector<std::size_t> n;
  ScenarioConfig base;  // dgd and n are overwritten per cell

  std::vector<ScenarioConfig> cells() const;
};

// Throws Error{Config} on unknown keys, wrong types or invalid values.
GridConfig parse_config(const nlohmann::json& j);

// The config with every default filled in, keys sorted.
nlohmann::json canonical_config(const GridConfig& g);
std::string config_digest(const GridConfig& g);

// Per-replication table.
std::vector<std::string> per_rep_header();
void write_per_rep(std::ostream& os, const std::vector<ScenarioResult>& results,
                   bool with_header = true);

struct PerRepRow {
  ScenarioKey key;
  RepResult rep;
};
// Throws Error{Schema} when the header or a field does not match.
std::vector<PerRepRow> read_per_rep(const std::filesystem::path& path);

std::vector<std::string> summary_header();
void write_summary(std::ostream& os, const std::vector<SummaryRow>& rows);

// Entry point of the tve executable. Returns the process exit code.
int run(int argc, const char* const* argv);
// Same, with the arguments after the program name.
int run(const std::vector<std::string>& args);

}  // namespace tve::cli
