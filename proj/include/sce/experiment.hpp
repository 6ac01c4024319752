// Config-driven experiment runner: builds models, dispatches methods
// (ED / LP / SDP2 / SDP3) over parameter grids, and emits delimited tables
// plus a structured summary.
#pragma once

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sce/kssce.hpp"
#include "sce/model.hpp"
#include "sce/types.hpp"

namespace sce::cli {

using nlohmann::json;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ModelSection {
  std::string family;        // "spinless_chain" | "spinful_lattice"
  std::string profile;       // "NN" | "NNN" | "NNNN" (spinless)
  int L = 0;                 // chain length (spinless)
  std::vector<int> L_grid;   // chain-length sweep (spinless)
  int Lx = 0, Ly = 0;        // grid geometry (spinful)
  std::vector<Real> U_grid;  // one or more interaction strengths
  std::optional<Real> V;        // absolute neighbor interaction (spinful)
  std::optional<Real> V_ratio;  // V = ratio * U (spinful)
  int N = -1;
  Real filling = -1;  // N = round(filling * L) when N is not given
};

struct ExperimentConfig {
  ModelSection model;
  std::vector<std::string> methods;
  kssce::SCFConfig scf;
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  Index ed_cap = 200000;  // largest N-sector dimension ED will attempt
  json raw;
};

struct GridPoint {
  int L = 0, Lx = 0, Ly = 0, N = 0;
  Real U = 0, V = 0;
};

struct ResultRow {
  std::string method;
  GridPoint point;
  std::optional<Real> energy;
  std::optional<Real> diff_vs_ed;
  bool converged = false;
  int scf_iterations = 0;
  long solver_iterations = 0;
  Real wall_seconds = 0;
  VecX v_sce;  // empty for ED
};

struct RunOutput {
  std::vector<ResultRow> rows;
  std::vector<std::string> warnings;
  json summary;
};

/// Problems found in a config document; empty means valid.
std::vector<std::string> validate_config(const json& j);

/// Parse and validate; throws ConfigError naming the offending fields.
ExperimentConfig parse_config(const json& j);

/// Read a config file; parse errors are reported with line numbers.
ExperimentConfig load_config(const std::string& path);

/// Expand the configured grid in deterministic order.
std::vector<GridPoint> grid_points(const ExperimentConfig& cfg);

/// Run every (grid point, method) pair on a worker pool of the given size;
/// rows come back in (point, method) order regardless of completion order.
RunOutput run_points(const ExperimentConfig& cfg, int jobs);

/// Write results.tsv and summary.json under out_dir.
void write_output(const RunOutput& out, const ExperimentConfig& cfg, const std::string& out_dir);

std::string results_header();
std::string format_row(const ExperimentConfig& cfg, const ResultRow& row);

/// Round-trip helper for emitted tables.
std::vector<std::vector<std::string>> parse_table(const std::string& tsv_text);

model::HamiltonianSpec build_model(const ExperimentConfig& cfg, const GridPoint& pt);

}  // namespace sce::cli
