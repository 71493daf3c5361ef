#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "phaseforge/backend.hpp"
#include "phaseforge/explorer.hpp"

namespace phaseforge {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitDomain = 2;

struct SuiteKernel {
  KernelCase kernel;
  std::optional<std::filesystem::path> ir;
};

/// Kernel list read from JSON:
///
///   {"kernels": [{"id": "gemm", "model": {...} | "model.json",
///                 "source": "gemm.cl", "ir": "gemm.ir",
///                 "validation_input": "...", "measurement_input": "...",
///                 "reference_outputs": [1.0, ...]}]}
///
/// Exactly one of "model" and "source" is required. Relative paths resolve
/// against the suite file's directory.
struct Suite {
  std::vector<SuiteKernel> kernels;

  static Suite load(const std::filesystem::path& path);
  const SuiteKernel* find(const std::string& id) const;
};

enum class BackendKind { Simulator, Toolchain };

struct CliConfig {
  BackendKind backend = BackendKind::Simulator;
  std::filesystem::path catalog;
  std::filesystem::path toolchain;
  std::filesystem::path suite;
  std::filesystem::path kb;  // defaults to <out_dir>/kb.json
  std::filesystem::path records;  // defaults to <out_dir>/records.csv
  std::filesystem::path out_dir = ".";
  ExplorationConfig exploration;
  double timeout_factor = SimulatorBackend::kDefaultTimeoutFactor;
  double epsilon = 0.01;
  double bucket_width = 0.05;
  std::size_t k = 5;
  std::size_t trials = 1000;
  bool dry_run = false;
  std::optional<std::filesystem::path> ir;
  std::vector<std::string> kernel_ids;  // empty: every suite kernel
};

int cmd_explore(const CliConfig& config, std::ostream& out, std::ostream& err);
int cmd_suggest(const CliConfig& config, const std::string& kernel_id, std::ostream& out, std::ostream& err);
int cmd_experiments(const std::string& subcommand, const CliConfig& config, std::ostream& out, std::ostream& err);

/// Parses arguments and dispatches. Returns 0, 1 or 2.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace phaseforge
