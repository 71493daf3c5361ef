#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "phaseforge/catalog.hpp"

namespace phaseforge {

/// Output of the code generator (PTX text for the GPU flow), identified by
/// its content hash.
struct Artifact {
  std::string content;
  std::string digest;

  static Artifact from_content(std::string content);

  bool operator==(const Artifact&) const = default;
};

struct OptimizerFailure {
  std::string log;
};

struct CodegenFailure {
  std::string log;
};

using CompileOutcome = std::variant<Artifact, OptimizerFailure, CodegenFailure>;

inline const Artifact* artifact_of(const CompileOutcome& c) { return std::get_if<Artifact>(&c); }

enum class ExecStatus { Valid, InvalidOutput, Timeout, Crash, BrokenReport };

std::string_view to_string(ExecStatus s);

struct ExecutionOutcome {
  ExecStatus status = ExecStatus::Crash;
  std::optional<double> wall_time;
  std::optional<std::vector<double>> outputs;
};

enum class InputKind { Validation, Measurement, Random };

std::string_view to_string(InputKind k);

/// Which input a run uses. `seed` selects the generated input for Random
/// runs and is ignored otherwise.
struct RunInput {
  InputKind kind = InputKind::Validation;
  std::uint64_t seed = 0;

  static RunInput validation() { return {InputKind::Validation, 0}; }
  static RunInput measurement() { return {InputKind::Measurement, 0}; }
  static RunInput random(std::uint64_t seed) { return {InputKind::Random, seed}; }
};

// ---------------------------------------------------------------------------
// Simulated kernels

struct Motif {
  std::vector<PassId> passes;
  double multiplier = 1.0;

  bool operator==(const Motif&) const = default;
};

struct FailureRates {
  double p_no_ir = 0.0;
  double p_incorrect = 0.0;
  double p_broken = 0.0;

  bool operator==(const FailureRates&) const = default;
};

/// Synthetic kernel whose run time responds to contiguous pass motifs and
/// whose failures are drawn from a hash of the compiled order.
struct SimKernelModel {
  double baseline_time = 1.0;
  std::vector<Motif> motifs;
  FailureRates failure_rates;
  std::uint64_t seed_salt = 0;

  /// Throws InvalidArgument when an invariant is broken.
  void validate() const;

  static SimKernelModel from_json(std::string_view text);
  static SimKernelModel load(const std::filesystem::path& path);
  std::string to_json() const;

  bool operator==(const SimKernelModel&) const = default;
};

struct KernelCase {
  std::string id;
  std::variant<std::filesystem::path, SimKernelModel> source;
  std::string validation_input;
  std::string measurement_input;
  std::vector<double> reference_outputs;

  const SimKernelModel* model() const { return std::get_if<SimKernelModel>(&source); }
  const std::filesystem::path* source_path() const { return std::get_if<std::filesystem::path>(&source); }
};

struct SimEvaluation {
  CompileOutcome compile;
  std::optional<ExecutionOutcome> execution;  // absent when compile failed
};

/// Canonical text of `order` with no-op passes removed; this is the
/// simulated artifact content.
std::string sim_canonical_text(const PhaseOrder& order, const std::set<PassId>& noops);

/// Deterministic outputs of a correct build of `model` on `input`.
std::vector<double> sim_reference_outputs(const SimKernelModel& model, const RunInput& input);

/// Evaluates one order on a simulated kernel. Pure in its arguments.
SimEvaluation sim_evaluate(const SimKernelModel& model, const PhaseOrder& order,
                           const std::set<PassId>& noops = {});

/// Product of the multipliers of every motif present in the canonical order.
double sim_motif_factor(const SimKernelModel& model, const PhaseOrder& order,
                        const std::set<PassId>& noops = {});

// ---------------------------------------------------------------------------
// Backend interface

class Backend {
 public:
  virtual ~Backend() = default;

  virtual CompileOutcome compile(const KernelCase& kernel, const PhaseOrder& order) = 0;

  virtual ExecutionOutcome execute(const KernelCase& kernel, const Artifact& artifact,
                                   const RunInput& input) = 0;

  /// Outputs of the reference implementation for `input`.
  virtual std::vector<double> reference_outputs(const KernelCase& kernel, const RunInput& input) = 0;

  /// Callers hold this while timing measurement runs.
  std::mutex& measurement_token() noexcept { return measurement_token_; }

 private:
  std::mutex measurement_token_;
};

class SimulatorBackend final : public Backend {
 public:
  static constexpr double kDefaultTimeoutFactor = 4.0;

  explicit SimulatorBackend(std::set<PassId> noops = {}, double timeout_factor = kDefaultTimeoutFactor);

  CompileOutcome compile(const KernelCase& kernel, const PhaseOrder& order) override;
  ExecutionOutcome execute(const KernelCase& kernel, const Artifact& artifact,
                           const RunInput& input) override;
  std::vector<double> reference_outputs(const KernelCase& kernel, const RunInput& input) override;

  const std::set<PassId>& noops() const noexcept { return noops_; }
  double timeout_factor() const noexcept { return timeout_factor_; }

 private:
  std::set<PassId> noops_;
  double timeout_factor_;
};

// ---------------------------------------------------------------------------
// Toolchain driver

/// Command templates for the offline compilation flow
/// (frontend -> optimizer -> linker -> codegen) and the runner.
///
/// Placeholders: {input} {output} in the four compile stages, {passes} in
/// the optimizer, {artifact} {data} in the runner and optionally {kind}.
/// Each required placeholder must appear exactly once.
struct ToolchainSpec {
  std::string frontend_cmd;
  std::string optimizer_cmd;
  std::string linker_cmd;
  std::string codegen_cmd;
  std::string runner_cmd;
  std::filesystem::path work_dir;
  std::chrono::duration<double> exec_timeout{60.0};

  /// Throws ConfigError on a malformed template or non-positive timeout.
  void validate() const;

  static ToolchainSpec from_json(std::string_view text);
  static ToolchainSpec load(const std::filesystem::path& path);
};

/// Replaces each `{name}` in `tmpl` with `values[name]`. Unknown
/// placeholders are left untouched.
std::string substitute(std::string_view tmpl, const std::map<std::string, std::string>& values);

/// POSIX single-quote escaping.
std::string shell_quote(std::string_view s);

struct Report {
  double wall_time = 0.0;
  std::vector<double> outputs;
};

/// Parses the runner report: `TIME <s>`, `OUT <n>`, then n numbers, one per
/// line. Returns nullopt on any deviation.
std::optional<Report> parse_report(std::string_view text);

struct ProcessResult {
  int exit_code = -1;
  bool timed_out = false;
  bool signaled = false;
  std::string out;
  std::string err;
};

/// Runs `command` through /bin/sh in its own process group. When `timeout`
/// elapses the whole group is killed.
ProcessResult run_command(const std::string& command,
                          std::optional<std::chrono::duration<double>> timeout = std::nullopt);

class ToolchainBackend final : public Backend {
 public:
  explicit ToolchainBackend(ToolchainSpec spec);

  CompileOutcome compile(const KernelCase& kernel, const PhaseOrder& order) override;
  ExecutionOutcome execute(const KernelCase& kernel, const Artifact& artifact,
                           const RunInput& input) override;

  /// Validation uses the kernel's stored outputs; generated inputs are
  /// checked against the unoptimized build of the same kernel.
  std::vector<double> reference_outputs(const KernelCase& kernel, const RunInput& input) override;

  const ToolchainSpec& spec() const noexcept { return spec_; }

 private:
  std::filesystem::path job_dir(const KernelCase& kernel);
  std::filesystem::path artifact_path(const KernelCase& kernel, const Artifact& artifact);

  ToolchainSpec spec_;
  std::mutex mutex_;
  std::uint64_t next_job_ = 0;
  std::map<std::string, Artifact> baseline_;  // kernel id -> unoptimized artifact
};

}  // namespace phaseforge
