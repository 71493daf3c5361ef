#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "phaseforge/backend.hpp"
#include "phaseforge/catalog.hpp"
#include "phaseforge/irfeat.hpp"

namespace phaseforge {

inline constexpr std::uint64_t kDefaultSeed = 20170828;

struct ExplorationConfig {
  std::size_t num_sequences = 10000;
  std::size_t max_len = kDefaultMaxLen;
  std::uint64_t seed = kDefaultSeed;
  std::size_t top_k = 10;
  std::size_t final_reps = 30;
  std::size_t final_random_inputs = 30;
  double rtol = 0.01;
  double atol = 1e-6;
  /// Worker threads for compilation and validation runs.
  std::size_t jobs = 1;

  void validate() const;
};

enum class RecordStatus { Valid, InvalidOutput, Timeout, Crash, BrokenReport, NoIr, ReusedFrom };

std::string_view to_string(RecordStatus s);
RecordStatus record_status_from_string(std::string_view s);
RecordStatus to_record_status(ExecStatus s);

/// One candidate evaluation. A ReusedFrom record names the digest of an
/// earlier record with identical output; it carries that record's wall
/// time when the earlier record was valid and no time otherwise.
struct EvaluationRecord {
  std::string kernel_id;
  PhaseOrder order;
  std::optional<std::string> digest;
  RecordStatus status = RecordStatus::Crash;
  std::optional<double> wall_time;
  std::size_t eval_index = 0;

  bool is_valid() const noexcept {
    return status == RecordStatus::Valid || (status == RecordStatus::ReusedFrom && wall_time.has_value());
  }

  bool operator==(const EvaluationRecord&) const = default;
};

/// Valid records ascending by wall time, then failures; ties by eval_index.
void sort_records(std::vector<EvaluationRecord>& records);

/// |cand[i] - ref[i]| <= max(atol, rtol * |ref[i]|) for every i; false on
/// a length mismatch.
bool compare_outputs(std::span<const double> reference, std::span<const double> candidate, double rtol,
                     double atol);

/// Random-sampling exploration of one kernel. Identical compiled artifacts
/// are executed once; later duplicates become ReusedFrom records.
std::vector<EvaluationRecord> explore(const KernelCase& kernel, const ExplorationConfig& config,
                                      const PassCatalog& catalog, Backend& backend);

struct FinalChoice {
  PhaseOrder order;
  double averaged_time = 0.0;
  std::size_t rank = 0;  // position among the finalists, 0-based
};

/// Re-times the top_k valid records final_reps times, checks each against
/// final_random_inputs generated inputs, and returns the fastest survivor.
/// Throws NoValidCandidate when none survives.
FinalChoice finalize(const KernelCase& kernel, const std::vector<EvaluationRecord>& records,
                     const ExplorationConfig& config, Backend& backend);

struct EvaluateOptions {
  double rtol = 0.01;
  double atol = 1e-6;
  std::size_t reps = 1;
};

struct OrderEvaluation {
  RecordStatus status = RecordStatus::Crash;
  std::optional<double> time;  // mean measurement time when valid
  std::optional<std::string> digest;

  bool valid() const noexcept { return status == RecordStatus::Valid; }
};

/// Compile, validate on the validation input, then time on the measurement
/// input `reps` times.
OrderEvaluation evaluate_order(const KernelCase& kernel, const PhaseOrder& order, Backend& backend,
                               const EvaluateOptions& options = {});

/// Same as evaluate_order for an already compiled artifact.
OrderEvaluation evaluate_artifact(const KernelCase& kernel, const Artifact& artifact, Backend& backend,
                                  const EvaluateOptions& options = {});

struct ReduceOptions {
  double epsilon = 0.01;
  EvaluateOptions evaluate;
};

/// Greedy single-deletion to fixpoint. A deletion is kept when the shorter
/// order still validates and runs within (1 + epsilon) of the input order.
PhaseOrder reduce_order(const KernelCase& kernel, const PhaseOrder& order, Backend& backend,
                        const ReduceOptions& options = {});

struct KbEntry {
  PhaseOrder best_order;
  double best_time = 0.0;
  double baseline_time = 0.0;
  FeatureVector feature_vector;

  bool operator==(const KbEntry&) const = default;
};

class KnowledgeBase {
 public:
  /// Throws InvalidArgument unless best_time <= baseline_time or the order
  /// is empty.
  void set(const std::string& kernel_id, KbEntry entry);

  const std::map<std::string, KbEntry>& entries() const noexcept { return entries_; }
  const KbEntry* find(std::string_view kernel_id) const;
  bool empty() const noexcept { return entries_.empty(); }

  std::string to_json() const;
  static KnowledgeBase from_json(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static KnowledgeBase load(const std::filesystem::path& path);

  bool operator==(const KnowledgeBase&) const = default;

 private:
  std::map<std::string, KbEntry> entries_;
};

struct CellResult {
  bool failed = false;
  double ratio = 0.0;  // raw best_time(column) / time(column with row's order)

  bool operator==(const CellResult&) const = default;
};

/// Rows are sequence owners, columns the kernels the sequences are applied to.
struct CrossMatrix {
  std::vector<std::string> kernels;
  std::vector<std::vector<CellResult>> cells;

  bool operator==(const CrossMatrix&) const = default;
};

CrossMatrix cross_apply(const std::vector<KernelCase>& kernels, const KnowledgeBase& kb, Backend& backend,
                        const EvaluateOptions& options = {});

}  // namespace phaseforge
