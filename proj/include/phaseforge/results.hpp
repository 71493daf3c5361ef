#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "phaseforge/advisor.hpp"
#include "phaseforge/explorer.hpp"

namespace phaseforge {

/// exp(mean(log v)). Throws InvalidArgument on an empty list or a
/// non-positive value.
double geometric_mean(std::span<const double> values);

/// Append-only record log with a (kernel_id, digest) index pointing at the
/// first record that produced each artifact. Safe for concurrent appends
/// and reads; readers get consistent snapshots.
class ResultsStore {
 public:
  ResultsStore() = default;
  ResultsStore(const ResultsStore& other);
  ResultsStore& operator=(const ResultsStore& other);

  /// Returns the ordinal of the appended record.
  std::size_t append(EvaluationRecord record);
  void append_all(const std::vector<EvaluationRecord>& records);

  std::vector<EvaluationRecord> snapshot() const;
  std::size_t size() const;
  std::optional<std::size_t> find(const std::string& kernel_id, const std::string& digest) const;

  /// Status of the record, following ReusedFrom to the cited record.
  RecordStatus effective_status(const EvaluationRecord& record) const;

 private:
  mutable std::mutex mutex_;
  std::vector<EvaluationRecord> records_;
  std::map<std::pair<std::string, std::string>, std::size_t> index_;
};

struct SpeedupRow {
  double baseline_time = 0.0;
  double best_time = 0.0;
  double speedup = 0.0;

  bool operator==(const SpeedupRow&) const = default;
};

struct SpeedupReport {
  std::map<std::string, SpeedupRow> per_kernel;
  double geomean = 0.0;

  void add(const std::string& kernel_id, double baseline_time, double best_time);
  static SpeedupReport from_knowledge_base(const KnowledgeBase& kb);

  bool operator==(const SpeedupReport&) const = default;
};

/// Fraction of records per status name over the records accepted by
/// `filter` (all when empty). ReusedFrom records count under the status of
/// the record they cite.
std::map<std::string, double> failure_summary(
    const ResultsStore& store, const std::function<bool(const EvaluationRecord&)>& filter = {});

struct HistogramBucket {
  double low = 0.0;
  double high = 0.0;
  bool failed = false;  // the dedicated failure bucket
  double percent = 0.0;

  bool operator==(const HistogramBucket&) const = default;
};

/// Buckets best_time / time(permutation), clamped to [0, 1], into bands of
/// `bucket_width`, followed by one failure bucket. Throws InvalidArgument
/// when the records span several kernels or pass multisets.
std::vector<HistogramBucket> permutation_histogram(const std::vector<EvaluationRecord>& records, double best_time,
                                                   double bucket_width);

enum class ExportFormat { Csv, Json };

ExportFormat export_format_from_path(const std::filesystem::path& path);

// Serializers. Numbers carry six fractional digits and JSON keys are sorted,
// so equal inputs give byte-identical files.
std::string records_csv(std::span<const EvaluationRecord> records);
std::string records_json(std::span<const EvaluationRecord> records);
std::vector<EvaluationRecord> parse_records_csv(std::string_view text);
std::vector<EvaluationRecord> parse_records_json(std::string_view text);

std::string report_csv(const SpeedupReport& report);
std::string report_json(const SpeedupReport& report);
SpeedupReport parse_report_json(std::string_view text);

/// CSV cells are clamped to [0, 1] or "FAIL"; JSON keeps raw ratios.
std::string matrix_csv(const CrossMatrix& matrix);
std::string matrix_json(const CrossMatrix& matrix);
CrossMatrix parse_matrix_json(std::string_view text);

std::string histogram_csv(const std::vector<HistogramBucket>& buckets);
std::string loo_csv(const LooTable& table);
std::string failures_csv(const std::map<std::string, double>& summary);

void export_to(const ResultsStore& store, const std::filesystem::path& path, ExportFormat format);
void export_to(const SpeedupReport& report, const std::filesystem::path& path, ExportFormat format);
void export_to(const CrossMatrix& matrix, const std::filesystem::path& path, ExportFormat format);

ResultsStore import_store(const std::filesystem::path& path, ExportFormat format);
SpeedupReport import_report(const std::filesystem::path& path);
CrossMatrix import_matrix(const std::filesystem::path& path);

/// Writes `content` to `path`, raising IoError that names the path.
void write_text_file(const std::filesystem::path& path, std::string_view content);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace phaseforge
