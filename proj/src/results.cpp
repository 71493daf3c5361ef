#include "phaseforge/results.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "format.hpp"
#include "phaseforge/error.hpp"

namespace phaseforge {

using nlohmann::json;
using detail::fixed6;
using detail::round6;

double geometric_mean(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("geometric_mean: empty input");
  double log_sum = 0.0;
  for (double v : values) {
    if (!(v > 0.0) || !std::isfinite(v)) throw InvalidArgument("geometric_mean: values must be positive and finite");
    log_sum += std::log(v);
  }
  return std::exp(log_sum / static_cast<double>(values.size()));
}

ResultsStore::ResultsStore(const ResultsStore& other) {
  std::lock_guard lock(other.mutex_);
  records_ = other.records_;
  index_ = other.index_;
}

ResultsStore& ResultsStore::operator=(const ResultsStore& other) {
  if (this == &other) return *this;
  std::scoped_lock lock(mutex_, other.mutex_);
  records_ = other.records_;
  index_ = other.index_;
  return *this;
}

std::size_t ResultsStore::append(EvaluationRecord record) {
  std::lock_guard lock(mutex_);
  const auto ordinal = records_.size();
  if (record.digest) index_.try_emplace({record.kernel_id, *record.digest}, ordinal);
  records_.push_back(std::move(record));
  return ordinal;
}

void ResultsStore::append_all(const std::vector<EvaluationRecord>& records) {
  for (const auto& r : records) append(r);
}

std::vector<EvaluationRecord> ResultsStore::snapshot() const {
  std::lock_guard lock(mutex_);
  return records_;
}

std::size_t ResultsStore::size() const {
  std::lock_guard lock(mutex_);
  return records_.size();
}

std::optional<std::size_t> ResultsStore::find(const std::string& kernel_id, const std::string& digest) const {
  std::lock_guard lock(mutex_);
  const auto it = index_.find({kernel_id, digest});
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

RecordStatus ResultsStore::effective_status(const EvaluationRecord& record) const {
  if (record.status != RecordStatus::ReusedFrom || !record.digest) return record.status;
  const auto ordinal = find(record.kernel_id, *record.digest);
  if (!ordinal) return record.status;
  std::lock_guard lock(mutex_);
  const auto& cited = records_[*ordinal];
  return cited.status == RecordStatus::ReusedFrom ? record.status : cited.status;
}

void SpeedupReport::add(const std::string& kernel_id, double baseline_time, double best_time) {
  if (!(baseline_time > 0.0) || !(best_time > 0.0)) {
    throw InvalidArgument("speedup report: times must be positive for '" + kernel_id + "'");
  }
  per_kernel[kernel_id] = {baseline_time, best_time, baseline_time / best_time};
  std::vector<double> speedups;
  for (const auto& [id, row] : per_kernel) speedups.push_back(row.speedup);
  geomean = geometric_mean(speedups);
}

SpeedupReport SpeedupReport::from_knowledge_base(const KnowledgeBase& kb) {
  SpeedupReport r;
  for (const auto& [id, e] : kb.entries()) r.add(id, e.baseline_time, e.best_time);
  return r;
}

std::map<std::string, double> failure_summary(const ResultsStore& store,
                                              const std::function<bool(const EvaluationRecord&)>& filter) {
  std::map<std::string, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& r : store.snapshot()) {
    if (filter && !filter(r)) continue;
    ++counts[std::string(to_string(store.effective_status(r)))];
    ++total;
  }
  std::map<std::string, double> out;
  for (const auto& [status, n] : counts) out[status] = static_cast<double>(n) / static_cast<double>(total);
  return out;
}

std::vector<HistogramBucket> permutation_histogram(const std::vector<EvaluationRecord>& records, double best_time,
                                                   double bucket_width) {
  if (!(bucket_width > 0.0 && bucket_width <= 1.0)) {
    throw InvalidArgument("permutation_histogram: bucket width must be in (0, 1]");
  }
  if (!(best_time > 0.0)) throw InvalidArgument("permutation_histogram: best time must be positive");
  for (const auto& r : records) {
    if (r.kernel_id != records.front().kernel_id) {
      throw InvalidArgument("permutation_histogram: records span several kernels");
    }
    if (!same_multiset(r.order, records.front().order)) {
      throw InvalidArgument("permutation_histogram: records are not permutations of one order");
    }
  }

  const auto n = static_cast<std::size_t>(std::ceil(1.0 / bucket_width - 1e-9));
  std::vector<std::size_t> counts(n + 1, 0);  // last slot: failures
  for (const auto& r : records) {
    if (!r.is_valid()) {
      ++counts[n];
      continue;
    }
    const double ratio = std::clamp(best_time / *r.wall_time, 0.0, 1.0);
    const auto idx = std::min(n - 1, static_cast<std::size_t>(std::floor(ratio / bucket_width + 1e-9)));
    ++counts[idx];
  }

  std::vector<HistogramBucket> out;
  if (records.empty()) return out;
  const double total = static_cast<double>(records.size());
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({static_cast<double>(i) * bucket_width, std::min(1.0, static_cast<double>(i + 1) * bucket_width),
                   false, 100.0 * static_cast<double>(counts[i]) / total});
  }
  out.push_back({0.0, 0.0, true, 100.0 * static_cast<double>(counts[n]) / total});
  return out;
}

ExportFormat export_format_from_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".csv") return ExportFormat::Csv;
  if (ext == ".json") return ExportFormat::Json;
  throw InvalidArgument("cannot infer export format from '" + path.string() + "'");
}

namespace {

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  for (;;) {
    const auto next = s.find(sep, pos);
    if (next == std::string_view::npos) {
      out.push_back(s.substr(pos));
      return out;
    }
    out.push_back(s.substr(pos, next - pos));
    pos = next + 1;
  }
}

std::vector<std::string_view> lines_of(std::string_view text) {
  auto lines = split(text, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  for (auto& l : lines) {
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
  }
  return lines;
}

double to_double(std::string_view s, std::size_t line) {
  try {
    std::size_t used = 0;
    const std::string str(s);
    const double v = std::stod(str, &used);
    if (used != str.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line) + ": bad number '" + std::string(s) + "'", line);
  }
}

std::size_t to_size(std::string_view s, std::size_t line) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string_view::npos) {
    throw ParseError("line " + std::to_string(line) + ": bad integer '" + std::string(s) + "'", line);
  }
  return static_cast<std::size_t>(std::stoull(std::string(s)));
}

constexpr std::string_view kRecordsHeader = "kernel_id,eval_index,order_text,digest,status,wall_time_s";

json record_to_json(const EvaluationRecord& r) {
  return {{"kernel_id", r.kernel_id},
          {"eval_index", r.eval_index},
          {"order_text", render_phase_order(r.order)},
          {"digest", r.digest ? json(*r.digest) : json(nullptr)},
          {"status", std::string(to_string(r.status))},
          {"wall_time_s", r.wall_time ? json(round6(*r.wall_time)) : json(nullptr)}};
}

}  // namespace

std::string records_csv(std::span<const EvaluationRecord> records) {
  std::string out(kRecordsHeader);
  out += '\n';
  for (const auto& r : records) {
    if (r.kernel_id.find(',') != std::string::npos) {
      throw InvalidArgument("records_csv: kernel id contains a comma: '" + r.kernel_id + "'");
    }
    out += r.kernel_id;
    out += ',';
    out += std::to_string(r.eval_index);
    out += ',';
    out += render_phase_order(r.order);
    out += ',';
    out += r.digest.value_or("");
    out += ',';
    out += to_string(r.status);
    out += ',';
    if (r.wall_time) out += fixed6(*r.wall_time);
    out += '\n';
  }
  return out;
}

std::vector<EvaluationRecord> parse_records_csv(std::string_view text) {
  const auto lines = lines_of(text);
  if (lines.empty() || lines.front() != kRecordsHeader) throw ParseError("records CSV: missing or bad header", 1);
  std::vector<EvaluationRecord> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto fields = split(lines[i], ',');
    if (fields.size() != 6) {
      throw ParseError("records CSV line " + std::to_string(i + 1) + ": expected 6 fields", i + 1);
    }
    EvaluationRecord r;
    r.kernel_id = std::string(fields[0]);
    r.eval_index = to_size(fields[1], i + 1);
    r.order = parse_phase_order(fields[2]);
    if (!fields[3].empty()) r.digest = std::string(fields[3]);
    r.status = record_status_from_string(fields[4]);
    if (!fields[5].empty()) r.wall_time = to_double(fields[5], i + 1);
    out.push_back(std::move(r));
  }
  return out;
}

std::string records_json(std::span<const EvaluationRecord> records) {
  json arr = json::array();
  for (const auto& r : records) arr.push_back(record_to_json(r));
  return json{{"records", arr}}.dump(2) + "\n";
}

std::vector<EvaluationRecord> parse_records_json(std::string_view text) {
  std::vector<EvaluationRecord> out;
  try {
    const auto j = json::parse(text);
    for (const auto& jr : j.at("records")) {
      EvaluationRecord r;
      r.kernel_id = jr.at("kernel_id").get<std::string>();
      r.eval_index = jr.at("eval_index").get<std::size_t>();
      r.order = parse_phase_order(jr.at("order_text").get<std::string>());
      if (!jr.at("digest").is_null()) r.digest = jr.at("digest").get<std::string>();
      r.status = record_status_from_string(jr.at("status").get<std::string>());
      if (!jr.at("wall_time_s").is_null()) r.wall_time = jr.at("wall_time_s").get<double>();
      out.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("records JSON: ") + e.what(), 0);
  }
  return out;
}

std::string report_csv(const SpeedupReport& report) {
  std::string out = "kernel_id,baseline_time_s,best_time_s,speedup\n";
  for (const auto& [id, row] : report.per_kernel) {
    out += id + "," + fixed6(row.baseline_time) + "," + fixed6(row.best_time) + "," + fixed6(row.speedup) + "\n";
  }
  out += "GEOMEAN,,," + fixed6(report.geomean) + "\n";
  return out;
}

std::string report_json(const SpeedupReport& report) {
  json per = json::object();
  for (const auto& [id, row] : report.per_kernel) {
    per[id] = {{"baseline_time", round6(row.baseline_time)},
               {"best_time", round6(row.best_time)},
               {"speedup", round6(row.speedup)}};
  }
  return json{{"per_kernel", per}, {"geomean", round6(report.geomean)}}.dump(2) + "\n";
}

SpeedupReport parse_report_json(std::string_view text) {
  SpeedupReport r;
  try {
    const auto j = json::parse(text);
    for (const auto& [id, row] : j.at("per_kernel").items()) {
      r.per_kernel[id] = {row.at("baseline_time").get<double>(), row.at("best_time").get<double>(),
                          row.at("speedup").get<double>()};
    }
    r.geomean = j.at("geomean").get<double>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("report JSON: ") + e.what(), 0);
  }
  return r;
}

std::string matrix_csv(const CrossMatrix& matrix) {
  std::string out = "sequence_owner";
  for (const auto& k : matrix.kernels) out += "," + k;
  out += '\n';
  for (std::size_t row = 0; row < matrix.kernels.size(); ++row) {
    out += matrix.kernels[row];
    for (const auto& cell : matrix.cells[row]) {
      out += ',';
      out += cell.failed ? std::string("FAIL") : fixed6(std::clamp(cell.ratio, 0.0, 1.0));
    }
    out += '\n';
  }
  return out;
}

std::string matrix_json(const CrossMatrix& matrix) {
  json cells = json::array();
  for (const auto& row : matrix.cells) {
    json jr = json::array();
    for (const auto& c : row) jr.push_back(c.failed ? json("FAIL") : json(round6(c.ratio)));
    cells.push_back(jr);
  }
  return json{{"kernels", matrix.kernels}, {"cells", cells}}.dump(2) + "\n";
}

CrossMatrix parse_matrix_json(std::string_view text) {
  CrossMatrix m;
  try {
    const auto j = json::parse(text);
    m.kernels = j.at("kernels").get<std::vector<std::string>>();
    for (const auto& jr : j.at("cells")) {
      std::vector<CellResult> row;
      for (const auto& c : jr) {
        if (c.is_string()) {
          if (c.get<std::string>() != "FAIL") throw ParseError("matrix JSON: bad cell", 0);
          row.push_back({true, 0.0});
        } else {
          row.push_back({false, c.get<double>()});
        }
      }
      if (row.size() != m.kernels.size()) throw ParseError("matrix JSON: ragged row", 0);
      m.cells.push_back(std::move(row));
    }
    if (m.cells.size() != m.kernels.size()) throw ParseError("matrix JSON: row count mismatch", 0);
  } catch (const json::exception& e) {
    throw ParseError(std::string("matrix JSON: ") + e.what(), 0);
  }
  return m;
}

std::string histogram_csv(const std::vector<HistogramBucket>& buckets) {
  std::string out = "bucket_low,bucket_high,percent\n";
  for (const auto& b : buckets) {
    if (b.failed) {
      out += "FAIL,FAIL," + fixed6(b.percent) + "\n";
    } else {
      out += fixed6(b.low) + "," + fixed6(b.high) + "," + fixed6(b.percent) + "\n";
    }
  }
  return out;
}

std::string loo_csv(const LooTable& table) {
  std::string out = "method,eval_count,geomean_speedup\n";
  for (const auto& [method, curve] : table.curves) {
    for (std::size_t n = 0; n < curve.size(); ++n) {
      out += method + "," + std::to_string(n + 1) + "," + fixed6(curve[n]) + "\n";
    }
  }
  return out;
}

std::string failures_csv(const std::map<std::string, double>& summary) {
  std::string out = "status,fraction\n";
  for (const auto& [status, fraction] : summary) out += status + "," + fixed6(fraction) + "\n";
  return out;
}

void write_text_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void export_to(const ResultsStore& store, const std::filesystem::path& path, ExportFormat format) {
  const auto records = store.snapshot();
  write_text_file(path, format == ExportFormat::Csv ? records_csv(records) : records_json(records));
}

void export_to(const SpeedupReport& report, const std::filesystem::path& path, ExportFormat format) {
  write_text_file(path, format == ExportFormat::Csv ? report_csv(report) : report_json(report));
}

void export_to(const CrossMatrix& matrix, const std::filesystem::path& path, ExportFormat format) {
  write_text_file(path, format == ExportFormat::Csv ? matrix_csv(matrix) : matrix_json(matrix));
}

ResultsStore import_store(const std::filesystem::path& path, ExportFormat format) {
  const auto text = read_text_file(path);
  ResultsStore store;
  store.append_all(format == ExportFormat::Csv ? parse_records_csv(text) : parse_records_json(text));
  return store;
}

SpeedupReport import_report(const std::filesystem::path& path) { return parse_report_json(read_text_file(path)); }

CrossMatrix import_matrix(const std::filesystem::path& path) { return parse_matrix_json(read_text_file(path)); }

}  // namespace phaseforge
