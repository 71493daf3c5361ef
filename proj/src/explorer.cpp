#include "phaseforge/explorer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

#include "format.hpp"
#include "parallel.hpp"
#include "phaseforge/error.hpp"

namespace phaseforge {

using detail::parallel_for;

void ExplorationConfig::validate() const {
  if (num_sequences == 0 || max_len == 0 || top_k == 0 || final_reps == 0 || final_random_inputs == 0 ||
      jobs == 0) {
    throw InvalidArgument("exploration config: all counts must be at least 1");
  }
  if (!(rtol >= 0.0 && rtol < 1.0)) throw InvalidArgument("exploration config: rtol must be in [0, 1)");
  if (!(atol >= 0.0)) throw InvalidArgument("exploration config: atol must be non-negative");
}

std::string_view to_string(RecordStatus s) {
  switch (s) {
    case RecordStatus::Valid: return "Valid";
    case RecordStatus::InvalidOutput: return "InvalidOutput";
    case RecordStatus::Timeout: return "Timeout";
    case RecordStatus::Crash: return "Crash";
    case RecordStatus::BrokenReport: return "BrokenReport";
    case RecordStatus::NoIr: return "NoIr";
    case RecordStatus::ReusedFrom: return "ReusedFrom";
  }
  return "?";
}

RecordStatus record_status_from_string(std::string_view s) {
  for (auto st : {RecordStatus::Valid, RecordStatus::InvalidOutput, RecordStatus::Timeout, RecordStatus::Crash,
                  RecordStatus::BrokenReport, RecordStatus::NoIr, RecordStatus::ReusedFrom}) {
    if (to_string(st) == s) return st;
  }
  throw ParseError("unknown record status '" + std::string(s) + "'", 0);
}

RecordStatus to_record_status(ExecStatus s) {
  switch (s) {
    case ExecStatus::Valid: return RecordStatus::Valid;
    case ExecStatus::InvalidOutput: return RecordStatus::InvalidOutput;
    case ExecStatus::Timeout: return RecordStatus::Timeout;
    case ExecStatus::Crash: return RecordStatus::Crash;
    case ExecStatus::BrokenReport: return RecordStatus::BrokenReport;
  }
  return RecordStatus::Crash;
}

void sort_records(std::vector<EvaluationRecord>& records) {
  std::stable_sort(records.begin(), records.end(), [](const EvaluationRecord& a, const EvaluationRecord& b) {
    const bool va = a.is_valid();
    const bool vb = b.is_valid();
    if (va != vb) return va;
    if (va && *a.wall_time != *b.wall_time) return *a.wall_time < *b.wall_time;
    return a.eval_index < b.eval_index;
  });
}

bool compare_outputs(std::span<const double> reference, std::span<const double> candidate, double rtol,
                     double atol) {
  if (reference.size() != candidate.size()) return false;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double tol = std::max(atol, rtol * std::abs(reference[i]));
    // Negated so that NaN outputs fail.
    if (!(std::abs(candidate[i] - reference[i]) <= tol)) return false;
  }
  return true;
}

namespace {

RecordStatus compile_failure_status(const CompileOutcome& c) {
  return std::holds_alternative<OptimizerFailure>(c) ? RecordStatus::NoIr : RecordStatus::Crash;
}

// Runs the validation input and checks the outputs. Never timed.
RecordStatus validate_artifact(const KernelCase& kernel, const Artifact& artifact, Backend& backend,
                               double rtol, double atol) {
  const auto run = backend.execute(kernel, artifact, RunInput::validation());
  if (run.status != ExecStatus::Valid) return to_record_status(run.status);
  const auto reference = backend.reference_outputs(kernel, RunInput::validation());
  if (!run.outputs || !compare_outputs(reference, *run.outputs, rtol, atol)) return RecordStatus::InvalidOutput;
  return RecordStatus::Valid;
}

// Times the measurement input under the backend's measurement token.
std::pair<RecordStatus, std::optional<double>> measure(const KernelCase& kernel, const Artifact& artifact,
                                                       Backend& backend, std::size_t reps) {
  std::lock_guard token(backend.measurement_token());
  double total = 0.0;
  for (std::size_t r = 0; r < reps; ++r) {
    const auto run = backend.execute(kernel, artifact, RunInput::measurement());
    if (run.status != ExecStatus::Valid || !run.wall_time) return {to_record_status(run.status), std::nullopt};
    total += *run.wall_time;
  }
  return {RecordStatus::Valid, total / static_cast<double>(reps)};
}

}  // namespace

std::vector<EvaluationRecord> explore(const KernelCase& kernel, const ExplorationConfig& config,
                                      const PassCatalog& catalog, Backend& backend) {
  config.validate();
  if (catalog.empty()) throw InvalidArgument("explore: empty catalog");

  Rng rng(config.seed);
  std::vector<EvaluationRecord> records;
  records.reserve(config.num_sequences);
  // digest -> index into `records` of the fresh evaluation
  std::unordered_map<std::string, std::size_t> first_seen;

  const std::size_t batch = std::max<std::size_t>(1, config.jobs) * 8;
  for (std::size_t start = 0; start < config.num_sequences; start += batch) {
    const auto count = std::min(batch, config.num_sequences - start);

    std::vector<PhaseOrder> orders;
    orders.reserve(count);
    for (std::size_t i = 0; i < count; ++i) orders.push_back(random_phase_order(catalog, config.max_len, rng));

    std::vector<std::optional<CompileOutcome>> compiled(count);
    parallel_for(count, config.jobs, [&](std::size_t i) { compiled[i] = backend.compile(kernel, orders[i]); });

    // Dedup decisions are made in eval order by this thread only.
    const auto base = records.size();
    std::vector<std::size_t> fresh;
    for (std::size_t i = 0; i < count; ++i) {
      EvaluationRecord rec;
      rec.kernel_id = kernel.id;
      rec.order = std::move(orders[i]);
      rec.eval_index = start + i;
      if (const auto* art = artifact_of(*compiled[i])) {
        rec.digest = art->digest;
        if (first_seen.count(art->digest)) {
          rec.status = RecordStatus::ReusedFrom;
        } else {
          first_seen.emplace(art->digest, base + i);
          fresh.push_back(i);
        }
      } else {
        rec.status = compile_failure_status(*compiled[i]);
      }
      records.push_back(std::move(rec));
    }

    parallel_for(fresh.size(), config.jobs, [&](std::size_t f) {
      const auto i = fresh[f];
      records[base + i].status =
          validate_artifact(kernel, std::get<Artifact>(*compiled[i]), backend, config.rtol, config.atol);
    });

    for (auto i : fresh) {
      auto& rec = records[base + i];
      if (rec.status != RecordStatus::Valid) continue;
      auto [status, time] = measure(kernel, std::get<Artifact>(*compiled[i]), backend, 1);
      rec.status = status;
      rec.wall_time = time;
    }

    for (std::size_t i = 0; i < count; ++i) {
      auto& rec = records[base + i];
      if (rec.status != RecordStatus::ReusedFrom) continue;
      const auto& cited = records[first_seen.at(*rec.digest)];
      if (cited.status == RecordStatus::Valid) rec.wall_time = cited.wall_time;
    }
  }

  sort_records(records);
  return records;
}

FinalChoice finalize(const KernelCase& kernel, const std::vector<EvaluationRecord>& records,
                     const ExplorationConfig& config, Backend& backend) {
  config.validate();
  std::vector<EvaluationRecord> ranked;
  for (const auto& r : records) {
    if (r.status == RecordStatus::Valid) ranked.push_back(r);
  }
  sort_records(ranked);
  if (ranked.size() > config.top_k) ranked.resize(config.top_k);

  std::vector<std::uint64_t> input_seeds;
  for (std::size_t i = 0; i < config.final_random_inputs; ++i) input_seeds.push_back(mix_seed(config.seed, i));

  std::optional<FinalChoice> best;
  for (std::size_t rank = 0; rank < ranked.size(); ++rank) {
    const auto outcome = backend.compile(kernel, ranked[rank].order);
    const auto* artifact = artifact_of(outcome);
    if (!artifact) continue;
    if (validate_artifact(kernel, *artifact, backend, config.rtol, config.atol) != RecordStatus::Valid) continue;

    bool passes = true;
    for (auto seed : input_seeds) {
      const auto input = RunInput::random(seed);
      const auto run = backend.execute(kernel, *artifact, input);
      if (run.status != ExecStatus::Valid || !run.outputs ||
          !compare_outputs(backend.reference_outputs(kernel, input), *run.outputs, config.rtol, config.atol)) {
        passes = false;
        break;
      }
    }
    if (!passes) continue;

    const auto [status, time] = measure(kernel, *artifact, backend, config.final_reps);
    if (status != RecordStatus::Valid) continue;
    if (!best || *time < best->averaged_time) best = FinalChoice{ranked[rank].order, *time, rank};
  }
  if (!best) throw NoValidCandidate("no candidate for kernel '" + kernel.id + "' passed final validation");
  return *best;
}

OrderEvaluation evaluate_artifact(const KernelCase& kernel, const Artifact& artifact, Backend& backend,
                                  const EvaluateOptions& options) {
  OrderEvaluation ev;
  ev.digest = artifact.digest;
  ev.status = validate_artifact(kernel, artifact, backend, options.rtol, options.atol);
  if (ev.status != RecordStatus::Valid) return ev;
  const auto [status, time] = measure(kernel, artifact, backend, std::max<std::size_t>(1, options.reps));
  ev.status = status;
  ev.time = time;
  return ev;
}

OrderEvaluation evaluate_order(const KernelCase& kernel, const PhaseOrder& order, Backend& backend,
                               const EvaluateOptions& options) {
  const auto outcome = backend.compile(kernel, order);
  if (const auto* artifact = artifact_of(outcome)) return evaluate_artifact(kernel, *artifact, backend, options);
  OrderEvaluation ev;
  ev.status = compile_failure_status(outcome);
  return ev;
}

PhaseOrder reduce_order(const KernelCase& kernel, const PhaseOrder& order, Backend& backend,
                        const ReduceOptions& options) {
  if (order.empty()) return order;
  std::unordered_map<std::string, OrderEvaluation> cache;
  const auto eval = [&](const PhaseOrder& o) -> const OrderEvaluation& {
    auto key = render_phase_order(o);
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(std::move(key), evaluate_order(kernel, o, backend, options.evaluate)).first;
    return it->second;
  };

  const auto& start = eval(order);
  if (!start.valid()) return order;
  // Bound against the input order so slack cannot accumulate across deletions.
  const double bound = (1.0 + options.epsilon) * *start.time;

  PhaseOrder current = order;
  for (bool changed = true; changed;) {
    changed = false;
    std::size_t i = 0;
    while (i < current.size()) {
      PhaseOrder candidate = current;
      candidate.passes.erase(candidate.passes.begin() + static_cast<std::ptrdiff_t>(i));
      const auto& ev = eval(candidate);
      if (ev.valid() && *ev.time <= bound) {
        current = std::move(candidate);
        changed = true;
      } else {
        ++i;
      }
    }
  }
  return current;
}

void KnowledgeBase::set(const std::string& kernel_id, KbEntry entry) {
  if (kernel_id.empty()) throw InvalidArgument("knowledge base: empty kernel id");
  if (!(entry.baseline_time > 0.0) || !(entry.best_time > 0.0)) {
    throw InvalidArgument("knowledge base: times must be positive for '" + kernel_id + "'");
  }
  if (!entry.best_order.empty() && entry.best_time > entry.baseline_time) {
    throw InvalidArgument("knowledge base: best_time exceeds baseline_time for '" + kernel_id + "'");
  }
  entries_[kernel_id] = std::move(entry);
}

const KbEntry* KnowledgeBase::find(std::string_view kernel_id) const {
  const auto it = entries_.find(std::string(kernel_id));
  return it == entries_.end() ? nullptr : &it->second;
}

std::string KnowledgeBase::to_json() const {
  using nlohmann::json;
  json entries = json::object();
  for (const auto& [id, e] : entries_) {
    json fv = json::array();
    for (double v : e.feature_vector.values) fv.push_back(detail::round6(v));
    entries[id] = {{"best_order", render_phase_order(e.best_order)},
                   {"best_time", detail::round6(e.best_time)},
                   {"baseline_time", detail::round6(e.baseline_time)},
                   {"feature_vector", fv}};
  }
  return json{{"entries", entries}}.dump(2) + "\n";
}

KnowledgeBase KnowledgeBase::from_json(std::string_view text) {
  using nlohmann::json;
  KnowledgeBase kb;
  try {
    const auto j = json::parse(text);
    for (const auto& [id, je] : j.at("entries").items()) {
      KbEntry e;
      e.best_order = parse_phase_order(je.at("best_order").get<std::string>());
      e.best_time = je.at("best_time").get<double>();
      e.baseline_time = je.at("baseline_time").get<double>();
      const auto& fv = je.at("feature_vector");
      if (!fv.is_array() || fv.size() != kFeatureCount) {
        throw ConfigError("knowledge base: feature_vector of '" + id + "' must have " +
                          std::to_string(kFeatureCount) + " values");
      }
      for (std::size_t i = 0; i < kFeatureCount; ++i) e.feature_vector.values[i] = fv[i].get<double>();
      kb.set(id, std::move(e));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("knowledge base: ") + e.what());
  }
  return kb;
}

void KnowledgeBase::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  out << to_json();
  if (!out) throw IoError("cannot write knowledge base " + path.string());
}

KnowledgeBase KnowledgeBase::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open knowledge base " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

CrossMatrix cross_apply(const std::vector<KernelCase>& kernels, const KnowledgeBase& kb, Backend& backend,
                        const EvaluateOptions& options) {
  CrossMatrix m;
  for (const auto& k : kernels) {
    if (!kb.find(k.id)) throw InvalidArgument("cross_apply: no knowledge base entry for '" + k.id + "'");
    m.kernels.push_back(k.id);
  }
  m.cells.assign(kernels.size(), std::vector<CellResult>(kernels.size()));
  for (std::size_t row = 0; row < kernels.size(); ++row) {
    const auto& order = kb.find(kernels[row].id)->best_order;
    for (std::size_t col = 0; col < kernels.size(); ++col) {
      const auto ev = evaluate_order(kernels[col], order, backend, options);
      auto& cell = m.cells[row][col];
      if (!ev.valid()) {
        cell.failed = true;
      } else {
        cell.ratio = kb.find(kernels[col].id)->best_time / *ev.time;
      }
    }
  }
  return m;
}

}  // namespace phaseforge
