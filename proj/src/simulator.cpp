#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "phaseforge/backend.hpp"
#include "phaseforge/digest.hpp"
#include "phaseforge/error.hpp"

namespace phaseforge {

namespace {

using nlohmann::json;

struct HashDraw {
  double band;   // selects the failure class
  double noise;  // run-to-run variation in [0.99, 1.01)
};

double unit_from(const std::array<std::uint8_t, 32>& bytes, std::size_t offset) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 8; ++i) v = (v << 8) | bytes[offset + i];
  return static_cast<double>(v >> 11) * 0x1.0p-53;
}

HashDraw draw(std::uint64_t salt, std::string_view canonical) {
  std::string key = std::to_string(salt);
  key += '\n';
  key += canonical;
  const auto bytes = sha256(key);
  return {unit_from(bytes, 0), 0.99 + 0.02 * unit_from(bytes, 8)};
}

PhaseOrder strip_noops(const PhaseOrder& order, const std::set<PassId>& noops) {
  PhaseOrder out;
  for (const auto& p : order.passes) {
    if (!noops.count(p)) out.passes.push_back(p);
  }
  return out;
}

std::vector<double> perturbed(std::vector<double> v) {
  if (v.empty()) return {1.0};
  for (auto& x : v) x = x * 1.1 + 0.5;
  return v;
}

void reject_unknown_keys(const json& j, std::initializer_list<std::string_view> keys, std::string_view what) {
  for (const auto& [k, _] : j.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
      throw ConfigError(std::string(what) + ": unknown field '" + k + "'");
    }
  }
}

}  // namespace

Artifact Artifact::from_content(std::string content) {
  Artifact a;
  a.digest = sha256_hex(content);
  a.content = std::move(content);
  return a;
}

std::string_view to_string(ExecStatus s) {
  switch (s) {
    case ExecStatus::Valid: return "Valid";
    case ExecStatus::InvalidOutput: return "InvalidOutput";
    case ExecStatus::Timeout: return "Timeout";
    case ExecStatus::Crash: return "Crash";
    case ExecStatus::BrokenReport: return "BrokenReport";
  }
  return "?";
}

std::string_view to_string(InputKind k) {
  switch (k) {
    case InputKind::Validation: return "validation";
    case InputKind::Measurement: return "measurement";
    case InputKind::Random: return "random";
  }
  return "?";
}

void SimKernelModel::validate() const {
  if (!(baseline_time > 0.0)) throw InvalidArgument("sim model: baseline_time must be positive");
  for (const auto& m : motifs) {
    if (m.passes.empty()) throw InvalidArgument("sim model: empty motif");
    if (!(m.multiplier > 0.0)) throw InvalidArgument("sim model: motif multiplier must be positive");
  }
  const auto& r = failure_rates;
  for (double p : {r.p_no_ir, r.p_incorrect, r.p_broken}) {
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("sim model: failure rate outside [0,1]");
  }
  if (!(r.p_no_ir + r.p_incorrect + r.p_broken < 1.0)) {
    throw InvalidArgument("sim model: failure rates must sum to less than 1");
  }
}

SimKernelModel SimKernelModel::from_json(std::string_view text) {
  SimKernelModel m;
  try {
    const auto j = json::parse(text);
    reject_unknown_keys(j, {"baseline_time", "motifs", "failure_rates", "seed_salt"}, "sim model");
    m.baseline_time = j.at("baseline_time").get<double>();
    for (const auto& jm : j.at("motifs")) {
      reject_unknown_keys(jm, {"passes", "multiplier"}, "sim model motif");
      Motif motif;
      for (const auto& name : jm.at("passes")) motif.passes.emplace_back(name.get<std::string>());
      motif.multiplier = jm.at("multiplier").get<double>();
      m.motifs.push_back(std::move(motif));
    }
    const auto& jr = j.at("failure_rates");
    reject_unknown_keys(jr, {"p_no_ir", "p_incorrect", "p_broken"}, "sim model failure_rates");
    m.failure_rates.p_no_ir = jr.at("p_no_ir").get<double>();
    m.failure_rates.p_incorrect = jr.at("p_incorrect").get<double>();
    m.failure_rates.p_broken = jr.at("p_broken").get<double>();
    m.seed_salt = j.at("seed_salt").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("sim model: ") + e.what());
  }
  m.validate();
  return m;
}

SimKernelModel SimKernelModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open sim model " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return from_json(buf.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string SimKernelModel::to_json() const {
  json j;
  j["baseline_time"] = baseline_time;
  j["motifs"] = json::array();
  for (const auto& m : motifs) {
    json jm;
    jm["passes"] = json::array();
    for (const auto& p : m.passes) jm["passes"].push_back(p.name());
    jm["multiplier"] = m.multiplier;
    j["motifs"].push_back(jm);
  }
  j["failure_rates"] = {{"p_no_ir", failure_rates.p_no_ir},
                        {"p_incorrect", failure_rates.p_incorrect},
                        {"p_broken", failure_rates.p_broken}};
  j["seed_salt"] = seed_salt;
  return j.dump(2);
}

std::string sim_canonical_text(const PhaseOrder& order, const std::set<PassId>& noops) {
  return render_phase_order(strip_noops(order, noops));
}

std::vector<double> sim_reference_outputs(const SimKernelModel& model, const RunInput& input) {
  std::string key = "outputs:";
  key += to_string(input.kind);
  key += ':';
  key += std::to_string(input.kind == InputKind::Random ? input.seed : 0);
  const auto bytes = sha256(std::to_string(model.seed_salt) + "\n" + key);
  std::vector<double> out;
  for (std::size_t i = 0; i < 4; ++i) out.push_back(1.0 + unit_from(bytes, i * 8));
  return out;
}

double sim_motif_factor(const SimKernelModel& model, const PhaseOrder& order, const std::set<PassId>& noops) {
  const auto canonical = strip_noops(order, noops);
  double factor = 1.0;
  for (const auto& m : model.motifs) {
    if (contains_contiguous(canonical, m.passes)) factor *= m.multiplier;
  }
  return factor;
}

SimEvaluation sim_evaluate(const SimKernelModel& model, const PhaseOrder& order, const std::set<PassId>& noops) {
  const auto canonical = sim_canonical_text(order, noops);
  const auto h = draw(model.seed_salt, canonical);
  const auto& r = model.failure_rates;

  // The unoptimized build is the baseline and never fails.
  if (!canonical.empty()) {
    if (h.band < r.p_no_ir) {
      return {OptimizerFailure{"simulated optimizer crash"}, std::nullopt};
    }
  }

  SimEvaluation ev{Artifact::from_content(canonical), ExecutionOutcome{}};
  auto& exec = *ev.execution;
  const double wall = model.baseline_time * sim_motif_factor(model, order, noops) * h.noise;
  const auto reference = sim_reference_outputs(model, RunInput::validation());

  double band = canonical.empty() ? 1.0 : h.band;
  if (band < r.p_no_ir + r.p_incorrect) {
    exec.status = ExecStatus::InvalidOutput;
    exec.wall_time = wall;
    exec.outputs = perturbed(reference);
  } else if (band < r.p_no_ir + r.p_incorrect + r.p_broken) {
    exec.status = ExecStatus::BrokenReport;
  } else {
    exec.status = ExecStatus::Valid;
    exec.wall_time = wall;
    exec.outputs = reference;
  }
  return ev;
}

SimulatorBackend::SimulatorBackend(std::set<PassId> noops, double timeout_factor)
    : noops_(std::move(noops)), timeout_factor_(timeout_factor) {
  if (!(timeout_factor_ > 0.0)) throw InvalidArgument("simulator: timeout factor must be positive");
}

namespace {

const SimKernelModel& require_model(const KernelCase& kernel) {
  const auto* model = kernel.model();
  if (!model) throw ConfigError("kernel '" + kernel.id + "' has no simulator model");
  return *model;
}

}  // namespace

CompileOutcome SimulatorBackend::compile(const KernelCase& kernel, const PhaseOrder& order) {
  return sim_evaluate(require_model(kernel), order, noops_).compile;
}

std::vector<double> SimulatorBackend::reference_outputs(const KernelCase& kernel, const RunInput& input) {
  const auto& model = require_model(kernel);
  if (input.kind == InputKind::Validation && !kernel.reference_outputs.empty()) return kernel.reference_outputs;
  return sim_reference_outputs(model, input);
}

ExecutionOutcome SimulatorBackend::execute(const KernelCase& kernel, const Artifact& artifact,
                                           const RunInput& input) {
  const auto& model = require_model(kernel);
  // Simulated artifacts carry their canonical order text.
  const auto order = parse_phase_order(artifact.content);
  auto ev = sim_evaluate(model, order, noops_);
  if (!ev.execution) return ExecutionOutcome{ExecStatus::Crash, std::nullopt, std::nullopt};

  auto exec = *ev.execution;
  if (exec.wall_time && *exec.wall_time > timeout_factor_ * model.baseline_time) {
    return ExecutionOutcome{ExecStatus::Timeout, std::nullopt, std::nullopt};
  }
  if (exec.outputs) {
    auto expected = reference_outputs(kernel, input);
    exec.outputs = exec.status == ExecStatus::InvalidOutput ? perturbed(std::move(expected)) : std::move(expected);
  }
  return exec;
}

}  // namespace phaseforge
