#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "phaseforge/advisor.hpp"
#include "phaseforge/cli.hpp"
#include "phaseforge/error.hpp"
#include "phaseforge/explorer.hpp"
#include "phaseforge/irfeat.hpp"
#include "phaseforge/results.hpp"

namespace py = pybind11;
using namespace phaseforge;

namespace {

std::vector<std::string> names(const PhaseOrder& order) {
  std::vector<std::string> out;
  for (const auto& p : order.passes) out.push_back(p.name());
  return out;
}

PhaseOrder order_from(const std::vector<std::string>& passes) {
  PhaseOrder o;
  for (const auto& p : passes) o.passes.emplace_back(p);
  return o;
}

FeatureVector vector_from(const std::vector<double>& v) {
  FeatureVector f;
  if (v.size() != f.values.size()) throw InvalidArgument("feature vector must have 24 entries");
  std::copy(v.begin(), v.end(), f.values.begin());
  return f;
}

KernelCase sim_kernel(const std::string& id, const std::string& model_json) {
  return {id, SimKernelModel::from_json(model_json), "", "", {}};
}

py::dict record_dict(const EvaluationRecord& r) {
  py::dict d;
  d["kernel_id"] = r.kernel_id;
  d["order"] = render_phase_order(r.order);
  d["digest"] = r.digest;
  d["status"] = std::string(to_string(r.status));
  d["wall_time"] = r.wall_time;
  d["eval_index"] = r.eval_index;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Phase-order search and advice";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);

  m.def("parse_phase_order", [](std::string_view text) { return names(parse_phase_order(text)); });
  m.def("render_phase_order", [](const std::vector<std::string>& p) { return render_phase_order(order_from(p)); });
  m.def("geometric_mean", [](const std::vector<double>& v) { return geometric_mean(v); });
  m.def("compare_outputs",
        [](const std::vector<double>& ref, const std::vector<double>& cand, double rtol, double atol) {
          return compare_outputs(ref, cand, rtol, atol);
        },
        py::arg("reference"), py::arg("candidate"), py::arg("rtol") = 0.01, py::arg("atol") = 1e-6);

  m.def("extract_features", [](std::string_view ir) {
    const auto f = extract_features(parse_ir(ir));
    return std::vector<double>(f.values.begin(), f.values.end());
  });
  m.def("cosine_distance", [](const std::vector<double>& a, const std::vector<double>& b) {
    return cosine_distance(vector_from(a), vector_from(b));
  });

  m.def("explore",
        [](const std::string& kernel_id, const std::string& model_json, const std::string& catalog_text,
           std::size_t num_sequences, std::size_t max_len, std::uint64_t seed, std::size_t jobs) {
          const auto catalog = PassCatalog::parse(catalog_text);
          ExplorationConfig config;
          config.num_sequences = num_sequences;
          config.max_len = max_len;
          config.seed = seed;
          config.jobs = jobs;
          SimulatorBackend backend(catalog.noops());
          std::vector<EvaluationRecord> records;
          {
            py::gil_scoped_release release;
            records = explore(sim_kernel(kernel_id, model_json), config, catalog, backend);
          }
          py::list out;
          for (const auto& r : records) out.append(record_dict(r));
          return out;
        },
        py::arg("kernel_id"), py::arg("model_json"), py::arg("catalog_text"), py::arg("num_sequences") = 10000,
        py::arg("max_len") = kDefaultMaxLen, py::arg("seed") = kDefaultSeed, py::arg("jobs") = 1);

  m.def("reduce_order",
        [](const std::string& model_json, const std::string& order, double epsilon) {
          SimulatorBackend backend;
          ReduceOptions ro;
          ro.epsilon = epsilon;
          return render_phase_order(reduce_order(sim_kernel("k", model_json), parse_phase_order(order), backend, ro));
        },
        py::arg("model_json"), py::arg("order"), py::arg("epsilon") = 0.01);

  m.def("suggest_knn",
        [](const std::vector<double>& query,
           const std::vector<std::tuple<std::string, std::vector<double>, std::string>>& refs, std::size_t k) {
          ReferenceSet set;
          for (const auto& [id, f, order] : refs) set.add({id, vector_from(f), parse_phase_order(order)});
          std::vector<std::tuple<std::string, double, std::string>> out;
          for (const auto& s : suggest_knn(vector_from(query), set, k)) {
            out.emplace_back(s.kernel_id, s.distance, render_phase_order(s.order));
          }
          return out;
        },
        py::arg("query"), py::arg("references"), py::arg("k") = 5);

  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::vector<std::string> full{"phaseforge"};
    full.insert(full.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : full) argv.push_back(a.c_str());
    std::ostringstream out, err;
    int code;
    {
      py::gil_scoped_release release;
      code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
  });
}
