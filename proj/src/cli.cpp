#include "phaseforge/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <memory>
#include <ostream>
#include <set>

#include "CLI11.hpp"
#include "format.hpp"
#include "json.hpp"
#include "phaseforge/advisor.hpp"
#include "phaseforge/error.hpp"
#include "phaseforge/irfeat.hpp"
#include "phaseforge/results.hpp"

namespace phaseforge {

namespace fs = std::filesystem;
using nlohmann::json;
using detail::fixed6;

Suite Suite::load(const fs::path& path) {
  const auto base = path.parent_path();
  const auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };

  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("suite " + path.string() + ": " + e.what());
  }

  Suite suite;
  try {
    for (const auto& jk : j.at("kernels")) {
      SuiteKernel sk;
      auto& k = sk.kernel;
      k.id = jk.at("id").get<std::string>();
      if (k.id.empty() || k.id.find(',') != std::string::npos) {
        throw ConfigError("suite " + path.string() + ": bad kernel id '" + k.id + "'");
      }
      if (suite.find(k.id)) throw ConfigError("suite " + path.string() + ": duplicate kernel '" + k.id + "'");

      const bool has_model = jk.contains("model");
      if (has_model == jk.contains("source")) {
        throw ConfigError("suite " + path.string() + ": kernel '" + k.id + "' needs exactly one of model, source");
      }
      if (has_model) {
        const auto& m = jk.at("model");
        k.source = m.is_string() ? SimKernelModel::load(resolve(m.get<std::string>())) : SimKernelModel::from_json(m.dump());
      } else {
        k.source = resolve(jk.at("source").get<std::string>());
      }
      if (jk.contains("ir")) sk.ir = resolve(jk.at("ir").get<std::string>());
      k.validation_input = jk.value("validation_input", std::string{});
      k.measurement_input = jk.value("measurement_input", std::string{});
      k.reference_outputs = jk.value("reference_outputs", std::vector<double>{});
      suite.kernels.push_back(std::move(sk));
    }
  } catch (const json::exception& e) {
    throw ConfigError("suite " + path.string() + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError("suite " + path.string() + ": " + e.what());
  }
  return suite;
}

const SuiteKernel* Suite::find(const std::string& id) const {
  for (const auto& k : kernels) {
    if (k.kernel.id == id) return &k;
  }
  return nullptr;
}

namespace {

fs::path kb_path(const CliConfig& c) { return c.kb.empty() ? c.out_dir / "kb.json" : c.kb; }

std::unique_ptr<Backend> make_backend(const CliConfig& c, const std::set<PassId>& noops) {
  if (c.backend == BackendKind::Simulator) return std::make_unique<SimulatorBackend>(noops, c.timeout_factor);
  fs::path spec = c.toolchain;
  if (const char* env = std::getenv("PHASEFORGE_TOOLCHAIN"); env && *env) spec = env;
  if (spec.empty()) throw ConfigError("toolchain backend needs --toolchain or PHASEFORGE_TOOLCHAIN");
  return std::make_unique<ToolchainBackend>(ToolchainSpec::load(spec));
}

std::set<PassId> catalog_noops(const CliConfig& c) {
  if (c.catalog.empty()) return {};
  return PassCatalog::load(c.catalog).noops();
}

Suite load_suite(const CliConfig& c) {
  if (c.suite.empty()) throw ConfigError("--suite is required");
  return Suite::load(c.suite);
}

std::vector<const SuiteKernel*> selected(const Suite& suite, const std::vector<std::string>& ids) {
  std::vector<const SuiteKernel*> out;
  if (ids.empty()) {
    for (const auto& k : suite.kernels) out.push_back(&k);
    return out;
  }
  for (const auto& id : ids) {
    const auto* k = suite.find(id);
    if (!k) throw ConfigError("kernel '" + id + "' is not in the suite");
    out.push_back(k);
  }
  return out;
}

FeatureVector features_of(const fs::path& ir) { return extract_features(parse_ir(read_text_file(ir))); }

KnowledgeBase load_kb(const CliConfig& c, bool required) {
  const auto path = kb_path(c);
  if (!fs::exists(path)) {
    if (required) throw IoError("knowledge base " + path.string() + " not found");
    return {};
  }
  return KnowledgeBase::load(path);
}

EvaluateOptions evaluate_options(const CliConfig& c, std::size_t reps = 1) {
  return {c.exploration.rtol, c.exploration.atol, reps};
}

void emit(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  write_text_file(path, content);
}

int cross_apply_cmd(const CliConfig& c, std::ostream& out, std::ostream& err) {
  const auto kb = load_kb(c, true);
  const auto suite = load_suite(c);
  std::vector<KernelCase> kernels;
  for (const auto* sk : selected(suite, c.kernel_ids)) {
    if (kb.find(sk->kernel.id)) kernels.push_back(sk->kernel);
  }
  if (kernels.empty()) {
    err << "cross-apply: no suite kernel has a knowledge-base entry\n";
    return kExitDomain;
  }
  auto backend = make_backend(c, catalog_noops(c));
  const auto matrix = cross_apply(kernels, kb, *backend, evaluate_options(c));
  const auto text = matrix_csv(matrix);
  emit(c.out_dir / "matrix.csv", text);
  out << text;
  return kExitOk;
}

int permute_cmd(const CliConfig& c, std::ostream& out, std::ostream& err) {
  if (c.kernel_ids.size() != 1) throw ConfigError("permute takes exactly one kernel id");
  const auto& id = c.kernel_ids.front();
  const auto kb = load_kb(c, true);
  const auto* entry = kb.find(id);
  if (!entry) {
    err << "permute: no knowledge-base entry for '" << id << "'\n";
    return kExitDomain;
  }
  const auto suite = load_suite(c);
  const auto* sk = suite.find(id);
  if (!sk) throw ConfigError("kernel '" + id + "' is not in the suite");
  auto backend = make_backend(c, catalog_noops(c));

  Rng rng(c.exploration.seed);
  const auto perms = random_permutations(entry->best_order, c.trials, rng);
  std::vector<EvaluationRecord> records;
  for (std::size_t i = 0; i < perms.size(); ++i) {
    const auto ev = evaluate_order(sk->kernel, perms[i], *backend, evaluate_options(c));
    records.push_back({id, perms[i], ev.digest, ev.status, ev.time, i});
  }
  const auto text = histogram_csv(permutation_histogram(records, entry->best_time, c.bucket_width));
  emit(c.out_dir / "permute.csv", text);
  out << text;
  return kExitOk;
}

int loo_cmd(const CliConfig& c, std::ostream& out, std::ostream& err) {
  const auto kb = load_kb(c, true);
  std::vector<std::string> skipped;
  const auto refset = ReferenceSet::from_knowledge_base(kb, &skipped);
  for (const auto& s : skipped) err << "loo: skipping '" << s << "' (no feature vector)\n";
  const auto suite = load_suite(c);
  std::vector<KernelCase> kernels;
  for (const auto* sk : selected(suite, c.kernel_ids)) {
    if (refset.find(sk->kernel.id)) kernels.push_back(sk->kernel);
  }
  if (kernels.empty()) {
    err << "loo: no suite kernel is in the reference set\n";
    return kExitDomain;
  }
  auto backend = make_backend(c, catalog_noops(c));
  LooOptions opts;
  opts.k_max = c.k;
  opts.trials = c.trials;
  opts.seed = c.exploration.seed;
  opts.evaluate = evaluate_options(c);
  const auto text = loo_csv(leave_one_out(refset, kernels, *backend, opts));
  emit(c.out_dir / "loo.csv", text);
  out << text;
  return kExitOk;
}

int failures_cmd(const CliConfig& c, std::ostream& out) {
  const auto path = c.records.empty() ? c.out_dir / "records.csv" : c.records;
  const auto store = import_store(path, ExportFormat::Csv);
  const std::set<std::string> ids(c.kernel_ids.begin(), c.kernel_ids.end());
  const auto summary = failure_summary(store, [&](const EvaluationRecord& r) {
    return ids.empty() || ids.count(r.kernel_id) > 0;
  });
  const auto text = failures_csv(summary);
  emit(c.out_dir / "failures.csv", text);
  out << text;
  return kExitOk;
}

template <class Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const NoValidCandidate& e) {
    err << "error: " << e.what() << '\n';
    return kExitDomain;
  } catch (const DegenerateVector& e) {
    err << "error: " << e.what() << '\n';
    return kExitDomain;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitDomain;
  }
}

}  // namespace

int cmd_explore(const CliConfig& c, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    c.exploration.validate();
    if (c.catalog.empty()) throw ConfigError("--catalog is required");
    const auto catalog = PassCatalog::load(c.catalog);
    if (catalog.empty()) throw ConfigError("catalog " + c.catalog.string() + " lists no passes");
    const auto suite = load_suite(c);
    const auto kernels = selected(suite, c.kernel_ids);
    auto kb = load_kb(c, false);
    auto backend = make_backend(c, catalog.noops());

    ResultsStore store;
    int status = kExitOk;
    for (const auto* sk : kernels) {
      const auto& kernel = sk->kernel;
      const auto records = explore(kernel, c.exploration, catalog, *backend);
      store.append_all(records);

      FinalChoice choice;
      try {
        choice = finalize(kernel, records, c.exploration, *backend);
      } catch (const NoValidCandidate& e) {
        err << "error: " << e.what() << '\n';
        status = kExitDomain;
        continue;
      }

      ReduceOptions ropts;
      ropts.epsilon = c.epsilon;
      ropts.evaluate = evaluate_options(c);
      const auto reduced = reduce_order(kernel, choice.order, *backend, ropts);

      const auto final_opts = evaluate_options(c, c.exploration.final_reps);
      const auto baseline = evaluate_order(kernel, PhaseOrder{}, *backend, final_opts);
      if (!baseline.valid()) {
        err << "error: unoptimized build of '" << kernel.id << "' fails validation\n";
        status = kExitDomain;
        continue;
      }
      const auto best = evaluate_order(kernel, reduced, *backend, final_opts);

      KbEntry entry;
      entry.baseline_time = *baseline.time;
      if (best.valid() && *best.time < *baseline.time) {
        entry.best_order = reduced;
        entry.best_time = *best.time;
      } else {
        entry.best_time = *baseline.time;
      }
      if (sk->ir) entry.feature_vector = features_of(*sk->ir);
      out << kernel.id << ' ' << fixed6(entry.baseline_time / entry.best_time) << ' '
          << render_phase_order(entry.best_order) << '\n';
      kb.set(kernel.id, std::move(entry));
    }

    emit(c.out_dir / "records.csv", records_csv(store.snapshot()));
    emit(c.out_dir / "kb.json", kb.to_json());
    return status;
  });
}

int cmd_suggest(const CliConfig& c, const std::string& kernel_id, std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() -> int {
    const auto kb = load_kb(c, true);
    std::vector<std::string> skipped;
    const auto refset = ReferenceSet::from_knowledge_base(kb, &skipped);
    if (refset.empty()) {
      err << "error: knowledge base has no entries with feature vectors\n";
      return kExitDomain;
    }
    if (c.k == 0) throw InvalidArgument("--k must be at least 1");

    std::optional<Suite> suite;
    if (!c.suite.empty()) suite = Suite::load(c.suite);
    const SuiteKernel* sk = suite ? suite->find(kernel_id) : nullptr;
    std::optional<fs::path> ir = c.ir;
    if (!ir && sk) ir = sk->ir;
    if (!ir) throw ConfigError("no IR for kernel '" + kernel_id + "'; pass --ir or list it in the suite");

    const auto suggestions = suggest_knn(features_of(*ir), refset, c.k);
    out << "rank,kernel_id,distance,order_text\n";
    for (std::size_t i = 0; i < suggestions.size(); ++i) {
      const auto& s = suggestions[i];
      out << i + 1 << ',' << s.kernel_id << ',' << fixed6(s.distance) << ',' << render_phase_order(s.order) << '\n';
    }
    if (c.dry_run) return kExitOk;

    if (!sk) throw ConfigError("kernel '" + kernel_id + "' is not in the suite; use --dry-run");
    std::vector<PhaseOrder> orders;
    for (const auto& s : suggestions) orders.push_back(s.order);
    auto backend = make_backend(c, catalog_noops(c));
    const auto curve = evaluate_suggestions(sk->kernel, orders, *backend, orders.size(), evaluate_options(c));
    out << "eval_count,speedup\n";
    for (std::size_t n = 0; n < curve.size(); ++n) out << n + 1 << ',' << fixed6(curve[n]) << '\n';
    return kExitOk;
  });
}

int cmd_experiments(const std::string& subcommand, const CliConfig& c, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (subcommand == "cross-apply") return cross_apply_cmd(c, out, err);
    if (subcommand == "permute") return permute_cmd(c, out, err);
    if (subcommand == "loo") return loo_cmd(c, out, err);
    if (subcommand == "failures") return failures_cmd(c, out);
    throw ConfigError("unknown experiment '" + subcommand + "'");
  });
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Phase-order exploration and suggestion"};
  app.require_subcommand(1);
  app.fallthrough();

  CliConfig c;
  std::string backend = "simulator";
  std::string kb, records, toolchain, catalog, suite, out_dir = ".", ir;
  auto& ex = c.exploration;

  // A repeated option keeps its last value.
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.add_option("--backend", backend, "simulator or toolchain")
      ->check(CLI::IsMember({"simulator", "toolchain"}))
      ->capture_default_str();
  app.add_option("--catalog", catalog, "Pass catalog file");
  app.add_option("--toolchain", toolchain, "Toolchain spec (JSON)");
  app.add_option("--suite", suite, "Kernel suite (JSON)");
  app.add_option("--kb", kb, "Knowledge base path (default <out-dir>/kb.json)");
  app.add_option("--records", records, "Records CSV for failures (default <out-dir>/records.csv)");
  app.add_option("--out-dir", out_dir, "Output directory")->capture_default_str();
  app.add_option("--seed", ex.seed)->capture_default_str();
  app.add_option("--num-sequences", ex.num_sequences)->capture_default_str();
  app.add_option("--max-len", ex.max_len)->capture_default_str();
  app.add_option("--top-k", ex.top_k)->capture_default_str();
  app.add_option("--final-reps", ex.final_reps)->capture_default_str();
  app.add_option("--final-random-inputs", ex.final_random_inputs)->capture_default_str();
  app.add_option("--rtol", ex.rtol)->capture_default_str();
  app.add_option("--atol", ex.atol)->capture_default_str();
  app.add_option("--jobs", ex.jobs)->capture_default_str();
  app.add_option("--timeout-factor", c.timeout_factor)->capture_default_str();
  app.add_option("--epsilon", c.epsilon, "Reduction tolerance")->capture_default_str();
  app.add_option("--bucket-width", c.bucket_width)->capture_default_str();
  app.add_option("--k", c.k)->capture_default_str();
  app.add_option("--trials", c.trials)->capture_default_str();
  app.add_option("--ir", ir, "IR file of the query kernel");
  app.add_flag("--dry-run", c.dry_run, "Print suggestions without evaluating them");

  auto* explore_cmd = app.add_subcommand("explore", "Search, finalize and reduce; update the knowledge base");
  explore_cmd->add_option("kernels", c.kernel_ids, "Kernel ids (default: all)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);

  std::string suggest_kernel;
  auto* suggest_cmd = app.add_subcommand("suggest", "kNN suggestions for a kernel");
  suggest_cmd->add_option("kernel", suggest_kernel)->required();

  auto* exp_cmd = app.add_subcommand("experiments", "Offline experiments");
  exp_cmd->require_subcommand(1);
  exp_cmd->fallthrough();
  for (const char* name : {"cross-apply", "permute", "loo", "failures"}) {
    auto* sub = exp_cmd->add_subcommand(name);
    sub->add_option("kernels", c.kernel_ids)->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  c.backend = backend == "toolchain" ? BackendKind::Toolchain : BackendKind::Simulator;
  c.catalog = catalog;
  c.toolchain = toolchain;
  c.suite = suite;
  c.kb = kb;
  c.records = records;
  c.out_dir = out_dir;
  if (!ir.empty()) c.ir = fs::path(ir);

  if (*explore_cmd) return cmd_explore(c, out, err);
  if (*suggest_cmd) return cmd_suggest(c, suggest_kernel, out, err);
  for (auto* sub : exp_cmd->get_subcommands()) {
    if (*sub) return cmd_experiments(sub->get_name(), c, out, err);
  }
  return kExitConfig;
}

}  // namespace phaseforge
