// Acceptance checks; prints one PASS/FAIL line per criterion and exits
// nonzero if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "helpers.hpp"
#include "irgen.hpp"
#include "phaseforge/advisor.hpp"
#include "phaseforge/cli.hpp"
#include "phaseforge/explorer.hpp"
#include "phaseforge/irfeat.hpp"
#include "phaseforge/results.hpp"

using namespace phaseforge;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(int id, const char* title, double budget_s, const std::function<Outcome()>& fn) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const std::chrono::duration<double> took = std::chrono::steady_clock::now() - start;
  if (took.count() >= budget_s) {
    o.pass = false;
    o.detail += "; over time budget";
  }
  if (!o.pass) ++failures;
  std::printf("%s %2d  %s: %s [%.2f s of %.0f s]\n", o.pass ? "PASS" : "FAIL", id, title, o.detail.c_str(),
              took.count(), budget_s);
  std::fflush(stdout);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

PassCatalog numbered_catalog(std::size_t n) {
  std::vector<PassId> passes;
  for (std::size_t i = 0; i < n; ++i) passes.emplace_back("p" + std::to_string(i));
  return PassCatalog(passes);
}

// Brute-force tolerance oracle.
bool oracle_close(const std::vector<double>& ref, const std::vector<double>& cand, double rtol, double atol) {
  if (ref.size() != cand.size()) return false;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double diff = cand[i] > ref[i] ? cand[i] - ref[i] : ref[i] - cand[i];
    const double mag = ref[i] < 0 ? -ref[i] : ref[i];
    if (!(diff <= (atol > rtol * mag ? atol : rtol * mag))) return false;
  }
  return true;
}

Outcome geomean_reproduction() {
  const std::vector<double> speedups{1.0, 1.05, 1.63, 1.82, 1.47, 1.48, 5.36, 5.7,
                                     1.0, 1.73, 1.02, 1.52, 1.44, 2.05, 1.14};
  const double g = geometric_mean(speedups);
  return {std::abs(g - 1.65) <= 0.02, "geomean " + fmt("%.6f", g) + " vs 1.65 +/- 0.02"};
}

Outcome planted_recovery() {
  const auto catalog = numbered_catalog(20);
  Rng rng(424242);
  int found = 0, reduced_exact = 0;
  std::ostringstream notes;
  for (int k = 0; k < 5; ++k) {
    const auto len = rng.between(2, 3);
    std::vector<PassId> motif;
    while (motif.size() < len) {
      PassId p = catalog.passes()[rng.below(catalog.size())];
      if (std::find(motif.begin(), motif.end(), p) == motif.end()) motif.push_back(p);
    }
    SimKernelModel m;
    m.baseline_time = 1.0 + rng.unit();
    m.seed_salt = 1000 + static_cast<std::uint64_t>(k);
    m.motifs.push_back({motif, 0.4 + 0.3 * rng.unit()});
    const auto kernel = testutil::sim_kernel("k" + std::to_string(k), m);

    SimulatorBackend backend;
    ExplorationConfig config;
    config.num_sequences = 5000;
    config.seed = kDefaultSeed;
    const auto records = explore(kernel, config, catalog, backend);
    const auto& best = records.front();
    if (!best.is_valid() || !contains_contiguous(best.order, motif)) continue;
    ++found;
    // Noise spans [0.99, 1.01), so two equal-factor orders differ by up to
    // 1.01 / 0.99; the tolerance has to cover that ratio.
    ReduceOptions ro;
    ro.epsilon = 0.025;
    const auto reduced = reduce_order(kernel, best.order, backend, ro);
    if (reduced.passes == motif) ++reduced_exact;
    notes << ' ' << kernel.id << ':' << best.order.size() << "->" << reduced.size();
  }
  return {found >= 4 && reduced_exact == found,
          std::to_string(found) + "/5 best orders contain the motif, " + std::to_string(reduced_exact) +
              " reduce to it exactly (lengths" + notes.str() + ")"};
}

Outcome failure_calibration() {
  SimKernelModel m;
  m.baseline_time = 1.0;
  m.seed_salt = 17;
  m.failure_rates = {0.03, 0.13, 0.17};
  const auto kernel = testutil::sim_kernel("calib", m);
  SimulatorBackend backend;
  ExplorationConfig config;
  config.num_sequences = 10000;
  ResultsStore store;
  store.append_all(explore(kernel, config, numbered_catalog(20), backend));
  const auto summary = failure_summary(store);
  const auto at = [&](const char* s) { return summary.count(s) ? summary.at(s) : 0.0; };
  const double no_ir = at("NoIr"), incorrect = at("InvalidOutput"), broken = at("BrokenReport");
  const bool ok = std::abs(no_ir - 0.03) <= 0.02 && std::abs(incorrect - 0.13) <= 0.02 &&
                  std::abs(broken - 0.17) <= 0.02;
  return {ok, "NoIr " + fmt("%.4f", no_ir) + ", InvalidOutput " + fmt("%.4f", incorrect) + ", BrokenReport " +
                  fmt("%.4f", broken)};
}

Outcome dedup_correctness() {
  SimKernelModel m;
  m.baseline_time = 1.0;
  m.seed_salt = 5;
  m.failure_rates = {0.03, 0.13, 0.17};
  m.motifs.push_back({testutil::passes_of({"b", "c"}), 0.6});
  const auto kernel = testutil::sim_kernel("dedup", m);
  const PassCatalog catalog(testutil::passes_of({"a", "b", "c", "nop"}), {PassId("nop")});
  ExplorationConfig config;
  config.num_sequences = 3000;
  config.max_len = 5;
  config.seed = 31337;
  config.jobs = 4;

  SimulatorBackend sim(catalog.noops());
  testutil::CountingBackend counting(sim);
  const auto csv = records_csv(explore(kernel, config, catalog, counting));
  // Replay with a fresh backend and cross-check the CSV.
  SimulatorBackend replay_sim(catalog.noops());
  testutil::CountingBackend replay(replay_sim);
  const auto replay_csv = records_csv(explore(kernel, config, catalog, replay));

  const auto records = parse_records_csv(csv);
  std::set<std::string> digests;
  std::size_t fresh = 0;
  for (const auto& r : records) {
    if (!r.digest) continue;
    digests.insert(*r.digest);
    if (r.status != RecordStatus::ReusedFrom) ++fresh;
  }
  const bool ok = counting.validation_runs == digests.size() && fresh == digests.size() && csv == replay_csv &&
                  replay.validation_runs == counting.validation_runs && digests.size() < records.size();
  return {ok, std::to_string(counting.validation_runs) + " fresh executions, " + std::to_string(digests.size()) +
                  " distinct digests over " + std::to_string(records.size()) + " candidates; replay " +
                  (csv == replay_csv ? "identical" : "differs")};
}

Outcome comparator_suite() {
  int disagreements = 0;
  const bool examples = compare_outputs(std::vector{1.0, 2.0}, std::vector{1.005, 2.0}, 0.01, 1e-6) &&
                        !compare_outputs(std::vector{1.0, 2.0}, std::vector{1.02, 2.0}, 0.01, 1e-6) &&
                        compare_outputs(std::vector{0.0}, std::vector{1e-7}, 0.01, 1e-6);
  Rng rng(2024);
  for (int i = 0; i < 1000; ++i) {
    const auto n = rng.below(6);
    std::vector<double> ref(n), cand(n);
    for (std::size_t j = 0; j < n; ++j) {
      ref[j] = rng.below(5) == 0 ? 0.0 : (rng.unit() - 0.5) * 1e3;
      cand[j] = ref[j] + (rng.unit() - 0.5) * 0.05 * (std::abs(ref[j]) + 1e-5);
    }
    if (rng.below(25) == 0) cand.pop_back();
    const double rtol = rng.unit() * 0.03;
    const double atol = rng.unit() * 1e-5;
    if (compare_outputs(ref, cand, rtol, atol) != oracle_close(ref, cand, rtol, atol)) ++disagreements;
  }
  return {examples && disagreements == 0, std::string("examples ") + (examples ? "ok" : "wrong") + ", " +
                                              std::to_string(disagreements) + " disagreements in 1000 cases"};
}

Outcome knn_vs_random() {
  // Four groups of kernels. Kernels in a group share a motif and a feature
  // direction; the directions differ across groups.
  Rng rng(77);
  const std::vector<std::vector<PassId>> motifs{testutil::passes_of({"licm", "gvn"}),
                                                testutil::passes_of({"sroa", "instcombine"}),
                                                testutil::passes_of({"loop-reduce", "licm"}),
                                                testutil::passes_of({"reg2mem", "sink"})};
  const std::vector<int> group_of{0, 0, 0, 1, 1, 1, 2, 2, 3, 3};
  std::vector<FeatureVector> centroids(motifs.size());
  for (auto& c : centroids) {
    for (auto& v : c.values) v = rng.below(3) == 0 ? static_cast<double>(rng.below(40)) : 0.0;
    c.values[rng.below(kFeatureCount)] += 20.0;
  }
  std::vector<KernelCase> kernels;
  ReferenceSet refset;
  for (std::size_t i = 0; i < group_of.size(); ++i) {
    const auto g = static_cast<std::size_t>(group_of[i]);
    SimKernelModel m;
    m.baseline_time = 0.5 + rng.unit();
    m.seed_salt = 500 + i;
    m.motifs.push_back({motifs[g], 0.4 + 0.3 * rng.unit()});
    kernels.push_back(testutil::sim_kernel("k" + std::to_string(i), m));
    FeatureVector f = centroids[g];
    for (auto& v : f.values) v += static_cast<double>(rng.below(3));
    refset.add({kernels.back().id, f, PhaseOrder{motifs[g]}});
  }
  SimulatorBackend backend;
  LooOptions opts;
  opts.k_max = 5;
  opts.trials = 1000;
  const auto table = leave_one_out(refset, kernels, backend, opts);
  const auto& knn = table.curves.at("knn");
  const auto& random = table.curves.at("random");
  bool ok = knn[0] > random[0];
  std::string detail = "knn/random:";
  for (std::size_t n = 0; n < 5; ++n) {
    ok = ok && knn[n] >= random[n];
    detail += " " + fmt("%.3f", knn[n]) + "/" + fmt("%.3f", random[n]);
  }
  return {ok, detail};
}

Outcome permutation_sensitivity() {
  SimKernelModel m;
  m.baseline_time = 1.0;
  m.seed_salt = 8;
  m.motifs.push_back({testutil::passes_of({"a", "b"}), 0.5});
  m.motifs.push_back({testutil::passes_of({"c", "d"}), 0.8});
  const auto kernel = testutil::sim_kernel("perm", m);
  const auto best = testutil::order_of({"a", "b", "c", "d"});
  SimulatorBackend backend;
  const auto best_eval = evaluate_order(kernel, best, backend);

  Rng rng(3);
  const auto perms = random_permutations(best, 1000, rng);
  std::vector<EvaluationRecord> records;
  for (std::size_t i = 0; i < perms.size(); ++i) {
    const auto ev = evaluate_order(kernel, perms[i], backend);
    records.push_back({kernel.id, perms[i], ev.digest, ev.status, ev.time, i});
  }
  const auto hist = permutation_histogram(records, *best_eval.time, 0.05);
  double below = 0.0;
  for (const auto& b : hist) {
    if (!b.failed && b.high <= 0.95 + 1e-12) below += b.percent;
  }

  // Brute force over all 24 orderings with the model's own arithmetic.
  std::vector<std::size_t> idx{0, 1, 2, 3};
  int total = 0, slow = 0;
  do {
    PhaseOrder p;
    for (auto i : idx) p.passes.push_back(best.passes[i]);
    const auto ev = sim_evaluate(m, p);
    const double ratio = std::min(1.0, *best_eval.time / *ev.execution->wall_time);
    ++total;
    if (ratio < 0.95) ++slow;
  } while (std::next_permutation(idx.begin(), idx.end()));
  const double brute = 100.0 * slow / total;
  const bool ok = perms.size() == 24 && std::abs(below - brute) <= 1e-9 && below >= 50.0;
  return {ok, fmt("%.2f", below) + "% below 0.95 (brute force " + fmt("%.2f", brute) + "% of " +
                  std::to_string(total) + ")"};
}

Outcome parser_oracle() {
  const auto v = extract_features(parse_ir("func f {\nA:\n condbr B C\nB:\n br C\nC:\n ret\n}\n"));
  FeatureVector expect;
  expect.values[0] = 3;   // blocks
  expect.values[1] = 1;   // one successor
  expect.values[2] = 1;   // two successors
  expect.values[4] = 1;   // one predecessor
  expect.values[5] = 1;   // two predecessors
  expect.values[7] = 1;   // one pred and one succ
  expect.values[8] = 3;   // edges
  expect.values[9] = 3;   // instructions
  expect.values[10] = 1;  // per block
  expect.values[14] = 1;  // conditional branches
  expect.values[15] = 1;  // unconditional branches
  expect.values[23] = 1;  // functions
  const bool hand = v == expect;

  Rng rng(500);
  int violations = 0;
  for (int i = 0; i < 500; ++i) {
    const auto fns = irgen::generate(rng);
    const auto m = parse_ir(irgen::render(fns, rng));
    const auto f = extract_features(m);
    if (!irgen::degree_consistent(m, f) || f != irgen::oracle(fns)) ++violations;
  }
  return {hand && violations == 0, std::string("hand-counted vector ") + (hand ? "matches" : "differs") + ", " +
                                       std::to_string(violations) + " violations in 500 random modules"};
}

Outcome cli_determinism() {
  const fs::path data = PHASEFORGE_TEST_DATA;
  testutil::TempDir a, b;
  const auto run = [&](const fs::path& out) {
    const std::vector<std::string> args{"phaseforge", "explore", "--catalog", (data / "passes.txt").string(),
                                        "--suite", (data / "suite.json").string(), "--out-dir", out.string(),
                                        "--num-sequences", "1000", "--final-reps", "5", "--jobs", "4"};
    std::vector<const char*> argv;
    for (const auto& s : args) argv.push_back(s.c_str());
    std::ostringstream o, e;
    return run_cli(static_cast<int>(argv.size()), argv.data(), o, e);
  };
  const int ca = run(a.path());
  const int cb = run(b.path());
  const bool same = read_text_file(a / "records.csv") == read_text_file(b / "records.csv") &&
                    read_text_file(a / "kb.json") == read_text_file(b / "kb.json");
  return {ca == 0 && cb == 0 && same, "exit codes " + std::to_string(ca) + "/" + std::to_string(cb) + ", outputs " +
                                          (same ? "byte-identical" : "differ")};
}

Outcome table_round_trip() {
  const std::vector<std::string> orders{
      "-cfl-anders-aa -dse -loop-reduce -licm -instcombine",
      "-loop-reduce -gvn-hoist -reg2mem -cfl-anders-aa -sroa -licm",
      "-bb-vectorize -loop-reduce -licm -cfl-anders-aa",
      "-gvn -loop-reduce -cfl-anders-aa -licm -loop-reduce",
      "-cfl-anders-aa -loop-reduce -gvn -sink -loop-extract-single -loop-unswitch -loop-unswitch -ipsccp -reg2mem "
      "-licm -nvptx-lower-alloca",
      "-cfl-anders-aa -loop-unswitch -reassociate -jump-threading -loop-reduce -gvn -loop-unswitch -reassociate "
      "-sink -loop-unswitch -loop-reduce -jump-threading -reg2mem -licm -nvptx-lower-alloca",
      "-cfl-anders-aa -print-memdeps -loop-reduce -licm",
      "-instcombine -reg2mem -mem2reg",
      "-sink -reg2mem -licm -cfl-anders-aa -sroa",
      "-gvn -loop-reduce -cfl-anders-aa -licm",
      "-loop-reduce -loop-unroll -instcombine -loop-reduce -licm -cfl-anders-aa",
      "-licm -cfl-anders-aa -reg2mem -licm -sroa",
  };
  int ok = 0;
  for (const auto& o : orders) {
    if (render_phase_order(parse_phase_order(o)) == o) ++ok;
  }
  return {ok == static_cast<int>(orders.size()), std::to_string(ok) + "/" + std::to_string(orders.size()) +
                                                     " orders re-render byte-identically"};
}

}  // namespace

int main() {
  criterion(1, "geometric-mean reproduction", 1, geomean_reproduction);
  criterion(2, "planted-optimum recovery", 60, planted_recovery);
  criterion(3, "failure-rate calibration", 30, failure_calibration);
  criterion(4, "dedup correctness", 10, dedup_correctness);
  criterion(5, "tolerance comparator suite", 10, comparator_suite);
  criterion(6, "kNN beats random", 300, knn_vs_random);
  criterion(7, "permutation sensitivity", 10, permutation_sensitivity);
  criterion(8, "parser/feature oracle", 10, parser_oracle);
  criterion(9, "explore determinism", 60, cli_determinism);
  criterion(10, "phase-order table round trip", 1, table_round_trip);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
