#include <chrono>
#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "phaseforge/backend.hpp"
#include "phaseforge/digest.hpp"
#include "phaseforge/error.hpp"

using namespace phaseforge;
using testutil::order_of;
namespace fs = std::filesystem;

namespace {

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Stub toolchain: the optimizer appends the pass list, -crash makes it exit 1
// and -noout makes it exit 0 without writing. The runner picks its
// behaviour from the data argument.
struct StubToolchain {
  testutil::TempDir dir;
  KernelCase kernel;
  ToolchainSpec spec;

  StubToolchain() {
    write(dir / "kernel.cl", "kernel body\n");
    write(dir / "opt.sh",
          "in=$1; out=$2; shift 2\n"
          "for p in \"$@\"; do\n"
          "  [ \"$p\" = -crash ] && exit 1\n"
          "  [ \"$p\" = -noout ] && exit 0\n"
          "done\n"
          "{ cat \"$in\"; echo \"$@\"; } > \"$out\"\n");
    write(dir / "codegen.sh",
          "grep -q badcg \"$1\" && exit 3\n"
          "cat \"$1\" > \"$2\"\n");
    write(dir / "run.sh",
          "case \"$2\" in\n"
          "  ok) printf 'TIME 0.25\\nOUT 2\\n1.5\\n2.5\\n' ;;\n"
          "  kind) printf 'TIME 1\\nOUT 1\\n%s\\n' \"$(printf %s \"$3\" | wc -c)\" ;;\n"
          "  random:*) printf 'TIME 1\\nOUT 1\\n%s\\n' \"${2#random:}\" ;;\n"
          "  sleep) sleep 5; printf 'TIME 1\\nOUT 0\\n' ;;\n"
          "  garbage) echo 'segmentation fault (core dumped)' ;;\n"
          "  exit1) exit 1 ;;\n"
          "  signal) kill -9 $$ ;;\n"
          "  fail-with-report) printf 'TIME 2\\nOUT 0\\n'; exit 4 ;;\n"
          "  fail-with-garbage) echo oops; exit 4 ;;\n"
          "esac\n");
    const auto d = dir.path().string();
    spec.frontend_cmd = "cp {input} {output}";
    spec.optimizer_cmd = "sh " + d + "/opt.sh {input} {output} {passes}";
    spec.linker_cmd = "cat {input} > {output}";
    spec.codegen_cmd = "sh " + d + "/codegen.sh {input} {output}";
    spec.runner_cmd = "sh " + d + "/run.sh {artifact} {data} {kind}";
    spec.work_dir = dir / "work";
    spec.exec_timeout = std::chrono::duration<double>(0.5);

    kernel.id = "k";
    kernel.source = dir / "kernel.cl";
    kernel.validation_input = "ok";
    kernel.measurement_input = "ok";
    kernel.reference_outputs = {1.5, 2.5};
  }
};

}  // namespace

TEST_CASE("report parser") {
  const auto r = parse_report("TIME 0.5\nOUT 2\n1.0\n-2.5e3\n");
  REQUIRE(r);
  CHECK(r->wall_time == 0.5);
  CHECK(r->outputs == std::vector<double>{1.0, -2500.0});

  CHECK(parse_report("TIME 1\nOUT 0"));
  CHECK(parse_report("TIME 1\nOUT 0\n"));
  CHECK(parse_report("TIME .5\nOUT 1\n3.\n"));

  CHECK_FALSE(parse_report(""));
  CHECK_FALSE(parse_report("garbage"));
  CHECK_FALSE(parse_report("TIME 1\n"));
  CHECK_FALSE(parse_report("TIME 0\nOUT 0\n"));
  CHECK_FALSE(parse_report("TIME -1\nOUT 0\n"));
  CHECK_FALSE(parse_report("TIME nan\nOUT 0\n"));
  CHECK_FALSE(parse_report("TIME inf\nOUT 0\n"));
  CHECK_FALSE(parse_report("TIME  1\nOUT 0\n"));
  CHECK_FALSE(parse_report("time 1\nOUT 0\n"));
  CHECK_FALSE(parse_report("TIME 1\nOUT 2\n1\n"));
  CHECK_FALSE(parse_report("TIME 1\nOUT 1\n1\n2\n"));
  CHECK_FALSE(parse_report("TIME 1\nOUT 1\n1\n\n"));
  CHECK_FALSE(parse_report("TIME 1\nOUT -1\n"));
  CHECK_FALSE(parse_report("TIME 1\nOUT 1\nabc\n"));
  CHECK_FALSE(parse_report("TIME 1\r\nOUT 0\r\n"));
  CHECK_FALSE(parse_report("TIME 1e\nOUT 0\n"));
}

TEST_CASE("substitute and shell_quote") {
  CHECK(substitute("opt {passes} {input} -o {output} {other}",
                   {{"passes", "-licm -gvn"}, {"input", "a.ll"}, {"output", "b.ll"}}) ==
        "opt -licm -gvn a.ll -o b.ll {other}");
  CHECK(substitute("{a}{a}", {{"a", "x"}}) == "xx");
  CHECK(substitute("no braces", {}) == "no braces");
  CHECK(substitute("open {brace", {}) == "open {brace");
  CHECK(shell_quote("plain") == "'plain'");
  CHECK(shell_quote("it's") == "'it'\\''s'");
  CHECK(run_command("printf %s " + shell_quote("a 'b' $c")).out == "a 'b' $c");
}

TEST_CASE("toolchain spec validation") {
  StubToolchain t;
  CHECK_NOTHROW(t.spec.validate());
  auto s = t.spec;
  SUBCASE("missing placeholder") {
    s.optimizer_cmd = "opt {input} -o {output}";
    CHECK_THROWS_AS(s.validate(), ConfigError);
  }
  SUBCASE("repeated placeholder") {
    s.linker_cmd = "link {input} {input} -o {output}";
    CHECK_THROWS_AS(s.validate(), ConfigError);
  }
  SUBCASE("repeated optional placeholder") {
    s.runner_cmd = "run {artifact} {data} {kind} {kind}";
    CHECK_THROWS_AS(s.validate(), ConfigError);
  }
  SUBCASE("timeout") {
    s.exec_timeout = std::chrono::duration<double>(0.0);
    CHECK_THROWS_AS(s.validate(), ConfigError);
  }
  SUBCASE("json") {
    write(t.dir / "tc.json", R"({"frontend_cmd": "cp {input} {output}",
      "optimizer_cmd": "opt {passes} {input} -o {output}", "linker_cmd": "cp {input} {output}",
      "codegen_cmd": "cp {input} {output}", "runner_cmd": "run {artifact} {data}",
      "work_dir": "scratch", "exec_timeout_s": 2.5})");
    const auto loaded = ToolchainSpec::load(t.dir / "tc.json");
    CHECK(loaded.work_dir == t.dir / "scratch");
    CHECK(loaded.exec_timeout.count() == 2.5);
    CHECK_THROWS_AS(ToolchainSpec::from_json("{}"), ConfigError);
    CHECK_THROWS_AS(ToolchainSpec::load(t.dir / "missing.json"), IoError);
  }
}

TEST_CASE("toolchain compile") {
  StubToolchain t;
  ToolchainBackend backend(t.spec);

  SUBCASE("empty order equals a direct frontend + codegen run") {
    const auto outcome = backend.compile(t.kernel, PhaseOrder{});
    const auto* a = artifact_of(outcome);
    REQUIRE(a);
    const auto d = t.dir.path();
    const auto direct = run_command("cp " + shell_quote((d / "kernel.cl").string()) + " " +
                                    shell_quote((d / "a.ll").string()) + " && sh " +
                                    shell_quote((d / "codegen.sh").string()) + " " +
                                    shell_quote((d / "a.ll").string()) + " " + shell_quote((d / "b.out").string()));
    REQUIRE(direct.exit_code == 0);
    CHECK(a->digest == sha256_hex(slurp(d / "b.out")));
  }
  SUBCASE("passes reach the optimizer") {
    const auto a_outcome = backend.compile(t.kernel, order_of({"licm", "gvn"}));
    const auto* a = artifact_of(a_outcome);
    REQUIRE(a);
    CHECK(a->content == "kernel body\n-licm -gvn\n");
  }
  SUBCASE("same order twice gives the same digest") {
    const auto x = backend.compile(t.kernel, order_of({"sroa"}));
    const auto y = backend.compile(t.kernel, order_of({"sroa"}));
    REQUIRE(artifact_of(x));
    REQUIRE(artifact_of(y));
    CHECK(artifact_of(x)->digest == artifact_of(y)->digest);
  }
  SUBCASE("optimizer crash") {
    const auto outcome = backend.compile(t.kernel, order_of({"licm", "crash"}));
    REQUIRE(std::holds_alternative<OptimizerFailure>(outcome));
    CHECK(std::get<OptimizerFailure>(outcome).log.find("exit 1") != std::string::npos);
  }
  SUBCASE("optimizer without output file") {
    CHECK(std::holds_alternative<OptimizerFailure>(backend.compile(t.kernel, order_of({"noout"}))));
  }
  SUBCASE("codegen failure") {
    CHECK(std::holds_alternative<CodegenFailure>(backend.compile(t.kernel, order_of({"badcg"}))));
  }
  SUBCASE("frontend failure is a configuration error") {
    t.kernel.source = t.dir / "missing.cl";
    CHECK_THROWS_AS(backend.compile(t.kernel, PhaseOrder{}), ConfigError);
  }
  SUBCASE("job directories are cleaned up") {
    backend.compile(t.kernel, order_of({"licm"}));
    backend.compile(t.kernel, order_of({"crash"}));
    std::size_t jobs = 0;
    for (const auto& e : fs::directory_iterator(t.spec.work_dir / "k")) {
      if (e.path().filename().string().starts_with("job-")) ++jobs;
    }
    CHECK(jobs == 0);
  }
}

TEST_CASE("toolchain execute") {
  StubToolchain t;
  ToolchainBackend backend(t.spec);
  const auto outcome = backend.compile(t.kernel, order_of({"licm"}));
  const auto* a = artifact_of(outcome);
  REQUIRE(a);
  const auto run_with = [&](const std::string& data) {
    t.kernel.measurement_input = data;
    return backend.execute(t.kernel, *a, RunInput::measurement());
  };

  SUBCASE("well-formed report") {
    const auto r = run_with("ok");
    CHECK(r.status == ExecStatus::Valid);
    CHECK(*r.wall_time == 0.25);
    CHECK(*r.outputs == std::vector<double>{1.5, 2.5});
  }
  SUBCASE("sleeping runner times out") {
    const auto start = std::chrono::steady_clock::now();
    const auto r = run_with("sleep");
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    CHECK(r.status == ExecStatus::Timeout);
    CHECK_FALSE(r.outputs);
    CHECK_FALSE(r.wall_time);
    CHECK(elapsed.count() < 2.0);
  }
  SUBCASE("garbage report") { CHECK(run_with("garbage").status == ExecStatus::BrokenReport); }
  SUBCASE("nonzero exit without report") { CHECK(run_with("exit1").status == ExecStatus::Crash); }
  SUBCASE("killed by a signal") { CHECK(run_with("signal").status == ExecStatus::Crash); }
  SUBCASE("nonzero exit with a report") { CHECK(run_with("fail-with-report").status == ExecStatus::Valid); }
  SUBCASE("nonzero exit with garbage") { CHECK(run_with("fail-with-garbage").status == ExecStatus::Crash); }
  SUBCASE("input kind reaches the runner") {
    const auto r = run_with("kind");
    REQUIRE(r.outputs);
    CHECK((*r.outputs)[0] == double(std::string("measurement").size()));
  }
  SUBCASE("generated inputs and their reference") {
    const auto r = backend.execute(t.kernel, *a, RunInput::random(42));
    REQUIRE(r.outputs);
    CHECK((*r.outputs)[0] == 42.0);
    CHECK(backend.reference_outputs(t.kernel, RunInput::random(42)) == std::vector<double>{42.0});
    CHECK(backend.reference_outputs(t.kernel, RunInput::validation()) == t.kernel.reference_outputs);
  }
  SUBCASE("artifacts are stored by digest") {
    run_with("ok");
    CHECK(fs::exists(t.spec.work_dir / "k" / "artifacts" / (a->digest + ".out")));
  }
}

TEST_CASE("run_command") {
  SUBCASE("captures both streams and the exit code") {
    const auto r = run_command("echo out; echo err >&2; exit 7");
    CHECK(r.out == "out\n");
    CHECK(r.err == "err\n");
    CHECK(r.exit_code == 7);
    CHECK_FALSE(r.timed_out);
  }
  SUBCASE("timeout kills the whole process group") {
    const auto start = std::chrono::steady_clock::now();
    const auto r = run_command("sleep 10 & sleep 10; wait", std::chrono::duration<double>(0.2));
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    CHECK(r.timed_out);
    CHECK(elapsed.count() < 2.0);
  }
  SUBCASE("large output does not deadlock") {
    const auto r = run_command("head -c 300000 /dev/zero | tr '\\0' x");
    CHECK(r.out.size() == 300000);
  }
}
