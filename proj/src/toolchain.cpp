#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cctype>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "phaseforge/backend.hpp"
#include "phaseforge/error.hpp"

namespace phaseforge {

namespace fs = std::filesystem;

namespace {

std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::string_view::npos; pos = haystack.find(needle, pos + 1)) {
    ++n;
  }
  return n;
}

void require_placeholders(std::string_view stage, std::string_view tmpl,
                          std::initializer_list<std::string_view> required,
                          std::initializer_list<std::string_view> optional = {}) {
  if (tmpl.empty()) throw ConfigError("toolchain: " + std::string(stage) + " template is empty");
  for (auto name : required) {
    const auto n = count_occurrences(tmpl, "{" + std::string(name) + "}");
    if (n != 1) {
      throw ConfigError("toolchain: " + std::string(stage) + " template must contain {" + std::string(name) +
                        "} exactly once (found " + std::to_string(n) + ")");
    }
  }
  for (auto name : optional) {
    if (count_occurrences(tmpl, "{" + std::string(name) + "}") > 1) {
      throw ConfigError("toolchain: " + std::string(stage) + " template repeats {" + std::string(name) + "}");
    }
  }
}

bool is_decimal(std::string_view s) {
  std::size_t i = 0;
  if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
  std::size_t int_digits = 0, frac_digits = 0;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i, ++int_digits;
  if (i < s.size() && s[i] == '.') {
    ++i;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i, ++frac_digits;
  }
  if (int_digits + frac_digits == 0) return false;
  if (i < s.size() && (s[i] == 'e' || s[i] == 'E')) {
    ++i;
    if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
    std::size_t exp_digits = 0;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i, ++exp_digits;
    if (exp_digits == 0) return false;
  }
  return i == s.size();
}

std::optional<double> parse_decimal(std::string_view s) {
  if (!is_decimal(s)) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string stage_log(std::string_view stage, const ProcessResult& r) {
  std::string log = std::string(stage);
  if (r.timed_out) {
    log += ": timed out";
  } else if (r.signaled) {
    log += ": killed by signal";
  } else {
    log += ": exit " + std::to_string(r.exit_code);
  }
  if (!r.err.empty()) log += "\n" + r.err;
  return log;
}

bool blank(std::string_view s) { return s.find_first_not_of(" \t\r\n") == std::string_view::npos; }

}  // namespace

void ToolchainSpec::validate() const {
  require_placeholders("frontend", frontend_cmd, {"input", "output"});
  require_placeholders("optimizer", optimizer_cmd, {"input", "output", "passes"});
  require_placeholders("linker", linker_cmd, {"input", "output"});
  require_placeholders("codegen", codegen_cmd, {"input", "output"});
  require_placeholders("runner", runner_cmd, {"artifact", "data"}, {"kind"});
  if (!(exec_timeout.count() > 0.0)) throw ConfigError("toolchain: exec_timeout must be positive");
  if (work_dir.empty()) throw ConfigError("toolchain: work_dir is required");
}

ToolchainSpec ToolchainSpec::from_json(std::string_view text) {
  ToolchainSpec spec;
  try {
    const auto j = nlohmann::json::parse(text);
    spec.frontend_cmd = j.at("frontend_cmd").get<std::string>();
    spec.optimizer_cmd = j.at("optimizer_cmd").get<std::string>();
    spec.linker_cmd = j.at("linker_cmd").get<std::string>();
    spec.codegen_cmd = j.at("codegen_cmd").get<std::string>();
    spec.runner_cmd = j.at("runner_cmd").get<std::string>();
    spec.work_dir = j.at("work_dir").get<std::string>();
    spec.exec_timeout = std::chrono::duration<double>(j.at("exec_timeout_s").get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("toolchain spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

ToolchainSpec ToolchainSpec::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open toolchain spec " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  auto spec = from_json(buf.str());
  if (spec.work_dir.is_relative()) spec.work_dir = path.parent_path() / spec.work_dir;
  return spec;
}

std::string substitute(std::string_view tmpl, const std::map<std::string, std::string>& values) {
  std::string out;
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find('{', pos);
    if (open == std::string_view::npos) break;
    const auto close = tmpl.find('}', open);
    if (close == std::string_view::npos) break;
    out.append(tmpl.substr(pos, open - pos));
    const auto it = values.find(std::string(tmpl.substr(open + 1, close - open - 1)));
    if (it != values.end()) {
      out += it->second;
    } else {
      out.append(tmpl.substr(open, close - open + 1));
    }
    pos = close + 1;
  }
  out.append(tmpl.substr(std::min(pos, tmpl.size())));
  return out;
}

std::string shell_quote(std::string_view s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  out += '\'';
  return out;
}

std::optional<Report> parse_report(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    lines.push_back(text.substr(pos, eol - pos));
    pos = eol + 1;
  }
  if (lines.size() < 2) return std::nullopt;
  if (!lines[0].starts_with("TIME ") || !lines[1].starts_with("OUT ")) return std::nullopt;

  Report report;
  const auto time = parse_decimal(lines[0].substr(5));
  if (!time || !(*time > 0.0)) return std::nullopt;
  report.wall_time = *time;

  const auto count_text = lines[1].substr(4);
  if (count_text.empty() || count_text.find_first_not_of("0123456789") != std::string_view::npos) {
    return std::nullopt;
  }
  std::size_t n = 0;
  const auto [ptr, ec] = std::from_chars(count_text.data(), count_text.data() + count_text.size(), n);
  if (ec != std::errc()) return std::nullopt;
  if (lines.size() != n + 2) return std::nullopt;

  report.outputs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = parse_decimal(lines[i + 2]);
    if (!v) return std::nullopt;
    report.outputs.push_back(*v);
  }
  return report;
}

ProcessResult run_command(const std::string& command, std::optional<std::chrono::duration<double>> timeout) {
  int out_pipe[2];
  int err_pipe[2];
  if (pipe(out_pipe) != 0) throw Error(std::string("pipe: ") + std::strerror(errno));
  if (pipe(err_pipe) != 0) {
    close(out_pipe[0]);
    close(out_pipe[1]);
    throw Error(std::string("pipe: ") + std::strerror(errno));
  }

  const pid_t pid = fork();
  if (pid < 0) throw Error(std::string("fork: ") + std::strerror(errno));
  if (pid == 0) {
    setpgid(0, 0);
    dup2(out_pipe[1], STDOUT_FILENO);
    dup2(err_pipe[1], STDERR_FILENO);
    close(out_pipe[0]);
    close(out_pipe[1]);
    close(err_pipe[0]);
    close(err_pipe[1]);
    const int devnull = open("/dev/null", O_RDONLY);
    if (devnull >= 0) dup2(devnull, STDIN_FILENO);
    execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  setpgid(pid, pid);
  close(out_pipe[1]);
  close(err_pipe[1]);
  fcntl(out_pipe[0], F_SETFL, O_NONBLOCK);
  fcntl(err_pipe[0], F_SETFL, O_NONBLOCK);

  ProcessResult result;
  const auto start = std::chrono::steady_clock::now();
  std::array<pollfd, 2> fds{pollfd{out_pipe[0], POLLIN, 0}, pollfd{err_pipe[0], POLLIN, 0}};
  std::array<std::string*, 2> sinks{&result.out, &result.err};
  std::array<char, 4096> buf{};

  const auto drain = [&] {
    for (std::size_t i = 0; i < fds.size(); ++i) {
      if (fds[i].fd < 0) continue;
      for (;;) {
        const auto n = read(fds[i].fd, buf.data(), buf.size());
        if (n > 0) {
          sinks[i]->append(buf.data(), static_cast<std::size_t>(n));
          continue;
        }
        if (n == 0) {
          close(fds[i].fd);
          fds[i].fd = -1;
        }
        break;
      }
    }
  };

  int status = 0;
  bool reaped = false;
  while (!reaped) {
    int wait_ms = 20;
    if (timeout) {
      const auto remaining = *timeout - (std::chrono::steady_clock::now() - start);
      if (remaining.count() <= 0) {
        kill(-pid, SIGKILL);
        waitpid(pid, &status, 0);
        result.timed_out = true;
        reaped = true;
        break;
      }
      wait_ms = std::max(1, std::min(20, static_cast<int>(remaining.count() * 1000.0)));
    }
    poll(fds.data(), fds.size(), wait_ms);
    drain();
    if (waitpid(pid, &status, WNOHANG) == pid) reaped = true;
  }
  drain();
  for (auto& f : fds) {
    if (f.fd >= 0) close(f.fd);
  }
  // Kill stragglers left in the group.
  kill(-pid, SIGKILL);

  if (!result.timed_out) {
    if (WIFEXITED(status)) {
      result.exit_code = WEXITSTATUS(status);
    } else if (WIFSIGNALED(status)) {
      result.signaled = true;
    }
  }
  return result;
}

ToolchainBackend::ToolchainBackend(ToolchainSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  fs::create_directories(spec_.work_dir);
}

fs::path ToolchainBackend::job_dir(const KernelCase& kernel) {
  std::uint64_t job = 0;
  {
    std::lock_guard lock(mutex_);
    job = next_job_++;
  }
  auto dir = spec_.work_dir / kernel.id / ("job-" + std::to_string(job));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path ToolchainBackend::artifact_path(const KernelCase& kernel, const Artifact& artifact) {
  const auto dir = spec_.work_dir / kernel.id / "artifacts";
  const auto path = dir / (artifact.digest + ".out");
  std::lock_guard lock(mutex_);
  if (!fs::exists(path)) {
    fs::create_directories(dir);
    const auto tmp = dir / (artifact.digest + ".tmp");
    {
      std::ofstream out(tmp, std::ios::binary);
      out << artifact.content;
      if (!out) throw IoError("cannot write artifact " + tmp.string());
    }
    fs::rename(tmp, path);
  }
  return path;
}

CompileOutcome ToolchainBackend::compile(const KernelCase& kernel, const PhaseOrder& order) {
  const auto* source = kernel.source_path();
  if (!source) throw ConfigError("kernel '" + kernel.id + "' has no source path");
  const auto dir = job_dir(kernel);
  const auto frontend_out = dir / "frontend.ll";
  const auto optimized_out = dir / "optimized.ll";
  const auto linked_out = dir / "linked.ll";
  const auto codegen_out = dir / "kernel.out";

  // TODO: bound the compile stages with their own timeout once the toolchain
  // file carries one; a hanging optimizer currently stalls the job.
  const auto run_stage = [&](const std::string& tmpl, const fs::path& in, const fs::path& out,
                             const std::string& passes) {
    std::map<std::string, std::string> values{{"input", shell_quote(in.string())},
                                              {"output", shell_quote(out.string())}};
    if (!passes.empty()) values["passes"] = passes;
    auto r = run_command(substitute(tmpl, values));
    const bool ok = !r.timed_out && !r.signaled && r.exit_code == 0 && fs::exists(out);
    return std::pair{ok, r};
  };

  auto [fe_ok, fe] = run_stage(spec_.frontend_cmd, *source, frontend_out, {});
  if (!fe_ok) {
    fs::remove_all(dir);
    throw ConfigError("frontend failed for kernel '" + kernel.id + "': " + stage_log("frontend", fe));
  }

  fs::path ir = frontend_out;
  if (!order.empty()) {
    auto [ok, r] = run_stage(spec_.optimizer_cmd, frontend_out, optimized_out, render_phase_order(order));
    if (!ok) {
      fs::remove_all(dir);
      return OptimizerFailure{stage_log("optimizer", r)};
    }
    ir = optimized_out;
  }

  auto [link_ok, link] = run_stage(spec_.linker_cmd, ir, linked_out, {});
  if (!link_ok) {
    fs::remove_all(dir);
    return CodegenFailure{stage_log("linker", link)};
  }
  auto [cg_ok, cg] = run_stage(spec_.codegen_cmd, linked_out, codegen_out, {});
  if (!cg_ok) {
    fs::remove_all(dir);
    return CodegenFailure{stage_log("codegen", cg)};
  }

  auto artifact = Artifact::from_content(read_file(codegen_out));
  fs::remove_all(dir);
  return artifact;
}

ExecutionOutcome ToolchainBackend::execute(const KernelCase& kernel, const Artifact& artifact,
                                           const RunInput& input) {
  std::string data;
  switch (input.kind) {
    case InputKind::Validation: data = kernel.validation_input; break;
    case InputKind::Measurement: data = kernel.measurement_input; break;
    case InputKind::Random: data = "random:" + std::to_string(input.seed); break;
  }
  const auto path = artifact_path(kernel, artifact);
  const auto cmd = substitute(spec_.runner_cmd, {{"artifact", shell_quote(path.string())},
                                                 {"data", shell_quote(data)},
                                                 {"kind", std::string(to_string(input.kind))}});
  const auto r = run_command(cmd, spec_.exec_timeout);

  if (r.timed_out) return {ExecStatus::Timeout, std::nullopt, std::nullopt};
  const bool failed = r.signaled || r.exit_code != 0;
  if (failed && blank(r.out)) return {ExecStatus::Crash, std::nullopt, std::nullopt};

  auto report = parse_report(r.out);
  if (!report) {
    return {failed ? ExecStatus::Crash : ExecStatus::BrokenReport, std::nullopt, std::nullopt};
  }
  return {ExecStatus::Valid, report->wall_time, std::move(report->outputs)};
}

std::vector<double> ToolchainBackend::reference_outputs(const KernelCase& kernel, const RunInput& input) {
  if (input.kind == InputKind::Validation) return kernel.reference_outputs;

  Artifact baseline;
  bool cached = false;
  {
    std::lock_guard lock(mutex_);
    if (auto it = baseline_.find(kernel.id); it != baseline_.end()) {
      baseline = it->second;
      cached = true;
    }
  }
  if (!cached) {
    auto outcome = compile(kernel, PhaseOrder{});
    const auto* a = artifact_of(outcome);
    if (!a) throw Error("unoptimized build of kernel '" + kernel.id + "' failed");
    baseline = *a;
    std::lock_guard lock(mutex_);
    baseline_.emplace(kernel.id, baseline);
  }
  auto run = execute(kernel, baseline, input);
  if (run.status != ExecStatus::Valid || !run.outputs) {
    throw Error("reference run of kernel '" + kernel.id + "' failed: " + std::string(to_string(run.status)));
  }
  return *run.outputs;
}

}  // namespace phaseforge
