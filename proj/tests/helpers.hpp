#pragma once

#include <atomic>
#include <filesystem>
#include <initializer_list>
#include <mutex>
#include <set>
#include <string>
#include <unistd.h>

#include "phaseforge/backend.hpp"
#include "phaseforge/catalog.hpp"

namespace testutil {

inline phaseforge::PhaseOrder order_of(std::initializer_list<const char*> names) {
  phaseforge::PhaseOrder o;
  for (const char* n : names) o.passes.emplace_back(n);
  return o;
}

inline std::vector<phaseforge::PassId> passes_of(std::initializer_list<const char*> names) {
  return order_of(names).passes;
}

inline phaseforge::KernelCase sim_kernel(std::string id, phaseforge::SimKernelModel model) {
  phaseforge::KernelCase k;
  k.id = std::move(id);
  k.source = std::move(model);
  return k;
}

// Decorator that counts calls and can make chosen artifacts produce wrong
// outputs on generated inputs only.
class CountingBackend final : public phaseforge::Backend {
 public:
  explicit CountingBackend(phaseforge::Backend& inner) : inner_(inner) {}

  phaseforge::CompileOutcome compile(const phaseforge::KernelCase& k, const phaseforge::PhaseOrder& o) override {
    ++compiles;
    return inner_.compile(k, o);
  }

  phaseforge::ExecutionOutcome execute(const phaseforge::KernelCase& k, const phaseforge::Artifact& a,
                                       const phaseforge::RunInput& in) override {
    {
      std::lock_guard lock(mutex_);
      switch (in.kind) {
        case phaseforge::InputKind::Validation: ++validation_runs; validated.insert(a.digest); break;
        case phaseforge::InputKind::Measurement: ++measurement_runs; measured.push_back(a.digest); break;
        case phaseforge::InputKind::Random: ++random_runs; break;
      }
    }
    auto out = inner_.execute(k, a, in);
    if (in.kind == phaseforge::InputKind::Random && poisoned.count(a.digest) && out.outputs) {
      for (auto& x : *out.outputs) x += 1.0;
    }
    return out;
  }

  std::vector<double> reference_outputs(const phaseforge::KernelCase& k, const phaseforge::RunInput& in) override {
    return inner_.reference_outputs(k, in);
  }

  std::set<std::string> poisoned;
  std::atomic<std::size_t> compiles{0};
  std::size_t validation_runs = 0;
  std::size_t measurement_runs = 0;
  std::size_t random_runs = 0;
  std::set<std::string> validated;
  std::vector<std::string> measured;

 private:
  phaseforge::Backend& inner_;
  std::mutex mutex_;
};

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("phaseforge-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testutil
