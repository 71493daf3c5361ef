#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "phaseforge/backend.hpp"
#include "phaseforge/catalog.hpp"
#include "phaseforge/explorer.hpp"
#include "phaseforge/irfeat.hpp"
#include "phaseforge/rng.hpp"

namespace phaseforge {

struct ReferenceEntry {
  std::string kernel_id;
  FeatureVector features;
  PhaseOrder best_order;
};

/// Reference programs with their best-known orders, in insertion order.
class ReferenceSet {
 public:
  ReferenceSet() = default;

  /// Throws InvalidArgument on a duplicate id or an all-zero vector.
  void add(ReferenceEntry entry);

  /// Entries of `kb` with usable feature vectors, in kernel-id order.
  /// Ids of skipped entries are appended to `skipped` when given.
  static ReferenceSet from_knowledge_base(const KnowledgeBase& kb, std::vector<std::string>* skipped = nullptr);

  const std::vector<ReferenceEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const ReferenceEntry* find(const std::string& kernel_id) const;

  /// Copy without `kernel_id` (leave-one-out).
  ReferenceSet without(const std::string& kernel_id) const;

 private:
  std::vector<ReferenceEntry> entries_;
};

struct Suggestion {
  std::string kernel_id;
  PhaseOrder order;
  double distance = 0.0;
};

/// The k nearest references by cosine distance (ties keep insertion
/// order); repeated orders are dropped after the first.
std::vector<Suggestion> suggest_knn(const FeatureVector& query, const ReferenceSet& refset, std::size_t k);

/// Memoized fitness of orders on one kernel, keyed by order text and by
/// artifact digest, so repeated suggestions cost nothing.
class FitnessCache {
 public:
  FitnessCache(const KernelCase& kernel, Backend& backend, EvaluateOptions options = {});

  /// Time of the unoptimized build; throws if that build fails.
  double baseline_time();

  /// Measured time, or nullopt when the order fails anywhere.
  std::optional<double> time(const PhaseOrder& order);

  /// baseline / time, or 1.0 (fallback) on failure.
  double speedup(const PhaseOrder& order);

  /// Number of orders actually compiled.
  std::size_t evaluations() const noexcept { return evaluations_; }

 private:
  const KernelCase& kernel_;
  Backend& backend_;
  EvaluateOptions options_;
  std::optional<double> baseline_;
  std::unordered_map<std::string, std::optional<double>> by_order_;
  std::unordered_map<std::string, std::optional<double>> by_digest_;
  std::size_t evaluations_ = 0;
};

/// Running best speedup over the first n suggestions for n = 1..max_evals,
/// floored at 1.0 by falling back to the unoptimized build.
std::vector<double> evaluate_suggestions(FitnessCache& cache, const std::vector<PhaseOrder>& suggestions,
                                         std::size_t max_evals);

std::vector<double> evaluate_suggestions(const KernelCase& kernel, const std::vector<PhaseOrder>& suggestions,
                                         Backend& backend, std::size_t max_evals,
                                         const EvaluateOptions& options = {});

/// Geometric mean over `trials` of the curve obtained by evaluating k
/// references drawn uniformly without replacement.
std::vector<double> random_baseline(const ReferenceSet& refset, FitnessCache& cache, std::size_t k,
                                    std::size_t trials, Rng& rng);

std::vector<double> random_baseline(const ReferenceSet& refset, const KernelCase& kernel, std::size_t k,
                                    std::size_t trials, Backend& backend, Rng& rng,
                                    const EvaluateOptions& options = {});

/// Weighted pass-transition graph. The START node is represented by
/// std::nullopt.
struct IterGraph {
  using Node = std::optional<PassId>;

  struct Edge {
    PassId to;
    std::size_t weight = 0;

    bool operator==(const Edge&) const = default;
  };

  std::map<Node, std::vector<Edge>> edges;  // out-edges in first-seen order
  std::vector<std::size_t> length_samples;

  std::size_t weight(const Node& from, const PassId& to) const;
  std::size_t total_weight() const;
};

/// Counts START->p1 and p(i)->p(i+1) transitions over every reference order
/// except `leave_out`'s. Empty orders contribute nothing.
IterGraph build_itergraph(const ReferenceSet& refset, const std::optional<std::string>& leave_out = std::nullopt);

/// Walks from START with weight-proportional steps until a length drawn
/// from the graph's length samples is reached or no out-edge remains.
PhaseOrder sample_itergraph(const IterGraph& graph, Rng& rng);

struct LooOptions {
  std::size_t k_max = 5;
  std::size_t trials = 1000;
  std::size_t itergraph_trials = 10;
  std::uint64_t seed = kDefaultSeed;
  EvaluateOptions evaluate;
};

/// method -> geometric mean across kernels at evaluation counts 1..k_max.
/// Methods: "knn", "random", "itergraph".
struct LooTable {
  std::map<std::string, std::vector<double>> curves;

  bool operator==(const LooTable&) const = default;
};

LooTable leave_one_out(const ReferenceSet& refset, const std::vector<KernelCase>& kernels, Backend& backend,
                       const LooOptions& options = {});

}  // namespace phaseforge
