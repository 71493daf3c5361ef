#include "phaseforge/advisor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "phaseforge/error.hpp"
#include "phaseforge/results.hpp"

namespace phaseforge {

void ReferenceSet::add(ReferenceEntry entry) {
  if (find(entry.kernel_id)) throw InvalidArgument("reference set: duplicate kernel '" + entry.kernel_id + "'");
  if (entry.features.is_zero()) {
    throw InvalidArgument("reference set: all-zero feature vector for '" + entry.kernel_id + "'");
  }
  entries_.push_back(std::move(entry));
}

ReferenceSet ReferenceSet::from_knowledge_base(const KnowledgeBase& kb, std::vector<std::string>* skipped) {
  ReferenceSet set;
  for (const auto& [id, e] : kb.entries()) {
    if (e.feature_vector.is_zero()) {
      if (skipped) skipped->push_back(id);
      continue;
    }
    set.add({id, e.feature_vector, e.best_order});
  }
  return set;
}

const ReferenceEntry* ReferenceSet::find(const std::string& kernel_id) const {
  const auto it = std::find_if(entries_.begin(), entries_.end(),
                               [&](const ReferenceEntry& e) { return e.kernel_id == kernel_id; });
  return it == entries_.end() ? nullptr : &*it;
}

ReferenceSet ReferenceSet::without(const std::string& kernel_id) const {
  ReferenceSet out;
  for (const auto& e : entries_) {
    if (e.kernel_id != kernel_id) out.entries_.push_back(e);
  }
  return out;
}

std::vector<Suggestion> suggest_knn(const FeatureVector& query, const ReferenceSet& refset, std::size_t k) {
  if (k == 0) throw InvalidArgument("suggest_knn: k must be at least 1");
  if (refset.empty()) throw InvalidArgument("suggest_knn: empty reference set");

  std::vector<Suggestion> ranked;
  ranked.reserve(refset.size());
  for (const auto& e : refset.entries()) ranked.push_back({e.kernel_id, e.best_order, cosine_distance(query, e.features)});
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const Suggestion& a, const Suggestion& b) { return a.distance < b.distance; });
  if (ranked.size() > k) ranked.resize(k);

  std::vector<Suggestion> out;
  for (auto& s : ranked) {
    const bool repeat =
        std::any_of(out.begin(), out.end(), [&](const Suggestion& o) { return o.order == s.order; });
    if (!repeat) out.push_back(std::move(s));
  }
  return out;
}

FitnessCache::FitnessCache(const KernelCase& kernel, Backend& backend, EvaluateOptions options)
    : kernel_(kernel), backend_(backend), options_(options) {}

double FitnessCache::baseline_time() {
  if (!baseline_) {
    const auto t = time(PhaseOrder{});
    if (!t) throw Error("unoptimized build of kernel '" + kernel_.id + "' failed validation");
    baseline_ = *t;
  }
  return *baseline_;
}

std::optional<double> FitnessCache::time(const PhaseOrder& order) {
  auto key = render_phase_order(order);
  if (const auto it = by_order_.find(key); it != by_order_.end()) return it->second;

  std::optional<double> result;
  const auto outcome = backend_.compile(kernel_, order);
  if (const auto* artifact = artifact_of(outcome)) {
    if (const auto it = by_digest_.find(artifact->digest); it != by_digest_.end()) {
      result = it->second;
    } else {
      ++evaluations_;
      const auto ev = evaluate_artifact(kernel_, *artifact, backend_, options_);
      if (ev.valid()) result = ev.time;
      by_digest_.emplace(artifact->digest, result);
    }
  }
  by_order_.emplace(std::move(key), result);
  return result;
}

double FitnessCache::speedup(const PhaseOrder& order) {
  const auto t = time(order);
  if (!t) return 1.0;
  return baseline_time() / *t;
}

std::vector<double> evaluate_suggestions(FitnessCache& cache, const std::vector<PhaseOrder>& suggestions,
                                         std::size_t max_evals) {
  if (suggestions.empty()) throw InvalidArgument("evaluate_suggestions: no suggestions");
  std::vector<double> curve;
  curve.reserve(max_evals);
  double best = 1.0;
  for (std::size_t n = 0; n < max_evals; ++n) {
    if (n < suggestions.size()) best = std::max(best, cache.speedup(suggestions[n]));
    curve.push_back(best);
  }
  return curve;
}

std::vector<double> evaluate_suggestions(const KernelCase& kernel, const std::vector<PhaseOrder>& suggestions,
                                         Backend& backend, std::size_t max_evals, const EvaluateOptions& options) {
  FitnessCache cache(kernel, backend, options);
  return evaluate_suggestions(cache, suggestions, max_evals);
}

std::vector<double> random_baseline(const ReferenceSet& refset, FitnessCache& cache, std::size_t k,
                                    std::size_t trials, Rng& rng) {
  if (trials == 0) throw InvalidArgument("random_baseline: trials must be at least 1");
  if (k == 0 || k > refset.size()) {
    throw InvalidArgument("random_baseline: k must be in [1, " + std::to_string(refset.size()) + "]");
  }
  std::vector<double> log_sum(k, 0.0);
  std::vector<std::size_t> idx(refset.size());
  for (std::size_t t = 0; t < trials; ++t) {
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<PhaseOrder> picks;
    picks.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
      const auto j = i + rng.below(idx.size() - i);
      std::swap(idx[i], idx[j]);
      picks.push_back(refset.entries()[idx[i]].best_order);
    }
    const auto curve = evaluate_suggestions(cache, picks, k);
    for (std::size_t n = 0; n < k; ++n) log_sum[n] += std::log(curve[n]);
  }
  std::vector<double> out;
  out.reserve(k);
  for (double s : log_sum) out.push_back(std::exp(s / static_cast<double>(trials)));
  return out;
}

std::vector<double> random_baseline(const ReferenceSet& refset, const KernelCase& kernel, std::size_t k,
                                    std::size_t trials, Backend& backend, Rng& rng,
                                    const EvaluateOptions& options) {
  FitnessCache cache(kernel, backend, options);
  return random_baseline(refset, cache, k, trials, rng);
}

std::size_t IterGraph::weight(const Node& from, const PassId& to) const {
  const auto it = edges.find(from);
  if (it == edges.end()) return 0;
  for (const auto& e : it->second) {
    if (e.to == to) return e.weight;
  }
  return 0;
}

std::size_t IterGraph::total_weight() const {
  std::size_t total = 0;
  for (const auto& [from, out] : edges) {
    for (const auto& e : out) total += e.weight;
  }
  return total;
}

IterGraph build_itergraph(const ReferenceSet& refset, const std::optional<std::string>& leave_out) {
  IterGraph g;
  std::size_t used = 0;
  const auto bump = [&](const IterGraph::Node& from, const PassId& to) {
    auto& out = g.edges[from];
    const auto it = std::find_if(out.begin(), out.end(), [&](const IterGraph::Edge& e) { return e.to == to; });
    if (it == out.end()) {
      out.push_back({to, 1});
    } else {
      ++it->weight;
    }
  };
  for (const auto& e : refset.entries()) {
    if (leave_out && e.kernel_id == *leave_out) continue;
    ++used;
    const auto& p = e.best_order.passes;
    if (p.empty()) continue;
    bump(std::nullopt, p.front());
    for (std::size_t i = 0; i + 1 < p.size(); ++i) bump(p[i], p[i + 1]);
    g.length_samples.push_back(p.size());
  }
  if (used == 0) throw InvalidArgument("build_itergraph: no reference orders left");
  return g;
}

PhaseOrder sample_itergraph(const IterGraph& graph, Rng& rng) {
  PhaseOrder out;
  if (graph.length_samples.empty()) return out;
  const auto length = graph.length_samples[rng.below(graph.length_samples.size())];
  IterGraph::Node node = std::nullopt;
  while (out.size() < length) {
    const auto it = graph.edges.find(node);
    if (it == graph.edges.end() || it->second.empty()) break;
    std::size_t total = 0;
    for (const auto& e : it->second) total += e.weight;
    auto r = rng.below(total);
    const IterGraph::Edge* pick = &it->second.back();
    for (const auto& e : it->second) {
      if (r < e.weight) {
        pick = &e;
        break;
      }
      r -= e.weight;
    }
    out.passes.push_back(pick->to);
    node = pick->to;
  }
  return out;
}

LooTable leave_one_out(const ReferenceSet& refset, const std::vector<KernelCase>& kernels, Backend& backend,
                       const LooOptions& options) {
  if (kernels.empty()) throw InvalidArgument("leave_one_out: no kernels");
  if (options.k_max == 0 || options.k_max + 1 > refset.size()) {
    throw InvalidArgument("leave_one_out: k_max must be in [1, " + std::to_string(refset.size() - 1) + "]");
  }
  if (options.trials == 0 || options.itergraph_trials == 0) {
    throw InvalidArgument("leave_one_out: trial counts must be at least 1");
  }

  const auto k = options.k_max;
  std::map<std::string, std::vector<std::vector<double>>> per_kernel;  // method -> kernel -> curve

  for (std::size_t ki = 0; ki < kernels.size(); ++ki) {
    const auto& kernel = kernels[ki];
    const auto* self = refset.find(kernel.id);
    if (!self) throw InvalidArgument("leave_one_out: kernel '" + kernel.id + "' missing from the reference set");
    const auto others = refset.without(kernel.id);
    FitnessCache cache(kernel, backend, options.evaluate);

    std::vector<PhaseOrder> knn_orders;
    for (auto& s : suggest_knn(self->features, others, k)) knn_orders.push_back(std::move(s.order));
    per_kernel["knn"].push_back(evaluate_suggestions(cache, knn_orders, k));

    Rng rng(mix_seed(options.seed, ki));
    per_kernel["random"].push_back(random_baseline(others, cache, k, options.trials, rng));

    const auto graph = build_itergraph(refset, kernel.id);
    std::vector<double> log_sum(k, 0.0);
    for (std::size_t t = 0; t < options.itergraph_trials; ++t) {
      std::vector<PhaseOrder> walk;
      for (std::size_t i = 0; i < k; ++i) walk.push_back(sample_itergraph(graph, rng));
      const auto curve = evaluate_suggestions(cache, walk, k);
      for (std::size_t n = 0; n < k; ++n) log_sum[n] += std::log(curve[n]);
    }
    std::vector<double> ig;
    for (double s : log_sum) ig.push_back(std::exp(s / static_cast<double>(options.itergraph_trials)));
    per_kernel["itergraph"].push_back(std::move(ig));
  }

  LooTable table;
  for (const auto& [method, curves] : per_kernel) {
    std::vector<double> agg;
    for (std::size_t n = 0; n < k; ++n) {
      std::vector<double> column;
      for (const auto& c : curves) column.push_back(c[n]);
      agg.push_back(geometric_mean(column));
    }
    table.curves[method] = std::move(agg);
  }
  return table;
}

}  // namespace phaseforge
