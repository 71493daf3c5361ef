#pragma once

#include <cstddef>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "phaseforge/rng.hpp"

namespace phaseforge {

/// Name of a compiler pass without its command-line hyphen, e.g. "licm".
/// Restricted to lowercase letters, digits and '-'.
class PassId {
 public:
  explicit PassId(std::string name);

  const std::string& name() const noexcept { return name_; }

  static bool is_valid_name(std::string_view name) noexcept;

  auto operator<=>(const PassId&) const = default;

 private:
  std::string name_;
};

/// Ordered sequence of pass instances; repetition is allowed.
struct PhaseOrder {
  std::vector<PassId> passes;

  std::size_t size() const noexcept { return passes.size(); }
  bool empty() const noexcept { return passes.empty(); }

  bool operator==(const PhaseOrder&) const = default;
};

inline constexpr std::size_t kDefaultMaxLen = 256;

/// The set of passes the search draws from, in canonical order. Passes
/// registered as no-ops are still drawn; backends that model code
/// generation may ignore them.
class PassCatalog {
 public:
  PassCatalog() = default;
  explicit PassCatalog(std::vector<PassId> passes, std::set<PassId> noops = {});

  /// Reads a catalog file: one pass per line, '#' comments, and the
  /// directives `deny-prefix:<p>` and `noop:<name>`.
  static PassCatalog load(const std::filesystem::path& path);
  static PassCatalog parse(std::string_view text);

  const std::vector<PassId>& passes() const noexcept { return passes_; }
  const std::set<PassId>& noops() const noexcept { return noops_; }
  bool empty() const noexcept { return passes_.empty(); }
  std::size_t size() const noexcept { return passes_.size(); }
  bool contains(const PassId& id) const;

 private:
  std::vector<PassId> passes_;
  std::set<PassId> noops_;
};

/// Length uniform in [1, max_len], passes i.i.d. uniform over the catalog.
PhaseOrder random_phase_order(const PassCatalog& catalog, std::size_t max_len, Rng& rng);

/// Up to `count` distinct rearrangements of `order` with the same multiset
/// of pass instances. When every distinct permutation fits in `count`, all
/// of them are returned.
std::vector<PhaseOrder> random_permutations(const PhaseOrder& order, std::size_t count, Rng& rng);

/// Number of distinct permutations of `order`, saturating at SIZE_MAX.
std::size_t distinct_permutation_count(const PhaseOrder& order);

/// Parses "-gvn -licm ..." into a PhaseOrder. Throws ParseError carrying the
/// offending token index.
PhaseOrder parse_phase_order(std::string_view text);

std::string render_phase_order(const PhaseOrder& order);

/// Multiset equality of pass instances.
bool same_multiset(const PhaseOrder& a, const PhaseOrder& b);

/// True when `sub` occurs in `order` as a contiguous run.
bool contains_contiguous(const PhaseOrder& order, const std::vector<PassId>& sub);

/// True when `sub` is obtainable from `order` by deleting elements.
bool is_subsequence(const PhaseOrder& sub, const PhaseOrder& order);

}  // namespace phaseforge
