#include "phaseforge/catalog.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "phaseforge/error.hpp"

namespace phaseforge {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string_view strip_hyphen(std::string_view s) {
  if (!s.empty() && s.front() == '-') s.remove_prefix(1);
  return s;
}

}  // namespace

PassId::PassId(std::string name) : name_(std::move(name)) {
  if (!is_valid_name(name_)) throw InvalidArgument("invalid pass name '" + name_ + "'");
}

bool PassId::is_valid_name(std::string_view name) noexcept {
  if (name.empty()) return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-';
  });
}

PassCatalog::PassCatalog(std::vector<PassId> passes, std::set<PassId> noops)
    : passes_(std::move(passes)), noops_(std::move(noops)) {
  std::set<PassId> seen;
  for (const auto& p : passes_) {
    if (!seen.insert(p).second) throw InvalidArgument("duplicate pass '" + p.name() + "' in catalog");
  }
  for (const auto& n : noops_) {
    if (!seen.count(n)) throw InvalidArgument("no-op pass '" + n.name() + "' is not in the catalog");
  }
}

bool PassCatalog::contains(const PassId& id) const {
  return std::find(passes_.begin(), passes_.end(), id) != passes_.end();
}

PassCatalog PassCatalog::parse(std::string_view text) {
  std::vector<std::string> deny;
  std::vector<std::pair<std::string, std::size_t>> names;
  std::set<std::string> noop_names;

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    const auto line = trim(text.substr(pos, eol - pos));
    pos = eol + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;

    if (line.starts_with("deny-prefix:")) {
      const auto prefix = strip_hyphen(trim(line.substr(12)));
      if (prefix.empty()) throw ParseError("empty deny-prefix directive", line_no);
      deny.emplace_back(prefix);
      continue;
    }
    std::string_view name = line;
    bool noop = false;
    if (line.starts_with("noop:")) {
      name = trim(line.substr(5));
      noop = true;
    }
    name = strip_hyphen(name);
    if (!PassId::is_valid_name(name)) {
      throw ParseError("invalid pass name '" + std::string(name) + "' on line " + std::to_string(line_no),
                       line_no);
    }
    names.emplace_back(std::string(name), line_no);
    if (noop) noop_names.emplace(name);
  }

  std::vector<PassId> passes;
  std::set<PassId> noops;
  std::unordered_set<std::string> seen;
  for (const auto& [name, line] : names) {
    const bool denied = std::any_of(deny.begin(), deny.end(),
                                    [&](const std::string& p) { return name.starts_with(p); });
    if (denied) continue;
    if (!seen.insert(name).second) {
      throw ParseError("duplicate pass '" + name + "' on line " + std::to_string(line), line);
    }
    passes.emplace_back(name);
    if (noop_names.count(name)) noops.emplace(name);
  }
  return PassCatalog(std::move(passes), std::move(noops));
}

PassCatalog PassCatalog::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open catalog file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

PhaseOrder random_phase_order(const PassCatalog& catalog, std::size_t max_len, Rng& rng) {
  if (catalog.empty()) throw InvalidArgument("random_phase_order: empty catalog");
  if (max_len == 0) throw InvalidArgument("random_phase_order: max_len must be at least 1");
  const auto len = rng.between(1, max_len);
  PhaseOrder order;
  order.passes.reserve(len);
  for (std::uint64_t i = 0; i < len; ++i) {
    order.passes.push_back(catalog.passes()[rng.below(catalog.size())]);
  }
  return order;
}

std::size_t distinct_permutation_count(const PhaseOrder& order) {
  std::map<PassId, std::size_t> counts;
  for (const auto& p : order.passes) ++counts[p];
  // n! / prod(m_i!) built incrementally as a product of binomials.
  constexpr auto kMax = std::numeric_limits<std::size_t>::max();
  std::size_t result = 1;
  std::size_t placed = 0;
  for (const auto& [pass, m] : counts) {
    for (std::size_t i = 1; i <= m; ++i) {
      ++placed;
      // result = result * placed / i, exact at every step.
      const auto g = std::gcd(result, i);
      const auto r = result / g;
      const auto d = i / g;
      const auto p = placed / d;
      if (p != 0 && r > kMax / p) return kMax;
      result = r * p;
    }
  }
  return result;
}

std::vector<PhaseOrder> random_permutations(const PhaseOrder& order, std::size_t count, Rng& rng) {
  if (count == 0) throw InvalidArgument("random_permutations: count must be at least 1");
  std::vector<PhaseOrder> out;
  const auto distinct = distinct_permutation_count(order);

  if (distinct <= count) {
    std::vector<PassId> perm = order.passes;
    std::sort(perm.begin(), perm.end());
    do {
      out.push_back(PhaseOrder{perm});
    } while (std::next_permutation(perm.begin(), perm.end()));
    for (std::size_t i = out.size(); i > 1; --i) {
      std::swap(out[i - 1], out[rng.below(i)]);
    }
    return out;
  }

  std::set<std::vector<PassId>> seen;
  std::vector<PassId> perm = order.passes;
  while (out.size() < count) {
    for (std::size_t i = perm.size(); i > 1; --i) {
      std::swap(perm[i - 1], perm[rng.below(i)]);
    }
    if (seen.insert(perm).second) out.push_back(PhaseOrder{perm});
  }
  return out;
}

PhaseOrder parse_phase_order(std::string_view text) {
  PhaseOrder order;
  std::size_t index = 0;
  std::size_t pos = 0;
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; };
  while (pos < text.size()) {
    while (pos < text.size() && is_space(text[pos])) ++pos;
    if (pos >= text.size()) break;
    auto end = pos;
    while (end < text.size() && !is_space(text[end])) ++end;
    const auto token = text.substr(pos, end - pos);
    if (token.front() != '-') {
      throw ParseError("token " + std::to_string(index) + " '" + std::string(token) +
                           "' does not start with '-'",
                       index);
    }
    const auto name = token.substr(1);
    if (!PassId::is_valid_name(name)) {
      throw ParseError("token " + std::to_string(index) + " '" + std::string(token) +
                           "' is not a valid pass name",
                       index);
    }
    order.passes.emplace_back(std::string(name));
    ++index;
    pos = end;
  }
  return order;
}

std::string render_phase_order(const PhaseOrder& order) {
  std::string out;
  for (const auto& p : order.passes) {
    if (!out.empty()) out += ' ';
    out += '-';
    out += p.name();
  }
  return out;
}

bool same_multiset(const PhaseOrder& a, const PhaseOrder& b) {
  if (a.size() != b.size()) return false;
  auto x = a.passes;
  auto y = b.passes;
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  return x == y;
}

bool contains_contiguous(const PhaseOrder& order, const std::vector<PassId>& sub) {
  if (sub.empty()) return true;
  return std::search(order.passes.begin(), order.passes.end(), sub.begin(), sub.end()) !=
         order.passes.end();
}

bool is_subsequence(const PhaseOrder& sub, const PhaseOrder& order) {
  std::size_t j = 0;
  for (const auto& p : order.passes) {
    if (j < sub.size() && sub.passes[j] == p) ++j;
  }
  return j == sub.size();
}

}  // namespace phaseforge
