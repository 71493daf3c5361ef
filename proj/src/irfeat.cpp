#include "phaseforge/irfeat.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <unordered_map>

#include "phaseforge/error.hpp"

namespace phaseforge {

namespace {

struct Token {
  std::string_view text;
  std::size_t line;
};

std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> tokens;
  std::size_t line = 1;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (c == '\n') {
      ++line;
      ++i;
    } else if (c == ' ' || c == '\t' || c == '\r') {
      ++i;
    } else if (c == '#') {
      while (i < text.size() && text[i] != '\n') ++i;
    } else {
      const auto start = i;
      while (i < text.size() && text[i] != ' ' && text[i] != '\t' && text[i] != '\r' && text[i] != '\n' &&
             text[i] != '#') {
        ++i;
      }
      tokens.push_back({text.substr(start, i - start), line});
    }
  }
  return tokens;
}

[[noreturn]] void fail(const std::string& msg, std::size_t line) {
  throw ParseError("line " + std::to_string(line) + ": " + msg, line);
}

bool valid_name(std::string_view s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
           c == '.' || c == '-';
  });
}

std::optional<InstrKind> instruction_kind(std::string_view t) {
  static const std::map<std::string_view, InstrKind> kinds{
      {"load", InstrKind::Load},  {"store", InstrKind::Store}, {"iadd", InstrKind::IntArith},
      {"fadd", InstrKind::FloatArith}, {"cmp", InstrKind::Cmp},   {"call", InstrKind::Call},
      {"addr", InstrKind::Addr},  {"other", InstrKind::Other}};
  const auto it = kinds.find(t);
  if (it == kinds.end()) return std::nullopt;
  return it->second;
}

class Parser {
 public:
  explicit Parser(std::vector<Token> tokens) : tokens_(std::move(tokens)) {}

  IrModule parse() {
    IrModule module;
    std::set<std::string, std::less<>> names;
    while (pos_ < tokens_.size()) {
      module.functions.push_back(parse_function(names));
    }
    return module;
  }

 private:
  const Token& next(std::string_view expected) {
    if (pos_ >= tokens_.size()) {
      fail("unexpected end of input, expected " + std::string(expected), last_line_);
    }
    last_line_ = tokens_[pos_].line;
    return tokens_[pos_++];
  }

  IrFunction parse_function(std::set<std::string, std::less<>>& names) {
    const auto& kw = next("'func'");
    if (kw.text != "func") fail("expected 'func', got '" + std::string(kw.text) + "'", kw.line);
    const auto& name = next("function name");
    if (!valid_name(name.text)) fail("invalid function name '" + std::string(name.text) + "'", name.line);
    if (!names.emplace(name.text).second) fail("duplicate function '" + std::string(name.text) + "'", name.line);
    const auto& open = next("'{'");
    if (open.text != "{") fail("expected '{' after function name", open.line);

    IrFunction fn{std::string(name.text), {}};
    std::unordered_map<std::string, std::size_t> labels;
    std::vector<std::pair<std::string, std::size_t>> targets;  // (label, line) for resolution
    IrBlock* block = nullptr;
    bool terminated = true;

    for (;;) {
      const auto& tok = next("'}'");
      const auto t = tok.text;

      if (t == "}") {
        if (block && !terminated) fail("block '" + block->label + "' has no terminator", tok.line);
        if (fn.blocks.empty()) fail("function '" + fn.name + "' has no blocks", tok.line);
        break;
      }

      if (t.size() > 1 && t.back() == ':') {
        const auto label = std::string(t.substr(0, t.size() - 1));
        if (!valid_name(label)) fail("invalid label '" + label + "'", tok.line);
        if (block && !terminated) fail("block '" + block->label + "' has no terminator", tok.line);
        if (!labels.emplace(label, fn.blocks.size()).second) fail("duplicate label '" + label + "'", tok.line);
        fn.blocks.push_back(IrBlock{label, {}, {}, {}});
        block = &fn.blocks.back();
        terminated = false;
        continue;
      }

      if (!block || terminated) {
        fail(block ? "instruction after terminator in block '" + block->label + "'"
                   : "instruction outside a block",
             tok.line);
      }

      if (t == "phi") {
        const auto& arg = next("phi argument count");
        std::size_t k = 0;
        const auto [ptr, ec] = std::from_chars(arg.text.data(), arg.text.data() + arg.text.size(), k);
        if (ec != std::errc() || ptr != arg.text.data() + arg.text.size()) {
          fail("phi expects an argument count, got '" + std::string(arg.text) + "'", arg.line);
        }
        if (!block->body.empty()) fail("phi after body instructions in block '" + block->label + "'", tok.line);
        block->phis.push_back(k);
      } else if (auto kind = instruction_kind(t)) {
        block->body.push_back(*kind);
      } else if (t == "ret") {
        block->terminator = {TermKind::Ret, {}};
        terminated = true;
      } else if (t == "br" || t == "condbr") {
        const std::size_t arity = t == "br" ? 1 : 2;
        Terminator term{t == "br" ? TermKind::Br : TermKind::CondBr, {}};
        for (std::size_t i = 0; i < arity; ++i) {
          const auto& target = next("branch target");
          if (!valid_name(target.text)) fail("invalid branch target '" + std::string(target.text) + "'", target.line);
          term.targets.emplace_back(target.text);
          targets.emplace_back(std::string(target.text), target.line);
        }
        block->terminator = std::move(term);
        terminated = true;
      } else if (t == "switch") {
        Terminator term{TermKind::Switch, {}};
        while (pos_ < tokens_.size() && tokens_[pos_].line == tok.line && tokens_[pos_].text != "}") {
          const auto& target = next("switch target");
          if (!valid_name(target.text)) fail("invalid switch target '" + std::string(target.text) + "'", target.line);
          term.targets.emplace_back(target.text);
          targets.emplace_back(std::string(target.text), target.line);
        }
        if (term.targets.empty()) fail("switch needs at least one target", tok.line);
        block->terminator = std::move(term);
        terminated = true;
      } else {
        fail("unknown instruction '" + std::string(t) + "'", tok.line);
      }
    }

    for (const auto& [label, line] : targets) {
      if (!labels.count(label)) fail("undefined branch target '" + label + "'", line);
    }
    return fn;
  }

  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
  std::size_t last_line_ = 1;
};

std::vector<std::string> distinct_targets(const Terminator& t) {
  std::vector<std::string> out;
  for (const auto& l : t.targets) {
    if (std::find(out.begin(), out.end(), l) == out.end()) out.push_back(l);
  }
  return out;
}

}  // namespace

IrModule parse_ir(std::string_view text) { return Parser(tokenize(text)).parse(); }

bool FeatureVector::is_zero() const noexcept {
  return std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0; });
}

FeatureVector extract_features(const IrModule& module) {
  FeatureVector fv;
  auto& f = fv.values;
  const auto at = [&](std::size_t n) -> double& { return f[n - 1]; };
  double phi_args = 0;

  for (const auto& fn : module.functions) {
    at(24) += 1;
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < fn.blocks.size(); ++i) index.emplace(fn.blocks[i].label, i);

    // Edges are distinct (source, target) pairs.
    std::vector<std::size_t> succ(fn.blocks.size(), 0);
    std::vector<std::size_t> pred(fn.blocks.size(), 0);
    for (std::size_t i = 0; i < fn.blocks.size(); ++i) {
      for (const auto& target : distinct_targets(fn.blocks[i].terminator)) {
        ++succ[i];
        ++pred[index.at(target)];
      }
    }

    for (std::size_t i = 0; i < fn.blocks.size(); ++i) {
      const auto& b = fn.blocks[i];
      at(1) += 1;
      if (succ[i] == 1) at(2) += 1;
      if (succ[i] == 2) at(3) += 1;
      if (succ[i] > 2) at(4) += 1;
      if (pred[i] == 1) at(5) += 1;
      if (pred[i] == 2) at(6) += 1;
      if (pred[i] > 2) at(7) += 1;
      if (pred[i] == 1 && succ[i] == 1) at(8) += 1;
      at(9) += static_cast<double>(succ[i]);
      at(10) += static_cast<double>(b.body.size() + 1);
      at(12) += static_cast<double>(b.phis.size());
      if (!b.phis.empty()) at(13) += 1;
      for (auto k : b.phis) phi_args += static_cast<double>(k);
      if (b.terminator.kind == TermKind::CondBr) at(15) += 1;
      if (b.terminator.kind == TermKind::Br) at(16) += 1;
      for (auto kind : b.body) {
        switch (kind) {
          case InstrKind::Load: at(17) += 1; break;
          case InstrKind::Store: at(18) += 1; break;
          case InstrKind::IntArith: at(19) += 1; break;
          case InstrKind::FloatArith: at(20) += 1; break;
          case InstrKind::Call: at(21) += 1; break;
          case InstrKind::Cmp: at(22) += 1; break;
          case InstrKind::Addr: at(23) += 1; break;
          case InstrKind::Other: break;
        }
      }
    }
  }
  at(11) = at(1) > 0 ? at(10) / at(1) : 0.0;
  at(14) = at(12) > 0 ? phi_args / at(12) : 0.0;
  return fv;
}

double cosine_distance(const FeatureVector& a, const FeatureVector& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    dot += a.values[i] * b.values[i];
    na += a.values[i] * a.values[i];
    nb += b.values[i] * b.values[i];
  }
  if (na == 0.0 || nb == 0.0) throw DegenerateVector("cosine distance of an all-zero feature vector");
  const double d = 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(d, 0.0, 1.0);
}

}  // namespace phaseforge
