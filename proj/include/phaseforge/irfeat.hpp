#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace phaseforge {

enum class InstrKind { Load, Store, IntArith, FloatArith, Cmp, Call, Addr, Other };

enum class TermKind { Br, CondBr, Switch, Ret };

struct Terminator {
  TermKind kind = TermKind::Ret;
  std::vector<std::string> targets;
};

struct IrBlock {
  std::string label;
  std::vector<std::size_t> phis;  // argument count of each phi
  std::vector<InstrKind> body;
  Terminator terminator;
};

struct IrFunction {
  std::string name;
  std::vector<IrBlock> blocks;  // blocks[0] is the entry
};

struct IrModule {
  std::vector<IrFunction> functions;
};

/// Parses the IR subset:
///
///   func <name> {
///   <label>:
///     phi <k>
///     load | store | iadd | fadd | cmp | call | addr | other
///     br <l> | condbr <l1> <l2> | switch <l1> <l2> ... | ret
///   }
///
/// Tokens are whitespace separated, so a whole function may sit on one
/// line; `switch` targets run to the end of their line. '#' starts a
/// comment. Throws ParseError carrying the 1-based line number.
IrModule parse_ir(std::string_view text);

inline constexpr std::size_t kFeatureCount = 24;

/// Static features ft1..ft24, stored zero-based (values[0] is ft1):
///
///  ft1  basic blocks                     ft13 blocks containing phis
///  ft2  blocks with 1 successor          ft14 average phi arguments
///  ft3  blocks with 2 successors         ft15 conditional branches
///  ft4  blocks with >2 successors        ft16 unconditional branches
///  ft5  blocks with 1 predecessor        ft17 loads
///  ft6  blocks with 2 predecessors       ft18 stores
///  ft7  blocks with >2 predecessors      ft19 integer arithmetic
///  ft8  blocks with 1 pred and 1 succ    ft20 float arithmetic
///  ft9  CFG edges                        ft21 calls
///  ft10 instructions (with terminators,  ft22 compares
///       without phis)                    ft23 address computations
///  ft11 average instructions per block   ft24 functions
///  ft12 phi nodes
struct FeatureVector {
  std::array<double, kFeatureCount> values{};

  /// 1-based accessor matching the ftN naming.
  double ft(std::size_t n) const { return values.at(n - 1); }

  bool is_zero() const noexcept;

  bool operator==(const FeatureVector&) const = default;
};

FeatureVector extract_features(const IrModule& module);

/// 1 - cos(a, b). Throws DegenerateVector if either input is all zero.
double cosine_distance(const FeatureVector& a, const FeatureVector& b);

}  // namespace phaseforge
