#pragma once

#include <cmath>
#include <cstdio>
#include <string>

namespace phaseforge::detail {

// Six fractional digits everywhere a number is written to disk.
inline std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  std::string s = buf;
  if (s == "-0.000000") s = "0.000000";
  return s;
}

inline double round6(double v) {
  const double r = std::round(v * 1e6) / 1e6;
  return r == 0.0 ? 0.0 : r;
}

}  // namespace phaseforge::detail
