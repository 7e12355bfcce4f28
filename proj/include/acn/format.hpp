#pragma once

#include <cmath>
#include <cstdio>
#include <string>

namespace acn {

// Round-trippable decimal text for CSV and JSON outputs; "nan" for NaN.
inline std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace acn
