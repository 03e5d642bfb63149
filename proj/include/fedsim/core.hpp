#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedsim {

// Error type thrown by all structured-error paths in the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

// Dense model parameter vector (length d fixed within a run).
using ParamVector = std::vector<double>;

inline bool all_finite(const ParamVector& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

inline void check_same_dim(const ParamVector& a, const ParamVector& b,
                           const char* where) {
  if (a.size() != b.size()) {
    throw Error(std::string(where) + ": dimension mismatch (" +
                std::to_string(a.size()) + " vs " + std::to_string(b.size()) +
                ")");
  }
}

inline ParamVector add(const ParamVector& a, const ParamVector& b) {
  check_same_dim(a, b, "add");
  ParamVector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

inline ParamVector sub(const ParamVector& a, const ParamVector& b) {
  check_same_dim(a, b, "sub");
  ParamVector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

inline ParamVector scaled(const ParamVector& a, double c) {
  ParamVector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = c * a[i];
  return out;
}

// y += c * x
inline void axpy(double c, const ParamVector& x, ParamVector& y) {
  check_same_dim(x, y, "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += c * x[i];
}

inline double dot(const ParamVector& a, const ParamVector& b) {
  check_same_dim(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double sqnorm(const ParamVector& a) { return dot(a, a); }

inline double norm(const ParamVector& a) { return std::sqrt(sqnorm(a)); }

inline ParamVector zeros(std::size_t d) { return ParamVector(d, 0.0); }

}  // namespace fedsim
