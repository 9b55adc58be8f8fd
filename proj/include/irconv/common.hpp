#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace irconv {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape &shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

inline std::string shape_str(const Shape &shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Raised when a requested computation cannot be carried out at the active
// floating-point precision (e.g. Sinkhorn below the documented eps floor).
struct precision_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when a training run hits a non-finite value; carries the name of
// the first offending tensor.
struct numerical_failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Configuration / usage problems; the CLI maps these to exit code 2.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <class Real> struct precision_traits;

template <> struct precision_traits<float> {
  static constexpr const char *name = "single";
  // Lowest usable entropic weight for the Sinkhorn solver.
  static constexpr float sinkhorn_eps_floor = 1.3e-2f;
  static constexpr float sinkhorn_default_tol = 1e-6f;
};

template <> struct precision_traits<double> {
  static constexpr const char *name = "double";
  static constexpr double sinkhorn_eps_floor = 2e-3;
  static constexpr double sinkhorn_default_tol = 1e-9;
};

} // namespace irconv
