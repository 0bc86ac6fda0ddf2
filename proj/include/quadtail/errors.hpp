#pragma once

#include <stdexcept>
#include <string>

namespace quadtail {

/// A numerical routine failed to reach its accuracy target (quadrature or
/// series non-convergence). Carries a human-readable diagnostic.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inputs fall outside the regime where an operation is defined (for example
/// a tilt requested at x <= 1 or beyond the moderate-deviation guard).
class RegimeError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace quadtail
