#include "quadtail/parallel.hpp"

#include <cmath>

namespace quadtail {

double MomentAccumulator::std_err() const {
  if (count < 2) return 0.0;
  const double n = static_cast<double>(count);
  const double var = std::max(0.0, (sum_sq - sum * sum / n) / (n - 1.0));
  return std::sqrt(var / n);
}

}  // namespace quadtail
