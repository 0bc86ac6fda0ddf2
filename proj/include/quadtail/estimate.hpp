#pragma once

#include "quadtail/model.hpp"
#include "quadtail/tilt.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace quadtail {

enum class Method { kCrude, kTiltedIs, kExactLattice, kExactBinomial, kGaussianRef };

std::string to_string(Method method);

/// Estimate of P(|Q^{1/2} W| > x).
struct TailEstimate {
  double value = 0.0;
  double std_err = 0.0;
  std::uint64_t n_samples = 0;
  Method method = Method::kCrude;
  std::uint64_t seed = 0;
  double runtime_ms = 0.0;
  /// Method-specific extras in a fixed order (acceptance rate, ESS, ...).
  std::vector<std::pair<std::string, double>> diagnostics;

  bool exact() const { return method == Method::kExactLattice || method == Method::kExactBinomial; }
};

/// Binomial-proportion estimate from exact draws of W.
TailEstimate crude_mc(const DistributionSpec& spec, const QuadForm& q, double x, std::int64_t n,
                      std::uint64_t samples, std::uint64_t seed, int workers = 1);

struct TiltedOptions {
  std::uint64_t samples = 100000;
  std::uint64_t seed = 0;
  int workers = 1;
  /// Two-stage pool-and-resample variant instead of the Gaussian proposal.
  bool sir = false;
  std::uint64_t pool_size = 10000;
  double regime_epsilon = kDefaultRegimeEpsilon;
};

/// Importance sampler built on the Gaussian-mixed tilt.
///
/// Default mode draws z from N(0, (I - 2hQ)^{-1}) restricted to |z| <= z0,
/// whose normalizer is a Gaussian ball probability, so each term
///   M0 exp(n log G(theta) - h |Dz|^2) 1{|D W~| > x} / m(|D W~|)
/// is an unbiased draw. The SIR mode estimates E G^n(theta) from a pool of
/// Z_x draws and resamples the pool by weight; its SE is a delta-method
/// combination of both stages. Throws RegimeError for x <= 1 or outside the
/// moderate-deviation guard.
TailEstimate tilted_is(const DistributionSpec& spec, const QuadForm& q, double x, std::int64_t n,
                       const TiltedOptions& options = {});

/// d = 1 Rademacher oracle: P(|S_n| > x sqrt(n)) by exact binomial summation.
TailEstimate exact_binomial(double x, std::int64_t n);

/// Binomial oracle for any one-dimensional two-point spec.
TailEstimate exact_two_point(const DistributionSpec& spec, double x, std::int64_t n);

/// Convolution oracle for finite-support (or product) specs with d <= 2 whose
/// atoms lie on an axis-aligned lattice with rational spacing ratios.
/// Throws std::invalid_argument when no lattice is found and
/// std::length_error("lattice grid too large: <cells> cells") past the guard.
TailEstimate exact_lattice(const DistributionSpec& spec, const QuadForm& q, double x, std::int64_t n);

inline constexpr double kMaxLatticeCells = 5e7;

/// Gaussian reference P(|Q^{1/2} Z| > x), tagged gaussian_ref.
TailEstimate gaussian_reference(const QuadForm& q, double x);

struct RatioRow {
  std::int64_t n;
  double x;
  TailEstimate p_hat;
  double p_ref;
  double ratio_minus_1;
  double ratio_se;
};

enum class ScanMethod { kAuto, kCrude, kTiltedIs, kExact };

/// ratio - 1 over the (n, x) grid, rows sorted by (n, x). kAuto picks an
/// exact oracle when one is admissible, else tilted_is when x > 1 and the
/// regime guard passes, else crude_mc. Row r uses a seed derived from
/// (seed, r).
std::vector<RatioRow> ratio_scan(const DistributionSpec& spec, const QuadForm& q, const std::vector<double>& x_grid,
                                 const std::vector<std::int64_t>& n_grid, ScanMethod method, std::uint64_t budget,
                                 std::uint64_t seed, int workers = 1);

struct RateFit {
  double slope;
  double slope_se;
  double intercept;
  std::vector<std::int64_t> used;
  std::vector<std::int64_t> excluded;
};

/// OLS slope of log|ratio - 1| against log n over the rows at level x.
///
/// With `pair_adjacent`, a row at n and one at n + 2 are merged into one point
/// at n carrying the mean of their |ratio - 1|. Points with
/// |ratio - 1| < 3 ratio_se are excluded. Throws std::runtime_error
/// ("insufficient signal") with fewer than 3 usable points.
RateFit rate_fit(const std::vector<RatioRow>& rows, double x, bool pair_adjacent = false);

}  // namespace quadtail
