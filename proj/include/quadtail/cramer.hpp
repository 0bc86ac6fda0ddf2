#pragma once

#include "quadtail/linalg.hpp"
#include "quadtail/model.hpp"

#include <cstdint>
#include <vector>

namespace quadtail {

/// Q_3(u) = (1/6) sum_{jkl} E[X_j X_k X_l] u_j u_k u_l.
class CubicForm {
 public:
  /// `third` holds raw third moments of a mean-zero law; must be symmetric.
  explicit CubicForm(const Tensor3& third);
  static CubicForm from_spec(const DistributionSpec& spec);

  int dim() const { return coefficients_.dim(); }
  const Tensor3& coefficients() const { return coefficients_; }
  bool is_zero() const { return coefficients_.is_zero(); }

 private:
  Tensor3 coefficients_;
};

double q3_eval(const CubicForm& form, const Vec& u);

struct SphereAverage {
  double value;
  double std_err;
  std::uint64_t pairs;  // 0 when evaluated in closed form
};

struct SphereOptions {
  std::uint64_t pairs = 1000000;
  std::uint64_t seed = 0;
  int workers = 1;
  /// Use the Monte Carlo path even where a closed form exists (d = 1).
  bool force_mc = false;
};

/// Normalized spherical average of exp(c^3 Q_3(u)) over the unit sphere.
/// d = 1 is exact: cosh(c^3 gamma / 6). Otherwise uniform directions in +-u
/// pairs, each pair contributing cosh(c^3 Q_3(u)).
SphereAverage sphere_exp_integral(const CubicForm& form, double c, const SphereOptions& options = {});

/// Antithetic spherical average of Q_3; each pair sums to exactly zero.
SphereAverage sphere_q3_average(const CubicForm& form, const SphereOptions& options = {});

inline constexpr double kVonBahrGuard = 0.3;

/// Leading factor of P(|W| > x)/P(|Z| > x): the spherical average at
/// c^3 = x^3/sqrt(n). Relative corrections of order x/sqrt(n) + x^4/n are not
/// included. Throws RegimeError unless 1 < x <= guard n^{1/4}.
SphereAverage vonbahr_ratio(const DistributionSpec& spec, double x, std::int64_t n,
                            const SphereOptions& options = {}, double guard = kVonBahrGuard);

struct NonconvergenceRow {
  std::int64_t n;
  double x_n;
  double exact_ratio;
  double predicted_factor;
  double predicted_se;
  double gap;  // exact_ratio - predicted_factor
};

/// Exact ratio at x_n = c n^{1/6} against the spherical-average limit, for
/// specs that admit an exact oracle (one-dimensional two-point, or lattice
/// with d <= 2).
std::vector<NonconvergenceRow> nonconvergence_demo(const DistributionSpec& spec, double c,
                                                   const std::vector<std::int64_t>& n_grid,
                                                   const SphereOptions& options = {});

}  // namespace quadtail
