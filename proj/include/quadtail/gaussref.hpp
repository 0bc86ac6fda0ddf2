#pragma once

#include "quadtail/linalg.hpp"
#include "quadtail/model.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace quadtail {

/// A probability together with an estimated absolute-error bound.
struct ProbabilityResult {
  double value = 0.0;
  double abs_err = 0.0;
};

/// One term lambda * chi'^2_{dof}(noncentrality) of a weighted chi-square sum.
struct ChiSqTerm {
  double weight;
  int dof;
  double noncentrality = 0.0;  // sum of squared means of the dof normals
};

/// Upper tail P(sum_j w_j chi'^2_{dof_j}(delta_j) > t) by Imhof inversion of
/// the characteristic function. Half-period panels are summed and the partial
/// sums accelerated with Wynn's epsilon algorithm; the integration stops once
/// the integrand envelope falls below 1e-14 or the extrapolation settles.
/// Throws NumericalError if neither happens.
ProbabilityResult imhof_tail(std::span<const ChiSqTerm> terms, double t);

/// Same tail via Ruben's mixture-of-chi-square series. All series terms are
/// nonnegative, so small tails keep their relative accuracy.
ProbabilityResult ruben_tail(std::span<const ChiSqTerm> terms, double t);

/// P(|Q^{1/2} Z| > x) for standard normal Z, absolute accuracy ~1e-10.
///
/// The identity form uses the regularized incomplete gamma function. Other
/// forms use Imhof inversion, switching to the positive series when the tail
/// drops below 1e-5.
ProbabilityResult gaussian_ball_tail(const QuadForm& q, double x);

/// P(N(0, sigma) in B(center, radius)).
ProbabilityResult gaussian_ball_mass(const Mat& sigma, const Vec& center, double radius);

/// Explicit part of the weighted chi-square lower bound
///   [prod_{i>=p} (1 - lambda_i)^{-v_i/2}] x^{r-2} exp(-x^2/2)
/// together with the group index p (1-based, s+1 when empty) and r.
struct ChiSqBound {
  double bound;
  int p;
  int r;
};

/// Requires x > 1.
ChiSqBound chisq_lower_bound(const QuadForm& q, double x);

/// Fraction xi(a) of the sphere of radius a*x lying outside {|D y| <= x}.
///
/// xi is 0 for a <= 1 and 1 for a >= q_d^{-1/2}. Dimensions 1 and 2 and the
/// identity form are handled deterministically; otherwise xi is tabulated on a
/// grid over [1, q_d^{-1/2}] from uniform directions. A single empirical
/// distribution backs every grid value, so the table is monotone.
class SphereFraction {
 public:
  static constexpr std::size_t kDefaultDirections = 1'000'000;
  static constexpr int kDefaultGrid = 2048;

  SphereFraction(const QuadForm& q, std::uint64_t seed, std::size_t directions = kDefaultDirections,
                 int grid_points = kDefaultGrid);

  double operator()(double a) const;

  double upper_edge() const { return upper_; }
  bool exact() const { return exact_; }
  const std::vector<double>& grid() const { return grid_a_; }
  const std::vector<double>& table() const { return grid_xi_; }
  const QuadForm& form() const { return q_; }

 private:
  double exact_value(double a) const;

  QuadForm q_;
  double upper_;
  bool exact_;
  std::vector<double> grid_a_;
  std::vector<double> grid_xi_;
};

/// int_{|Dy|>x} |y|^r exp(-|y|^2/2 + c x |y|^2 / sqrt(n)) dy through the
/// radial reduction with the sphere fraction xi. Needs x > 1 and
/// c x / sqrt(n) < 1/2 (otherwise RegimeError "tilt too strong"). Any finite r
/// is accepted since the domain stays away from the origin.
double weighted_radial_integral(const SphereFraction& xi, double x, double r, double c, std::int64_t n);

/// Cap constant delta with P(u_1 > 1/(1+delta)) = 1/16 for u uniform on the
/// unit sphere of R^d. Has no solution for d = 1.
std::optional<double> cap_fraction_delta(int d);

}  // namespace quadtail
