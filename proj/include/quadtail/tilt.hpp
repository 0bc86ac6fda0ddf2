#pragma once

#include "quadtail/linalg.hpp"
#include "quadtail/model.hpp"
#include "quadtail/rng.hpp"

#include <cstdint>
#include <memory>
#include <vector>

namespace quadtail {

/// Scalars of the Gaussian-mixed change of measure at level x.
struct TiltParams {
  double x;
  std::int64_t n;
  int dim;
  double h;      // 1/2 - 1/(2 x^2)
  double z0;     // 3 x, radius of the truncation ball
  double kappa;  // 1 / P(|Z| <= z0)
};

/// Throws RegimeError("tilt undefined; use crude estimator") for x <= 1.
TiltParams make_params(double x, std::int64_t n, int dim);

/// Default epsilon of the moderate-deviation guard x <= epsilon n^{1/6}.
inline constexpr double kDefaultRegimeEpsilon = 2.0;

/// Throws RegimeError("outside moderate-deviation regime") when x > epsilon n^{1/6}.
void check_regime(const TiltParams& params, double epsilon = kDefaultRegimeEpsilon);

/// One draw of Z_x: standard normal conditioned on |z| <= z0. Rejection from
/// the untruncated normal for d <= 20, otherwise a truncated chi radius by
/// inversion times a uniform direction.
Vec sample_zx(const TiltParams& params, Philox4x32& rng);

/// theta = sqrt(2h) D z / sqrt(n), the argument of the summand MGF.
Vec tilt_argument(const QuadForm& q, const TiltParams& params, const Vec& z);

/// Conditional law of X~_1 given Z_x = z: the law of D X_1 reweighted by
/// exp(<sqrt(2h) z, y>/sqrt(n)) / G(theta).
///
/// Finite-support and product laws are reweighted atom by atom (the product
/// factorizes per coordinate); the Gaussian law has the closed form
/// N(sqrt(2h) Q z / sqrt(n), Q).
class TiltedLaw {
 public:
  /// `spec` must be standardized. Throws RegimeError("tilt outside validity
  /// regime") if the tilted covariance is not positive definite. With
  /// `with_lambda` unset the lambda~ eigenvalues are skipped (left empty).
  TiltedLaw(const DistributionSpec& spec, const QuadForm& q, const TiltParams& params, const Vec& z,
            bool with_lambda = true);

  const Vec& mu_tilde() const { return mu_; }
  const Mat& sigma_tilde() const { return sigma_; }
  /// Eigenvalues (ascending) of E<sqrt(2h) D z, X_1> X_1 X_1^T under the base law.
  const Vec& lambda_tilde() const { return lambda_; }
  /// n log G(theta), the log mixture weight.
  double log_weight() const { return n_log_mgf_; }

  /// Tilted atoms and probabilities (finite support only; points are D x_k).
  const std::vector<Vec>& points() const { return points_; }
  const std::vector<double>& probs() const { return probs_; }
  /// Tilted marginal probabilities of coordinate j (product only).
  const std::vector<double>& coordinate_probs(int j) const { return coord_probs_[static_cast<std::size_t>(j)]; }

  /// One draw of D W~ = n^{-1/2} (X~_1 + ... + X~_n).
  Vec sample_scaled_sum(Philox4x32& rng) const;

 private:
  DistributionKind kind_;
  Vec d_;
  std::vector<double> marginal_values_;
  std::int64_t n_;
  Vec mu_;
  Mat sigma_;
  Vec lambda_;
  double n_log_mgf_ = 0.0;
  std::vector<Vec> points_;
  std::vector<double> probs_;
  std::vector<std::vector<double>> coord_probs_;
};

/// Leading terms of the tilted mean and covariance and the remainders left
/// over against the exact values.
struct MomentExpansion {
  Vec mu_approx;
  Mat sigma_approx;
  Vec mu_remainder;     // exact - approx
  Mat sigma_remainder;  // D^{-1} (exact - approx) D^{-1}
  double mu_remainder_norm;
  double sigma_remainder_max;
};

MomentExpansion tilted_moment_expansion(const DistributionSpec& spec, const QuadForm& q, const TiltParams& params,
                                        const Vec& z);

/// True iff the eigenvalues at -z are the negated eigenvalues at z (1e-10).
bool lambda_antisymmetry_check(const DistributionSpec& spec, const QuadForm& q, const TiltParams& params,
                               const Vec& z);

struct BTerms {
  double b0;
  double b1;
  double b2;
  double b3;
};

/// The four expectation terms of the tilted density expansion at the point y,
/// evaluated exactly from the third-moment tensor of the base law.
BTerms b_terms(const DistributionSpec& spec, const QuadForm& q, const TiltParams& params, const Vec& z,
               const Vec& y);

/// log m(a) for m(a) = kappa e^{h a^2} P(|Z + sqrt(2h) a e_1| <= z0).
///
/// Computed from the one-dimensional representation
///   m(a) = kappa int_{-z0}^{z0} phi(t) e^{s t} F_{d-1}(z0^2 - t^2) dt,  s = sqrt(2h) a,
/// with F_k the chi-square CDF, so no cancellation occurs for large a.
double log_m(const TiltParams& params, double a);
double m_function(const TiltParams& params, double a);

/// d/da log m(a).
double log_m_derivative(const TiltParams& params, double a);

/// Cubic Hermite table of log m on [x, 10 x] with exact node derivatives.
/// Arguments outside the table are evaluated directly.
class MTable {
 public:
  static constexpr int kDefaultNodes = 4096;

  explicit MTable(const TiltParams& params, int nodes = kDefaultNodes, int workers = 1);

  /// Process-wide table for (x, d) with default nodes; m does not depend on n.
  static std::shared_ptr<const MTable> shared(const TiltParams& params, int workers = 1);

  double log_m(double a) const;
  /// Largest |log m_table - log m_direct| over `probes` points between nodes.
  double max_error(int probes) const;

  double lower() const { return lo_; }
  double upper() const { return hi_; }

 private:
  TiltParams params_;
  double lo_;
  double hi_;
  double step_;
  std::vector<double> value_;
  std::vector<double> slope_;
};

struct MgfCheck {
  double lhs;       // G^n(a / sqrt(n))
  double rhs_main;  // e^{|a|^2/2} (1 + E<a,X>^3 / (6 sqrt n))
  double envelope;  // (|a|^4 + |a|^6)/n exp(|a|^2/2 + |a|^3/sqrt(n))
  bool in_regime;   // |a| <= 0.1 sqrt(n)
};

MgfCheck mgf_expansion_check(const DistributionSpec& spec, const Vec& a, std::int64_t n);

struct MixtureWeight {
  double value;
  double log_value;
};

/// G^n(sqrt(2h) D z / sqrt(n)) in log space.
MixtureWeight mixture_weight(const DistributionSpec& spec, const QuadForm& q, const TiltParams& params,
                             const Vec& z);

}  // namespace quadtail
