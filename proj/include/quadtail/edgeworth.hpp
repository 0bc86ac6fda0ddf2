#pragma once

#include "quadtail/linalg.hpp"
#include "quadtail/model.hpp"

#include <cstdint>
#include <vector>

namespace quadtail {

/// Two-term Edgeworth model of n^{-1/2}(Y_1 + ... + Y_n) for mean-zero Y_1:
///   omega(y) = p(y) + E p'''(y) Y_1^3 / (6 sqrt(n)),  p = N(0, Sigma) density.
class EdgeworthModel {
 public:
  /// Throws std::invalid_argument for a non-SPD Sigma, a non-symmetric third
  /// tensor, mismatched dimensions or n < 1.
  EdgeworthModel(Mat sigma, Tensor3 third, std::int64_t n);

  /// Model of Q^{1/2} X_1 for a standardized spec: Sigma = Q, third tensor
  /// scaled coordinatewise by sqrt(q).
  static EdgeworthModel from_spec(const DistributionSpec& spec, const QuadForm& q, std::int64_t n);

  int dim() const { return static_cast<int>(sigma_.rows()); }
  std::int64_t n() const { return n_; }
  const Mat& sigma() const { return sigma_; }
  const Mat& precision() const { return precision_; }
  const Mat& sigma_sqrt() const { return sigma_sqrt_; }
  const Tensor3& third() const { return third_; }

  /// g(y) = E p'''(y) Y_1^3 / p(y), a cubic polynomial in y.
  double correction_polynomial(const Vec& y) const;

 private:
  Mat sigma_;
  Mat precision_;
  Mat sigma_sqrt_;
  double log_norm_;  // log of (2 pi)^{-d/2} det(Sigma)^{-1/2}
  Tensor3 third_;
  Vec trace_vec_;  // t_l = sum_{jk} T_{jkl} (Sigma^{-1})_{jk}
  std::int64_t n_;

  friend double normal_density(const EdgeworthModel&, const Vec&);
};

/// N(0, Sigma) density.
double normal_density(const EdgeworthModel& model, const Vec& y);

/// p'''(y) u^3 = p(y) (3 <Sigma^{-1} u, u> <Sigma^{-1} y, u> - <Sigma^{-1} y, u>^3).
double third_directional(const EdgeworthModel& model, const Vec& y, const Vec& u);

/// omega(y); signed, no clamping.
double expansion_density(const EdgeworthModel& model, const Vec& y);

struct BallMass {
  double leading;     // P(N(0, Sigma) in B(b, a))
  double correction;  // (6 sqrt n)^{-1} int_B E p'''(y) Y_1^3 dy
  double total;
  double err;         // combined error estimate
};

struct BallMassOptions {
  std::uint64_t samples = 1000000;  // Gaussian draws for d >= 3 (in antithetic pairs)
  std::uint64_t seed = 0;
  int workers = 1;
};

/// Integral of omega over the ball B(b, a).
///
/// The correction is exact for d = 1, a polar rule (Gauss-Kronrod in the
/// radius, 256 paired angles) for d = 2, and antithetic Gaussian Monte Carlo
/// for d >= 3. Antipodal points are always evaluated as pairs, so the
/// correction at b = 0 is exactly zero.
BallMass ball_mass(const EdgeworthModel& model, const Vec& b, double a, const BallMassOptions& options = {});

struct EdgeworthErrorRow {
  std::int64_t n;
  double sup_error;       // max over the grid of |MC - ball_mass|
  double a_at_sup;
  double mc_se_at_sup;
  double max_mc_se;
  double envelope_lattice;  // n^{-d/(d+1)}, the centered-ball term of the smoothing bound
  double envelope_smooth;   // 1/n, the Edgeworth remainder order
  double fitted_constant;   // sup_error * n
};

/// For each n: sup over `a_grid` of |P_MC(|Q^{1/2} W| <= a) - ball_mass(0, a)|
/// with mc_samples exact draws of W.
std::vector<EdgeworthErrorRow> edgeworth_error_report(const DistributionSpec& spec, const QuadForm& q,
                                                      const std::vector<std::int64_t>& n_list,
                                                      const std::vector<double>& a_grid, std::uint64_t mc_samples,
                                                      std::uint64_t seed, int workers = 1);

}  // namespace quadtail
