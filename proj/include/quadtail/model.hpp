#pragma once

#include "quadtail/linalg.hpp"
#include "quadtail/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace quadtail {

enum class DistributionKind { kFiniteSupport, kProductIid, kGaussian };

std::string to_string(DistributionKind kind);

/// Law of a single summand X_1.
///
/// FiniteSupport carries explicit d-dimensional atoms, ProductIid replicates a
/// one-dimensional finite-support marginal across d independent coordinates,
/// and Gaussian is the standard normal N(0, I_d). All three have an
/// everywhere-finite MGF. Instances are immutable.
class DistributionSpec {
 public:
  static DistributionSpec finite_support(std::vector<Vec> points, std::vector<double> probs);
  static DistributionSpec product_iid(const DistributionSpec& marginal, int dim);
  static DistributionSpec gaussian(int dim);

  DistributionKind kind() const { return kind_; }
  int dim() const { return dim_; }

  const std::vector<Vec>& points() const { return points_; }
  const std::vector<double>& probs() const { return probs_; }
  /// One-dimensional marginal of a ProductIid spec.
  const DistributionSpec& marginal() const;

  /// Atom values of a one-dimensional FiniteSupport spec.
  std::vector<double> values_1d() const;

  std::string describe() const;

 private:
  DistributionSpec() = default;

  DistributionKind kind_ = DistributionKind::kGaussian;
  int dim_ = 0;
  std::vector<Vec> points_;
  std::vector<double> probs_;
  std::shared_ptr<const DistributionSpec> marginal_;
};

struct MomentSet {
  Vec mean;
  Mat cov;
  Tensor3 third;      // raw moments E[X_j X_k X_l]
  double fourth_abs;  // E|X|^4
};

struct MgfValue {
  double value;      // +inf on overflow
  double log_value;  // always finite for finite arguments
};

/// Whitened copy: zero mean and identity covariance via the symmetric inverse
/// square root of the covariance. Throws std::invalid_argument("degenerate
/// distribution") for a singular covariance.
DistributionSpec standardize(const DistributionSpec& spec);

double log_mgf(const DistributionSpec& spec, const Vec& b);
MgfValue mgf(const DistributionSpec& spec, const Vec& b);

MomentSet moments(const DistributionSpec& spec);

/// `count` i.i.d. draws of X_1.
std::vector<Vec> sample(const DistributionSpec& spec, Philox4x32& rng, std::size_t count);

/// One exact draw of W = n^{-1/2} (X_1 + ... + X_n).
///
/// Finite-support laws go through the multinomial count vector, so the cost is
/// independent of n.
Vec sample_normalized_sum(const DistributionSpec& spec, std::int64_t n, Philox4x32& rng);

/// Multinomial(n, probs) counts written into `counts` (resized).
void sample_multinomial(std::int64_t n, const std::vector<double>& probs, Philox4x32& rng,
                        std::vector<std::int64_t>& counts);

/// Standard normal d-vector.
Vec sample_standard_normal(int dim, Philox4x32& rng);

struct EigenGroup {
  double value;
  int multiplicity;
};

/// Diagonalized quadratic form with eigenvalues 1 = q_1 >= ... >= q_d > 0.
///
/// Eigenvalues within relative distance 1e-12 of each other are snapped to a
/// common value and reported as one group.
class QuadForm {
 public:
  static constexpr double kGroupTolerance = 1e-12;

  /// Requires all values positive and the largest equal to 1 (within 1e-12).
  explicit QuadForm(std::vector<double> eigenvalues);
  /// Divides by the largest value first.
  static QuadForm normalized(std::vector<double> eigenvalues);
  static QuadForm identity(int dim);

  int dim() const { return static_cast<int>(q_.size()); }
  const Vec& eigenvalues() const { return q_; }
  const std::vector<EigenGroup>& groups() const { return groups_; }

  Vec sqrt_diag() const { return q_.cwiseSqrt(); }
  double smallest() const { return q_[q_.size() - 1]; }
  /// det(Q^{1/2})
  double det_sqrt() const;
  bool is_identity() const { return groups_.size() == 1; }

 private:
  Vec q_;
  std::vector<EigenGroup> groups_;
};

struct ReducedForm {
  QuadForm form;
  double x;
  double op_norm;
};

/// Reduces P(|Qbar^{1/2} Wbar| > xbar) for Cov(Xbar) = Sigmabar to the
/// standardized, unit-operator-norm diagonal problem.
ReducedForm reduce_form(const Mat& sigma_bar, const Mat& q_bar, double x_bar);

/// Spec from a JSON tree: {"kind", "dim", "points", "probs", "marginal"}.
DistributionSpec spec_from_json_text(const std::string& text);
std::string spec_to_json_text(const DistributionSpec& spec);

/// Named presets (rademacher1d, rademacher:<d>, gaussian:<d>, skewed2pt[:p],
/// skewed3pt:<d>) or a path to a JSON file. Presets are returned standardized;
/// files are standardized when `standardize_file` is set.
DistributionSpec resolve_spec(const std::string& name_or_path, bool standardize_file = true);

}  // namespace quadtail
