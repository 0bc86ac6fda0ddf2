#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace quadtail {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Dense d x d x d tensor, row-major. Used for third moments E[X_j X_k X_l].
class Tensor3 {
 public:
  Tensor3() = default;
  explicit Tensor3(int dim) : dim_(dim), data_(static_cast<std::size_t>(dim) * dim * dim, 0.0) {}

  int dim() const { return dim_; }

  double& operator()(int j, int k, int l) { return data_[index(j, k, l)]; }
  double operator()(int j, int k, int l) const { return data_[index(j, k, l)]; }

  /// T(a, b, c) = sum_{jkl} T_{jkl} a_j b_k c_l
  double contract(const Vec& a, const Vec& b, const Vec& c) const;

  /// Vector v_l = sum_{jk} T_{jkl} a_j b_k.
  Vec contract2(const Vec& a, const Vec& b) const;

  /// Matrix M_{kl} = sum_j T_{jkl} a_j.
  Mat contract1(const Vec& a) const;

  /// Largest |T_{jkl} - T_{sigma(jkl)}| over index permutations.
  double asymmetry() const;

  bool is_zero() const;

  /// T'_{jkl} = s_j s_k s_l T_{jkl}, the tensor of diag(s) X.
  Tensor3 scaled(const Vec& s) const;

 private:
  std::size_t index(int j, int k, int l) const {
    return (static_cast<std::size_t>(j) * dim_ + k) * dim_ + l;
  }

  int dim_ = 0;
  std::vector<double> data_;
};

/// Symmetric eigen-decomposition helpers for SPD matrices.
struct SymmetricRoots {
  Mat sqrt;
  Mat inv_sqrt;
  Vec eigenvalues;  // ascending
};

/// Symmetric square root and inverse square root. Throws std::domain_error if
/// the smallest eigenvalue is not positive relative to the largest.
SymmetricRoots symmetric_roots(const Mat& spd, double rel_tol = 1e-12);

bool is_symmetric(const Mat& m, double tol = 1e-12);

}  // namespace quadtail
