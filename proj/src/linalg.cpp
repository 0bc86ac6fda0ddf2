#include "quadtail/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace quadtail {

double Tensor3::contract(const Vec& a, const Vec& b, const Vec& c) const {
  double total = 0.0;
  for (int j = 0; j < dim_; ++j) {
    for (int k = 0; k < dim_; ++k) {
      const double ab = a[j] * b[k];
      for (int l = 0; l < dim_; ++l) total += (*this)(j, k, l) * ab * c[l];
    }
  }
  return total;
}

Vec Tensor3::contract2(const Vec& a, const Vec& b) const {
  Vec out = Vec::Zero(dim_);
  for (int j = 0; j < dim_; ++j)
    for (int k = 0; k < dim_; ++k) {
      const double ab = a[j] * b[k];
      for (int l = 0; l < dim_; ++l) out[l] += (*this)(j, k, l) * ab;
    }
  return out;
}

Mat Tensor3::contract1(const Vec& a) const {
  Mat out = Mat::Zero(dim_, dim_);
  for (int j = 0; j < dim_; ++j)
    for (int k = 0; k < dim_; ++k)
      for (int l = 0; l < dim_; ++l) out(k, l) += (*this)(j, k, l) * a[j];
  return out;
}

double Tensor3::asymmetry() const {
  double worst = 0.0;
  for (int j = 0; j < dim_; ++j)
    for (int k = 0; k < dim_; ++k)
      for (int l = 0; l < dim_; ++l) {
        const double v = (*this)(j, k, l);
        for (double w : {(*this)(j, l, k), (*this)(k, j, l), (*this)(k, l, j), (*this)(l, j, k),
                         (*this)(l, k, j)})
          worst = std::max(worst, std::abs(v - w));
      }
  return worst;
}

bool Tensor3::is_zero() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return v == 0.0; });
}

Tensor3 Tensor3::scaled(const Vec& s) const {
  Tensor3 out(dim_);
  for (int j = 0; j < dim_; ++j)
    for (int k = 0; k < dim_; ++k)
      for (int l = 0; l < dim_; ++l) out(j, k, l) = s[j] * s[k] * s[l] * (*this)(j, k, l);
  return out;
}

SymmetricRoots symmetric_roots(const Mat& spd, double rel_tol) {
  Eigen::SelfAdjointEigenSolver<Mat> eig(spd);
  if (eig.info() != Eigen::Success) throw std::domain_error("eigendecomposition failed");
  const Vec& lam = eig.eigenvalues();
  const double top = lam.cwiseAbs().maxCoeff();
  if (!(lam.minCoeff() > rel_tol * std::max(top, 1e-300)))
    throw std::domain_error("matrix is not positive definite");
  const Mat& vecs = eig.eigenvectors();
  SymmetricRoots out;
  out.eigenvalues = lam;
  out.sqrt = vecs * lam.cwiseSqrt().asDiagonal() * vecs.transpose();
  out.inv_sqrt = vecs * lam.cwiseSqrt().cwiseInverse().asDiagonal() * vecs.transpose();
  return out;
}

bool is_symmetric(const Mat& m, double tol) {
  if (m.rows() != m.cols()) return false;
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol * std::max(1.0, m.cwiseAbs().maxCoeff());
}

}  // namespace quadtail
