#include "quadtail/tilt.hpp"

#include "quadtail/errors.hpp"
#include "quadtail/parallel.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace quadtail {
namespace {

using boost::math::quadrature::gauss_kronrod;

double log_sum_exp(const std::vector<double>& v) {
  const double top = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double e : v) s += std::exp(e - top);
  return top + std::log(s);
}

/// Normalized tilt of a one-dimensional law: probabilities proportional to
/// p_k e^{theta v_k}. Returns log G(theta).
double tilt_atoms(const std::vector<double>& values, const std::vector<double>& probs, double theta,
                  std::vector<double>& out) {
  std::vector<double> lw(values.size());
  for (std::size_t k = 0; k < values.size(); ++k)
    lw[k] = probs[k] > 0.0 ? std::log(probs[k]) + theta * values[k] : -std::numeric_limits<double>::infinity();
  const double log_g = log_sum_exp(lw);
  out.resize(values.size());
  double total = 0.0;
  for (std::size_t k = 0; k < values.size(); ++k) total += out[k] = std::exp(lw[k] - log_g);
  for (double& p : out) p /= total;
  return log_g;
}

struct RadialIntegral {
  double log_integral;  // log int phi(t) e^{st} F(z0^2 - t^2) dt
  double mean_t;        // the same weight's mean of t
};

RadialIntegral radial_integral(const TiltParams& params, double s, bool want_mean) {
  const double z0 = params.z0;
  const int d = params.dim;
  const double peak = std::min(s, z0);
  const double shift = s * peak - 0.5 * peak * peak;
  auto weight = [&](double t) { return std::exp(s * t - 0.5 * t * t - shift); };
  std::vector<double> cuts{-z0};
  for (double c : {peak - 12.0, peak, peak + 12.0})
    if (c > cuts.back() && c < z0) cuts.push_back(c);
  cuts.push_back(z0);
  double i0 = 0.0;
  double i1 = 0.0;
  if (d == 1) {
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
      i0 += gauss_kronrod<double, 61>::integrate(weight, cuts[k], cuts[k + 1], 10, 1e-13);
      if (want_mean)
        i1 += gauss_kronrod<double, 61>::integrate([&](double t) { return t * weight(t); }, cuts[k], cuts[k + 1],
                                                   10, 1e-13);
    }
  } else {
    // t = z0 sin(phi) makes sqrt(z0^2 - t^2) = z0 cos(phi) smooth at the ends.
    const auto integrand = [&](double phi, bool times_t) {
      const double t = z0 * std::sin(phi);
      const double c = z0 * std::cos(phi);
      const double v = weight(t) * boost::math::gamma_p(0.5 * (d - 1), 0.5 * c * c) * c;
      return times_t ? t * v : v;
    };
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
      const double lo = std::asin(std::clamp(cuts[k] / z0, -1.0, 1.0));
      const double hi = std::asin(std::clamp(cuts[k + 1] / z0, -1.0, 1.0));
      i0 += gauss_kronrod<double, 61>::integrate([&](double p) { return integrand(p, false); }, lo, hi, 10, 1e-13);
      if (want_mean)
        i1 += gauss_kronrod<double, 61>::integrate([&](double p) { return integrand(p, true); }, lo, hi, 10, 1e-13);
    }
  }
  const double log_integral = std::log(i0) + shift - 0.5 * std::log(2.0 * std::numbers::pi);
  return {log_integral, want_mean ? i1 / i0 : 0.0};
}

}  // namespace

TiltParams make_params(double x, std::int64_t n, int dim) {
  if (!(x > 1.0) || !std::isfinite(x)) throw RegimeError("tilt undefined; use crude estimator");
  if (n < 1 || dim < 1) throw std::invalid_argument("tilt needs n >= 1 and d >= 1");
  TiltParams p{};
  p.x = x;
  p.n = n;
  p.dim = dim;
  p.h = 0.5 - 0.5 / (x * x);
  p.z0 = 3.0 * x;
  p.kappa = 1.0 / boost::math::gamma_p(0.5 * dim, 0.5 * p.z0 * p.z0);
  return p;
}

void check_regime(const TiltParams& params, double epsilon) {
  const double limit = epsilon * std::pow(static_cast<double>(params.n), 1.0 / 6.0);
  if (params.x > limit) {
    std::ostringstream msg;
    msg << "outside moderate-deviation regime: x=" << params.x << " exceeds " << epsilon << "*n^(1/6)=" << limit;
    throw RegimeError(msg.str());
  }
}

Vec sample_zx(const TiltParams& params, Philox4x32& rng) {
  const int d = params.dim;
  if (d <= 20) {
    for (;;) {
      Vec z = sample_standard_normal(d, rng);
      if (z.norm() <= params.z0) return z;
    }
  }
  const double top = boost::math::gamma_p(0.5 * d, 0.5 * params.z0 * params.z0);
  const double r2 = 2.0 * boost::math::gamma_p_inv(0.5 * d, rng.uniform() * top);
  Vec u = sample_standard_normal(d, rng);
  return u.normalized() * std::min(std::sqrt(r2), params.z0);
}

Vec tilt_argument(const QuadForm& q, const TiltParams& params, const Vec& z) {
  if (z.size() != q.dim()) throw std::invalid_argument("z has the wrong dimension");
  return std::sqrt(2.0 * params.h / static_cast<double>(params.n)) * q.sqrt_diag().cwiseProduct(z);
}

TiltedLaw::TiltedLaw(const DistributionSpec& spec, const QuadForm& q, const TiltParams& params, const Vec& z,
                     bool with_lambda)
    : kind_(spec.kind()), d_(q.sqrt_diag()), n_(params.n) {
  const int d = spec.dim();
  if (q.dim() != d || params.dim != d) throw std::invalid_argument("tilted law: dimension mismatch");
  if (z.norm() > params.z0 * (1.0 + 1e-12)) throw std::invalid_argument("tilted law needs |z| <= z0");
  const Vec theta = tilt_argument(q, params, z);
  double log_g = 0.0;
  mu_ = Vec::Zero(d);
  sigma_ = Mat::Zero(d, d);
  switch (kind_) {
    case DistributionKind::kGaussian:
      log_g = 0.5 * theta.squaredNorm();
      mu_ = d_.cwiseProduct(theta);
      sigma_ = q.eigenvalues().asDiagonal();
      break;
    case DistributionKind::kFiniteSupport: {
      const std::size_t k_count = spec.points().size();
      std::vector<double> proj(k_count);
      for (std::size_t k = 0; k < k_count; ++k) proj[k] = theta.dot(spec.points()[k]);
      log_g = tilt_atoms(proj, spec.probs(), 1.0, probs_);
      points_.reserve(k_count);
      for (std::size_t k = 0; k < k_count; ++k) {
        points_.push_back(d_.cwiseProduct(spec.points()[k]));
        mu_ += probs_[k] * points_.back();
      }
      for (std::size_t k = 0; k < k_count; ++k) {
        const Vec c = points_[k] - mu_;
        sigma_ += probs_[k] * c * c.transpose();
      }
      break;
    }
    case DistributionKind::kProductIid: {
      marginal_values_ = spec.marginal().values_1d();
      coord_probs_.resize(static_cast<std::size_t>(d));
      for (int j = 0; j < d; ++j) {
        auto& pj = coord_probs_[static_cast<std::size_t>(j)];
        log_g += tilt_atoms(marginal_values_, spec.marginal().probs(), theta[j], pj);
        double m1 = 0.0;
        for (std::size_t k = 0; k < pj.size(); ++k) m1 += pj[k] * marginal_values_[k];
        double var = 0.0;
        for (std::size_t k = 0; k < pj.size(); ++k) var += pj[k] * (marginal_values_[k] - m1) * (marginal_values_[k] - m1);
        mu_[j] = d_[j] * m1;
        sigma_(j, j) = d_[j] * d_[j] * var;
      }
      break;
    }
  }
  n_log_mgf_ = static_cast<double>(n_) * log_g;

  const Vec a = std::sqrt(static_cast<double>(n_)) * theta;
  if (kind_ == DistributionKind::kGaussian) {
    lambda_ = Vec::Zero(d);
  } else if (with_lambda) {
    const Mat m = moments(spec).third.contract1(a);
    lambda_ = Eigen::SelfAdjointEigenSolver<Mat>(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly).eigenvalues();
  }
  Eigen::LLT<Mat> llt(sigma_);
  if (llt.info() != Eigen::Success ||
      Eigen::SelfAdjointEigenSolver<Mat>(sigma_, Eigen::EigenvaluesOnly).eigenvalues().minCoeff() <= 0.0)
    throw RegimeError("tilt outside validity regime");
}

Vec TiltedLaw::sample_scaled_sum(Philox4x32& rng) const {
  const double root_n = std::sqrt(static_cast<double>(n_));
  const int d = static_cast<int>(d_.size());
  switch (kind_) {
    case DistributionKind::kGaussian: {
      const Vec zeta = sample_standard_normal(d, rng);
      return root_n * mu_ + d_.cwiseProduct(zeta);
    }
    case DistributionKind::kFiniteSupport: {
      std::vector<std::int64_t> counts;
      sample_multinomial(n_, probs_, rng, counts);
      Vec s = Vec::Zero(d);
      for (std::size_t k = 0; k < counts.size(); ++k)
        if (counts[k] != 0) s += static_cast<double>(counts[k]) * points_[k];
      return s / root_n;
    }
    case DistributionKind::kProductIid: {
      Vec s(d);
      std::vector<std::int64_t> counts;
      for (int j = 0; j < d; ++j) {
        sample_multinomial(n_, coord_probs_[static_cast<std::size_t>(j)], rng, counts);
        double acc = 0.0;
        for (std::size_t k = 0; k < counts.size(); ++k) acc += static_cast<double>(counts[k]) * marginal_values_[k];
        s[j] = d_[j] * acc / root_n;
      }
      return s;
    }
  }
  throw std::logic_error("unreachable");
}

MomentExpansion tilted_moment_expansion(const DistributionSpec& spec, const QuadForm& q, const TiltParams& params,
                                        const Vec& z) {
  const TiltedLaw law(spec, q, params, z);
  const Vec dq = q.sqrt_diag();
  const double root_n = std::sqrt(static_cast<double>(params.n));
  const Vec a = std::sqrt(2.0 * params.h) * dq.cwiseProduct(z);
  const Tensor3 t = moments(spec).third;
  MomentExpansion e;
  e.mu_approx = std::sqrt(2.0 * params.h) * q.eigenvalues().cwiseProduct(z) / root_n +
                dq.cwiseProduct(t.contract2(a, a)) / (2.0 * static_cast<double>(params.n));
  const Mat inner = Mat::Identity(q.dim(), q.dim()) + t.contract1(a) / root_n;
  e.sigma_approx = dq.asDiagonal() * inner * dq.asDiagonal();
  e.mu_remainder = law.mu_tilde() - e.mu_approx;
  const Vec inv = dq.cwiseInverse();
  e.sigma_remainder = inv.asDiagonal() * (law.sigma_tilde() - e.sigma_approx) * inv.asDiagonal();
  e.mu_remainder_norm = e.mu_remainder.norm();
  e.sigma_remainder_max = e.sigma_remainder.cwiseAbs().maxCoeff();
  return e;
}

bool lambda_antisymmetry_check(const DistributionSpec& spec, const QuadForm& q, const TiltParams& params,
                               const Vec& z) {
  const Vec plus = TiltedLaw(spec, q, params, z).lambda_tilde();
  const Vec minus = TiltedLaw(spec, q, params, -z).lambda_tilde();
  // ascending order: the negation of `plus` reversed must equal `minus`
  const Eigen::Index d = plus.size();
  for (Eigen::Index i = 0; i < d; ++i)
    if (std::abs(minus[i] + plus[d - 1 - i]) > 1e-10) return false;
  return true;
}

BTerms b_terms(const DistributionSpec& spec, const QuadForm& q, const TiltParams& params, const Vec& z,
               const Vec& y) {
  if (y.size() != q.dim() || z.size() != q.dim()) throw std::invalid_argument("b_terms: dimension mismatch");
  const Vec dq = q.sqrt_diag();
  const Vec a = std::sqrt(2.0 * params.h) * dq.cwiseProduct(z);
  const Vec w = y.cwiseQuotient(dq);
  const Vec v = w - a;
  const Tensor3 t = moments(spec).third;
  const double root_n = std::sqrt(static_cast<double>(params.n));
  double trace_v = 0.0;
  for (int j = 0; j < q.dim(); ++j) {
    const Vec e = Vec::Unit(q.dim(), j);
    trace_v += t.contract(e, e, v);
  }
  BTerms b;
  b.b0 = -t.contract1(a).trace() / (2.0 * root_n);
  b.b1 = (t.contract(a, w, w) - t.contract(a, a, w)) / (2.0 * root_n);
  b.b2 = (3.0 * trace_v - t.contract(v, v, v)) / (6.0 * root_n);
  b.b3 = t.contract(a, a, a) / (6.0 * root_n);
  return b;
}

double log_m(const TiltParams& params, double a) {
  if (!(a >= 0.0)) throw std::invalid_argument("m(a) needs a >= 0");
  if (a == 0.0) return 0.0;
  const double s = std::sqrt(2.0 * params.h) * a;
  return std::log(params.kappa) + radial_integral(params, s, false).log_integral;
}

double m_function(const TiltParams& params, double a) { return std::exp(log_m(params, a)); }

double log_m_derivative(const TiltParams& params, double a) {
  if (!(a >= 0.0)) throw std::invalid_argument("m(a) needs a >= 0");
  const double root = std::sqrt(2.0 * params.h);
  return root * radial_integral(params, root * a, true).mean_t;
}

MTable::MTable(const TiltParams& params, int nodes, int workers)
    : params_(params), lo_(params.x), hi_(10.0 * params.x) {
  if (nodes < 2) throw std::invalid_argument("m table needs at least two nodes");
  step_ = (hi_ - lo_) / (nodes - 1);
  value_.resize(static_cast<std::size_t>(nodes));
  slope_.resize(value_.size());
  const BlockSchedule schedule{static_cast<std::uint64_t>(nodes), 64};
  run_blocks<int>(schedule, workers, [&](std::uint64_t b) {
    for (std::uint64_t i = schedule.begin(b); i < schedule.begin(b) + schedule.size(b); ++i) {
      const double a = lo_ + step_ * static_cast<double>(i);
      const double root = std::sqrt(2.0 * params_.h);
      const auto r = radial_integral(params_, root * a, true);
      value_[i] = std::log(params_.kappa) + r.log_integral;
      slope_[i] = root * r.mean_t;
    }
    return 0;
  });
  // Fritsch-Carlson limiter keeps each cell monotone.
  for (std::size_t i = 0; i + 1 < value_.size(); ++i) {
    const double delta = (value_[i + 1] - value_[i]) / step_;
    if (delta <= 0.0) continue;
    const double al = slope_[i] / delta;
    const double be = slope_[i + 1] / delta;
    const double r2 = al * al + be * be;
    if (r2 > 9.0) {
      const double tau = 3.0 / std::sqrt(r2);
      slope_[i] = tau * al * delta;
      slope_[i + 1] = tau * be * delta;
    }
  }
}

std::shared_ptr<const MTable> MTable::shared(const TiltParams& params, int workers) {
  static std::mutex mutex;
  static std::map<std::pair<double, int>, std::shared_ptr<const MTable>> cache;
  const auto key = std::make_pair(params.x, params.dim);
  std::lock_guard lock(mutex);
  if (const auto it = cache.find(key); it != cache.end()) return it->second;
  if (cache.size() >= 64) cache.clear();
  auto table = std::make_shared<const MTable>(params, kDefaultNodes, workers);
  cache.emplace(key, table);
  return table;
}

double MTable::log_m(double a) const {
  if (a < lo_ || a > hi_) return quadtail::log_m(params_, a);
  const double pos = (a - lo_) / step_;
  const std::size_t i = std::min(static_cast<std::size_t>(pos), value_.size() - 2);
  const double t = pos - static_cast<double>(i);
  const double t2 = t * t;
  const double t3 = t2 * t;
  return (2 * t3 - 3 * t2 + 1) * value_[i] + (t3 - 2 * t2 + t) * step_ * slope_[i] + (-2 * t3 + 3 * t2) * value_[i + 1] +
         (t3 - t2) * step_ * slope_[i + 1];
}

double MTable::max_error(int probes) const {
  double worst = 0.0;
  for (int k = 0; k < probes; ++k) {
    const double a = lo_ + (hi_ - lo_) * (k + 0.5) / probes;
    worst = std::max(worst, std::abs(log_m(a) - quadtail::log_m(params_, a)));
  }
  return worst;
}

MgfCheck mgf_expansion_check(const DistributionSpec& spec, const Vec& a, std::int64_t n) {
  if (n < 1 || a.size() != spec.dim()) throw std::invalid_argument("mgf check: bad arguments");
  const double root_n = std::sqrt(static_cast<double>(n));
  const double r = a.norm();
  const double third = moments(spec).third.contract(a, a, a);
  MgfCheck c;
  c.lhs = std::exp(static_cast<double>(n) * log_mgf(spec, a / root_n));
  c.rhs_main = std::exp(0.5 * r * r) * (1.0 + third / (6.0 * root_n));
  c.envelope = (std::pow(r, 4) + std::pow(r, 6)) / static_cast<double>(n) * std::exp(0.5 * r * r + r * r * r / root_n);
  c.in_regime = r <= 0.1 * root_n;
  return c;
}

MixtureWeight mixture_weight(const DistributionSpec& spec, const QuadForm& q, const TiltParams& params,
                             const Vec& z) {
  if (z.norm() > params.z0 * (1.0 + 1e-12)) throw std::invalid_argument("mixture weight needs |z| <= z0");
  const double lv = static_cast<double>(params.n) * log_mgf(spec, tilt_argument(q, params, z));
  return {std::exp(lv), lv};
}

}  // namespace quadtail
