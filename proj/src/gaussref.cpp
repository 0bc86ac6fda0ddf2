#include "quadtail/gaussref.hpp"

#include "quadtail/errors.hpp"
#include "quadtail/rng.hpp"

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace quadtail {
namespace {

using boost::math::quadrature::gauss_kronrod;

constexpr double kPi = std::numbers::pi;
constexpr int kMaxPanels = 100000;
constexpr double kImhofTol = 1e-13;
constexpr double kRubenSwitch = 1e-5;

/// Wynn epsilon extrapolation of the limit of a sequence of partial sums.
double wynn_epsilon(const std::vector<double>& sums) {
  const std::size_t len = std::min<std::size_t>(sums.size(), 25);
  std::vector<double> prev(len, 0.0);
  std::vector<double> cur(sums.end() - static_cast<std::ptrdiff_t>(len), sums.end());
  double best = cur.back();
  for (std::size_t col = 1; col < len; ++col) {
    std::vector<double> next(len - col);
    for (std::size_t k = 0; k + col < len; ++k) {
      const double diff = cur[k + 1] - cur[k];
      if (diff == 0.0) return best;
      next[k] = prev[k + 1] + 1.0 / diff;
    }
    prev = std::move(cur);
    cur = std::move(next);
    if (col % 2 == 0) best = cur.back();
  }
  return best;
}

struct ImhofIntegrand {
  std::span<const ChiSqTerm> terms;
  double t;

  void phase(double u, double& theta, double& log_rho) const {
    theta = -0.5 * t * u;
    log_rho = 0.0;
    for (const auto& term : terms) {
      const double lu = term.weight * u;
      const double den = 1.0 + lu * lu;
      theta += 0.5 * (term.dof * std::atan(lu) + term.noncentrality * lu / den);
      log_rho += 0.25 * term.dof * std::log1p(lu * lu) + 0.5 * term.noncentrality * lu * lu / den;
    }
  }

  double slope_at_zero() const {
    double s = -0.5 * t;
    for (const auto& term : terms) s += 0.5 * term.weight * (term.dof + term.noncentrality);
    return s;
  }

  double operator()(double u) const {
    if (u * terms.front().weight < 1e-8 && u * t < 1e-8) return slope_at_zero();
    double theta = 0.0;
    double log_rho = 0.0;
    phase(u, theta, log_rho);
    return std::sin(theta) / (u * std::exp(log_rho));
  }

  double envelope(double u) const {
    double theta = 0.0;
    double log_rho = 0.0;
    phase(u, theta, log_rho);
    return 1.0 / (u * std::exp(log_rho));
  }
};

void check_terms(std::span<const ChiSqTerm> terms) {
  if (terms.empty()) throw std::invalid_argument("weighted chi-square sum needs at least one term");
  for (const auto& term : terms) {
    if (!(term.weight > 0.0) || !std::isfinite(term.weight) || term.dof < 1 || !(term.noncentrality >= 0.0))
      throw std::invalid_argument("chi-square terms need positive weight, dof >= 1, noncentrality >= 0");
  }
}

std::vector<ChiSqTerm> terms_of(const QuadForm& q) {
  std::vector<ChiSqTerm> terms;
  for (const auto& g : q.groups()) terms.push_back({g.value, g.multiplicity, 0.0});
  return terms;
}

}  // namespace

ProbabilityResult imhof_tail(std::span<const ChiSqTerm> terms, double t) {
  check_terms(terms);
  if (t <= 0.0) return {1.0, 0.0};
  std::vector<ChiSqTerm> sorted(terms.begin(), terms.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.weight > b.weight; });
  const ImhofIntegrand f{sorted, t};

  double theta_inf = 0.0;
  for (const auto& term : sorted) theta_inf += 0.25 * kPi * term.dof;
  auto boundary = [&](int k) { return 2.0 * (theta_inf + k * kPi) / t; };

  double quad_err = 0.0;
  auto integrate = [&](double a, double b) {
    double err = 0.0;
    const double v = gauss_kronrod<double, 31>::integrate(f, a, b, 8, 1e-12, &err);
    quad_err += err;
    return v;
  };

  // First region: geometric breakpoints resolve the scales 1/lambda_j.
  double head = 0.0;
  const double first_end = boundary(1);
  double lo = 0.0;
  double hi = std::min(0.125 / sorted.front().weight, first_end);
  while (lo < first_end) {
    head += integrate(lo, hi);
    lo = hi;
    hi = std::min(2.0 * hi, first_end);
  }

  std::vector<double> sums{head};
  double last = head;
  double prev_extrap = std::numeric_limits<double>::quiet_NaN();
  double prev_delta = std::numeric_limits<double>::infinity();
  const double period = 2.0 * kPi / t;
  for (int k = 1; k <= kMaxPanels; ++k) {
    last += integrate(boundary(k), boundary(k + 1));
    sums.push_back(last);
    const double env_tail = f.envelope(boundary(k + 1)) * period / kPi;
    if (env_tail < kImhofTol) {
      const double p = 0.5 + last / kPi;
      return {std::clamp(p, 0.0, 1.0), env_tail + quad_err / kPi + 1e-15};
    }
    if (k >= 6) {
      const double extrap = wynn_epsilon(sums);
      const double delta = std::abs(extrap - prev_extrap) / kPi;
      if (delta < kImhofTol && prev_delta < kImhofTol) {
        const double p = 0.5 + extrap / kPi;
        return {std::clamp(p, 0.0, 1.0), std::max(delta, prev_delta) + quad_err / kPi + 1e-15};
      }
      prev_delta = delta;
      prev_extrap = extrap;
    }
  }
  std::ostringstream msg;
  msg << "characteristic-function inversion did not converge: t=" << t << ", terms=" << sorted.size()
      << ", panels=" << kMaxPanels << ", last partial sum=" << 0.5 + last / kPi;
  throw NumericalError(msg.str());
}

ProbabilityResult ruben_tail(std::span<const ChiSqTerm> terms, double t) {
  check_terms(terms);
  if (t <= 0.0) return {1.0, 0.0};
  double beta = terms.front().weight;
  double lambda_max = terms.front().weight;
  for (const auto& term : terms) {
    beta = std::min(beta, term.weight);
    lambda_max = std::max(lambda_max, term.weight);
  }
  double half_dof = 0.0;
  double log_a0 = 0.0;
  for (const auto& term : terms) {
    half_dof += 0.5 * term.dof;
    log_a0 += -0.5 * term.noncentrality + 0.5 * term.dof * std::log(beta / term.weight);
  }
  if (log_a0 < -700.0) throw NumericalError("mixture series underflows (noncentrality too large)");

  const double y = t / (2.0 * beta);
  const double log_y = std::log(y);
  const double rho_asym = 1.0 - beta / lambda_max;
  std::vector<double> a{std::exp(log_a0)};
  std::vector<double> g{0.0};
  double q = boost::math::gamma_q(half_dof, y);
  double value = a[0] * q;
  double noncentral = 0.0;
  for (const auto& term : terms) noncentral += term.noncentrality;
  if (rho_asym == 0.0 && noncentral == 0.0) return {value, 1e-15 * value};
  constexpr int kMaxTerms = 5000;
  for (int k = 1; k <= kMaxTerms; ++k) {
    double gk = 0.0;
    for (const auto& term : terms) {
      const double c = 1.0 - beta / term.weight;
      gk += term.dof * std::pow(c, k) + k * term.noncentrality * (beta / term.weight) * std::pow(c, k - 1);
    }
    g.push_back(gk);
    double ak = 0.0;
    for (int r = 0; r < k; ++r) ak += g[k - r] * a[r];
    ak /= 2.0 * k;
    a.push_back(ak);
    const double s = half_dof + k - 1;
    q += std::exp(s * log_y - y - std::lgamma(s + 1.0));
    q = std::min(q, 1.0);
    value += ak * q;

    const double ratio = a[k - 1] > 0.0 ? ak / a[k - 1] : 0.0;
    const double rho = std::max(ratio, rho_asym);
    if (rho < 1.0 && k > 5) {
      const double remainder = ak * rho / (1.0 - rho);
      if (remainder < 1e-14 * value || remainder < 1e-300)
        return {std::min(value, 1.0), remainder + 1e-15 * value};
    }
  }
  throw NumericalError("mixture series did not converge within 5000 terms");
}

ProbabilityResult gaussian_ball_tail(const QuadForm& q, double x) {
  if (!(x >= 0.0) || !std::isfinite(x)) throw std::invalid_argument("radius must be finite and nonnegative");
  if (x == 0.0) return {1.0, 0.0};
  const double t = x * x;
  if (q.is_identity()) {
    const double v = boost::math::gamma_q(0.5 * q.dim(), 0.5 * t);
    return {v, 1e-15 * std::max(v, 1e-300)};
  }
  const auto terms = terms_of(q);
  ProbabilityResult r = imhof_tail(terms, t);
  if (r.value < kRubenSwitch) {
    try {
      r = ruben_tail(terms, t);
    } catch (const NumericalError&) {
      // keep the inversion result
    }
  }
  return r;
}

ProbabilityResult gaussian_ball_mass(const Mat& sigma, const Vec& center, double radius) {
  if (sigma.rows() != center.size() || !is_symmetric(sigma))
    throw std::invalid_argument("ball mass needs a symmetric covariance matching the center");
  if (!(radius >= 0.0)) throw std::invalid_argument("radius must be nonnegative");
  if (radius == 0.0) return {0.0, 0.0};
  Eigen::SelfAdjointEigenSolver<Mat> eig(sigma);
  const Vec& lam = eig.eigenvalues();
  if (!(lam.minCoeff() > 0.0)) throw std::invalid_argument("covariance must be positive definite");
  const Vec c = eig.eigenvectors().transpose() * center;
  std::vector<ChiSqTerm> terms;
  for (Eigen::Index i = 0; i < lam.size(); ++i) terms.push_back({lam[i], 1, c[i] * c[i] / lam[i]});
  const double t = radius * radius;
  ProbabilityResult tail = imhof_tail(terms, t);
  if (tail.value < kRubenSwitch) {
    try {
      tail = ruben_tail(terms, t);
    } catch (const NumericalError&) {
    }
  }
  return {std::clamp(1.0 - tail.value, 0.0, 1.0), tail.abs_err};
}

ChiSqBound chisq_lower_bound(const QuadForm& q, double x) {
  if (!(x > 1.0)) throw std::invalid_argument("chi-square lower bound needs x > 1");
  const auto& groups = q.groups();
  const int s = static_cast<int>(groups.size());
  int p = s + 1;
  for (int i = 1; i <= s; ++i) {
    const double lam = groups[i - 1].value;
    if ((1.0 - lam) * x * x / lam > 1.0) {
      p = i;
      break;
    }
  }
  int r = 0;
  double log_prod = 0.0;
  for (int i = 1; i <= s; ++i) {
    if (i < p) r += groups[i - 1].multiplicity;
    else log_prod += -0.5 * groups[i - 1].multiplicity * std::log1p(-groups[i - 1].value);
  }
  const double bound = std::exp(log_prod + (r - 2) * std::log(x) - 0.5 * x * x);
  return {bound, p, r};
}

SphereFraction::SphereFraction(const QuadForm& q, std::uint64_t seed, std::size_t directions, int grid_points)
    : q_(q), upper_(1.0 / std::sqrt(q.smallest())), exact_(q.dim() <= 2 || q.is_identity()) {
  if (exact_) return;
  if (directions < 2 || grid_points < 2) throw std::invalid_argument("sphere fraction needs directions and grid");
  const int d = q.dim();
  const Vec& w = q.eigenvalues();
  std::vector<double> s(directions);
  constexpr std::size_t kBlock = 1u << 14;
  std::normal_distribution<double> normal;
  for (std::size_t b = 0; b * kBlock < directions; ++b) {
    Philox4x32 rng(seed, stream_id(StreamPurpose::kSphere, b));
    const std::size_t end = std::min(directions, (b + 1) * kBlock);
    for (std::size_t i = b * kBlock; i < end; ++i) {
      double num = 0.0;
      double den = 0.0;
      for (int j = 0; j < d; ++j) {
        const double z = normal(rng);
        num += w[j] * z * z;
        den += z * z;
      }
      s[i] = num / den;
    }
  }
  std::sort(s.begin(), s.end());
  grid_a_.resize(static_cast<std::size_t>(grid_points));
  grid_xi_.resize(grid_a_.size());
  const double total = static_cast<double>(directions);
  for (int g = 0; g < grid_points; ++g) {
    const double a = 1.0 + (upper_ - 1.0) * g / (grid_points - 1);
    const double threshold = 1.0 / (a * a);
    const auto above = s.end() - std::upper_bound(s.begin(), s.end(), threshold);
    grid_a_[g] = a;
    grid_xi_[g] = static_cast<double>(above) / total;
  }
  grid_xi_.front() = 0.0;
  grid_xi_.back() = 1.0;
}

double SphereFraction::exact_value(double a) const {
  if (q_.dim() == 1 || q_.is_identity()) return 1.0;
  // d = 2: the direction (cos t, sin t) is outside iff q2 + (1 - q2) cos^2 t > 1/a^2.
  const double q2 = q_.eigenvalues()[1];
  const double target = 1.0 / (a * a);
  auto s = [&](double t) { return q2 + (1.0 - q2) * std::cos(t) * std::cos(t); };
  double lo = 0.0;
  double hi = 0.5 * kPi;
  for (int it = 0; it < 200 && hi - lo > 1e-16; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (s(mid) > target) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi) / (0.5 * kPi);
}

double SphereFraction::operator()(double a) const {
  if (!(a > 1.0)) return 0.0;
  if (a >= upper_) return 1.0;
  if (exact_) return exact_value(a);
  const double pos = (a - 1.0) / (upper_ - 1.0) * (grid_a_.size() - 1);
  const auto i = std::min(static_cast<std::size_t>(pos), grid_a_.size() - 2);
  const double frac = pos - static_cast<double>(i);
  return grid_xi_[i] + frac * (grid_xi_[i + 1] - grid_xi_[i]);
}

double weighted_radial_integral(const SphereFraction& xi, double x, double r, double c, std::int64_t n) {
  const int d = xi.form().dim();
  if (!(x > 1.0)) throw std::invalid_argument("radial integral needs x > 1");
  if (!std::isfinite(r)) throw std::invalid_argument("radial integral needs a finite power r");
  if (c < 0.0 || n < 1) throw std::invalid_argument("radial integral needs C >= 0 and n >= 1");
  const double beta = 0.5 - c * x / std::sqrt(static_cast<double>(n));
  if (!(beta > 0.0)) throw RegimeError("tilt too strong");

  const double k = r + d - 1.0;
  auto upper_tail = [&](double from) {
    // int_from^inf u^k exp(-beta u^2) du
    return 0.5 * std::pow(beta, -0.5 * (k + 1.0)) * boost::math::tgamma(0.5 * (k + 1.0), beta * from * from);
  };
  if (d == 1) return 2.0 * upper_tail(x);

  const double area = 2.0 * std::pow(kPi, 0.5 * d) / std::tgamma(0.5 * d);
  const double edge = x * xi.upper_edge();
  double middle = 0.0;
  auto integrand = [&](double u) { return xi(u / x) * std::pow(u, k) * std::exp(-beta * u * u); };
  if (edge > x) {
    if (xi.exact()) {
      middle = gauss_kronrod<double, 31>::integrate(integrand, x, edge, 15, 1e-12);
    } else {
      const auto& grid = xi.grid();
      for (std::size_t i = 0; i + 1 < grid.size(); ++i)
        middle += boost::math::quadrature::gauss<double, 10>::integrate(integrand, x * grid[i], x * grid[i + 1]);
    }
  }
  return area * (middle + upper_tail(edge));
}

std::optional<double> cap_fraction_delta(int d) {
  if (d < 1) throw std::invalid_argument("dimension must be positive");
  if (d == 1) return std::nullopt;
  const double t2 = boost::math::ibetac_inv(0.5, 0.5 * (d - 1), 0.125);
  return 1.0 / std::sqrt(t2) - 1.0;
}

}  // namespace quadtail
