#include "quadtail/errors.hpp"
#include "quadtail/gaussref.hpp"
#include "quadtail/tilt.hpp"

#include <doctest.h>

#include <boost/math/special_functions/gamma.hpp>

#include <cmath>
#include <numbers>
#include <random>

using namespace quadtail;

namespace {

DistributionSpec rademacher() {
  return DistributionSpec::finite_support({Vec::Constant(1, -1.0), Vec::Constant(1, 1.0)}, {0.5, 0.5});
}

/// Least-squares slope of log y against log x.
double loglog_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += std::log(xs[i]);
    my += std::log(ys[i]);
  }
  mx /= xs.size();
  my /= ys.size();
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (std::log(xs[i]) - mx) * (std::log(ys[i]) - my);
    sxx += (std::log(xs[i]) - mx) * (std::log(xs[i]) - mx);
  }
  return sxy / sxx;
}

Vec random_z(const TiltParams& p, Philox4x32& rng) { return sample_zx(p, rng); }

}  // namespace

TEST_CASE("make_params") {
  const auto p = make_params(2.0, 100, 1);
  CHECK(p.h == doctest::Approx(0.375));
  CHECK(p.z0 == 6.0);
  CHECK(p.kappa == doctest::Approx(1.0 / std::erf(6.0 / std::numbers::sqrt2)).epsilon(1e-15));
  CHECK(p.kappa >= 1.0);
  CHECK(make_params(1.0 + 1e-9, 10, 2).h == doctest::Approx(0.0).epsilon(1e-8));
  CHECK(make_params(50.0, 10, 3).kappa == doctest::Approx(1.0));
  CHECK_THROWS_WITH_AS(make_params(1.0, 100, 1), "tilt undefined; use crude estimator", RegimeError);
  CHECK_THROWS_AS(make_params(0.5, 100, 1), RegimeError);
}

TEST_CASE("regime guard") {
  const auto p = make_params(2.0, 100, 1);
  CHECK_NOTHROW(check_regime(p));
  CHECK_THROWS_AS(check_regime(p, 0.5), RegimeError);
}

TEST_CASE("sample_zx") {
  for (int d : {1, 3, 25}) {
    const auto p = make_params(1.2, 100, d);
    Philox4x32 rng(21, static_cast<std::uint64_t>(d));
    const int draws = 200000;
    Vec mean = Vec::Zero(d);
    double r2 = 0.0;
    double r4 = 0.0;
    for (int i = 0; i < draws; ++i) {
      const Vec z = sample_zx(p, rng);
      REQUIRE(z.norm() <= p.z0 * (1 + 1e-15));
      mean += z;
      r2 += z.squaredNorm();
      r4 += z.squaredNorm() * z.squaredNorm();
    }
    mean /= draws;
    for (int j = 0; j < d; ++j) CHECK(std::abs(mean[j]) <= 4.0 * std::sqrt(1.0 / draws));
    // truncated chi-square oracle for E|Z_x|^2
    const double y = 0.5 * p.z0 * p.z0;
    const double expect = d * boost::math::gamma_p(0.5 * d + 1, y) / boost::math::gamma_p(0.5 * d, y);
    const double m2 = r2 / draws;
    const double se = std::sqrt((r4 / draws - m2 * m2) / draws);
    CHECK(expect <= d);
    CHECK(std::abs(m2 - expect) <= 4 * se);
  }
}

TEST_CASE("tilted law closed forms") {
  const auto p = make_params(2.0, 100, 2);
  const Vec z = (Vec(2) << 1.3, -0.4).finished();
  SUBCASE("gaussian with identity form") {
    const TiltedLaw law(DistributionSpec::gaussian(2), QuadForm::identity(2), p, z);
    const Vec expect = std::sqrt(2 * p.h) * z / 10.0;
    CHECK((law.mu_tilde() - expect).cwiseAbs().maxCoeff() <= 1e-16);
    CHECK((law.sigma_tilde() - Mat::Identity(2, 2)).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("zero tilt returns the base law") {
    const auto spec = resolve_spec("skewed3pt:2");
    const QuadForm q({1.0, 0.3});
    const TiltedLaw law(spec, q, p, Vec::Zero(2));
    CHECK(law.mu_tilde().cwiseAbs().maxCoeff() <= 1e-15);
    CHECK((law.sigma_tilde() - Mat(q.eigenvalues().asDiagonal())).cwiseAbs().maxCoeff() <= 1e-14);
    CHECK(law.log_weight() == 0.0);
  }
  SUBCASE("rademacher mean is tanh") {
    const auto p1 = make_params(2.0, 100, 1);
    for (double zv : {-5.0, -1.0, 0.3, 4.0}) {
      const TiltedLaw law(rademacher(), QuadForm::identity(1), p1, Vec::Constant(1, zv));
      CHECK(law.mu_tilde()[0] == doctest::Approx(std::tanh(std::sqrt(2 * p1.h) * zv / 10.0)).epsilon(1e-14));
      double total = 0.0;
      for (double pr : law.probs()) total += pr;
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
  }
  SUBCASE("product law equals the explicit joint law") {
    const auto prod = resolve_spec("skewed3pt:2");
    const auto& marg = prod.marginal();
    std::vector<Vec> pts;
    std::vector<double> probs;
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t b = 0; b < 3; ++b) {
        pts.push_back((Vec(2) << marg.points()[a][0], marg.points()[b][0]).finished());
        probs.push_back(marg.probs()[a] * marg.probs()[b]);
      }
    const auto joint = DistributionSpec::finite_support(pts, probs);
    const QuadForm q({1.0, 0.4});
    const TiltedLaw lp(prod, q, p, z);
    const TiltedLaw lj(joint, q, p, z);
    CHECK((lp.mu_tilde() - lj.mu_tilde()).cwiseAbs().maxCoeff() <= 1e-14);
    CHECK((lp.sigma_tilde() - lj.sigma_tilde()).cwiseAbs().maxCoeff() <= 1e-14);
    CHECK((lp.lambda_tilde() - lj.lambda_tilde()).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(lp.log_weight() == doctest::Approx(lj.log_weight()).epsilon(1e-13));
  }
  SUBCASE("bad z") {
    CHECK_THROWS_AS(TiltedLaw(DistributionSpec::gaussian(2), QuadForm::identity(2), p, Vec::Constant(2, 10.0)),
                    std::invalid_argument);
  }
}

TEST_CASE("discretized gaussian reweighting matches the closed form") {
  // 10^4-point discretization of N(0,1) on [-8, 8]
  const int m = 10000;
  std::vector<Vec> pts;
  std::vector<double> probs;
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    const double v = -8.0 + 16.0 * (i + 0.5) / m;
    pts.push_back(Vec::Constant(1, v));
    probs.push_back(std::exp(-0.5 * v * v));
    total += probs.back();
  }
  for (double& pr : probs) pr /= total;
  const auto disc = standardize(DistributionSpec::finite_support(pts, probs));
  const auto p = make_params(2.5, 50, 1);
  const Vec z = Vec::Constant(1, 4.0);
  const TiltedLaw a(disc, QuadForm::identity(1), p, z);
  const TiltedLaw b(DistributionSpec::gaussian(1), QuadForm::identity(1), p, z);
  CHECK(std::abs(a.mu_tilde()[0] - b.mu_tilde()[0]) <= 1e-6);
  CHECK(std::abs(a.sigma_tilde()(0, 0) - b.sigma_tilde()(0, 0)) <= 1e-6);
  // total variation against the tilted Gaussian discretized on the same atoms
  const double mu = b.mu_tilde()[0];
  std::vector<double> ref(m);
  double rt = 0.0;
  for (int i = 0; i < m; ++i) {
    const double v = a.points()[i][0];
    ref[i] = std::exp(-0.5 * (v - mu) * (v - mu));
    rt += ref[i];
  }
  double tv = 0.0;
  for (int i = 0; i < m; ++i) tv += std::abs(a.probs()[i] - ref[i] / rt);
  CHECK(0.5 * tv <= 1e-3);
}

TEST_CASE("tilted moment expansion") {
  SUBCASE("z = 0") {
    const auto p = make_params(2.0, 100, 2);
    const auto e = tilted_moment_expansion(resolve_spec("skewed3pt:2"), QuadForm({1.0, 0.5}), p, Vec::Zero(2));
    CHECK(e.mu_approx.cwiseAbs().maxCoeff() == 0.0);
    CHECK(e.mu_remainder_norm <= 1e-15);
    CHECK(e.sigma_remainder_max <= 1e-14);
  }
  SUBCASE("gaussian approx mean is exact") {
    const auto p = make_params(2.0, 100, 3);
    const Vec z = (Vec(3) << 1.0, -2.0, 0.5).finished();
    const auto e = tilted_moment_expansion(DistributionSpec::gaussian(3), QuadForm({1.0, 0.7, 0.2}), p, z);
    CHECK(e.mu_remainder_norm <= 1e-16);
    CHECK(e.sigma_remainder_max <= 1e-15);
  }
  SUBCASE("remainders decay at the stated orders") {
    for (const std::string name : {"rademacher:2", "skewed3pt:2", "skewed2pt:0.2"}) {
      const auto spec = resolve_spec(name);
      const int d = spec.dim();
      const QuadForm q = d == 2 ? QuadForm({1.0, 0.6}) : QuadForm::identity(1);
      const Vec z = Vec::Constant(d, 2.5);
      std::vector<double> ns{1e2, 1e4, 1e6};
      std::vector<double> mu_r, sig_r;
      for (double n : ns) {
        const auto p = make_params(2.0, static_cast<std::int64_t>(n), d);
        const auto e = tilted_moment_expansion(spec, q, p, z);
        mu_r.push_back(e.mu_remainder_norm);
        sig_r.push_back(e.sigma_remainder_max);
      }
      CAPTURE(name);
      CHECK(loglog_slope(ns, mu_r) <= -1.3);
      CHECK(loglog_slope(ns, sig_r) <= -0.8);
    }
  }
}

TEST_CASE("lambda antisymmetry") {
  Philox4x32 rng(4, 0);
  const auto p = make_params(2.0, 100, 3);
  for (const std::string name : {"rademacher:3", "skewed3pt:3", "gaussian:3"}) {
    const auto spec = resolve_spec(name);
    for (int i = 0; i < 100; ++i) CHECK(lambda_antisymmetry_check(spec, QuadForm({1.0, 0.7, 0.4}), p, random_z(p, rng)));
  }
  const auto g = TiltedLaw(DistributionSpec::gaussian(3), QuadForm::identity(3), p, Vec::Constant(3, 1.0));
  CHECK(g.lambda_tilde().cwiseAbs().maxCoeff() == 0.0);
  const auto r = TiltedLaw(resolve_spec("rademacher:3"), QuadForm::identity(3), p, Vec::Constant(3, 1.0));
  CHECK(r.lambda_tilde().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("b terms") {
  const auto spec = resolve_spec("skewed3pt:2");
  const QuadForm q({1.0, 0.5});
  const auto p = make_params(2.0, 100, 2);
  SUBCASE("z = 0") {
    const Vec y = (Vec(2) << 0.7, -1.1).finished();
    const auto b = b_terms(spec, q, p, Vec::Zero(2), y);
    CHECK(b.b0 == 0.0);
    CHECK(b.b1 == 0.0);
    CHECK(b.b3 == 0.0);
    // direct expectation over the product support
    const auto& marg = spec.marginal();
    const Vec w = y.cwiseQuotient(q.sqrt_diag());
    double expect = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        const Vec x = (Vec(2) << marg.points()[i][0], marg.points()[j][0]).finished();
        const double pr = marg.probs()[i] * marg.probs()[j];
        expect += pr * (3 * x.squaredNorm() * w.dot(x) - std::pow(w.dot(x), 3));
      }
    CHECK(b.b2 == doctest::Approx(expect / 60.0).epsilon(1e-12));
  }
  SUBCASE("y = 0 and z = 0") {
    const auto b = b_terms(spec, q, p, Vec::Zero(2), Vec::Zero(2));
    CHECK(b.b0 == 0.0);
    CHECK(b.b1 == 0.0);
    CHECK(b.b2 == 0.0);
    CHECK(b.b3 == 0.0);
  }
  SUBCASE("gaussian terms vanish") {
    const auto b = b_terms(DistributionSpec::gaussian(2), q, p, Vec::Constant(2, 1.0), Vec::Constant(2, 2.0));
    CHECK(b.b0 == 0.0);
    CHECK(b.b1 == 0.0);
    CHECK(b.b2 == 0.0);
    CHECK(b.b3 == 0.0);
  }
  SUBCASE("magnitudes scale like x / sqrt(n) and x^3 / sqrt(n)") {
    Philox4x32 rng(12, 0);
    double c0_lo = 1e300, c0_hi = 0, c3_hi = 0;
    for (double x : {1.5, 2.0, 3.0}) {
      for (std::int64_t n : {100, 10000}) {
        const auto px = make_params(x, n, 2);
        double b0_max = 0.0;
        double b3_max = 0.0;
        for (int i = 0; i < 200; ++i) {
          const auto b = b_terms(spec, q, px, sample_zx(px, rng), Vec::Zero(2));
          b0_max = std::max(b0_max, std::abs(b.b0));
          b3_max = std::max(b3_max, std::abs(b.b3));
        }
        const double c0 = b0_max / (x / std::sqrt(static_cast<double>(n)));
        c0_lo = std::min(c0_lo, c0);
        c0_hi = std::max(c0_hi, c0);
        c3_hi = std::max(c3_hi, b3_max / (x * x * x / std::sqrt(static_cast<double>(n))));
      }
    }
    CHECK(c0_hi < 20.0);
    CHECK(c0_hi / c0_lo < 10.0);
    CHECK(c3_hi < 50.0);
  }
}

TEST_CASE("m function") {
  SUBCASE("normalization") {
    for (int d : {1, 2, 5}) CHECK(m_function(make_params(2.0, 100, d), 0.0) == 1.0);
    for (int d : {1, 2, 5}) CHECK(m_function(make_params(2.0, 100, d), 1e-9) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("d = 1 closed form") {
    const auto p = make_params(2.0, 100, 1);
    for (double a : {0.5, 2.0, 5.0, 12.0}) {
      const double s = std::sqrt(2 * p.h) * a;
      const double phi_hi = 0.5 * std::erfc(-(p.z0 - s) / std::numbers::sqrt2);
      const double phi_lo = 0.5 * std::erfc(-(-p.z0 - s) / std::numbers::sqrt2);
      const double expect = p.kappa * std::exp(0.5 * s * s) * (phi_hi - phi_lo);
      CHECK(m_function(p, a) == doctest::Approx(expect).epsilon(1e-11));
    }
  }
  SUBCASE("noncentral chi-square form") {
    for (int d : {2, 3, 5}) {
      const auto p = make_params(1.7, 100, d);
      for (double a : {1.0, 4.0, 9.0}) {
        const double s = std::sqrt(2 * p.h) * a;
        std::vector<ChiSqTerm> terms{{1.0, 1, s * s}};
        if (d > 1) terms.push_back({1.0 - 1e-9, d - 1, 0.0});
        const double inside = 1.0 - imhof_tail(terms, p.z0 * p.z0).value;
        const double expect = p.kappa * std::exp(p.h * a * a) * inside;
        CHECK(m_function(p, a) == doctest::Approx(expect).epsilon(1e-8));
      }
    }
  }
  SUBCASE("strictly increasing on [0, 10x]") {
    for (int d : {1, 3}) {
      const auto p = make_params(2.0, 100, d);
      double prev = -1.0;
      for (double a = 0.0; a <= 20.0; a += 0.1) {
        const double v = log_m(p, a);
        CHECK(v > prev);
        prev = v;
      }
    }
  }
  SUBCASE("Monte Carlo oracle") {
    const auto p = make_params(2.0, 100, 3);
    Philox4x32 rng(55, 0);
    const int draws = 1000000;
    for (double a : {1.0, 3.0}) {
      const double s = std::sqrt(2 * p.h) * a;
      double sum = 0.0, sum2 = 0.0;
      for (int i = 0; i < draws; ++i) {
        const double v = std::exp(s * sample_zx(p, rng)[0]);
        sum += v;
        sum2 += v * v;
      }
      const double mean = sum / draws;
      const double se = std::sqrt((sum2 / draws - mean * mean) / draws);
      CHECK(std::abs(m_function(p, a) - mean) <= 4 * se);
    }
  }
  SUBCASE("derivative") {
    const auto p = make_params(2.5, 100, 2);
    for (double a : {0.7, 3.0, 10.0, 20.0}) {
      const double fd = (log_m(p, a + 1e-5) - log_m(p, a - 1e-5)) / 2e-5;
      CHECK(log_m_derivative(p, a) == doctest::Approx(fd).epsilon(1e-6));
    }
  }
  SUBCASE("large arguments stay finite in log space") {
    const auto p = make_params(6.0, 100000, 2);
    CHECK(std::isfinite(log_m(p, 60.0)));
    CHECK(log_m(p, 60.0) > 800.0);
  }
}

TEST_CASE("m table") {
  for (int d : {1, 3}) {
    const auto p = make_params(2.0, 100, d);
    const MTable table(p, MTable::kDefaultNodes, 4);
    CHECK(table.max_error(997) <= 1e-8);
    CHECK(table.log_m(0.5) == doctest::Approx(log_m(p, 0.5)));
    CHECK(table.log_m(25.0) == doctest::Approx(log_m(p, 25.0)));
    double prev = -1.0;
    for (double a = 2.0; a <= 20.0; a += 0.01) {
      const double v = table.log_m(a);
      REQUIRE(v > prev);
      prev = v;
    }
  }
}

TEST_CASE("mgf expansion check") {
  const auto rad = resolve_spec("rademacher:2");
  const auto zero = mgf_expansion_check(rad, Vec::Zero(2), 100);
  CHECK(zero.lhs == 1.0);
  CHECK(zero.rhs_main == 1.0);
  CHECK(zero.envelope == 0.0);
  const Vec a = (Vec(3) << 1.0, 2.0, -0.5).finished();
  const auto g = mgf_expansion_check(DistributionSpec::gaussian(3), a, 50);
  CHECK(g.lhs == doctest::Approx(std::exp(0.5 * a.squaredNorm())).epsilon(1e-13));
  CHECK(g.lhs - g.rhs_main == doctest::Approx(0.0).epsilon(1e-10));
  // bounded constant over a grid for a product spec
  double worst = 0.0;
  for (std::int64_t n : {100, 10000}) {
    for (double r = 0.5; r <= 5.0; r += 0.5) {
      const Vec b = r * Vec::Constant(2, 1.0 / std::numbers::sqrt2);
      const auto c = mgf_expansion_check(rad, b, n);
      worst = std::max(worst, std::abs(c.lhs - c.rhs_main) / c.envelope);
    }
  }
  CHECK(worst < 1.0);
}

TEST_CASE("mixture weight") {
  const auto p = make_params(2.0, 100, 2);
  const QuadForm q({1.0, 0.5});
  CHECK(mixture_weight(resolve_spec("skewed3pt:2"), q, p, Vec::Zero(2)).value == 1.0);
  const Vec z = (Vec(2) << 2.0, -1.0).finished();
  const double dz2 = q.sqrt_diag().cwiseProduct(z).squaredNorm();
  CHECK(mixture_weight(DistributionSpec::gaussian(2), q, p, z).log_value == doctest::Approx(p.h * dz2).epsilon(1e-14));
  // |w e^{-h|Dz|^2}/(1+B3) - 1| <= C x^6/n over sampled z
  const auto spec = resolve_spec("skewed3pt:2");
  Philox4x32 rng(8, 0);
  double worst = 0.0;
  for (std::int64_t n : {1000, 100000}) {
    const auto pn = make_params(2.0, n, 2);
    for (int i = 0; i < 200; ++i) {
      const Vec zz = sample_zx(pn, rng);
      const double dzz = q.sqrt_diag().cwiseProduct(zz).squaredNorm();
      const auto w = mixture_weight(spec, q, pn, zz);
      const double b3 = b_terms(spec, q, pn, zz, Vec::Zero(2)).b3;
      const double dev = std::abs(std::exp(w.log_value - pn.h * dzz) / (1 + b3) - 1.0);
      worst = std::max(worst, dev / (std::pow(2.0, 6) / static_cast<double>(n)));
    }
  }
  CHECK(worst < 10.0);
}
