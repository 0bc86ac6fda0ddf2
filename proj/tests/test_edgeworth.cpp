#include "quadtail/edgeworth.hpp"
#include "quadtail/gaussref.hpp"

#include <doctest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <numbers>

using namespace quadtail;

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014327;

EdgeworthModel skewed_2d(std::int64_t n) {
  return EdgeworthModel::from_spec(resolve_spec("skewed3pt:2"), QuadForm({1.0, 0.6}), n);
}

/// Tensor-product Gauss-Kronrod integral of omega over [-L, L]^2.
double box_integral_2d(const EdgeworthModel& m, double half) {
  using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
  const auto inner = [&](double y0) {
    return GK::integrate([&](double y1) { return expansion_density(m, (Vec(2) << y0, y1).finished()); }, -half,
                         half, 8, 1e-13);
  };
  return GK::integrate(inner, -half, half, 8, 1e-13);
}

}  // namespace

TEST_CASE("normal density") {
  const EdgeworthModel unit(Mat::Identity(1, 1), Tensor3(1), 10);
  CHECK(normal_density(unit, Vec::Zero(1)) == doctest::Approx(kInvSqrt2Pi).epsilon(1e-15));
  const EdgeworthModel wide(Mat::Constant(1, 1, 4.0), Tensor3(1), 10);
  CHECK(normal_density(wide, Vec::Zero(1)) == doctest::Approx(kInvSqrt2Pi / 2).epsilon(1e-15));
  const EdgeworthModel two(Mat((Mat(2, 2) << 2.0, 0.5, 0.5, 1.0).finished()), Tensor3(2), 10);
  CHECK(box_integral_2d(two, 14.0) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("model validation") {
  CHECK_THROWS_AS(EdgeworthModel(Mat::Zero(2, 2), Tensor3(2), 5), std::invalid_argument);
  Tensor3 t(2);
  t(0, 0, 1) = 1.0;
  CHECK_THROWS_AS(EdgeworthModel(Mat::Identity(2, 2), t, 5), std::invalid_argument);
  CHECK_THROWS_AS(EdgeworthModel(Mat::Identity(2, 2), Tensor3(2), 0), std::invalid_argument);
}

TEST_CASE("third directional derivative") {
  const auto m = skewed_2d(50);
  const Vec u = (Vec(2) << 0.3, -1.2).finished();
  CHECK(third_directional(m, Vec::Zero(2), u) == 0.0);
  CHECK(third_directional(m, u, Vec::Zero(2)) == 0.0);
  const EdgeworthModel unit(Mat::Identity(1, 1), Tensor3(1), 10);
  const Vec one = Vec::Ones(1);
  CHECK(third_directional(unit, one, one) == doctest::Approx(2.0 * normal_density(unit, one)).epsilon(1e-15));
  // finite-difference third derivative of t -> p(y + t u)
  const Vec y = (Vec(2) << 0.4, 0.9).finished();
  const double h = 1e-3;
  const auto p = [&](double t) { return normal_density(m, y + t * u); };
  const double fd = (p(2 * h) - 2 * p(h) + 2 * p(-h) - p(-2 * h)) / (2 * h * h * h);
  CHECK(third_directional(m, y, u) == doctest::Approx(fd).epsilon(1e-5));
}

TEST_CASE("expansion density") {
  SUBCASE("equals the support average of the directional derivative") {
    const auto spec = resolve_spec("skewed3pt:2");
    const QuadForm q({1.0, 0.6});
    const auto m = EdgeworthModel::from_spec(spec, q, 40);
    const auto& marg = spec.marginal();
    const Vec y = (Vec(2) << -0.7, 1.1).finished();
    const double h = 1e-3;
    double avg = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        const Vec u = (Vec(2) << marg.points()[i][0], marg.points()[j][0]).finished().cwiseProduct(q.sqrt_diag());
        const auto p = [&](double t) { return normal_density(m, y + t * u); };
        const double fd = (p(2 * h) - 2 * p(h) + 2 * p(-h) - p(-2 * h)) / (2 * h * h * h);
        avg += marg.probs()[i] * marg.probs()[j] * fd;
      }
    const double expect = normal_density(m, y) + avg / (6 * std::sqrt(40.0));
    CHECK(std::abs(expansion_density(m, y) - expect) <= 1e-6);
  }
  SUBCASE("zero tensor gives the normal density") {
    const EdgeworthModel m(Mat::Identity(2, 2), Tensor3(2), 3);
    const Vec y = (Vec(2) << 1.0, 2.0).finished();
    CHECK(expansion_density(m, y) == normal_density(m, y));
  }
  SUBCASE("large n approaches the normal density") {
    const Vec y = (Vec(2) << 0.5, -0.5).finished();
    const auto small = skewed_2d(10);
    const auto big = skewed_2d(10000000000LL);
    CHECK(std::abs(expansion_density(big, y) - normal_density(big, y)) <
          std::abs(expansion_density(small, y) - normal_density(small, y)) * 1e-4);
  }
  SUBCASE("integrates to one") {
    const EdgeworthModel one = EdgeworthModel::from_spec(resolve_spec("skewed2pt:0.2"), QuadForm::identity(1), 5);
    using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
    const double v = GK::integrate([&](double t) { return expansion_density(one, Vec::Constant(1, t)); }, -40.0,
                                   40.0, 10, 1e-14);
    CHECK(std::abs(v - 1.0) <= 1e-8);
    CHECK(std::abs(box_integral_2d(skewed_2d(5), 14.0) - 1.0) <= 1e-8);
  }
}

TEST_CASE("ball mass") {
  const auto m1 = EdgeworthModel::from_spec(resolve_spec("skewed2pt:0.2"), QuadForm::identity(1), 20);
  const auto m2 = skewed_2d(20);
  const auto m3 = EdgeworthModel::from_spec(resolve_spec("skewed3pt:3"), QuadForm({1.0, 0.7, 0.4}), 20);
  SUBCASE("radius zero") {
    CHECK(ball_mass(m1, Vec::Zero(1), 0.0).total == 0.0);
    CHECK(ball_mass(m3, Vec::Ones(3), 0.0).total == 0.0);
  }
  SUBCASE("centered correction vanishes exactly") {
    for (double a : {0.3, 1.0, 2.5}) {
      CHECK(ball_mass(m1, Vec::Zero(1), a).correction == 0.0);
      CHECK(ball_mass(m2, Vec::Zero(2), a).correction == 0.0);
      CHECK(ball_mass(m3, Vec::Zero(3), a, {.samples = 20000, .seed = 3}).correction == 0.0);
      const auto bm = ball_mass(m2, Vec::Zero(2), a);
      CHECK(bm.total == bm.leading);
    }
  }
  SUBCASE("d = 1 against quadrature of omega") {
    using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
    for (double b : {-0.8, 0.4}) {
      for (double a : {0.5, 2.0}) {
        const double v = GK::integrate([&](double t) { return expansion_density(m1, Vec::Constant(1, t)); },
                                       b - a, b + a, 10, 1e-14);
        CHECK(ball_mass(m1, Vec::Constant(1, b), a).total == doctest::Approx(v).epsilon(1e-10));
      }
    }
  }
  SUBCASE("d = 2 against a Cartesian quadrature") {
    const Vec b = (Vec(2) << 0.6, -0.3).finished();
    const double a = 1.4;
    using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
    const auto inner = [&](double y0) {
      const double half = std::sqrt(std::max(a * a - (y0 - b[0]) * (y0 - b[0]), 0.0));
      return GK::integrate(
          [&](double y1) { return expansion_density(m2, (Vec(2) << y0, y1).finished()); }, b[1] - half,
          b[1] + half, 10, 1e-13);
    };
    const double v = GK::integrate(inner, b[0] - a, b[0] + a, 12, 1e-12);
    const auto bm = ball_mass(m2, b, a);
    CHECK(bm.correction != 0.0);
    CHECK(std::abs(bm.total - v) <= 1e-8);
  }
  SUBCASE("d = 3 Monte Carlo correction is reproducible and consistent across seeds") {
    const Vec b = (Vec(3) << 0.5, 0.2, -0.4).finished();
    const auto r = ball_mass(m3, b, 1.5, {.samples = 2000000, .seed = 9, .workers = 4});
    const auto r1 = ball_mass(m3, b, 1.5, {.samples = 2000000, .seed = 9, .workers = 1});
    CHECK(r.correction == r1.correction);
    CHECK(r.err > 0.0);
    CHECK(r.err < 2e-4);
    const auto other = ball_mass(m3, b, 1.5, {.samples = 2000000, .seed = 10, .workers = 4});
    CHECK(std::abs(other.correction - r.correction) <= 6 * r.err);
  }
  SUBCASE("large radius gives total mass one") {
    CHECK(ball_mass(m1, Vec::Zero(1), 40.0).total == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(ball_mass(m2, Vec::Constant(2, 0.3), 40.0).total == doctest::Approx(1.0).epsilon(1e-8));
  }
  SUBCASE("nondecreasing in the radius for a zero tensor") {
    const EdgeworthModel g(Mat((Mat(2, 2) << 1.0, 0.2, 0.2, 0.5).finished()), Tensor3(2), 10);
    double prev = 0.0;
    for (double a = 0.1; a < 5.0; a += 0.1) {
      const double v = ball_mass(g, Vec::Constant(2, 0.4), a).total;
      CHECK(v >= prev);
      prev = v;
    }
  }
}

TEST_CASE("edgeworth error report") {
  const std::vector<double> grid{0.5, 1.0, 1.5, 2.0, 2.5};
  SUBCASE("gaussian spec is exact") {
    const auto rows = edgeworth_error_report(resolve_spec("gaussian:2"), QuadForm({1.0, 0.5}), {10, 40}, grid,
                                             200000, 4, 4);
    for (const auto& r : rows) CHECK(r.sup_error <= 4 * r.max_mc_se);
  }
  SUBCASE("determinism across workers") {
    const auto a = edgeworth_error_report(resolve_spec("skewed3pt:2"), QuadForm({1.0, 0.5}), {20}, grid, 50000, 7, 1);
    const auto b = edgeworth_error_report(resolve_spec("skewed3pt:2"), QuadForm({1.0, 0.5}), {20}, grid, 50000, 7, 3);
    CHECK(a[0].sup_error == b[0].sup_error);
    CHECK(a[0].envelope_smooth == doctest::Approx(0.05));
    CHECK(a[0].envelope_lattice == doctest::Approx(std::pow(20.0, -2.0 / 3.0)));
  }
}
