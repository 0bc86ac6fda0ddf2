#include "quadtail/verify.hpp"

#include "quadtail/cramer.hpp"
#include "quadtail/edgeworth.hpp"
#include "quadtail/estimate.hpp"
#include "quadtail/gaussref.hpp"
#include "quadtail/model.hpp"
#include "quadtail/tilt.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>

namespace quadtail {

std::vector<CheckResult> verify_suite(const VerifyConfig& config) {
  std::vector<CheckResult> out;
  const std::uint64_t seed = config.seed;
  const int workers = config.workers;
  // pass iff measured <= tolerance
  const auto add = [&](std::string module, std::string name, double measured, double tol, std::uint64_t s,
                       std::string detail = {}) {
    out.push_back({std::move(module), std::move(name), measured <= tol, measured, tol, s, std::move(detail)});
  };

  // model
  {
    const auto spec = resolve_spec("skewed3pt:3");
    const MomentSet m = moments(spec);
    add("model", "standardized covariance is identity", (m.cov - Mat::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-12,
        0);
    add("model", "standardized mean is zero", m.mean.cwiseAbs().maxCoeff(), 1e-13, 0);
    add("model", "mgf at zero is one", std::abs(mgf(spec, Vec::Zero(3)).value - 1.0), 0.0, 0);
  }

  // gaussref
  {
    double worst = 0.0;
    for (double x : {0.5, 1.0, 2.0, 3.0})
      worst = std::max(worst, std::abs(gaussian_ball_tail(QuadForm::identity(2), x).value - std::exp(-0.5 * x * x)));
    add("gaussref", "q=(1,1) tail equals exp(-x^2/2)", worst, config.inject_failure ? -1.0 : 1e-9, 0);
    const QuadForm q({1.0, 0.8, 0.6, 0.4, 0.2});
    double prev = 1.0;
    double rise = 0.0;
    for (double x = 0.25; x <= 4.0; x += 0.25) {
      const double v = gaussian_ball_tail(q, x).value;
      rise = std::max(rise, v - prev);
      prev = v;
    }
    add("gaussref", "tail decreasing in x", rise, 0.0, 0);
    std::vector<ChiSqTerm> terms{{1.0, 2, 0.0}, {0.5, 1, 0.0}, {0.25, 2, 0.0}};
    const double t = 30.0;
    add("gaussref", "Imhof and Ruben agree in the deep tail",
        std::abs(imhof_tail(terms, t).value / ruben_tail(terms, t).value - 1.0), 1e-6, 0);
    // the bound carries an unknown constant, so only its shape is checked
    double lo = INFINITY;
    double hi = 0.0;
    for (double x = 1.5; x <= 4.0 + 1e-12; x += 0.125) {
      const double r = gaussian_ball_tail(q, x).value / chisq_lower_bound(q, x).bound;
      lo = std::min(lo, r);
      hi = std::max(hi, r);
    }
    add("gaussref", "tail over chi-square bound has bounded spread", lo > 0.0 ? hi / lo : INFINITY, 1e3, 0);
  }

  // edgeworth
  {
    const auto m2 = EdgeworthModel::from_spec(resolve_spec("skewed3pt:2"), QuadForm({1.0, 0.6}), 20);
    const auto m3 = EdgeworthModel::from_spec(resolve_spec("skewed3pt:3"), QuadForm({1.0, 0.7, 0.4}), 20);
    double worst = 0.0;
    for (double a : {0.5, 1.5, 3.0}) {
      worst = std::max(worst, std::abs(ball_mass(m2, Vec::Zero(2), a).correction));
      worst = std::max(worst, std::abs(ball_mass(m3, Vec::Zero(3), a, {.samples = 100000, .seed = seed,
                                                                           .workers = workers})
                                           .correction));
    }
    add("edgeworth", "centered correction is exactly zero", worst, 0.0, seed);
    const auto m1 = EdgeworthModel::from_spec(resolve_spec("skewed2pt:0.2"), QuadForm::identity(1), 5);
    const double mass = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        [&](double y) { return expansion_density(m1, Vec::Constant(1, y)); }, -40.0, 40.0, 10, 1e-14);
    add("edgeworth", "expansion density integrates to one", std::abs(mass - 1.0), 1e-8, 0);
  }

  // tilt
  {
    const auto params = make_params(2.0, 100, 3);
    Philox4x32 rng(seed, stream_id(StreamPurpose::kZx, 0));
    int bad = 0;
    for (const char* name : {"skewed3pt:3", "rademacher:3"})
      for (int i = 0; i < 100; ++i)
        if (!lambda_antisymmetry_check(resolve_spec(name), QuadForm({1.0, 0.7, 0.4}), params, sample_zx(params, rng)))
          ++bad;
    add("tilt", "lambda antisymmetry on random z", bad, 0.0, seed);
    add("tilt", "m(0) = 1", std::abs(m_function(params, 0.0) - 1.0), 0.0, 0);
    const MTable table(make_params(2.0, 100, 1), MTable::kDefaultNodes, workers);
    add("tilt", "m table interpolation error", table.max_error(257), 1e-8, 0);
  }

  // estimate
  {
    const auto rad = resolve_spec("rademacher1d");
    const QuadForm one = QuadForm::identity(1);
    const double exact = exact_binomial(2.0, 100).value;
    const auto t = tilted_is(rad, one, 2.0, 100, {.samples = 20000, .seed = seed, .workers = workers});
    add("estimate", "tilted_is within 4 SE of the binomial oracle", std::abs(t.value - exact) / t.std_err, 4.0, seed);
    const auto c = crude_mc(rad, one, 2.0, 100, 200000, seed, workers);
    add("estimate", "crude_mc within 4 SE of the binomial oracle", std::abs(c.value - exact) / c.std_err, 4.0, seed);
    const auto t1 = tilted_is(rad, one, 2.0, 100, {.samples = 20000, .seed = seed, .workers = 1});
    const auto c1 = crude_mc(rad, one, 2.0, 100, 200000, seed, 1);
    add("estimate", "estimators independent of worker count",
        std::abs(t1.value - t.value) + std::abs(c1.value - c.value), 0.0, seed);
    add("estimate", "lattice and binomial oracles agree",
        std::abs(exact_lattice(rad, one, 2.0, 100).value / exact - 1.0), 1e-13, 0);
  }

  // cramer
  {
    const CubicForm f3 = CubicForm::from_spec(resolve_spec("skewed3pt:3"));
    add("cramer", "antithetic Q3 average is exactly zero",
        std::abs(sphere_q3_average(f3, {.pairs = 100000, .seed = seed, .workers = workers}).value), 0.0, seed);
    const auto avg = sphere_exp_integral(f3, 1.5, {.pairs = 100000, .seed = seed, .workers = workers});
    add("cramer", "sphere average at least one", 1.0 - avg.value, 4.0 * avg.std_err, seed);
    const CubicForm f1 = CubicForm::from_spec(resolve_spec("skewed2pt:0.2"));
    const auto mc = sphere_exp_integral(f1, 1.5, {.pairs = 1000, .seed = seed, .force_mc = true});
    add("cramer", "d=1 closed form equals the sampling path",
        std::abs(mc.value / sphere_exp_integral(f1, 1.5).value - 1.0), 4.0 * mc.std_err + 1e-12, seed);
  }
  return out;
}

}  // namespace quadtail
