#include "quadtail/cramer.hpp"

#include "quadtail/errors.hpp"
#include "quadtail/estimate.hpp"
#include "quadtail/gaussref.hpp"
#include "quadtail/parallel.hpp"
#include "quadtail/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace quadtail {

namespace {

Vec uniform_direction(int d, Philox4x32& rng) {
  for (;;) {
    const Vec g = sample_standard_normal(d, rng);
    const double r = g.norm();
    if (r > 0.0) return g / r;
  }
}

template <typename PairFn>
SphereAverage antithetic_average(int d, const SphereOptions& options, PairFn pair_value) {
  if (options.pairs == 0) throw std::invalid_argument("sphere average needs at least one pair");
  BlockSchedule schedule{options.pairs};
  const auto blocks = run_blocks<MomentAccumulator>(schedule, options.workers, [&](std::uint64_t block) {
    Philox4x32 rng(options.seed, stream_id(StreamPurpose::kSphere, block));
    MomentAccumulator acc;
    for (std::uint64_t i = 0; i < schedule.size(block); ++i) acc.add(pair_value(uniform_direction(d, rng)));
    return acc;
  });
  MomentAccumulator total;
  for (const auto& b : blocks) total.merge(b);
  return {total.mean(), total.std_err(), total.count};
}

}  // namespace

CubicForm::CubicForm(const Tensor3& third) : coefficients_(third.dim()) {
  if (third.dim() < 1) throw std::invalid_argument("cubic form needs d >= 1");
  if (third.asymmetry() > 1e-10) throw std::invalid_argument("third moment tensor must be symmetric");
  const int d = third.dim();
  for (int j = 0; j < d; ++j)
    for (int k = 0; k < d; ++k)
      for (int l = 0; l < d; ++l) coefficients_(j, k, l) = third(j, k, l) / 6.0;
}

CubicForm CubicForm::from_spec(const DistributionSpec& spec) { return CubicForm(moments(spec).third); }

double q3_eval(const CubicForm& form, const Vec& u) {
  if (u.size() != form.dim()) throw std::invalid_argument("q3: dimension mismatch");
  return form.coefficients().contract(u, u, u);
}

SphereAverage sphere_exp_integral(const CubicForm& form, double c, const SphereOptions& options) {
  const double c3 = c * c * c;
  if (form.dim() == 1 && !options.force_mc) return {std::cosh(c3 * form.coefficients()(0, 0, 0)), 0.0, 0};
  return antithetic_average(form.dim(), options, [&](const Vec& u) { return std::cosh(c3 * q3_eval(form, u)); });
}

SphereAverage sphere_q3_average(const CubicForm& form, const SphereOptions& options) {
  return antithetic_average(form.dim(), options, [&](const Vec& u) {
    const Vec neg = -u;
    return 0.5 * (q3_eval(form, u) + q3_eval(form, neg));
  });
}

SphereAverage vonbahr_ratio(const DistributionSpec& spec, double x, std::int64_t n, const SphereOptions& options,
                            double guard) {
  if (n < 1) throw std::invalid_argument("n must be positive");
  const double limit = guard * std::pow(static_cast<double>(n), 0.25);
  if (!(x > 1.0) || x > limit)
    throw RegimeError("expansion regime requires 1 < x <= " + std::to_string(guard) + "*n^(1/4)");
  const double c = x / std::pow(static_cast<double>(n), 1.0 / 6.0);
  return sphere_exp_integral(CubicForm::from_spec(spec), c, options);
}

std::vector<NonconvergenceRow> nonconvergence_demo(const DistributionSpec& spec, double c,
                                                   const std::vector<std::int64_t>& n_grid,
                                                   const SphereOptions& options) {
  const CubicForm form = CubicForm::from_spec(spec);
  const SphereAverage limit = sphere_exp_integral(form, c, options);
  const QuadForm q = QuadForm::identity(spec.dim());
  const bool two_point =
      spec.kind() == DistributionKind::kFiniteSupport && spec.dim() == 1 && spec.points().size() == 2;
  std::vector<NonconvergenceRow> rows;
  for (std::int64_t n : n_grid) {
    const double x = c * std::pow(static_cast<double>(n), 1.0 / 6.0);
    const double p = two_point ? exact_two_point(spec, x, n).value : exact_lattice(spec, q, x, n).value;
    const double ratio = p / gaussian_ball_tail(q, x).value;
    rows.push_back({n, x, ratio, limit.value, limit.std_err, ratio - limit.value});
  }
  return rows;
}

}  // namespace quadtail
