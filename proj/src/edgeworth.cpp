#include "quadtail/edgeworth.hpp"

#include "quadtail/gaussref.hpp"
#include "quadtail/parallel.hpp"
#include "quadtail/rng.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <tuple>

namespace quadtail {

namespace {

constexpr int kAnglePairs = 128;

}  // namespace

EdgeworthModel::EdgeworthModel(Mat sigma, Tensor3 third, std::int64_t n)
    : sigma_(std::move(sigma)), third_(std::move(third)), n_(n) {
  const int d = static_cast<int>(sigma_.rows());
  if (d < 1 || sigma_.cols() != d) throw std::invalid_argument("covariance must be square");
  if (third_.dim() != d) throw std::invalid_argument("third tensor dimension mismatch");
  if (n_ < 1) throw std::invalid_argument("n must be positive");
  if (!is_symmetric(sigma_)) throw std::invalid_argument("covariance must be symmetric");
  if (third_.asymmetry() > 1e-10)
    throw std::invalid_argument("third tensor must be fully symmetric");
  SymmetricRoots roots;
  try {
    roots = symmetric_roots(sigma_);
  } catch (const std::domain_error&) {
    throw std::invalid_argument("covariance must be positive definite");
  }
  sigma_sqrt_ = roots.sqrt;
  precision_ = roots.inv_sqrt * roots.inv_sqrt;
  log_norm_ = -0.5 * d * std::log(2.0 * std::numbers::pi) - 0.5 * roots.eigenvalues.array().log().sum();
  trace_vec_ = Vec::Zero(d);
  for (int j = 0; j < d; ++j)
    for (int k = 0; k < d; ++k)
      for (int l = 0; l < d; ++l) trace_vec_[l] += third_(j, k, l) * precision_(j, k);
}

EdgeworthModel EdgeworthModel::from_spec(const DistributionSpec& spec, const QuadForm& q, std::int64_t n) {
  if (spec.dim() != q.dim()) throw std::invalid_argument("spec and form dimensions differ");
  const MomentSet m = moments(spec);
  const Vec s = q.sqrt_diag();
  return EdgeworthModel(Mat(q.eigenvalues().asDiagonal()), m.third.scaled(s), n);
}

double EdgeworthModel::correction_polynomial(const Vec& y) const {
  const Vec w = precision_ * y;
  return 3.0 * trace_vec_.dot(w) - third_.contract(w, w, w);
}

double normal_density(const EdgeworthModel& model, const Vec& y) {
  return std::exp(model.log_norm_ - 0.5 * y.dot(model.precision_ * y));
}

double third_directional(const EdgeworthModel& model, const Vec& y, const Vec& u) {
  const double uu = u.dot(model.precision() * u);
  const double yu = y.dot(model.precision() * u);
  return normal_density(model, y) * (3.0 * uu * yu - yu * yu * yu);
}

double expansion_density(const EdgeworthModel& model, const Vec& y) {
  const double p = normal_density(model, y);
  return p * (1.0 + model.correction_polynomial(y) / (6.0 * std::sqrt(static_cast<double>(model.n()))));
}

namespace {

double correction_1d(const EdgeworthModel& model, double b, double a) {
  const double s2 = model.sigma()(0, 0);
  const auto second = [&](double y) {
    const double p = normal_density(model, Vec::Constant(1, y));
    return p * (y * y / (s2 * s2) - 1.0 / s2);
  };
  return model.third()(0, 0, 0) * (second(b + a) - second(b - a));
}

std::pair<double, double> correction_2d(const EdgeworthModel& model, const Vec& b, double a) {
  std::vector<Vec> dirs;
  for (int k = 0; k < kAnglePairs; ++k) {
    const double t = std::numbers::pi * k / kAnglePairs;
    dirs.push_back((Vec(2) << std::cos(t), std::sin(t)).finished());
  }
  const auto gp = [&](const Vec& y) { return model.correction_polynomial(y) * normal_density(model, y); };
  const auto radial = [&](double r) {
    double s = 0.0;
    for (const Vec& u : dirs) s += gp(b + r * u) + gp(b - r * u);
    return r * s * (std::numbers::pi / kAnglePairs);
  };
  double err = 0.0;
  const double v = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(radial, 0.0, a, 10, 1e-12, &err);
  return {v, err};
}

std::pair<double, double> correction_mc(const EdgeworthModel& model, const Vec& b, double a,
                                        const BallMassOptions& options) {
  const int d = model.dim();
  const double a2 = a * a;
  BlockSchedule schedule{std::max<std::uint64_t>(options.samples / 2, 1)};
  const auto blocks = run_blocks<MomentAccumulator>(schedule, options.workers, [&](std::uint64_t block) {
    Philox4x32 rng(options.seed, stream_id(StreamPurpose::kEdgeworth, block));
    MomentAccumulator acc;
    for (std::uint64_t i = 0; i < schedule.size(block); ++i) {
      const Vec y = model.sigma_sqrt() * sample_standard_normal(d, rng);
      const Vec ny = -y;
      double v = 0.0;
      if ((y - b).squaredNorm() <= a2) v += model.correction_polynomial(y);
      if ((ny - b).squaredNorm() <= a2) v += model.correction_polynomial(ny);
      acc.add(0.5 * v);
    }
    return acc;
  });
  MomentAccumulator total;
  for (const auto& blk : blocks) total.merge(blk);
  return {total.mean(), total.std_err()};
}

}  // namespace

BallMass ball_mass(const EdgeworthModel& model, const Vec& b, double a, const BallMassOptions& options) {
  if (!(a >= 0.0)) throw std::invalid_argument("radius must be nonnegative");
  if (b.size() != model.dim()) throw std::invalid_argument("center dimension mismatch");
  if (a == 0.0) return {0.0, 0.0, 0.0, 0.0};
  const ProbabilityResult lead = gaussian_ball_mass(model.sigma(), b, a);
  double corr = 0.0;
  double corr_err = 0.0;
  if (model.dim() == 1) {
    corr = correction_1d(model, b[0], a);
  } else if (model.dim() == 2) {
    std::tie(corr, corr_err) = correction_2d(model, b, a);
  } else {
    std::tie(corr, corr_err) = correction_mc(model, b, a, options);
  }
  const double scale = 1.0 / (6.0 * std::sqrt(static_cast<double>(model.n())));
  corr *= scale;
  corr_err *= scale;
  return {lead.value, corr, lead.value + corr, lead.abs_err + corr_err};
}

std::vector<EdgeworthErrorRow> edgeworth_error_report(const DistributionSpec& spec, const QuadForm& q,
                                                      const std::vector<std::int64_t>& n_list,
                                                      const std::vector<double>& a_grid, std::uint64_t mc_samples,
                                                      std::uint64_t seed, int workers) {
  if (a_grid.empty() || mc_samples == 0) throw std::invalid_argument("empty grid or sample size");
  const int d = spec.dim();
  const Vec sq = q.sqrt_diag();
  std::vector<EdgeworthErrorRow> rows;
  for (std::size_t idx = 0; idx < n_list.size(); ++idx) {
    const std::int64_t n = n_list[idx];
    const EdgeworthModel model = EdgeworthModel::from_spec(spec, q, n);
    BlockSchedule schedule{mc_samples};
    const auto blocks = run_blocks<std::vector<std::uint64_t>>(schedule, workers, [&](std::uint64_t block) {
      Philox4x32 rng(seed, stream_id(StreamPurpose::kEdgeworth, (static_cast<std::uint64_t>(idx) << 36) | block));
      std::vector<std::uint64_t> counts(a_grid.size(), 0);
      for (std::uint64_t i = 0; i < schedule.size(block); ++i) {
        const double r = sample_normalized_sum(spec, n, rng).cwiseProduct(sq).norm();
        for (std::size_t j = 0; j < a_grid.size(); ++j)
          if (r <= a_grid[j]) ++counts[j];
      }
      return counts;
    });
    std::vector<std::uint64_t> counts(a_grid.size(), 0);
    for (const auto& blk : blocks)
      for (std::size_t j = 0; j < a_grid.size(); ++j) counts[j] += blk[j];
    EdgeworthErrorRow row{n, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
    for (std::size_t j = 0; j < a_grid.size(); ++j) {
      const double p_mc = static_cast<double>(counts[j]) / static_cast<double>(mc_samples);
      const double se = std::sqrt(std::max(p_mc * (1.0 - p_mc), 0.0) / static_cast<double>(mc_samples));
      const BallMass bm = ball_mass(model, Vec::Zero(d), a_grid[j], {.samples = 1000000, .seed = seed, .workers = workers});
      const double err = std::abs(p_mc - bm.total);
      row.max_mc_se = std::max(row.max_mc_se, se);
      if (err > row.sup_error) {
        row.sup_error = err;
        row.a_at_sup = a_grid[j];
        row.mc_se_at_sup = se;
      }
    }
    const double nd = static_cast<double>(n);
    row.envelope_lattice = std::pow(nd, -static_cast<double>(d) / (d + 1));
    row.envelope_smooth = 1.0 / nd;
    row.fitted_constant = row.sup_error * nd;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace quadtail
