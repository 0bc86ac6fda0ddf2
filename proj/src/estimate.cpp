#include "quadtail/estimate.hpp"

#include "quadtail/errors.hpp"
#include "quadtail/gaussref.hpp"
#include "quadtail/parallel.hpp"
#include "quadtail/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>
#include <tuple>

namespace quadtail {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

/// Neumaier-compensated long double sum.
struct CompensatedSum {
  long double sum = 0.0L;
  long double comp = 0.0L;
  void add(long double v) {
    const long double t = sum + v;
    if (std::fabs(sum) >= std::fabs(v))
      comp += (sum - t) + v;
    else
      comp += (v - t) + sum;
    sum = t;
  }
  long double value() const { return sum + comp; }
};

std::uint64_t splitmix64(std::uint64_t v) {
  v += 0x9e3779b97f4a7c15ULL;
  v = (v ^ (v >> 30)) * 0xbf58476d1ce4e5b9ULL;
  v = (v ^ (v >> 27)) * 0x94d049bb133111ebULL;
  return v ^ (v >> 31);
}

void check_inputs(const DistributionSpec& spec, const QuadForm& q, double x, std::int64_t n) {
  if (spec.dim() != q.dim()) throw std::invalid_argument("spec and form dimensions differ");
  if (!(x >= 0.0) || !std::isfinite(x)) throw std::invalid_argument("x must be finite and nonnegative");
  if (n < 1) throw std::invalid_argument("n must be positive");
}

struct TiltedBlock {
  MomentAccumulator acc;
  std::uint64_t attempts = 0;
  std::uint64_t hits = 0;
};

TailEstimate tilted_proposal(const DistributionSpec& spec, const QuadForm& q, const TiltParams& params,
                             const MTable& table, const TiltedOptions& options) {
  const int d = q.dim();
  const Vec qv = q.eigenvalues();
  const Vec dd = q.sqrt_diag();
  Vec c(d);
  for (int i = 0; i < d; ++i) c[i] = 1.0 / (1.0 - 2.0 * params.h * qv[i]);
  const Vec sqrt_c = c.cwiseSqrt();
  const double c_max = c.maxCoeff();
  std::vector<double> rel(c.data(), c.data() + d);
  const double p_ball = 1.0 - gaussian_ball_tail(QuadForm::normalized(rel), params.z0 / std::sqrt(c_max)).value;
  if (!(p_ball >= 1e-3)) throw NumericalError("proposal acceptance below 1e-3");
  const double log_m0 = std::log(params.kappa) + 0.5 * c.array().log().sum() + std::log(p_ball);
  const double z0_sq = params.z0 * params.z0;

  BlockSchedule schedule{options.samples};
  const auto blocks = run_blocks<TiltedBlock>(schedule, options.workers, [&](std::uint64_t block) {
    Philox4x32 rng(options.seed, stream_id(StreamPurpose::kTiltedZ, block));
    TiltedBlock out;
    for (std::uint64_t i = 0; i < schedule.size(block); ++i) {
      Vec z;
      std::uint64_t tries = 0;
      do {
        z = sqrt_c.cwiseProduct(sample_standard_normal(d, rng));
        if (++tries > 1000000) throw NumericalError("proposal acceptance below 1e-3");
      } while (z.squaredNorm() > z0_sq);
      out.attempts += tries;
      const TiltedLaw law(spec, q, params, z, false);
      const double log_w = law.log_weight() - params.h * dd.cwiseProduct(z).squaredNorm();
      const double a = law.sample_scaled_sum(rng).norm();
      double term = 0.0;
      if (a > params.x) {
        term = std::exp(log_m0 + log_w - table.log_m(a));
        ++out.hits;
      }
      out.acc.add(term);
    }
    return out;
  });
  TiltedBlock total;
  for (const auto& b : blocks) {
    total.acc.merge(b.acc);
    total.attempts += b.attempts;
    total.hits += b.hits;
  }
  const double acceptance = static_cast<double>(total.acc.count) / static_cast<double>(total.attempts);
  if (acceptance < 1e-3) throw NumericalError("proposal acceptance below 1e-3");
  TailEstimate est;
  est.value = total.acc.mean();
  est.std_err = total.acc.std_err();
  est.n_samples = total.acc.count;
  const double ess = total.acc.sum_sq > 0.0 ? total.acc.sum * total.acc.sum / total.acc.sum_sq : 0.0;
  est.diagnostics = {{"acceptance_rate", acceptance},
                     {"log_normalizer", log_m0},
                     {"hit_rate", static_cast<double>(total.hits) / static_cast<double>(total.acc.count)},
                     {"ess", ess}};
  return est;
}

TailEstimate tilted_sir(const DistributionSpec& spec, const QuadForm& q, const TiltParams& params, const MTable& table,
                        const TiltedOptions& options) {
  if (options.pool_size < 2) throw std::invalid_argument("pool size must be at least 2");
  // Stage 1: pool of Z_x draws and their mixture weights.
  BlockSchedule pool_schedule{options.pool_size};
  const auto pool_blocks =
      run_blocks<std::vector<std::pair<Vec, double>>>(pool_schedule, options.workers, [&](std::uint64_t block) {
        Philox4x32 rng(options.seed, stream_id(StreamPurpose::kTiltedPool, block));
        std::vector<std::pair<Vec, double>> out;
        for (std::uint64_t i = 0; i < pool_schedule.size(block); ++i) {
          Vec z = sample_zx(params, rng);
          const double lw = mixture_weight(spec, q, params, z).log_value;
          out.emplace_back(std::move(z), lw);
        }
        return out;
      });
  std::vector<Vec> pool;
  std::vector<double> log_w;
  for (const auto& blk : pool_blocks)
    for (const auto& [z, lw] : blk) {
      pool.push_back(z);
      log_w.push_back(lw);
    }
  const double shift = *std::max_element(log_w.begin(), log_w.end());
  MomentAccumulator stage1;
  std::vector<double> cumulative(pool.size());
  double running = 0.0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const double w = std::exp(log_w[i] - shift);
    stage1.add(w);
    running += w;
    cumulative[i] = running;
  }
  const double ess = stage1.sum * stage1.sum / stage1.sum_sq;

  // Stage 2: resample z by weight and average 1{|D W~| > x} / m(|D W~|).
  BlockSchedule schedule{options.samples};
  const auto blocks = run_blocks<MomentAccumulator>(schedule, options.workers, [&](std::uint64_t block) {
    Philox4x32 rng(options.seed, stream_id(StreamPurpose::kTiltedResample, block));
    MomentAccumulator acc;
    for (std::uint64_t i = 0; i < schedule.size(block); ++i) {
      const double u = rng.uniform() * running;
      const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
      const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()), pool.size() - 1);
      const TiltedLaw law(spec, q, params, pool[k], false);
      const double a = law.sample_scaled_sum(rng).norm();
      acc.add(a > params.x ? std::exp(-table.log_m(a)) : 0.0);
    }
    return acc;
  });
  MomentAccumulator stage2;
  for (const auto& b : blocks) stage2.merge(b);
  const double m_hat = stage1.mean();
  const double log_m_hat = std::log(m_hat) + shift;
  const double mean2 = stage2.mean();
  TailEstimate est;
  est.value = std::exp(log_m_hat) * mean2;
  const double rel1 = stage1.std_err() / m_hat;
  const double se2 = stage2.std_err();
  est.std_err = std::exp(log_m_hat) * std::sqrt(mean2 * mean2 * rel1 * rel1 + se2 * se2);
  est.n_samples = stage2.count;
  est.diagnostics = {{"log_mixture_mean", log_m_hat},
                     {"mixture_rel_se", rel1},
                     {"pool_size", static_cast<double>(pool.size())},
                     {"pool_ess", ess},
                     {"pool_bias_indicator", 1.0 / ess}};
  return est;
}

/// Axis-aligned lattice of a one-dimensional coordinate: value = origin + step * m.
struct AxisLattice {
  double origin;
  double step;
  std::vector<std::int64_t> index;
};

AxisLattice find_axis_lattice(const std::vector<double>& values) {
  const double base = values.front();
  double g = 0.0;
  for (double v : values) {
    const double dlt = std::abs(v - base);
    if (dlt > 1e-12 && (g == 0.0 || dlt < g)) g = dlt;
  }
  AxisLattice out{base, 1.0, std::vector<std::int64_t>(values.size(), 0)};
  if (g == 0.0) return out;
  std::int64_t denom = 1;
  for (double v : values) {
    const double r = (v - base) / g;
    std::int64_t qd = 1;
    for (; qd <= 64; ++qd)
      if (std::abs(r * qd - std::round(r * qd)) < 1e-9 * std::max(1.0, std::abs(r * qd))) break;
    if (qd > 64) throw std::invalid_argument("support is not on a common rational lattice");
    denom = std::lcm(denom, qd);
  }
  out.step = g / static_cast<double>(denom);
  std::int64_t lo = 0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    out.index[k] = std::llround((values[k] - base) / out.step);
    lo = std::min(lo, out.index[k]);
  }
  for (auto& m : out.index) m -= lo;
  out.origin = base + static_cast<double>(lo) * out.step;
  return out;
}

DistributionSpec expand_product(const DistributionSpec& spec) {
  const auto& marg = spec.marginal();
  const int d = spec.dim();
  const std::size_t k = marg.points().size();
  std::vector<Vec> pts;
  std::vector<double> probs;
  std::vector<std::size_t> idx(static_cast<std::size_t>(d), 0);
  while (true) {
    Vec p(d);
    double pr = 1.0;
    for (int j = 0; j < d; ++j) {
      p[j] = marg.points()[idx[static_cast<std::size_t>(j)]][0];
      pr *= marg.probs()[idx[static_cast<std::size_t>(j)]];
    }
    pts.push_back(p);
    probs.push_back(pr);
    int j = 0;
    while (j < d && ++idx[static_cast<std::size_t>(j)] == k) idx[static_cast<std::size_t>(j++)] = 0;
    if (j == d) break;
  }
  return DistributionSpec::finite_support(pts, probs);
}

bool is_two_point_1d(const DistributionSpec& spec) {
  return spec.kind() == DistributionKind::kFiniteSupport && spec.dim() == 1 && spec.points().size() == 2;
}

}  // namespace

std::string to_string(Method method) {
  switch (method) {
    case Method::kCrude: return "crude";
    case Method::kTiltedIs: return "tilted_is";
    case Method::kExactLattice: return "exact_lattice";
    case Method::kExactBinomial: return "exact_binomial";
    case Method::kGaussianRef: return "gaussian_ref";
  }
  return "unknown";
}

TailEstimate crude_mc(const DistributionSpec& spec, const QuadForm& q, double x, std::int64_t n,
                      std::uint64_t samples, std::uint64_t seed, int workers) {
  check_inputs(spec, q, x, n);
  if (samples == 0) throw std::invalid_argument("sample count must be positive");
  const auto start = Clock::now();
  const Vec dd = q.sqrt_diag();
  const double x2 = x * x;
  BlockSchedule schedule{samples};
  const auto blocks = run_blocks<std::uint64_t>(schedule, workers, [&](std::uint64_t block) {
    Philox4x32 rng(seed, stream_id(StreamPurpose::kCrude, block));
    std::uint64_t hits = 0;
    for (std::uint64_t i = 0; i < schedule.size(block); ++i)
      if (sample_normalized_sum(spec, n, rng).cwiseProduct(dd).squaredNorm() > x2) ++hits;
    return hits;
  });
  const std::uint64_t hits = std::accumulate(blocks.begin(), blocks.end(), std::uint64_t{0});
  TailEstimate est;
  const double nn = static_cast<double>(samples);
  est.value = static_cast<double>(hits) / nn;
  est.std_err = std::sqrt(est.value * (1.0 - est.value) / nn);
  est.n_samples = samples;
  est.method = Method::kCrude;
  est.seed = seed;
  est.diagnostics = {{"hits", static_cast<double>(hits)}};
  est.runtime_ms = elapsed_ms(start);
  return est;
}

TailEstimate tilted_is(const DistributionSpec& spec, const QuadForm& q, double x, std::int64_t n,
                       const TiltedOptions& options) {
  check_inputs(spec, q, x, n);
  if (options.samples < 2) throw std::invalid_argument("sample count must be at least 2");
  const auto start = Clock::now();
  const TiltParams params = make_params(x, n, spec.dim());
  check_regime(params, options.regime_epsilon);
  const auto table = MTable::shared(params, options.workers);
  TailEstimate est = options.sir ? tilted_sir(spec, q, params, *table, options)
                                 : tilted_proposal(spec, q, params, *table, options);
  est.method = Method::kTiltedIs;
  est.seed = options.seed;
  est.runtime_ms = elapsed_ms(start);
  return est;
}

TailEstimate exact_two_point(const DistributionSpec& spec, double x, std::int64_t n) {
  if (!is_two_point_1d(spec)) throw std::invalid_argument("binomial oracle needs a one-dimensional two-point spec");
  if (!(x >= 0.0) || n < 1) throw std::invalid_argument("binomial oracle needs x >= 0 and n >= 1");
  const auto start = Clock::now();
  const long double v0 = spec.points()[0][0];
  const long double v1 = spec.points()[1][0];
  const long double lp0 = std::log(static_cast<long double>(spec.probs()[0]));
  const long double lp1 = std::log(static_cast<long double>(spec.probs()[1]));
  const long double nn = static_cast<long double>(n);
  const long double bound = static_cast<long double>(x) * std::sqrt(nn);
  const long double lfact_n = std::lgamma(nn + 1.0L);
  CompensatedSum tail;
  for (std::int64_t k = 0; k <= n; ++k) {
    const long double kk = static_cast<long double>(k);
    const long double s = kk * v1 + (nn - kk) * v0;
    if (std::fabs(s) <= bound) continue;
    const long double lpmf =
        lfact_n - std::lgamma(kk + 1.0L) - std::lgamma(nn - kk + 1.0L) + kk * lp1 + (nn - kk) * lp0;
    tail.add(std::exp(lpmf));
  }
  TailEstimate est;
  est.value = static_cast<double>(std::clamp(tail.value(), 0.0L, 1.0L));
  est.method = Method::kExactBinomial;
  est.runtime_ms = elapsed_ms(start);
  return est;
}

TailEstimate exact_binomial(double x, std::int64_t n) { return exact_two_point(resolve_spec("rademacher1d"), x, n); }

TailEstimate exact_lattice(const DistributionSpec& spec_in, const QuadForm& q, double x, std::int64_t n) {
  check_inputs(spec_in, q, x, n);
  if (spec_in.dim() > 2) throw std::invalid_argument("lattice oracle supports d <= 2");
  if (spec_in.kind() == DistributionKind::kGaussian) throw std::invalid_argument("lattice oracle needs finite support");
  const auto start = Clock::now();
  const DistributionSpec spec = spec_in.kind() == DistributionKind::kProductIid ? expand_product(spec_in) : spec_in;
  const int d = spec.dim();
  const std::size_t k_count = spec.points().size();
  std::vector<AxisLattice> axes;
  std::vector<std::int64_t> range(2, 0);
  for (int j = 0; j < d; ++j) {
    std::vector<double> vals(k_count);
    for (std::size_t k = 0; k < k_count; ++k) vals[k] = spec.points()[k][j];
    axes.push_back(find_axis_lattice(vals));
    range[static_cast<std::size_t>(j)] = *std::max_element(axes.back().index.begin(), axes.back().index.end());
  }
  const std::int64_t w0 = n * range[0] + 1;
  const std::int64_t w1 = d == 2 ? n * range[1] + 1 : 1;
  const double cells = static_cast<double>(w0) * static_cast<double>(w1);
  if (cells > kMaxLatticeCells)
    throw std::length_error("lattice grid too large: " + std::to_string(static_cast<long long>(cells)) + " cells");

  // dist[i0 * w1 + i1] after t steps lives on [0, t r0] x [0, t r1].
  std::vector<long double> dist(static_cast<std::size_t>(w0 * w1), 0.0L);
  std::vector<long double> next(dist.size(), 0.0L);
  dist[0] = 1.0L;
  std::vector<std::int64_t> shift(k_count);
  for (std::size_t k = 0; k < k_count; ++k)
    shift[k] = axes[0].index[k] * w1 + (d == 2 ? axes[1].index[k] : 0);
  for (std::int64_t t = 0; t < n; ++t) {
    const std::int64_t e0 = t * range[0];
    const std::int64_t e1 = d == 2 ? t * range[1] : 0;
    const std::int64_t n0 = (t + 1) * range[0];
    const std::int64_t n1 = d == 2 ? (t + 1) * range[1] : 0;
    for (std::int64_t i0 = 0; i0 <= n0; ++i0)
      std::fill_n(next.begin() + i0 * w1, n1 + 1, 0.0L);
    for (std::int64_t i0 = 0; i0 <= e0; ++i0)
      for (std::int64_t i1 = 0; i1 <= e1; ++i1) {
        const long double v = dist[static_cast<std::size_t>(i0 * w1 + i1)];
        if (v == 0.0L) continue;
        for (std::size_t k = 0; k < k_count; ++k)
          next[static_cast<std::size_t>(i0 * w1 + i1 + shift[k])] += v * static_cast<long double>(spec.probs()[k]);
      }
    std::swap(dist, next);
  }

  const long double root_n = std::sqrt(static_cast<long double>(n));
  const long double x2 = static_cast<long double>(x) * x;
  CompensatedSum tail;
  CompensatedSum mass;
  for (std::int64_t i0 = 0; i0 < w0; ++i0)
    for (std::int64_t i1 = 0; i1 < w1; ++i1) {
      const long double v = dist[static_cast<std::size_t>(i0 * w1 + i1)];
      if (v == 0.0L) continue;
      mass.add(v);
      long double r2 = 0.0L;
      const std::int64_t idx[2] = {i0, i1};
      for (int j = 0; j < d; ++j) {
        const auto& ax = axes[static_cast<std::size_t>(j)];
        const long double s = static_cast<long double>(n) * ax.origin + static_cast<long double>(idx[j]) * ax.step;
        const long double y = std::sqrt(static_cast<long double>(q.eigenvalues()[j])) * s / root_n;
        r2 += y * y;
      }
      if (r2 > x2) tail.add(v);
    }
  TailEstimate est;
  est.value = static_cast<double>(std::clamp(tail.value(), 0.0L, 1.0L));
  est.method = Method::kExactLattice;
  est.diagnostics = {{"mass_defect", static_cast<double>(mass.value() - 1.0L)}, {"cells", cells}};
  est.runtime_ms = elapsed_ms(start);
  return est;
}

TailEstimate gaussian_reference(const QuadForm& q, double x) {
  const auto start = Clock::now();
  const ProbabilityResult r = gaussian_ball_tail(q, x);
  TailEstimate est;
  est.value = r.value;
  est.std_err = r.abs_err;
  est.method = Method::kGaussianRef;
  est.runtime_ms = elapsed_ms(start);
  return est;
}

std::vector<RatioRow> ratio_scan(const DistributionSpec& spec, const QuadForm& q, const std::vector<double>& x_grid,
                                 const std::vector<std::int64_t>& n_grid, ScanMethod method, std::uint64_t budget,
                                 std::uint64_t seed, int workers) {
  if (spec.dim() != q.dim()) throw std::invalid_argument("spec and form dimensions differ");
  std::vector<std::pair<std::int64_t, double>> grid;
  for (std::int64_t n : n_grid)
    for (double x : x_grid) grid.emplace_back(n, x);
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  const auto exact = [&](std::int64_t n, double x) -> TailEstimate {
    if (is_two_point_1d(spec)) return exact_two_point(spec, x, n);
    return exact_lattice(spec, q, x, n);
  };
  std::vector<RatioRow> rows;
  for (std::size_t r = 0; r < grid.size(); ++r) {
    const auto [n, x] = grid[r];
    const std::uint64_t row_seed = splitmix64(seed ^ splitmix64(r));
    TailEstimate est;
    switch (method) {
      case ScanMethod::kCrude:
        est = crude_mc(spec, q, x, n, budget, row_seed, workers);
        break;
      case ScanMethod::kTiltedIs:
        est = tilted_is(spec, q, x, n, {.samples = budget, .seed = row_seed, .workers = workers});
        break;
      case ScanMethod::kExact:
        est = exact(n, x);
        break;
      case ScanMethod::kAuto: {
        bool done = false;
        if (spec.kind() != DistributionKind::kGaussian && spec.dim() <= 2) {
          try {
            est = exact(n, x);
            done = true;
          } catch (const std::invalid_argument&) {
          } catch (const std::length_error&) {
          }
        }
        if (!done) {
          try {
            est = tilted_is(spec, q, x, n, {.samples = budget, .seed = row_seed, .workers = workers});
          } catch (const RegimeError&) {
            est = crude_mc(spec, q, x, n, budget, row_seed, workers);
          }
        }
        break;
      }
    }
    const double p_ref = gaussian_ball_tail(q, x).value;
    rows.push_back({n, x, est, p_ref, est.value / p_ref - 1.0, est.std_err / p_ref});
  }
  return rows;
}

RateFit rate_fit(const std::vector<RatioRow>& rows, double x, bool pair_adjacent) {
  std::map<std::int64_t, std::pair<double, double>> by_n;  // n -> (|ratio - 1|, se)
  for (const auto& r : rows)
    if (std::abs(r.x - x) <= 1e-12 * std::max(1.0, std::abs(x))) by_n[r.n] = {std::abs(r.ratio_minus_1), r.ratio_se};
  std::vector<std::tuple<std::int64_t, double, double>> points;
  std::vector<std::int64_t> fit_excluded_unpaired;
  for (auto it = by_n.begin(); it != by_n.end(); ++it) {
    auto [n, v] = *it;
    if (pair_adjacent) {
      const auto partner = by_n.find(n + 2);
      if (partner == by_n.end()) {
        fit_excluded_unpaired.push_back(n);
        continue;
      }
      const auto [v2, s2] = partner->second;
      points.emplace_back(n, 0.5 * (v.first + v2), 0.5 * std::hypot(v.second, s2));
      it = partner;
    } else {
      points.emplace_back(n, v.first, v.second);
    }
  }
  RateFit fit{0.0, 0.0, 0.0, {}, fit_excluded_unpaired};
  std::vector<double> lx, ly;
  for (const auto& [n, v, se] : points) {
    if (v > 0.0 && v >= 3.0 * se) {
      fit.used.push_back(n);
      lx.push_back(std::log(static_cast<double>(n)));
      ly.push_back(std::log(v));
    } else {
      fit.excluded.push_back(n);
    }
  }
  if (lx.size() < 3) throw std::runtime_error("insufficient signal");
  const double m = static_cast<double>(lx.size());
  const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / m;
  const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / m;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  if (!(sxx > 0.0)) throw std::runtime_error("insufficient signal");
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double rss = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    const double e = ly[i] - fit.intercept - fit.slope * lx[i];
    rss += e * e;
  }
  fit.slope_se = std::sqrt(rss / (m - 2.0) / sxx);
  return fit;
}

}  // namespace quadtail
