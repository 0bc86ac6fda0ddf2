#include "quadtail/model.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace quadtail {
namespace {

constexpr double kProbTolerance = 1e-12;

void check_probs(const std::vector<double>& probs) {
  if (probs.empty()) throw std::invalid_argument("empty support");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw std::invalid_argument("negative or non-finite probability");
    total += p;
  }
  if (std::abs(total - 1.0) > kProbTolerance)
    throw std::invalid_argument("probabilities do not sum to 1");
}

double log_sum_exp(const std::vector<double>& v) {
  const double top = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(top)) return top;
  double s = 0.0;
  for (double e : v) s += std::exp(e - top);
  return top + std::log(s);
}

/// Raw moments E X^k, k = 1..4, of a one-dimensional finite-support spec.
std::array<double, 5> raw_moments_1d(const DistributionSpec& s) {
  std::array<double, 5> m{1.0, 0.0, 0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < s.probs().size(); ++i) {
    const double v = s.points()[i][0];
    double pw = 1.0;
    for (int k = 1; k <= 4; ++k) {
      pw *= v;
      m[k] += s.probs()[i] * pw;
    }
  }
  return m;
}

}  // namespace

std::string to_string(DistributionKind kind) {
  switch (kind) {
    case DistributionKind::kFiniteSupport: return "finite_support";
    case DistributionKind::kProductIid: return "product_iid";
    case DistributionKind::kGaussian: return "gaussian";
  }
  return "unknown";
}

DistributionSpec DistributionSpec::finite_support(std::vector<Vec> points, std::vector<double> probs) {
  if (points.size() != probs.size()) throw std::invalid_argument("points/probs length mismatch");
  check_probs(probs);
  const auto dim = points.front().size();
  if (dim < 1) throw std::invalid_argument("dimension must be positive");
  for (const auto& p : points) {
    if (p.size() != dim) throw std::invalid_argument("support points of differing dimension");
    if (!p.allFinite()) throw std::invalid_argument("non-finite support point");
  }
  DistributionSpec s;
  s.kind_ = DistributionKind::kFiniteSupport;
  s.dim_ = static_cast<int>(dim);
  s.points_ = std::move(points);
  s.probs_ = std::move(probs);
  return s;
}

DistributionSpec DistributionSpec::product_iid(const DistributionSpec& marginal, int dim) {
  if (marginal.kind() != DistributionKind::kFiniteSupport || marginal.dim() != 1)
    throw std::invalid_argument("product marginal must be one-dimensional finite support");
  if (dim < 1) throw std::invalid_argument("dimension must be positive");
  DistributionSpec s;
  s.kind_ = DistributionKind::kProductIid;
  s.dim_ = dim;
  s.marginal_ = std::make_shared<const DistributionSpec>(marginal);
  return s;
}

DistributionSpec DistributionSpec::gaussian(int dim) {
  if (dim < 1) throw std::invalid_argument("dimension must be positive");
  DistributionSpec s;
  s.kind_ = DistributionKind::kGaussian;
  s.dim_ = dim;
  return s;
}

const DistributionSpec& DistributionSpec::marginal() const {
  if (!marginal_) throw std::logic_error("spec has no marginal");
  return *marginal_;
}

std::vector<double> DistributionSpec::values_1d() const {
  if (kind_ != DistributionKind::kFiniteSupport || dim_ != 1)
    throw std::logic_error("values_1d requires a one-dimensional finite-support spec");
  std::vector<double> v;
  v.reserve(points_.size());
  for (const auto& p : points_) v.push_back(p[0]);
  return v;
}

std::string DistributionSpec::describe() const {
  std::ostringstream os;
  os << to_string(kind_) << "(d=" << dim_;
  if (kind_ == DistributionKind::kFiniteSupport) os << ", atoms=" << points_.size();
  if (kind_ == DistributionKind::kProductIid) os << ", marginal atoms=" << marginal_->points().size();
  os << ")";
  return os.str();
}

DistributionSpec standardize(const DistributionSpec& spec) {
  switch (spec.kind()) {
    case DistributionKind::kGaussian:
      return spec;
    case DistributionKind::kProductIid:
      return DistributionSpec::product_iid(standardize(spec.marginal()), spec.dim());
    case DistributionKind::kFiniteSupport: {
      const int d = spec.dim();
      Vec mean = Vec::Zero(d);
      for (std::size_t k = 0; k < spec.points().size(); ++k) mean += spec.probs()[k] * spec.points()[k];
      Mat cov = Mat::Zero(d, d);
      for (std::size_t k = 0; k < spec.points().size(); ++k) {
        const Vec c = spec.points()[k] - mean;
        cov += spec.probs()[k] * c * c.transpose();
      }
      SymmetricRoots roots;
      try {
        roots = symmetric_roots(cov, 1e-12);
      } catch (const std::domain_error&) {
        throw std::invalid_argument("degenerate distribution");
      }
      std::vector<Vec> pts;
      pts.reserve(spec.points().size());
      for (const auto& p : spec.points()) pts.push_back(roots.inv_sqrt * (p - mean));
      return DistributionSpec::finite_support(std::move(pts), spec.probs());
    }
  }
  throw std::logic_error("unreachable");
}

double log_mgf(const DistributionSpec& spec, const Vec& b) {
  if (b.size() != spec.dim()) throw std::invalid_argument("mgf argument dimension mismatch");
  switch (spec.kind()) {
    case DistributionKind::kGaussian:
      return 0.5 * b.squaredNorm();
    case DistributionKind::kProductIid: {
      double total = 0.0;
      Vec bj(1);
      for (int j = 0; j < spec.dim(); ++j) {
        bj[0] = b[j];
        total += log_mgf(spec.marginal(), bj);
      }
      return total;
    }
    case DistributionKind::kFiniteSupport: {
      std::vector<double> terms;
      terms.reserve(spec.probs().size());
      for (std::size_t k = 0; k < spec.probs().size(); ++k) {
        if (spec.probs()[k] == 0.0) continue;
        terms.push_back(std::log(spec.probs()[k]) + b.dot(spec.points()[k]));
      }
      return log_sum_exp(terms);
    }
  }
  throw std::logic_error("unreachable");
}

MgfValue mgf(const DistributionSpec& spec, const Vec& b) {
  const double lv = log_mgf(spec, b);
  return {std::exp(lv), lv};
}

MomentSet moments(const DistributionSpec& spec) {
  const int d = spec.dim();
  MomentSet m{Vec::Zero(d), Mat::Zero(d, d), Tensor3(d), 0.0};
  switch (spec.kind()) {
    case DistributionKind::kGaussian:
      m.cov = Mat::Identity(d, d);
      m.fourth_abs = static_cast<double>(d) * (d + 2);
      break;
    case DistributionKind::kFiniteSupport: {
      for (std::size_t i = 0; i < spec.points().size(); ++i) {
        const double p = spec.probs()[i];
        const Vec& x = spec.points()[i];
        m.mean += p * x;
        m.fourth_abs += p * x.squaredNorm() * x.squaredNorm();
        for (int j = 0; j < d; ++j)
          for (int k = 0; k < d; ++k)
            for (int l = 0; l < d; ++l) m.third(j, k, l) += p * x[j] * x[k] * x[l];
      }
      for (std::size_t i = 0; i < spec.points().size(); ++i) {
        const Vec c = spec.points()[i] - m.mean;
        m.cov += spec.probs()[i] * c * c.transpose();
      }
      break;
    }
    case DistributionKind::kProductIid: {
      const auto r = raw_moments_1d(spec.marginal());
      m.mean.setConstant(r[1]);
      m.cov = Mat::Identity(d, d) * (r[2] - r[1] * r[1]);
      for (int j = 0; j < d; ++j)
        for (int k = 0; k < d; ++k)
          for (int l = 0; l < d; ++l) {
            if (j == k && k == l) m.third(j, k, l) = r[3];
            else if (j == k || k == l || j == l) m.third(j, k, l) = r[2] * r[1];
            else m.third(j, k, l) = r[1] * r[1] * r[1];
          }
      m.fourth_abs = d * r[4] + static_cast<double>(d) * (d - 1) * r[2] * r[2];
      break;
    }
  }
  return m;
}

Vec sample_standard_normal(int dim, Philox4x32& rng) {
  std::normal_distribution<double> normal;
  Vec z(dim);
  for (int j = 0; j < dim; ++j) z[j] = normal(rng);
  return z;
}

void sample_multinomial(std::int64_t n, const std::vector<double>& probs, Philox4x32& rng,
                        std::vector<std::int64_t>& counts) {
  counts.assign(probs.size(), 0);
  std::int64_t remaining = n;
  double mass_left = 1.0;
  for (std::size_t k = 0; k + 1 < probs.size() && remaining > 0; ++k) {
    const double p = mass_left > 0.0 ? std::clamp(probs[k] / mass_left, 0.0, 1.0) : 0.0;
    std::int64_t c = 0;
    if (p >= 1.0) c = remaining;
    else if (p > 0.0) c = std::binomial_distribution<std::int64_t>(remaining, p)(rng);
    counts[k] = c;
    remaining -= c;
    mass_left -= probs[k];
  }
  if (!probs.empty()) counts.back() += remaining;
}

std::vector<Vec> sample(const DistributionSpec& spec, Philox4x32& rng, std::size_t count) {
  std::vector<Vec> out;
  out.reserve(count);
  const int d = spec.dim();
  switch (spec.kind()) {
    case DistributionKind::kGaussian:
      for (std::size_t i = 0; i < count; ++i) out.push_back(sample_standard_normal(d, rng));
      break;
    case DistributionKind::kFiniteSupport: {
      std::discrete_distribution<std::size_t> pick(spec.probs().begin(), spec.probs().end());
      for (std::size_t i = 0; i < count; ++i) out.push_back(spec.points()[pick(rng)]);
      break;
    }
    case DistributionKind::kProductIid: {
      const auto& marg = spec.marginal();
      std::discrete_distribution<std::size_t> pick(marg.probs().begin(), marg.probs().end());
      for (std::size_t i = 0; i < count; ++i) {
        Vec x(d);
        for (int j = 0; j < d; ++j) x[j] = marg.points()[pick(rng)][0];
        out.push_back(std::move(x));
      }
      break;
    }
  }
  return out;
}

Vec sample_normalized_sum(const DistributionSpec& spec, std::int64_t n, Philox4x32& rng) {
  const int d = spec.dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  std::vector<std::int64_t> counts;
  switch (spec.kind()) {
    case DistributionKind::kGaussian:
      return sample_standard_normal(d, rng);
    case DistributionKind::kFiniteSupport: {
      sample_multinomial(n, spec.probs(), rng, counts);
      Vec s = Vec::Zero(d);
      for (std::size_t k = 0; k < counts.size(); ++k)
        if (counts[k] != 0) s += static_cast<double>(counts[k]) * spec.points()[k];
      return s * scale;
    }
    case DistributionKind::kProductIid: {
      const auto& marg = spec.marginal();
      Vec s(d);
      for (int j = 0; j < d; ++j) {
        sample_multinomial(n, marg.probs(), rng, counts);
        double acc = 0.0;
        for (std::size_t k = 0; k < counts.size(); ++k)
          acc += static_cast<double>(counts[k]) * marg.points()[k][0];
        s[j] = acc * scale;
      }
      return s;
    }
  }
  throw std::logic_error("unreachable");
}

QuadForm::QuadForm(std::vector<double> eigenvalues) {
  if (eigenvalues.empty()) throw std::invalid_argument("quadratic form needs at least one eigenvalue");
  for (double v : eigenvalues)
    if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument("eigenvalues must be positive and finite");
  std::sort(eigenvalues.begin(), eigenvalues.end(), std::greater<>());
  if (std::abs(eigenvalues.front() - 1.0) > kGroupTolerance)
    throw std::invalid_argument("largest eigenvalue must equal 1");
  eigenvalues.front() = 1.0;
  for (double v : eigenvalues) {
    if (!groups_.empty()) {
      auto& g = groups_.back();
      if (std::abs(g.value - v) <= kGroupTolerance * std::max(g.value, v)) {
        ++g.multiplicity;
        continue;
      }
    }
    groups_.push_back({v, 1});
  }
  q_.resize(static_cast<Eigen::Index>(eigenvalues.size()));
  Eigen::Index i = 0;
  for (const auto& g : groups_)
    for (int m = 0; m < g.multiplicity; ++m) q_[i++] = g.value;
}

QuadForm QuadForm::normalized(std::vector<double> eigenvalues) {
  if (eigenvalues.empty()) throw std::invalid_argument("quadratic form needs at least one eigenvalue");
  const double top = *std::max_element(eigenvalues.begin(), eigenvalues.end());
  if (!(top > 0.0)) throw std::invalid_argument("eigenvalues must be positive and finite");
  for (double& v : eigenvalues) v /= top;
  return QuadForm(std::move(eigenvalues));
}

QuadForm QuadForm::identity(int dim) { return QuadForm(std::vector<double>(static_cast<std::size_t>(dim), 1.0)); }

double QuadForm::det_sqrt() const { return std::sqrt(q_.prod()); }

ReducedForm reduce_form(const Mat& sigma_bar, const Mat& q_bar, double x_bar) {
  if (sigma_bar.rows() != q_bar.rows() || !is_symmetric(sigma_bar) || !is_symmetric(q_bar))
    throw std::invalid_argument("reduce_form needs symmetric matrices of equal size");
  SymmetricRoots sroot;
  try {
    sroot = symmetric_roots(sigma_bar);
    (void)symmetric_roots(q_bar);
  } catch (const std::domain_error&) {
    throw std::invalid_argument("reduce_form needs positive definite matrices");
  }
  const Mat m = sroot.sqrt * q_bar * sroot.sqrt;
  Eigen::SelfAdjointEigenSolver<Mat> eig(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  const Vec& lam = eig.eigenvalues();
  const double op = lam.maxCoeff();
  std::vector<double> q(lam.data(), lam.data() + lam.size());
  return {QuadForm::normalized(std::move(q)), x_bar / std::sqrt(op), op};
}

namespace {

DistributionSpec spec_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "gaussian") return DistributionSpec::gaussian(j.at("dim").get<int>());
  if (kind == "product_iid")
    return DistributionSpec::product_iid(spec_from_json(j.at("marginal")), j.at("dim").get<int>());
  if (kind == "finite_support") {
    std::vector<Vec> pts;
    for (const auto& p : j.at("points")) {
      if (p.is_number()) {
        pts.push_back(Vec::Constant(1, p.get<double>()));
      } else {
        const auto v = p.get<std::vector<double>>();
        pts.push_back(Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())));
      }
    }
    auto spec = DistributionSpec::finite_support(std::move(pts), j.at("probs").get<std::vector<double>>());
    if (j.contains("dim") && j.at("dim").get<int>() != spec.dim())
      throw std::invalid_argument("dim does not match support points");
    return spec;
  }
  throw std::invalid_argument("unknown distribution kind: " + kind);
}

nlohmann::json spec_to_json(const DistributionSpec& s) {
  nlohmann::json j;
  j["kind"] = to_string(s.kind());
  j["dim"] = s.dim();
  if (s.kind() == DistributionKind::kFiniteSupport) {
    auto pts = nlohmann::json::array();
    for (const auto& p : s.points()) pts.push_back(std::vector<double>(p.data(), p.data() + p.size()));
    j["points"] = pts;
    j["probs"] = s.probs();
  }
  if (s.kind() == DistributionKind::kProductIid) j["marginal"] = spec_to_json(s.marginal());
  return j;
}

DistributionSpec bernoulli(double p) {
  return DistributionSpec::finite_support({Vec::Constant(1, 0.0), Vec::Constant(1, 1.0)}, {1.0 - p, p});
}

DistributionSpec skewed_three_point() {
  return DistributionSpec::finite_support(
      {Vec::Constant(1, 0.0), Vec::Constant(1, 1.0), Vec::Constant(1, 3.0)}, {0.5, 0.3, 0.2});
}

int parse_dim_suffix(const std::string& name, std::size_t colon) {
  const int d = std::stoi(name.substr(colon + 1));
  if (d < 1) throw std::invalid_argument("preset dimension must be positive");
  return d;
}

}  // namespace

DistributionSpec spec_from_json_text(const std::string& text) {
  try {
    return spec_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("malformed spec: ") + e.what());
  }
}

std::string spec_to_json_text(const DistributionSpec& spec) { return spec_to_json(spec).dump(); }

DistributionSpec resolve_spec(const std::string& name, bool standardize_file) {
  const auto colon = name.find(':');
  const std::string head = name.substr(0, colon);
  const auto rademacher = DistributionSpec::finite_support({Vec::Constant(1, -1.0), Vec::Constant(1, 1.0)},
                                                           {0.5, 0.5});
  if (name == "rademacher1d") return rademacher;
  if (head == "rademacher" && colon != std::string::npos)
    return DistributionSpec::product_iid(rademacher, parse_dim_suffix(name, colon));
  if (head == "gaussian" && colon != std::string::npos)
    return DistributionSpec::gaussian(parse_dim_suffix(name, colon));
  if (head == "skewed2pt") {
    const double p = colon == std::string::npos ? 0.25 : std::stod(name.substr(colon + 1));
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("skewed2pt probability must lie in (0,1)");
    return standardize(bernoulli(p));
  }
  if (head == "skewed3pt") {
    const int d = colon == std::string::npos ? 1 : parse_dim_suffix(name, colon);
    return DistributionSpec::product_iid(standardize(skewed_three_point()), d);
  }
  std::ifstream in{std::filesystem::path(name)};
  if (!in) throw std::invalid_argument("unknown preset and unreadable spec file: " + name);
  std::stringstream buf;
  buf << in.rdbuf();
  auto spec = spec_from_json_text(buf.str());
  return standardize_file ? standardize(spec) : spec;
}

}  // namespace quadtail
