#include "quadtail/model.hpp"
#include "quadtail/parallel.hpp"
#include "quadtail/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <set>

using namespace quadtail;

namespace {

DistributionSpec two_point(double a, double b, double pa) {
  return DistributionSpec::finite_support({Vec::Constant(1, a), Vec::Constant(1, b)}, {pa, 1.0 - pa});
}

Vec vec(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double e : v) out[i++] = e;
  return out;
}

}  // namespace

TEST_CASE("philox known-answer vectors") {
  const auto zero = Philox4x32::bijection({0, 0, 0, 0}, {0, 0});
  CHECK(zero[0] == 0x6627e8d5u);
  CHECK(zero[1] == 0xe169c58du);
  CHECK(zero[2] == 0xbc57ac4cu);
  CHECK(zero[3] == 0x9b00dbd8u);
  const auto ones = Philox4x32::bijection({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                                          {0xffffffffu, 0xffffffffu});
  CHECK(ones[0] == 0x408f276du);
  CHECK(ones[1] == 0x41c83b0eu);
  CHECK(ones[2] == 0xa20bc7c6u);
  CHECK(ones[3] == 0x6d5451fdu);
  const auto pi = Philox4x32::bijection({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                                        {0xa4093822u, 0x299f31d0u});
  CHECK(pi[0] == 0xd16cfe09u);
  CHECK(pi[1] == 0x94fdccebu);
  CHECK(pi[2] == 0x5001e420u);
  CHECK(pi[3] == 0x24126ea1u);
}

TEST_CASE("philox streams are reproducible and distinct") {
  Philox4x32 a(42, stream_id(StreamPurpose::kCrude, 3));
  Philox4x32 b(42, stream_id(StreamPurpose::kCrude, 3));
  Philox4x32 c(42, stream_id(StreamPurpose::kCrude, 4));
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const auto va = a();
    CHECK(va == b());
    seen.insert(va);
    seen.insert(c());
  }
  CHECK(seen.size() == 2000);
  Philox4x32 u(7, 0);
  for (int i = 0; i < 10000; ++i) {
    const double v = u.uniform();
    REQUIRE(v > 0.0);
    REQUIRE(v < 1.0);
  }
}

TEST_CASE("run_blocks result is independent of worker count") {
  BlockSchedule schedule{100000, 1000};
  auto fn = [](std::uint64_t b) {
    Philox4x32 rng(9, b);
    double s = 0.0;
    for (int i = 0; i < 1000; ++i) s += rng.uniform();
    return s;
  };
  const auto one = run_blocks<double>(schedule, 1, fn);
  const auto many = run_blocks<double>(schedule, 7, fn);
  CHECK(one == many);
}

TEST_CASE("standardize") {
  SUBCASE("gaussian unchanged") {
    const auto s = standardize(DistributionSpec::gaussian(3));
    CHECK(s.kind() == DistributionKind::kGaussian);
    CHECK(s.dim() == 3);
  }
  SUBCASE("rademacher unchanged") {
    const auto s = standardize(two_point(-1, 1, 0.5));
    CHECK(s.points()[0][0] == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(s.points()[1][0] == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("whitening of {0,1}") {
    const auto s = standardize(two_point(0, 1, 0.5));
    CHECK(std::abs(s.points()[0][0] + 1.0) < 1e-14);
    CHECK(std::abs(s.points()[1][0] - 1.0) < 1e-14);
  }
  SUBCASE("moments after standardizing and idempotence") {
    const auto raw = DistributionSpec::finite_support({vec({0, 0}), vec({1, 0}), vec({0, 2}), vec({3, 1})},
                                                      {0.4, 0.3, 0.2, 0.1});
    const auto s = standardize(raw);
    const auto m = moments(s);
    CHECK(m.mean.cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((m.cov - Mat::Identity(2, 2)).cwiseAbs().maxCoeff() <= 1e-10);
    const auto s2 = standardize(s);
    for (std::size_t k = 0; k < s.points().size(); ++k)
      CHECK((s.points()[k] - s2.points()[k]).cwiseAbs().maxCoeff() <= 1e-10);
  }
  SUBCASE("degenerate") {
    CHECK_THROWS_WITH_AS(standardize(two_point(1, 1, 0.5)), "degenerate distribution", std::invalid_argument);
    const auto line = DistributionSpec::finite_support({vec({1, 1}), vec({-1, -1})}, {0.5, 0.5});
    CHECK_THROWS_AS(standardize(line), std::invalid_argument);
  }
  SUBCASE("bad probabilities") {
    CHECK_THROWS_AS(two_point(0, 1, 1.5), std::invalid_argument);
    CHECK_THROWS_AS(DistributionSpec::finite_support({vec({0}), vec({1})}, {0.5, 0.5 + 1e-9}),
                    std::invalid_argument);
  }
}

TEST_CASE("mgf") {
  CHECK(mgf(DistributionSpec::gaussian(2), Vec::Zero(2)).value == 1.0);
  const auto rad = two_point(-1, 1, 0.5);
  for (double t : {-3.0, -0.5, 0.0, 0.7, 2.0}) CHECK(mgf(rad, vec({t})).value == doctest::Approx(std::cosh(t)));
  const auto planar = DistributionSpec::finite_support({vec({1, 0}), vec({-1, 0})}, {0.5, 0.5});
  CHECK(mgf(planar, vec({0, 5})).value == doctest::Approx(1.0).epsilon(1e-15));
  SUBCASE("overflow stays finite in log space") {
    const auto v = mgf(rad, vec({800.0}));
    CHECK(std::isinf(v.value));
    CHECK(v.log_value == doctest::Approx(800.0 - std::log(2.0)));
  }
  SUBCASE("product equals product of marginals") {
    const auto prod = DistributionSpec::product_iid(standardize(two_point(0, 1, 0.3)), 3);
    const Vec b = vec({0.2, -0.4, 0.9});
    double expect = 0.0;
    for (int j = 0; j < 3; ++j) expect += log_mgf(prod.marginal(), vec({b[j]}));
    CHECK(log_mgf(prod, b) == doctest::Approx(expect));
  }
  SUBCASE("Jensen lower bound") {
    const auto s = resolve_spec("skewed3pt:3");
    Philox4x32 rng(3, 0);
    for (int i = 0; i < 50; ++i) {
      const Vec b = sample_standard_normal(3, rng);
      CHECK(log_mgf(s, b) >= -1e-14);
    }
  }
}

TEST_CASE("moments") {
  CHECK(moments(DistributionSpec::gaussian(2)).third.is_zero());
  const auto rad = moments(two_point(-1, 1, 0.5));
  CHECK(rad.third(0, 0, 0) == 0.0);
  CHECK(rad.fourth_abs == doctest::Approx(1.0));
  for (double p : {0.1, 0.25, 0.5, 0.8}) {
    const double q = 1.0 - p;
    const auto s = two_point(-std::sqrt(p / q), std::sqrt(q / p), q);
    CHECK(moments(s).third(0, 0, 0) == doctest::Approx((q - p) / std::sqrt(p * q)).epsilon(1e-12));
  }
  SUBCASE("direct sums agree with finite differences of the log-mgf") {
    const auto s = standardize(DistributionSpec::finite_support(
        {vec({0, 0}), vec({1, 0}), vec({0, 2}), vec({3, 1})}, {0.4, 0.3, 0.2, 0.1}));
    const auto m = moments(s);
    const double h = 1e-4;
    for (int j = 0; j < 2; ++j) {
      const Vec e = Vec::Unit(2, j);
      const double d1 = (log_mgf(s, h * e) - log_mgf(s, -h * e)) / (2 * h);
      const double d2 = (log_mgf(s, h * e) - 2 * log_mgf(s, Vec::Zero(2)) + log_mgf(s, -h * e)) / (h * h);
      CHECK(std::abs(d1 - m.mean[j]) <= 1e-6);
      CHECK(std::abs(d2 - m.cov(j, j)) <= 1e-6);
      // third cumulant equals third raw moment for a standardized law
      const double h3 = 1e-2;
      const double d3 = (log_mgf(s, 2 * h3 * e) - 2 * log_mgf(s, h3 * e) + 2 * log_mgf(s, -h3 * e) -
                         log_mgf(s, -2 * h3 * e)) /
                        (2 * h3 * h3 * h3);
      CHECK(std::abs(d3 - m.third(j, j, j)) <= 1e-3);
    }
  }
  SUBCASE("product moments match the explicit joint law") {
    const auto marg = standardize(two_point(0, 1, 0.3));
    const auto prod = DistributionSpec::product_iid(marg, 2);
    std::vector<Vec> pts;
    std::vector<double> probs;
    for (std::size_t a = 0; a < 2; ++a)
      for (std::size_t b = 0; b < 2; ++b) {
        pts.push_back(vec({marg.points()[a][0], marg.points()[b][0]}));
        probs.push_back(marg.probs()[a] * marg.probs()[b]);
      }
    const auto joint = DistributionSpec::finite_support(pts, probs);
    const auto mp = moments(prod);
    const auto mj = moments(joint);
    CHECK(mp.fourth_abs == doctest::Approx(mj.fourth_abs));
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k)
        for (int l = 0; l < 2; ++l) CHECK(std::abs(mp.third(j, k, l) - mj.third(j, k, l)) < 1e-12);
  }
}

TEST_CASE("sample") {
  const auto rad = two_point(-1, 1, 0.5);
  Philox4x32 rng(1, 0);
  CHECK(sample(rad, rng, 0).empty());
  Philox4x32 big(11, 0);
  const auto draws = sample(rad, big, 1000000);
  double mean = 0.0;
  for (const auto& v : draws) mean += v[0];
  mean /= 1e6;
  CHECK(std::abs(mean) <= 4.0 / 1000.0);
  Philox4x32 r1(5, 1);
  Philox4x32 r2(5, 1);
  const auto g1 = sample(DistributionSpec::gaussian(2), r1, 100);
  const auto g2 = sample(DistributionSpec::gaussian(2), r2, 100);
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("normalized sum sampling matches the law of W") {
  const auto rad = two_point(-1, 1, 0.5);
  Philox4x32 rng(8, 0);
  const int n = 9;
  double m2 = 0.0;
  int on_lattice = 0;
  const int count = 200000;
  for (int i = 0; i < count; ++i) {
    const double w = sample_normalized_sum(rad, n, rng)[0];
    m2 += w * w;
    const double s = w * 3.0;
    if (std::abs(s - std::round(s)) < 1e-9 && std::lround(s) % 2 != 0) ++on_lattice;
  }
  CHECK(on_lattice == count);
  CHECK(std::abs(m2 / count - 1.0) < 0.02);
}

TEST_CASE("quadratic form grouping") {
  const QuadForm q({1.0, 0.5, 0.5 * (1 + 1e-14), 0.25});
  REQUIRE(q.groups().size() == 3);
  CHECK(q.groups()[1].multiplicity == 2);
  CHECK(q.eigenvalues()[1] == q.eigenvalues()[2]);
  int total = 0;
  for (const auto& g : q.groups()) total += g.multiplicity;
  CHECK(total == 4);
  const QuadForm split({1.0, 0.5, 0.5 * (1 + 1e-9)});
  CHECK(split.groups().size() == 3);
  CHECK_THROWS_AS(QuadForm({0.5, 0.25}), std::invalid_argument);
  CHECK_THROWS_AS(QuadForm({1.0, 0.0}), std::invalid_argument);
  CHECK(QuadForm::normalized({4.0, 1.0}).eigenvalues()[1] == 0.25);
}

TEST_CASE("reduce_form") {
  const Mat eye = Mat::Identity(2, 2);
  auto r = reduce_form(eye, eye, 2.0);
  CHECK(r.form.eigenvalues()[1] == doctest::Approx(1.0));
  CHECK(r.x == doctest::Approx(2.0));
  Mat d41 = Mat::Zero(2, 2);
  d41(0, 0) = 4.0;
  d41(1, 1) = 1.0;
  r = reduce_form(eye, d41, 2.0);
  CHECK(r.form.eigenvalues()[1] == doctest::Approx(0.25));
  CHECK(r.x == doctest::Approx(1.0));
  r = reduce_form(d41, eye, 2.0);
  CHECK(r.form.eigenvalues()[1] == doctest::Approx(0.25));
  CHECK(r.x == doctest::Approx(1.0));
  Mat bad = eye;
  bad(1, 1) = -1.0;
  CHECK_THROWS_AS(reduce_form(eye, bad, 1.0), std::invalid_argument);
}

TEST_CASE("spec json round trip and presets") {
  const auto s = resolve_spec("skewed3pt:2");
  const auto back = spec_from_json_text(spec_to_json_text(s));
  CHECK(back.kind() == DistributionKind::kProductIid);
  CHECK(back.dim() == 2);
  CHECK(back.marginal().points()[2][0] == s.marginal().points()[2][0]);
  const auto one = spec_from_json_text(R"({"kind":"finite_support","points":[-1,1],"probs":[0.5,0.5]})");
  CHECK(one.dim() == 1);
  CHECK_THROWS_AS(spec_from_json_text("{\"kind\": 3"), std::invalid_argument);
  CHECK_THROWS_AS(resolve_spec("no-such-preset"), std::invalid_argument);
  const auto sk = resolve_spec("skewed2pt:0.2");
  CHECK(moments(sk).third(0, 0, 0) == doctest::Approx(0.6 / std::sqrt(0.16)));
}
