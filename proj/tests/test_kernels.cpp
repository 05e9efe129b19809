#include <doctest.h>

#include <cmath>
#include <numbers>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "fixtures.hpp"
#include "kacflow/errors.hpp"
#include "kacflow/kernels.hpp"
#include "support.hpp"

using namespace kacflow;
using boost::math::quadrature::gauss_kronrod;

namespace {

CollisionKernel builtin(const std::string& name, int dim) { return make_kernel({name, dim, {}}); }

double gaussian_integral_oracle() {
  return gauss_kronrod<double, 61>::integrate([](double w) { return std::exp(-w * w); },
                                              -std::numeric_limits<double>::infinity(),
                                              std::numeric_limits<double>::infinity(), 15, 1e-14);
}

}  // namespace

TEST_CASE("maxwell kernel has unit rate and detailed balance") {
  for (int d = 1; d <= 3; ++d) {
    const auto k = builtin("maxwell_sigma1", d);
    CHECK(k.detailed_balance);
    Rng rng(7);
    std::vector<double> v(d), vs(d);
    for (int s = 0; s < 50; ++s) {
      for (int a = 0; a < d; ++a) v[a] = 3.0 * standard_normal(rng), vs[a] = 3.0 * standard_normal(rng);
      CHECK(scattering_rate(k, v, vs) == 1.0);
      auto no_closed = k;
      no_closed.closed_form_lambda = nullptr;
      CHECK(scattering_rate(no_closed, v, vs) == doctest::Approx(1.0).epsilon(1e-10));
    }
    CHECK(detailed_balance_check(k, 1000, rng) <= 1e-12);
  }
}

TEST_CASE("paper example rate at v=1, v*=-1") {
  const double oracle = 3.0 * gaussian_integral_oracle();
  CHECK(oracle == doctest::Approx(5.31736).epsilon(1e-6));
  auto k = builtin("paper_example", 1);
  CHECK(k.envelope.gamma == 1.0);
  const double v[1] = {1.0}, vs[1] = {-1.0};
  CHECK(std::fabs(scattering_rate(k, v, vs) - oracle) <= 1e-12 * oracle);
  k.closed_form_lambda = nullptr;
  CHECK(std::fabs(scattering_rate(k, v, vs) - oracle) <= 1e-8 * oracle);
  CHECK(diagonal_rate(k, v) == doctest::Approx(std::sqrt(std::numbers::pi)).epsilon(1e-8));
}

TEST_CASE("rates are symmetric in the incoming pair") {
  auto k = builtin("paper_example", 2);
  k.closed_form_lambda = nullptr;
  const auto c = kactest::symmetric_custom_kernel(1);
  Rng rng(11);
  for (int s = 0; s < 1000; ++s) {
    double v[2], vs[2];
    for (int a = 0; a < 2; ++a) v[a] = 2.0 * standard_normal(rng), vs[a] = 2.0 * standard_normal(rng);
    if (s < 100) {
      const double l1 = scattering_rate(k, Vec(v, 2), Vec(vs, 2)), l2 = scattering_rate(k, Vec(vs, 2), Vec(v, 2));
      CHECK(std::fabs(l1 - l2) <= 1e-12 * l1);
    }
    const double m1 = scattering_rate(c, Vec(v, 1), Vec(vs, 1)), m2 = scattering_rate(c, Vec(vs, 1), Vec(v, 1));
    CHECK(std::fabs(m1 - m2) <= 1e-12 * m1);
  }
}

TEST_CASE("tail parameters bound the weighted rate") {
  for (const char* name : {"maxwell_sigma1", "paper_example"}) {
    for (int d = 1; d <= 2; ++d) {
      const auto k = builtin(name, d);
      Rng rng(3);
      for (int s = 0; s < 20; ++s) {
        std::vector<double> v(d), vs(d);
        for (int a = 0; a < d; ++a) v[a] = 2.0 * standard_normal(rng), vs[a] = 2.0 * standard_normal(rng);
        double u = 0.0;
        for (int a = 0; a < d; ++a) u += (v[a] - vs[a]) * (v[a] - vs[a]);
        u = std::sqrt(u);
        const double weighted =
            integrate_outgoing(d, k.envelope.decay - k.tail.eta, [&](Vec wp) {
              return k.density(v, vs, wp) * std::exp(k.tail.eta * norm_sq(wp));
            }).value;
        CHECK(weighted <= k.tail.C * (1.0 + std::pow(u, k.tail.gamma)) * (1.0 + 1e-12));
      }
    }
  }
}

TEST_CASE("custom kernel validation") {
  CollisionKernel asym;
  asym.dim = 1;
  asym.density = [](Vec v, Vec, Vec wp) { return (1.5 + std::tanh(v[0])) * std::exp(-norm_sq(wp)); };
  asym.envelope = {3.0, 1.0, 0.0, 0.0};
  asym.lower_bound = {0.5, 1.0};
  CHECK_THROWS_AS(make_custom_kernel(asym), ValidationError);
  try {
    make_custom_kernel(asym);
  } catch (const ValidationError& e) {
    CHECK(e.point.size() == 3);
    CHECK(std::string(e.what()).find("incoming") != std::string::npos);
  }

  auto missing = asym;
  missing.envelope = {};
  CHECK_THROWS_AS(make_custom_kernel(missing), ConfigError);

  auto loose = builtin("paper_example", 1);
  loose.envelope.amp = 0.5;
  CHECK_THROWS_AS(make_custom_kernel(loose), ValidationError);

  CHECK_THROWS_AS(make_kernel({"custom", 1, {}}), ConfigError);
  CHECK_THROWS_AS(make_kernel({"hard_spheres", 1, {}}), ConfigError);
  const auto d = parse_kernel_descriptor(nlohmann::json::parse(R"({"name":"paper_example","dim":2})"));
  CHECK(make_kernel(d).dim == 2);
}

TEST_CASE("maxwell proposals are always accepted") {
  const auto k = builtin("maxwell_sigma1", 2);
  Rng rng(5);
  double v[2] = {snap(0.3), snap(-1.2)}, vs[2] = {snap(-0.7), snap(2.5)}, vp[2], vsp[2];
  for (int s = 0; s < 10000; ++s) CHECK(sample_outgoing(k, rng, Vec(v, 2), Vec(vs, 2), vp, vsp) == 1);
}

TEST_CASE("outgoing pairs conserve momentum bitwise") {
  const auto k = builtin("paper_example", 2);
  Rng rng(9);
  double v[2], vs[2], vp[2], vsp[2];
  bool exact = true;
  for (int s = 0; s < 100000; ++s) {
    for (int a = 0; a < 2; ++a) v[a] = snap(2.0 * standard_normal(rng)), vs[a] = snap(2.0 * standard_normal(rng));
    sample_outgoing(k, rng, Vec(v, 2), Vec(vs, 2), vp, vsp);
    for (int a = 0; a < 2; ++a) exact = exact && (vp[a] + vsp[a] - (v[a] + vs[a]) == 0.0);
  }
  CHECK(exact);
}

TEST_CASE("paper example outgoing speed law and exchangeability") {
  const auto k = builtin("paper_example", 1);
  Rng rng(13);
  const double v[1] = {snap(0.8)}, vs[1] = {snap(-0.4)};
  double vp[1], vsp[1];
  const int n = 100000;
  std::vector<double> speed, first, second;
  for (int s = 0; s < n; ++s) {
    sample_outgoing(k, rng, v, vs, vp, vsp);
    speed.push_back(std::fabs(vp[0] - vsp[0]) / std::numbers::sqrt2);
    first.push_back(vp[0]);
    second.push_back(vsp[0]);
  }
  const double total = gaussian_integral_oracle();
  auto cdf = [&](double x) {
    return 2.0 * gauss_kronrod<double, 31>::integrate([](double w) { return std::exp(-w * w); }, 0.0, x, 10, 1e-13) /
           total;
  };
  CHECK(kactest::ks_statistic(speed, cdf) < kactest::ks_critical(n));
  CHECK(kactest::ks_two_sample(first, second) < kactest::ks_critical(n, n));
}

TEST_CASE("quadrature rate agrees with the acceptance-rate estimate") {
  const auto k = kactest::symmetric_custom_kernel(1);
  Rng rng(17);
  const double v[1] = {snap(0.9)}, vs[1] = {snap(-0.2)};
  double vp[1], vsp[1];
  long proposals = 0, draws = 0;
  while (proposals < 100000) {
    proposals += sample_outgoing(k, rng, v, vs, vp, vsp);
    ++draws;
  }
  const double p = static_cast<double>(draws) / proposals;
  const double scale = k.envelope.prefactor(1.1) * std::sqrt(std::numbers::pi / k.envelope.decay);
  const double estimate = scale * p;
  const double se = scale * std::sqrt(p * (1.0 - p) / proposals);
  const double lambda = scattering_rate(k, v, vs);
  CHECK(std::fabs(estimate - lambda) <= 4.0 * se);
}

TEST_CASE("detailed balance check separates kernels") {
  Rng rng(21);
  CHECK(detailed_balance_check(builtin("paper_example", 1), 1000, rng) > 0.1);
  CHECK(detailed_balance_check(kactest::symmetric_custom_kernel(1), 1000, rng) <= 1e-12);
  CHECK(detailed_balance_check(kactest::symmetric_custom_kernel(2), 1000, rng) <= 1e-12);
}

TEST_CASE("quadrature reports non-convergence") {
  auto step = [](Vec w) { return w[0] > 0.3 ? std::exp(-w[0] * w[0]) : 0.0; };
  CHECK_THROWS_AS(integrate_outgoing(1, 1.0, step, 1e-8), NumericError);
  try {
    integrate_outgoing(1, 1.0, step, 1e-8);
  } catch (const NumericError& e) {
    CHECK(e.achieved > 1e-8);
  }
}

TEST_CASE("envelope violation is reported") {
  auto k = builtin("paper_example", 1);
  k.envelope.amp = 0.25;
  Rng rng(1);
  const double v[1] = {0.0}, vs[1] = {0.0};
  double vp[1], vsp[1];
  CHECK_THROWS_AS(sample_outgoing(k, rng, v, vs, vp, vsp), EnvelopeViolation);
}

TEST_CASE("bump tilt rate and bound") {
  const auto t = bump_tilt(1, {0.8, 1.0, 1.0, 0.5});
  CHECK(t.rate_bound == doctest::Approx(1.0 + 0.8 * 1.5));
  CHECK_FALSE(t.time_independent);
  const double v[1] = {0.3}, vs[1] = {-0.1};
  const double closed = scattering_rate(t, 0.2, v, vs);
  auto no_closed = t;
  no_closed.closed_form_lambda = nullptr;
  CHECK(scattering_rate(no_closed, 0.2, v, vs) == doctest::Approx(closed).epsilon(1e-9));
}
