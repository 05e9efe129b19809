#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numbers>

#include "kacflow/errors.hpp"
#include "kacflow/walk.hpp"
#include "support.hpp"

using namespace kacflow;

namespace {

CollisionKernel maxwell(int d) { return make_kernel({"maxwell_sigma1", d, {}}); }

bool same_log(const EventLog& a, const EventLog& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k].t != b[k].t || a[k].i != b[k].i || a[k].j != b[k].j) return false;
    if (std::memcmp(a[k].data, b[k].data, sizeof(a[k].data)) != 0) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("projected Gaussian initial state") {
  const auto m = InitialDensity::gaussian(1);
  const std::size_t n = 4;
  const double oracle = 1.0 - 1.0 / n;
  std::vector<double> sq;
  bool zero_sum = true;
  for (int r = 0; r < 100000; ++r) {
    Rng rng = make_stream(2024, r);
    const auto s = sample_initial(m, n, InitMode::gaussian_project, rng);
    zero_sum = zero_sum && s.momentum()[0] == 0.0;
    sq.push_back(s.velocities[0] * s.velocities[0]);
  }
  CHECK(zero_sum);
  const auto est = kactest::mean_se(sq);
  CHECK(std::fabs(est.mean - oracle) <= 4.0 * est.se);
}

TEST_CASE("initial state preconditions") {
  Rng rng(1);
  CHECK_THROWS_AS(sample_initial(InitialDensity::gaussian(1), 1, InitMode::gaussian_project, rng),
                  PreconditionError);
  const auto mix = parse_initial_density(
      nlohmann::json::parse(R"({"kind":"mixture","components":[{"weight":1,"mean":-1.5,"variance":0.5},
                                                                 {"weight":1,"mean":1.5,"variance":0.5}]})"),
      1);
  CHECK_THROWS_AS(sample_initial(mix, 10, InitMode::gaussian_project, rng), ModeError);
  CHECK_THROWS_AS(parse_initial_density(nlohmann::json::parse(R"({"kind":"mixture","components":[{"mean":1}]})"), 1),
                  ConfigError);
  CHECK(gaussian_lower_bound_constant(mix) > 0.0);
  CHECK(gaussian_lower_bound_constant(InitialDensity::gaussian(2)) > 0.0);
}

TEST_CASE("mcmc sweeps keep the sum exactly zero") {
  const auto mix = parse_initial_density(
      nlohmann::json::parse(R"({"kind":"mixture","components":[{"weight":1,"mean":[-1.5,0.5],"variance":0.5},
                                                                 {"weight":1,"mean":[1.5,-0.5],"variance":0.5}]})"),
      2);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    McmcOptions opts;
    opts.pair_updates = 2000;
    const auto s = sample_initial(mix, 50, InitMode::mcmc, rng, opts);
    CHECK(s.momentum()[0] == 0.0);
    CHECK(s.momentum()[1] == 0.0);
  }
}

TEST_CASE("zero horizon gives no events") {
  Rng rng(3);
  const auto s = sample_initial(InitialDensity::gaussian(1), 10, InitMode::gaussian_project, rng);
  const auto k = maxwell(1);
  CHECK(simulate(s, k, 0.0, rng).flow.size() == 0);
  CHECK(simulate_tilted(s, as_tilted(k), 0.0, rng).flow.size() == 0);
}

TEST_CASE("two particles collide at rate 1/N") {
  const auto k = maxwell(1);
  const double T = 10.0, oracle = T * 1.0 / 2.0;
  std::vector<double> counts;
  for (int r = 0; r < 10000; ++r) {
    Rng rng = make_stream(77, r);
    const auto s = sample_initial(InitialDensity::gaussian(1), 2, InitMode::gaussian_project, rng);
    counts.push_back(static_cast<double>(simulate(s, k, T, rng).flow.size()));
  }
  const auto est = kactest::mean_se(counts);
  CHECK(std::fabs(est.mean - oracle) <= 4.0 * est.se);
}

TEST_CASE("momentum stays zero through many events") {
  Rng rng(5);
  const auto k = make_kernel({"paper_example", 2, {}});
  const auto s = sample_initial(InitialDensity::gaussian(2), 200, InitMode::gaussian_project, rng);
  SimulateOptions opts;
  opts.max_events = 20000;
  opts.track_momentum = true;
  const auto res = simulate(s, k, 1e9, rng, opts);
  CHECK(res.flow.size() == 20000);
  CHECK(res.stats.max_momentum_drift <= 1e-9 * 200);
  CHECK(res.trajectory.final_state().momentum_norm() == 0.0);
  CHECK(res.trajectory.replay_check());
  for (const auto& e : *res.flow.events)
    for (int a = 0; a < 2; ++a) CHECK(e.v()[a] + e.vs()[a] == e.vp()[a] + e.vsp()[a]);
}

TEST_CASE("rate cache stays coherent") {
  Rng rng(8);
  const auto k = make_kernel({"paper_example", 1, {}});
  const auto s = sample_initial(InitialDensity::gaussian(1), 60, InitMode::gaussian_project, rng);
  KacWalk walk(s, k);
  EventLog log;
  walk.run(20.0, rng, log);
  CHECK(log.size() > 100);
  CHECK(walk.cache().coherence_error(walk.state()) <= 1e-10);
}

TEST_CASE("seeded runs replay bitwise") {
  const auto k = make_kernel({"paper_example", 2, {}});
  auto run = [&] {
    Rng rng = make_stream(99, 4);
    const auto s = sample_initial(InitialDensity::gaussian(2), 30, InitMode::gaussian_project, rng);
    return simulate(s, k, 2.0, rng);
  };
  const auto a = run(), b = run();
  CHECK(same_log(*a.flow.events, *b.flow.events));
  CHECK(a.trajectory.initial.velocities == b.trajectory.initial.velocities);
}

TEST_CASE("thinning with constant tilted rate") {
  const auto tilt = scaled_tilt(maxwell(1), 1.0);
  const double oracle = 1.0 * 2.0 * (4 - 1) / 2.0;
  std::vector<double> counts;
  for (int r = 0; r < 10000; ++r) {
    Rng rng = make_stream(55, r);
    const auto s = sample_initial(InitialDensity::gaussian(1), 4, InitMode::gaussian_project, rng);
    counts.push_back(static_cast<double>(simulate_tilted(s, tilt, 2.0, rng).flow.size()));
  }
  const auto est = kactest::mean_se(counts);
  CHECK(std::fabs(est.mean - oracle) <= 4.0 * est.se);
}

TEST_CASE("thinning reproduces the homogeneous event law") {
  const auto k = make_kernel({"paper_example", 1, {}});
  auto bounded = k;
  bounded.density = [](Vec v, Vec vs, Vec wp) {
    return (1.0 + std::tanh(std::fabs(v[0] - vs[0]))) * std::exp(-norm_sq(wp));
  };
  bounded.closed_form_lambda = [](Vec v, Vec vs) {
    return (1.0 + std::tanh(std::fabs(v[0] - vs[0]))) * std::sqrt(std::numbers::pi);
  };
  bounded.envelope = {2.0, 1.0, 0.0, 0.0};
  bounded.rate_bound = 2.0 * std::sqrt(std::numbers::pi);
  bounded = make_custom_kernel(bounded);
  const auto tilt = as_tilted(bounded);
  std::vector<double> direct, thinned;
  for (int r = 0; r < 10000; ++r) {
    Rng rng = make_stream(31, r);
    const auto s = sample_initial(InitialDensity::gaussian(1), 5, InitMode::gaussian_project, rng);
    direct.push_back(static_cast<double>(simulate(s, bounded, 1.5, rng).flow.size()));
    Rng rng2 = make_stream(32, r);
    const auto s2 = sample_initial(InitialDensity::gaussian(1), 5, InitMode::gaussian_project, rng2);
    thinned.push_back(static_cast<double>(simulate_tilted(s2, tilt, 1.5, rng2).flow.size()));
  }
  CHECK(kactest::ks_two_sample(direct, thinned) < kactest::ks_critical(10000, 10000));
}

TEST_CASE("bound violation aborts the tilted walk") {
  auto tilt = bump_tilt(1, {2.0, 1.0, 1.0, 0.0});
  tilt.rate_bound = 1.5;
  Rng rng(4);
  const auto s = sample_initial(InitialDensity::gaussian(1), 10, InitMode::gaussian_project, rng);
  CHECK_THROWS_AS(simulate_tilted(s, tilt, 5.0, rng), BoundViolation);
}

TEST_CASE("girsanov log-likelihood identities") {
  const auto k = maxwell(1);
  Rng rng(12);
  const auto s = sample_initial(InitialDensity::gaussian(1), 8, InitMode::gaussian_project, rng);
  const auto res = simulate(s, k, 1.0, rng);

  PathFunction zero;
  zero.value = [](double, Vec, Vec, Vec, Vec) { return 0.0; };
  CHECK(girsanov_loglik(res.trajectory, res.flow, zero, k) == 0.0);

  auto indicator = [](double g, double a, double b) {
    PathFunction F;
    F.value = [=](double t, Vec, Vec, Vec, Vec) { return t >= a && t < b ? g : 0.0; };
    F.tilted_rate = [=](double t, Vec, Vec) { return t >= a && t < b ? std::exp(g) : 1.0; };
    F.breakpoints = {a, b};
    return F;
  };
  auto f1 = indicator(0.3, 0.0, 0.5), f2 = indicator(-0.2, 0.5, 1.0);
  PathFunction sum;
  sum.value = [&](double t, Vec a, Vec b, Vec c, Vec d) { return f1.value(t, a, b, c, d) + f2.value(t, a, b, c, d); };
  sum.tilted_rate = [&](double t, Vec a, Vec b) { return f1.tilted_rate(t, a, b) * f2.tilted_rate(t, a, b); };
  sum.breakpoints = {0.5};
  const double l1 = girsanov_loglik(res.trajectory, res.flow, f1, k);
  const double l2 = girsanov_loglik(res.trajectory, res.flow, f2, k);
  const double l12 = girsanov_loglik(res.trajectory, res.flow, sum, k);
  CHECK(std::fabs(l12 - (l1 + l2)) <= 1e-10);

  // Quadrature route and time-quadrature route agree with the closed form.
  auto quad = f1;
  quad.tilted_rate = nullptr;
  CHECK(girsanov_loglik(res.trajectory, res.flow, quad, k) == doctest::Approx(l1).epsilon(1e-8));
  PathFunction smooth;
  smooth.value = [](double, Vec v, Vec vs, Vec, Vec) { return 0.1 * std::tanh(v[0] * vs[0]); };
  smooth.tilted_rate = [](double, Vec v, Vec vs) { return std::exp(0.1 * std::tanh(v[0] * vs[0])); };
  auto smooth_quad = smooth;
  smooth_quad.piecewise_constant = false;
  CHECK(girsanov_loglik(res.trajectory, res.flow, smooth_quad, k) ==
        doctest::Approx(girsanov_loglik(res.trajectory, res.flow, smooth, k)).epsilon(1e-12));
}

TEST_CASE("exponential martingale has mean one") {
  const auto k = make_kernel({"paper_example", 1, {}});
  PathFunction F;
  F.value = [](double t, Vec, Vec, Vec vp, Vec vsp) { return t < 0.5 ? 0.4 * std::tanh(vp[0] - vsp[0]) * std::tanh(vp[0] - vsp[0]) : 0.0; };
  F.breakpoints = {0.5};
  std::vector<double> values;
  for (int r = 0; r < 4000; ++r) {
    Rng rng = make_stream(404, r);
    const auto s = sample_initial(InitialDensity::gaussian(1), 6, InitMode::gaussian_project, rng);
    const auto res = simulate(s, k, 1.0, rng);
    values.push_back(std::exp(girsanov_loglik(res.trajectory, res.flow, F, k)));
  }
  const auto est = kactest::mean_se(values);
  CHECK(std::fabs(est.mean - 1.0) <= 3.0 * est.se);
}

TEST_CASE("time-indicator tilt is a mean-one martingale") {
  const auto k = maxwell(1);
  const double T = 1.0, g = 0.3;
  PathFunction F;
  F.value = [=](double t, Vec, Vec, Vec, Vec) { return t < T / 2 ? g : 0.0; };
  F.tilted_rate = [=](double t, Vec, Vec) { return t < T / 2 ? std::exp(g) : 1.0; };
  F.breakpoints = {T / 2};
  std::vector<double> values;
  for (int r = 0; r < 10000; ++r) {
    Rng rng = make_stream(505, r);
    const auto s = sample_initial(InitialDensity::gaussian(1), 8, InitMode::gaussian_project, rng);
    const auto res = simulate(s, k, T, rng);
    values.push_back(std::exp(girsanov_loglik(res.trajectory, res.flow, F, k)));
  }
  const auto est = kactest::mean_se(values);
  CHECK(std::fabs(est.mean - 1.0) <= 3.0 * est.se);
}
