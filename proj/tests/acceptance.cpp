// Acceptance checks. Prints one PASS/FAIL line per criterion; arguments select
// criteria by number (all when none are given). Exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "fixtures.hpp"
#include "kacflow/cli.hpp"
#include "kacflow/errors.hpp"
#include "kacflow/gradflow.hpp"
#include "kacflow/observables.hpp"
#include "kacflow/walk.hpp"

using namespace kacflow;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

CollisionKernel maxwell() { return make_kernel({"maxwell_sigma1", 1, {}}); }

const ResultRow& row(const StudyResult& r, const std::string& metric, const std::string& parameter = "") {
  for (const auto& x : r.rows)
    if (x.metric == metric && (parameter.empty() || x.parameter == parameter)) return x;
  throw Error("no row " + metric + " " + parameter);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome pathwise_balance() {
  const auto k = maxwell();
  Rng rng(1001);
  const auto s = sample_initial(InitialDensity::gaussian(1), 100, InitMode::gaussian_project, rng);
  const auto run = simulate(s, k, 1.0, rng);
  const std::vector<double> checkpoints{0.1, 0.25, 0.5, 0.75, 1.0};
  double worst = 0.0;
  Rng pick(1002);
  for (int i = 0; i < 10; ++i) {
    const double a = 0.5 + uniform01(pick), b = 0.5 + 1.5 * uniform01(pick), c = 3.0 * uniform01(pick);
    const double p = 6.0 * uniform01(pick), e = 0.1 + 0.4 * uniform01(pick);
    BalanceTestFunction phi{
        [=](double t, Vec v) { return a * std::sin(b * v[0] + c * t + p) * std::exp(-e * v[0] * v[0]); },
        [=](double t, Vec v) { return a * c * std::cos(b * v[0] + c * t + p) * std::exp(-e * v[0] * v[0]); }};
    worst = std::max(worst, check_balance(run.trajectory, run.flow, phi, checkpoints));
  }
  return {worst <= 1e-8, fmt("max residual %.3g over 10 functions, %zu events (tol 1e-8)", worst, run.flow.size())};
}

Outcome momentum_conservation() {
  Rng rng(2001);
  const std::size_t N = 1000;
  const auto s = sample_initial(InitialDensity::gaussian(1), N, InitMode::gaussian_project, rng);
  SimulateOptions opts;
  opts.max_events = 100000;
  opts.track_momentum = true;
  const auto run = simulate(s, maxwell(), 1e6, rng, opts);
  const double tol = 1e-9 * N;
  const bool pass = run.stats.events == 100000 && run.stats.max_momentum_drift <= tol;
  return {pass, fmt("max |sum v| %.3g over %zu events (tol %.3g)", run.stats.max_momentum_drift, run.stats.events, tol)};
}

Outcome girsanov_mean_one() {
  StudyConfig c;
  c.kind = "girsanov-check";
  c.seed = 3001;
  c.N = {8};
  c.replicas = 10000;
  const auto r = girsanov_study(c);
  const auto& check = row(r, "mean_minus_one");
  return {*check.pass, fmt("mean %.5f, |mean - 1| %.3g, 3 SE %.3g", r.results["mean"].get<double>(), check.value,
                           *check.tolerance)};
}

Outcome lln() {
  StudyConfig c;
  c.kind = "lln-study";
  c.seed = 4001;
  c.N = {64, 256, 1024};
  c.replicas = 32;
  c.grid = {1, 6.0, 64};
  c.initial = json::parse(
      R"({"kind":"mixture","components":[{"mean":-1.5,"variance":0.5},{"mean":1.5,"variance":0.5}]})");
  const auto r = lln_study(c);
  const auto& w = r.results["mean_w1"];
  const auto& dec = row(r, "w1_max_increase");
  const auto& fin = row(r, "w1_over_grid_error");
  return {*dec.pass && *fin.pass,
          fmt("W1 %.4g, %.4g, %.4g (decreasing: %s); final / grid error %.3g = %.4g / %.3g (tol 3)",
              w[0].get<double>(), w[1].get<double>(), w[2].get<double>(), *dec.pass ? "yes" : "no", fin.value,
              w[2].get<double>(), r.results["grid_error_w1"].get<double>())};
}

Outcome entropy_rate() {
  StudyConfig c;
  c.kind = "rate-eval";
  c.seed = 5001;
  c.N = {32, 128};
  c.replicas = 64;
  c.grid = {1, 6.0, 32};
  c.tilt = {{"name", "bump"}, {"amplitude", 1.0}, {"range", 1.0}, {"spread", 1.0}, {"modulation", 0.0}};
  const auto r = rate_study(c);
  const auto& mc = r.results["monte_carlo"];
  bool pass = *row(r, "discrepancy_max_increase").pass;
  std::string detail = fmt("cost_J %.5f;", r.results["cost_J"].get<double>());
  for (const auto& x : mc) {
    const bool ok = x["discrepancy"].get<double>() <= x["tolerance"].get<double>();
    pass = pass && ok;
    detail += fmt(" N=%d rate %.5f +- %.5f, discrepancy %.3g (tol %.3g);", x["N"].get<int>(), x["mean"].get<double>(),
                  x["standard_error"].get<double>(), x["discrepancy"].get<double>(), x["tolerance"].get<double>());
  }
  return {pass, detail + (pass ? " decreasing" : " check failed")};
}

Outcome duality() {
  const auto k = make_kernel({"paper_example", 1, {}});
  const VelocityGrid g{1, 6.0, 64};
  Rng rng(6001);
  double worst = 0.0;
  for (int i = 0; i < 10; ++i) {
    const auto pi = kactest::random_density_path(g, 4, 1.0, rng);
    const auto pp = kactest::random_path_pair(pi, k, rng);
    const double J = cost_J(pp, k);
    const auto dual = dual_cost(pp, k);
    worst = std::max({worst, std::fabs(J - dual.ascent), std::fabs(J - dual.closed_form)});
  }
  return {worst <= 1e-6, fmt("max |J - dual| %.3g over 10 pairs (tol 1e-6)", worst)};
}

Outcome doubled_flow() {
  const auto k = make_kernel({"paper_example", 1, {}});
  Rng rng(7001);
  const auto pi = kactest::random_density_path({1, 6.0, 32}, 5, 1.0, rng);
  const auto ref = reference_pair(pi, k);
  const double oracle = flow_mass(ref) * (2.0 * std::numbers::ln2 - 1.0);
  const double J = cost_J(kactest::scaled(ref, 2.0), k);
  return {std::fabs(J - oracle) <= 1e-8, fmt("J %.12f, Q(1)(2 ln 2 - 1) %.12f (tol 1e-8)", J, oracle)};
}

Outcome gaussian_entropy() {
  const VelocityGrid g{1, 12.0, 256};
  auto f = sample_density(g, [](Vec x) { return gaussian_density(1, x, 4.0); });
  f.normalize();
  const double H = relative_entropy(f, grid_maxwellian(g));
  const double oracle = 0.5 * (3.0 - std::log(4.0));
  return {std::fabs(H - oracle) <= 1e-3, fmt("H %.6f, exact %.6f (tol 1e-3)", H, oracle)};
}

Outcome dirichlet_forms() {
  const VelocityGrid g{1, 6.0, 64};
  const RotatedLattice lattice(g, maxwell());
  Rng rng(9001);
  double gap = 0.0;
  for (int i = 0; i < 10; ++i) gap = std::max(gap, dirichlet_form(kactest::random_positive(g, rng), lattice).gap);
  const double DM = std::fabs(dirichlet_form(grid_maxwellian(g), lattice).value);
  return {gap <= 1e-8 && DM <= 1e-10, fmt("max gap %.3g over 10 densities (tol 1e-8); D(M) %.3g (tol 1e-10)", gap, DM)};
}

Outcome gradient_flow() {
  const auto k = maxwell();
  const auto tilt = bump_tilt(1, {1.0, 1.0, 1.0, 0.0});
  SolverOptions o;
  o.interpolation = Interpolation::cubic;
  std::vector<double> rel;
  std::string detail;
  for (int n : {32, 64, 128}) {
    const auto path = evolve_tilted(kactest::bimodal({1, 6.0, n}), tilt, 1.0, 0.025, TimeMethod::rk4, o);
    const auto r = gradient_flow_residual(tilted_pair(path, tilt, Interpolation::cubic), k);
    rel.push_back(r.relative);
    detail += fmt("n=%d J %.5f relative %.3g; ", n, r.J, r.relative);
  }
  const bool pass = rel[1] <= 1e-3 && rel[1] < rel[0] && rel[2] < rel[1];
  return {pass, detail + "(tol 1e-3 at n=64, decreasing)"};
}

Outcome edi() {
  const VelocityGrid g{1, 6.0, 64};
  const auto r = edi_check(kactest::bimodal(g), maxwell(), 1.0, 0.025);
  const bool pass = std::fabs(r.slack) <= 1e-3 && r.max_entropy_increase <= 0.0;
  return {pass, fmt("H(pi_T) + int D + R = %.6f, H(m) = %.6f, slack %.3g (tol 1e-3); max step increase of H %.3g",
                    r.lhs, r.rhs, r.slack, r.max_entropy_increase)};
}

Outcome fixture() {
  StudyConfig c;
  c.kind = "fixture";
  c.kernel = {"paper_example", 1, {}};
  const auto r = fixture_study(c);
  const auto& ratio = row(r, "difference_ratio");
  const auto& growth = row(r, "moment_growth");
  std::string detail;
  for (const auto& b : r.results["boxes"])
    detail += fmt("R=%g I %.6f moment %.4g; ", b["radius"].get<double>(), b["cost_I"].get<double>(),
                  b["second_moment_flux"].get<double>());
  return {*ratio.pass && *growth.pass,
          detail + fmt("difference ratio %.3g (tol < 0.5), moment growth %.3g (tol >= 1.5)", ratio.value, growth.value)};
}

Outcome stationarity() {
  StudyConfig c;
  c.kind = "solve";
  c.grid = {1, 6.0, 32};
  c.grid_sizes = {32, 64, 128};
  c.T = 0.1;
  const auto r = solve_study(c);
  const auto& res = r.results["stationarity_l1"];
  const auto& order = row(r, "stationarity_order");
  bool decreasing = res[1].get<double>() < res[0].get<double>() && res[2].get<double>() < res[1].get<double>();
  return {decreasing && *order.pass, fmt("L1 residual %.3g, %.3g, %.3g; order %.3f (tol 1)", res[0].get<double>(),
                                         res[1].get<double>(), res[2].get<double>(), order.value)};
}

Outcome reproducibility() {
  const auto root = fs::temp_directory_path() / ("kacflow_acceptance_" + std::to_string(::getpid()));
  const json sim = {{"kind", "simulate"}, {"seed", 14001}, {"N", 200}, {"T", 1.0}};
  json lln = {{"kind", "lln-study"}, {"seed", 14002}, {"N", {16, 64}}, {"replicas", 8}, {"grid", {{"n", 32}}}};
  run(parse_config(sim), root / "a");
  run(parse_config(sim), root / "b");
  lln["threads"] = 1;
  run(parse_config(lln), root / "c");
  lln["threads"] = 4;
  run(parse_config(lln), root / "d");
  const auto events = slurp(root / "a" / "events.jsonl");
  const bool same_events = !events.empty() && events == slurp(root / "b" / "events.jsonl");
  const bool same_summary = slurp(root / "a" / "summary.json") == slurp(root / "b" / "summary.json");
  const bool same_replicas = slurp(root / "c" / "summary.json") == slurp(root / "d" / "summary.json") &&
                             slurp(root / "c" / "lln.csv") == slurp(root / "d" / "lln.csv");
  fs::remove_all(root);
  return {same_events && same_summary && same_replicas,
          fmt("event log %s (%zu bytes), summary %s, replica study across thread counts %s",
              same_events ? "identical" : "differs", events.size(), same_summary ? "identical" : "differs",
              same_replicas ? "identical" : "differs")};
}

struct Criterion {
  int number;
  const char* title;
  std::function<Outcome()> check;
};

const std::vector<Criterion> kCriteria{
    {1, "pathwise balance", pathwise_balance},
    {2, "momentum conservation", momentum_conservation},
    {3, "Girsanov martingale mean one", girsanov_mean_one},
    {4, "law of large numbers", lln},
    {5, "entropy-rate consistency", entropy_rate},
    {6, "rate-function duality", duality},
    {7, "closed-form J scaling", doubled_flow},
    {8, "Gaussian relative entropy", gaussian_entropy},
    {9, "Dirichlet two-form identity", dirichlet_forms},
    {10, "gradient-flow identity", gradient_flow},
    {11, "energy-dissipation inequality", edi},
    {12, "unbounded-flux fixture", fixture},
    {13, "solver stationarity", stationarity},
    {14, "reproducibility", reproducibility},
};

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  bool all_pass = true;
  for (const auto& c : kCriteria) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.number) == selected.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %2d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.number, c.title, o.detail.c_str(), secs);
    std::fflush(stdout);
    all_pass = all_pass && o.pass;
  }
  return all_pass ? 0 : 1;
}
