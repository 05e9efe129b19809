#include "kacflow/studies.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "kacflow/errors.hpp"
#include "kacflow/gradflow.hpp"
#include "kacflow/observables.hpp"
#include "kacflow/walk.hpp"

namespace kacflow {

void StudyResult::add(std::string parameter, std::string metric, double value) {
  rows.push_back({std::move(parameter), std::move(metric), value, std::nullopt, std::nullopt});
}

void StudyResult::check(std::string parameter, std::string metric, double value, double tolerance, bool pass) {
  rows.push_back({std::move(parameter), std::move(metric), value, tolerance, pass});
}

bool StudyResult::all_pass() const {
  return std::all_of(rows.begin(), rows.end(), [](const ResultRow& r) { return !r.pass || *r.pass; });
}

void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& f) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < count;) {
      try {
        f(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next = count;
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

double StudyConfig::tolerance(const std::string& metric, double fallback) const {
  return tolerances.value(metric, fallback);
}

namespace {

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

// Summed in index order.
MeanSe mean_se(const std::vector<double>& xs) {
  MeanSe r;
  if (xs.empty()) return r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return r;
  double v = 0.0;
  for (double x : xs) v += (x - r.mean) * (x - r.mean);
  r.se = std::sqrt(v / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
  return r;
}

std::string param(const std::string& name, double value) {
  std::ostringstream s;
  s << name << "=" << value;
  return s.str();
}

InitMode init_mode(const InitialDensity& m) {
  return m.is_centered_gaussian() ? InitMode::gaussian_project : InitMode::mcmc;
}

std::size_t first_N(const StudyConfig& c) {
  if (c.N.empty()) throw ConfigError("/N: required for kind \"" + c.kind + "\"");
  return c.N.front();
}

SolverOptions solver_options(const StudyConfig& c) {
  SolverOptions o;
  o.interpolation = c.interpolation;
  return o;
}

TiltedKernel study_tilt(const StudyConfig& c) {
  if (c.tilt.is_null()) return bump_tilt(c.kernel.dim, {});
  return make_tilted_kernel(c.tilt, c.kernel.dim);
}

std::string grid_csv(const DensityGrid& a, const DensityGrid& b) {
  std::ostringstream s;
  s.precision(17);
  for (int i = 0; i < a.grid.dim; ++i) s << "v" << i + 1 << ",";
  s << "f0,fT\n";
  double x[kMaxDim];
  for (std::size_t c = 0; c < a.f.size(); ++c) {
    a.grid.center_of(c, x);
    for (int i = 0; i < a.grid.dim; ++i) s << x[i] << ",";
    s << a.f[c] << "," << b.f[c] << "\n";
  }
  return s.str();
}

// F = log(B~ / B), whose tilted rate is the scattering rate of B~.
PathFunction likelihood_ratio(const TiltedKernel& tilt, const CollisionKernel& k) {
  PathFunction F;
  const int d = k.dim;
  F.value = [tilt, k, d](double t, Vec v, Vec vs, Vec vp, Vec vsp) {
    double wp[kMaxDim];
    relative_velocity(vp, vsp, MutVec(wp, d));
    return std::log(tilt.density(t, v, vs, Vec(wp, d)) / k.density(v, vs, Vec(wp, d)));
  };
  if (tilt.closed_form_lambda) F.tilted_rate = tilt.closed_form_lambda;
  F.piecewise_constant = tilt.time_independent;
  return F;
}

}  // namespace

DensityGrid initial_grid_density(const nlohmann::json& initial, const VelocityGrid& g) {
  const auto m = parse_initial_density(initial, g.dim);
  auto f = sample_density(g, [&](Vec x) { return m.density(x); });
  f.normalize();
  return f;
}

std::string event_log_jsonl(const EventLog& events) {
  std::string out;
  for (const auto& e : events) {
    auto vec = [](Vec x) { return std::vector<double>(x.begin(), x.end()); };
    const nlohmann::json line = {{"t", e.t},
                                 {"i", e.i},
                                 {"j", e.j},
                                 {"in", {vec(e.v()), vec(e.vs())}},
                                 {"out", {vec(e.vp()), vec(e.vsp())}}};
    out += line.dump();
    out += '\n';
  }
  return out;
}

StudyResult simulate_study(const StudyConfig& c) {
  const std::size_t N = first_N(c);
  const auto k = make_kernel(c.kernel);
  const auto m = parse_initial_density(c.initial, c.kernel.dim);
  Rng rng = make_stream(c.seed, 0);
  const auto s = sample_initial(m, N, init_mode(m), rng);
  SimulateOptions opts;
  opts.track_momentum = true;
  if (c.extra.contains("max_events")) opts.max_events = c.extra["max_events"].get<std::size_t>();
  const auto res = simulate(s, k, c.T, rng, opts);

  StudyResult r;
  const auto p = param("N", static_cast<double>(N));
  const double tol = c.tolerance("momentum_drift", 1e-9 * static_cast<double>(N));
  const bool replay = res.trajectory.replay_check();
  r.add(p, "events", static_cast<double>(res.stats.events));
  r.add(p, "clock_rings", static_cast<double>(res.stats.clock_rings));
  r.check(p, "momentum_drift", res.stats.max_momentum_drift, tol, res.stats.max_momentum_drift <= tol);
  r.check(p, "replay_mismatch", replay ? 0.0 : 1.0, 0.0, replay);
  const auto final_state = res.trajectory.final_state();
  r.results = {{"events", res.stats.events},
               {"clock_rings", res.stats.clock_rings},
               {"max_momentum_drift", res.stats.max_momentum_drift},
               {"final_time", final_state.time},
               {"final_momentum", final_state.momentum()},
               {"replay_check", replay}};
  r.files.push_back({"events.jsonl", event_log_jsonl(*res.flow.events)});
  return r;
}

StudyResult solve_study(const StudyConfig& c) {
  const auto k = make_kernel(c.kernel);
  StudyResult r;
  const auto f0 = initial_grid_density(c.initial, c.grid);
  const auto path = evolve(f0, k, c.T, c.dt, c.method, solver_options(c));
  double mass = 0.0, momentum = 0.0;
  for (const auto& s : path.steps) {
    mass = std::max(mass, std::fabs(s.mass_drift));
    momentum = std::max(momentum, std::fabs(s.momentum_drift));
  }
  const auto p = param("n", c.grid.n);
  r.check(p, "mass_drift", mass, c.tolerance("mass_drift", 1e-6), mass <= c.tolerance("mass_drift", 1e-6));
  r.check(p, "momentum_drift", momentum, c.tolerance("momentum_drift", 1e-6),
          momentum <= c.tolerance("momentum_drift", 1e-6));
  r.results["mass_drift"] = mass;
  r.results["momentum_drift"] = momentum;
  if (k.detailed_balance) {
    const auto M = grid_maxwellian(c.grid);
    std::vector<double> H;
    double increase = 0.0;
    for (const auto& f : path.nodes) {
      H.push_back(relative_entropy(f, M));
      if (H.size() > 1) increase = std::max(increase, H.back() - H[H.size() - 2]);
    }
    r.check(p, "entropy_increase", increase, c.tolerance("entropy_increase", 1e-6),
            increase <= c.tolerance("entropy_increase", 1e-6));
    r.results["H_path"] = H;
  }

  // Stationarity of the grid operator at the Maxwellian.
  std::vector<int> sizes = c.grid_sizes.empty() ? std::vector<int>{c.grid.n} : c.grid_sizes;
  std::vector<double> residuals;
  for (int n : sizes) {
    VelocityGrid g = c.grid;
    g.n = n;
    const auto M = grid_maxwellian(g);
    const auto C = collision_operator(M, k, solver_options(c));
    double l1 = 0.0;
    for (double v : C.values) l1 += std::fabs(v);
    residuals.push_back(l1 * g.cell_volume());
    r.add(param("n", n), "stationarity_l1", residuals.back());
  }
  r.results["stationarity_l1"] = residuals;
  if (sizes.size() > 1) {
    double order = kInfinity;
    for (std::size_t i = 1; i < sizes.size(); ++i)
      order = std::min(order, std::log(residuals[i - 1] / residuals[i]) /
                                  std::log(static_cast<double>(sizes[i]) / sizes[i - 1]));
    const double tol = c.tolerance("stationarity_order", 1.0);
    r.check("", "stationarity_order", order, tol, order >= tol);
    r.results["stationarity_order"] = order;
  }
  r.files.push_back({"solution.csv", grid_csv(path.nodes.front(), path.final_density())});
  return r;
}

StudyResult lln_study(const StudyConfig& c) {
  if (c.N.empty()) throw ConfigError("/N: required for kind \"lln-study\"");
  const auto k = make_kernel(c.kernel);
  const auto m = parse_initial_density(c.initial, c.kernel.dim);
  const auto opts = solver_options(c);
  const auto fT = evolve(initial_grid_density(c.initial, c.grid), k, c.T, c.dt, c.method, opts).final_density();
  VelocityGrid fine = c.grid;
  fine.n *= 2;
  const auto fT2 = evolve(initial_grid_density(c.initial, fine), k, c.T, c.dt, c.method, opts).final_density();
  const double grid_error = wasserstein1(Measure::cells(fT), Measure::cells(fT2)).value;
  const auto target = Measure::cells(fT);

  StudyResult r;
  std::ostringstream csv;
  csv.precision(17);
  csv << "N,mean_w1,standard_error\n";
  std::vector<double> means;
  for (std::size_t N : c.N) {
    std::vector<double> w1(static_cast<std::size_t>(c.replicas));
    const auto master = stream_seed(c.seed, N);
    parallel_for(w1.size(), c.threads, [&](std::size_t i) {
      Rng rng = make_stream(master, i);
      const auto s = sample_initial(m, N, init_mode(m), rng);
      const auto res = simulate(s, k, c.T, rng);
      w1[i] = wasserstein1(Measure::from_empirical(empirical_measure(res.trajectory.final_state())), target).value;
    });
    const auto est = mean_se(w1);
    means.push_back(est.mean);
    r.add(param("N", static_cast<double>(N)), "mean_w1", est.mean);
    r.add(param("N", static_cast<double>(N)), "w1_standard_error", est.se);
    csv << N << "," << est.mean << "," << est.se << "\n";
  }
  double worst = -kInfinity;
  for (std::size_t i = 1; i < means.size(); ++i) worst = std::max(worst, means[i] - means[i - 1]);
  if (means.size() > 1) r.check("", "w1_max_increase", worst, 0.0, worst < 0.0);
  const double ratio = means.back() / grid_error;
  const double tol = c.tolerance("w1_over_grid_error", 3.0);
  r.add("", "grid_error_w1", grid_error);
  r.check(param("N", static_cast<double>(c.N.back())), "w1_over_grid_error", ratio, tol, ratio <= tol);
  r.results = {{"N", c.N}, {"mean_w1", means}, {"grid_error_w1", grid_error}};
  r.files.push_back({"lln.csv", csv.str()});
  return r;
}

StudyResult girsanov_study(const StudyConfig& c) {
  const std::size_t N = first_N(c);
  const auto k = make_kernel(c.kernel);
  const auto m = parse_initial_density(c.initial, c.kernel.dim);
  const double g = c.extra.value("g", 0.3), until = c.extra.value("until", 0.5 * c.T);
  PathFunction F;
  F.value = [=](double t, Vec, Vec, Vec, Vec) { return t < until ? g : 0.0; };
  if (k.closed_form_lambda) {
    auto lambda = k.closed_form_lambda;
    F.tilted_rate = [=](double t, Vec v, Vec vs) { return (t < until ? std::exp(g) : 1.0) * lambda(v, vs); };
  }
  F.breakpoints = {until};

  std::vector<double> values(static_cast<std::size_t>(c.replicas)), logs(values.size());
  parallel_for(values.size(), c.threads, [&](std::size_t i) {
    Rng rng = make_stream(c.seed, i);
    const auto s = sample_initial(m, N, init_mode(m), rng);
    const auto res = simulate(s, k, c.T, rng);
    logs[i] = girsanov_loglik(res.trajectory, res.flow, F, k);
    values[i] = std::exp(logs[i]);
  });
  const auto est = mean_se(values);
  const double sigmas = c.tolerance("standard_errors", 3.0);
  StudyResult r;
  const auto p = param("N", static_cast<double>(N));
  r.add(p, "mean_exp_loglik", est.mean);
  r.add(p, "standard_error", est.se);
  r.check(p, "mean_minus_one", std::fabs(est.mean - 1.0), sigmas * est.se, std::fabs(est.mean - 1.0) <= sigmas * est.se);
  r.results = {{"mean", est.mean}, {"standard_error", est.se}, {"replicas", c.replicas}};
  std::ostringstream csv;
  csv.precision(17);
  csv << "replica,loglik\n";
  for (std::size_t i = 0; i < logs.size(); ++i) csv << i << "," << logs[i] << "\n";
  r.files.push_back({"girsanov.csv", csv.str()});
  return r;
}

StudyResult rate_study(const StudyConfig& c) {
  const auto k = make_kernel(c.kernel);
  const auto tilt = study_tilt(c);
  const auto opts = solver_options(c);
  auto tilted_cost = [&](const VelocityGrid& g) {
    const auto path = evolve_tilted(initial_grid_density(c.initial, g), tilt, c.T, c.dt, c.method, opts);
    return std::make_pair(path, tilted_pair(path, tilt, c.interpolation));
  };
  const auto [path, pp] = tilted_cost(c.grid);
  StudyResult r;
  const auto p = param("n", c.grid.n);
  const double J = cost_J(pp, k);
  const auto dual = dual_cost(pp, k);
  const auto J1 = projected_cost_J1(path, k, {}, c.interpolation);
  const auto dec = cross_check_decomposition(pp, k, path.nodes.front());
  r.add(p, "cost_J", J);
  r.check(p, "dual_gap", dual.gap, c.tolerance("dual_gap", 1e-6), dual.gap <= c.tolerance("dual_gap", 1e-6));
  r.check(p, "J1_minus_J", J1.value - J, c.tolerance("J1_minus_J", 1e-8), J1.value - J <= c.tolerance("J1_minus_J", 1e-8));
  r.check(p, "decomposition_residual", dec.residual, c.tolerance("decomposition_residual", 1e-8),
          dec.residual <= c.tolerance("decomposition_residual", 1e-8));
  r.add(p, "balance_residual", balance_residual(pp));
  r.results = {{"cost_J", J},
               {"dual_closed_form", dual.closed_form},
               {"dual_ascent", dual.ascent},
               {"dual_gap", dual.gap},
               {"J1", J1.value},
               {"cost_I", dec.direct},
               {"decomposition_residual", dec.residual}};

  if (!c.N.empty()) {
    // Entropy rate of the tilted particle law against the untilted one.
    VelocityGrid fine = c.grid;
    fine.n *= 2;
    const double grid_tol = std::fabs(cost_J(tilted_cost(fine).second, k) - J);
    const auto m = parse_initial_density(c.initial, c.kernel.dim);
    const auto F = likelihood_ratio(tilt, k);
    std::vector<double> gaps;
    nlohmann::json mc = nlohmann::json::array();
    for (std::size_t N : c.N) {
      std::vector<double> rate(static_cast<std::size_t>(c.replicas));
      const auto master = stream_seed(c.seed, N);
      parallel_for(rate.size(), c.threads, [&](std::size_t i) {
        Rng rng = make_stream(master, i);
        const auto s = sample_initial(m, N, init_mode(m), rng);
        const auto res = simulate_tilted(s, tilt, c.T, rng);
        rate[i] = girsanov_loglik(res.trajectory, res.flow, F, k) / static_cast<double>(N);
      });
      const auto est = mean_se(rate);
      const double gap = std::fabs(est.mean - J), tol = 3.0 * est.se + grid_tol;
      gaps.push_back(gap);
      const auto pN = param("N", static_cast<double>(N));
      r.add(pN, "entropy_rate", est.mean);
      r.add(pN, "entropy_rate_standard_error", est.se);
      r.check(pN, "entropy_rate_discrepancy", gap, tol, gap <= tol);
      mc.push_back({{"N", N}, {"mean", est.mean}, {"standard_error", est.se}, {"discrepancy", gap}, {"tolerance", tol}});
    }
    double worst = -kInfinity;
    for (std::size_t i = 1; i < gaps.size(); ++i) worst = std::max(worst, gaps[i] - gaps[i - 1]);
    if (gaps.size() > 1) r.check("", "discrepancy_max_increase", worst, 0.0, worst < 0.0);
    r.results["grid_tolerance"] = grid_tol;
    r.results["monte_carlo"] = mc;
  }
  return r;
}

StudyResult gradflow_study(const StudyConfig& c) {
  const auto k = make_kernel(c.kernel);
  const auto tilt = study_tilt(c);
  const auto opts = solver_options(c);
  StudyResult r;

  std::vector<int> sizes = c.grid_sizes.empty() ? std::vector<int>{c.grid.n} : c.grid_sizes;
  std::vector<double> rel;
  for (int n : sizes) {
    VelocityGrid g = c.grid;
    g.n = n;
    const auto path = evolve_tilted(initial_grid_density(c.initial, g), tilt, c.T, c.dt, c.method, opts);
    const auto gf = gradient_flow_residual(tilted_pair(path, tilt, c.interpolation), k);
    rel.push_back(gf.relative);
    const auto p = param("n", n);
    r.add(p, "J", gf.J);
    r.add(p, "entropy_change", gf.H_path.back() - gf.H_path.front());
    r.add(p, "dirichlet_integral", gf.D_integral);
    r.add(p, "kinematic_term", gf.R);
    r.add(p, "residual", gf.residual);
    if (n == c.grid.n) {
      const double tol = c.tolerance("relative_residual", 1e-3);
      r.check(p, "relative_residual", gf.relative, tol, gf.relative <= tol);
      r.results["H_path"] = gf.H_path;
      r.results["D_path"] = gf.D_path;
      r.results["R"] = gf.R;
      r.results["J"] = gf.J;
      r.results["residual"] = gf.residual;
      r.results["relative_residual"] = gf.relative;
    } else {
      r.add(p, "relative_residual", gf.relative);
    }
  }
  if (sizes.size() > 1) {
    double worst = -kInfinity;
    for (std::size_t i = 1; i < rel.size(); ++i) worst = std::max(worst, rel[i] - rel[i - 1]);
    r.check("", "relative_residual_max_increase", worst, 0.0, worst < 0.0);
  }

  const auto p = param("n", c.grid.n);
  const auto f0 = initial_grid_density(c.initial, c.grid);
  const RotatedLattice lattice(c.grid, k, c.interpolation);
  const auto DM = dirichlet_form(grid_maxwellian(c.grid), lattice);
  const auto D0 = dirichlet_form(f0, lattice);
  r.check(p, "dirichlet_maxwellian", std::fabs(DM.value), 1e-10, std::fabs(DM.value) <= 1e-10);
  r.check(p, "dirichlet_form_gap", D0.gap, c.tolerance("dirichlet_form_gap", 1e-8),
          D0.gap <= c.tolerance("dirichlet_form_gap", 1e-8));
  r.add(p, "dropped_maxwellian_mass", D0.dropped_mass);

  const auto edi = edi_check(f0, k, c.T, c.dt, c.method, c.interpolation);
  const double tol = c.tolerance("edi_slack", 1e-3);
  r.check(p, "edi_slack", std::fabs(edi.slack), tol, std::fabs(edi.slack) <= tol);
  r.check(p, "entropy_increase", edi.max_entropy_increase, 1e-6, edi.max_entropy_increase <= 1e-6);
  r.results["edi"] = {{"lhs", edi.lhs}, {"rhs", edi.rhs}, {"slack", edi.slack}, {"H_path", edi.H_path}};
  return r;
}

StudyResult fixture_study(const StudyConfig& c) {
  FixtureOptions o;
  o.dim = c.kernel.dim;
  o.kernel = c.kernel;
  o.horizon = c.extra.value("horizon", o.horizon);
  o.spacing = c.extra.value("spacing", o.spacing);
  o.early_intervals = c.extra.value("early_intervals", o.early_intervals);
  o.late_intervals = c.extra.value("late_intervals", o.late_intervals);
  if (c.extra.contains("radii")) o.radii = c.extra["radii"].get<std::vector<double>>();
  const auto f = unbounded_flux_fixture(o);

  StudyResult r;
  nlohmann::json boxes = nlohmann::json::array();
  for (const auto& b : f.boxes) {
    const auto p = param("R", b.radius);
    r.add(p, "cost_I", b.cost_I);
    r.add(p, "second_moment_flux", b.second_moment);
    r.add(p, "balance_residual", b.balance_residual);
    boxes.push_back({{"radius", b.radius},
                     {"n", b.n},
                     {"cost_I", b.cost_I},
                     {"second_moment_flux", b.second_moment},
                     {"balance_residual", b.balance_residual}});
  }
  const double ratio_tol = c.tolerance("difference_ratio", 0.5), growth_tol = c.tolerance("moment_growth", 1.5);
  r.check("", "difference_ratio", f.difference_ratio, ratio_tol, f.difference_ratio < ratio_tol);
  r.check("", "moment_growth", f.min_moment_growth, growth_tol, f.min_moment_growth >= growth_tol);
  r.results = {{"A", f.A},
               {"boxes", boxes},
               {"difference_ratio", f.difference_ratio},
               {"min_moment_growth", f.min_moment_growth}};
  return r;
}

StudyResult run_study(const StudyConfig& c) {
  if (c.kind == "simulate") return simulate_study(c);
  if (c.kind == "solve") return solve_study(c);
  if (c.kind == "lln-study") return lln_study(c);
  if (c.kind == "girsanov-check") return girsanov_study(c);
  if (c.kind == "rate-eval") return rate_study(c);
  if (c.kind == "gradflow-check") return gradflow_study(c);
  if (c.kind == "fixture") return fixture_study(c);
  throw ConfigError("/kind: unknown experiment kind \"" + c.kind + "\"");
}

}  // namespace kacflow
