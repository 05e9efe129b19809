#include "kacflow/kinetic_solver.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <Eigen/Dense>

#include "kacflow/errors.hpp"

namespace kacflow {

namespace {

constexpr double kInvSqrt2 = 1.0 / std::numbers::sqrt2;

void unflatten(std::size_t c, int base, int d, int* idx) {
  for (int a = 0; a < d; ++a) {
    idx[a] = static_cast<int>(c % static_cast<std::size_t>(base));
    c /= static_cast<std::size_t>(base);
  }
}

}  // namespace

TimeMethod parse_time_method(const std::string& s) {
  if (s == "euler") return TimeMethod::euler;
  if (s == "rk4") return TimeMethod::rk4;
  throw ConfigError("unknown time method \"" + s + "\" (expected euler or rk4)");
}

std::string to_string(TimeMethod m) { return m == TimeMethod::euler ? "euler" : "rk4"; }

CollisionOperator::CollisionOperator(const VelocityGrid& g, const CollisionKernel& k, const SolverOptions& opts)
    : grid_(g), opts_(opts) {
  if (k.dim != g.dim) throw PreconditionError("kernel and grid dimensions differ");
  auto density = k.density;
  density_ = [density](double, Vec v, Vec vs, Vec wp) { return density(v, vs, wp); };
  time_independent_ = true;
  setup();
}

CollisionOperator::CollisionOperator(const VelocityGrid& g, const TiltedKernel& k, const SolverOptions& opts)
    : grid_(g), density_(k.density), time_independent_(k.time_independent), opts_(opts) {
  if (k.dim != g.dim) throw PreconditionError("kernel and grid dimensions differ");
  setup();
}

void CollisionOperator::setup() {
  lattice_ = CollisionGrid(grid_, opts_.interpolation);
  const std::size_t cells = lattice_.cells(), wpoints = lattice_.wpoints();
  if (time_independent_ && lattice_.size() <= opts_.table_limit) {
    gain_table_.resize(lattice_.size());
    for (std::size_t I = 0; I < cells; ++I)
      for (std::size_t L = 0; L < cells; ++L) gain_row(0.0, I, L, &gain_table_[(I * cells + L) * wpoints]);
    loss_rates(0.0, lambda_table_, lambda_out_table_);
  }
}

void CollisionOperator::gain_row(double t, std::size_t I, std::size_t L, double* out) const {
  const int d = grid_.dim;
  double x[kMaxDim], y[kMaxDim], vp[kMaxDim], vsp[kMaxDim], w[kMaxDim];
  grid_.center_of(I, x);
  grid_.center_of(L, y);
  for (int a = 0; a < d; ++a) w[a] = (x[a] - y[a]) * kInvSqrt2;
  for (std::size_t W = 0; W < lattice_.wpoints(); ++W) {
    lattice_.outgoing(I, L, W, vp, vsp);
    out[W] = density_(t, Vec(vp, d), Vec(vsp, d), Vec(w, d));
  }
}

void CollisionOperator::loss_rates(double t, std::vector<double>& lambda, std::vector<double>& lambda_out) const {
  const int d = grid_.dim;
  const std::size_t cells = lattice_.cells();
  const double hd = grid_.cell_volume();
  lambda.assign(cells * cells, 0.0);
  lambda_out.assign(cells * cells, 0.0);
  double v[kMaxDim], vs[kMaxDim];
  for (std::size_t I = 0; I < cells; ++I) {
    grid_.center_of(I, v);
    for (std::size_t L = 0; L < cells; ++L) {
      grid_.center_of(L, vs);
      double total = 0.0, out = 0.0;
      for (std::size_t W = 0; W < lattice_.wpoints(); ++W) {
        const double b = density_(t, Vec(v, d), Vec(vs, d), lattice_.wp(W));
        total += b;
        if (lattice_.outside(I, L, W)) out += b;
      }
      lambda[I * cells + L] = total * hd;
      lambda_out[I * cells + L] = out * hd;
    }
  }
}

CollisionField CollisionOperator::apply(const DensityGrid& f, double t) const {
  if (!(f.grid == grid_)) throw PreconditionError("density grid differs from the operator grid");
  const int d = grid_.dim, n = grid_.n;
  const double hd = grid_.cell_volume();
  const int span = 2 * n - 1;

  const std::size_t cells = lattice_.cells(), wpoints = lattice_.wpoints();

  // f(v') f(v'*) depends on the per-axis index sums and on w' only.
  std::vector<double> prod(lattice_.sums() * wpoints, 0.0);
  int s[kMaxDim], m[kMaxDim];
  for (std::size_t S = 0; S < lattice_.sums(); ++S) {
    unflatten(S, span, d, s);
    for (std::size_t W = 0; W < wpoints; ++W) {
      lattice_.wp_index(W, m);
      const double a = lattice_.interpolate(f.f, s, m, false);
      if (a == 0.0) continue;
      prod[S * wpoints + W] = a * lattice_.interpolate(f.f, s, m, true);
    }
  }

  std::vector<double> lambda_local, out_local;
  const std::vector<double>* lambda = &lambda_table_;
  const std::vector<double>* lambda_out = &lambda_out_table_;
  if (!tabulated()) {
    loss_rates(t, lambda_local, out_local);
    lambda = &lambda_local;
    lambda_out = &out_local;
  }

  CollisionField res;
  res.values.assign(cells, 0.0);
  std::vector<double> row(wpoints);
  double truncation = 0.0;
  for (std::size_t I = 0; I < cells; ++I) {
    double loss = 0.0, out = 0.0, gain = 0.0;
    for (std::size_t L = 0; L < cells; ++L) {
      const double fl = f.f[L];
      loss += (*lambda)[I * cells + L] * fl;
      out += (*lambda_out)[I * cells + L] * fl;
      const std::size_t S = lattice_.sum_index(I, L);
      const double* b;
      if (tabulated()) {
        b = &gain_table_[(I * cells + L) * wpoints];
      } else {
        gain_row(t, I, L, row.data());
        b = row.data();
      }
      const double* p = &prod[S * wpoints];
      double acc = 0.0;
      for (std::size_t W = 0; W < wpoints; ++W) acc += b[W] * p[W];
      gain += acc;
    }
    loss *= hd;
    res.values[I] = gain * hd * hd - f.f[I] * loss;
    res.max_loss_rate = std::max(res.max_loss_rate, loss);
    truncation += f.f[I] * out * hd;
  }
  res.truncation_rate = truncation * hd;
  return res;
}

WeakFormCheck CollisionOperator::weak_form(const DensityGrid& f, const std::function<double(Vec)>& phi,
                                           double t) const {
  const int d = grid_.dim;
  const double hd = grid_.cell_volume();
  WeakFormCheck r;
  const auto field = apply(f, t);
  double x[kMaxDim], y[kMaxDim], vp[kMaxDim];
  const std::size_t cells = lattice_.cells();
  for (std::size_t I = 0; I < cells; ++I) {
    grid_.center_of(I, x);
    r.strong += phi(Vec(x, d)) * field.values[I];
  }
  r.strong *= hd;
  for (std::size_t I = 0; I < cells; ++I) {
    if (f.f[I] == 0.0) continue;
    grid_.center_of(I, x);
    const double phi0 = phi(Vec(x, d));
    for (std::size_t L = 0; L < cells; ++L) {
      if (f.f[L] == 0.0) continue;
      grid_.center_of(L, y);
      double acc = 0.0;
      for (std::size_t W = 0; W < lattice_.wpoints(); ++W) {
        const Vec wp = lattice_.wp(W);
        for (int a = 0; a < d; ++a) vp[a] = 0.5 * (x[a] + y[a]) + wp[a] * kInvSqrt2;
        acc += density_(t, Vec(x, d), Vec(y, d), wp) * (phi(Vec(vp, d)) - phi0);
      }
      r.weak += f.f[I] * f.f[L] * acc;
    }
  }
  r.weak *= hd * hd * hd;
  return r;
}

CollisionField collision_operator(const DensityGrid& f, const CollisionKernel& k, const SolverOptions& opts) {
  return CollisionOperator(f.grid, k, opts).apply(f);
}

double l1_distance(const DensityGrid& f, const DensityGrid& g) {
  if (!(f.grid == g.grid)) throw PreconditionError("l1_distance: grids differ");
  double s = 0.0;
  for (std::size_t c = 0; c < f.f.size(); ++c) s += std::fabs(f.f[c] - g.f[c]);
  return s * f.grid.cell_volume();
}

namespace {

double clamp_negatives(DensityGrid& f) {
  double removed = 0.0;
  for (double& v : f.f)
    if (v < 0.0) {
      removed -= v;
      v = 0.0;
    }
  return removed * f.grid.cell_volume();
}

double momentum_gap(const DensityGrid& f, const std::vector<double>& target) {
  const auto p = f.momentum();
  double s = 0.0;
  for (std::size_t a = 0; a < p.size(); ++a) s += (p[a] - target[a]) * (p[a] - target[a]);
  return std::sqrt(s);
}

// f <- s f (1 + c.v) with s, c chosen to restore mass m0 and momentum p0.
void restore_invariants(DensityGrid& f, double m0, const std::vector<double>& p0) {
  const int d = f.grid.dim;
  const double m = f.mass();
  const auto p = f.momentum();
  Eigen::MatrixXd A(d, d);
  Eigen::VectorXd rhs(d);
  for (int a = 0; a < d; ++a) {
    for (int b = 0; b < d; ++b) {
      const double sab = f.integrate([&](Vec x) { return x[a] * x[b]; });
      A(a, b) = m0 * sab - p0[a] * p[b];
    }
    rhs(a) = p0[a] * m - m0 * p[a];
  }
  const Eigen::VectorXd c = A.partialPivLu().solve(rhs);
  double x[kMaxDim];
  for (std::size_t k = 0; k < f.f.size(); ++k) {
    f.grid.center_of(k, x);
    double lin = 1.0;
    for (int a = 0; a < d; ++a) lin += c(a) * x[a];
    f.f[k] *= lin;
  }
  const double scale = m0 / f.mass();
  for (double& v : f.f) v *= scale;
}

void axpy(std::vector<double>& y, double a, const std::vector<double>& x) {
  for (std::size_t k = 0; k < y.size(); ++k) y[k] += a * x[k];
}

}  // namespace

DensityPath evolve(const DensityGrid& f0, const CollisionOperator& op, double T, double dt, TimeMethod method) {
  if (!(T >= 0.0)) throw PreconditionError("horizon must be nonnegative");
  if (!(dt > 0.0)) throw PreconditionError("time step must be positive");
  const double ratio = T / dt;
  const long steps = std::lround(ratio);
  if (std::fabs(ratio - static_cast<double>(steps)) > 1e-9 * std::max(1.0, ratio))
    throw PreconditionError("horizon must be a multiple of the time step");

  DensityPath path;
  path.dt = dt;
  path.method = method;
  path.times.push_back(0.0);
  path.nodes.push_back(f0);
  const double m0 = f0.mass();
  const auto p0 = f0.momentum();
  DensityGrid f = f0;

  for (long k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) * dt;
    DensityGrid next = f;
    double truncation = 0.0;
    if (method == TimeMethod::euler) {
      const auto c = op.apply(f, t + 0.5 * dt);
      if (dt * c.max_loss_rate >= 1.0) {
        const double suggested = 0.5 / c.max_loss_rate;
        std::ostringstream msg;
        msg << "euler step violates positivity: dt * max loss rate = " << dt * c.max_loss_rate
            << " >= 1; use dt <= " << suggested;
        throw StepSizeError(msg.str(), suggested);
      }
      axpy(next.f, dt, c.values);
      truncation = c.truncation_rate;
    } else {
      DensityGrid stage = f;
      const auto k1 = op.apply(f, t);
      stage.f = f.f;
      axpy(stage.f, 0.5 * dt, k1.values);
      const auto k2 = op.apply(stage, t + 0.5 * dt);
      stage.f = f.f;
      axpy(stage.f, 0.5 * dt, k2.values);
      const auto k3 = op.apply(stage, t + 0.5 * dt);
      stage.f = f.f;
      axpy(stage.f, dt, k3.values);
      const auto k4 = op.apply(stage, t + dt);
      for (std::size_t c = 0; c < next.f.size(); ++c)
        next.f[c] += dt / 6.0 * (k1.values[c] + 2.0 * k2.values[c] + 2.0 * k3.values[c] + k4.values[c]);
      truncation = k1.truncation_rate;
    }

    StepDiagnostics diag;
    diag.t = static_cast<double>(k + 1) * dt;
    diag.truncation_rate = truncation;
    diag.raw_mass_drift = next.mass() - f.mass();
    diag.raw_momentum_drift = momentum_gap(next, f.momentum());
    diag.clamped_mass = clamp_negatives(next);
    if (op.options().conserve) {
      const double raw_mass = next.mass();
      const double raw_gap = momentum_gap(next, p0);
      restore_invariants(next, m0, p0);
      diag.clamped_mass += clamp_negatives(next);
      path.cumulative_mass_correction += std::fabs(next.mass() - raw_mass);
      path.cumulative_momentum_correction += std::fabs(raw_gap - momentum_gap(next, p0));
    }
    diag.mass_drift = next.mass() - f.mass();
    diag.momentum_drift = momentum_gap(next, f.momentum());
    path.steps.push_back(diag);
    f = std::move(next);
    path.times.push_back(diag.t);
    path.nodes.push_back(f);
  }
  return path;
}

}  // namespace kacflow

namespace kacflow {

DensityPath evolve(const DensityGrid& f0, const CollisionKernel& k, double T, double dt, TimeMethod method,
                   const SolverOptions& opts) {
  return evolve(f0, CollisionOperator(f0.grid, k, opts), T, dt, method);
}

DensityPath evolve_tilted(const DensityGrid& f0, const TiltedKernel& k, double T, double dt, TimeMethod method,
                          const SolverOptions& opts) {
  return evolve(f0, CollisionOperator(f0.grid, k, opts), T, dt, method);
}

}  // namespace kacflow
