#include "kacflow/gradflow.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "concave.hpp"
#include "kacflow/errors.hpp"
#include "kacflow/rng.hpp"

namespace kacflow {

namespace {

constexpr double kInvSqrt2 = 1.0 / std::numbers::sqrt2;

double psi(double q, double p) {
  if (p > 0.0) return q > 0.0 ? q * std::log(q / p) - q + p : p;
  return q > 0.0 ? kInfinity : 0.0;
}

}  // namespace

double MaxwellRelativeDensity::mass() const {
  double s = 0.0;
  for (std::size_t c = 0; c < h.f.size(); ++c) s += h.f[c] * M.f[c];
  return s * h.grid.cell_volume();
}

MaxwellRelativeDensity maxwell_relative(const DensityGrid& f) {
  MaxwellRelativeDensity r{grid_maxwellian(f.grid), f};
  for (std::size_t c = 0; c < r.h.f.size(); ++c) {
    if (!(r.M.f[c] > 0.0)) throw NumericError("grid Maxwellian underflows on the velocity grid", r.M.f[c]);
    r.h.f[c] = f.f[c] / r.M.f[c];
  }
  return r;
}

RotatedLattice::RotatedLattice(const VelocityGrid& g, const CollisionKernel& k, Interpolation mode)
    : grid_(g), mode_(mode), cells_(g.cells()) {
  if (k.dim != g.dim) throw PreconditionError("kernel and grid dimensions differ");
  const int d = g.dim, n = g.n, line = 2 * n - 1;
  line_points_ = 1;
  for (int a = 0; a < d; ++a) line_points_ *= static_cast<std::size_t>(line);

  auto inside = [this](int j) { return this->inside(j); };
  sum_.assign(cells_ * cells_, -1);
  diff_.assign(cells_ * cells_, -1);
  int ia[kMaxDim], ib[kMaxDim];
  for (std::size_t a = 0; a < cells_; ++a) {
    g.unflatten(a, ia);
    for (std::size_t b = 0; b < cells_; ++b) {
      g.unflatten(b, ib);
      long s = 0, t = 0, stride = 1;
      bool ks = true, kt = true;
      for (int x = 0; x < d; ++x) {
        const int js = ia[x] + ib[x], jt = ia[x] - ib[x] + n - 1;
        ks = ks && inside(js);
        kt = kt && inside(jt);
        s += js * stride;
        t += jt * stride;
        stride *= line;
      }
      sum_[a * cells_ + b] = ks ? s : -1;
      diff_[a * cells_ + b] = kt ? t : -1;
    }
  }

  const auto M = grid_maxwellian(g);
  const double vol = g.cell_volume();
  std::vector<double> mu(cells_), centre(cells_ * d);
  for (std::size_t c = 0; c < cells_; ++c) {
    mu[c] = M.f[c] * vol;
    g.center_of(c, centre.data() + c * d);
  }
  weight_.assign(points(), 0.0);
  double v[kMaxDim], vs[kMaxDim];
  for (std::size_t a = 0; a < cells_; ++a)
    for (std::size_t b = 0; b < cells_; ++b) {
      const long s = sum(a, b), t = difference(a, b);
      if (s >= 0 && t >= 0) {
        line_point(s, v);
        line_point(t, vs);
      }
      for (std::size_t m = 0; m < cells_; ++m) {
        const double mass = mu[a] * mu[b] * mu[m];
        if (s < 0 || t < 0 || sum(a, m) < 0 || difference(a, m) < 0) {
          dropped_ += mass;
          continue;
        }
        const Vec wp(centre.data() + m * d, d);
        const double sigma = k.density(Vec(v, d), Vec(vs, d), wp) / gaussian_density(d, wp);
        weight_[(a * cells_ + b) * cells_ + m] = mass * sigma;
      }
    }
}

// |x_j| <= x_{n-1-e} iff 2 (j + 1 - n)^2 <= (n - 1 - 2e)^2.
bool RotatedLattice::inside(int j) const {
  const long s = j + 1 - grid_.n;
  const long e = grid_.n - 1 - (mode_ == Interpolation::cubic ? 2 : 0);
  return e >= 0 && 2 * s * s <= e * e;
}

double RotatedLattice::coordinate(int j) const {
  return (j + 1 - grid_.n) * grid_.spacing() * kInvSqrt2;
}

void RotatedLattice::centres(int j, int js, int n, int& a, int& b) {
  a = (j + js - (n - 1)) / 2;
  b = (j - js + (n - 1)) / 2;
}

void RotatedLattice::line_point(long j, double* x) const {
  const long line = this->line();
  for (int a = 0; a < grid_.dim; ++a) {
    x[a] = coordinate(static_cast<int>(j % line));
    j /= line;
  }
}

void RotatedLattice::point(std::size_t a, std::size_t b, std::size_t m, double* v, double* vs, double* wp) const {
  int ia[kMaxDim], ib[kMaxDim];
  grid_.unflatten(a, ia);
  grid_.unflatten(b, ib);
  grid_.center_of(m, wp);
  const int n = grid_.n;
  for (int x = 0; x < grid_.dim; ++x) {
    v[x] = coordinate(ia[x] + ib[x]);
    vs[x] = coordinate(ia[x] - ib[x] + n - 1);
  }
}

std::vector<double> RotatedLattice::sample(const MaxwellRelativeDensity& h) const {
  if (!(h.h.grid == grid_)) throw PreconditionError("density and lattice grids differ");
  const int d = grid_.dim;
  std::vector<double> out(line_points_);
  double x[kMaxDim];
  for (std::size_t j = 0; j < line_points_; ++j) {
    std::size_t r = j;
    bool keep = true;
    for (int a = 0; a < d; ++a) {
      keep = keep && inside(static_cast<int>(r % static_cast<std::size_t>(line())));
      r /= static_cast<std::size_t>(line());
    }
    if (!keep) {
      out[j] = -1.0;
      continue;
    }
    line_point(static_cast<long>(j), x);
    out[j] = std::max(h.at(Vec(x, d), mode_), 0.0);
  }
  return out;
}

void require_detailed_balance(const CollisionKernel& k) {
  Rng rng(0x6462);
  const double r = detailed_balance_check(k, 200, rng);
  if (!(r <= 1e-8))
    throw PreconditionError("kernel \"" + k.name + "\" violates detailed balance (residual " + std::to_string(r) + ")");
}

DirichletForm dirichlet_form(const DensityGrid& f, const CollisionKernel& k) {
  require_detailed_balance(k);
  return dirichlet_form(f, RotatedLattice(f.grid, k));
}

DirichletForm dirichlet_form(const DensityGrid& f, const RotatedLattice& lattice) {
  const auto H = lattice.sample(maxwell_relative(f));
  const auto& W = lattice.weight();
  const std::size_t c = lattice.cells();
  DirichletForm r;
  for (std::size_t a = 0; a < c; ++a)
    for (std::size_t b = 0; b < c; ++b) {
      const long s = lattice.sum(a, b), t = lattice.difference(a, b);
      if (s < 0 || t < 0) continue;
      const double in = H[s] * H[t];
      const double* w = W.data() + (a * c + b) * c;
      for (std::size_t m = 0; m < c; ++m) {
        if (w[m] == 0.0) continue;
        const double out = H[lattice.sum(a, m)] * H[lattice.difference(a, m)];
        const double root = std::sqrt(in * out);
        const double diff = std::sqrt(out) - std::sqrt(in);
        r.value += 0.5 * w[m] * diff * diff;
        r.difference += w[m] * (in - root);
      }
    }
  r.gap = std::fabs(r.value - r.difference);
  r.dropped_mass = lattice.dropped_mass();
  return r;
}

VariationalDirichlet dirichlet_sup(const DensityGrid& f, const RotatedLattice& lattice, const OptimizerOptions& opts) {
  const auto H = lattice.sample(maxwell_relative(f));
  const auto& W = lattice.weight();
  const std::size_t c = lattice.cells();

  // Unknowns: line points with h > 0. Elsewhere e^phi = 0.
  std::vector<long> var(H.size(), -1);
  long unknowns = 0;
  for (std::size_t j = 0; j < H.size(); ++j)
    if (H[j] > 0.0) var[j] = unknowns++;

  struct Term {
    double weight;  // W h h*
    long idx[4];    // v', v'*, v, v*
  };
  std::vector<Term> terms;
  double constant = 0.0;  // terms whose outgoing pair is dead
  for (std::size_t a = 0; a < c; ++a)
    for (std::size_t b = 0; b < c; ++b) {
      const long s = lattice.sum(a, b), t = lattice.difference(a, b);
      if (s < 0 || t < 0 || !(H[s] * H[t] > 0.0)) continue;
      for (std::size_t m = 0; m < c; ++m) {
        const double w = W[(a * c + b) * c + m] * H[s] * H[t];
        if (w == 0.0) continue;
        const long sp = lattice.sum(a, m), tp = lattice.difference(a, m);
        if (var[sp] < 0 || var[tp] < 0) {
          constant += w;
          continue;
        }
        terms.push_back({w, {var[sp], var[tp], var[s], var[t]}});
      }
    }

  static constexpr double sign[4] = {1.0, 1.0, -1.0, -1.0};
  auto exponent = [](const Term& tm, const Eigen::VectorXd& phi) {
    return phi[tm.idx[0]] + phi[tm.idx[1]] - phi[tm.idx[2]] - phi[tm.idx[3]];
  };
  auto value = [&](const Eigen::VectorXd& phi) {
    double v = constant;
    for (const auto& tm : terms) v += tm.weight * (1.0 - std::exp(exponent(tm, phi)));
    return std::isfinite(v) ? v : -kInfinity;
  };
  auto derivatives = [&](const Eigen::VectorXd& phi, Eigen::VectorXd& g, Eigen::MatrixXd& Hs) {
    g.setZero();
    Hs.setZero();
    double v = constant;
    for (const auto& tm : terms) {
      const double e = tm.weight * std::exp(exponent(tm, phi));
      v += tm.weight - e;
      for (int i = 0; i < 4; ++i) {
        g[tm.idx[i]] -= e * sign[i];
        for (int l = 0; l < 4; ++l) Hs(tm.idx[i], tm.idx[l]) -= e * sign[i] * sign[l];
      }
    }
    return v;
  };
  VariationalDirichlet r;
  if (unknowns == 0) {
    r.value = constant;
    r.converged = true;
    return r;
  }
  const auto res =
      detail::newton_ascent(value, derivatives, Eigen::VectorXd::Zero(unknowns), opts.tolerance, opts.max_iterations);
  r.value = res.value;
  r.iterations = res.iterations;
  r.gradient_norm = res.gradient_norm;
  r.converged = res.converged;
  return r;
}

namespace {

// Calls f(node weight, a, b, m, P, h h*, h' h'*, W, v, v*, v', v'*, w') over kept points.
template <class F>
void sweep_points(const PathPair& pp, const RotatedLattice& lattice, F&& f) {
  const auto& g = lattice.velocity();
  if (!(pp.pi.nodes.front().grid == g)) throw PreconditionError("path and lattice grids differ");
  const int d = g.dim;
  const std::size_t c = lattice.cells();
  const double cell3 = std::pow(g.cell_volume(), 3);
  const auto& W = lattice.weight();
  const auto wts = time_weights(pp.pi.times);

  std::vector<double> line(lattice.line_points() * d), centre(c * d);
  for (std::size_t j = 0; j < lattice.line_points(); ++j) lattice.line_point(static_cast<long>(j), line.data() + j * d);
  for (std::size_t m = 0; m < c; ++m) g.center_of(m, centre.data() + m * d);
  auto at = [&](long j) { return Vec(line.data() + j * d, d); };

  for (std::size_t k = 0; k < pp.pi.size(); ++k) {
    if (wts[k] == 0.0) continue;
    const auto H = lattice.sample(maxwell_relative(pp.pi.nodes[k]));
    for (std::size_t a = 0; a < c; ++a)
      for (std::size_t b = 0; b < c; ++b) {
        const long s = lattice.sum(a, b), t = lattice.difference(a, b);
        if (s < 0 || t < 0) continue;
        const double in = H[s] * H[t];
        for (std::size_t m = 0; m < c; ++m) {
          const long sp = lattice.sum(a, m), tp = lattice.difference(a, m);
          if (sp < 0 || tp < 0) continue;
          const Vec wp(centre.data() + m * d, d);
          const double P = pp.q->at(k, at(s), at(t), wp) * cell3;
          f(k, wts[k], P, in, H[sp] * H[tp], W[(a * c + b) * c + m], at(s), at(t), at(sp), at(tp));
        }
      }
  }
}

}  // namespace

double kinematic_term(const PathPair& pp, const CollisionKernel& k) {
  require_detailed_balance(k);
  return kinematic_term(pp, RotatedLattice(pp.pi.nodes.front().grid, k, pp.lattice.interpolation()));
}

double kinematic_term(const PathPair& pp, const RotatedLattice& lattice) {
  double R = 0.0;
  sweep_points(pp, lattice, [&](std::size_t, double wt, double P, double in, double out, double W, Vec, Vec, Vec, Vec) {
    R += 2.0 * wt * psi(P, 0.5 * std::sqrt(in * out) * W);
  });
  return R;
}

double kinematic_bracket(const PathPair& pp, const RotatedLattice& lattice, const PairFunction& F,
                         const PairFunction& alpha) {
  double r = 0.0;
  sweep_points(pp, lattice,
               [&](std::size_t k, double wt, double P, double in, double, double W, Vec v, Vec vs, Vec vp, Vec vsp) {
                 const double qpi = 0.5 * in * W;
                 const double f = F(k, v, vs, vp, vsp), fy = F(k, vp, vsp, v, vs);
                 const double al = alpha(k, v, vs, vp, vsp), aly = alpha(k, vp, vsp, v, vs);
                 double term = 2.0 * P * f;
                 if (qpi > 0.0) term -= qpi * (std::expm1(f) / al + std::expm1(fy) * aly);
                 r += wt * term;
               });
  return r;
}

GradientFlowCheck gradient_flow_residual(const PathPair& pp, const CollisionKernel& k) {
  require_detailed_balance(k);
  const auto& g = pp.pi.nodes.front().grid;
  const RotatedLattice lattice(g, k, pp.lattice.interpolation());
  const auto M = grid_maxwellian(g);
  const auto wts = time_weights(pp.pi.times);

  GradientFlowCheck r;
  r.J = cost_J(pp, k);
  for (std::size_t n = 0; n < pp.pi.size(); ++n) {
    r.H_path.push_back(relative_entropy(pp.pi.nodes[n], M));
    r.D_path.push_back(dirichlet_form(pp.pi.nodes[n], lattice).value);
    r.D_integral += wts[n] * r.D_path.back();
  }
  r.R = kinematic_term(pp, lattice);
  const double dH = 0.5 * (r.H_path.back() - r.H_path.front());
  r.residual = std::fabs(r.J - dH - 0.5 * r.D_integral - 0.5 * r.R);
  const double scale = std::max({std::fabs(r.J), std::fabs(dH), 0.5 * r.D_integral, 0.5 * r.R});
  r.relative = scale > 0.0 ? r.residual / scale : r.residual;
  return r;
}

EdiCheck edi_check(const DensityGrid& m, const CollisionKernel& k, double T, double dt, TimeMethod method,
                   Interpolation mode) {
  if (!k.rate_bound) throw PreconditionError("kernel \"" + k.name + "\" has an unbounded scattering rate");
  require_detailed_balance(k);
  SolverOptions opts;
  opts.interpolation = mode;
  const auto path = evolve(m, k, T, dt, method, opts);
  const auto pp = reference_pair(path, k, mode);
  const RotatedLattice lattice(m.grid, k, mode);
  const auto M = grid_maxwellian(m.grid);
  const auto wts = time_weights(path.times);

  EdiCheck r;
  double D = 0.0;
  for (std::size_t n = 0; n < path.size(); ++n) {
    r.H_path.push_back(relative_entropy(path.nodes[n], M));
    r.D_path.push_back(dirichlet_form(path.nodes[n], lattice).value);
    D += wts[n] * r.D_path.back();
    if (n > 0) r.max_entropy_increase = std::max(r.max_entropy_increase, r.H_path[n] - r.H_path[n - 1]);
  }
  r.R = kinematic_term(pp, lattice);
  r.lhs = r.H_path.back() + D + r.R;
  r.rhs = r.H_path.front();
  r.slack = r.rhs - r.lhs;
  return r;
}

}  // namespace kacflow
