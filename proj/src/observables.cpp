#include "kacflow/observables.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "kacflow/errors.hpp"

namespace kacflow {

std::vector<double> EmpiricalMeasure::mean() const {
  std::vector<double> m(dim, 0.0);
  for (std::size_t i = 0; i < size(); ++i)
    for (int a = 0; a < dim; ++a) m[a] += points[i * dim + a];
  for (double& x : m) x /= static_cast<double>(size());
  return m;
}

double EmpiricalMeasure::integrate(const std::function<double(Vec)>& f) const {
  double s = 0.0;
  for (std::size_t i = 0; i < size(); ++i) s += f(point(i));
  return s / static_cast<double>(size());
}

Histogram EmpiricalMeasure::histogram(const VelocityGrid& grid) const {
  if (grid.dim != dim) throw PreconditionError("histogram grid dimension differs from the measure");
  Histogram h;
  h.grid = grid;
  h.mass.assign(grid.cells(), 0.0);
  std::size_t outside = 0;
  std::vector<std::size_t> counts(grid.cells(), 0);
  for (std::size_t i = 0; i < size(); ++i) {
    const long c = grid.locate(point(i));
    if (c < 0)
      ++outside;
    else
      ++counts[c];
  }
  const double n = static_cast<double>(size());
  for (std::size_t c = 0; c < counts.size(); ++c) h.mass[c] = static_cast<double>(counts[c]) / n;
  h.overflow = static_cast<double>(outside) / n;
  return h;
}

EmpiricalMeasure empirical_measure(const ParticleState& s) { return {s.dim, s.velocities}; }

double check_balance(const Trajectory& traj, const FlowRecord& flow, const BalanceTestFunction& f,
                     const std::vector<double>& checkpoints) {
  using boost::math::quadrature::gauss;
  using boost::math::quadrature::gauss_kronrod;
  const double n = static_cast<double>(flow.n_particles);
  ParticleState state = traj.initial;
  const double t0 = traj.initial.time;
  auto pi_of = [&](const std::function<double(double, Vec)>& g, double t) {
    double s = 0.0;
    for (std::size_t i = 0; i < state.size(); ++i) s += g(t, state.velocity(i));
    return s / n;
  };
  auto drift = [&](double a, double b) {
    if (!(b > a)) return 0.0;
    auto integrand = [&](double t) { return pi_of(f.dphi_dt, t); };
    if (f.time_degree >= 0 && f.time_degree <= 20) return gauss<double, 10>::integrate(integrand, a, b);
    return gauss_kronrod<double, 21>::integrate(integrand, a, b, 8, 1e-13);
  };

  std::vector<double> cps = checkpoints;
  std::sort(cps.begin(), cps.end());
  const double start_value = pi_of(f.phi, t0);
  double integral = 0.0, jumps = 0.0, t = t0, worst = 0.0;
  std::size_t next = 0;
  const EventLog empty;
  const EventLog& events = traj.events ? *traj.events : empty;
  for (double tc : cps) {
    while (next < events.size() && events[next].t <= tc) {
      const auto& e = events[next++];
      integral += drift(t, e.t);
      t = e.t;
      jumps += (f.phi(t, e.v()) + f.phi(t, e.vs()) - f.phi(t, e.vp()) - f.phi(t, e.vsp())) / n;
      std::copy(e.vp().begin(), e.vp().end(), state.velocity(e.i).begin());
      std::copy(e.vsp().begin(), e.vsp().end(), state.velocity(e.j).begin());
    }
    integral += drift(t, tc);
    t = tc;
    const double residual = pi_of(f.phi, tc) - start_value - integral + jumps;
    worst = std::max(worst, std::fabs(residual));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Wasserstein distance

Measure Measure::atoms(int dim, std::vector<double> points, std::vector<double> weights) {
  Measure m;
  m.dim_ = dim;
  const std::size_t n = points.size() / dim;
  if (weights.empty()) weights.assign(n, 1.0 / static_cast<double>(n));
  if (weights.size() != n) throw PreconditionError("atom weights do not match the points");
  m.points_ = std::move(points);
  m.weights_ = std::move(weights);
  return m;
}

Measure Measure::from_empirical(const EmpiricalMeasure& e) { return atoms(e.dim, e.points); }

Measure Measure::cells(const DensityGrid& f) {
  Measure m;
  m.dim_ = f.grid.dim;
  m.cells_ = true;
  m.grid_ = f;
  return m;
}

struct W1Access {
  // One dimensional CDF view: sorted atoms or cell masses.
  struct Line {
    bool cells = false;
    std::vector<double> x, w;       // atoms, sorted, w normalized
    double lo = 0.0, h = 1.0;       // cells
    std::vector<double> prefix;     // cumulative mass at cell edges / after atoms

    // F(x) counting atoms at x when `inclusive`.
    double cdf(double at, bool inclusive) const {
      if (cells) {
        const std::size_t n = prefix.size() - 1;
        const double s = (at - lo) / h;
        if (s <= 0.0) return 0.0;
        if (s >= static_cast<double>(n)) return 1.0;
        const std::size_t k = static_cast<std::size_t>(s);
        return prefix[k] + (prefix[k + 1] - prefix[k]) * (s - static_cast<double>(k));
      }
      const auto it = inclusive ? std::upper_bound(x.begin(), x.end(), at) : std::lower_bound(x.begin(), x.end(), at);
      const std::size_t k = static_cast<std::size_t>(it - x.begin());
      return k == 0 ? 0.0 : prefix[k - 1];
    }

    void breakpoints(std::vector<double>& out) const {
      if (cells) {
        for (std::size_t k = 0; k < prefix.size(); ++k) out.push_back(lo + h * static_cast<double>(k));
      } else {
        out.insert(out.end(), x.begin(), x.end());
      }
    }
  };

  static Line atoms_line(std::vector<std::pair<double, double>> pts) {
    std::sort(pts.begin(), pts.end());
    Line l;
    double total = 0.0;
    for (auto& p : pts) total += p.second;
    double run = 0.0;
    for (auto& p : pts) {
      run += p.second / total;
      if (!l.x.empty() && l.x.back() == p.first) {
        l.w.back() += p.second / total;
        l.prefix.back() = run;
      } else {
        l.x.push_back(p.first);
        l.w.push_back(p.second / total);
        l.prefix.push_back(run);
      }
    }
    if (!l.prefix.empty()) l.prefix.back() = 1.0;
    return l;
  }

  static Line line_1d(const Measure& m) {
    if (m.cells_) {
      Line l;
      l.cells = true;
      l.lo = -m.grid_.grid.vmax;
      l.h = m.grid_.grid.spacing();
      const double total = std::accumulate(m.grid_.f.begin(), m.grid_.f.end(), 0.0);
      l.prefix.assign(m.grid_.f.size() + 1, 0.0);
      for (std::size_t k = 0; k < m.grid_.f.size(); ++k) l.prefix[k + 1] = l.prefix[k] + m.grid_.f[k] / total;
      l.prefix.back() = 1.0;
      return l;
    }
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < m.weights_.size(); ++i) pts.emplace_back(m.points_[i], m.weights_[i]);
    return atoms_line(std::move(pts));
  }

  static Line projected(const Measure& m, const std::vector<double>& dir) {
    std::vector<std::pair<double, double>> pts;
    const int d = m.dim_;
    if (m.cells_) {
      double x[kMaxDim];
      for (std::size_t c = 0; c < m.grid_.f.size(); ++c) {
        if (m.grid_.f[c] <= 0.0) continue;
        m.grid_.grid.center_of(c, x);
        double p = 0.0;
        for (int a = 0; a < d; ++a) p += x[a] * dir[a];
        pts.emplace_back(p, m.grid_.f[c]);
      }
    } else {
      for (std::size_t i = 0; i < m.weights_.size(); ++i) {
        double p = 0.0;
        for (int a = 0; a < d; ++a) p += m.points_[i * d + a] * dir[a];
        pts.emplace_back(p, m.weights_[i]);
      }
    }
    return atoms_line(std::move(pts));
  }

  static double distance(const Line& a, const Line& b) {
    std::vector<double> bp;
    a.breakpoints(bp);
    b.breakpoints(bp);
    std::sort(bp.begin(), bp.end());
    bp.erase(std::unique(bp.begin(), bp.end()), bp.end());
    double total = 0.0;
    for (std::size_t k = 0; k + 1 < bp.size(); ++k) {
      const double lo = bp[k], hi = bp[k + 1];
      const double g0 = a.cdf(lo, true) - b.cdf(lo, true);
      const double g1 = a.cdf(hi, false) - b.cdf(hi, false);
      const double len = hi - lo;
      if (g0 * g1 >= 0.0)
        total += 0.5 * (std::fabs(g0) + std::fabs(g1)) * len;
      else
        total += 0.5 * (g0 * g0 + g1 * g1) / (std::fabs(g0) + std::fabs(g1)) * len;
    }
    return total;
  }
};

W1Result wasserstein1(const Measure& mu, const Measure& nu, const W1Options& opts) {
  if (mu.dim() != nu.dim()) throw PreconditionError("wasserstein1: dimension mismatch");
  W1Result r;
  if (mu.dim() == 1) {
    r.value = W1Access::distance(W1Access::line_1d(mu), W1Access::line_1d(nu));
    return r;
  }
  Rng rng(opts.seed);
  std::vector<double> values;
  std::vector<double> dir(mu.dim());
  for (int k = 0; k < opts.directions; ++k) {
    double norm = 0.0;
    for (double& c : dir) {
      c = standard_normal(rng);
      norm += c * c;
    }
    norm = std::sqrt(norm);
    for (double& c : dir) c /= norm;
    values.push_back(W1Access::distance(W1Access::projected(mu, dir), W1Access::projected(nu, dir)));
  }
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / values.size();
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= std::max<std::size_t>(values.size() - 1, 1);
  r.value = mean;
  r.standard_error = std::sqrt(var / values.size());
  r.directions = opts.directions;
  return r;
}

void write_histogram_csv(std::ostream& os, const Histogram& h) {
  const int d = h.grid.dim;
  for (int a = 0; a < d; ++a) os << "grid_center_" << (a + 1) << ",";
  os << "mass\n";
  os.precision(17);
  double x[kMaxDim];
  for (std::size_t c = 0; c < h.mass.size(); ++c) {
    h.grid.center_of(c, x);
    for (int a = 0; a < d; ++a) os << x[a] << ",";
    os << h.mass[c] << "\n";
  }
}

}  // namespace kacflow
