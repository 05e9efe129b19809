#include "kacflow/ldp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "concave.hpp"
#include "kacflow/errors.hpp"

namespace kacflow {

namespace {

constexpr double kInvSqrt2 = 1.0 / std::numbers::sqrt2;

void check_pair(const PathPair& pp) {
  if (!pp.q) throw PreconditionError("path pair has no flow");
  if (pp.pi.size() == 0) throw PreconditionError("path pair has no density nodes");
  if (pp.q->nodes() != pp.pi.size()) throw PreconditionError("flow and density paths have different node counts");
  if (!(pp.pi.nodes[0].grid == pp.lattice.velocity())) throw PreconditionError("lattice and density grids differ");
}

// Calls f(k, I, L, q, qpi) for every node and lattice row; qpi is null when
// no kernel is given.
template <class F>
void sweep(const PathPair& pp, const CollisionKernel* k, F&& f) {
  check_pair(pp);
  const auto& lat = pp.lattice;
  const auto& g = lat.velocity();
  const int d = g.dim;
  const std::size_t W = lat.wpoints(), cells = lat.cells();
  std::vector<double> b(W), q(W), qpi(W);
  double x[kMaxDim], y[kMaxDim];
  for (std::size_t I = 0; I < cells; ++I) {
    g.center_of(I, x);
    for (std::size_t L = 0; L < cells; ++L) {
      g.center_of(L, y);
      if (k)
        for (std::size_t w = 0; w < W; ++w) b[w] = k->density(Vec(x, d), Vec(y, d), lat.wp(w));
      for (std::size_t node = 0; node < pp.pi.size(); ++node) {
        pp.q->row(node, I, L, q.data());
        if (k) {
          const auto& f = pp.pi.nodes[node].f;
          const double c = 0.5 * f[I] * f[L];
          for (std::size_t w = 0; w < W; ++w) qpi[w] = c * b[w];
        }
        f(node, I, L, q.data(), k ? qpi.data() : nullptr);
      }
    }
  }
}

// q log(q/p) - q + p with the conventions 0 log 0 = 0 and +inf when q > 0 = p.
double psi_term(double q, double p) {
  if (p > 0.0) return q > 0.0 ? q * std::log(q / p) - q + p : p;
  return q > 0.0 ? kInfinity : 0.0;
}

// Discrete time derivative paired with the trapezoid weights.
std::vector<double> time_derivative(const DensityPath& pi, std::size_t k) {
  const std::size_t K = pi.size() - 1;
  std::vector<double> b(pi.nodes[k].f.size(), 0.0);
  if (K == 0) return b;
  const auto& next = pi.nodes[std::min(k + 1, K)].f;
  const auto& prev = pi.nodes[k == 0 ? 0 : k - 1].f;
  for (std::size_t c = 0; c < b.size(); ++c) b[c] = 0.5 * (next[c] - prev[c]);
  return b;
}

}  // namespace

DenseFlow::DenseFlow(const CollisionGrid& lattice, std::vector<std::vector<double>> values)
    : lattice_(lattice), values_(std::move(values)) {
  for (const auto& v : values_)
    if (v.size() != lattice.size()) throw PreconditionError("dense flow node has the wrong size");
}

void DenseFlow::row(std::size_t k, std::size_t I, std::size_t L, double* out) const {
  const std::size_t W = lattice_.wpoints();
  const double* src = values_[k].data() + (I * lattice_.cells() + L) * W;
  std::copy(src, src + W, out);
}

double DenseFlow::at(std::size_t k, Vec v, Vec vs, Vec wp) const {
  const auto& g = lattice_.velocity();
  const int d = g.dim, n = g.n, K = lattice_.K();
  const double h = g.spacing();
  // Per axis stencils: v axes, v* axes, w' axes.
  int idx[3 * kMaxDim][2], cnt[3 * kMaxDim];
  double w[3 * kMaxDim][2];
  for (int a = 0; a < d; ++a) {
    cnt[a] = interpolation_stencil(v[a], g.vmax, n, Interpolation::linear, idx[a], w[a]);
    cnt[d + a] = interpolation_stencil(vs[a], g.vmax, n, Interpolation::linear, idx[d + a], w[d + a]);
    const double s = wp[a] / h + (n / 2);
    auto& c = cnt[2 * d + a];
    c = 0;
    if (s >= 0.0 && s <= K - 1) {
      const int j = std::min(static_cast<int>(std::floor(s)), K - 2);
      const double u = s - j;
      idx[2 * d + a][0] = j;
      w[2 * d + a][0] = 1.0 - u;
      idx[2 * d + a][1] = j + 1;
      w[2 * d + a][1] = u;
      c = 2;
    }
  }
  for (int a = 0; a < 3 * d; ++a)
    if (cnt[a] == 0) return 0.0;
  const auto& vals = values_[k];
  double sum = 0.0;
  int pos[3 * kMaxDim] = {};
  while (true) {
    std::size_t I = 0, L = 0, Wf = 0, sI = 1, sW = 1;
    double wt = 1.0;
    for (int a = 0; a < d; ++a) {
      I += static_cast<std::size_t>(idx[a][pos[a]]) * sI;
      L += static_cast<std::size_t>(idx[d + a][pos[d + a]]) * sI;
      Wf += static_cast<std::size_t>(idx[2 * d + a][pos[2 * d + a]]) * sW;
      sI *= static_cast<std::size_t>(n);
      sW *= static_cast<std::size_t>(K);
      wt *= w[a][pos[a]] * w[d + a][pos[d + a]] * w[2 * d + a][pos[2 * d + a]];
    }
    sum += wt * vals[(I * lattice_.cells() + L) * lattice_.wpoints() + Wf];
    int a = 0;
    while (a < 3 * d && ++pos[a] == cnt[a]) pos[a++] = 0;
    if (a == 3 * d) break;
  }
  return sum;
}

PointFlow::PointFlow(const CollisionGrid& lattice, std::size_t nodes, Density q)
    : lattice_(lattice), nodes_(nodes), q_(std::move(q)) {}

void PointFlow::row(std::size_t k, std::size_t I, std::size_t L, double* out) const {
  const auto& g = lattice_.velocity();
  double x[kMaxDim], y[kMaxDim];
  g.center_of(I, x);
  g.center_of(L, y);
  for (std::size_t w = 0; w < lattice_.wpoints(); ++w) out[w] = q_(k, Vec(x, g.dim), Vec(y, g.dim), lattice_.wp(w));
}

KernelFlow::KernelFlow(const DensityPath& pi, const CollisionGrid& lattice, const CollisionKernel& k)
    : pi_(pi), lattice_(lattice) {
  if (k.dim != lattice.dim()) throw PreconditionError("kernel and lattice dimensions differ");
  auto density = k.density;
  density_ = [density](double, Vec v, Vec vs, Vec wp) { return density(v, vs, wp); };
  relative_densities();
}

KernelFlow::KernelFlow(const DensityPath& pi, const CollisionGrid& lattice, const TiltedKernel& k)
    : pi_(pi), lattice_(lattice), density_(k.density) {
  if (k.dim != lattice.dim()) throw PreconditionError("kernel and lattice dimensions differ");
  relative_densities();
}

void KernelFlow::relative_densities() {
  const auto& g = lattice_.velocity();
  const auto M = grid_maxwellian(g);
  double x[kMaxDim];
  g.center_of(0, x);
  mass_ = gaussian_density(g.dim, Vec(x, g.dim)) / M.f[0];
  for (const auto& f : pi_.nodes) {
    DensityGrid r = f;
    for (std::size_t c = 0; c < r.f.size(); ++c) r.f[c] /= M.f[c];
    relative_.push_back(std::move(r));
  }
}

double KernelFlow::density_at(std::size_t k, Vec x) const {
  const double r = relative_[k].at(x, lattice_.interpolation());
  return r > 0.0 ? r * gaussian_density(x.size(), x) / mass_ : 0.0;
}

double KernelFlow::at(std::size_t k, Vec v, Vec vs, Vec wp) const {
  const double c = 0.5 * density_at(k, v) * density_at(k, vs);
  return c == 0.0 ? 0.0 : c * density_(pi_.times[k], v, vs, wp);
}

void KernelFlow::row(std::size_t k, std::size_t I, std::size_t L, double* out) const {
  const auto& g = lattice_.velocity();
  const auto& f = pi_.nodes[k].f;
  const double c = 0.5 * f[I] * f[L];
  if (c == 0.0) {
    std::fill(out, out + lattice_.wpoints(), 0.0);
    return;
  }
  double x[kMaxDim], y[kMaxDim];
  g.center_of(I, x);
  g.center_of(L, y);
  const double t = pi_.times[k];
  for (std::size_t w = 0; w < lattice_.wpoints(); ++w)
    out[w] = c * density_(t, Vec(x, g.dim), Vec(y, g.dim), lattice_.wp(w));
}

std::vector<double> time_weights(const std::vector<double>& times) {
  const std::size_t n = times.size();
  std::vector<double> w(n, 0.0);
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const double panel = 0.5 * (times[k + 1] - times[k]);
    w[k] += panel;
    w[k + 1] += panel;
  }
  return w;
}

std::shared_ptr<const ReferenceFlow> reference_flow(const DensityPath& pi, const CollisionKernel& k,
                                                    Interpolation mode) {
  if (pi.size() == 0) throw PreconditionError("empty density path");
  return std::make_shared<ReferenceFlow>(pi, CollisionGrid(pi.nodes[0].grid, mode), k);
}

PathPair reference_pair(const DensityPath& pi, const CollisionKernel& k, Interpolation mode) {
  auto q = reference_flow(pi, k, mode);
  return {pi, CollisionGrid(pi.nodes[0].grid, mode), q};
}

PathPair tilted_pair(const DensityPath& pi, const TiltedKernel& k, Interpolation mode) {
  if (pi.size() == 0) throw PreconditionError("empty density path");
  CollisionGrid lattice(pi.nodes[0].grid, mode);
  return {pi, lattice, std::make_shared<KernelFlow>(pi, lattice, k)};
}

double flow_mass(const PathPair& pp) {
  const auto w = time_weights(pp.pi.times);
  const std::size_t W = pp.lattice.wpoints();
  double s = 0.0;
  sweep(pp, nullptr, [&](std::size_t k, std::size_t, std::size_t, const double* q, const double*) {
    double r = 0.0;
    for (std::size_t i = 0; i < W; ++i) r += q[i];
    s += w[k] * r;
  });
  return s * pp.lattice.volume();
}

double second_moment_flux(const PathPair& pp) {
  const auto w = time_weights(pp.pi.times);
  const auto& g = pp.lattice.velocity();
  const std::size_t W = pp.lattice.wpoints();
  double s = 0.0;
  double x[kMaxDim], y[kMaxDim];
  sweep(pp, nullptr, [&](std::size_t k, std::size_t I, std::size_t L, const double* q, const double*) {
    if (w[k] == 0.0) return;
    g.center_of(I, x);
    g.center_of(L, y);
    double m = 0.0;
    for (int a = 0; a < g.dim; ++a) m += (x[a] + y[a]) * (x[a] + y[a]);
    double r = 0.0;
    for (std::size_t i = 0; i < W; ++i) r += q[i];
    s += w[k] * m * r;
  });
  return s * pp.lattice.volume();
}

DensityGrid flow_marginal(const PathPair& pp, std::size_t k, int which) {
  check_pair(pp);
  if (which < 1 || which > 4) throw PreconditionError("marginal index must be 1..4");
  if (k >= pp.pi.size()) throw PreconditionError("node index out of range");
  const auto& lat = pp.lattice;
  const auto& g = lat.velocity();
  DensityGrid out(g);
  const std::size_t W = lat.wpoints();
  const double hd = g.cell_volume();
  std::vector<double> q(W);
  double vp[kMaxDim], vsp[kMaxDim];
  for (std::size_t I = 0; I < lat.cells(); ++I)
    for (std::size_t L = 0; L < lat.cells(); ++L) {
      pp.q->row(k, I, L, q.data());
      for (std::size_t w = 0; w < W; ++w) {
        if (q[w] == 0.0) continue;
        const double mass = q[w] * lat.volume();
        if (which == 1) {
          out.f[I] += mass;
        } else if (which == 2) {
          out.f[L] += mass;
        } else {
          lat.outgoing(I, L, w, vp, vsp);
          const long c = g.locate(Vec(which == 3 ? vp : vsp, g.dim));
          if (c >= 0) out.f[static_cast<std::size_t>(c)] += mass;
        }
      }
    }
  for (double& v : out.f) v /= hd;
  return out;
}

double relative_entropy(const DensityGrid& mu, const DensityGrid& nu) {
  if (!(mu.grid == nu.grid)) throw PreconditionError("relative_entropy: grids differ");
  double s = 0.0;
  for (std::size_t c = 0; c < mu.f.size(); ++c) {
    if (mu.f[c] <= 0.0) continue;
    if (nu.f[c] <= 0.0) return kInfinity;
    s += mu.f[c] * std::log(mu.f[c] / nu.f[c]);
  }
  return s * mu.grid.cell_volume();
}

double cost_J(const PathPair& pp, const CollisionKernel& k) {
  const auto w = time_weights(pp.pi.times);
  const std::size_t W = pp.lattice.wpoints();
  double J = 0.0;
  sweep(pp, &k, [&](std::size_t node, std::size_t, std::size_t, const double* q, const double* qpi) {
    if (w[node] == 0.0) return;
    double r = 0.0;
    for (std::size_t i = 0; i < W; ++i) r += psi_term(q[i], qpi[i]);
    J += w[node] * r;
  });
  return J * pp.lattice.volume();
}

double cost_I(const PathPair& pp, const CollisionKernel& k, const DensityGrid& m) {
  const double H = relative_entropy(pp.pi.nodes.at(0), m);
  if (std::isinf(H)) return kInfinity;
  return H + cost_J(pp, k);
}

double dual_objective(const PathPair& pp, const CollisionKernel& k, const std::vector<std::vector<double>>& F) {
  if (F.size() != pp.pi.size()) throw PreconditionError("one test function per node is required");
  const auto w = time_weights(pp.pi.times);
  const std::size_t W = pp.lattice.wpoints(), cells = pp.lattice.cells();
  double G = 0.0;
  sweep(pp, &k, [&](std::size_t node, std::size_t I, std::size_t L, const double* q, const double* qpi) {
    const double* f = F[node].data() + (I * cells + L) * W;
    double r = 0.0;
    for (std::size_t i = 0; i < W; ++i) r += q[i] * f[i] - qpi[i] * std::expm1(f[i]);
    G += w[node] * r;
  });
  return G * pp.lattice.volume();
}

DualResult dual_cost(const PathPair& pp, const CollisionKernel& k, const OptimizerOptions& opts) {
  const auto w = time_weights(pp.pi.times);
  const std::size_t W = pp.lattice.wpoints(), cells = pp.lattice.cells();
  const std::size_t nodes = pp.pi.size(), size = pp.lattice.size();
  std::vector<std::vector<double>> Q(nodes, std::vector<double>(size)), P(nodes, std::vector<double>(size));
  DualResult res;
  sweep(pp, &k, [&](std::size_t node, std::size_t I, std::size_t L, const double* q, const double* qpi) {
    const std::size_t off = (I * cells + L) * W;
    for (std::size_t i = 0; i < W; ++i) {
      if (q[i] > 0.0 && !(qpi[i] > 0.0) && w[node] > 0.0)
        throw PreconditionError("dual_cost: q > 0 where the reference flow vanishes");
      Q[node][off + i] = q[i];
      P[node][off + i] = qpi[i];
    }
  });
  const double vol = pp.lattice.volume();

  // Closed-form maximizer; where q = 0 the supremum is the limit F -> -inf.
  double closed = 0.0;
  for (std::size_t node = 0; node < nodes; ++node) {
    double r = 0.0;
    for (std::size_t i = 0; i < size; ++i) {
      const double q = Q[node][i], p = P[node][i];
      if (p <= 0.0) continue;
      if (q > 0.0) {
        const double F = std::log(q / p);
        r += q * F - p * std::expm1(F);
      } else {
        r += p;
      }
    }
    closed += w[node] * r;
  }
  res.closed_form = closed * vol;

  // Diagonally preconditioned ascent from F = 0 with Armijo backtracking.
  std::vector<std::vector<double>> F(nodes, std::vector<double>(size, 0.0)), D(nodes, std::vector<double>(size));
  auto objective = [&](double step) {
    double G = 0.0;
    for (std::size_t node = 0; node < nodes; ++node) {
      double r = 0.0;
      for (std::size_t i = 0; i < size; ++i) {
        const double p = P[node][i];
        if (p <= 0.0) continue;
        const double f = F[node][i] + step * D[node][i];
        r += Q[node][i] * f - p * std::expm1(f);
      }
      G += w[node] * r;
    }
    return G * vol;
  };
  double value = 0.0;
  res.converged = false;
  for (res.iterations = 0; res.iterations < opts.max_iterations; ++res.iterations) {
    double slope = 0.0, gnorm = 0.0;
    for (std::size_t node = 0; node < nodes; ++node)
      for (std::size_t i = 0; i < size; ++i) {
        const double p = P[node][i];
        if (p <= 0.0) {
          D[node][i] = 0.0;
          continue;
        }
        const double e = p * std::exp(F[node][i]);
        const double grad = Q[node][i] - e;
        D[node][i] = std::clamp(grad / e, -1.0, 1.0);
        slope += w[node] * vol * grad * D[node][i];
        gnorm += (w[node] * vol * grad) * (w[node] * vol * grad);
      }
    if (std::sqrt(gnorm) <= opts.tolerance && slope <= 1e-14 * std::max(1.0, std::fabs(value))) {
      res.converged = true;
      break;
    }
    double step = 1.0, next = value;
    for (int ls = 0; ls < 60; ++ls) {
      next = objective(step);
      if (next >= value + 1e-4 * step * slope) break;
      step *= 0.5;
    }
    if (!(next >= value)) throw NumericError("dual_cost: ascent failed to increase the concave objective", value);
    for (std::size_t node = 0; node < nodes; ++node)
      for (std::size_t i = 0; i < size; ++i) F[node][i] += step * D[node][i];
    value = next;
  }
  res.ascent = value;
  res.gap = std::fabs(res.closed_form - res.ascent);
  return res;
}

FlowProjection project_flow(const DensityPath& pi, const CollisionGrid& lattice, const FlowField& reference,
                            const OptimizerOptions& opts) {
  if (pi.size() == 0) throw PreconditionError("empty density path");
  if (reference.nodes() != pi.size()) throw PreconditionError("reference flow and path have different node counts");
  if (!(pi.nodes[0].grid == lattice.velocity())) throw PreconditionError("lattice and density grids differ");
  const auto w = time_weights(pi.times);
  const std::size_t cells = lattice.cells(), W = lattice.wpoints(), size = lattice.size();
  const double hd = lattice.velocity().cell_volume(), vol = lattice.volume();

  // Compressed rows of G.
  std::vector<std::uint32_t> offset(size + 1, 0), index;
  std::vector<double> coef;
  {
    std::size_t idx[2 + 2 * 16];
    double c[2 + 2 * 16];
    for (std::size_t I = 0; I < cells; ++I)
      for (std::size_t L = 0; L < cells; ++L)
        for (std::size_t m = 0; m < W; ++m) {
          const std::size_t p = (I * cells + L) * W + m;
          const int count = lattice.difference_stencil(I, L, m, idx, c);
          for (int j = 0; j < count; ++j) {
            index.push_back(static_cast<std::uint32_t>(idx[j]));
            coef.push_back(c[j]);
          }
          offset[p + 1] = static_cast<std::uint32_t>(index.size());
        }
  }

  FlowProjection res;
  res.converged = true;
  std::vector<std::vector<double>> flows;
  std::vector<double> ref(size), gphi(size);
  for (std::size_t k = 0; k < pi.size(); ++k) {
    for (std::size_t I = 0; I < cells; ++I)
      for (std::size_t L = 0; L < cells; ++L) reference.row(k, I, L, ref.data() + (I * cells + L) * W);
    const auto b = time_derivative(pi, k);
    const double scale = w[k] * vol;

    auto apply_G = [&](const Eigen::VectorXd& phi) {
      for (std::size_t p = 0; p < size; ++p) {
        double s = 0.0;
        for (std::uint32_t j = offset[p]; j < offset[p + 1]; ++j) s += coef[j] * phi(index[j]);
        gphi[p] = s;
      }
    };
    auto value = [&](const Eigen::VectorXd& phi) {
      apply_G(phi);
      double lin = 0.0, r = 0.0;
      for (std::size_t c = 0; c < cells; ++c) lin += phi(c) * b[c];
      for (std::size_t p = 0; p < size; ++p)
        if (ref[p] > 0.0) r += ref[p] * std::expm1(gphi[p]);
      const double v = hd * lin - scale * r;
      return std::isfinite(v) ? v : -kInfinity;
    };
    auto derivatives = [&](const Eigen::VectorXd& phi, Eigen::VectorXd& grad, Eigen::MatrixXd& H) {
      const double v = value(phi);
      for (std::size_t c = 0; c < cells; ++c) grad(c) = hd * b[c];
      H.setZero();
      for (std::size_t p = 0; p < size; ++p) {
        if (!(ref[p] > 0.0)) continue;
        const double e = scale * ref[p] * std::exp(gphi[p]);
        for (std::uint32_t j = offset[p]; j < offset[p + 1]; ++j) {
          grad(index[j]) -= e * coef[j];
          for (std::uint32_t l = offset[p]; l < offset[p + 1]; ++l) H(index[j], index[l]) -= e * coef[j] * coef[l];
        }
      }
      return v;
    };

    Eigen::VectorXd phi = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cells));
    double node_value = 0.0;
    if (scale > 0.0) {
      const auto r = detail::newton_ascent(value, derivatives, phi, opts.tolerance, opts.max_iterations);
      phi = r.x;
      node_value = r.value;
      res.iterations = std::max(res.iterations, r.iterations);
      res.gradient_norm = std::max(res.gradient_norm, r.gradient_norm);
      res.converged = res.converged && r.converged;
    } else {
      double bn = 0.0;
      for (double x : b) bn = std::max(bn, std::fabs(x));
      if (bn > 0.0) {
        // A jump at a zero-length panel cannot be balanced.
        node_value = kInfinity;
        res.converged = false;
      }
    }
    res.value += node_value;
    res.phi.emplace_back(phi.data(), phi.data() + phi.size());
    apply_G(phi);
    std::vector<double> q(size);
    for (std::size_t p = 0; p < size; ++p) q[p] = ref[p] > 0.0 ? ref[p] * std::exp(gphi[p]) : 0.0;
    flows.push_back(std::move(q));
  }
  res.flow = std::make_shared<DenseFlow>(lattice, std::move(flows));
  return res;
}

FlowProjection projected_cost_J1(const DensityPath& pi, const CollisionKernel& k, const OptimizerOptions& opts,
                                 Interpolation mode) {
  if (pi.size() == 0) throw PreconditionError("empty density path");
  const CollisionGrid lattice(pi.nodes[0].grid, mode);
  return project_flow(pi, lattice, KernelFlow(pi, lattice, k), opts);
}

double balance_residual(const PathPair& pp) {
  check_pair(pp);
  const auto w = time_weights(pp.pi.times);
  const std::size_t cells = pp.lattice.cells();
  const double hd = pp.lattice.velocity().cell_volume(), vol = pp.lattice.volume();
  std::vector<std::vector<double>> adj(pp.pi.size(), std::vector<double>(cells, 0.0));
  sweep(pp, nullptr, [&](std::size_t k, std::size_t I, std::size_t L, const double* q, const double*) {
    pp.lattice.difference_adjoint_row(q, I, L, adj[k]);
  });
  double worst = 0.0;
  for (std::size_t k = 0; k < pp.pi.size(); ++k) {
    const auto b = time_derivative(pp.pi, k);
    for (std::size_t c = 0; c < cells; ++c) worst = std::max(worst, std::fabs(hd * b[c] - w[k] * vol * adj[k][c]));
  }
  return worst;
}

DecompositionCheck cross_check_decomposition(const PathPair& pp, const CollisionKernel& k, const DensityGrid& m) {
  const auto w = time_weights(pp.pi.times);
  const std::size_t W = pp.lattice.wpoints();
  const int d = pp.lattice.dim();
  const auto& g = pp.lattice.velocity();
  double x[kMaxDim], y[kMaxDim];
  double QPhi = 0.0, QlogSigma = 0.0, Q1 = 0.0, Qpi1 = 0.0;
  bool infinite = false;
  sweep(pp, &k, [&](std::size_t node, std::size_t I, std::size_t L, const double* q, const double* qpi) {
    if (w[node] == 0.0) return;
    const auto& f = pp.pi.nodes[node].f;
    g.center_of(I, x);
    g.center_of(L, y);
    double phi = 0.0, ls = 0.0, q1 = 0.0, p1 = 0.0;
    for (std::size_t i = 0; i < W; ++i) {
      p1 += qpi[i];
      if (q[i] <= 0.0) continue;
      q1 += q[i];
      const double gw = gaussian_density(d, pp.lattice.wp(i));
      const double B = k.density(Vec(x, d), Vec(y, d), pp.lattice.wp(i));
      const double ff = f[I] * f[L];
      if (!(ff > 0.0) || !(B > 0.0)) {
        infinite = true;
        continue;
      }
      phi += q[i] * std::log(2.0 * q[i] / (ff * gw));
      ls += q[i] * std::log(B / gw);
    }
    QPhi += w[node] * phi;
    QlogSigma += w[node] * ls;
    Q1 += w[node] * q1;
    Qpi1 += w[node] * p1;
  });
  const double vol = pp.lattice.volume();
  DecompositionCheck r;
  r.direct = cost_I(pp, k, m);
  const double H = relative_entropy(pp.pi.nodes[0], m);
  r.decomposed = infinite || std::isinf(H) ? kInfinity : H + vol * (QPhi - QlogSigma - Q1 + Qpi1);
  r.residual = (std::isinf(r.direct) && std::isinf(r.decomposed)) ? 0.0 : std::fabs(r.direct - r.decomposed);
  return r;
}

namespace {

// Normalized Gaussian taps rho_j, |j| <= J, of variance delta on step h.
std::vector<double> gaussian_taps(double delta, double h, int& J) {
  J = static_cast<int>(std::ceil(6.0 * std::sqrt(delta) / h));
  std::vector<double> rho(2 * J + 1);
  double s = 0.0;
  for (int j = -J; j <= J; ++j) s += rho[j + J] = std::exp(-(j * h) * (j * h) / (2.0 * delta));
  for (double& r : rho) r /= s;
  return rho;
}

// Convolution along one axis of a flat tensor. Each source spreads its mass
// over the taps that stay inside the box, renormalized.
void convolve_axis(std::vector<double>& data, std::size_t stride, std::size_t length, const std::vector<double>& rho,
                   int J) {
  std::vector<double> out(data.size(), 0.0);
  const long len = static_cast<long>(length);
  for (std::size_t p = 0; p < data.size(); ++p) {
    if (data[p] == 0.0) continue;
    const long c = static_cast<long>((p / stride) % length);
    const long lo = std::max(-static_cast<long>(J), -c), hi = std::min(static_cast<long>(J), len - 1 - c);
    double norm = 0.0;
    for (long j = lo; j <= hi; ++j) norm += rho[j + J];
    const double scale = data[p] / norm;
    for (long j = lo; j <= hi; ++j) {
      const std::size_t target = static_cast<std::size_t>(static_cast<long>(p) + j * static_cast<long>(stride));
      out[target] += rho[j + J] * scale;
    }
  }
  data.swap(out);
}

DensityGrid convolve_density(const DensityGrid& f, const std::vector<double>& rho, int J) {
  DensityGrid out = f;
  std::size_t stride = 1;
  for (int a = 0; a < f.grid.dim; ++a) {
    convolve_axis(out.f, stride, static_cast<std::size_t>(f.grid.n), rho, J);
    stride *= static_cast<std::size_t>(f.grid.n);
  }
  return out;
}

}  // namespace

PathPair mollify(const PathPair& pp, double delta) {
  check_pair(pp);
  if (!(delta > 0.0 && delta < 1.0)) throw PreconditionError("mollify: bandwidth must lie in (0, 1)");
  const auto& lat = pp.lattice;
  const auto& g = lat.velocity();
  int J = 0;
  const auto rho = gaussian_taps(delta, g.spacing(), J);

  PathPair out;
  out.lattice = lat;
  out.pi = pp.pi;
  for (auto& f : out.pi.nodes) f = convolve_density(f, rho, J);

  const std::size_t cells = lat.cells(), W = lat.wpoints();
  std::vector<std::vector<double>> values(pp.pi.size(), std::vector<double>(lat.size()));
  for (std::size_t k = 0; k < pp.pi.size(); ++k) {
    auto& q = values[k];
    for (std::size_t I = 0; I < cells; ++I)
      for (std::size_t L = 0; L < cells; ++L) pp.q->row(k, I, L, q.data() + (I * cells + L) * W);
    std::size_t stride = 1;
    for (int a = 0; a < g.dim; ++a) {
      convolve_axis(q, stride, static_cast<std::size_t>(lat.K()), rho, J);
      stride *= static_cast<std::size_t>(lat.K());
    }
    for (int pass = 0; pass < 2; ++pass)
      for (int a = 0; a < g.dim; ++a) {
        convolve_axis(q, stride, static_cast<std::size_t>(g.n), rho, J);
        stride *= static_cast<std::size_t>(g.n);
      }
  }
  out.q = std::make_shared<DenseFlow>(lat, std::move(values));
  return out;
}

double fixture_constant(int dim) {
  if (dim < 1 || dim > 3) throw PreconditionError("fixture dimension must be 1, 2 or 3");
  const double sphere[] = {2.0, 2.0 * std::numbers::pi, 4.0 * std::numbers::pi};
  auto radial = [dim](double r) { return std::pow(r, dim - 1) / (1.0 + std::pow(r, dim + 3)); };
  const double integral = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
      radial, 0.0, std::numeric_limits<double>::infinity(), 15, 1e-14);
  return 1.0 / (sphere[dim - 1] * integral);
}

namespace {

// h(v) = 2^d A int du g(sqrt2 u) / (1 + (sqrt2 |v - u|)^{d+3}).
double fixture_h(int dim, double A, Vec v) {
  using boost::math::quadrature::gauss_kronrod;
  const double sqrt2 = std::numbers::sqrt2;
  auto kernel = [dim, sqrt2](double r) { return 1.0 / (1.0 + std::pow(sqrt2 * r, dim + 3)); };
  if (dim == 1) {
    auto integrand = [&](double u) {
      const double x = sqrt2 * u;
      return gaussian_density(1, Vec(&x, 1)) * kernel(std::fabs(v[0] - u));
    };
    const double split = std::clamp(v[0], -8.0, 8.0);
    double s = 0.0;
    if (split > -8.0) s += gauss_kronrod<double, 31>::integrate(integrand, -8.0, split, 10, 1e-12);
    if (split < 8.0) s += gauss_kronrod<double, 31>::integrate(integrand, split, 8.0, 10, 1e-12);
    return 2.0 * A * s;
  }
  // d = 2: polar coordinates around v, periodic trapezoid in the angle.
  const int angles = 512;
  const double vn = std::sqrt(norm_sq(v));
  auto ring = [&](double r) {
    double s = 0.0;
    for (int a = 0; a < angles; ++a) {
      const double th = 2.0 * std::numbers::pi * a / angles;
      const double x[2] = {sqrt2 * (v[0] + r * std::cos(th)), sqrt2 * (v[1] + r * std::sin(th))};
      s += gaussian_density(2, Vec(x, 2));
    }
    return r * kernel(r) * s * 2.0 * std::numbers::pi / angles;
  };
  const double lo = std::max(0.0, vn - 8.0), hi = vn + 8.0;
  return 4.0 * A * gauss_kronrod<double, 31>::integrate(ring, lo, hi, 10, 1e-12);
}

}  // namespace

PathPair fixture_pair(const FixtureOptions& opts, double radius) {
  const int d = opts.dim;
  if (!(opts.horizon > 1.0)) throw PreconditionError("fixture horizon must exceed 1");
  if (d < 1 || d > 2) throw PreconditionError("fixture supports d = 1 and d = 2");
  if (opts.early_intervals < 1 || opts.late_intervals < 1) throw PreconditionError("fixture needs time panels");
  const int n = static_cast<int>(std::lround(2.0 * radius / opts.spacing));
  const VelocityGrid grid{d, radius, n};
  const double A = fixture_constant(d);

  const auto g = sample_density(grid, [d](Vec x) { return gaussian_density(d, x); });
  const auto h = sample_density(grid, [d, A](Vec x) { return fixture_h(d, A, x); });

  PathPair pp;
  pp.lattice = CollisionGrid(grid);
  const int E = opts.early_intervals;
  for (int j = 0; j <= E; ++j) {
    const double t = static_cast<double>(j) / E;
    DensityGrid f(grid);
    for (std::size_t c = 0; c < f.f.size(); ++c) f.f[c] = (1.0 - t) * g.f[c] + t * h.f[c];
    pp.pi.times.push_back(t);
    pp.pi.nodes.push_back(std::move(f));
  }
  for (int j = 0; j <= opts.late_intervals; ++j) {
    pp.pi.times.push_back(1.0 + (opts.horizon - 1.0) * j / opts.late_intervals);
    pp.pi.nodes.push_back(h);
  }
  const std::size_t early_nodes = static_cast<std::size_t>(E) + 1;
  pp.q = std::make_shared<PointFlow>(pp.lattice, pp.pi.size(), [d, A, early_nodes](std::size_t k, Vec v, Vec vs,
                                                                                     Vec wp) {
    const double wn = std::sqrt(norm_sq(wp));
    if (k < early_nodes)
      return 0.5 * A * gaussian_density(d, v) * gaussian_density(d, vs) / (1.0 + std::pow(wn, d + 3));
    double s2 = 0.0, w[kMaxDim];
    for (int a = 0; a < d; ++a) {
      s2 += (v[a] + vs[a]) * (v[a] + vs[a]);
      w[a] = (v[a] - vs[a]) * kInvSqrt2;
    }
    return 0.5 / (1.0 + std::pow(std::sqrt(s2), d + 1)) * gaussian_density(d, Vec(w, d)) * gaussian_density(d, wp);
  });
  return pp;
}

FixtureResult unbounded_flux_fixture(const FixtureOptions& opts) {
  if (!(opts.horizon > 1.0)) throw PreconditionError("fixture horizon must exceed 1");
  if (opts.radii.empty()) throw PreconditionError("fixture needs at least one box");
  auto desc = opts.kernel;
  desc.dim = opts.dim;
  const auto k = make_kernel(desc);
  FixtureResult res;
  res.A = fixture_constant(opts.dim);
  for (double R : opts.radii) {
    auto pp = fixture_pair(opts, R);
    FixtureBox box;
    box.radius = R;
    box.n = pp.lattice.velocity().n;
    box.cost_I = cost_I(pp, k, pp.pi.nodes[0]);
    box.second_moment = second_moment_flux(pp);
    box.balance_residual = balance_residual(pp);
    res.boxes.push_back(box);
    if (res.boxes.size() == 1) res.pair = std::move(pp);
  }
  const auto& b = res.boxes;
  if (b.size() >= 3) {
    const std::size_t m = b.size();
    res.difference_ratio = std::fabs(b[m - 1].cost_I - b[m - 2].cost_I) / std::fabs(b[m - 2].cost_I - b[m - 3].cost_I);
  }
  res.min_moment_growth = kInfinity;
  for (std::size_t i = 1; i < b.size(); ++i)
    res.min_moment_growth = std::min(res.min_moment_growth, b[i].second_moment / b[i - 1].second_moment);
  if (b.size() < 2) res.min_moment_growth = 0.0;
  return res;
}

}  // namespace kacflow
