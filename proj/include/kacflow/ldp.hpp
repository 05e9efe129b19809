#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <vector>

#include "kacflow/grid.hpp"
#include "kacflow/kernels.hpp"
#include "kacflow/kinetic_solver.hpp"

namespace kacflow {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

// Flow density q_t(v, v*, w') at the time nodes of a path, sampled on a
// CollisionGrid one (I, L) row at a time.
class FlowField {
 public:
  virtual ~FlowField() = default;
  virtual std::size_t nodes() const = 0;
  virtual void row(std::size_t k, std::size_t I, std::size_t L, double* out) const = 0;
  // q at an arbitrary point; zero outside the box.
  virtual double at(std::size_t k, Vec v, Vec vs, Vec wp) const = 0;
};

class DenseFlow : public FlowField {
 public:
  DenseFlow(const CollisionGrid& lattice, std::vector<std::vector<double>> values);
  std::size_t nodes() const override { return values_.size(); }
  void row(std::size_t k, std::size_t I, std::size_t L, double* out) const override;
  // Multilinear in (v, v*, w').
  double at(std::size_t k, Vec v, Vec vs, Vec wp) const override;
  const std::vector<double>& node(std::size_t k) const { return values_[k]; }

 private:
  CollisionGrid lattice_;
  std::vector<std::vector<double>> values_;
};

// q given pointwise as q(k, v, v*, w').
class PointFlow : public FlowField {
 public:
  using Density = std::function<double(std::size_t k, Vec v, Vec vs, Vec wp)>;
  PointFlow(const CollisionGrid& lattice, std::size_t nodes, Density q);
  std::size_t nodes() const override { return nodes_; }
  void row(std::size_t k, std::size_t I, std::size_t L, double* out) const override;
  double at(std::size_t k, Vec v, Vec vs, Vec wp) const override { return q_(k, v, vs, wp); }

 private:
  CollisionGrid lattice_;
  std::size_t nodes_ = 0;
  Density q_;
};

// q_t = 1/2 f_t(v) f_t(v*) B_t(v, v*, w') for a (possibly tilted) kernel.
// Off the grid f is interpolated as M * interp(f / M), exact for Maxwellians.
class KernelFlow : public FlowField {
 public:
  KernelFlow(const DensityPath& pi, const CollisionGrid& lattice, const CollisionKernel& k);
  KernelFlow(const DensityPath& pi, const CollisionGrid& lattice, const TiltedKernel& k);
  std::size_t nodes() const override { return pi_.size(); }
  void row(std::size_t k, std::size_t I, std::size_t L, double* out) const override;
  double at(std::size_t k, Vec v, Vec vs, Vec wp) const override;

 private:
  void relative_densities();
  double density_at(std::size_t k, Vec x) const;

  DensityPath pi_;
  CollisionGrid lattice_;
  TiltedKernel::Density density_;
  std::vector<DensityGrid> relative_;  // f_t / M on the grid
  double mass_ = 1.0;                  // normalization of the grid Maxwellian
};

using ReferenceFlow = KernelFlow;

struct PathPair {
  DensityPath pi;
  CollisionGrid lattice;
  std::shared_ptr<const FlowField> q;
};

// Trapezoid weights on a time grid; repeated nodes get zero-length panels.
std::vector<double> time_weights(const std::vector<double>& times);

std::shared_ptr<const ReferenceFlow> reference_flow(const DensityPath& pi, const CollisionKernel& k,
                                                    Interpolation mode = Interpolation::linear);
PathPair reference_pair(const DensityPath& pi, const CollisionKernel& k, Interpolation mode = Interpolation::linear);
// Path of the tilted dynamics paired with q = 1/2 f f* B~.
PathPair tilted_pair(const DensityPath& pi, const TiltedKernel& k, Interpolation mode = Interpolation::linear);

// int Q(1) dt by the trapezoid rule.
double flow_mass(const PathPair& pp);
// int Q(|v + v*|^2) dt.
double second_moment_flux(const PathPair& pp);
// Marginal of q at node k on the velocity grid: which = 1 (v), 2 (v*), 3 (v'), 4 (v'*).
// Outgoing marginals are deposited in the cell containing v' (or v'*).
DensityGrid flow_marginal(const PathPair& pp, std::size_t k, int which);

// h^d sum nu rho log rho with rho = mu / nu; +inf if mu > 0 where nu = 0.
double relative_entropy(const DensityGrid& mu, const DensityGrid& nu);

double cost_J(const PathPair& pp, const CollisionKernel& k);
double cost_I(const PathPair& pp, const CollisionKernel& k, const DensityGrid& m);

struct OptimizerOptions {
  double tolerance = 1e-6;  // on the gradient norm
  int max_iterations = 10000;
};

struct DualResult {
  double closed_form = 0.0;  // G(F*) with F* = log(q / q^pi)
  double ascent = 0.0;       // concave ascent from F = 0
  double gap = 0.0;
  int iterations = 0;
  bool converged = false;
};

// sup_F Q(F) - Q^pi(e^F - 1) over lattice-valued F.
DualResult dual_cost(const PathPair& pp, const CollisionKernel& k, const OptimizerOptions& opts = {});
// G(F) for one lattice-valued F per node (F[k] has lattice().size() entries).
double dual_objective(const PathPair& pp, const CollisionKernel& k, const std::vector<std::vector<double>>& F);

struct FlowProjection {
  double value = 0.0;  // sup over phi of the projected dual functional
  std::vector<std::vector<double>> phi;  // per node, on the velocity grid
  std::shared_ptr<const DenseFlow> flow;  // reference * exp(G phi)
  double gradient_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Maximizes sum_k <phi_k, b_k> - w_k R_k(e^{G phi_k} - 1) over phi, where b_k
// is the discrete time derivative of pi and R the reference flow. The induced
// flow R e^{G phi*} satisfies the discrete balance equation with pi.
FlowProjection project_flow(const DensityPath& pi, const CollisionGrid& lattice, const FlowField& reference,
                            const OptimizerOptions& opts = {});
FlowProjection projected_cost_J1(const DensityPath& pi, const CollisionKernel& k, const OptimizerOptions& opts = {},
                                 Interpolation mode = Interpolation::linear);

// Largest nodal residual |h^d b_k(I) - w_k (G^T Q_k)(I)| over the hat basis.
double balance_residual(const PathPair& pp);

struct DecompositionCheck {
  double direct = 0.0;      // cost_I
  double decomposed = 0.0;  // H + Q(Phi) - Q(log sigma) - Q(1) + Q^pi(1)
  double residual = 0.0;
};

DecompositionCheck cross_check_decomposition(const PathPair& pp, const CollisionKernel& k, const DensityGrid& m);

// Gaussian convolution of variance delta of f in v and of q in (v, v*, w').
PathPair mollify(const PathPair& pp, double delta);

struct FixtureOptions {
  int dim = 1;
  double horizon = 2.0;
  double spacing = 0.125;
  int early_intervals = 10;  // time panels on [0, 1)
  int late_intervals = 2;    // time panels on [1, T]
  std::vector<double> radii{4.0, 8.0, 16.0};
  KernelDescriptor kernel{"paper_example", 1, {}};
};

struct FixtureBox {
  double radius = 0.0;
  int n = 0;
  double cost_I = 0.0;
  double second_moment = 0.0;
  double balance_residual = 0.0;
};

struct FixtureResult {
  double A = 0.0;
  PathPair pair;  // on the first box
  std::vector<FixtureBox> boxes;
  double difference_ratio = 0.0;  // |I_3 - I_2| / |I_2 - I_1|
  double min_moment_growth = 0.0;
};

// Normalizing constant A with A^{-1} = int dw' / (1 + |w'|^{d+3}).
double fixture_constant(int dim);
// The explicit path pair with an unbounded second-moment flux on a box of radius R.
PathPair fixture_pair(const FixtureOptions& opts, double radius);
FixtureResult unbounded_flux_fixture(const FixtureOptions& opts);

}  // namespace kacflow
