#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "kacflow/grid.hpp"
#include "kacflow/kernels.hpp"
#include "kacflow/ldp.hpp"

namespace kacflow {

// h = f / M with M the grid Maxwellian.
struct MaxwellRelativeDensity {
  DensityGrid M;
  DensityGrid h;

  // int h dM
  double mass() const;
  // Interpolated h; zero outside the box.
  double at(Vec x, Interpolation mode = Interpolation::linear) const { return h.at(x, mode); }
};

MaxwellRelativeDensity maxwell_relative(const DensityGrid& f);

// Points (V_a, w_b, w'_m) with all three on the cell centres. The velocities
// v = (V + w)/sqrt2, v* = (V - w)/sqrt2 and v', v'* lie on the line
// L_j = (j + 1 - n) h / sqrt2, j = 0 .. 2n - 2, per axis:
//   v = L_{a+b}, v* = L_{a-b+n-1}, v' = L_{a+m}, v'* = L_{a-m+n-1}.
// A point is kept when all four lie where the interpolation stencil is
// complete: [x_0, x_{n-1}] (linear) or [x_1, x_{n-2}] (cubic) on every axis.
class RotatedLattice {
 public:
  RotatedLattice(const VelocityGrid& g, const CollisionKernel& k, Interpolation mode = Interpolation::linear);

  const VelocityGrid& velocity() const { return grid_; }
  Interpolation interpolation() const { return mode_; }
  bool inside(int j) const;
  int line() const { return 2 * grid_.n - 1; }
  double coordinate(int j) const;
  // Flat index of v and of v* on the (2n-1)^d line lattice, -1 when dropped.
  long sum(std::size_t a, std::size_t b) const { return sum_[a * cells_ + b]; }
  long difference(std::size_t a, std::size_t b) const { return diff_[a * cells_ + b]; }
  // Inverse of (a, b) -> (a + b, a - b + n - 1) on one axis.
  static void centres(int j, int js, int n, int& a, int& b);

  std::size_t cells() const { return cells_; }
  std::size_t points() const { return cells_ * cells_ * cells_; }
  std::size_t line_points() const { return line_points_; }
  // mu_a mu_b mu_m sigma(V_a, w_b, w'_m), zero on dropped points.
  const std::vector<double>& weight() const { return weight_; }
  // Grid Maxwellian mass of the dropped points.
  double dropped_mass() const { return dropped_; }
  // Velocities of flat line index j.
  void line_point(long j, double* x) const;
  void point(std::size_t a, std::size_t b, std::size_t m, double* v, double* vs, double* wp) const;
  // Interpolated h on the line lattice; -1 marks dropped points.
  std::vector<double> sample(const MaxwellRelativeDensity& h) const;

 private:
  VelocityGrid grid_;
  Interpolation mode_ = Interpolation::linear;
  std::size_t cells_ = 0, line_points_ = 0;
  std::vector<long> sum_, diff_;
  std::vector<double> weight_;
  double dropped_ = 0.0;
};

struct DirichletForm {
  double value = 0.0;       // square form
  double difference = 0.0;  // h h* - sqrt(h h* h' h'*) form
  double gap = 0.0;
  double dropped_mass = 0.0;
};

// Throws PreconditionError unless the kernel passes detailed_balance_check at 1e-8.
void require_detailed_balance(const CollisionKernel& k);

DirichletForm dirichlet_form(const DensityGrid& f, const CollisionKernel& k);
DirichletForm dirichlet_form(const DensityGrid& f, const RotatedLattice& lattice);

struct VariationalDirichlet {
  double value = 0.0;
  int iterations = 0;
  double gradient_norm = 0.0;
  bool converged = false;
};

// sup over phi on the line lattice of
//   int M M M sigma h h* (1 - exp(phi' + phi'* - phi - phi*)).
VariationalDirichlet dirichlet_sup(const DensityGrid& f, const RotatedLattice& lattice,
                                   const OptimizerOptions& opts = {});

// Interpolation follows the lattice of the pair.
double kinematic_term(const PathPair& pp, const CollisionKernel& k);
double kinematic_term(const PathPair& pp, const RotatedLattice& lattice);

// Test functions of (node, v, v*, v', v'*).
using PairFunction = std::function<double(std::size_t k, Vec v, Vec vs, Vec vp, Vec vsp)>;

// 2 Q(F) - Q^pi([e^F - 1] / alpha + [e^{F o Y} - 1] alpha o Y), Y swapping
// incoming and outgoing pairs. Bounded by the kinematic term for F >= 0 and
// for any F when alpha = sqrt(h h* / h' h'*).
double kinematic_bracket(const PathPair& pp, const RotatedLattice& lattice, const PairFunction& F,
                         const PairFunction& alpha);

struct GradientFlowCheck {
  double J = 0.0;
  std::vector<double> H_path;
  std::vector<double> D_path;
  double D_integral = 0.0;
  double R = 0.0;
  double residual = 0.0;  // |J - (H_T - H_0)/2 - int D / 2 - R / 2|
  double relative = 0.0;  // residual over the largest of the four terms
};

GradientFlowCheck gradient_flow_residual(const PathPair& pp, const CollisionKernel& k);

struct EdiCheck {
  double lhs = 0.0;  // H(pi_T) + int D + R
  double rhs = 0.0;  // H(m)
  double slack = 0.0;
  std::vector<double> H_path;
  std::vector<double> D_path;
  double R = 0.0;
  double max_entropy_increase = 0.0;  // over solver steps
};

// Solver, flow and lattice share the interpolation mode.
EdiCheck edi_check(const DensityGrid& m, const CollisionKernel& k, double T, double dt,
                   TimeMethod method = TimeMethod::rk4, Interpolation mode = Interpolation::cubic);

}  // namespace kacflow
