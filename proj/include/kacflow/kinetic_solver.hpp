#pragma once

#include <functional>
#include <string>
#include <vector>

#include "kacflow/grid.hpp"
#include "kacflow/kernels.hpp"

namespace kacflow {

enum class TimeMethod { euler, rk4 };

TimeMethod parse_time_method(const std::string& s);
std::string to_string(TimeMethod m);

struct SolverOptions {
  Interpolation interpolation = Interpolation::linear;
  // Clamp, momentum and mass corrections after every step.
  bool conserve = true;
  // Largest kernel table (entries) kept in memory for time independent kernels.
  std::size_t table_limit = 8'000'000;
};

struct CollisionField {
  std::vector<double> values;    // signed, per cell
  double max_loss_rate = 0.0;    // max over cells of int lambda(v, v*) f(v*) dv*
  double truncation_rate = 0.0;  // rate of mass scattered outside the box
};

struct WeakFormCheck {
  double strong = 0.0;  // h^d sum phi * C(f)
  double weak = 0.0;    // int f f* B [phi(v') - phi(v)]
};

// Grid collision operator. The outgoing relative velocity w' runs over a grid
// of step h per axis truncated at |w'_a| <= vmax; v', v'* off the grid are
// interpolated with zero ghost cells.
class CollisionOperator {
 public:
  using Density = std::function<double(double t, Vec v, Vec vs, Vec wp)>;

  CollisionOperator(const VelocityGrid& g, const CollisionKernel& k, const SolverOptions& opts = {});
  CollisionOperator(const VelocityGrid& g, const TiltedKernel& k, const SolverOptions& opts = {});

  CollisionField apply(const DensityGrid& f, double t = 0.0) const;
  WeakFormCheck weak_form(const DensityGrid& f, const std::function<double(Vec)>& phi, double t = 0.0) const;

  const VelocityGrid& grid() const { return grid_; }
  bool time_independent() const { return time_independent_; }
  bool tabulated() const { return !gain_table_.empty(); }
  const SolverOptions& options() const { return opts_; }
  const CollisionGrid& lattice() const { return lattice_; }

 private:
  void setup();
  void loss_rates(double t, std::vector<double>& lambda, std::vector<double>& lambda_out) const;
  void gain_row(double t, std::size_t I, std::size_t L, double* out) const;

  VelocityGrid grid_;
  Density density_;
  bool time_independent_ = true;
  SolverOptions opts_;

  CollisionGrid lattice_;
  std::vector<double> gain_table_;
  std::vector<double> lambda_table_, lambda_out_table_;
};

CollisionField collision_operator(const DensityGrid& f, const CollisionKernel& k, const SolverOptions& opts = {});

struct StepDiagnostics {
  double t = 0.0;                 // end of step
  double raw_mass_drift = 0.0;    // before corrections
  double raw_momentum_drift = 0.0;
  double clamped_mass = 0.0;      // mass removed by clamping negatives
  double mass_drift = 0.0;        // after corrections
  double momentum_drift = 0.0;
  double truncation_rate = 0.0;
};

struct DensityPath {
  std::vector<double> times;
  std::vector<DensityGrid> nodes;
  double dt = 0.0;
  TimeMethod method = TimeMethod::euler;
  std::vector<StepDiagnostics> steps;
  double cumulative_mass_correction = 0.0;
  double cumulative_momentum_correction = 0.0;

  std::size_t size() const { return nodes.size(); }
  const DensityGrid& final_density() const { return nodes.back(); }
};

DensityPath evolve(const DensityGrid& f0, const CollisionOperator& op, double T, double dt, TimeMethod method);
DensityPath evolve(const DensityGrid& f0, const CollisionKernel& k, double T, double dt, TimeMethod method,
                   const SolverOptions& opts = {});
// B~_t is evaluated at the step midpoint (euler) or at the stage times (rk4).
DensityPath evolve_tilted(const DensityGrid& f0, const TiltedKernel& k, double T, double dt, TimeMethod method,
                          const SolverOptions& opts = {});

double l1_distance(const DensityGrid& f, const DensityGrid& g);

}  // namespace kacflow
