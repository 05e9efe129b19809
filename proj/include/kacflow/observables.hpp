#pragma once

#include <functional>
#include <iosfwd>
#include <vector>

#include "kacflow/flow.hpp"
#include "kacflow/grid.hpp"
#include "kacflow/walk.hpp"

namespace kacflow {

struct Histogram {
  VelocityGrid grid;
  std::vector<double> mass;  // per cell
  double overflow = 0.0;
};

struct EmpiricalMeasure {
  int dim = 1;
  std::vector<double> points;  // N * dim

  std::size_t size() const { return points.size() / static_cast<std::size_t>(dim); }
  Vec point(std::size_t i) const { return Vec(points.data() + i * dim, dim); }
  double weight() const { return 1.0 / static_cast<double>(size()); }
  std::vector<double> mean() const;
  double integrate(const std::function<double(Vec)>& f) const;
  // Each particle contributes wholly to the cell containing it.
  Histogram histogram(const VelocityGrid& grid) const;
};

EmpiricalMeasure empirical_measure(const ParticleState& s);

// phi(t, v) with its time derivative. `time_degree` >= 0 declares phi
// polynomial of that degree in t, which selects Gauss-Legendre integration.
struct BalanceTestFunction {
  std::function<double(double t, Vec v)> phi;
  std::function<double(double t, Vec v)> dphi_dt;
  int time_degree = -1;
};

// Largest absolute balance residual over the checkpoints (times in (t0, T]).
double check_balance(const Trajectory& traj, const FlowRecord& flow, const BalanceTestFunction& f,
                     const std::vector<double>& checkpoints);

// Weighted point cloud or cell-uniform grid density.
class Measure {
 public:
  static Measure atoms(int dim, std::vector<double> points, std::vector<double> weights = {});
  static Measure from_empirical(const EmpiricalMeasure& m);
  static Measure cells(const DensityGrid& f);

  int dim() const { return dim_; }
  bool is_cells() const { return cells_; }

 private:
  friend struct W1Access;
  int dim_ = 1;
  bool cells_ = false;
  std::vector<double> points_;
  std::vector<double> weights_;
  DensityGrid grid_;
};

struct W1Options {
  int directions = 64;
  std::uint64_t seed = 0x77317365656421ULL;
};

struct W1Result {
  double value = 0.0;
  double standard_error = 0.0;
  int directions = 0;
};

// Exact in d = 1, sliced over random directions for d >= 2.
W1Result wasserstein1(const Measure& mu, const Measure& nu, const W1Options& opts = {});

void write_histogram_csv(std::ostream& os, const Histogram& h);

}  // namespace kacflow
