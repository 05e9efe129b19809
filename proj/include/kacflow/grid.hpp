#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "kacflow/kernels.hpp"

namespace kacflow {

// Uniform grid of n cells per axis on [-vmax, vmax]^dim; values live at the
// cell centres x_k = -vmax + (k + 1/2) h.
struct VelocityGrid {
  int dim = 1;
  double vmax = 6.0;
  int n = 64;

  double spacing() const { return 2.0 * vmax / n; }
  double center(int k) const { return -vmax + (k + 0.5) * spacing(); }
  double cell_volume() const;
  std::size_t cells() const;
  // Axis indices of flat cell `c` (first axis fastest).
  void unflatten(std::size_t c, int* idx) const;
  void center_of(std::size_t c, double* x) const;
  // Flat index of the cell containing x, or -1 outside the box.
  long locate(Vec x) const;
  bool operator==(const VelocityGrid& o) const { return dim == o.dim && vmax == o.vmax && n == o.n; }
};

enum class Interpolation { linear, cubic };

struct DensityGrid {
  VelocityGrid grid;
  std::vector<double> f;

  DensityGrid() = default;
  explicit DensityGrid(const VelocityGrid& g) : grid(g), f(g.cells(), 0.0) {}

  double mass() const;
  std::vector<double> momentum() const;
  double second_moment() const;
  double integrate(const std::function<double(Vec)>& phi) const;
  void normalize();
  // Value at an arbitrary point; zero outside the box.
  double at(Vec x, Interpolation mode = Interpolation::linear) const;
};

DensityGrid sample_density(const VelocityGrid& g, const std::function<double(Vec)>& density);
// Standard Maxwellian on the grid, renormalized to unit mass.
DensityGrid grid_maxwellian(const VelocityGrid& g);

// 1-D interpolation weights on a line of n centres with zero ghosts:
// fills up to four (index, weight) pairs and returns how many.
int interpolation_stencil(double x, double vmax, int n, Interpolation mode, int* idx, double* w);

// Lattice of incoming pairs (v, v*) on the cell centres and outgoing relative
// velocities w'_a = (m - n/2) h, |w'_a| <= vmax. Points are flattened as
// (I * cells + L) * wpoints + W.
class CollisionGrid {
 public:
  struct Stencil {
    int count = 0;
    int idx[4] = {0, 0, 0, 0};
    double w[4] = {0, 0, 0, 0};
    bool outside = false;
    double x = 0.0;
  };

  CollisionGrid() = default;
  explicit CollisionGrid(const VelocityGrid& g, Interpolation mode = Interpolation::linear);

  const VelocityGrid& velocity() const { return grid_; }
  Interpolation interpolation() const { return mode_; }
  int dim() const { return grid_.dim; }
  int K() const { return K_; }
  std::size_t cells() const { return cells_; }
  std::size_t wpoints() const { return wpoints_; }
  std::size_t sums() const { return sums_; }
  std::size_t size() const { return cells_ * cells_ * wpoints_; }
  std::size_t rows() const { return cells_ * cells_; }
  // dv dv* dw' per lattice point.
  double volume() const;
  Vec wp(std::size_t W) const { return Vec(wp_.data() + W * grid_.dim, grid_.dim); }
  void wp_index(std::size_t W, int* m) const;
  std::size_t sum_index(std::size_t I, std::size_t L) const;
  // Axis position (x_i + x_l)/2 + w'_m/sqrt(2) for s = i + l.
  const Stencil& stencil(int s, int m) const { return stencils_[static_cast<std::size_t>(s) * K_ + m]; }
  void outgoing(std::size_t I, std::size_t L, std::size_t W, double* vp, double* vsp) const;
  bool outside(std::size_t I, std::size_t L, std::size_t W) const;
  // Interpolated values of a grid field at v' (star = false) or v'* (star = true).
  double interpolate(const std::vector<double>& f, const int* s, const int* m, bool star) const;
  // (G phi) = phi(v') + phi(v'*) - phi(v) - phi(v*) for one row (I, L).
  void difference_row(const std::vector<double>& phi, std::size_t I, std::size_t L, double* out) const;
  // Adds G^T of a row of weights into `out`.
  void difference_adjoint_row(const double* weights, std::size_t I, std::size_t L, std::vector<double>& out) const;
  // Sparse row of G at (I, L, W): up to 2 + 2 * 4^d (index, coefficient) pairs.
  int difference_stencil(std::size_t I, std::size_t L, std::size_t W, std::size_t* idx, double* coef) const;

 private:
  VelocityGrid grid_;
  Interpolation mode_ = Interpolation::linear;
  int K_ = 0;
  std::size_t cells_ = 0, wpoints_ = 0, sums_ = 0;
  std::vector<double> wp_;
  std::vector<Stencil> stencils_;
};

}  // namespace kacflow
