#include "kacflow/grid.hpp"

#include <cmath>
#include <numbers>

#include "kacflow/errors.hpp"

namespace kacflow {

double VelocityGrid::cell_volume() const { return std::pow(spacing(), dim); }

std::size_t VelocityGrid::cells() const {
  std::size_t c = 1;
  for (int a = 0; a < dim; ++a) c *= static_cast<std::size_t>(n);
  return c;
}

void VelocityGrid::unflatten(std::size_t c, int* idx) const {
  for (int a = 0; a < dim; ++a) {
    idx[a] = static_cast<int>(c % n);
    c /= n;
  }
}

void VelocityGrid::center_of(std::size_t c, double* x) const {
  int idx[kMaxDim];
  unflatten(c, idx);
  for (int a = 0; a < dim; ++a) x[a] = center(idx[a]);
}

long VelocityGrid::locate(Vec x) const {
  const double h = spacing();
  long flat = 0, stride = 1;
  for (int a = 0; a < dim; ++a) {
    if (!(x[a] >= -vmax && x[a] < vmax)) return -1;
    long k = static_cast<long>(std::floor((x[a] + vmax) / h));
    if (k >= n) k = n - 1;
    flat += k * stride;
    stride *= n;
  }
  return flat;
}

double DensityGrid::mass() const {
  double s = 0.0;
  for (double v : f) s += v;
  return s * grid.cell_volume();
}

std::vector<double> DensityGrid::momentum() const {
  std::vector<double> p(grid.dim, 0.0);
  double x[kMaxDim];
  for (std::size_t c = 0; c < f.size(); ++c) {
    grid.center_of(c, x);
    for (int a = 0; a < grid.dim; ++a) p[a] += x[a] * f[c];
  }
  for (double& v : p) v *= grid.cell_volume();
  return p;
}

double DensityGrid::second_moment() const {
  return integrate([](Vec x) { return norm_sq(x); });
}

double DensityGrid::integrate(const std::function<double(Vec)>& phi) const {
  double s = 0.0;
  double x[kMaxDim];
  for (std::size_t c = 0; c < f.size(); ++c) {
    if (f[c] == 0.0) continue;
    grid.center_of(c, x);
    s += phi(Vec(x, grid.dim)) * f[c];
  }
  return s * grid.cell_volume();
}

void DensityGrid::normalize() {
  const double m = mass();
  if (m > 0.0)
    for (double& v : f) v /= m;
}

int interpolation_stencil(double x, double vmax, int n, Interpolation mode, int* idx, double* w) {
  const double h = 2.0 * vmax / n;
  if (!(x >= -vmax && x <= vmax)) return 0;
  const double s = (x + vmax) / h - 0.5;  // fractional index
  const double fl = std::floor(s);
  const int k = static_cast<int>(fl);
  const double u = s - fl;
  int count = 0;
  auto push = [&](int j, double wt) {
    if (j >= 0 && j < n && wt != 0.0) {
      idx[count] = j;
      w[count] = wt;
      ++count;
    }
  };
  if (mode == Interpolation::linear) {
    push(k, 1.0 - u);
    push(k + 1, u);
  } else {
    // Keys cubic convolution, a = -1/2.
    const double u2 = u * u, u3 = u2 * u;
    push(k - 1, -0.5 * u3 + u2 - 0.5 * u);
    push(k, 1.5 * u3 - 2.5 * u2 + 1.0);
    push(k + 1, -1.5 * u3 + 2.0 * u2 + 0.5 * u);
    push(k + 2, 0.5 * u3 - 0.5 * u2);
  }
  return count;
}

double DensityGrid::at(Vec x, Interpolation mode) const {
  const int d = grid.dim;
  int idx[kMaxDim][4];
  double w[kMaxDim][4];
  int cnt[kMaxDim];
  for (int a = 0; a < d; ++a) {
    cnt[a] = interpolation_stencil(x[a], grid.vmax, grid.n, mode, idx[a], w[a]);
    if (cnt[a] == 0) return 0.0;
  }
  if (d == 1) {
    double s = 0.0;
    for (int p = 0; p < cnt[0]; ++p) s += w[0][p] * f[idx[0][p]];
    return s;
  }
  double s = 0.0;
  int pos[kMaxDim] = {0, 0, 0};
  while (true) {
    std::size_t flat = 0, stride = 1;
    double wt = 1.0;
    for (int a = 0; a < d; ++a) {
      flat += static_cast<std::size_t>(idx[a][pos[a]]) * stride;
      stride *= grid.n;
      wt *= w[a][pos[a]];
    }
    s += wt * f[flat];
    int a = 0;
    while (a < d && ++pos[a] == cnt[a]) pos[a++] = 0;
    if (a == d) break;
  }
  return s;
}

DensityGrid sample_density(const VelocityGrid& g, const std::function<double(Vec)>& density) {
  DensityGrid out(g);
  double x[kMaxDim];
  for (std::size_t c = 0; c < out.f.size(); ++c) {
    g.center_of(c, x);
    out.f[c] = density(Vec(x, g.dim));
  }
  return out;
}

DensityGrid grid_maxwellian(const VelocityGrid& g) {
  DensityGrid m = sample_density(g, [&](Vec x) { return gaussian_density(g.dim, x); });
  m.normalize();
  return m;
}

namespace {

constexpr double kInvSqrt2 = 1.0 / std::numbers::sqrt2;

std::size_t power(std::size_t b, int d) {
  std::size_t r = 1;
  for (int a = 0; a < d; ++a) r *= b;
  return r;
}

}  // namespace

CollisionGrid::CollisionGrid(const VelocityGrid& g, Interpolation mode) : grid_(g), mode_(mode) {
  const int d = g.dim, n = g.n;
  if (d < 1 || d > 2) throw PreconditionError("collision lattices support d = 1 and d = 2");
  const double h = g.spacing();
  const int half = n / 2;
  K_ = 2 * half + 1;
  cells_ = g.cells();
  wpoints_ = power(K_, d);
  sums_ = power(2 * n - 1, d);

  wp_.resize(wpoints_ * d);
  int m[kMaxDim];
  for (std::size_t W = 0; W < wpoints_; ++W) {
    wp_index(W, m);
    for (int a = 0; a < d; ++a) wp_[W * d + a] = (m[a] - half) * h;
  }
  stencils_.assign(static_cast<std::size_t>(2 * n - 1) * K_, {});
  for (int s = 0; s < 2 * n - 1; ++s)
    for (int j = 0; j < K_; ++j) {
      auto& st = stencils_[static_cast<std::size_t>(s) * K_ + j];
      st.x = -g.vmax + (0.5 * s + 0.5) * h + (j - half) * h * kInvSqrt2;
      st.outside = !(st.x >= -g.vmax && st.x <= g.vmax);
      st.count = interpolation_stencil(st.x, g.vmax, n, mode, st.idx, st.w);
    }
}

double CollisionGrid::volume() const { return std::pow(grid_.spacing(), 3 * grid_.dim); }

void CollisionGrid::wp_index(std::size_t W, int* m) const {
  for (int a = 0; a < grid_.dim; ++a) {
    m[a] = static_cast<int>(W % static_cast<std::size_t>(K_));
    W /= static_cast<std::size_t>(K_);
  }
}

std::size_t CollisionGrid::sum_index(std::size_t I, std::size_t L) const {
  int i[kMaxDim], l[kMaxDim];
  grid_.unflatten(I, i);
  grid_.unflatten(L, l);
  std::size_t S = 0, stride = 1;
  for (int a = 0; a < grid_.dim; ++a) {
    S += static_cast<std::size_t>(i[a] + l[a]) * stride;
    stride *= static_cast<std::size_t>(2 * grid_.n - 1);
  }
  return S;
}

void CollisionGrid::outgoing(std::size_t I, std::size_t L, std::size_t W, double* vp, double* vsp) const {
  int i[kMaxDim], l[kMaxDim], m[kMaxDim];
  grid_.unflatten(I, i);
  grid_.unflatten(L, l);
  wp_index(W, m);
  for (int a = 0; a < grid_.dim; ++a) {
    vp[a] = stencil(i[a] + l[a], m[a]).x;
    vsp[a] = stencil(i[a] + l[a], K_ - 1 - m[a]).x;
  }
}

bool CollisionGrid::outside(std::size_t I, std::size_t L, std::size_t W) const {
  int i[kMaxDim], l[kMaxDim], m[kMaxDim];
  grid_.unflatten(I, i);
  grid_.unflatten(L, l);
  wp_index(W, m);
  for (int a = 0; a < grid_.dim; ++a)
    if (stencil(i[a] + l[a], m[a]).outside || stencil(i[a] + l[a], K_ - 1 - m[a]).outside) return true;
  return false;
}

double CollisionGrid::interpolate(const std::vector<double>& f, const int* s, const int* m, bool star) const {
  const int d = grid_.dim;
  const Stencil* st[kMaxDim] = {};
  for (int a = 0; a < d; ++a) {
    st[a] = &stencil(s[a], star ? K_ - 1 - m[a] : m[a]);
    if (st[a]->count == 0) return 0.0;
  }
  double sum = 0.0;
  if (d == 1) {
    for (int p = 0; p < st[0]->count; ++p) sum += st[0]->w[p] * f[st[0]->idx[p]];
    return sum;
  }
  for (int p = 0; p < st[0]->count; ++p)
    for (int q = 0; q < st[1]->count; ++q)
      sum += st[0]->w[p] * st[1]->w[q] * f[st[0]->idx[p] + static_cast<std::size_t>(st[1]->idx[q]) * grid_.n];
  return sum;
}

int CollisionGrid::difference_stencil(std::size_t I, std::size_t L, std::size_t W, std::size_t* idx,
                                      double* coef) const {
  const int d = grid_.dim;
  int i[kMaxDim], l[kMaxDim], m[kMaxDim];
  grid_.unflatten(I, i);
  grid_.unflatten(L, l);
  wp_index(W, m);
  int count = 0;
  idx[count] = I;
  coef[count++] = -1.0;
  idx[count] = L;
  coef[count++] = -1.0;
  for (bool star : {false, true}) {
    const Stencil* st[kMaxDim] = {};
    bool empty = false;
    for (int a = 0; a < d; ++a) {
      st[a] = &stencil(i[a] + l[a], star ? K_ - 1 - m[a] : m[a]);
      empty = empty || st[a]->count == 0;
    }
    if (empty) continue;
    if (d == 1) {
      for (int p = 0; p < st[0]->count; ++p) {
        idx[count] = st[0]->idx[p];
        coef[count++] = st[0]->w[p];
      }
    } else {
      for (int p = 0; p < st[0]->count; ++p)
        for (int q = 0; q < st[1]->count; ++q) {
          idx[count] = st[0]->idx[p] + static_cast<std::size_t>(st[1]->idx[q]) * grid_.n;
          coef[count++] = st[0]->w[p] * st[1]->w[q];
        }
    }
  }
  return count;
}

void CollisionGrid::difference_row(const std::vector<double>& phi, std::size_t I, std::size_t L, double* out) const {
  const int d = grid_.dim;
  int i[kMaxDim], l[kMaxDim], s[kMaxDim], m[kMaxDim];
  grid_.unflatten(I, i);
  grid_.unflatten(L, l);
  for (int a = 0; a < d; ++a) s[a] = i[a] + l[a];
  const double base = phi[I] + phi[L];
  for (std::size_t W = 0; W < wpoints_; ++W) {
    wp_index(W, m);
    out[W] = interpolate(phi, s, m, false) + interpolate(phi, s, m, true) - base;
  }
}

void CollisionGrid::difference_adjoint_row(const double* weights, std::size_t I, std::size_t L,
                                           std::vector<double>& out) const {
  std::size_t idx[2 + 2 * 16];
  double coef[2 + 2 * 16];
  for (std::size_t W = 0; W < wpoints_; ++W) {
    if (weights[W] == 0.0) continue;
    const int c = difference_stencil(I, L, W, idx, coef);
    for (int k = 0; k < c; ++k) out[idx[k]] += coef[k] * weights[W];
  }
}

}  // namespace kacflow
