#pragma once

#include <cmath>
#include <numbers>

#include <memory>

#include "kacflow/kernels.hpp"
#include "kacflow/ldp.hpp"
#include "kacflow/rng.hpp"

namespace kactest {

// B = phi(V) psi(|w|^2 + |w'|^2) g(w') with V = (v+v*)/sqrt(2), w = (v-v*)/sqrt(2).
// Satisfies detailed balance; the rate has no closed form.
inline kacflow::CollisionKernel symmetric_custom_kernel(int dim) {
  using namespace kacflow;
  CollisionKernel k;
  k.name = "custom_symmetric";
  k.dim = dim;
  k.density = [dim](Vec v, Vec vs, Vec wp) {
    double V2 = 0.0, w2 = 0.0, Vsum = 0.0;
    for (int a = 0; a < dim; ++a) {
      const double V = (v[a] + vs[a]) / std::numbers::sqrt2;
      const double w = (v[a] - vs[a]) / std::numbers::sqrt2;
      V2 += V * V;
      Vsum += V;
      w2 += w * w;
    }
    const double phi = 1.0 + 0.5 * std::cos(Vsum) * std::exp(-0.1 * V2);
    const double psi = 1.0 + 1.0 / (1.0 + w2 + norm_sq(wp));
    return phi * psi * gaussian_density(dim, wp);
  };
  const double g0 = std::pow(2.0 * std::numbers::pi, -0.5 * dim);
  k.envelope = {3.0 * g0, 0.5, 0.0, 0.0};
  k.tail = {3.0 * std::pow(2.0, 0.5 * dim), 0.25, 0.0};
  k.lower_bound = {0.5 * g0, 0.5};
  k.rate_bound = 3.0;
  k.detailed_balance = true;
  return make_custom_kernel(k);
}

// Smooth positive path: a two-bump mixture whose centres drift linearly in time,
// corrected to keep mass and momentum constant.
inline kacflow::DensityPath random_density_path(const kacflow::VelocityGrid& g, int intervals, double T,
                                                kacflow::Rng& rng) {
  using namespace kacflow;
  const double c1 = -1.0 + 0.5 * uniform01(rng), c2 = 0.5 + uniform01(rng);
  const double s1 = 0.5 + uniform01(rng), s2 = 0.5 + uniform01(rng);
  const double drift = 0.5 * (uniform01(rng) - 0.5), weight = 0.3 + 0.4 * uniform01(rng);
  DensityPath path;
  double p0 = 0.0;
  for (int j = 0; j <= intervals; ++j) {
    const double t = T * j / intervals;
    auto f = sample_density(g, [&](Vec x) {
      double a = 0.0, b = 0.0;
      for (int i = 0; i < g.dim; ++i) {
        a += (x[i] - c1 - drift * t) * (x[i] - c1 - drift * t) / s1;
        b += (x[i] - c2 + drift * t) * (x[i] - c2 + drift * t) / s2;
      }
      return weight * std::exp(-0.5 * a) / std::pow(s1, 0.5 * g.dim) +
             (1.0 - weight) * std::exp(-0.5 * b) / std::pow(s2, 0.5 * g.dim);
    });
    // f <- s f (1 + c v_0) keeps unit mass and the initial momentum exactly.
    const double m = f.mass(), p = f.momentum()[0];
    const double s2 = f.integrate([](Vec x) { return x[0] * x[0]; });
    if (j == 0) p0 = p / m;
    const double c = (p0 * m - p) / (s2 - p0 * p);
    double x[kMaxDim];
    for (std::size_t i = 0; i < f.f.size(); ++i) {
      g.center_of(i, x);
      f.f[i] *= 1.0 + c * x[0];
    }
    f.normalize();
    path.times.push_back(t);
    path.nodes.push_back(std::move(f));
  }
  path.dt = T / intervals;
  return path;
}

// q = q^pi exp(eta) with a smooth bounded random eta(t, v, v*, w').
inline kacflow::PathPair random_path_pair(const kacflow::DensityPath& pi, const kacflow::CollisionKernel& k,
                                          kacflow::Rng& rng, double amplitude = 0.5) {
  using namespace kacflow;
  const double a = amplitude * (0.5 + uniform01(rng)), b1 = 0.5 + uniform01(rng), b2 = 0.5 + uniform01(rng);
  const double b3 = uniform01(rng), ph = 6.0 * uniform01(rng);
  const CollisionGrid lattice(pi.nodes[0].grid);
  auto density = k.density;
  auto q = std::make_shared<PointFlow>(lattice, pi.size(), [=](std::size_t n, Vec v, Vec vs, Vec wp) {
    const auto& f = pi.nodes[n];
    const double t = pi.times[n];
    const double eta = a * std::sin(b1 * v[0] - b3 * vs[0] + ph + t) * std::cos(b2 * wp[0]);
    return 0.5 * f.at(v) * f.at(vs) * density(v, vs, wp) * std::exp(eta);
  });
  return {pi, lattice, q};
}

// Two Gaussian bumps at +-1.5 on the first axis.
inline kacflow::DensityGrid bimodal(const kacflow::VelocityGrid& g) {
  using namespace kacflow;
  auto f = sample_density(g, [](Vec x) {
    double a = 0.0, b = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double s = i == 0 ? 1.5 : 0.0;
      a += (x[i] - s) * (x[i] - s);
      b += (x[i] + s) * (x[i] + s);
    }
    return std::exp(-a) + std::exp(-b);
  });
  f.normalize();
  return f;
}

// Positive density with smooth random Maxwell-relative part.
inline kacflow::DensityGrid random_positive(const kacflow::VelocityGrid& g, kacflow::Rng& rng) {
  using namespace kacflow;
  const double a = 0.3 + 0.5 * uniform01(rng), b = 0.5 + uniform01(rng), c = 6.0 * uniform01(rng);
  const double s = 0.6 + 0.8 * uniform01(rng), shift = uniform01(rng) - 0.5;
  auto f = sample_density(g, [&](Vec x) {
    double r = 0.0, osc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      r += (x[i] - shift) * (x[i] - shift);
      osc += std::sin(b * x[i] + c + i);
    }
    return std::exp(-0.5 * r / s) * (1.0 + a * osc / x.size());
  });
  f.normalize();
  return f;
}

// q -> c q on every node.
class ScaledFlow : public kacflow::FlowField {
 public:
  ScaledFlow(std::shared_ptr<const kacflow::FlowField> base, double c, std::size_t width)
      : base_(std::move(base)), c_(c), width_(width) {}
  std::size_t nodes() const override { return base_->nodes(); }
  void row(std::size_t k, std::size_t I, std::size_t L, double* out) const override {
    base_->row(k, I, L, out);
    for (std::size_t w = 0; w < width_; ++w) out[w] *= c_;
  }
  double at(std::size_t k, kacflow::Vec v, kacflow::Vec vs, kacflow::Vec wp) const override {
    return c_ * base_->at(k, v, vs, wp);
  }

 private:
  std::shared_ptr<const kacflow::FlowField> base_;
  double c_;
  std::size_t width_;
};

inline kacflow::PathPair scaled(const kacflow::PathPair& pp, double c) {
  return {pp.pi, pp.lattice, std::make_shared<ScaledFlow>(pp.q, c, pp.lattice.wpoints())};
}

}  // namespace kactest
