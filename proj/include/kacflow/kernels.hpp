#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kacflow/rng.hpp"

namespace kacflow {

using Vec = std::span<const double>;
using MutVec = std::span<double>;

inline constexpr int kMaxDim = 3;

// Velocities handled by the walk live on the dyadic lattice 2^-40 Z^d so that
// sums and differences of two velocities are exact.
inline constexpr double kLatticeScale = 1099511627776.0;  // 2^40
double snap(double x);

// v' = (v+v*)/2 + w'/sqrt(2) snapped to the lattice, v'* = (v+v*) - v'.
void outgoing_pair(Vec v, Vec vs, Vec wp, MutVec vp, MutVec vsp);
// Inverse map: w' of an outgoing pair.
void relative_velocity(Vec a, Vec b, MutVec w);

// Upper envelope amp * (1 + slope*|v-v*|^gamma) * exp(-decay*|w'|^2).
struct Envelope {
  double amp = 0.0;
  double decay = 0.0;
  double slope = 1.0;
  double gamma = 0.0;
  double prefactor(double rel_speed) const;
  double operator()(double rel_speed, double wp_sq) const;
};

// int B e^{eta |w'|^2} dw' <= C (1 + |v-v*|^gamma)
struct TailParams {
  double C = 0.0;
  double eta = 0.0;
  double gamma = 0.0;
};

// B >= c0 * exp(-rate * |w'|^2)
struct LowerBound {
  double c0 = 0.0;
  double rate = 0.0;
};

struct CollisionKernel {
  using Density = std::function<double(Vec v, Vec vs, Vec wp)>;
  using Rate = std::function<double(Vec v, Vec vs)>;

  std::string name;
  int dim = 1;
  Density density;
  Envelope envelope;
  TailParams tail;
  LowerBound lower_bound;
  Rate closed_form_lambda;  // empty when unknown
  std::optional<double> rate_bound;
  bool detailed_balance = false;
};

struct KernelDescriptor {
  std::string name;
  int dim = 1;
  nlohmann::json params = nlohmann::json::object();
};

KernelDescriptor parse_kernel_descriptor(const nlohmann::json& j);
nlohmann::json to_json(const KernelDescriptor& d);

struct ValidationOptions {
  int samples = 1000;
  std::uint64_t seed = 0x6b61636b65726e6cULL;
};

CollisionKernel make_kernel(const KernelDescriptor& spec, const ValidationOptions& opts = {});

// Validates a programmatically supplied kernel. Throws ConfigError when the
// envelope is missing and ValidationError at the first failing sample.
CollisionKernel make_custom_kernel(CollisionKernel draft, const ValidationOptions& opts = {});
void validate_kernel(const CollisionKernel& k, int samples, Rng& rng);

struct QuadratureResult {
  double value = 0.0;
  double rel_change = 0.0;
  int points = 0;  // per axis
};

// int f(w) dw over R^dim for integrands dominated by exp(-decay |w|^2):
// trapezoid sums on a truncated cube, halving the step until the relative
// change is below rel_tol. Throws NumericError otherwise.
QuadratureResult integrate_outgoing(int dim, double decay, const std::function<double(Vec)>& f,
                                    double rel_tol = 1e-8);

double scattering_rate(const CollisionKernel& k, Vec v, Vec vs);
double diagonal_rate(const CollisionKernel& k, Vec v);

// Rejection sampling of (v', v'*). Returns the number of proposals used.
int sample_outgoing(const CollisionKernel& k, Rng& rng, Vec v, Vec vs, MutVec vp, MutVec vsp);

double detailed_balance_check(const CollisionKernel& k, int n_samples, Rng& rng);

// Time dependent kernel with a uniform bound on its scattering rate.
struct TiltedKernel {
  using Density = std::function<double(double t, Vec v, Vec vs, Vec wp)>;
  using Rate = std::function<double(double t, Vec v, Vec vs)>;

  std::string name;
  int dim = 1;
  Density density;
  Envelope envelope;
  Rate closed_form_lambda;
  double rate_bound = 0.0;
  bool time_independent = true;
};

TiltedKernel as_tilted(const CollisionKernel& k, double rate_bound);
TiltedKernel as_tilted(const CollisionKernel& k);

// B~ = (1 + a(t) exp(-|v-v*|^2 / (2 range^2))) * g_s(w') where g_s is the
// centred Gaussian density of variance `spread` and a(t) = a (1 + b sin(2 pi t)).
struct BumpTilt {
  double amplitude = 1.0;
  double range = 1.0;
  double spread = 1.0;
  double modulation = 0.0;
};
TiltedKernel bump_tilt(int dim, const BumpTilt& p);

// c * B for a kernel with bounded rate.
TiltedKernel scaled_tilt(const CollisionKernel& k, double c);

TiltedKernel make_tilted_kernel(const nlohmann::json& j, int dim);

double scattering_rate(const TiltedKernel& k, double t, Vec v, Vec vs);
int sample_outgoing(const TiltedKernel& k, double t, Rng& rng, Vec v, Vec vs, MutVec vp, MutVec vsp);

// Standard Gaussian density on R^dim.
double gaussian_density(int dim, Vec x, double variance = 1.0);
double norm_sq(Vec x);

}  // namespace kacflow
