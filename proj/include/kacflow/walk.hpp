#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include <json.hpp>

#include "kacflow/flow.hpp"
#include "kacflow/kernels.hpp"
#include "kacflow/rng.hpp"

namespace kacflow {

// Zero-mean mixture of isotropic Gaussians.
struct InitialDensity {
  struct Component {
    double weight = 1.0;
    std::vector<double> mean;
    double variance = 1.0;
  };

  int dim = 1;
  std::vector<Component> components;

  static InitialDensity gaussian(int dim, double variance = 1.0);
  bool is_centered_gaussian() const;
  double density(Vec x) const;
  double log_density(Vec x) const;
  void sample(Rng& rng, MutVec out) const;
  std::vector<double> mean() const;
  double second_moment() const;
};

InitialDensity parse_initial_density(const nlohmann::json& j, int dim);

// Largest gamma in {2^-k} with m(v) >= gamma exp(-|v|^2/gamma) on a radial
// probe set, or 0 if none passes.
double gaussian_lower_bound_constant(const InitialDensity& m);

struct ParticleState {
  double time = 0.0;
  int dim = 1;
  std::vector<double> velocities;  // N * dim, row major

  std::size_t size() const { return velocities.size() / static_cast<std::size_t>(dim); }
  Vec velocity(std::size_t i) const { return Vec(velocities.data() + i * dim, dim); }
  MutVec velocity(std::size_t i) { return MutVec(velocities.data() + i * dim, dim); }
  std::vector<double> momentum() const;
  double momentum_norm() const;
};

// Snaps coordinates to the velocity lattice and sets the last particle so the
// total momentum is exactly zero.
void center_exactly(ParticleState& s);

enum class InitMode { gaussian_project, mcmc };

struct McmcOptions {
  std::optional<std::size_t> pair_updates;  // default 50 * N
  double step = 0.5;                        // standard deviation of xi
};

ParticleState sample_initial(const InitialDensity& m, std::size_t n, InitMode mode, Rng& rng,
                             const McmcOptions& mcmc = {});

struct Trajectory {
  ParticleState initial;
  std::shared_ptr<const EventLog> events;
  double horizon = 0.0;

  ParticleState state_at(double t) const;
  ParticleState final_state() const { return state_at(horizon); }
  // Replays the log and checks recorded incoming velocities bitwise.
  bool replay_check() const;
};

struct SimulationStats {
  std::size_t events = 0;
  std::size_t clock_rings = 0;
  double max_momentum_drift = 0.0;
};

struct SimulationResult {
  Trajectory trajectory;
  FlowRecord flow;
  SimulationStats stats;
};

struct SimulateOptions {
  std::optional<std::size_t> max_events;  // stop early after this many events
  bool track_momentum = false;            // recompute |sum v| after every event
};

// Cached lambda(v_i, v_j) for all pairs with row sums.
class PairRateCache {
 public:
  PairRateCache() = default;
  PairRateCache(const ParticleState& s, CollisionKernel::Rate rate);

  double total_rate() const { return total_; }
  double pair_rate(std::size_t i, std::size_t j) const { return rates_[i * n_ + j]; }
  void update(const ParticleState& s, std::size_t i, std::size_t j);
  // Picks the pair {i, j} with probability proportional to its rate.
  std::pair<std::size_t, std::size_t> select(double u1, double u2) const;
  // Largest relative deviation of the cache from a fresh evaluation.
  double coherence_error(const ParticleState& s) const;

 private:
  void refresh_row(const ParticleState& s, std::size_t i);
  void refresh_total();

  std::size_t n_ = 0;
  CollisionKernel::Rate rate_;
  std::vector<double> rates_;
  std::vector<double> row_sums_;
  double total_ = 0.0;
};

// Gillespie simulator holding the state and its rate cache.
class KacWalk {
 public:
  KacWalk(ParticleState s, const CollisionKernel& k);

  // Runs until `horizon` (or until max_events) and appends to `log`.
  SimulationStats run(double horizon, Rng& rng, EventLog& log, const SimulateOptions& opts = {});
  const ParticleState& state() const { return state_; }
  const PairRateCache& cache() const { return cache_; }

 private:
  const CollisionKernel& kernel_;
  ParticleState state_;
  PairRateCache cache_;
};

SimulationResult simulate(const ParticleState& s, const CollisionKernel& k, double T, Rng& rng,
                          const SimulateOptions& opts = {});

SimulationResult simulate_tilted(const ParticleState& s, const TiltedKernel& k, double T, Rng& rng,
                                 const SimulateOptions& opts = {});

// F(t; v, v*, v', v'*) for the exponential martingale.
struct PathFunction {
  using Value = std::function<double(double t, Vec v, Vec vs, Vec vp, Vec vsp)>;
  using Rate = std::function<double(double t, Vec v, Vec vs)>;

  Value value;
  Rate tilted_rate;                 // lambda^F; by quadrature when empty
  std::vector<double> breakpoints;  // F constant in t between breakpoints
  bool piecewise_constant = true;   // otherwise Gauss-Legendre in time
};

// lambda^F(t; v, v*) = int B e^F dw'.
double tilted_rate(const PathFunction& F, const CollisionKernel& k, double t, Vec v, Vec vs);

// log of the exponential martingale: sum of F over events minus
// (1/N) int sum_{i<j} (lambda^F - lambda)(v_i, v_j) dt.
double girsanov_loglik(const Trajectory& traj, const FlowRecord& flow, const PathFunction& F,
                       const CollisionKernel& k);

}  // namespace kacflow
