#include "kacflow/walk.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <boost/math/quadrature/gauss.hpp>

#include "kacflow/errors.hpp"

namespace kacflow {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;

double log_sum_exp(const std::vector<double>& terms) {
  const double top = *std::max_element(terms.begin(), terms.end());
  if (!std::isfinite(top)) return top;
  double s = 0.0;
  for (double t : terms) s += std::exp(t - top);
  return top + std::log(s);
}

}  // namespace

// ---------------------------------------------------------------------------
// Initial data

InitialDensity InitialDensity::gaussian(int dim, double variance) {
  InitialDensity m;
  m.dim = dim;
  m.components.push_back({1.0, std::vector<double>(dim, 0.0), variance});
  return m;
}

bool InitialDensity::is_centered_gaussian() const {
  if (components.size() != 1) return false;
  for (double c : components[0].mean)
    if (c != 0.0) return false;
  return true;
}

double InitialDensity::log_density(Vec x) const {
  std::vector<double> terms;
  terms.reserve(components.size());
  for (const auto& c : components) {
    double r2 = 0.0;
    for (int a = 0; a < dim; ++a) r2 += (x[a] - c.mean[a]) * (x[a] - c.mean[a]);
    terms.push_back(std::log(c.weight) - 0.5 * dim * std::log(2.0 * std::numbers::pi * c.variance) -
                    0.5 * r2 / c.variance);
  }
  return log_sum_exp(terms);
}

double InitialDensity::density(Vec x) const { return std::exp(log_density(x)); }

void InitialDensity::sample(Rng& rng, MutVec out) const {
  std::size_t pick = 0;
  if (components.size() > 1) {
    double u = uniform01(rng);
    for (pick = 0; pick + 1 < components.size(); ++pick) {
      u -= components[pick].weight;
      if (u < 0.0) break;
    }
  }
  const auto& c = components[pick];
  const double sd = std::sqrt(c.variance);
  for (int a = 0; a < dim; ++a) out[a] = c.mean[a] + sd * standard_normal(rng);
}

std::vector<double> InitialDensity::mean() const {
  std::vector<double> m(dim, 0.0);
  for (const auto& c : components)
    for (int a = 0; a < dim; ++a) m[a] += c.weight * c.mean[a];
  return m;
}

double InitialDensity::second_moment() const {
  double s = 0.0;
  for (const auto& c : components) {
    double r2 = 0.0;
    for (double x : c.mean) r2 += x * x;
    s += c.weight * (r2 + dim * c.variance);
  }
  return s;
}

InitialDensity parse_initial_density(const nlohmann::json& j, int dim) {
  const std::string kind = j.value("kind", std::string("gaussian"));
  InitialDensity m;
  m.dim = dim;
  if (kind == "gaussian") {
    m = InitialDensity::gaussian(dim, j.value("variance", 1.0));
  } else if (kind == "mixture") {
    if (!j.contains("components") || !j["components"].is_array() || j["components"].empty())
      throw ConfigError("mixture density: missing \"components\"");
    double total = 0.0;
    for (const auto& c : j["components"]) {
      InitialDensity::Component comp;
      comp.weight = c.value("weight", 1.0);
      comp.variance = c.value("variance", 1.0);
      if (c.contains("mean")) {
        if (c["mean"].is_number())
          comp.mean.assign(dim, 0.0), comp.mean[0] = c["mean"].get<double>();
        else
          comp.mean = c["mean"].get<std::vector<double>>();
      } else {
        comp.mean.assign(dim, 0.0);
      }
      if (static_cast<int>(comp.mean.size()) != dim) throw ConfigError("mixture density: mean has wrong dimension");
      if (!(comp.weight > 0.0) || !(comp.variance > 0.0))
        throw ConfigError("mixture density: weights and variances must be positive");
      total += comp.weight;
      m.components.push_back(comp);
    }
    for (auto& c : m.components) c.weight /= total;
  } else {
    throw ConfigError("unknown initial density kind \"" + kind + "\"");
  }
  for (double x : m.mean())
    if (std::fabs(x) > 1e-12) throw ConfigError("initial density must have zero mean");
  return m;
}

double gaussian_lower_bound_constant(const InitialDensity& m) {
  std::vector<double> probe(m.dim, 0.0);
  for (int k = 1; k <= 30; ++k) {
    const double gamma = std::ldexp(1.0, -k);
    bool ok = true;
    for (int axis = 0; axis < 2 && ok; ++axis) {
      for (double r = 0.0; r <= 30.0 && ok; r += 0.25) {
        if (axis == 0) {
          std::fill(probe.begin(), probe.end(), 0.0);
          probe[0] = r;
        } else {
          std::fill(probe.begin(), probe.end(), r / std::sqrt(static_cast<double>(m.dim)));
        }
        ok = m.log_density(probe) >= std::log(gamma) - r * r / gamma;
      }
    }
    if (ok) return gamma;
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Particle states

std::vector<double> ParticleState::momentum() const {
  std::vector<double> p(dim, 0.0);
  for (std::size_t i = 0; i < size(); ++i)
    for (int a = 0; a < dim; ++a) p[a] += velocities[i * dim + a];
  return p;
}

double ParticleState::momentum_norm() const {
  double s = 0.0;
  for (double x : momentum()) s += x * x;
  return std::sqrt(s);
}

void center_exactly(ParticleState& s) {
  const std::size_t n = s.size();
  for (double& x : s.velocities) x = snap(x);
  for (int a = 0; a < s.dim; ++a) {
    double sum = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) sum += s.velocities[i * s.dim + a];
    s.velocities[(n - 1) * s.dim + a] = -sum;
  }
}

ParticleState sample_initial(const InitialDensity& m, std::size_t n, InitMode mode, Rng& rng,
                             const McmcOptions& mcmc) {
  if (n < 2) throw PreconditionError("need at least two particles");
  if (mode == InitMode::gaussian_project && !m.is_centered_gaussian())
    throw ModeError("gaussian_project requires a centred Gaussian initial density");
  ParticleState s;
  s.dim = m.dim;
  s.velocities.assign(n * m.dim, 0.0);
  for (std::size_t i = 0; i < n; ++i) m.sample(rng, s.velocity(i));
  for (int a = 0; a < s.dim; ++a) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += s.velocities[i * s.dim + a];
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) s.velocities[i * s.dim + a] -= mean;
  }
  center_exactly(s);
  if (mode == InitMode::gaussian_project) return s;

  const std::size_t updates = mcmc.pair_updates.value_or(50 * n);
  std::vector<double> xi(m.dim), a(m.dim), b(m.dim);
  std::normal_distribution<double> step(0.0, mcmc.step);
  std::uniform_int_distribution<std::size_t> pick_i(0, n - 1), pick_j(0, n - 2);
  for (std::size_t u = 0; u < updates; ++u) {
    const std::size_t i = pick_i(rng);
    std::size_t j = pick_j(rng);
    if (j >= i) ++j;
    for (int c = 0; c < m.dim; ++c) {
      xi[c] = snap(step(rng));
      a[c] = s.velocities[i * m.dim + c] + xi[c];
      b[c] = s.velocities[j * m.dim + c] - xi[c];
    }
    const double log_ratio =
        m.log_density(a) + m.log_density(b) - m.log_density(s.velocity(i)) - m.log_density(s.velocity(j));
    if (std::log(uniform01(rng)) < log_ratio) {
      std::copy(a.begin(), a.end(), s.velocity(i).begin());
      std::copy(b.begin(), b.end(), s.velocity(j).begin());
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Trajectories

ParticleState Trajectory::state_at(double t) const {
  ParticleState s = initial;
  if (events)
    for (const auto& e : *events) {
      if (e.t > t) break;
      std::copy(e.vp().begin(), e.vp().end(), s.velocity(e.i).begin());
      std::copy(e.vsp().begin(), e.vsp().end(), s.velocity(e.j).begin());
    }
  s.time = t;
  return s;
}

bool Trajectory::replay_check() const {
  ParticleState s = initial;
  if (!events) return true;
  double last = initial.time;
  for (const auto& e : *events) {
    if (!(e.t > last) || e.i >= e.j) return false;
    if (!std::equal(e.v().begin(), e.v().end(), s.velocity(e.i).begin())) return false;
    if (!std::equal(e.vs().begin(), e.vs().end(), s.velocity(e.j).begin())) return false;
    std::copy(e.vp().begin(), e.vp().end(), s.velocity(e.i).begin());
    std::copy(e.vsp().begin(), e.vsp().end(), s.velocity(e.j).begin());
    last = e.t;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Rate cache

PairRateCache::PairRateCache(const ParticleState& s, CollisionKernel::Rate rate)
    : n_(s.size()), rate_(std::move(rate)), rates_(n_ * n_, 0.0), row_sums_(n_, 0.0) {
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = i + 1; j < n_; ++j) {
      const double r = rate_(s.velocity(i), s.velocity(j));
      rates_[i * n_ + j] = r;
      rates_[j * n_ + i] = r;
    }
  for (std::size_t i = 0; i < n_; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < n_; ++j) sum += rates_[i * n_ + j];
    row_sums_[i] = sum;
  }
  refresh_total();
}

void PairRateCache::refresh_row(const ParticleState& s, std::size_t i) {
  double sum = 0.0;
  for (std::size_t k = 0; k < n_; ++k) {
    if (k == i) continue;
    const double r = rate_(s.velocity(i), s.velocity(k));
    row_sums_[k] += r - rates_[k * n_ + i];
    rates_[i * n_ + k] = r;
    rates_[k * n_ + i] = r;
    sum += r;
  }
  row_sums_[i] = sum;
}

void PairRateCache::refresh_total() {
  double sum = 0.0;
  for (double r : row_sums_) sum += r;
  total_ = 0.5 * sum / static_cast<double>(n_);
}

void PairRateCache::update(const ParticleState& s, std::size_t i, std::size_t j) {
  refresh_row(s, i);
  refresh_row(s, j);
  double sum = 0.0;
  for (std::size_t k = 0; k < n_; ++k) sum += rates_[i * n_ + k];
  row_sums_[i] = sum;
  refresh_total();
}

std::pair<std::size_t, std::size_t> PairRateCache::select(double u1, double u2) const {
  double sum = 0.0;
  for (double r : row_sums_) sum += r;
  double target = u1 * sum;
  std::size_t i = 0, last_i = 0;
  for (; i < n_; ++i) {
    if (row_sums_[i] > 0.0) last_i = i;
    target -= row_sums_[i];
    if (target < 0.0 && row_sums_[i] > 0.0) break;
  }
  if (i == n_) i = last_i;
  double row = 0.0;
  for (std::size_t k = 0; k < n_; ++k) row += rates_[i * n_ + k];
  target = u2 * row;
  std::size_t j = 0, last_j = i == 0 ? 1 : 0;
  for (; j < n_; ++j) {
    if (j == i) continue;
    const double r = rates_[i * n_ + j];
    if (r > 0.0) last_j = j;
    target -= r;
    if (target < 0.0 && r > 0.0) break;
  }
  if (j == n_) j = last_j;
  return {std::min(i, j), std::max(i, j)};
}

double PairRateCache::coherence_error(const ParticleState& s) const {
  double worst = 0.0, fresh_total = 0.0;
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = i + 1; j < n_; ++j) {
      const double r = rate_(s.velocity(i), s.velocity(j));
      fresh_total += r;
      worst = std::max(worst, std::fabs(r - rates_[i * n_ + j]) / std::max(std::fabs(r), 1e-300));
    }
  fresh_total /= static_cast<double>(n_);
  if (fresh_total > 0.0) worst = std::max(worst, std::fabs(fresh_total - total_) / fresh_total);
  return worst;
}

// ---------------------------------------------------------------------------
// Simulation

KacWalk::KacWalk(ParticleState s, const CollisionKernel& k)
    : kernel_(k),
      state_(std::move(s)),
      cache_(state_, [&k](Vec v, Vec vs) { return scattering_rate(k, v, vs); }) {
  if (state_.size() < 2) throw PreconditionError("need at least two particles");
  if (state_.dim != k.dim) throw PreconditionError("state and kernel dimensions differ");
}

SimulationStats KacWalk::run(double horizon, Rng& rng, EventLog& log, const SimulateOptions& opts) {
  SimulationStats stats;
  const int d = state_.dim;
  std::exponential_distribution<double> wait(1.0);
  while (true) {
    if (opts.max_events && stats.events >= *opts.max_events) break;
    const double total = cache_.total_rate();
    if (!(total > 0.0)) {
      state_.time = horizon;
      break;
    }
    const double tau = wait(rng) / total;
    if (state_.time + tau > horizon) {
      state_.time = horizon;
      break;
    }
    state_.time += tau;
    const double u1 = uniform01(rng), u2 = uniform01(rng);
    const auto [i, j] = cache_.select(u1, u2);
    CollisionEvent e;
    e.t = state_.time;
    e.i = static_cast<std::uint32_t>(i);
    e.j = static_cast<std::uint32_t>(j);
    e.dim = d;
    std::copy_n(state_.velocity(i).begin(), d, e.v().begin());
    std::copy_n(state_.velocity(j).begin(), d, e.vs().begin());
    sample_outgoing(kernel_, rng, e.v(), e.vs(), e.vp(), e.vsp());
    std::copy_n(e.vp().begin(), d, state_.velocity(i).begin());
    std::copy_n(e.vsp().begin(), d, state_.velocity(j).begin());
    cache_.update(state_, i, j);
    log.push_back(e);
    ++stats.events;
    if (opts.track_momentum) stats.max_momentum_drift = std::max(stats.max_momentum_drift, state_.momentum_norm());
  }
  return stats;
}

SimulationResult simulate(const ParticleState& s, const CollisionKernel& k, double T, Rng& rng,
                          const SimulateOptions& opts) {
  if (T < 0.0) throw PreconditionError("horizon must be nonnegative");
  KacWalk walk(s, k);
  auto log = std::make_shared<EventLog>();
  SimulationResult out;
  out.stats = walk.run(s.time + T, rng, *log, opts);
  if (opts.track_momentum) out.stats.max_momentum_drift = std::max(out.stats.max_momentum_drift, s.momentum_norm());
  out.trajectory = {s, log, walk.state().time};
  out.flow = {s.dim, s.size(), log};
  return out;
}

SimulationResult simulate_tilted(const ParticleState& s, const TiltedKernel& k, double T, Rng& rng,
                                 const SimulateOptions& opts) {
  if (T < 0.0) throw PreconditionError("horizon must be nonnegative");
  const std::size_t n = s.size();
  if (n < 2) throw PreconditionError("need at least two particles");
  if (s.dim != k.dim) throw PreconditionError("state and kernel dimensions differ");
  const int d = s.dim;
  const double C = k.rate_bound;
  const double clock = C * 0.5 * static_cast<double>(n - 1);
  ParticleState state = s;
  auto log = std::make_shared<EventLog>();
  SimulationStats stats;
  std::exponential_distribution<double> wait(1.0);
  std::uniform_int_distribution<std::size_t> pick_i(0, n - 1), pick_j(0, n - 2);
  const double end = s.time + T;
  double t = s.time;
  while (clock > 0.0) {
    if (opts.max_events && stats.events >= *opts.max_events) break;
    t += wait(rng) / clock;
    if (t > end) {
      t = end;
      break;
    }
    ++stats.clock_rings;
    std::size_t i = pick_i(rng), j = pick_j(rng);
    if (j >= i) ++j;
    if (i > j) std::swap(i, j);
    const double rate = scattering_rate(k, t, state.velocity(i), state.velocity(j));
    if (rate > C * (1.0 + 1e-12)) {
      std::vector<double> point{t};
      point.insert(point.end(), state.velocity(i).begin(), state.velocity(i).end());
      point.insert(point.end(), state.velocity(j).begin(), state.velocity(j).end());
      throw BoundViolation("tilted rate " + std::to_string(rate) + " exceeds bound " + std::to_string(C), point);
    }
    if (!(uniform01(rng) * C < rate)) continue;
    CollisionEvent e;
    e.t = t;
    e.i = static_cast<std::uint32_t>(i);
    e.j = static_cast<std::uint32_t>(j);
    e.dim = d;
    std::copy_n(state.velocity(i).begin(), d, e.v().begin());
    std::copy_n(state.velocity(j).begin(), d, e.vs().begin());
    sample_outgoing(k, t, rng, e.v(), e.vs(), e.vp(), e.vsp());
    std::copy_n(e.vp().begin(), d, state.velocity(i).begin());
    std::copy_n(e.vsp().begin(), d, state.velocity(j).begin());
    log->push_back(e);
    ++stats.events;
    if (opts.track_momentum) stats.max_momentum_drift = std::max(stats.max_momentum_drift, state.momentum_norm());
  }
  SimulationResult out;
  out.stats = stats;
  out.trajectory = {s, log, opts.max_events && stats.events >= *opts.max_events ? t : end};
  out.flow = {d, n, log};
  return out;
}

// ---------------------------------------------------------------------------
// Girsanov

double tilted_rate(const PathFunction& F, const CollisionKernel& k, double t, Vec v, Vec vs) {
  if (F.tilted_rate) return F.tilted_rate(t, v, vs);
  const int d = k.dim;
  double vp[kMaxDim], vsp[kMaxDim];
  return integrate_outgoing(d, k.envelope.decay,
                            [&](Vec wp) {
                              for (int a = 0; a < d; ++a) {
                                const double c = 0.5 * (v[a] + vs[a]);
                                vp[a] = c + wp[a] * kInvSqrt2;
                                vsp[a] = c - wp[a] * kInvSqrt2;
                              }
                              return k.density(v, vs, wp) * std::exp(F.value(t, v, vs, Vec(vp, d), Vec(vsp, d)));
                            })
      .value;
}

namespace {

// lambda^F - lambda. Without a closed form both rates come from the same
// quadrature so that F = 0 gives exactly zero.
double excess_rate(const PathFunction& F, const CollisionKernel& k, double t, Vec v, Vec vs) {
  if (F.tilted_rate) return F.tilted_rate(t, v, vs) - scattering_rate(k, v, vs);
  const double base =
      integrate_outgoing(k.dim, k.envelope.decay, [&](Vec wp) { return k.density(v, vs, wp); }).value;
  return tilted_rate(F, k, t, v, vs) - base;
}

// Matrix of (lambda^F - lambda)(v_i, v_j) at a fixed time with running pair sum.
class ExcessRates {
 public:
  ExcessRates(const PathFunction& F, const CollisionKernel& k, std::size_t n) : F_(F), k_(k), n_(n), m_(n * n, 0.0) {}

  double excess(double t, Vec a, Vec b) const { return excess_rate(F_, k_, t, a, b); }

  void rebuild(const ParticleState& s, double t) {
    t_ = t;
    sum_ = 0.0;
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = i + 1; j < n_; ++j) {
        const double x = excess(t, s.velocity(i), s.velocity(j));
        m_[i * n_ + j] = x;
        m_[j * n_ + i] = x;
        sum_ += x;
      }
  }

  void update(const ParticleState& s, std::size_t i, std::size_t j) {
    sum_ -= row(i) + row(j) - m_[i * n_ + j];
    for (std::size_t r : {i, j})
      for (std::size_t k = 0; k < n_; ++k) {
        if (k == r) continue;
        const double x = excess(t_, s.velocity(r), s.velocity(k));
        m_[r * n_ + k] = x;
        m_[k * n_ + r] = x;
      }
    sum_ += row(i) + row(j) - m_[i * n_ + j];
  }

  double pair_sum() const { return sum_; }

  static double full_sum(const PathFunction& F, const CollisionKernel& k, const ParticleState& s, double t) {
    double sum = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t j = i + 1; j < s.size(); ++j)
        sum += excess_rate(F, k, t, s.velocity(i), s.velocity(j));
    return sum;
  }

 private:
  double row(std::size_t r) const {
    double s = 0.0;
    for (std::size_t k = 0; k < n_; ++k) s += m_[r * n_ + k];
    return s;
  }

  const PathFunction& F_;
  const CollisionKernel& k_;
  std::size_t n_;
  std::vector<double> m_;
  double sum_ = 0.0;
  double t_ = 0.0;
};

void apply_event(ParticleState& s, const CollisionEvent& e) {
  std::copy(e.vp().begin(), e.vp().end(), s.velocity(e.i).begin());
  std::copy(e.vsp().begin(), e.vsp().end(), s.velocity(e.j).begin());
}

}  // namespace

double girsanov_loglik(const Trajectory& traj, const FlowRecord& flow, const PathFunction& F,
                       const CollisionKernel& k) {
  const double n = static_cast<double>(flow.n_particles);
  const double jumps = flow.integrate(F.value) * n;
  const double start = traj.initial.time, end = traj.horizon;
  ParticleState state = traj.initial;
  const EventLog empty;
  const EventLog& events = traj.events ? *traj.events : empty;
  double compensator = 0.0;

  if (F.piecewise_constant) {
    std::vector<double> cuts{start};
    for (double b : F.breakpoints)
      if (b > start && b < end) cuts.push_back(b);
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    cuts.push_back(end);
    ExcessRates rates(F, k, state.size());
    std::size_t next = 0;
    for (std::size_t seg = 0; seg + 1 < cuts.size(); ++seg) {
      const double a = cuts[seg], b = cuts[seg + 1];
      rates.rebuild(state, a);
      double t = a;
      while (next < events.size() && events[next].t < b) {
        const auto& e = events[next++];
        compensator += rates.pair_sum() * (e.t - t);
        t = e.t;
        apply_event(state, e);
        rates.update(state, e.i, e.j);
      }
      compensator += rates.pair_sum() * (b - t);
    }
  } else {
    using boost::math::quadrature::gauss;
    auto interval = [&](double a, double b) {
      if (b <= a) return 0.0;
      return gauss<double, 8>::integrate([&](double t) { return ExcessRates::full_sum(F, k, state, t); }, a, b);
    };
    double t = start;
    for (const auto& e : events) {
      compensator += interval(t, e.t);
      t = e.t;
      apply_event(state, e);
    }
    compensator += interval(t, end);
  }
  return jumps - compensator / n;
}

}  // namespace kacflow
