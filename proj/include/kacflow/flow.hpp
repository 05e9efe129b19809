#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <vector>

#include "kacflow/kernels.hpp"

namespace kacflow {

struct CollisionEvent {
  double t = 0.0;
  std::uint32_t i = 0;
  std::uint32_t j = 0;
  int dim = 1;
  double data[4 * kMaxDim] = {};  // v, v*, v', v'* packed by dimension

  Vec v() const { return Vec(data, dim); }
  Vec vs() const { return Vec(data + dim, dim); }
  Vec vp() const { return Vec(data + 2 * dim, dim); }
  Vec vsp() const { return Vec(data + 3 * dim, dim); }
  MutVec v() { return MutVec(data, dim); }
  MutVec vs() { return MutVec(data + dim, dim); }
  MutVec vp() { return MutVec(data + 2 * dim, dim); }
  MutVec vsp() { return MutVec(data + 3 * dim, dim); }
};

using EventLog = std::vector<CollisionEvent>;

// Empirical flow Q^N: the exact collision log, normalized by 1/N on query.
struct FlowRecord {
  int dim = 1;
  std::size_t n_particles = 0;
  std::shared_ptr<const EventLog> events;

  std::size_t size() const { return events ? events->size() : 0; }
  double mass() const { return static_cast<double>(size()) / static_cast<double>(n_particles); }

  // Q^N(F) for F(t, v, v*, v', v'*).
  template <class F>
  double integrate(F&& f) const {
    double s = 0.0;
    if (events)
      for (const auto& e : *events) s += f(e.t, e.v(), e.vs(), e.vp(), e.vsp());
    return s / static_cast<double>(n_particles);
  }
};

}  // namespace kacflow
