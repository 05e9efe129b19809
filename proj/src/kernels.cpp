#include "kacflow/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "kacflow/errors.hpp"

namespace kacflow {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;

std::string format_point(Vec v, Vec vs, Vec wp) {
  std::ostringstream os;
  os.precision(17);
  auto put = [&](const char* label, Vec x) {
    os << label << "=(";
    for (std::size_t i = 0; i < x.size(); ++i) os << (i ? "," : "") << x[i];
    os << ")";
  };
  put("v", v);
  os << " ";
  put("v*", vs);
  os << " ";
  put("w'", wp);
  return os.str();
}

std::vector<double> concat(Vec a, Vec b, Vec c) {
  std::vector<double> out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  out.insert(out.end(), c.begin(), c.end());
  return out;
}

double distance(Vec a, Vec b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// Trapezoid sum over the cube [-L, L]^dim with step L / m.
double tensor_trapezoid(int dim, double half_width, int m, const std::function<double(Vec)>& f) {
  const double h = half_width / m;
  const int pts = 2 * m + 1;
  double w[kMaxDim];
  int idx[kMaxDim] = {0, 0, 0};
  double total = 0.0;
  while (true) {
    for (int a = 0; a < dim; ++a) w[a] = (idx[a] - m) * h;
    total += f(Vec(w, dim));
    int a = 0;
    while (a < dim && ++idx[a] == pts) idx[a++] = 0;
    if (a == dim) break;
  }
  return total * std::pow(h, dim);
}

double gaussian_norm(int dim, double variance) {
  return std::pow(2.0 * std::numbers::pi * variance, -0.5 * dim);
}

void check_sample(bool ok, const std::string& what, Vec v, Vec vs, Vec wp) {
  if (!ok) throw ValidationError(what + " violated at " + format_point(v, vs, wp), concat(v, vs, wp));
}

double rel_gap(double a, double b) {
  const double scale = std::max({std::fabs(a), std::fabs(b), 1e-300});
  return std::fabs(a - b) / scale;
}

template <class DensityAt>
int rejection_sample(int dim, const Envelope& env, Rng& rng, Vec v, Vec vs, MutVec vp, MutVec vsp,
                     DensityAt&& density) {
  const double pre = env.prefactor(distance(v, vs));
  const double sd = std::sqrt(0.5 / env.decay);
  double wp[kMaxDim];
  std::normal_distribution<double> normal(0.0, sd);
  for (int proposals = 1; proposals <= 100000000; ++proposals) {
    double wsq = 0.0;
    for (int a = 0; a < dim; ++a) {
      wp[a] = normal(rng);
      wsq += wp[a] * wp[a];
    }
    const Vec w(wp, dim);
    const double b = density(w);
    const double bound = pre * std::exp(-env.decay * wsq);
    const double ratio = b / bound;
    if (ratio > 1.0 + 1e-12)
      throw EnvelopeViolation("acceptance probability " + std::to_string(ratio) + " > 1 at " +
                              format_point(v, vs, w));
    if (uniform01(rng) < ratio) {
      outgoing_pair(v, vs, w, vp, vsp);
      return proposals;
    }
  }
  throw NumericError("rejection sampler exhausted its proposal budget", 0.0);
}

}  // namespace

double snap(double x) { return std::nearbyint(x * kLatticeScale) / kLatticeScale; }

void outgoing_pair(Vec v, Vec vs, Vec wp, MutVec vp, MutVec vsp) {
  for (std::size_t a = 0; a < v.size(); ++a) {
    const double s = v[a] + vs[a];
    vp[a] = snap(0.5 * s + wp[a] * kInvSqrt2);
    vsp[a] = s - vp[a];
  }
}

void relative_velocity(Vec a, Vec b, MutVec w) {
  for (std::size_t i = 0; i < a.size(); ++i) w[i] = (a[i] - b[i]) * kInvSqrt2;
}

double Envelope::prefactor(double rel_speed) const {
  return amp * (1.0 + (slope == 0.0 ? 0.0 : slope * std::pow(rel_speed, gamma)));
}

double Envelope::operator()(double rel_speed, double wp_sq) const {
  return prefactor(rel_speed) * std::exp(-decay * wp_sq);
}

double norm_sq(Vec x) {
  double s = 0.0;
  for (double c : x) s += c * c;
  return s;
}

double gaussian_density(int dim, Vec x, double variance) {
  return gaussian_norm(dim, variance) * std::exp(-0.5 * norm_sq(x) / variance);
}

KernelDescriptor parse_kernel_descriptor(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("kernel descriptor must be an object");
  if (!j.contains("name") || !j["name"].is_string()) throw ConfigError("kernel descriptor: missing \"name\"");
  KernelDescriptor d;
  d.name = j["name"].get<std::string>();
  if (j.contains("dim")) {
    if (!j["dim"].is_number_integer()) throw ConfigError("kernel descriptor: \"dim\" must be an integer");
    d.dim = j["dim"].get<int>();
  }
  if (j.contains("params")) d.params = j["params"];
  return d;
}

nlohmann::json to_json(const KernelDescriptor& d) {
  return {{"name", d.name}, {"dim", d.dim}, {"params", d.params}};
}

CollisionKernel make_kernel(const KernelDescriptor& spec, const ValidationOptions& opts) {
  const int d = spec.dim;
  if (d < 1 || d > kMaxDim) throw ConfigError("kernel dimension must be in [1, 3]");
  CollisionKernel k;
  k.name = spec.name;
  k.dim = d;
  if (spec.name == "maxwell_sigma1") {
    k.density = [d](Vec, Vec, Vec wp) { return gaussian_density(d, wp); };
    k.envelope = {gaussian_norm(d, 1.0), 0.5, 0.0, 0.0};
    k.tail = {std::pow(2.0, 0.5 * d), 0.25, 0.0};
    k.lower_bound = {gaussian_norm(d, 1.0), 0.5};
    k.closed_form_lambda = [](Vec, Vec) { return 1.0; };
    k.rate_bound = 1.0;
    k.detailed_balance = true;
  } else if (spec.name == "paper_example") {
    k.density = [](Vec v, Vec vs, Vec wp) { return (1.0 + distance(v, vs)) * std::exp(-norm_sq(wp)); };
    k.envelope = {1.0, 1.0, 1.0, 1.0};
    k.tail = {std::pow(2.0 * std::numbers::pi, 0.5 * d), 0.5, 1.0};
    k.lower_bound = {1.0, 1.0};
    const double norm = std::pow(std::numbers::pi, 0.5 * d);
    k.closed_form_lambda = [norm](Vec v, Vec vs) { return (1.0 + distance(v, vs)) * norm; };
    k.detailed_balance = false;
  } else if (spec.name == "custom") {
    throw ConfigError("custom kernels are supplied programmatically, not by descriptor");
  } else {
    throw ConfigError("unknown kernel \"" + spec.name + "\"");
  }
  Rng rng(opts.seed);
  validate_kernel(k, opts.samples, rng);
  return k;
}

CollisionKernel make_custom_kernel(CollisionKernel draft, const ValidationOptions& opts) {
  if (!draft.density) throw ConfigError("custom kernel: missing density");
  if (!(draft.envelope.amp > 0.0) || !(draft.envelope.decay > 0.0))
    throw ConfigError("custom kernel: missing envelope (amp and decay must be positive)");
  if (draft.dim < 1 || draft.dim > kMaxDim) throw ConfigError("kernel dimension must be in [1, 3]");
  if (draft.name.empty()) draft.name = "custom";
  Rng rng(opts.seed);
  validate_kernel(draft, opts.samples, rng);
  return draft;
}

void validate_kernel(const CollisionKernel& k, int samples, Rng& rng) {
  const int d = k.dim;
  double v[kMaxDim], vs[kMaxDim], wp[kMaxDim], wm[kMaxDim];
  std::normal_distribution<double> wide(0.0, 2.0), mid(0.0, 1.5);
  for (int s = 0; s < samples; ++s) {
    for (int a = 0; a < d; ++a) {
      v[a] = wide(rng);
      vs[a] = wide(rng);
      wp[a] = mid(rng);
      wm[a] = -wp[a];
    }
    const Vec V(v, d), Vs(vs, d), W(wp, d), Wm(wm, d);
    const double b = k.density(V, Vs, W);
    check_sample(std::isfinite(b) && b >= 0.0, "nonnegativity", V, Vs, W);
    check_sample(rel_gap(b, k.density(Vs, V, W)) <= 1e-12, "symmetry in the incoming pair", V, Vs, W);
    check_sample(rel_gap(b, k.density(V, Vs, Wm)) <= 1e-12, "symmetry in the outgoing pair", V, Vs, W);
    const double wsq = norm_sq(W);
    const double lower = k.lower_bound.c0 * std::exp(-k.lower_bound.rate * wsq);
    check_sample(b >= lower * (1.0 - 1e-12), "lower bound", V, Vs, W);
    const double env = k.envelope(distance(V, Vs), wsq);
    check_sample(b <= env * (1.0 + 1e-12), "envelope domination", V, Vs, W);
  }
}

QuadratureResult integrate_outgoing(int dim, double decay, const std::function<double(Vec)>& f,
                                    double rel_tol) {
  // exp(-decay L^2) = e^-42 bounds the truncated tail relative to the envelope.
  const double half_width = std::sqrt(42.0 / decay);
  const int max_m = dim == 1 ? 1024 : (dim == 2 ? 128 : 32);
  double prev = tensor_trapezoid(dim, half_width, 8, f);
  double change = 0.0;
  for (int m = 16; m <= max_m; m *= 2) {
    const double cur = tensor_trapezoid(dim, half_width, m, f);
    change = std::fabs(cur - prev) / std::max(std::fabs(cur), 1e-300);
    if (m >= 32 && (change <= rel_tol || (cur == 0.0 && prev == 0.0))) return {cur, change, 2 * m + 1};
    prev = cur;
  }
  std::ostringstream msg;
  msg << "quadrature did not reach relative tolerance " << rel_tol << " (achieved " << change << ")";
  throw NumericError(msg.str(), change);
}

double scattering_rate(const CollisionKernel& k, Vec v, Vec vs) {
  if (k.closed_form_lambda) return k.closed_form_lambda(v, vs);
  return integrate_outgoing(k.dim, k.envelope.decay, [&](Vec wp) { return k.density(v, vs, wp); }).value;
}

double diagonal_rate(const CollisionKernel& k, Vec v) { return scattering_rate(k, v, v); }

int sample_outgoing(const CollisionKernel& k, Rng& rng, Vec v, Vec vs, MutVec vp, MutVec vsp) {
  return rejection_sample(k.dim, k.envelope, rng, v, vs, vp, vsp,
                          [&](Vec wp) { return k.density(v, vs, wp); });
}

double detailed_balance_check(const CollisionKernel& k, int n_samples, Rng& rng) {
  const int d = k.dim;
  double V[kMaxDim], w[kMaxDim], wp[kMaxDim];
  double v1[kMaxDim], s1[kMaxDim], v2[kMaxDim], s2[kMaxDim];
  std::normal_distribution<double> normal(0.0, 1.5);
  double worst = 0.0;
  for (int s = 0; s < n_samples; ++s) {
    for (int a = 0; a < d; ++a) {
      V[a] = normal(rng);
      w[a] = normal(rng);
      wp[a] = normal(rng);
      v1[a] = (V[a] + w[a]) * kInvSqrt2;
      s1[a] = (V[a] - w[a]) * kInvSqrt2;
      v2[a] = (V[a] + wp[a]) * kInvSqrt2;
      s2[a] = (V[a] - wp[a]) * kInvSqrt2;
    }
    const double t1 = std::exp(-0.5 * norm_sq(Vec(w, d))) * k.density(Vec(v1, d), Vec(s1, d), Vec(wp, d));
    const double t2 = std::exp(-0.5 * norm_sq(Vec(wp, d))) * k.density(Vec(v2, d), Vec(s2, d), Vec(w, d));
    const double sum = t1 + t2;
    if (sum > 0.0) worst = std::max(worst, std::fabs(t1 - t2) / sum);
  }
  return worst;
}

TiltedKernel as_tilted(const CollisionKernel& k, double rate_bound) {
  TiltedKernel t;
  t.name = k.name;
  t.dim = k.dim;
  auto density = k.density;
  t.density = [density](double, Vec v, Vec vs, Vec wp) { return density(v, vs, wp); };
  t.envelope = k.envelope;
  if (k.closed_form_lambda) {
    auto lam = k.closed_form_lambda;
    t.closed_form_lambda = [lam](double, Vec v, Vec vs) { return lam(v, vs); };
  }
  t.rate_bound = rate_bound;
  t.time_independent = true;
  return t;
}

TiltedKernel as_tilted(const CollisionKernel& k) {
  if (!k.rate_bound) throw PreconditionError("kernel \"" + k.name + "\" has no uniform rate bound");
  return as_tilted(k, *k.rate_bound);
}

TiltedKernel bump_tilt(int dim, const BumpTilt& p) {
  if (p.amplitude < 0.0 || std::fabs(p.modulation) > 1.0 || p.range <= 0.0 || p.spread <= 0.0)
    throw ConfigError("bump tilt: need amplitude >= 0, |modulation| <= 1, range > 0, spread > 0");
  TiltedKernel t;
  t.name = "bump";
  t.dim = dim;
  const double two_pi = 2.0 * std::numbers::pi;
  auto factor = [p, two_pi](double time, Vec v, Vec vs) {
    const double a = p.amplitude * (1.0 + p.modulation * std::sin(two_pi * time));
    double r2 = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) r2 += (v[i] - vs[i]) * (v[i] - vs[i]);
    return 1.0 + a * std::exp(-0.5 * r2 / (p.range * p.range));
  };
  t.density = [factor, dim, p](double time, Vec v, Vec vs, Vec wp) {
    return factor(time, v, vs) * gaussian_density(dim, wp, p.spread);
  };
  t.closed_form_lambda = factor;
  t.rate_bound = 1.0 + p.amplitude * (1.0 + std::fabs(p.modulation));
  t.envelope = {t.rate_bound * gaussian_norm(dim, p.spread), 0.5 / p.spread, 0.0, 0.0};
  t.time_independent = p.modulation == 0.0;
  return t;
}

TiltedKernel scaled_tilt(const CollisionKernel& k, double c) {
  if (!(c > 0.0)) throw ConfigError("scaled tilt: factor must be positive");
  TiltedKernel t = as_tilted(k);
  t.name = k.name + "_scaled";
  auto density = k.density;
  t.density = [density, c](double, Vec v, Vec vs, Vec wp) { return c * density(v, vs, wp); };
  if (k.closed_form_lambda) {
    auto lam = k.closed_form_lambda;
    t.closed_form_lambda = [lam, c](double, Vec v, Vec vs) { return c * lam(v, vs); };
  }
  t.envelope.amp *= c;
  t.rate_bound *= c;
  return t;
}

TiltedKernel make_tilted_kernel(const nlohmann::json& j, int dim) {
  const std::string name = j.value("name", std::string());
  if (name == "bump") {
    BumpTilt p;
    p.amplitude = j.value("amplitude", p.amplitude);
    p.range = j.value("range", p.range);
    p.spread = j.value("spread", p.spread);
    p.modulation = j.value("modulation", p.modulation);
    return bump_tilt(dim, p);
  }
  if (name == "scaled") {
    if (!j.contains("base")) throw ConfigError("scaled tilt: missing \"base\"");
    KernelDescriptor base = parse_kernel_descriptor(j["base"]);
    base.dim = dim;
    return scaled_tilt(make_kernel(base), j.value("factor", 1.0));
  }
  throw ConfigError("unknown tilted kernel \"" + name + "\"");
}

double scattering_rate(const TiltedKernel& k, double t, Vec v, Vec vs) {
  if (k.closed_form_lambda) return k.closed_form_lambda(t, v, vs);
  return integrate_outgoing(k.dim, k.envelope.decay, [&](Vec wp) { return k.density(t, v, vs, wp); })
      .value;
}

int sample_outgoing(const TiltedKernel& k, double t, Rng& rng, Vec v, Vec vs, MutVec vp, MutVec vsp) {
  return rejection_sample(k.dim, k.envelope, rng, v, vs, vp, vsp,
                          [&](Vec wp) { return k.density(t, v, vs, wp); });
}

}  // namespace kacflow
