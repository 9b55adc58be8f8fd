#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "irconv/common.hpp"
#include "irconv/geometry.hpp"
#include "irconv/random.hpp"
#include "irconv/tensor.hpp"

namespace irconv {

// Synthetic data: parametric toy shapes, a Lennard-Jones particle simulator,
// cloud normalization, and ASCII file IO (XYZ / PLY, trajectory directories
// with a JSON manifest).  All generators are seed-deterministic.

// ---- toy shapes ---------------------------------------------------------------

enum class ShapeFamily { sphere, box, torus, plane_with_holes };

inline std::string family_name(ShapeFamily f) {
  switch (f) {
  case ShapeFamily::sphere: return "sphere";
  case ShapeFamily::box: return "box";
  case ShapeFamily::torus: return "torus";
  case ShapeFamily::plane_with_holes: return "plane-with-holes";
  }
  throw config_error("shape: unknown family code");
}

inline ShapeFamily parse_family(const std::string &name) {
  if (name == "sphere") return ShapeFamily::sphere;
  if (name == "box") return ShapeFamily::box;
  if (name == "torus") return ShapeFamily::torus;
  if (name == "plane-with-holes") return ShapeFamily::plane_with_holes;
  throw config_error("shape: unknown family '" + name +
                     "' (expected sphere|box|torus|plane-with-holes)");
}

// Parameter ranges are validated by gen_shape:
//   scale > 0; aspect_y, aspect_z in (0, 16]; minor_ratio in (0, 1) for the
//   torus (minor radius = scale * minor_ratio) and (0, 0.5] for the plane
//   (hole radius = minor_ratio * min extent / 2); holes in [0, 8].
struct ShapeSpec {
  ShapeFamily family = ShapeFamily::sphere;
  double scale = 1;        // sphere radius, box/plane x extent, torus major radius
  double aspect_y = 1;     // box/plane: y extent = scale * aspect_y
  double aspect_z = 1;     // box: z extent = scale * aspect_z
  double minor_ratio = 0.35;
  int holes = 3;           // plane-with-holes only
  std::int64_t n_points = 256;
  std::uint64_t seed = 0;
};

namespace detail {

inline void validate_shape_spec(const ShapeSpec &s) {
  if (s.n_points < 8)
    throw config_error("shape: n_points must be >= 8, got " +
                       std::to_string(s.n_points));
  if (!(s.scale > 0) || !(s.aspect_y > 0) || !(s.aspect_z > 0) ||
      s.aspect_y > 16 || s.aspect_z > 16)
    throw config_error("shape: scale must be > 0 and aspects in (0, 16]");
  if (s.family == ShapeFamily::torus &&
      (!(s.minor_ratio > 0) || s.minor_ratio >= 1))
    throw config_error("shape: torus minor_ratio must lie in (0, 1)");
  if (s.family == ShapeFamily::plane_with_holes) {
    if (!(s.minor_ratio > 0) || s.minor_ratio > 0.5)
      throw config_error("shape: plane hole ratio must lie in (0, 0.5]");
    if (s.holes < 0 || s.holes > 8)
      throw config_error("shape: holes must lie in [0, 8], got " +
                         std::to_string(s.holes));
  }
}

// Split n into parts proportional to the weights (largest-remainder
// rounding), so empirical per-part counts match the target ratios exactly.
inline std::vector<std::int64_t> proportional_counts(std::int64_t n,
                                                     const std::vector<double> &weights) {
  double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::int64_t> counts(weights.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::int64_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    double exact = static_cast<double>(n) * weights[i] / total;
    counts[i] = static_cast<std::int64_t>(std::floor(exact));
    assigned += counts[i];
    rem.push_back({exact - std::floor(exact), i});
  }
  std::stable_sort(rem.begin(), rem.end(),
                   [](const auto &a, const auto &b) { return a.first > b.first; });
  for (std::int64_t k = 0; k < n - assigned; ++k)
    counts[rem[static_cast<std::size_t>(k)].second] += 1;
  return counts;
}

} // namespace detail

// Hole layout for plane-with-holes: (cx, cy, radius) per hole, fully inside
// the rectangle.  Exposed so consumers can check containment independently.
inline std::vector<std::array<double, 3>> plane_holes(const ShapeSpec &s) {
  detail::validate_shape_spec(s);
  double sx = s.scale, sy = s.scale * s.aspect_y;
  double radius = s.minor_ratio * std::min(sx, sy) / 2;
  Rng rng(chain_seed(s.seed, "holes"));
  std::vector<std::array<double, 3>> out;
  for (int h = 0; h < s.holes; ++h) {
    double cx = rng.uniform(-sx / 2 + radius, sx / 2 - radius);
    double cy = rng.uniform(-sy / 2 + radius, sy / 2 - radius);
    out.push_back({cx, cy, radius});
  }
  return out;
}

// Uniform-area surface sampling of a parametric shape, centered at the
// origin.  Deterministic by spec.seed; the cloud carries no features.
template <class Real> PointCloud<Real> gen_shape(const ShapeSpec &s) {
  detail::validate_shape_spec(s);
  const std::int64_t n = s.n_points;
  Tensor<Real> pos({n, 3});
  Rng rng(chain_seed(s.seed, "shape"));
  const double two_pi = 6.283185307179586476925286766559;

  switch (s.family) {
  case ShapeFamily::sphere: {
    // z uniform in [-1, 1] and azimuth uniform is area-uniform on the sphere.
    for (std::int64_t i = 0; i < n; ++i) {
      double z = rng.uniform(-1, 1);
      double phi = rng.uniform(0, two_pi);
      double rho = std::sqrt(std::max(0.0, 1 - z * z));
      pos[i * 3 + 0] = static_cast<Real>(s.scale * rho * std::cos(phi));
      pos[i * 3 + 1] = static_cast<Real>(s.scale * rho * std::sin(phi));
      pos[i * 3 + 2] = static_cast<Real>(s.scale * z);
    }
    break;
  }
  case ShapeFamily::box: {
    // Allocate counts across the six faces proportional to face area, then
    // sample uniformly within each face; the fixed coordinate is exact.
    double ex = s.scale, ey = s.scale * s.aspect_y, ez = s.scale * s.aspect_z;
    std::vector<double> areas = {ey * ez, ey * ez, ex * ez,
                                 ex * ez, ex * ey, ex * ey};
    auto counts = detail::proportional_counts(n, areas);
    std::int64_t i = 0;
    for (int face = 0; face < 6; ++face) {
      int axis = face / 2;
      double side = (face % 2 == 0 ? 1.0 : -1.0);
      double half[3] = {ex / 2, ey / 2, ez / 2};
      for (std::int64_t k = 0; k < counts[face]; ++k, ++i) {
        double p[3];
        p[axis] = side * half[axis];
        for (int a = 0; a < 3; ++a)
          if (a != axis) p[a] = rng.uniform(-half[a], half[a]);
        for (int a = 0; a < 3; ++a) pos[i * 3 + a] = static_cast<Real>(p[a]);
      }
    }
    break;
  }
  case ShapeFamily::torus: {
    // Area element r(R + r cos t) dt dphi: accept the minor angle t with
    // probability (R + r cos t)/(R + r).
    double R = s.scale, r = s.scale * s.minor_ratio;
    for (std::int64_t i = 0; i < n; ++i) {
      double t = 0;
      for (;;) {
        t = rng.uniform(0, two_pi);
        if (rng.next_double() * (R + r) <= R + r * std::cos(t)) break;
      }
      double phi = rng.uniform(0, two_pi);
      double ring = R + r * std::cos(t);
      pos[i * 3 + 0] = static_cast<Real>(ring * std::cos(phi));
      pos[i * 3 + 1] = static_cast<Real>(ring * std::sin(phi));
      pos[i * 3 + 2] = static_cast<Real>(r * std::sin(t));
    }
    break;
  }
  case ShapeFamily::plane_with_holes: {
    double sx = s.scale, sy = s.scale * s.aspect_y;
    auto holes = plane_holes(s);
    for (std::int64_t i = 0; i < n; ++i) {
      bool placed = false;
      for (int tries = 0; tries < 10000 && !placed; ++tries) {
        double x = rng.uniform(-sx / 2, sx / 2);
        double y = rng.uniform(-sy / 2, sy / 2);
        bool inside_hole = false;
        for (const auto &h : holes) {
          double dx = x - h[0], dy = y - h[1];
          inside_hole = inside_hole || dx * dx + dy * dy < h[2] * h[2];
        }
        if (inside_hole) continue;
        pos[i * 3 + 0] = static_cast<Real>(x);
        pos[i * 3 + 1] = static_cast<Real>(y);
        pos[i * 3 + 2] = 0;
        placed = true;
      }
      if (!placed)
        throw config_error("shape: holes cover the plane, cannot sample");
    }
    break;
  }
  default:
    throw config_error("shape: unknown family code");
  }
  return make_cloud(std::move(pos));
}

// Centroid to the origin, then scale so the farthest point sits at distance
// 1.  An all-coincident cloud is centered and left at scale 1.  Features are
// untouched.
template <class Real> PointCloud<Real> normalize_cloud(const PointCloud<Real> &c) {
  validate_cloud(c);
  const std::int64_t n = c.n();
  PointCloud<Real> out = c;
  Real mean[3] = {0, 0, 0};
  for (std::int64_t i = 0; i < n; ++i)
    for (int a = 0; a < 3; ++a) mean[a] += c.positions[i * 3 + a];
  for (int a = 0; a < 3; ++a) mean[a] /= static_cast<Real>(n);
  Real max_sq = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    Real sq = 0;
    for (int a = 0; a < 3; ++a) {
      Real d = c.positions[i * 3 + a] - mean[a];
      out.positions[i * 3 + a] = d;
      sq += d * d;
    }
    max_sq = std::max(max_sq, sq);
  }
  if (max_sq > 0) {
    Real inv = 1 / std::sqrt(max_sq);
    for (Real &v : out.positions.data) v *= inv;
  }
  return out;
}

// The canonical desk-scale shape mixture: `count` normalized clouds cycling
// through the four families with per-cloud randomized aspect parameters,
// every draw chained off (seed, index).
template <class Real>
std::vector<PointCloud<Real>> toy_shape_dataset(std::int64_t count,
                                                std::int64_t n_points,
                                                std::uint64_t seed) {
  if (count < 1) throw config_error("toy_shape_dataset: count must be >= 1");
  std::vector<PointCloud<Real>> out;
  out.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    Rng rng(chain_seed(seed, "toy-shape", static_cast<std::uint64_t>(i)));
    ShapeSpec s;
    s.family = static_cast<ShapeFamily>(i % 4);
    s.n_points = n_points;
    s.seed = chain_seed(seed, "toy-shape-points", static_cast<std::uint64_t>(i));
    switch (s.family) {
    case ShapeFamily::sphere: break;
    case ShapeFamily::box:
      s.aspect_y = rng.uniform(0.5, 1.5);
      s.aspect_z = rng.uniform(0.5, 1.5);
      break;
    case ShapeFamily::torus:
      s.minor_ratio = rng.uniform(0.25, 0.5);
      break;
    case ShapeFamily::plane_with_holes:
      s.aspect_y = rng.uniform(0.6, 1.4);
      s.minor_ratio = rng.uniform(0.25, 0.45);
      s.holes = 2 + static_cast<int>(rng.next_below(3));
      break;
    }
    out.push_back(normalize_cloud(gen_shape<Real>(s)));
  }
  return out;
}

// ---- matched-moment Gaussian baseline ----------------------------------------

// Per-axis mean and standard deviation pooled over every point of a corpus.
template <class Real> struct CloudMoments {
  std::array<Real, 3> mean{};
  std::array<Real, 3> stddev{};
};

template <class Real>
CloudMoments<Real> compute_moments(const std::vector<PointCloud<Real>> &clouds) {
  if (clouds.empty()) throw config_error("compute_moments: empty corpus");
  double sum[3] = {0, 0, 0}, sq[3] = {0, 0, 0};
  std::int64_t total = 0;
  for (const auto &c : clouds) {
    validate_cloud(c);
    for (std::int64_t i = 0; i < c.n(); ++i)
      for (int a = 0; a < 3; ++a) {
        double v = static_cast<double>(c.positions[i * 3 + a]);
        sum[a] += v;
        sq[a] += v * v;
      }
    total += c.n();
  }
  CloudMoments<Real> m;
  for (int a = 0; a < 3; ++a) {
    double mean = sum[a] / static_cast<double>(total);
    double var = std::max(0.0, sq[a] / static_cast<double>(total) - mean * mean);
    m.mean[a] = static_cast<Real>(mean);
    m.stddev[a] = static_cast<Real>(std::sqrt(var));
  }
  return m;
}

// A cloud of i.i.d. Gaussian points with the given per-axis moments: the
// random baseline that any trained reconstruction has to beat.
template <class Real>
PointCloud<Real> gen_gaussian(const CloudMoments<Real> &m, std::int64_t n,
                              std::uint64_t seed) {
  if (n < 1) throw config_error("gen_gaussian: n must be >= 1");
  Tensor<Real> pos({n, 3});
  Rng rng(chain_seed(seed, "gaussian"));
  for (std::int64_t i = 0; i < n; ++i)
    for (int a = 0; a < 3; ++a)
      pos[i * 3 + a] = m.mean[a] + m.stddev[a] * static_cast<Real>(rng.normal());
  return make_cloud(std::move(pos));
}

// ---- Lennard-Jones particle simulator ----------------------------------------

// Reduced units (mass = 1): the natural time unit is sigma*sqrt(m/eps) = 1.
// Pair potential 4*eps*((sigma/r)^12 - (sigma/r)^6), force zeroed beyond the
// cutoff and potential shifted to be continuous there; velocity-Verlet
// integration; reflecting walls on the cube [-extent/2, extent/2]^3.
struct LJConfig {
  std::int64_t n_particles = 64;
  double extent = 6;
  double eps_lj = 1;
  double sigma_lj = 1;
  double cutoff = 2.5;
  double dt = 0.005;
  std::int64_t steps = 1000;
  std::int64_t stride = 10; // record every stride-th step (frame 0 always)
  std::uint64_t seed = 0;
  // Optional explicit initial positions, flat (n_particles*3).  Empty means
  // random placement with pairwise separation >= 0.5*sigma_lj and a
  // 0.5*sigma_lj margin from the walls.
  std::vector<double> initial_positions;
};

// Frames of a simulated (or learned) point-cloud sequence; features hold the
// named channels (velocities for LJ runs).  dt is the time between stored
// frames, not the integrator step.
template <class Real> struct Trajectory {
  std::vector<PointCloud<Real>> frames;
  double dt = 0;
  std::vector<std::string> channels;
};

namespace detail {

inline void validate_lj_config(const LJConfig &c) {
  if (c.n_particles < 1)
    throw config_error("lj: n_particles must be >= 1");
  if (!(c.extent > 0)) throw config_error("lj: extent must be > 0");
  if (!(c.eps_lj > 0) || !(c.sigma_lj > 0))
    throw config_error("lj: eps_lj and sigma_lj must be > 0");
  if (c.cutoff < c.sigma_lj)
    throw config_error("lj: cutoff must be >= sigma_lj");
  if (!(c.dt > 0)) throw config_error("lj: dt must be > 0");
  if (c.steps < 0) throw config_error("lj: steps must be >= 0");
  if (c.stride < 1) throw config_error("lj: stride must be >= 1");
  if (!c.initial_positions.empty() &&
      c.initial_positions.size() !=
          static_cast<std::size_t>(c.n_particles) * 3)
    throw config_error("lj: initial_positions must hold n_particles*3 values");
}

// Pairwise accelerations (mass 1).  Each pair is computed once and applied
// with opposite signs, so forces are antisymmetric to the last bit and total
// momentum is conserved up to summation roundoff.
template <class Real>
void lj_accel(const LJConfig &cfg, const std::vector<Real> &p,
              std::vector<Real> &a) {
  const std::int64_t n = cfg.n_particles;
  std::fill(a.begin(), a.end(), Real(0));
  const Real rc2 = static_cast<Real>(cfg.cutoff * cfg.cutoff);
  const Real sig2 = static_cast<Real>(cfg.sigma_lj * cfg.sigma_lj);
  const Real eps = static_cast<Real>(cfg.eps_lj);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = i + 1; j < n; ++j) {
      Real d[3], r2 = 0;
      for (int ax = 0; ax < 3; ++ax) {
        d[ax] = p[i * 3 + ax] - p[j * 3 + ax];
        r2 += d[ax] * d[ax];
      }
      if (r2 >= rc2 || r2 == 0) continue;
      Real inv2 = sig2 / r2;
      Real inv6 = inv2 * inv2 * inv2;
      Real f_over_r = 24 * eps * (2 * inv6 * inv6 - inv6) / r2;
      for (int ax = 0; ax < 3; ++ax) {
        Real f = f_over_r * d[ax];
        a[i * 3 + ax] += f;
        a[j * 3 + ax] -= f;
      }
    }
}

} // namespace detail

// Total energy (kinetic + shifted pair potential) of a state; the quantity
// velocity-Verlet approximately conserves between wall contacts.
template <class Real>
Real lj_energy(const LJConfig &cfg, const std::vector<Real> &pos,
               const std::vector<Real> &vel) {
  detail::validate_lj_config(cfg);
  const std::int64_t n = cfg.n_particles;
  if (pos.size() != static_cast<std::size_t>(n) * 3 || vel.size() != pos.size())
    throw config_error("lj_energy: state must hold n_particles*3 values");
  const Real rc2 = static_cast<Real>(cfg.cutoff * cfg.cutoff);
  const Real sig2 = static_cast<Real>(cfg.sigma_lj * cfg.sigma_lj);
  const Real eps = static_cast<Real>(cfg.eps_lj);
  Real inv2c = sig2 / rc2;
  Real inv6c = inv2c * inv2c * inv2c;
  Real shift = 4 * eps * (inv6c * inv6c - inv6c);
  Real e = 0;
  for (std::int64_t i = 0; i < n; ++i)
    for (int ax = 0; ax < 3; ++ax)
      e += Real(0.5) * vel[i * 3 + ax] * vel[i * 3 + ax];
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = i + 1; j < n; ++j) {
      Real r2 = 0;
      for (int ax = 0; ax < 3; ++ax) {
        Real d = pos[i * 3 + ax] - pos[j * 3 + ax];
        r2 += d * d;
      }
      if (r2 >= rc2 || r2 == 0) continue;
      Real inv2 = sig2 / r2;
      Real inv6 = inv2 * inv2 * inv2;
      e += 4 * eps * (inv6 * inv6 - inv6) - shift;
    }
  return e;
}

// Simulate cfg.steps velocity-Verlet steps from zero initial velocities and
// return the recorded frames (positions + 3 velocity feature channels).
template <class Real> Trajectory<Real> lj_simulate(const LJConfig &cfg) {
  detail::validate_lj_config(cfg);
  const std::int64_t n = cfg.n_particles;
  const double half = cfg.extent / 2;
  const double min_sep = 0.5 * cfg.sigma_lj;
  const double min_sep_sq = min_sep * min_sep;

  std::vector<Real> pos(static_cast<std::size_t>(n) * 3);
  if (!cfg.initial_positions.empty()) {
    for (std::size_t i = 0; i < cfg.initial_positions.size(); ++i) {
      double v = cfg.initial_positions[i];
      if (std::abs(v) > half)
        throw config_error("lj: initial position outside the box");
      pos[i] = static_cast<Real>(v);
    }
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = i + 1; j < n; ++j) {
        double r2 = 0;
        for (int ax = 0; ax < 3; ++ax) {
          double d = static_cast<double>(pos[i * 3 + ax]) -
                     static_cast<double>(pos[j * 3 + ax]);
          r2 += d * d;
        }
        if (r2 < min_sep_sq)
          throw config_error("lj: initial particles " + std::to_string(i) +
                             " and " + std::to_string(j) +
                             " overlap below 0.5*sigma_lj");
      }
  } else {
    // Sequential insertion with bounded retries per particle.
    Rng rng(chain_seed(cfg.seed, "lj-init"));
    double lo = -half + min_sep, hi = half - min_sep;
    if (lo >= hi)
      throw config_error("lj: box too small for the wall margin");
    for (std::int64_t i = 0; i < n; ++i) {
      bool placed = false;
      for (int tries = 0; tries < 1000 && !placed; ++tries) {
        double cand[3];
        for (int ax = 0; ax < 3; ++ax) cand[ax] = rng.uniform(lo, hi);
        bool ok = true;
        for (std::int64_t j = 0; j < i && ok; ++j) {
          double r2 = 0;
          for (int ax = 0; ax < 3; ++ax) {
            double d = cand[ax] - static_cast<double>(pos[j * 3 + ax]);
            r2 += d * d;
          }
          ok = r2 >= min_sep_sq;
        }
        if (!ok) continue;
        for (int ax = 0; ax < 3; ++ax)
          pos[i * 3 + ax] = static_cast<Real>(cand[ax]);
        placed = true;
      }
      if (!placed)
        throw config_error(
            "lj: cannot place " + std::to_string(n) +
            " particles without overlap; box too dense");
    }
  }

  std::vector<Real> vel(static_cast<std::size_t>(n) * 3, Real(0));
  std::vector<Real> acc(static_cast<std::size_t>(n) * 3);
  detail::lj_accel(cfg, pos, acc);

  Trajectory<Real> traj;
  traj.dt = cfg.dt * static_cast<double>(cfg.stride);
  traj.channels = {"vx", "vy", "vz"};
  auto record = [&] {
    Tensor<Real> p({n, 3}), f({n, 3});
    std::copy(pos.begin(), pos.end(), p.data.begin());
    std::copy(vel.begin(), vel.end(), f.data.begin());
    traj.frames.push_back(make_cloud(std::move(p), std::move(f)));
  };
  record();

  const Real dt = static_cast<Real>(cfg.dt);
  const Real wall = static_cast<Real>(half);
  for (std::int64_t step = 1; step <= cfg.steps; ++step) {
    for (std::size_t i = 0; i < pos.size(); ++i) {
      vel[i] += Real(0.5) * dt * acc[i];
      pos[i] += dt * vel[i];
      if (!std::isfinite(static_cast<double>(pos[i])))
        throw numerical_failure("lj: non-finite state at step " +
                                std::to_string(step));
      // Mirror reflection at the walls preserves speed exactly.  Folding the
      // line onto a period-2L triangle wave handles any overshoot in O(1);
      // the velocity flips when the fold lands on a descending branch.
      if (pos[i] < -wall || pos[i] > wall) {
        const Real L = 2 * wall;
        Real m = std::fmod(pos[i] + wall, 2 * L);
        if (m < 0) m += 2 * L;
        if (m > L) {
          m = 2 * L - m;
          vel[i] = -vel[i];
        }
        pos[i] = m - wall;
      }
    }
    detail::lj_accel(cfg, pos, acc);
    for (std::size_t i = 0; i < vel.size(); ++i)
      vel[i] += Real(0.5) * dt * acc[i];
    for (std::size_t i = 0; i < pos.size(); ++i)
      if (!std::isfinite(static_cast<double>(pos[i])) ||
          !std::isfinite(static_cast<double>(vel[i])))
        throw numerical_failure("lj: non-finite state at step " +
                                std::to_string(step));
    if (step % cfg.stride == 0) record();
  }
  return traj;
}

// ---- cloud file IO ------------------------------------------------------------

namespace detail {

template <class Real>
void write_point_line(std::ostream &os, const PointCloud<Real> &c,
                      std::int64_t i) {
  os << std::setprecision(std::numeric_limits<Real>::max_digits10);
  for (int a = 0; a < 3; ++a)
    os << (a ? " " : "") << c.positions[i * 3 + a];
  for (std::int64_t ch = 0; ch < c.channels(); ++ch)
    os << " " << c.features[i * c.channels() + ch];
  os << "\n";
}

// Parse one data line into exactly `want` finite reals (want < 0 accepts any
// count >= 3).  Throws with the 1-based line number on bad input.
inline std::vector<double> parse_point_line(const std::string &line,
                                            std::int64_t want,
                                            std::size_t line_no,
                                            const std::string &path) {
  auto malformed = [&]() {
    return config_error("cloud load: malformed line " +
                        std::to_string(line_no) + " in '" + path + "'");
  };
  std::istringstream iss(line);
  std::vector<double> vals;
  std::string tok;
  while (iss >> tok) {
    char *end = nullptr;
    double v = std::strtod(tok.c_str(), &end);
    if (end != tok.c_str() + tok.size() || !std::isfinite(v)) throw malformed();
    vals.push_back(v);
  }
  if (vals.size() < 3 || (want >= 0 && vals.size() != static_cast<std::size_t>(want)))
    throw malformed();
  return vals;
}

inline bool blank_line(const std::string &s) {
  return s.find_first_not_of(" \t\r\n") == std::string::npos;
}

} // namespace detail

// ASCII XYZ: one "x y z [f1 ... fC]" line per point, full precision.
template <class Real>
void save_cloud_xyz(const PointCloud<Real> &c, const std::string &path) {
  validate_cloud(c);
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw config_error("cloud save: cannot open '" + path + "'");
  for (std::int64_t i = 0; i < c.n(); ++i) detail::write_point_line(os, c, i);
  if (!os) throw config_error("cloud save: write failed for '" + path + "'");
}

// ASCII PLY with per-vertex floating-point properties x y z f0 ... f{C-1}.
template <class Real>
void save_cloud_ply(const PointCloud<Real> &c, const std::string &path) {
  validate_cloud(c);
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw config_error("cloud save: cannot open '" + path + "'");
  const char *type = sizeof(Real) == 8 ? "double" : "float";
  os << "ply\nformat ascii 1.0\nelement vertex " << c.n() << "\n";
  for (const char *ax : {"x", "y", "z"})
    os << "property " << type << " " << ax << "\n";
  for (std::int64_t ch = 0; ch < c.channels(); ++ch)
    os << "property " << type << " f" << ch << "\n";
  os << "end_header\n";
  for (std::int64_t i = 0; i < c.n(); ++i) detail::write_point_line(os, c, i);
  if (!os) throw config_error("cloud save: write failed for '" + path + "'");
}

// Dispatch on extension: ".ply" writes PLY, anything else XYZ.
template <class Real>
void save_cloud(const PointCloud<Real> &c, const std::string &path) {
  if (std::filesystem::path(path).extension() == ".ply")
    save_cloud_ply(c, path);
  else
    save_cloud_xyz(c, path);
}

// Load either format; a file whose first line is "ply" is parsed as PLY.
template <class Real> PointCloud<Real> load_cloud(const std::string &path) {
  std::ifstream is(path);
  if (!is) throw config_error("cloud load: cannot open '" + path + "'");
  std::vector<std::string> lines;
  for (std::string line; std::getline(is, line);) lines.push_back(line);

  std::size_t at = 0;
  while (at < lines.size() && detail::blank_line(lines[at])) ++at;
  if (at == lines.size())
    throw config_error("cloud load: no points in '" + path + "'");

  std::int64_t want = -1, declared = -1;
  std::string first = lines[at];
  if (!first.empty() && first.back() == '\r') first.pop_back();
  if (first == "ply") {
    // Header: ascii format, one vertex element, x y z then feature props.
    std::vector<std::string> props;
    bool ascii = false, ended = false;
    ++at;
    for (; at < lines.size() && !ended; ++at) {
      std::istringstream iss(lines[at]);
      std::string word;
      iss >> word;
      if (word == "comment" || word.empty()) continue;
      if (word == "format") {
        std::string kind;
        iss >> kind;
        ascii = kind == "ascii";
      } else if (word == "element") {
        std::string name;
        std::int64_t count = 0;
        iss >> name >> count;
        if (name != "vertex")
          throw config_error("cloud load: unsupported element '" + name +
                             "' in '" + path + "'");
        declared = count;
      } else if (word == "property") {
        std::string type, name;
        iss >> type >> name;
        props.push_back(name);
      } else if (word == "end_header") {
        ended = true;
      } else {
        throw config_error("cloud load: malformed line " +
                           std::to_string(at + 1) + " in '" + path + "'");
      }
    }
    if (!ended || !ascii || declared < 0)
      throw config_error("cloud load: bad PLY header in '" + path + "'");
    if (props.size() < 3 || props[0] != "x" || props[1] != "y" || props[2] != "z")
      throw config_error("cloud load: PLY properties must start with x y z in '" +
                         path + "'");
    if (declared == 0)
      throw config_error("cloud load: no points in '" + path + "'");
    want = static_cast<std::int64_t>(props.size());
  }

  std::vector<std::vector<double>> rows;
  for (; at < lines.size(); ++at) {
    if (detail::blank_line(lines[at])) continue;
    rows.push_back(detail::parse_point_line(lines[at], want, at + 1, path));
    if (want < 0) want = static_cast<std::int64_t>(rows.back().size());
  }
  if (rows.empty()) throw config_error("cloud load: no points in '" + path + "'");
  if (declared >= 0 && declared != static_cast<std::int64_t>(rows.size()))
    throw config_error("cloud load: expected " + std::to_string(declared) +
                       " vertices, found " + std::to_string(rows.size()) +
                       " in '" + path + "'");

  const std::int64_t n = static_cast<std::int64_t>(rows.size());
  const std::int64_t channels = want - 3;
  Tensor<Real> pos({n, 3}), feat({n, channels});
  for (std::int64_t i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a)
      pos[i * 3 + a] = static_cast<Real>(rows[static_cast<std::size_t>(i)][a]);
    for (std::int64_t ch = 0; ch < channels; ++ch)
      feat[i * channels + ch] = static_cast<Real>(
          rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(3 + ch)]);
  }
  PointCloud<Real> c = make_cloud(std::move(pos), std::move(feat));
  validate_cloud(c);
  return c;
}

// ---- trajectory IO ------------------------------------------------------------

namespace detail {

inline std::string frame_filename(std::size_t index) {
  std::ostringstream os;
  os << "frame_" << std::setfill('0') << std::setw(6) << index << ".xyz";
  return os.str();
}

} // namespace detail

// A trajectory on disk is a directory of per-frame XYZ files plus a
// manifest.json recording dt, the frame count, and the channel names.
template <class Real>
void save_trajectory(const Trajectory<Real> &traj, const std::string &dir) {
  if (traj.frames.empty())
    throw config_error("trajectory save: no frames");
  for (const auto &f : traj.frames) {
    validate_cloud(f);
    if (f.n() != traj.frames.front().n() ||
        f.channels() != traj.frames.front().channels())
      throw config_error("trajectory save: inconsistent frame shapes");
  }
  if (static_cast<std::int64_t>(traj.channels.size()) !=
      traj.frames.front().channels())
    throw config_error("trajectory save: channel names do not match features");
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = {{"dt", traj.dt},
                             {"frames", traj.frames.size()},
                             {"channels", traj.channels}};
  std::ofstream os(std::filesystem::path(dir) / "manifest.json");
  if (!os) throw config_error("trajectory save: cannot write manifest in '" +
                              dir + "'");
  os << manifest.dump(2) << "\n";
  for (std::size_t i = 0; i < traj.frames.size(); ++i)
    save_cloud_xyz(traj.frames[i],
                   (std::filesystem::path(dir) / detail::frame_filename(i)).string());
}

template <class Real> Trajectory<Real> load_trajectory(const std::string &dir) {
  std::ifstream is(std::filesystem::path(dir) / "manifest.json");
  if (!is)
    throw config_error("trajectory load: no manifest.json in '" + dir + "'");
  nlohmann::json manifest;
  try {
    is >> manifest;
  } catch (const nlohmann::json::exception &e) {
    throw config_error("trajectory load: bad manifest in '" + dir + "': " +
                       e.what());
  }
  for (const auto &[key, _] : manifest.items())
    if (key != "dt" && key != "frames" && key != "channels")
      throw config_error("trajectory load: unknown manifest key '" + key + "'");
  if (!manifest.contains("dt") || !manifest.contains("frames") ||
      !manifest.contains("channels"))
    throw config_error("trajectory load: manifest missing dt/frames/channels");

  Trajectory<Real> traj;
  traj.dt = manifest["dt"].get<double>();
  traj.channels = manifest["channels"].get<std::vector<std::string>>();
  auto count = manifest["frames"].get<std::size_t>();
  if (count == 0) throw config_error("trajectory load: zero frames in manifest");
  for (std::size_t i = 0; i < count; ++i) {
    auto frame = load_cloud<Real>(
        (std::filesystem::path(dir) / detail::frame_filename(i)).string());
    if (frame.channels() != static_cast<std::int64_t>(traj.channels.size()))
      throw config_error("trajectory load: frame " + std::to_string(i) +
                         " channel count does not match manifest");
    if (!traj.frames.empty() && frame.n() != traj.frames.front().n())
      throw config_error("trajectory load: frame " + std::to_string(i) +
                         " particle count changed");
    traj.frames.push_back(std::move(frame));
  }
  return traj;
}

} // namespace irconv
