#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <vector>

#include "irconv/geometry.hpp"
#include "irconv/tape.hpp"

namespace irconv {

// ---- cost matrices ----------------------------------------------------------

// Euclidean distances between rows of two (n,F) / (m,F) matrices -> (n,m).
template <class Real>
Tensor<Real> pairwise_distance(const Tensor<Real> &a, const Tensor<Real> &b) {
  if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[1])
    throw std::invalid_argument("pairwise_distance: row widths disagree, " +
                                shape_str(a.shape) + " vs " + shape_str(b.shape));
  const std::int64_t n = a.shape[0], m = b.shape[0], f = a.shape[1];
  Tensor<Real> out({n, m});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < m; ++j) {
      Real s = 0;
      for (std::int64_t d = 0; d < f; ++d) {
        Real diff = a[i * f + d] - b[j * f + d];
        s += diff * diff;
      }
      out[i * m + j] = std::sqrt(s);
    }
  return out;
}

// Positional cost matrix M_ij = |p_i - q_j| between two clouds.
template <class Real>
Tensor<Real> cost_matrix(const PointCloud<Real> &a, const PointCloud<Real> &b) {
  validate_cloud(a);
  validate_cloud(b);
  return pairwise_distance(a.positions, b.positions);
}

// L2 cost on positions⊕features rows (latent-cloud similarity cost).
template <class Real>
Tensor<Real> sim_cost_matrix(const PointCloud<Real> &a, const PointCloud<Real> &b) {
  validate_cloud(a);
  validate_cloud(b);
  if (a.n() != b.n())
    throw std::invalid_argument("sim_cost_matrix: point counts disagree, " +
                                std::to_string(a.n()) + " vs " +
                                std::to_string(b.n()));
  if (a.channels() != b.channels())
    throw std::invalid_argument("sim_cost_matrix: feature widths disagree, " +
                                std::to_string(a.channels()) + " vs " +
                                std::to_string(b.channels()));
  const std::int64_t n = a.n(), c = a.channels();
  Tensor<Real> ra({n, 3 + c}), rb({n, 3 + c});
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t d = 0; d < 3; ++d) {
      ra[i * (3 + c) + d] = a.positions[i * 3 + d];
      rb[i * (3 + c) + d] = b.positions[i * 3 + d];
    }
    for (std::int64_t d = 0; d < c; ++d) {
      ra[i * (3 + c) + 3 + d] = a.features[i * c + d];
      rb[i * (3 + c) + 3 + d] = b.features[i * c + d];
    }
  }
  return pairwise_distance(ra, rb);
}

// ---- Chamfer ----------------------------------------------------------------

template <class Real> struct ChamferResult {
  Real value = 0;
  std::vector<std::int64_t> nn_ab; // for each point of a, nearest index in b
  std::vector<std::int64_t> nn_ba; // for each point of b, nearest index in a
};

// Chamfer pseudo-distance: sum over a of the nearest distance into b, plus
// the same with roles swapped.  Unsquared and unnormalized; positions only.
template <class Real>
ChamferResult<Real> chamfer(const PointCloud<Real> &a, const PointCloud<Real> &b) {
  validate_cloud(a);
  validate_cloud(b);
  const std::int64_t n = a.n(), m = b.n();
  ChamferResult<Real> r;
  r.nn_ab.resize(static_cast<std::size_t>(n));
  r.nn_ba.assign(static_cast<std::size_t>(m), 0);
  std::vector<Real> best_b(static_cast<std::size_t>(m),
                           std::numeric_limits<Real>::max());
  double acc = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    Real best = std::numeric_limits<Real>::max();
    std::int64_t arg = 0;
    for (std::int64_t j = 0; j < m; ++j) {
      Real dx = a.positions[i * 3 + 0] - b.positions[j * 3 + 0];
      Real dy = a.positions[i * 3 + 1] - b.positions[j * 3 + 1];
      Real dz = a.positions[i * 3 + 2] - b.positions[j * 3 + 2];
      Real d2 = dx * dx + dy * dy + dz * dz;
      if (d2 < best) {
        best = d2;
        arg = j;
      }
      if (d2 < best_b[static_cast<std::size_t>(j)]) {
        best_b[static_cast<std::size_t>(j)] = d2;
        r.nn_ba[static_cast<std::size_t>(j)] = i;
      }
    }
    r.nn_ab[static_cast<std::size_t>(i)] = arg;
    acc += std::sqrt(static_cast<double>(best));
  }
  for (std::int64_t j = 0; j < m; ++j)
    acc += std::sqrt(static_cast<double>(best_b[static_cast<std::size_t>(j)]));
  r.value = static_cast<Real>(acc);
  return r;
}

// ---- exact EMD (assignment) ---------------------------------------------------

// Exact min-cost assignment via the Hungarian method with potentials
// (O(n^3)).  Returns, for each row, the assigned column.
template <class Real>
std::vector<std::int64_t> hungarian_assign(const Tensor<Real> &cost) {
  if (cost.shape.size() != 2 || cost.shape[0] != cost.shape[1])
    throw std::invalid_argument("hungarian: cost matrix must be square, got " +
                                shape_str(cost.shape));
  const std::int64_t n = cost.shape[0];
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<double> v(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<std::int64_t> p(static_cast<std::size_t>(n + 1), 0);
  std::vector<std::int64_t> way(static_cast<std::size_t>(n + 1), 0);
  for (std::int64_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::int64_t j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
    std::vector<char> used(static_cast<std::size_t>(n + 1), 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      std::int64_t i0 = p[static_cast<std::size_t>(j0)], j1 = 0;
      double delta = inf;
      for (std::int64_t j = 1; j <= n; ++j)
        if (!used[static_cast<std::size_t>(j)]) {
          double cur = static_cast<double>(cost[(i0 - 1) * n + (j - 1)]) -
                       u[static_cast<std::size_t>(i0)] -
                       v[static_cast<std::size_t>(j)];
          if (cur < minv[static_cast<std::size_t>(j)]) {
            minv[static_cast<std::size_t>(j)] = cur;
            way[static_cast<std::size_t>(j)] = j0;
          }
          if (minv[static_cast<std::size_t>(j)] < delta) {
            delta = minv[static_cast<std::size_t>(j)];
            j1 = j;
          }
        }
      for (std::int64_t j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      std::int64_t j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0);
  }
  std::vector<std::int64_t> row_to_col(static_cast<std::size_t>(n), -1);
  for (std::int64_t j = 1; j <= n; ++j)
    if (p[static_cast<std::size_t>(j)] > 0)
      row_to_col[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] =
          j - 1;
  return row_to_col;
}

// Doubly stochastic transport plan plus its cost and marginal residuals.
template <class Real> struct TransportPlan {
  Tensor<Real> gamma;      // (m, m), entries >= 0
  Real cost = 0;           // <gamma, M>_F on the raw cost
  Real row_residual = 0;   // max_i |sum_j gamma_ij - 1/m|
  Real col_residual = 0;   // max_j |sum_i gamma_ij - 1/m|
};

template <class Real> struct EmdResult {
  Real value = 0;                       // <gamma, M>_F = mean matched distance
  std::vector<std::int64_t> assignment; // row -> column permutation
  TransportPlan<Real> plan;
};

// Exact EMD between equal-size clouds under uniform marginals 1/m: the LP
// optimum is attained at a permutation, found by the Hungarian method.
template <class Real>
EmdResult<Real> exact_emd_cost(const Tensor<Real> &cost) {
  const std::int64_t m = cost.shape[0];
  EmdResult<Real> r;
  r.assignment = hungarian_assign(cost);
  r.plan.gamma = Tensor<Real>::zeros({m, m});
  double acc = 0;
  const Real w = Real(1) / static_cast<Real>(m);
  for (std::int64_t i = 0; i < m; ++i) {
    r.plan.gamma[i * m + r.assignment[static_cast<std::size_t>(i)]] = w;
    acc += static_cast<double>(cost[i * m + r.assignment[static_cast<std::size_t>(i)]]);
  }
  r.value = static_cast<Real>(acc / static_cast<double>(m));
  r.plan.cost = r.value;
  r.plan.row_residual = 0;
  r.plan.col_residual = 0;
  return r;
}

template <class Real>
EmdResult<Real> exact_emd(const PointCloud<Real> &a, const PointCloud<Real> &b) {
  if (a.n() != b.n())
    throw std::invalid_argument("exact_emd: clouds must have equal size, got " +
                                std::to_string(a.n()) + " vs " +
                                std::to_string(b.n()));
  return exact_emd_cost(cost_matrix(a, b));
}

// ---- auction EMD --------------------------------------------------------------

template <class Real> struct AuctionOptions {
  // Cost resolution: the terminal epsilon is 1/(2*m*scale) in units of the
  // normalized (max = 1) cost, giving an assignment within m*eps of optimal.
  Real scale = Real(1000);
  Real eps0_divisor = Real(8); // eps_0 = max_cost / 8
  Real eps_factor = Real(4);   // divide per phase
  std::int64_t max_bids_per_phase = 20'000'000;
};

template <class Real> struct AuctionResult {
  Real value = 0;
  std::vector<std::int64_t> assignment; // bidder (row) -> object (column)
  Real eps_final = 0;                   // in normalized cost units
  std::int64_t phases = 0;
  std::int64_t bids = 0;
};

// Bertsekas forward auction with epsilon scaling on the normalized cost.
// Bidders are processed in FIFO order, so the result is deterministic.
template <class Real>
AuctionResult<Real> auction_assign(const Tensor<Real> &cost,
                                   AuctionOptions<Real> opts = {}) {
  if (cost.shape.size() != 2 || cost.shape[0] != cost.shape[1])
    throw std::invalid_argument("auction: cost matrix must be square, got " +
                                shape_str(cost.shape));
  const std::int64_t m = cost.shape[0];
  AuctionResult<Real> r;
  double maxc = 0;
  for (auto v : cost.data) maxc = std::max(maxc, static_cast<double>(v));
  if (maxc == 0.0) { // all costs zero: identity assignment is optimal
    r.assignment.resize(static_cast<std::size_t>(m));
    for (std::int64_t i = 0; i < m; ++i) r.assignment[static_cast<std::size_t>(i)] = i;
    return r;
  }
  // Benefits of the equivalent maximization problem, on normalized costs.
  std::vector<double> benefit(static_cast<std::size_t>(m * m));
  for (std::int64_t i = 0; i < m * m; ++i)
    benefit[static_cast<std::size_t>(i)] = -static_cast<double>(cost[i]) / maxc;

  const double eps_stop =
      1.0 / (2.0 * static_cast<double>(m) * static_cast<double>(opts.scale));
  double eps = 1.0 / static_cast<double>(opts.eps0_divisor);
  std::vector<double> price(static_cast<std::size_t>(m), 0.0);
  std::vector<std::int64_t> owner(static_cast<std::size_t>(m), -1); // object -> bidder
  std::vector<std::int64_t> assigned(static_cast<std::size_t>(m), -1); // bidder -> object

  bool last_phase = false;
  while (!last_phase) {
    if (eps <= eps_stop) last_phase = true;
    ++r.phases;
    std::fill(owner.begin(), owner.end(), -1);
    std::fill(assigned.begin(), assigned.end(), -1);
    std::deque<std::int64_t> queue;
    for (std::int64_t i = 0; i < m; ++i) queue.push_back(i);
    std::int64_t bids_this_phase = 0;
    while (!queue.empty()) {
      if (++bids_this_phase > opts.max_bids_per_phase) {
        // Report the best complete assignment found so far (greedy patch-up
        // of the unassigned bidders) inside the error message.
        double best = 0;
        for (std::int64_t i = 0; i < m; ++i) {
          std::int64_t j = assigned[static_cast<std::size_t>(i)];
          best += j >= 0 ? static_cast<double>(cost[i * m + j]) : maxc;
        }
        throw std::runtime_error(
            "auction: no convergence within bid budget; best-found cost " +
            std::to_string(best / static_cast<double>(m)));
      }
      std::int64_t i = queue.front();
      queue.pop_front();
      // Best and second-best net value for bidder i.
      const double *b = benefit.data() + i * m;
      double best = -std::numeric_limits<double>::infinity();
      double second = best;
      std::int64_t bj = 0;
      for (std::int64_t j = 0; j < m; ++j) {
        double v = b[j] - price[static_cast<std::size_t>(j)];
        if (v > best) {
          second = best;
          best = v;
          bj = j;
        } else if (v > second) {
          second = v;
        }
      }
      if (m == 1) second = best; // single object: bid increment is just eps
      price[static_cast<std::size_t>(bj)] += (best - second) + eps;
      std::int64_t prev = owner[static_cast<std::size_t>(bj)];
      if (prev >= 0) {
        assigned[static_cast<std::size_t>(prev)] = -1;
        queue.push_back(prev);
      }
      owner[static_cast<std::size_t>(bj)] = i;
      assigned[static_cast<std::size_t>(i)] = bj;
    }
    r.bids += bids_this_phase;
    r.eps_final = static_cast<Real>(eps);
    eps /= static_cast<double>(opts.eps_factor);
  }
  r.assignment.assign(assigned.begin(), assigned.end());
  double acc = 0;
  for (std::int64_t i = 0; i < m; ++i)
    acc += static_cast<double>(cost[i * m + r.assignment[static_cast<std::size_t>(i)]]);
  r.value = static_cast<Real>(acc / static_cast<double>(m));
  return r;
}

template <class Real>
AuctionResult<Real> auction_emd(const PointCloud<Real> &a, const PointCloud<Real> &b,
                                AuctionOptions<Real> opts = {}) {
  if (a.n() != b.n())
    throw std::invalid_argument("auction_emd: clouds must have equal size, got " +
                                std::to_string(a.n()) + " vs " +
                                std::to_string(b.n()));
  return auction_assign(cost_matrix(a, b), opts);
}

// ---- Sinkhorn -----------------------------------------------------------------

template <class Real> struct SinkhornOptions {
  Real eps = Real(0.002); // entropic weight, in normalized-cost units
  Real tol = precision_traits<Real>::sinkhorn_default_tol;
  // Cap on iterations at the target eps (annealing warm-up is separate and
  // bounded).  Near-degenerate instances enter a ~1/t marginal-error tail at
  // small eps, so the budget buys accuracy; the feasibility rounding below
  // closes whatever gap is left.  Training paths pass a small explicit cap.
  std::int64_t max_iters = 200000;
  bool anneal = true; // warm-start through a decreasing epsilon schedule
  Real scale = 0;     // cost normalizer; 0 -> largest entry of this instance
  // When iteration stops short of tol, project the plan onto the uniform-
  // marginal polytope (row/column scaling plus a rank-one repair).  The
  // returned residuals are measured after this step; disable to study the
  // raw iteration.
  bool round_plan = true;
};

template <class Real> struct SinkhornResult {
  Real value = 0; // <gamma, M>_F on the raw (un-normalized) cost
  TransportPlan<Real> plan;
  std::int64_t iterations = 0;
  bool converged = false; // iteration alone reached tol (rounding not counted)
  bool rounded = false;   // feasibility rounding was applied to the plan
};

// Entropy-regularized OT with uniform marginals, solved by log-domain
// Sinkhorn iterations on the normalized cost (divided by its largest entry,
// or by a caller-provided batch-wide scale).  The returned value is the
// sharp transport cost <gamma, M> against the raw cost.  eps below the
// precision floor of the active scalar type raises precision_error.
template <class Real>
SinkhornResult<Real> sinkhorn_cost(const Tensor<Real> &cost,
                                   SinkhornOptions<Real> opts = {}) {
  if (cost.shape.size() != 2 || cost.shape[0] != cost.shape[1])
    throw std::invalid_argument("sinkhorn: cost matrix must be square, got " +
                                shape_str(cost.shape));
  if (!(opts.eps > Real(0)))
    throw std::invalid_argument("sinkhorn: eps_entropy must be positive");
  const Real floor = precision_traits<Real>::sinkhorn_eps_floor;
  if (opts.eps < floor)
    throw precision_error(
        "sinkhorn: eps_entropy " + std::to_string(static_cast<double>(opts.eps)) +
        " is below the " + precision_traits<Real>::name + "-precision floor " +
        std::to_string(static_cast<double>(floor)));
  const std::int64_t m = cost.shape[0];
  const Real w = Real(1) / static_cast<Real>(m); // uniform marginal mass

  Real scale = opts.scale;
  if (scale == Real(0))
    for (auto v : cost.data) scale = std::max(scale, v);
  SinkhornResult<Real> r;
  if (scale == Real(0)) { // degenerate: all-zero cost, uniform plan is optimal
    r.plan.gamma = Tensor<Real>::full({m, m}, w * w);
    r.converged = true;
    return r;
  }

  using Arr = Eigen::Array<Real, Eigen::Dynamic, 1>;
  // Work in eps-scaled units: potentials phi = f/eps, psi = g/eps against
  // ce = M/(scale*eps), so the inner log-sum-exp sweeps are pure adds.
  Tensor<Real> ce({m, m}), cet({m, m});
  Arr phi = Arr::Zero(m), psi = Arr::Zero(m), tmp(m), prev(m), colsum(m);
  const Real logm = std::log(static_cast<Real>(m));
  Real level = 0; // eps of the currently loaded ce/cet

  auto load_level = [&](Real e) {
    const Real denom = scale * e;
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < m; ++j) {
        ce[i * m + j] = cost[i * m + j] / denom;
        cet[j * m + i] = ce[i * m + j];
      }
    if (level != Real(0)) { // carry f = eps*phi across the level change
      phi *= level / e;
      psi *= level / e;
    }
    level = e;
  };
  // One half-iteration.  Returns the pre-update marginal residual of that
  // side, read off the potential change: the old row sum equals
  // exp(phi_old - phi_new)/m exactly, so no plan materialization is needed.
  auto update = [&](Arr &out, const Arr &other, const Tensor<Real> &mat) {
    prev = out;
    for (std::int64_t i = 0; i < m; ++i) {
      Eigen::Map<const Arr> row(mat.data.data() + i * m, m);
      tmp = other - row;
      Real mx = tmp.maxCoeff();
      out[i] = -(std::log((tmp - mx).exp().sum()) + mx + logm);
    }
    prev -= out;
    return w * std::max(std::abs(std::expm1(prev.maxCoeff())),
                        std::abs(std::expm1(prev.minCoeff())));
  };
  // Authoritative residuals of the materialized plan at the current level.
  auto residuals = [&]() {
    Real row_res = 0;
    colsum.setZero();
    for (std::int64_t i = 0; i < m; ++i) {
      Eigen::Map<const Arr> row(ce.data.data() + i * m, m);
      tmp = (psi - row + phi[i]).exp();
      row_res = std::max(row_res, std::abs(tmp.sum() - w));
      colsum += tmp;
    }
    return std::max(row_res, (colsum - w).abs().maxCoeff());
  };

  // Annealing warm-up: a bounded number of iterations at a decreasing
  // epsilon schedule, ending one step above the target.  These do not count
  // against max_iters; the final level at the target eps owns that budget.
  if (opts.anneal) {
    Real e = Real(0.25);
    while (e > opts.eps * Real(4)) {
      load_level(e);
      for (std::int64_t it = 0; it < 50; ++it) {
        Real ra = update(phi, psi, ce);
        Real rb = update(psi, phi, cet);
        if (it > 0 && std::max(ra, rb) <= Real(1e-3) * w) break;
      }
      e *= Real(0.25);
    }
  }

  load_level(opts.eps);
  std::int64_t iters = 0;
  bool converged = false;
  Real trigger = opts.tol; // cheap-estimate threshold for the full check
  while (iters < opts.max_iters) {
    Real ra = update(phi, psi, ce);
    Real rb = update(psi, phi, cet);
    ++iters;
    if (iters > 1 && std::max(ra, rb) <= trigger) {
      if (residuals() <= opts.tol) {
        converged = true;
        break;
      }
      trigger *= Real(0.5); // estimate ran ahead of the true residual
    }
  }

  // Materialize the plan.
  // All plan-row arithmetic below runs in aligned scratch (tmp/prev) and is
  // copied in and out plainly.  Writing through maps of the heap-placed plan
  // would let Eigen split scalar and packet work by runtime address, so two
  // otherwise identical runs could round differently (see tape.hpp).
  r.plan.gamma = Tensor<Real>({m, m});
  for (std::int64_t i = 0; i < m; ++i) {
    Eigen::Map<const Arr> row(ce.data.data() + i * m, m);
    tmp = (psi - row + phi[i]).exp();
    std::copy(tmp.data(), tmp.data() + m, r.plan.gamma.data.data() + i * m);
  }
  if (!r.plan.gamma.all_finite())
    throw precision_error("sinkhorn: non-finite transport plan at eps_entropy " +
                          std::to_string(static_cast<double>(opts.eps)) + " (" +
                          precision_traits<Real>::name + " precision)");
  auto &gm = r.plan.gamma;
  Arr rowsum(m);
  auto load_row = [&](std::int64_t i) -> Arr & {
    prev = Eigen::Map<const Arr>(gm.data.data() + i * m, m);
    return prev;
  };
  auto store_row = [&](std::int64_t i) {
    std::copy(prev.data(), prev.data() + m, gm.data.data() + i * m);
  };
  auto marginals = [&]() {
    colsum.setZero();
    for (std::int64_t i = 0; i < m; ++i) {
      rowsum[i] = load_row(i).sum();
      colsum += prev;
    }
  };
  marginals();

  if (opts.round_plan &&
      std::max((rowsum - w).abs().maxCoeff(), (colsum - w).abs().maxCoeff()) > opts.tol) {
    // Feasibility rounding: scale overfull rows and columns down to their
    // targets, then repair the remaining deficit with a rank-one update.
    // The result lies exactly on the uniform-marginal polytope and differs
    // from the iterate by at most the size of its marginal error.
    for (std::int64_t i = 0; i < m; ++i)
      if (rowsum[i] > w) {
        load_row(i) *= w / rowsum[i];
        store_row(i);
      }
    colsum.setZero();
    for (std::int64_t i = 0; i < m; ++i) colsum += load_row(i);
    for (std::int64_t j = 0; j < m; ++j)
      tmp[j] = colsum[j] > w ? w / colsum[j] : Real(1);
    for (std::int64_t i = 0; i < m; ++i) {
      load_row(i) *= tmp;
      store_row(i);
    }
    marginals();
    const Arr er = (w - rowsum).max(Real(0)), ec = (w - colsum).max(Real(0));
    const Real deficit = er.sum();
    if (deficit > Real(0))
      for (std::int64_t i = 0; i < m; ++i) {
        load_row(i) += er[i] / deficit * ec;
        store_row(i);
      }
    marginals();
    r.rounded = true;
  }

  // Sharp cost against the raw matrix.
  double value = 0;
  for (std::int64_t i = 0; i < m * m; ++i)
    value += static_cast<double>(gm[i]) * static_cast<double>(cost[i]);
  r.value = static_cast<Real>(value);
  r.plan.cost = r.value;
  r.plan.row_residual = (rowsum - w).abs().maxCoeff();
  r.plan.col_residual = (colsum - w).abs().maxCoeff();
  r.iterations = iters;
  r.converged = converged;
  return r;
}

template <class Real>
SinkhornResult<Real> sinkhorn(const PointCloud<Real> &a, const PointCloud<Real> &b,
                              SinkhornOptions<Real> opts = {}) {
  if (a.n() != b.n())
    throw std::invalid_argument("sinkhorn: clouds must have equal size, got " +
                                std::to_string(a.n()) + " vs " +
                                std::to_string(b.n()));
  return sinkhorn_cost(cost_matrix(a, b), opts);
}

// ---- differentiable loss recomposition ------------------------------------------

// Pairwise Euclidean distances between rows of two on-tape matrices,
// (n,F) x (m,F) -> (n,m), via rank-3 broadcasting.
template <class Real> Var<Real> pairwise_distance_t(Var<Real> x, Var<Real> y) {
  const Shape &xs = x.tape->shape_of(x), &ys = y.tape->shape_of(y);
  if (xs.size() != 2 || ys.size() != 2 || xs[1] != ys[1])
    throw std::invalid_argument("pairwise_distance_t: row widths disagree, " +
                                shape_str(xs) + " vs " + shape_str(ys));
  const std::int64_t n = xs[0], m = ys[0], f = xs[1];
  Var<Real> xr = reshape(x, {n, 1, f});
  Var<Real> yr = reshape(y, {1, m, f});
  Var<Real> d = sub(xr, yr);
  return sqrt(reduce_sum(mul(d, d), 2));
}

// Chamfer loss with the nearest-neighbour matches frozen (recomputed from
// current values before taping); gradient equals the true Chamfer gradient
// almost everywhere.
template <class Real>
Var<Real> chamfer_loss(Var<Real> x, const PointCloud<Real> &target) {
  Tape<Real> &t = *x.tape;
  PointCloud<Real> cur = make_cloud(t.value_tensor(x));
  ChamferResult<Real> ch = chamfer(cur, target);
  Var<Real> tgt = t.constant(target.positions);
  // sum_i |x_i - b_nn(i)|
  Var<Real> d1 = row_norm(sub(x, gather_rows(tgt, ch.nn_ab)));
  // sum_j |x_nn(j) - b_j|
  Var<Real> d2 = row_norm(sub(gather_rows(x, ch.nn_ba), tgt));
  return add(sum_all(d1), sum_all(d2));
}

// <gamma, D(x, target)> with a frozen transport plan (envelope gradient).
template <class Real>
Var<Real> plan_loss(Var<Real> x, const Tensor<Real> &target_rows,
                    const Tensor<Real> &gamma) {
  Tape<Real> &t = *x.tape;
  Var<Real> d = pairwise_distance_t(x, t.constant(target_rows));
  return sum_all(mul(t.constant(gamma), d));
}

// Mean matched distance under a frozen assignment (EMD / auction losses).
template <class Real>
Var<Real> assignment_loss(Var<Real> x, const Tensor<Real> &target_rows,
                          const std::vector<std::int64_t> &assignment) {
  Tape<Real> &t = *x.tape;
  Var<Real> matched = gather_rows(t.constant(target_rows), assignment);
  Var<Real> d = row_norm(sub(x, matched));
  return scale(sum_all(d), Real(1) / static_cast<Real>(assignment.size()));
}

} // namespace irconv
