#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <irconv/autoencoder.hpp>
#include <irconv/geometry.hpp>
#include <irconv/nn.hpp>
#include <irconv/transport.hpp>

namespace irconv {

// On-tape simulator state: a latent cloud whose positions and features both
// evolve, so a rollout can be differentiated end to end.
template <class Real> struct SimState {
  Var<Real> positions; // (M, 3)
  Var<Real> features;  // (M, C)
};

template <class Real> struct INConfig {
  std::int64_t channels = 0; // vertex feature width C
  std::int64_t width = 128;  // hidden width of the edge and vertex nets
  std::int64_t k = 8;        // per-step neighbourhood (self loop included)
};

// Interaction network: an edge net over (sender, receiver, relative
// geometry), a vertex net applied per incoming edge and summed, and a linear
// position head.  The nets use tanh hidden activations; the vertex output
// and the head stay linear because they feed residual updates.  Both
// residual write-outs (o1 and head) are created all-zero, so a fresh model
// is exactly the static baseline and training only grows the corrections it
// needs; their weights receive gradients immediately, the layers beneath
// from the second update on.
template <class Real> struct INParams {
  INConfig<Real> cfg;
  Linear<Real> e0, e1; // edge net: (2C+4) -> W -> W
  Linear<Real> o0, o1; // vertex net per edge: W -> W -> C
  Linear<Real> head;   // updated feature -> position delta
};

template <class Real>
INParams<Real> make_in(ParamSet<Real> &params, const std::string &prefix,
                       INConfig<Real> cfg, Rng &rng) {
  if (cfg.channels < 1 || cfg.width < 1 || cfg.k < 1)
    throw std::invalid_argument("interaction net: channels, width, k must be "
                                "positive");
  INParams<Real> net;
  net.cfg = cfg;
  net.e0 = make_linear(params, prefix + ".e0", 2 * cfg.channels + 4, cfg.width, rng);
  net.e1 = make_linear(params, prefix + ".e1", cfg.width, cfg.width, rng);
  net.o0 = make_linear(params, prefix + ".o0", cfg.width, cfg.width, rng);
  net.o1.w = params.add(prefix + ".o1.w",
                        Tensor<Real>::zeros({cfg.width, cfg.channels}));
  net.o1.b = params.add(prefix + ".o1.b", Tensor<Real>::zeros({cfg.channels}));
  net.head.w = params.add(prefix + ".head.w",
                          Tensor<Real>::zeros({cfg.channels, 3}));
  net.head.b = params.add(prefix + ".head.b", Tensor<Real>::zeros({3}));
  return net;
}

namespace detail {

inline void edge_endpoints(const KnnGraph &g, std::vector<std::int64_t> &senders,
                           std::vector<std::int64_t> &receivers) {
  const std::size_t e = static_cast<std::size_t>(g.n * g.k);
  senders.resize(e);
  receivers.resize(e);
  for (std::int64_t i = 0; i < g.n; ++i)
    for (std::int64_t j = 0; j < g.k; ++j) {
      senders[static_cast<std::size_t>(i * g.k + j)] = g.at(i, j);
      receivers[static_cast<std::size_t>(i * g.k + j)] = i;
    }
}

} // namespace detail

// Geometric edge attributes, sender minus receiver: (p_u - p_v) ++ |p_u - p_v|.
// A self loop therefore contributes an all-zero row.
template <class Real>
Var<Real> edge_features(Var<Real> positions, const KnnGraph &g) {
  std::vector<std::int64_t> senders, receivers;
  detail::edge_endpoints(g, senders, receivers);
  Var<Real> rel = sub(gather_rows(positions, senders),
                      gather_rows(positions, receivers));
  return concat(rel, row_norm(rel), 1);
}

// One message-passing step: rebuild the k-NN graph on the current positions,
// run the edge net on (sender features, receiver features, edge geometry),
// push every incoming edge through the vertex net and sum, add the result to
// the receiver's features, and finally move each point by the head's output.
// `step_index` only labels diagnostics.
template <class Real>
SimState<Real> in_step(const Bound<Real> &b, const INParams<Real> &net,
                       const SimState<Real> &s, std::int64_t step_index = -1) {
  Tape<Real> &t = *b.tape;
  const INConfig<Real> &cfg = net.cfg;
  const Shape &ps = t.shape_of(s.positions), &fs = t.shape_of(s.features);
  if (ps.size() != 2 || ps[1] != 3 || fs.size() != 2 || fs[0] != ps[0] ||
      fs[1] != cfg.channels)
    throw std::invalid_argument("in_step: state shapes " + shape_str(ps) + ", " +
                                shape_str(fs) + " do not match C=" +
                                std::to_string(cfg.channels));
  const std::int64_t m = ps[0];
  if (cfg.k > m)
    throw std::invalid_argument("in_step: k=" + std::to_string(cfg.k) +
                                " exceeds the " + std::to_string(m) +
                                "-point state");
  Tensor<Real> pos = t.value_tensor(s.positions);
  Tensor<Real> feat = t.value_tensor(s.features);
  for (std::int64_t i = 0; i < pos.size(); ++i)
    if (!std::isfinite(static_cast<double>(pos[i])))
      throw numerical_failure("in_step: non-finite position at step " +
                              std::to_string(step_index));
  for (std::int64_t i = 0; i < feat.size(); ++i)
    if (!std::isfinite(static_cast<double>(feat[i])))
      throw numerical_failure("in_step: non-finite feature at step " +
                              std::to_string(step_index));

  KnnGraph g = build_knn_graph(pos, cfg.k, /*include_self=*/true);
  std::vector<std::int64_t> senders, receivers;
  detail::edge_endpoints(g, senders, receivers);

  Var<Real> geo = edge_features(s.positions, g);
  Var<Real> ein = concat(concat(gather_rows(s.features, senders),
                                gather_rows(s.features, receivers), 1),
                         geo, 1);
  Var<Real> e = tanh(apply_linear(b, net.e0, ein));
  e = tanh(apply_linear(b, net.e1, e));
  Var<Real> msg = tanh(apply_linear(b, net.o0, e));
  msg = apply_linear(b, net.o1, msg); // (E, C) per-edge vertex update
  Var<Real> f2 = add(s.features,
                     reduce_sum(reshape(msg, {m, cfg.k, cfg.channels}), 1));
  Var<Real> dp = apply_linear(b, net.head, f2);
  return {add(s.positions, dp), f2};
}

// Transport-supervised state distance: a plan matched on positions alone is
// frozen, then charged with the L2 cost over concatenated
// (position, feature) rows so features receive gradients too.
template <class Real>
Var<Real> sim_loss(const SimState<Real> &s, const LatentCloud<Real> &target,
                   const SinkhornOptions<Real> &sk) {
  Tape<Real> &t = *s.positions.tape;
  const Shape &ps = t.shape_of(s.positions), &fs = t.shape_of(s.features);
  if (ps[0] != target.m() || fs[1] != target.channels())
    throw std::invalid_argument(
        "sim_loss: state (" + std::to_string(ps[0]) + " pts, " +
        std::to_string(fs[1]) + " ch) vs target (" + std::to_string(target.m()) +
        " pts, " + std::to_string(target.channels()) + " ch)");
  SinkhornResult<Real> plan = sinkhorn(make_cloud(t.value_tensor(s.positions)),
                                       make_cloud(target.positions), sk);
  const std::int64_t m = target.m(), c = target.channels();
  Tensor<Real> y({m, 3 + c});
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t d = 0; d < 3; ++d) y[i * (3 + c) + d] = target.positions[i * 3 + d];
    for (std::int64_t d = 0; d < c; ++d)
      y[i * (3 + c) + 3 + d] = target.features[i * c + d];
  }
  return plan_loss(concat(s.positions, s.features, 1), y, plan.plan.gamma);
}

template <class Real>
Var<Real> sim_loss(const SimState<Real> &s, const LatentCloud<Real> &target,
                   Real eps_entropy) {
  SinkhornOptions<Real> sk = training_sinkhorn_options<Real>();
  sk.eps = eps_entropy;
  return sim_loss(s, target, sk);
}

// Off-tape variant for evaluation curves and baselines.
template <class Real>
Real sim_loss_value(const LatentCloud<Real> &pred, const LatentCloud<Real> &target,
                    const SinkhornOptions<Real> &sk) {
  Tape<Real> t;
  SimState<Real> s{t.constant(pred.positions), t.constant(pred.features)};
  return t.item(sim_loss(s, target, sk));
}

// ---- rollouts ---------------------------------------------------------------

template <class Real> struct RolloutResult {
  std::vector<LatentCloud<Real>> frames; // completed+1 entries, initial first
  bool diverged = false;
  std::int64_t completed = 0;
};

// Iterate the simulator from an initial state.  The graph is rebuilt inside
// every in_step; a point whose distance from the origin exceeds `bound`
// truncates the trajectory and raises the divergence flag.
template <class Real>
RolloutResult<Real> rollout(const INParams<Real> &net, ParamSet<Real> &params,
                            const LatentCloud<Real> &initial, std::int64_t steps,
                            Real bound = Real(1e3)) {
  if (steps < 0)
    throw std::invalid_argument("rollout: steps must be non-negative");
  RolloutResult<Real> out;
  out.frames.push_back(initial);
  StateSet<Real> states;
  for (std::int64_t step = 1; step <= steps; ++step) {
    Tape<Real> t;
    Bound<Real> b = bind(t, params, states, /*training=*/false);
    const LatentCloud<Real> &cur = out.frames.back();
    SimState<Real> st{t.constant(cur.positions), t.constant(cur.features)};
    SimState<Real> nx = in_step(b, net, st, step);
    LatentCloud<Real> frame{t.value_tensor(nx.positions),
                            t.value_tensor(nx.features)};
    bool safe = true;
    for (std::int64_t i = 0; i < frame.m() && safe; ++i) {
      double s = 0;
      for (std::int64_t d = 0; d < 3; ++d) {
        const double v = static_cast<double>(frame.positions[i * 3 + d]);
        s += v * v;
      }
      safe = std::isfinite(s) && s <= static_cast<double>(bound) * bound;
    }
    if (!safe) {
      out.diverged = true;
      break;
    }
    out.frames.push_back(std::move(frame));
    out.completed = step;
  }
  return out;
}

// Mean per-step transport loss of a model rollout against the recorded
// trajectory; the first entry corresponds to step 1.
template <class Real>
std::vector<Real> rollout_loss_curve(const INParams<Real> &net,
                                     ParamSet<Real> &params,
                                     const std::vector<LatentCloud<Real>> &truth,
                                     std::int64_t steps,
                                     const SinkhornOptions<Real> &sk,
                                     bool *diverged = nullptr) {
  if (static_cast<std::size_t>(steps) + 1 > truth.size())
    throw std::invalid_argument("rollout_loss_curve: trajectory holds " +
                                std::to_string(truth.size()) +
                                " frames, need " + std::to_string(steps + 1));
  RolloutResult<Real> r = rollout(net, params, truth.front(), steps);
  if (diverged) *diverged = r.diverged;
  std::vector<Real> curve;
  for (std::int64_t s = 1; s <= r.completed; ++s)
    curve.push_back(sim_loss_value(r.frames[static_cast<std::size_t>(s)],
                                   truth[static_cast<std::size_t>(s)], sk));
  return curve;
}

// The no-motion reference: the initial frame held fixed and charged against
// every later target.
template <class Real>
std::vector<Real> static_baseline_curve(const std::vector<LatentCloud<Real>> &truth,
                                        std::int64_t steps,
                                        const SinkhornOptions<Real> &sk) {
  if (static_cast<std::size_t>(steps) + 1 > truth.size())
    throw std::invalid_argument("static_baseline_curve: trajectory holds " +
                                std::to_string(truth.size()) + " frames, need " +
                                std::to_string(steps + 1));
  std::vector<Real> curve;
  for (std::int64_t s = 1; s <= steps; ++s)
    curve.push_back(sim_loss_value(truth.front(),
                                   truth[static_cast<std::size_t>(s)], sk));
  return curve;
}

// ---- training ---------------------------------------------------------------

template <class Real> struct SimTrainConfig {
  std::int64_t iterations = 200;
  std::int64_t batch = 2;
  std::int64_t rollout_steps = 50; // T
  Real alpha = Real(0.95);         // exponential step weight
  AdamOpts<Real> adam;
  SinkhornOptions<Real> sinkhorn = training_sinkhorn_options<Real>();
  std::uint64_t seed = 1;
};

// Multi-step rollout training: every sample unrolls T steps from a random
// window start and minimizes sum_t alpha^t * L_t / sum_t alpha^t with the
// gradient flowing through the entire rollout.  Randomness is chained off
// the seed and absolute iteration index, so resumed runs continue
// bit-identically.
template <class Real>
std::vector<TrainRecord<Real>> train_simulator(
    const std::vector<std::vector<LatentCloud<Real>>> &trajectories,
    const INParams<Real> &net, ParamSet<Real> &params, Adam<Real> &adam,
    const SimTrainConfig<Real> &cfg, std::int64_t start_iteration = 0) {
  if (trajectories.empty())
    throw std::invalid_argument("train_simulator: empty dataset");
  if (cfg.batch < 1 || cfg.rollout_steps < 1)
    throw std::invalid_argument("train_simulator: batch and rollout_steps must "
                                "be positive");
  if (!(cfg.alpha > Real(0)))
    throw std::invalid_argument("train_simulator: alpha must be positive");
  const std::size_t need = static_cast<std::size_t>(cfg.rollout_steps) + 1;
  for (const auto &traj : trajectories)
    if (traj.size() < need)
      throw std::invalid_argument("train_simulator: trajectory of " +
                                  std::to_string(traj.size()) +
                                  " frames is shorter than T+1=" +
                                  std::to_string(need));
  std::vector<TrainRecord<Real>> log;
  for (std::int64_t it = start_iteration; it < cfg.iterations; ++it) {
    Rng pick(chain_seed(cfg.seed, "batch", static_cast<std::uint64_t>(it)));
    std::vector<Tensor<Real>> grads;
    double acc = 0;
    for (std::int64_t s = 0; s < cfg.batch; ++s) {
      const auto &traj =
          trajectories[static_cast<std::size_t>(pick.next_below(trajectories.size()))];
      const std::int64_t start = static_cast<std::int64_t>(
          pick.next_below(traj.size() - need + 1));
      Tape<Real> t;
      StateSet<Real> states;
      Bound<Real> b = bind(t, params, states, /*training=*/true);
      const LatentCloud<Real> &init = traj[static_cast<std::size_t>(start)];
      SimState<Real> st{t.constant(init.positions), t.constant(init.features)};
      Var<Real> total;
      double denom = 0;
      for (std::int64_t step = 1; step <= cfg.rollout_steps; ++step) {
        st = in_step(b, net, st, step);
        Var<Real> l = sim_loss(
            st, traj[static_cast<std::size_t>(start + step)], cfg.sinkhorn);
        const Real w = static_cast<Real>(
            std::pow(static_cast<double>(cfg.alpha), static_cast<double>(step)));
        denom += static_cast<double>(w);
        total = step == 1 ? scale(l, w) : add(total, scale(l, w));
      }
      Var<Real> loss = scale(total, static_cast<Real>(1.0 / denom));
      const Real lv = t.item(loss);
      if (!std::isfinite(static_cast<double>(lv))) {
        auto bad = t.first_non_finite();
        throw numerical_failure("train_simulator: non-finite loss at iteration " +
                                std::to_string(it) + ", first bad tensor: " +
                                bad.second);
      }
      acc += static_cast<double>(lv);
      t.backward(loss);
      accumulate_grads(grads, b);
    }
    const Real inv = Real(1) / static_cast<Real>(cfg.batch);
    for (auto &g : grads)
      for (std::int64_t j = 0; j < g.size(); ++j) g[j] *= inv;
    adam.update(params, grads);
    log.push_back({it, static_cast<Real>(acc / static_cast<double>(cfg.batch))});
  }
  return log;
}

} // namespace irconv
