#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "irconv/tape.hpp"

namespace irconv {

// Named collection of tensors: trainable parameters, or persistent
// non-trainable state (running statistics).  Insertion order is preserved —
// it defines gradient accumulation order, checkpoint layout, and therefore
// bitwise reproducibility.
template <class Real> struct ParamSet {
  std::vector<std::string> names;
  std::vector<Tensor<Real>> values;
  std::map<std::string, std::int32_t> index;

  std::int32_t add(const std::string &name, Tensor<Real> t) {
    if (index.count(name))
      throw std::invalid_argument("param set: duplicate name '" + name + "'");
    names.push_back(name);
    values.push_back(std::move(t));
    std::int32_t id = static_cast<std::int32_t>(values.size() - 1);
    index.emplace(name, id);
    return id;
  }

  std::int32_t find(const std::string &name) const {
    auto it = index.find(name);
    return it == index.end() ? -1 : it->second;
  }

  Tensor<Real> &operator[](std::int32_t id) {
    return values[static_cast<std::size_t>(id)];
  }
  const Tensor<Real> &operator[](std::int32_t id) const {
    return values[static_cast<std::size_t>(id)];
  }

  std::size_t size() const { return values.size(); }

  std::int64_t total_elements() const {
    std::int64_t n = 0;
    for (auto &t : values) n += t.size();
    return n;
  }
};

template <class Real> using StateSet = ParamSet<Real>;

// One forward pass's view of a model: the tape, every parameter bound as a
// live input node, mutable persistent state, and the train/inference flag.
template <class Real> struct Bound {
  Tape<Real> *tape = nullptr;
  ParamSet<Real> *params = nullptr;
  StateSet<Real> *states = nullptr;
  bool training = true;
  std::vector<Var<Real>> vars; // aligned with params->values

  Var<Real> var(std::int32_t param_id) const {
    return vars[static_cast<std::size_t>(param_id)];
  }
};

template <class Real>
Bound<Real> bind(Tape<Real> &tape, ParamSet<Real> &params, StateSet<Real> &states,
                 bool training) {
  Bound<Real> b;
  b.tape = &tape;
  b.params = &params;
  b.states = &states;
  b.training = training;
  b.vars.reserve(params.size());
  for (auto &t : params.values) b.vars.push_back(tape.input(t, true));
  return b;
}

// Gradients for every parameter after tape.backward(), in parameter order.
// Parameters that never influenced the loss get zero gradients.
template <class Real> std::vector<Tensor<Real>> collect_grads(const Bound<Real> &b) {
  std::vector<Tensor<Real>> out;
  out.reserve(b.vars.size());
  for (auto v : b.vars) out.push_back(b.tape->grad_tensor(v));
  return out;
}

template <class Real>
void accumulate_grads(std::vector<Tensor<Real>> &acc, const Bound<Real> &b) {
  if (acc.empty()) {
    acc = collect_grads(b);
    return;
  }
  for (std::size_t i = 0; i < acc.size(); ++i) {
    const auto &g = b.tape->grad_tensor(b.vars[i]);
    for (std::int64_t j = 0; j < g.size(); ++j) acc[i][j] += g[j];
  }
}

// ---- linear layer ----------------------------------------------------------

template <class Real> struct Linear {
  std::int32_t w = -1, b = -1;
};

template <class Real>
Linear<Real> make_linear(ParamSet<Real> &params, const std::string &prefix,
                         std::int64_t in, std::int64_t out, Rng &rng) {
  Linear<Real> l;
  l.w = params.add(prefix + ".w", Tensor<Real>::he_uniform({in, out}, in, rng));
  l.b = params.add(prefix + ".b", Tensor<Real>::zeros({out}));
  return l;
}

template <class Real>
Var<Real> apply_linear(const Bound<Real> &b, const Linear<Real> &l, Var<Real> x) {
  return add(matmul(x, b.var(l.w)), b.var(l.b));
}

// ---- statistics helpers (composed from primitives) -------------------------

template <class Real> Var<Real> mean_axis(Var<Real> x, std::int64_t axis) {
  const std::int64_t n = x.tape->shape_of(x)[axis];
  return scale(reduce_sum(x, axis, /*keepdims=*/true), Real(1) / Real(n));
}

// Population variance along `axis` (biased, divides by n).
template <class Real> Var<Real> variance_axis(Var<Real> x, std::int64_t axis) {
  Var<Real> mu = mean_axis(x, axis);
  Var<Real> c = sub(x, mu);
  return mean_axis(mul(c, c), axis);
}

// Normalize x along `axis` to zero mean / unit std (population statistics,
// eps inside the square root), then apply per-channel shift and scale.
// `shift`/`scl` broadcast against the normalized tensor.
template <class Real>
Var<Real> normalize_axis(Var<Real> x, std::int64_t axis, Var<Real> scl,
                         Var<Real> shift, Real eps) {
  Var<Real> mu = mean_axis(x, axis);
  Var<Real> c = sub(x, mu);
  Var<Real> sd = sqrt(add_scalar(variance_axis(x, axis), eps));
  return add(mul(div(c, sd), scl), shift);
}

// Layer normalization over the channel axis of (N, C) features.
template <class Real>
Var<Real> layer_norm(const Bound<Real> &b, std::int32_t gain, std::int32_t bias,
                     Var<Real> x, Real eps = Real(1e-5)) {
  return normalize_axis(x, /*axis=*/1, b.var(gain), b.var(bias), eps);
}

// Instance normalization over the point axis of (N, C) features.
template <class Real>
Var<Real> instance_norm(const Bound<Real> &b, std::int32_t gain, std::int32_t bias,
                        Var<Real> x, Real eps = Real(1e-5)) {
  return normalize_axis(x, /*axis=*/0, b.var(gain), b.var(bias), eps);
}

// Adaptive instance normalization: statistics over the point axis, scale and
// shift supplied by a conditioning network rather than learned directly.
// Works on (n, W) patches (axis 0) and batched (M, n, W) patches (axis 1).
template <class Real>
Var<Real> adain(Var<Real> x, Var<Real> y_sigma, Var<Real> y_mu, std::int64_t axis,
                Real eps = Real(1e-5)) {
  return normalize_axis(x, axis, y_sigma, y_mu, eps);
}

// ---- batch renormalization --------------------------------------------------

template <class Real> struct BrnOpts {
  Real momentum = Real(0.99);
  Real rmax = Real(3);
  Real dmax = Real(5);
  Real eps = Real(1e-5);
};

// Handles into the parameter and state sets for one batch-renorm layer.
template <class Real> struct BatchRenorm {
  std::int32_t gain = -1, bias = -1;      // trainable
  std::int32_t run_mean = -1, run_var = -1, updates = -1; // persistent state
  BrnOpts<Real> opts;
};

template <class Real>
BatchRenorm<Real> make_batch_renorm(ParamSet<Real> &params, StateSet<Real> &states,
                                    const std::string &prefix, std::int64_t c,
                                    BrnOpts<Real> opts = {}) {
  BatchRenorm<Real> l;
  l.gain = params.add(prefix + ".gain", Tensor<Real>::full({c}, Real(1)));
  l.bias = params.add(prefix + ".bias", Tensor<Real>::zeros({c}));
  l.run_mean = states.add(prefix + ".running_mean", Tensor<Real>::zeros({c}));
  l.run_var = states.add(prefix + ".running_var", Tensor<Real>::full({c}, Real(1)));
  l.updates = states.add(prefix + ".updates", Tensor<Real>::zeros({1}));
  l.opts = opts;
  return l;
}

// Batch renormalization over the row axis of (N, C).  The correction factors
// r and d are computed from values (stop-gradient) and clipped; the very
// first training step uses r=1, d=0 (exact batch norm).  Running statistics
// update with momentum; inference uses them and requires at least one prior
// training update.
template <class Real>
Var<Real> batch_renorm(const Bound<Real> &b, const BatchRenorm<Real> &l, Var<Real> x) {
  Tape<Real> &t = *b.tape;
  const Shape &xs = t.shape_of(x);
  if (xs.size() != 2)
    throw std::invalid_argument("batch_renorm: expects rank-2 input, got " +
                                shape_str(xs));
  const std::int64_t n = xs[0], c = xs[1];
  Tensor<Real> &run_mean = (*b.states)[l.run_mean];
  Tensor<Real> &run_var = (*b.states)[l.run_var];
  Tensor<Real> &updates = (*b.states)[l.updates];
  if (run_mean.size() != c)
    throw std::invalid_argument("batch_renorm: state has " +
                                std::to_string(run_mean.size()) +
                                " channels, input has " + std::to_string(c));
  const BrnOpts<Real> &o = l.opts;

  if (!b.training) {
    if (updates[0] == Real(0))
      throw config_error("batch_renorm: inference requested before any training "
                         "update populated the running statistics");
    Tensor<Real> inv_sd({c}), nm({c});
    for (std::int64_t j = 0; j < c; ++j) {
      inv_sd[j] = Real(1) / std::sqrt(run_var[j] + o.eps);
      nm[j] = run_mean[j];
    }
    Var<Real> xc = sub(x, t.constant(std::move(nm)));
    Var<Real> xhat = mul(xc, t.constant(std::move(inv_sd)));
    return add(mul(xhat, b.var(l.gain)), b.var(l.bias));
  }

  // Batch statistics on-tape (gradients flow through them).
  Var<Real> mu = mean_axis(x, 0);                                 // (1, c)
  Var<Real> sd = sqrt(add_scalar(variance_axis(x, 0), o.eps));    // (1, c)

  // r, d from values only (copies: later op calls grow the tape).
  const std::vector<Real> mu_v = t.val(mu);
  const std::vector<Real> sd_v = t.val(sd);
  Tensor<Real> r({1, c}), d({1, c});
  const bool first = updates[0] == Real(0);
  for (std::int64_t j = 0; j < c; ++j) {
    if (first) {
      r[j] = Real(1);
      d[j] = Real(0);
    } else {
      Real run_sd = std::sqrt(run_var[j] + o.eps);
      r[j] = std::clamp(sd_v[j] / run_sd, Real(1) / o.rmax, o.rmax);
      d[j] = std::clamp((mu_v[j] - run_mean[j]) / run_sd, -o.dmax, o.dmax);
    }
  }

  Var<Real> xhat = add(mul(div(sub(x, mu), sd), t.constant(std::move(r))),
                       t.constant(std::move(d)));
  Var<Real> out = add(mul(xhat, b.var(l.gain)), b.var(l.bias));

  // Momentum update of the running statistics (population variance of the
  // batch, matching the normalization above).
  for (std::int64_t j = 0; j < c; ++j) {
    Real var_b = sd_v[j] * sd_v[j] - o.eps;
    run_mean[j] = o.momentum * run_mean[j] + (Real(1) - o.momentum) * mu_v[j];
    run_var[j] = o.momentum * run_var[j] + (Real(1) - o.momentum) * var_b;
  }
  updates[0] += Real(1);
  (void)n;
  return out;
}

// ---- Adam -------------------------------------------------------------------

template <class Real> struct AdamOpts {
  Real lr = Real(5e-5);
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real eps = Real(1e-8);
};

template <class Real> struct Adam {
  AdamOpts<Real> opts;
  std::int64_t step = 0;
  std::vector<Tensor<Real>> m, v;

  Adam() = default;
  explicit Adam(const ParamSet<Real> &params, AdamOpts<Real> o = {}) : opts(o) {
    m.reserve(params.size());
    v.reserve(params.size());
    for (auto &t : params.values) {
      m.push_back(Tensor<Real>::zeros(t.shape));
      v.push_back(Tensor<Real>::zeros(t.shape));
    }
  }

  void update(ParamSet<Real> &params, const std::vector<Tensor<Real>> &grads) {
    if (grads.size() != params.size() || m.size() != params.size())
      throw std::invalid_argument("adam: gradient list size " +
                                  std::to_string(grads.size()) +
                                  " does not match parameter count " +
                                  std::to_string(params.size()));
    ++step;
    const Real c1 = Real(1) - std::pow(opts.beta1, static_cast<Real>(step));
    const Real c2 = Real(1) - std::pow(opts.beta2, static_cast<Real>(step));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor<Real> &p = params.values[i];
      const Tensor<Real> &g = grads[i];
      if (g.shape != p.shape)
        throw std::invalid_argument("adam: gradient shape " + shape_str(g.shape) +
                                    " does not match parameter '" +
                                    params.names[i] + "' shape " +
                                    shape_str(p.shape));
      for (std::int64_t j = 0; j < p.size(); ++j) {
        m[i][j] = opts.beta1 * m[i][j] + (Real(1) - opts.beta1) * g[j];
        v[i][j] = opts.beta2 * v[i][j] + (Real(1) - opts.beta2) * g[j] * g[j];
        Real mhat = m[i][j] / c1;
        Real vhat = v[i][j] / c2;
        p[j] -= opts.lr * mhat / (std::sqrt(vhat) + opts.eps);
      }
    }
  }
};

} // namespace irconv
