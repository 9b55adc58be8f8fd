#pragma once

#include <string>
#include <vector>

#include "irconv/geometry.hpp"
#include "irconv/nn.hpp"

namespace irconv {

enum class Aggregation { sum, max };

// ---- spatial kernel network -------------------------------------------------

// Perceptron mapping relative positions (E, 3) to kernel entries
// (E, d*c_out): two hidden layers with batch renormalization right before
// each leaky-ReLU (optional), then a raw linear read-out.
template <class Real> struct SpatialMlp {
  Linear<Real> l0, l1, l2;
  BatchRenorm<Real> rn0, rn1;
  bool renorm = true;
  Real slope = Real(0.1);
};

template <class Real>
SpatialMlp<Real> make_spatial_mlp(ParamSet<Real> &params, StateSet<Real> &states,
                                  const std::string &prefix, std::int64_t out,
                                  std::int64_t hidden, Rng &rng, bool renorm = true,
                                  Real slope = Real(0.1)) {
  if (out < 1 || hidden < 1)
    throw std::invalid_argument("spatial_mlp: widths must be positive");
  SpatialMlp<Real> m;
  m.l0 = make_linear(params, prefix + ".l0", 3, hidden, rng);
  m.l1 = make_linear(params, prefix + ".l1", hidden, hidden, rng);
  m.l2 = make_linear(params, prefix + ".l2", hidden, out, rng);
  if (renorm) {
    m.rn0 = make_batch_renorm(params, states, prefix + ".rn0", hidden);
    m.rn1 = make_batch_renorm(params, states, prefix + ".rn1", hidden);
  }
  m.renorm = renorm;
  m.slope = slope;
  return m;
}

template <class Real>
Var<Real> apply_spatial_mlp(const Bound<Real> &b, const SpatialMlp<Real> &m,
                            Var<Real> rel) {
  Var<Real> h = apply_linear(b, m.l0, rel);
  if (m.renorm) h = batch_renorm(b, m.rn0, h);
  h = leaky_relu(h, m.slope);
  h = apply_linear(b, m.l1, h);
  if (m.renorm) h = batch_renorm(b, m.rn1, h);
  h = leaky_relu(h, m.slope);
  return apply_linear(b, m.l2, h);
}

// ---- convolution layer --------------------------------------------------------

template <class Real> struct ConvLayerConfig {
  std::int64_t c_in = 0;
  std::int64_t c_out = 0;
  std::int64_t d = 2;       // kernel rank
  std::int64_t hidden = 32; // spatial MLP width
  Aggregation agg = Aggregation::sum;
  bool density_eliminate = false; // divide layer outputs by the input density
  bool inner_density = false;     // experimental per-neighbor density division
  bool renorm = true;
  Real slope = Real(0.1);
};

// Low-rank point convolution: each output channel c carries a rank-d kernel
// whose feature response is a column block of `lambda` and whose spatial
// response comes from the shared kernel network.  Column c*d + r of both
// factors holds the rank-r component of output channel c.
template <class Real> struct ConvLayer {
  ConvLayerConfig<Real> cfg;
  std::int32_t lambda = -1; // (c_in, c_out*d)
  std::int32_t bias = -1;   // (1, c_out)
  SpatialMlp<Real> phi;
};

template <class Real>
ConvLayer<Real> make_conv_layer(ParamSet<Real> &params, StateSet<Real> &states,
                                const std::string &prefix, ConvLayerConfig<Real> cfg,
                                Rng &rng) {
  if (cfg.c_in < 1 || cfg.c_out < 1 || cfg.d < 1)
    throw std::invalid_argument("conv_layer: c_in, c_out, d must be positive");
  ConvLayer<Real> l;
  l.cfg = cfg;
  l.lambda = params.add(prefix + ".lambda",
                        Tensor<Real>::he_uniform({cfg.c_in, cfg.c_out * cfg.d},
                                                 cfg.c_in, rng));
  l.bias = params.add(prefix + ".bias", Tensor<Real>::zeros({1, cfg.c_out}));
  l.phi = make_spatial_mlp(params, states, prefix + ".phi", cfg.c_out * cfg.d,
                           cfg.hidden, rng, cfg.renorm, cfg.slope);
  return l;
}

// One convolution pass over every graph center: for neighbor j of center i
// the per-channel response is the rank-axis sum of
//   reshape(lambda^T f_j) (.) phi(p_j - p_i),
// aggregated over the neighborhood (sum, or channel-wise max) plus bias.
// Density elimination divides output rows by the per-point density estimate;
// the inner variant instead divides each neighbor contribution by the
// neighbor's density before aggregation.
template <class Real>
Var<Real> point_conv(const Bound<Real> &b, const ConvLayer<Real> &layer,
                     const KnnGraph &g, const Tensor<Real> &positions,
                     Var<Real> features,
                     const DensityEstimate<Real> *density = nullptr) {
  Tape<Real> &t = *b.tape;
  const ConvLayerConfig<Real> &cfg = layer.cfg;
  const Shape &fs = t.shape_of(features);
  if (fs.size() != 2 || fs[0] != g.n || fs[1] != cfg.c_in)
    throw std::invalid_argument("point_conv: features " + shape_str(fs) +
                                " do not match n=" + std::to_string(g.n) +
                                ", c_in=" + std::to_string(cfg.c_in));
  if (positions.shape.size() != 2 || positions.shape[0] != g.n ||
      positions.shape[1] != 3)
    throw std::invalid_argument("point_conv: positions " +
                                shape_str(positions.shape) +
                                " do not match graph size " + std::to_string(g.n));
  if (cfg.density_eliminate || cfg.inner_density) {
    if (!density)
      throw std::invalid_argument(
          "point_conv: layer eliminates density but no estimate was provided");
    if (static_cast<std::int64_t>(density->values.size()) != g.n)
      throw std::invalid_argument(
          "point_conv: density has " + std::to_string(density->values.size()) +
          " entries for " + std::to_string(g.n) + " points");
  }

  const std::int64_t n = g.n, k = g.k, E = n * k;
  std::vector<std::int64_t> nbr(g.neighbors.begin(), g.neighbors.end());
  Tensor<Real> rel({E, 3});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t jj = 0; jj < k; ++jj) {
      const std::int64_t e = i * k + jj, j = g.at(i, jj);
      for (std::int64_t c = 0; c < 3; ++c)
        rel[e * 3 + c] = positions[j * 3 + c] - positions[i * 3 + c];
    }

  Var<Real> kernel = apply_spatial_mlp(b, layer.phi, t.constant(std::move(rel)));
  Var<Real> fj = gather_rows(features, nbr);                        // (E, c_in)
  Var<Real> mixed = mul(matmul(fj, b.var(layer.lambda)), kernel);   // (E, c_out*d)
  Var<Real> per_edge =
      reduce_sum(reshape(mixed, {E, cfg.c_out, cfg.d}), 2);         // (E, c_out)
  if (cfg.inner_density) {
    Tensor<Real> inv({E, 1});
    for (std::int64_t e = 0; e < E; ++e)
      inv[e] = Real(1) / density->values[static_cast<std::size_t>(nbr[e])];
    per_edge = mul(per_edge, t.constant(std::move(inv)));
  }
  Var<Real> stacked = reshape(per_edge, {n, k, cfg.c_out});
  Var<Real> agg = cfg.agg == Aggregation::sum ? reduce_sum(stacked, 1)
                                              : reduce_max(stacked, 1);
  Var<Real> out = add(agg, b.var(layer.bias));
  if (cfg.density_eliminate) {
    Tensor<Real> inv({n, 1});
    for (std::int64_t i = 0; i < n; ++i)
      inv[i] = Real(1) / density->values[static_cast<std::size_t>(i)];
    out = mul(out, t.constant(std::move(inv)));
  }
  return out;
}

// Elementwise residual join of two feature maps.  Shapes must match exactly
// (no broadcasting); callers pair features living on the same point support.
template <class Real> Var<Real> residual_add(Var<Real> f_b, Var<Real> f_a) {
  const Shape &sb = f_b.tape->shape_of(f_b);
  const Shape &sa = f_a.tape->shape_of(f_a);
  if (sb != sa)
    throw std::invalid_argument("residual_add: shape mismatch " + shape_str(sb) +
                                " vs " + shape_str(sa));
  return add(f_b, f_a);
}

// ---- convolution block --------------------------------------------------------

enum class BlockNorm { none, layer, instance };

template <class Real> struct ConvBlockConfig {
  std::vector<std::int64_t> widths; // output channels per layer
  std::int64_t d = 2;
  std::int64_t hidden = 32;
  Aggregation agg = Aggregation::sum;
  bool density_eliminate = false;
  bool inner_density = false;
  bool renorm = true;
  BlockNorm norm = BlockNorm::layer;
  Real slope = Real(0.1);
  bool residual = true; // join same-width consecutive layers
};

template <class Real> struct ConvBlock {
  std::vector<ConvLayer<Real>> layers;
  std::vector<std::int32_t> norm_gain, norm_bias; // parallel to layers
  BlockNorm norm = BlockNorm::layer;
  Real slope = Real(0.1);
  bool residual = true;
};

template <class Real>
ConvBlock<Real> make_conv_block(ParamSet<Real> &params, StateSet<Real> &states,
                                const std::string &prefix, std::int64_t c_in,
                                const ConvBlockConfig<Real> &cfg, Rng &rng) {
  if (cfg.widths.empty())
    throw std::invalid_argument("conv_block: needs at least one layer width");
  ConvBlock<Real> blk;
  blk.norm = cfg.norm;
  blk.slope = cfg.slope;
  blk.residual = cfg.residual;
  std::int64_t cur = c_in;
  for (std::size_t li = 0; li < cfg.widths.size(); ++li) {
    ConvLayerConfig<Real> lc;
    lc.c_in = cur;
    lc.c_out = cfg.widths[li];
    lc.d = cfg.d;
    lc.hidden = cfg.hidden;
    lc.agg = cfg.agg;
    lc.density_eliminate = cfg.density_eliminate;
    lc.inner_density = cfg.inner_density;
    lc.renorm = cfg.renorm;
    lc.slope = cfg.slope;
    const std::string name = prefix + ".conv" + std::to_string(li);
    blk.layers.push_back(make_conv_layer(params, states, name, lc, rng));
    if (cfg.norm != BlockNorm::none) {
      blk.norm_gain.push_back(params.add(
          name + ".norm.gain", Tensor<Real>::full({1, lc.c_out}, Real(1))));
      blk.norm_bias.push_back(
          params.add(name + ".norm.bias", Tensor<Real>::zeros({1, lc.c_out})));
    }
    cur = lc.c_out;
  }
  return blk;
}

// Layer chain on a fixed support: conv -> (normalization) -> leaky-ReLU per
// layer, with a residual join whenever consecutive layers share a width.
template <class Real>
Var<Real> apply_conv_block(const Bound<Real> &b, const ConvBlock<Real> &blk,
                           const KnnGraph &g, const Tensor<Real> &positions,
                           Var<Real> features,
                           const DensityEstimate<Real> *density = nullptr) {
  Var<Real> h = features;
  for (std::size_t li = 0; li < blk.layers.size(); ++li) {
    Var<Real> prev = h;
    Var<Real> y = point_conv(b, blk.layers[li], g, positions, h, density);
    if (blk.norm == BlockNorm::layer)
      y = layer_norm(b, blk.norm_gain[li], blk.norm_bias[li], y);
    else if (blk.norm == BlockNorm::instance)
      y = instance_norm(b, blk.norm_gain[li], blk.norm_bias[li], y);
    y = leaky_relu(y, blk.slope);
    const Shape &ps = b.tape->shape_of(prev);
    const Shape &ys = b.tape->shape_of(y);
    if (blk.residual && ps == ys) y = residual_add(y, prev);
    h = y;
  }
  return h;
}

} // namespace irconv
