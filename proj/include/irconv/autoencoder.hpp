#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <irconv/geometry.hpp>
#include <irconv/pcconv.hpp>
#include <irconv/transport.hpp>

namespace irconv {

// ---- latent representation --------------------------------------------------

// A pooled cloud: M latent points, each carrying a position and C channels.
template <class Real> struct LatentCloud {
  Tensor<Real> positions; // (M, 3)
  Tensor<Real> features;  // (M, C)

  std::int64_t m() const { return positions.shape.empty() ? 0 : positions.shape[0]; }
  std::int64_t channels() const {
    return features.shape.size() == 2 ? features.shape[1] : 0;
  }
};

// Encoder output while still attached to a tape.
template <class Real> struct EncodedCloud {
  Tensor<Real> positions; // (M, 3), plain data: positions are pooled, not learned
  Var<Real> features;     // (M, C)
};

template <class Real>
LatentCloud<Real> materialize(const Tape<Real> &t, const EncodedCloud<Real> &e) {
  LatentCloud<Real> out;
  out.positions = e.positions;
  out.features = t.value_tensor(e.features);
  return out;
}

// ---- encoder ----------------------------------------------------------------

template <class Real> struct EncoderBlockConfig {
  std::vector<std::int64_t> widths; // conv layer widths inside the block
  std::int64_t k = 16;              // neighbourhood size on the block's support
  Real pool_ratio = Real(1);        // kept fraction; the final block pools to M
};

enum class Readout { cloud, vector };

template <class Real> struct EncoderConfig {
  std::vector<EncoderBlockConfig<Real>> blocks;
  std::int64_t latent_points = 32;   // M
  std::int64_t latent_channels = 13; // C, must equal the last block width
  Readout readout = Readout::cloud;
  std::int64_t readout_conv_width = 64; // origin-node conv width (vector mode)
  std::int64_t readout_width = 512;     // the two fully-connected layers
  // convolution knobs shared by every block
  std::int64_t d = 2;
  std::int64_t hidden = 32;
  Aggregation agg = Aggregation::sum;
  bool density_eliminate = false;
  bool inner_density = false;
  bool renorm = true;
  BlockNorm norm = BlockNorm::layer;
  Real slope = Real(0.1);
  bool residual = true;
};

template <class Real> EncoderConfig<Real> default_encoder_config() {
  EncoderConfig<Real> cfg;
  cfg.blocks = {{{32, 32}, 16, Real(0.25)},
                {{64, 64}, 16, Real(0.5)},
                {{13, 13}, 16, Real(1)}};
  return cfg;
}

// Dimension of the latent code: M positions plus M feature rows.
template <class Real>
std::int64_t latent_budget(const EncoderConfig<Real> &cfg) {
  return cfg.latent_points * (cfg.latent_channels + 3);
}

template <class Real> struct Encoder {
  EncoderConfig<Real> cfg;
  std::int64_t c_in = 1; // effective input channels (featureless clouds get ones)
  std::vector<ConvBlock<Real>> blocks;
  ConvLayer<Real> readout_conv; // vector mode only
  Linear<Real> fc1, fc2;        // vector mode only
};

template <class Real>
Encoder<Real> make_encoder(ParamSet<Real> &params, StateSet<Real> &states,
                           const std::string &prefix, EncoderConfig<Real> cfg,
                           std::int64_t input_channels, Rng &rng) {
  if (cfg.blocks.empty())
    throw std::invalid_argument("encoder: needs at least one block");
  if (cfg.latent_points < 1 || cfg.latent_channels < 1)
    throw std::invalid_argument("encoder: latent_points and latent_channels "
                                "must be positive");
  if (cfg.blocks.back().widths.empty() ||
      cfg.blocks.back().widths.back() != cfg.latent_channels)
    throw std::invalid_argument(
        "encoder: last block width " +
        std::to_string(cfg.blocks.back().widths.empty()
                           ? 0
                           : cfg.blocks.back().widths.back()) +
        " must equal latent_channels " + std::to_string(cfg.latent_channels));
  Encoder<Real> enc;
  enc.cfg = cfg;
  enc.c_in = input_channels == 0 ? 1 : input_channels;
  std::int64_t cur = enc.c_in;
  for (std::size_t bi = 0; bi < cfg.blocks.size(); ++bi) {
    ConvBlockConfig<Real> bc;
    bc.widths = cfg.blocks[bi].widths;
    bc.d = cfg.d;
    bc.hidden = cfg.hidden;
    bc.agg = cfg.agg;
    bc.density_eliminate = cfg.density_eliminate;
    bc.inner_density = cfg.inner_density;
    bc.renorm = cfg.renorm;
    bc.norm = cfg.norm;
    bc.slope = cfg.slope;
    bc.residual = cfg.residual;
    enc.blocks.push_back(make_conv_block(params, states,
                                         prefix + ".block" + std::to_string(bi),
                                         cur, bc, rng));
    cur = bc.widths.back();
  }
  if (cfg.readout == Readout::vector) {
    ConvLayerConfig<Real> rc;
    rc.c_in = cfg.latent_channels;
    rc.c_out = cfg.readout_conv_width;
    rc.d = cfg.d;
    rc.hidden = cfg.hidden;
    rc.renorm = cfg.renorm;
    rc.slope = cfg.slope;
    enc.readout_conv =
        make_conv_layer(params, states, prefix + ".readout.conv", rc, rng);
    enc.fc1 = make_linear(params, prefix + ".readout.fc1", cfg.readout_conv_width,
                          cfg.readout_width, rng);
    enc.fc2 = make_linear(params, prefix + ".readout.fc2", cfg.readout_width,
                          cfg.readout_width, rng);
  }
  return enc;
}

namespace detail {

template <class Real>
Tensor<Real> take_rows(const Tensor<Real> &t, const std::vector<std::int64_t> &idx) {
  const std::int64_t w = t.shape[1];
  Tensor<Real> out({static_cast<std::int64_t>(idx.size()), w});
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (std::int64_t c = 0; c < w; ++c)
      out[static_cast<std::int64_t>(r) * w + c] = t[idx[r] * w + c];
  return out;
}

} // namespace detail

// Hierarchical encoder: per block, build the kNN graph on the current
// support, run the convolution block, then pool by farthest-point sampling.
// Intermediate blocks keep round(pool_ratio * n) points; the final block
// pools to exactly latent_points.  Positions stay plain data throughout, so
// the latent positions of a translated cloud are the translated originals.
template <class Real>
EncodedCloud<Real> encode(const Bound<Real> &b, const Encoder<Real> &enc,
                          const PointCloud<Real> &cloud) {
  validate_cloud(cloud);
  Tape<Real> &t = *b.tape;
  const EncoderConfig<Real> &cfg = enc.cfg;
  const std::int64_t raw_c = cloud.channels();
  if ((raw_c == 0 ? 1 : raw_c) != enc.c_in)
    throw std::invalid_argument("encode: cloud has " + std::to_string(raw_c) +
                                " channels but the encoder was built for " +
                                std::to_string(enc.c_in));
  Tensor<Real> pos = cloud.positions;
  Var<Real> feat =
      raw_c == 0 ? t.constant(Tensor<Real>::full({cloud.n(), 1}, Real(1)))
                 : t.constant(cloud.features);
  for (std::size_t bi = 0; bi < enc.blocks.size(); ++bi) {
    const EncoderBlockConfig<Real> &bc = cfg.blocks[bi];
    const std::int64_t n = pos.shape[0];
    KnnGraph g = build_knn_graph(pos, bc.k, /*include_self=*/true);
    DensityEstimate<Real> dens;
    const DensityEstimate<Real> *dp = nullptr;
    if (cfg.density_eliminate || cfg.inner_density) {
      dens = kde_density(pos, g, kernel_bandwidth(pos, g));
      dp = &dens;
    }
    feat = apply_conv_block(b, enc.blocks[bi], g, pos, feat, dp);
    const bool last = bi + 1 == enc.blocks.size();
    std::int64_t target =
        last ? cfg.latent_points
             : std::clamp<std::int64_t>(
                   std::llround(static_cast<double>(bc.pool_ratio) *
                                static_cast<double>(n)),
                   1, n);
    if (target > n)
      throw config_error("encode: block " + std::to_string(bi) + " holds " +
                         std::to_string(n) + " points, cannot pool up to " +
                         std::to_string(target));
    if (target < n) {
      std::vector<std::int64_t> idx = farthest_point_sample(pos, target);
      pos = detail::take_rows(pos, idx);
      feat = gather_rows(feat, idx);
    }
  }
  return {pos, feat};
}

// Order-invariant summary vector: one convolution from the latent cloud into
// a single node at the origin (so the kernel sees the latent positions
// themselves), then two fully-connected layers.
template <class Real>
Var<Real> global_readout(const Bound<Real> &b, const Encoder<Real> &enc,
                         const EncodedCloud<Real> &lat) {
  if (enc.fc1.w < 0)
    throw std::invalid_argument("global_readout: encoder was built without a "
                                "vector readout head");
  Tape<Real> &t = *b.tape;
  const ConvLayerConfig<Real> &rc = enc.readout_conv.cfg;
  const Shape &fs = t.shape_of(lat.features);
  if (fs.size() != 2 || fs[1] != rc.c_in || fs[0] != lat.positions.shape[0])
    throw std::invalid_argument("global_readout: latent features " +
                                shape_str(fs) + " do not match the head");
  const std::int64_t m = fs[0];
  Var<Real> kernel =
      apply_spatial_mlp(b, enc.readout_conv.phi, t.constant(lat.positions));
  Var<Real> mixed = mul(matmul(lat.features, b.var(enc.readout_conv.lambda)), kernel);
  Var<Real> per_point = reduce_sum(reshape(mixed, {m, rc.c_out, rc.d}), 2);
  Var<Real> pooled = reduce_sum(per_point, 0, /*keepdims=*/true); // (1, c_out)
  Var<Real> h = leaky_relu(add(pooled, b.var(enc.readout_conv.bias)), rc.slope);
  h = leaky_relu(apply_linear(b, enc.fc1, h), enc.cfg.slope);
  return apply_linear(b, enc.fc2, h);
}

// ---- decoder ----------------------------------------------------------------

enum class Conditioner { adain, concat };

template <class Real> struct DecoderConfig {
  std::int64_t layers = 5; // hidden layers
  std::int64_t width = 64;
  Conditioner conditioner = Conditioner::adain;
  Real slope = Real(0.1);
  Real eps = Real(1e-5); // adain variance floor
};

// Patch decoder: noise coordinates through a stack of dense layers.  With the
// adain conditioner each hidden layer is renormalized per patch with scale
// and shift produced from the latent feature by a per-layer linear net; the
// concat conditioner instead appends the latent feature to every layer input.
template <class Real> struct Decoder {
  DecoderConfig<Real> cfg;
  std::int64_t c = 0;               // latent channels the nets expect
  std::vector<Linear<Real>> hidden; // cfg.layers entries
  std::vector<Linear<Real>> cond;   // adain mode: latent -> (shift, scale)
  Linear<Real> out;
};

template <class Real>
Decoder<Real> make_decoder(ParamSet<Real> &params, const std::string &prefix,
                           DecoderConfig<Real> cfg, std::int64_t latent_channels,
                           Rng &rng) {
  if (cfg.layers < 1 || cfg.width < 1)
    throw std::invalid_argument("decoder: layers and width must be positive");
  if (latent_channels < 1)
    throw std::invalid_argument("decoder: latent_channels must be positive");
  Decoder<Real> dec;
  dec.cfg = cfg;
  dec.c = latent_channels;
  std::int64_t cur = 3;
  for (std::int64_t l = 0; l < cfg.layers; ++l) {
    const std::string name = prefix + ".h" + std::to_string(l);
    if (cfg.conditioner == Conditioner::concat) {
      dec.hidden.push_back(
          make_linear(params, name, cur + latent_channels, cfg.width, rng));
    } else {
      dec.hidden.push_back(make_linear(params, name, cur, cfg.width, rng));
      // The conditioner starts at the identity: zero weights, shift 0, scale 1.
      Linear<Real> cl;
      cl.w = params.add(name + ".cond.w",
                        Tensor<Real>::zeros({latent_channels, 2 * cfg.width}));
      Tensor<Real> cb({2 * cfg.width});
      for (std::int64_t i = cfg.width; i < 2 * cfg.width; ++i) cb[i] = Real(1);
      cl.b = params.add(name + ".cond.b", std::move(cb));
      dec.cond.push_back(cl);
    }
    cur = cfg.width;
  }
  dec.out = make_linear(params, prefix + ".out", cur, 3, rng);
  return dec;
}

// Noise coordinates for `patches` patches of n points each; patch p draws
// from chain_seed(seed, "noise", base_index + p), so any single patch can be
// reproduced in isolation.
template <class Real>
Tensor<Real> decoder_noise(std::int64_t patches, std::int64_t n,
                           std::uint64_t seed, std::int64_t base_index = 0) {
  Tensor<Real> z({patches * n, 3});
  for (std::int64_t p = 0; p < patches; ++p) {
    Rng rng(chain_seed(seed, "noise",
                       static_cast<std::uint64_t>(base_index + p)));
    for (std::int64_t i = 0; i < n * 3; ++i)
      z[p * n * 3 + i] = static_cast<Real>(rng.uniform(-1, 1));
  }
  return z;
}

namespace detail {

template <class Real>
Var<Real> decode_impl(const Bound<Real> &b, const Decoder<Real> &dec,
                      const Tensor<Real> &latent_positions,
                      Var<Real> latent_features, std::int64_t n_total,
                      std::uint64_t seed, std::int64_t base_index) {
  Tape<Real> &t = *b.tape;
  const Shape &fs = t.shape_of(latent_features);
  if (latent_positions.shape.size() != 2 || latent_positions.shape[1] != 3)
    throw std::invalid_argument("decode: latent positions must be (M,3), got " +
                                shape_str(latent_positions.shape));
  const std::int64_t m = latent_positions.shape[0];
  if (m < 1) throw std::invalid_argument("decode: needs at least one patch");
  if (fs.size() != 2 || fs[0] != m || fs[1] != dec.c)
    throw std::invalid_argument("decode: latent features " + shape_str(fs) +
                                " do not match M=" + std::to_string(m) +
                                ", C=" + std::to_string(dec.c));
  if (n_total < m || n_total % m != 0)
    throw std::invalid_argument("decode: point count " + std::to_string(n_total) +
                                " is not a positive multiple of the " +
                                std::to_string(m) + " patches");
  const std::int64_t n = n_total / m;
  const std::int64_t w = dec.cfg.width;

  Var<Real> h = t.constant(decoder_noise<Real>(m, n, seed, base_index));
  std::vector<std::int64_t> rep;
  if (dec.cfg.conditioner == Conditioner::concat) {
    rep.resize(static_cast<std::size_t>(m * n));
    for (std::int64_t p = 0; p < m; ++p)
      for (std::int64_t i = 0; i < n; ++i)
        rep[static_cast<std::size_t>(p * n + i)] = p;
  }
  for (std::int64_t l = 0; l < dec.cfg.layers; ++l) {
    if (dec.cfg.conditioner == Conditioner::concat) {
      h = concat(h, gather_rows(latent_features, rep), 1);
      h = apply_linear(b, dec.hidden[static_cast<std::size_t>(l)], h);
    } else {
      h = apply_linear(b, dec.hidden[static_cast<std::size_t>(l)], h);
      Var<Real> cm =
          apply_linear(b, dec.cond[static_cast<std::size_t>(l)], latent_features);
      Var<Real> ymu = reshape(slice_axis(cm, 1, 0, w), {m, 1, w});
      Var<Real> ysig = reshape(slice_axis(cm, 1, w, 2 * w), {m, 1, w});
      h = reshape(adain(reshape(h, {m, n, w}), ysig, ymu, 1, dec.cfg.eps),
                  {m * n, w});
    }
    h = leaky_relu(h, dec.cfg.slope);
  }
  Var<Real> local = apply_linear(b, dec.out, h); // (m*n, 3)
  Tensor<Real> off({m * n, 3});
  for (std::int64_t p = 0; p < m; ++p)
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t d = 0; d < 3; ++d)
        off[(p * n + i) * 3 + d] = latent_positions[p * 3 + d];
  return add(local, t.constant(off));
}

} // namespace detail

// Decode every latent point into a patch of n_total/M points in its local
// frame, then translate each patch to its latent position and take the union.
template <class Real>
Var<Real> decode(const Bound<Real> &b, const Decoder<Real> &dec,
                 const Tensor<Real> &latent_positions, Var<Real> latent_features,
                 std::int64_t n_total, std::uint64_t seed) {
  return detail::decode_impl(b, dec, latent_positions, latent_features, n_total,
                             seed, 0);
}

// One patch of `n` points in its local frame.  With patch_index p this
// reproduces patch p of a full decode under the same seed.
template <class Real>
Var<Real> decode_patch(const Bound<Real> &b, const Decoder<Real> &dec,
                       Var<Real> latent_feature, std::int64_t n,
                       std::uint64_t seed, std::int64_t patch_index = 0) {
  return detail::decode_impl(b, dec, Tensor<Real>::zeros({1, 3}), latent_feature,
                             n, seed, patch_index);
}

// Encode then decode one cloud off-tape (inference by default).
template <class Real>
PointCloud<Real> reconstruct(const Encoder<Real> &enc, const Decoder<Real> &dec,
                             ParamSet<Real> &params, StateSet<Real> &states,
                             const PointCloud<Real> &cloud, std::uint64_t seed,
                             bool training = false) {
  Tape<Real> t;
  Bound<Real> b = bind(t, params, states, training);
  EncodedCloud<Real> lat = encode(b, enc, cloud);
  Var<Real> out = decode(b, dec, lat.positions, lat.features, cloud.n(), seed);
  return make_cloud(t.value_tensor(out));
}

// ---- training ---------------------------------------------------------------

enum class ReconLoss { chamfer, emd_auction, sinkhorn };

inline const char *recon_loss_name(ReconLoss l) {
  switch (l) {
  case ReconLoss::chamfer: return "chamfer";
  case ReconLoss::emd_auction: return "emd_auction";
  default: return "sinkhorn";
  }
}

// Match-and-freeze solver settings for the training loop: the plan only
// weights the differentiable distances, so a loose tolerance and a small
// iteration cap suffice (rounding keeps the frozen plan feasible).
template <class Real> SinkhornOptions<Real> training_sinkhorn_options() {
  SinkhornOptions<Real> o;
  o.tol = Real(1e-7);
  o.max_iters = 200;
  return o;
}

// Mean matched distance between the on-tape reconstruction and the target
// cloud.  The matching itself (nearest neighbours, auction assignment, or an
// entropic plan) is computed off-tape and frozen; gradients flow through the
// matched distances only.
template <class Real>
Var<Real> reconstruction_loss(Var<Real> recon, const PointCloud<Real> &target,
                              ReconLoss kind,
                              const SinkhornOptions<Real> &sk = {}) {
  Tape<Real> &t = *recon.tape;
  switch (kind) {
  case ReconLoss::chamfer: {
    const Shape &rs = t.shape_of(recon);
    Var<Real> sum = chamfer_loss(recon, target);
    return scale(sum, Real(1) / static_cast<Real>(rs[0] + target.n()));
  }
  case ReconLoss::emd_auction: {
    Tensor<Real> cost =
        pairwise_distance(t.value_tensor(recon), target.positions);
    AuctionResult<Real> ar = auction_assign(cost);
    return assignment_loss(recon, target.positions, ar.assignment);
  }
  default: {
    SinkhornResult<Real> sr =
        sinkhorn(make_cloud(t.value_tensor(recon)), target, sk);
    return plan_loss(recon, target.positions, sr.plan.gamma);
  }
  }
}

template <class Real> struct AeTrainConfig {
  std::int64_t iterations = 500;
  std::int64_t batch = 4;
  ReconLoss loss = ReconLoss::sinkhorn;
  AdamOpts<Real> adam;
  SinkhornOptions<Real> sinkhorn = training_sinkhorn_options<Real>();
  std::uint64_t seed = 1;
};

template <class Real> struct TrainRecord {
  std::int64_t iteration = 0;
  Real loss = 0;
};

// Minibatch training.  All randomness is chained off cfg.seed and the
// absolute iteration index, so a run resumed at any iteration (with the Adam
// state carried over) continues bit-identically.
template <class Real>
std::vector<TrainRecord<Real>> train_autoencoder(
    const std::vector<PointCloud<Real>> &dataset, const Encoder<Real> &enc,
    const Decoder<Real> &dec, ParamSet<Real> &params, StateSet<Real> &states,
    Adam<Real> &adam, const AeTrainConfig<Real> &cfg,
    std::int64_t start_iteration = 0) {
  if (dataset.empty())
    throw std::invalid_argument("train_autoencoder: empty dataset");
  if (cfg.batch < 1)
    throw std::invalid_argument("train_autoencoder: batch must be positive");
  std::vector<TrainRecord<Real>> log;
  for (std::int64_t it = start_iteration; it < cfg.iterations; ++it) {
    Rng pick(chain_seed(cfg.seed, "batch", static_cast<std::uint64_t>(it)));
    std::vector<Tensor<Real>> grads;
    double acc = 0;
    for (std::int64_t s = 0; s < cfg.batch; ++s) {
      const PointCloud<Real> &sample =
          dataset[static_cast<std::size_t>(pick.next_below(dataset.size()))];
      Tape<Real> t;
      Bound<Real> b = bind(t, params, states, /*training=*/true);
      EncodedCloud<Real> lat = encode(b, enc, sample);
      const std::uint64_t noise_seed = chain_seed(
          cfg.seed, "decode", static_cast<std::uint64_t>(it * cfg.batch + s));
      Var<Real> recon =
          decode(b, dec, lat.positions, lat.features, sample.n(), noise_seed);
      bool finite = true;
      for (Real v : t.value_tensor(recon).data)
        finite = finite && std::isfinite(static_cast<double>(v));
      Real lv = 0;
      if (finite) {
        Var<Real> loss =
            reconstruction_loss(recon, sample, cfg.loss, cfg.sinkhorn);
        lv = t.value_tensor(loss)[0];
        if (std::isfinite(static_cast<double>(lv))) t.backward(loss);
      }
      if (!finite || !std::isfinite(static_cast<double>(lv))) {
        auto bad = t.first_non_finite();
        throw numerical_failure("train_autoencoder: non-finite forward at "
                                "iteration " + std::to_string(it) +
                                ", first bad tensor: " + bad.second + " (node " +
                                std::to_string(bad.first) + ")");
      }
      acc += static_cast<double>(lv);
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
