#include <catch2/catch_amalgamated.hpp>

#include "irconv/autoencoder.hpp"
#include "support.hpp"

#include <algorithm>
#include <cmath>

using namespace irconv;
using testsup::check_grad;
using testsup::random_cloud;
using testsup::random_positions;

namespace {

EncoderConfig<double> tiny_encoder_config() {
  EncoderConfig<double> cfg;
  cfg.blocks = {{{6, 6}, 6, 0.5}, {{6, 5}, 6, 1.0}};
  cfg.latent_points = 8;
  cfg.latent_channels = 5;
  cfg.hidden = 6;
  return cfg;
}

void randomize(ParamSet<double> &ps, std::int32_t id, Rng &rng, double spread) {
  auto &t = ps[id];
  for (auto &v : t.data) v = rng.uniform(-spread, spread);
}

} // namespace

TEST_CASE("adain: hand-computed column") {
  Tape<double> t;
  Var<double> x = t.input(Tensor<double>({2, 1}, {1.0, 3.0}), false);
  Var<double> ys = t.input(Tensor<double>({1, 1}, {2.0}), false);
  Var<double> ym = t.input(Tensor<double>({1, 1}, {0.0}), false);
  // Column [1,3]: mean 2, variance 1.  Scale 2, shift 0 lands on [-2, 2].
  Tensor<double> exact = t.value_tensor(adain(x, ys, ym, 0, 0.0));
  REQUIRE(exact[0] == -2.0);
  REQUIRE(exact[1] == 2.0);
  // The default variance floor shrinks the output by 1/sqrt(1 + 1e-5).
  Tensor<double> soft = t.value_tensor(adain(x, ys, ym, 0));
  const double expect = 2.0 / std::sqrt(1.0 + 1e-5);
  REQUIRE(std::abs(soft[1] - expect) < 1e-15);
  REQUIRE(std::abs(soft[0] + expect) < 1e-15);
}

TEST_CASE("adain: unit scale and zero shift standardize") {
  Rng rng(3);
  Tape<double> t;
  Var<double> x = t.input(Tensor<double>::uniform({7, 4}, rng, -3.0, 5.0), false);
  Var<double> ys = t.input(Tensor<double>::full({1, 4}, 1.0), false);
  Var<double> ym = t.input(Tensor<double>::zeros({1, 4}), false);
  Tensor<double> out = t.value_tensor(adain(x, ys, ym, 0, 0.0));
  for (std::int64_t c = 0; c < 4; ++c) {
    double mean = 0, var = 0;
    for (std::int64_t i = 0; i < 7; ++i) mean += out[i * 4 + c];
    mean /= 7;
    for (std::int64_t i = 0; i < 7; ++i) {
      const double d = out[i * 4 + c] - mean;
      var += d * d;
    }
    var /= 7;
    REQUIRE(std::abs(mean) < 1e-13);
    REQUIRE(std::abs(var - 1.0) < 1e-12);
  }
}

TEST_CASE("encoder: latent shapes and budget") {
  Rng rng(11);
  EncoderConfig<double> cfg;
  cfg.blocks = {{{8, 8}, 8, 0.5}, {{8, 13}, 8, 1.0}};
  cfg.latent_points = 16;
  cfg.latent_channels = 13;
  cfg.hidden = 8;
  REQUIRE(latent_budget(cfg) == 16 * 16);

  ParamSet<double> ps;
  StateSet<double> ss;
  Encoder<double> enc = make_encoder(ps, ss, "enc", cfg, 0, rng);
  PointCloud<double> cloud = random_cloud(rng, 64);

  Tape<double> t;
  Bound<double> b = bind(t, ps, ss, true);
  EncodedCloud<double> lat = encode(b, enc, cloud);
  REQUIRE(lat.positions.shape == Shape{16, 3});
  REQUIRE(t.shape_of(lat.features) == Shape{16, 13});

  // Latent positions are a subset of the input: pooling samples, never mixes.
  for (std::int64_t i = 0; i < 16; ++i) {
    bool found = false;
    for (std::int64_t j = 0; j < 64 && !found; ++j)
      found = lat.positions[i * 3] == cloud.positions[j * 3] &&
              lat.positions[i * 3 + 1] == cloud.positions[j * 3 + 1] &&
              lat.positions[i * 3 + 2] == cloud.positions[j * 3 + 2];
    REQUIRE(found);
  }

  EncoderConfig<double> wide;
  wide.latent_points = 64;
  wide.latent_channels = 64;
  REQUIRE(latent_budget(wide) == 4288);
}

TEST_CASE("encoder: translation covariance") {
  Rng rng(5);
  ParamSet<double> ps;
  StateSet<double> ss;
  Encoder<double> enc = make_encoder(ps, ss, "enc", tiny_encoder_config(), 0, rng);
  PointCloud<double> cloud = random_cloud(rng, 32);
  PointCloud<double> moved = cloud;
  const double shift[3] = {0.37, -1.25, 2.0};
  for (std::int64_t i = 0; i < 32; ++i)
    for (std::int64_t d = 0; d < 3; ++d)
      moved.positions[i * 3 + d] += shift[d];

  Tape<double> ta, tb;
  StateSet<double> sa = ss, sb = ss;
  Bound<double> ba = bind(ta, ps, sa, true);
  Bound<double> bb = bind(tb, ps, sb, true);
  EncodedCloud<double> la = encode(ba, enc, cloud);
  EncodedCloud<double> lb = encode(bb, enc, moved);

  // Positions ride along exactly; features only see relative geometry.
  for (std::int64_t i = 0; i < la.positions.size(); ++i)
    REQUIRE(lb.positions[i] == la.positions[i] + shift[i % 3]);
  Tensor<double> fa = ta.value_tensor(la.features);
  Tensor<double> fb = tb.value_tensor(lb.features);
  for (std::int64_t i = 0; i < fa.size(); ++i)
    REQUIRE(std::abs(fa[i] - fb[i]) < 1e-12);
}

TEST_CASE("encoder: input contract") {
  Rng rng(2);
  ParamSet<double> ps;
  StateSet<double> ss;
  EncoderConfig<double> cfg = tiny_encoder_config();

  SECTION("last block width must match latent_channels") {
    EncoderConfig<double> bad = cfg;
    bad.latent_channels = 7;
    REQUIRE_THROWS_AS(make_encoder(ps, ss, "enc", bad, 0, rng),
                      std::invalid_argument);
  }
  SECTION("channel mismatch is rejected") {
    Encoder<double> enc = make_encoder(ps, ss, "enc", cfg, 2, rng);
    Tape<double> t;
    Bound<double> b = bind(t, ps, ss, true);
    REQUIRE_THROWS_AS(encode(b, enc, random_cloud(rng, 32)),
                      std::invalid_argument);
  }
  SECTION("cloud smaller than the latent size is rejected") {
    Encoder<double> enc = make_encoder(ps, ss, "enc", cfg, 0, rng);
    Tape<double> t;
    Bound<double> b = bind(t, ps, ss, true);
    // 12 points survive the first pool as 6 < latent_points = 8.
    REQUIRE_THROWS_AS(encode(b, enc, random_cloud(rng, 12)), config_error);
  }
  SECTION("featureless input runs on a ones channel") {
    Encoder<double> enc = make_encoder(ps, ss, "enc", cfg, 0, rng);
    Tape<double> t;
    Bound<double> b = bind(t, ps, ss, true);
    EncodedCloud<double> lat = encode(b, enc, random_cloud(rng, 32));
    for (double v : t.value_tensor(lat.features).data)
      REQUIRE(std::isfinite(v));
  }
}

TEST_CASE("global_readout: permutation invariant summary") {
  Rng rng(17);
  EncoderConfig<double> cfg = tiny_encoder_config();
  cfg.readout = Readout::vector;
  cfg.readout_conv_width = 6;
  cfg.readout_width = 10;
  ParamSet<double> ps;
  StateSet<double> ss;
  Encoder<double> enc = make_encoder(ps, ss, "enc", cfg, 0, rng);

  Tensor<double> pos = random_positions(rng, 8);
  Tensor<double> feat = Tensor<double>::uniform({8, 5}, rng, -1.0, 1.0);

  auto run = [&](const Tensor<double> &p, const Tensor<double> &f) {
    Tape<double> t;
    StateSet<double> s = ss;
    Bound<double> b = bind(t, ps, s, true);
    EncodedCloud<double> lat{p, t.constant(f)};
    return t.value_tensor(global_readout(b, enc, lat));
  };

  Tensor<double> base = run(pos, feat);
  REQUIRE(base.shape == Shape{1, 10});

  std::vector<std::int64_t> perm(8);
  for (std::int64_t i = 0; i < 8; ++i) perm[i] = i;
  for (std::int64_t i = 7; i > 0; --i)
    std::swap(perm[i], perm[rng.next_below(static_cast<std::uint64_t>(i + 1))]);
  Tensor<double> ppos({8, 3}), pfeat({8, 5});
  for (std::int64_t i = 0; i < 8; ++i) {
    for (std::int64_t d = 0; d < 3; ++d) ppos[i * 3 + d] = pos[perm[i] * 3 + d];
    for (std::int64_t c = 0; c < 5; ++c) pfeat[i * 5 + c] = feat[perm[i] * 5 + c];
  }
  Tensor<double> shuffled = run(ppos, pfeat);
  for (std::int64_t i = 0; i < base.size(); ++i)
    REQUIRE(std::abs(shuffled[i] - base[i]) < 1e-12);

  // Zero latent features cannot excite the freshly built head.
  Tensor<double> silent = run(pos, Tensor<double>::zeros({8, 5}));
  for (double v : silent.data) REQUIRE(v == 0.0);

  ParamSet<double> bare;
  StateSet<double> bs;
  Encoder<double> noHead =
      make_encoder(bare, bs, "enc", tiny_encoder_config(), 0, rng);
  Tape<double> t;
  Bound<double> b = bind(t, bare, bs, true);
  EncodedCloud<double> lat{pos, t.constant(feat)};
  REQUIRE_THROWS_AS(global_readout(b, noHead, lat), std::invalid_argument);
}

TEST_CASE("decoder: zeroed output layer parks every patch at its anchor") {
  Rng rng(23);
  ParamSet<double> ps;
  DecoderConfig<double> cfg;
  cfg.layers = 3;
  cfg.width = 8;
  Decoder<double> dec = make_decoder(ps, "dec", cfg, 4, rng);
  std::fill(ps[dec.out.w].data.begin(), ps[dec.out.w].data.end(), 0.0);
  std::fill(ps[dec.out.b].data.begin(), ps[dec.out.b].data.end(), 0.0);

  Tensor<double> anchors = random_positions(rng, 5);
  Tensor<double> lat = Tensor<double>::uniform({5, 4}, rng, -1.0, 1.0);
  Tape<double> t;
  StateSet<double> ss;
  Bound<double> b = bind(t, ps, ss, true);
  Tensor<double> out =
      t.value_tensor(decode(b, dec, anchors, t.constant(lat), 15, 9));
  REQUIRE(out.shape == Shape{15, 3});
  for (std::int64_t p = 0; p < 5; ++p)
    for (std::int64_t i = 0; i < 3; ++i)
      for (std::int64_t d = 0; d < 3; ++d)
        REQUIRE(out[(p * 3 + i) * 3 + d] == anchors[p * 3 + d]);
}

TEST_CASE("decoder: conditioner starts at the identity") {
  Rng rng(29);
  ParamSet<double> ps;
  DecoderConfig<double> cfg;
  cfg.layers = 2;
  cfg.width = 6;
  Decoder<double> dec = make_decoder(ps, "dec", cfg, 3, rng);

  // Fresh conditioners emit (shift 0, scale 1) regardless of the latent
  // feature, so two different codes decode to the same local patch.
  auto patch = [&](double fill) {
    Tape<double> t;
    StateSet<double> ss;
    Bound<double> b = bind(t, ps, ss, true);
    Var<double> f = t.constant(Tensor<double>::full({1, 3}, fill));
    return t.value_tensor(decode_patch(b, dec, f, 4, 31));
  };
  Tensor<double> a = patch(0.8), c = patch(-2.5);
  REQUIRE(a.data == c.data);
}

TEST_CASE("decoder: decode is the union of its patches") {
  Rng rng(41);
  ParamSet<double> ps;
  DecoderConfig<double> cfg;
  cfg.layers = 3;
  cfg.width = 7;
  Decoder<double> dec = make_decoder(ps, "dec", cfg, 4, rng);
  for (const Linear<double> &cl : dec.cond) randomize(ps, cl.w, rng, 0.5);

  Tensor<double> anchors = random_positions(rng, 4);
  Tensor<double> lat = Tensor<double>::uniform({4, 4}, rng, -1.0, 1.0);
  const std::uint64_t seed = 77;

  Tape<double> t;
  StateSet<double> ss;
  Bound<double> b = bind(t, ps, ss, true);
  Tensor<double> whole =
      t.value_tensor(decode(b, dec, anchors, t.constant(lat), 12, seed));

  for (std::int64_t p = 0; p < 4; ++p) {
    Tape<double> tp;
    Bound<double> bp = bind(tp, ps, ss, true);
    Tensor<double> row({1, 4});
    for (std::int64_t c = 0; c < 4; ++c) row[c] = lat[p * 4 + c];
    Tensor<double> piece =
        tp.value_tensor(decode_patch(bp, dec, tp.constant(row), 3, seed, p));
    for (std::int64_t i = 0; i < 3; ++i)
      for (std::int64_t d = 0; d < 3; ++d)
        REQUIRE(std::abs(whole[(p * 3 + i) * 3 + d] -
                         (piece[i * 3 + d] + anchors[p * 3 + d])) < 1e-13);
  }
}

TEST_CASE("decoder: seeded determinism") {
  Rng rng(53);
  ParamSet<double> ps;
  DecoderConfig<double> cfg;
  cfg.layers = 2;
  cfg.width = 6;
  Decoder<double> dec = make_decoder(ps, "dec", cfg, 3, rng);
  for (const Linear<double> &cl : dec.cond) randomize(ps, cl.w, rng, 0.5);
  Tensor<double> anchors = random_positions(rng, 3);
  Tensor<double> lat = Tensor<double>::uniform({3, 3}, rng, -1.0, 1.0);

  auto run = [&](std::uint64_t seed) {
    Tape<double> t;
    StateSet<double> ss;
    Bound<double> b = bind(t, ps, ss, true);
    return t.value_tensor(decode(b, dec, anchors, t.constant(lat), 9, seed));
  };
  REQUIRE(run(5).data == run(5).data);
  REQUIRE(run(5).data != run(6).data);
}

TEST_CASE("decoder: contract violations") {
  Rng rng(61);
  ParamSet<double> ps;
  DecoderConfig<double> cfg;
  cfg.layers = 2;
  cfg.width = 4;
  Decoder<double> dec = make_decoder(ps, "dec", cfg, 3, rng);
  Tape<double> t;
  StateSet<double> ss;
  Bound<double> b = bind(t, ps, ss, true);
  Tensor<double> anchors = random_positions(rng, 3);
  Var<double> lat = t.constant(Tensor<double>::uniform({3, 3}, rng, -1.0, 1.0));
  REQUIRE_THROWS_AS(decode(b, dec, anchors, lat, 10, 1), std::invalid_argument);
  Var<double> wide = t.constant(Tensor<double>::zeros({3, 5}));
  REQUIRE_THROWS_AS(decode(b, dec, anchors, wide, 9, 1), std::invalid_argument);
  REQUIRE_THROWS_AS(make_decoder(ps, "bad", cfg, 0, rng), std::invalid_argument);
}

TEST_CASE("decoder: gradients through both conditioners") {
  for (Conditioner mode : {Conditioner::adain, Conditioner::concat}) {
    Rng rng(mode == Conditioner::adain ? 71 : 73);
    ParamSet<double> ps;
    DecoderConfig<double> cfg;
    cfg.layers = 2;
    cfg.width = 5;
    cfg.conditioner = mode;
    Decoder<double> dec = make_decoder(ps, "dec", cfg, 3, rng);
    for (const Linear<double> &cl : dec.cond) randomize(ps, cl.w, rng, 0.4);
    Tensor<double> anchors = random_positions(rng, 2);
    Tensor<double> lat = Tensor<double>::uniform({2, 3}, rng, -1.0, 1.0);
    Tensor<double> w = Tensor<double>::uniform({4, 3}, rng, -1.0, 1.0);

    std::vector<Tensor<double>> inputs = ps.values;
    inputs.push_back(lat);
    check_grad(inputs, [&](Tape<double> &t, const std::vector<Var<double>> &v) {
      StateSet<double> ss;
      Bound<double> b;
      b.tape = &t;
      b.params = &ps;
      b.states = &ss;
      b.training = true;
      b.vars.assign(v.begin(), v.end() - 1);
      Var<double> out = decode(b, dec, anchors, v.back(), 4, 13);
      return sum_all(mul(out, t.constant(w)));
    });
  }
}

TEST_CASE("autoencoder: end-to-end gradient") {
  Rng rng(83);
  EncoderConfig<double> ecfg;
  ecfg.blocks = {{{4, 4}, 4, 1.0}};
  ecfg.latent_points = 3;
  ecfg.latent_channels = 4;
  ecfg.hidden = 6;
  ecfg.density_eliminate = true;
  ParamSet<double> ps;
  StateSet<double> ss0;
  Encoder<double> enc = make_encoder(ps, ss0, "enc", ecfg, 0, rng);
  DecoderConfig<double> dcfg;
  dcfg.layers = 2;
  dcfg.width = 6;
  Decoder<double> dec = make_decoder(ps, "dec", dcfg, 4, rng);
  for (const Linear<double> &cl : dec.cond) randomize(ps, cl.w, rng, 0.4);

  PointCloud<double> cloud = random_cloud(rng, 12);
  Tensor<double> w = Tensor<double>::uniform({12, 3}, rng, -1.0, 1.0);

  check_grad(ps.values, [&](Tape<double> &t, const std::vector<Var<double>> &v) {
    StateSet<double> ss = ss0;
    Bound<double> b;
    b.tape = &t;
    b.params = &ps;
    b.states = &ss;
    b.training = true;
    b.vars = v;
    EncodedCloud<double> lat = encode(b, enc, cloud);
    Var<double> out = decode(b, dec, lat.positions, lat.features, 12, 99);
    return sum_all(mul(out, t.constant(w)));
  });
}

namespace {

struct TinyAe {
  EncoderConfig<double> ecfg;
  DecoderConfig<double> dcfg;
  ParamSet<double> params;
  StateSet<double> states;
  Encoder<double> enc;
  Decoder<double> dec;

  explicit TinyAe(std::uint64_t seed) {
    Rng rng(seed);
    ecfg.blocks = {{{6, 6}, 4, 1.0}};
    ecfg.latent_points = 4;
    ecfg.latent_channels = 6;
    ecfg.hidden = 6;
    dcfg.layers = 2;
    dcfg.width = 12;
    enc = make_encoder(params, states, "enc", ecfg, 0, rng);
    dec = make_decoder(params, "dec", dcfg, 6, rng);
  }
};

std::vector<PointCloud<double>> blob_dataset(std::uint64_t seed, std::int64_t count,
                                             std::int64_t n) {
  Rng rng(seed);
  std::vector<PointCloud<double>> out;
  for (std::int64_t i = 0; i < count; ++i) out.push_back(random_cloud(rng, n));
  return out;
}

} // namespace

TEST_CASE("training: chamfer loss falls and resume is bitwise") {
  TinyAe ae(7);
  auto data = blob_dataset(19, 4, 16);
  AeTrainConfig<double> cfg;
  cfg.iterations = 24;
  cfg.batch = 2;
  cfg.loss = ReconLoss::chamfer;
  cfg.adam.lr = 1e-3;
  cfg.seed = 99;

  ParamSet<double> p1 = ae.params;
  StateSet<double> s1 = ae.states;
  Adam<double> a1(p1, cfg.adam);
  auto log = train_autoencoder(data, ae.enc, ae.dec, p1, s1, a1, cfg);
  REQUIRE(log.size() == 24);
  double head = 0, tail = 0;
  for (int i = 0; i < 5; ++i) {
    head += log[static_cast<std::size_t>(i)].loss;
    tail += log[log.size() - 1 - static_cast<std::size_t>(i)].loss;
  }
  REQUIRE(tail < head);
  for (const auto &row : log) REQUIRE(std::isfinite(row.loss));

  // Stop at iteration 10, then continue: bit-identical to the single run.
  ParamSet<double> p2 = ae.params;
  StateSet<double> s2 = ae.states;
  Adam<double> a2(p2, cfg.adam);
  AeTrainConfig<double> half = cfg;
  half.iterations = 10;
  train_autoencoder(data, ae.enc, ae.dec, p2, s2, a2, half);
  train_autoencoder(data, ae.enc, ae.dec, p2, s2, a2, cfg, 10);
  for (std::size_t i = 0; i < p1.values.size(); ++i)
    REQUIRE(p1.values[i].data == p2.values[i].data);
  for (std::size_t i = 0; i < s1.values.size(); ++i)
    REQUIRE(s1.values[i].data == s2.values[i].data);

  // With at least one update recorded, inference mode is available and
  // deterministic.
  PointCloud<double> ra = reconstruct(ae.enc, ae.dec, p1, s1, data[0], 5, false);
  PointCloud<double> rb = reconstruct(ae.enc, ae.dec, p1, s1, data[0], 5, false);
  REQUIRE(ra.positions.data == rb.positions.data);
  for (double v : ra.positions.data) REQUIRE(std::isfinite(v));

  StateSet<double> fresh = ae.states;
  REQUIRE_THROWS_AS(
      reconstruct(ae.enc, ae.dec, p1, fresh, data[0], 5, false), config_error);
}

TEST_CASE("training: transport losses run end to end") {
  auto data = blob_dataset(31, 3, 12);
  for (ReconLoss kind : {ReconLoss::sinkhorn, ReconLoss::emd_auction}) {
    TinyAe ae(43);
    AeTrainConfig<double> cfg;
    cfg.iterations = 3;
    cfg.batch = 2;
    cfg.loss = kind;
    cfg.seed = 7;
    std::vector<Tensor<double>> before = ae.params.values;
    Adam<double> adam(ae.params, cfg.adam);
    auto log = train_autoencoder(data, ae.enc, ae.dec, ae.params, ae.states,
                                 adam, cfg);
    REQUIRE(log.size() == 3);
    for (const auto &row : log) {
      REQUIRE(std::isfinite(row.loss));
      REQUIRE(row.loss > 0.0);
    }
    bool moved = false;
    for (std::size_t i = 0; i < before.size() && !moved; ++i)
      moved = before[i].data != ae.params.values[i].data;
    REQUIRE(moved);
  }
}

TEST_CASE("training: non-finite forward aborts with a diagnosis") {
  TinyAe ae(47);
  auto data = blob_dataset(53, 2, 12);
  ae.params.values[0][0] = std::numeric_limits<double>::quiet_NaN();
  AeTrainConfig<double> cfg;
  cfg.iterations = 1;
  cfg.batch = 1;
  cfg.loss = ReconLoss::chamfer;
  Adam<double> adam(ae.params, cfg.adam);
  REQUIRE_THROWS_AS(train_autoencoder(data, ae.enc, ae.dec, ae.params,
                                      ae.states, adam, cfg),
                    numerical_failure);
}
