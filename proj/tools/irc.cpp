// irc: command-line front end.  Data generation, auto-encoder and latent
// simulator training, evaluation, rollouts, and point-cloud distances.
//
// Exit codes: 0 success, 2 usage/configuration error, 3 numerical failure.

#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <irconv/config.hpp>

namespace fs = std::filesystem;
using irconv::Json;

namespace {

std::string frame_name(const std::string &stem, std::int64_t i) {
  std::ostringstream os;
  os << stem << std::setfill('0') << std::setw(6) << i << ".xyz";
  return os.str();
}

// ---- model reconstruction from archived configs -------------------------------

template <class Real>
void build_autoencoder(const Json &ae_eff, irconv::ParamSet<Real> &params,
                       irconv::StateSet<Real> &states, irconv::Encoder<Real> &enc,
                       irconv::Decoder<Real> &dec) {
  auto ecfg = irconv::encoder_from_json<Real>(ae_eff.at("encoder"));
  auto dcfg = irconv::decoder_from_json<Real>(ae_eff.at("decoder"));
  const std::int64_t c_in = ae_eff.at("input_channels").get<std::int64_t>();
  if (c_in < 1)
    throw irconv::config_error("autoencoder config: input_channels not recorded");
  irconv::Rng rng(
      irconv::chain_seed(ae_eff.at("seed").get<std::uint64_t>(), "init"));
  enc = irconv::make_encoder(params, states, "enc", ecfg, c_in, rng);
  dec = irconv::make_decoder(params, "dec", dcfg, ecfg.latent_channels, rng);
}

// Load the resolved config written beside a checkpoint.
Json sibling_config(const std::string &ckpt_path, const std::string &name) {
  return irconv::load_json_file(
      (fs::path(ckpt_path).parent_path() / name).string());
}

template <class Real>
irconv::LatentCloud<Real> encode_cloud(const irconv::Encoder<Real> &enc,
                                       irconv::ParamSet<Real> &params,
                                       irconv::StateSet<Real> &states,
                                       const irconv::PointCloud<Real> &cloud) {
  irconv::Tape<Real> t;
  irconv::Bound<Real> b = irconv::bind(t, params, states, /*training=*/false);
  irconv::EncodedCloud<Real> e = irconv::encode(b, enc, cloud);
  return irconv::materialize(t, e);
}

template <class Real>
irconv::PointCloud<Real> decode_latent(const irconv::Decoder<Real> &dec,
                                       irconv::ParamSet<Real> &params,
                                       irconv::StateSet<Real> &states,
                                       const irconv::LatentCloud<Real> &lat,
                                       std::int64_t n, std::uint64_t seed) {
  irconv::Tape<Real> t;
  irconv::Bound<Real> b = irconv::bind(t, params, states, /*training=*/false);
  irconv::Var<Real> out =
      irconv::decode(b, dec, lat.positions, t.constant(lat.features), n, seed);
  return irconv::make_cloud(t.value_tensor(out));
}

// Training clouds for the auto-encoder: a shapes corpus directly, or every
// frame of every trajectory in an ljp corpus (centered per the config).
template <class Real>
std::vector<irconv::PointCloud<Real>> load_training_clouds(const std::string &dir,
                                                           bool center) {
  Json m = irconv::load_json_file((fs::path(dir) / "manifest.json").string());
  const std::string kind = m.is_object() ? m.value("kind", "") : "";
  if (kind == "shapes") return irconv::load_shape_corpus<Real>(dir);
  if (kind == "ljp") {
    auto trajs = irconv::load_ljp_corpus<Real>(dir);
    std::vector<irconv::PointCloud<Real>> out;
    for (auto &tr : trajs) {
      if (center) irconv::center_frames(tr.frames);
      for (auto &f : tr.frames) out.push_back(std::move(f));
    }
    return out;
  }
  throw irconv::config_error("dataset at '" + dir + "' has unknown kind '" +
                             kind + "'");
}

template <class Real>
double metric_value(const std::string &metric, const irconv::PointCloud<Real> &a,
                    const irconv::PointCloud<Real> &b,
                    const irconv::SinkhornOptions<Real> &sk) {
  if (metric == "chamfer") return static_cast<double>(irconv::chamfer(a, b).value);
  if (metric == "emd") return static_cast<double>(irconv::exact_emd(a, b).value);
  if (metric == "auction")
    return static_cast<double>(irconv::auction_emd(a, b, {}).value);
  return static_cast<double>(irconv::sinkhorn(a, b, sk).value);
}

// ---- gen-data -----------------------------------------------------------------

int run_gen_data(const std::string &kind, const Json &eff,
                 const std::string &out_dir) {
  const auto seed = eff.at("seed").get<std::uint64_t>();
  if (kind == "shapes") {
    auto clouds = irconv::toy_shape_dataset<double>(
        eff.at("count").get<std::int64_t>(), eff.at("n_points").get<std::int64_t>(),
        seed);
    irconv::save_shape_corpus(clouds, eff, out_dir);
    std::cout << "gen-data: wrote " << clouds.size() << " shapes to " << out_dir
              << "\n";
    return 0;
  }
  const auto count = eff.at("trajectories").get<std::int64_t>();
  std::vector<irconv::Trajectory<double>> trajs;
  for (std::int64_t i = 0; i < count; ++i) {
    irconv::LJConfig cfg = irconv::lj_from_json(
        eff, irconv::chain_seed(seed, "ljp-traj", static_cast<std::uint64_t>(i)));
    trajs.push_back(irconv::lj_simulate<double>(cfg));
  }
  irconv::save_ljp_corpus(trajs, eff, out_dir);
  std::cout << "gen-data: wrote " << count << " trajectories ("
            << trajs.front().frames.size() << " frames each) to " << out_dir
            << "\n";
  return 0;
}

// ---- train-ae -----------------------------------------------------------------

template <class Real>
int run_train_ae(Json eff, const std::string &out_dir, bool resume) {
  auto corpus = load_training_clouds<Real>(eff.at("data").get<std::string>(),
                                           eff.at("center").get<bool>());
  const std::int64_t derived =
      corpus.front().channels() == 0 ? 1 : corpus.front().channels();
  std::int64_t c_in = eff.at("input_channels").get<std::int64_t>();
  if (c_in == 0)
    c_in = derived;
  else if (c_in != derived)
    throw irconv::config_error(
        "config: input_channels " + std::to_string(c_in) +
        " does not match the dataset (" + std::to_string(derived) + ")");
  eff["input_channels"] = c_in;

  irconv::ParamSet<Real> params;
  irconv::StateSet<Real> states;
  irconv::Encoder<Real> enc;
  irconv::Decoder<Real> dec;
  build_autoencoder(eff, params, states, enc, dec);
  auto tcfg = irconv::ae_train_from_json<Real>(eff);
  irconv::Adam<Real> adam(params, tcfg.adam);

  const fs::path ckpt = fs::path(out_dir) / "checkpoint.irc";
  std::int64_t start = 0;
  if (resume) {
    if (!fs::exists(ckpt))
      throw irconv::config_error("train-ae: --resume needs an existing checkpoint "
                                 "at '" + ckpt.string() + "'");
    start = irconv::unpack_training_state(irconv::load_checkpoint(ckpt.string()),
                                          params, states, adam);
    if (start > tcfg.iterations)
      throw irconv::config_error("train-ae: checkpoint is at iteration " +
                                 std::to_string(start) + ", past the requested " +
                                 std::to_string(tcfg.iterations));
  }
  fs::create_directories(out_dir);
  irconv::write_json_file(eff, (fs::path(out_dir) / "config.json").string());
  std::cout << "latent space: M=" << enc.cfg.latent_points
            << ", C=" << enc.cfg.latent_channels << " -> "
            << irconv::latent_budget(enc.cfg) << " dimensions\n";

  auto log = irconv::train_autoencoder(corpus, enc, dec, params, states, adam,
                                       tcfg, start);
  irconv::write_loss_csv((fs::path(out_dir) / "loss.csv").string(), log, resume);
  irconv::save_checkpoint(
      ckpt.string(),
      irconv::pack_training_state(params, states, adam, tcfg.iterations));
  std::cout << std::setprecision(17);
  if (log.empty())
    std::cout << "train-ae: already at iteration " << start << "\n";
  else
    std::cout << "train-ae: iterations " << start << ".." << tcfg.iterations
              << ", final loss " << static_cast<double>(log.back().loss) << "\n";
  return 0;
}

// ---- train-sim ----------------------------------------------------------------

template <class Real>
int run_train_sim(const Json &eff, const std::string &out_dir, bool resume) {
  const std::string ae_ckpt_path = eff.at("ae_checkpoint").get<std::string>();
  Json ae_eff = sibling_config(ae_ckpt_path, "config.json");
  if (!ae_eff.is_object() || !ae_eff.contains("encoder"))
    throw irconv::config_error("'" + ae_ckpt_path +
                               "' is not an autoencoder checkpoint (no encoder "
                               "section in its config)");
  irconv::ParamSet<Real> ae_params;
  irconv::StateSet<Real> ae_states;
  irconv::Encoder<Real> enc;
  irconv::Decoder<Real> dec;
  build_autoencoder(ae_eff, ae_params, ae_states, enc, dec);
  irconv::NamedTensors ae_ckpt = irconv::load_checkpoint(ae_ckpt_path);
  irconv::unpack_group(ae_ckpt, "param", ae_params.names, ae_params.values);
  irconv::unpack_group(ae_ckpt, "state", ae_states.names, ae_states.values);

  auto trajs = irconv::load_ljp_corpus<Real>(eff.at("data").get<std::string>());
  const std::int64_t holdout = eff.at("holdout").get<std::int64_t>();
  if (static_cast<std::int64_t>(trajs.size()) <= holdout)
    throw irconv::config_error("train-sim: holdout " + std::to_string(holdout) +
                               " leaves no training trajectories (dataset has " +
                               std::to_string(trajs.size()) + ")");
  const bool center = eff.at("center").get<bool>();
  std::vector<std::vector<irconv::LatentCloud<Real>>> latent;
  for (auto &tr : trajs) {
    if (center) irconv::center_frames(tr.frames);
    std::vector<irconv::LatentCloud<Real>> lt;
    lt.reserve(tr.frames.size());
    for (const auto &f : tr.frames)
      lt.push_back(encode_cloud(enc, ae_params, ae_states, f));
    latent.push_back(std::move(lt));
  }
  std::vector<std::vector<irconv::LatentCloud<Real>>> train_set(
      latent.begin(), latent.end() - holdout);

  auto scfg = irconv::sim_train_from_json<Real>(eff);
  irconv::INConfig<Real> icfg;
  icfg.channels = enc.cfg.latent_channels;
  icfg.width = eff.at("in").at("width").get<std::int64_t>();
  icfg.k = eff.at("in").at("k").get<std::int64_t>();
  irconv::ParamSet<Real> params;
  irconv::StateSet<Real> states; // the simulator carries no running statistics
  irconv::Rng init(irconv::chain_seed(scfg.seed, "init"));
  irconv::INParams<Real> net = irconv::make_in(params, "in", icfg, init);
  irconv::Adam<Real> adam(params, scfg.adam);

  const fs::path ckpt = fs::path(out_dir) / "checkpoint.irc";
  std::int64_t start = 0;
  if (resume) {
    if (!fs::exists(ckpt))
      throw irconv::config_error("train-sim: --resume needs an existing "
                                 "checkpoint at '" + ckpt.string() + "'");
    start = irconv::unpack_training_state(irconv::load_checkpoint(ckpt.string()),
                                          params, states, adam);
    if (start > scfg.iterations)
      throw irconv::config_error("train-sim: checkpoint is at iteration " +
                                 std::to_string(start) + ", past the requested " +
                                 std::to_string(scfg.iterations));
  }
  fs::create_directories(out_dir);
  irconv::write_json_file(eff, (fs::path(out_dir) / "config.json").string());
  irconv::write_json_file(ae_eff, (fs::path(out_dir) / "ae_config.json").string());

  auto log = irconv::train_simulator(train_set, net, params, adam, scfg, start);
  irconv::write_loss_csv((fs::path(out_dir) / "loss.csv").string(), log, resume);
  irconv::NamedTensors out_ckpt =
      irconv::pack_training_state(params, states, adam, scfg.iterations);
  irconv::pack_group(out_ckpt, "ae.param", ae_params.names, ae_params.values);
  irconv::pack_group(out_ckpt, "ae.state", ae_states.names, ae_states.values);
  irconv::save_checkpoint(ckpt.string(), out_ckpt);
  std::cout << std::setprecision(17);
  if (log.empty())
    std::cout << "train-sim: already at iteration " << start << "\n";
  else
    std::cout << "train-sim: iterations " << start << ".." << scfg.iterations
              << ", final loss " << static_cast<double>(log.back().loss) << "\n";
  return 0;
}

// ---- eval-ae ------------------------------------------------------------------

template <class Real>
int run_eval_ae(const std::string &ckpt_path, const std::string &data_dir,
                const std::string &metric, bool baseline,
                const std::string &csv_path, std::uint64_t seed) {
  Json ae_eff = sibling_config(ckpt_path, "config.json");
  if (!ae_eff.is_object() || !ae_eff.contains("encoder"))
    throw irconv::config_error("'" + ckpt_path +
                               "' is not an autoencoder checkpoint");
  irconv::ParamSet<Real> params;
  irconv::StateSet<Real> states;
  irconv::Encoder<Real> enc;
  irconv::Decoder<Real> dec;
  build_autoencoder(ae_eff, params, states, enc, dec);
  irconv::NamedTensors ckpt = irconv::load_checkpoint(ckpt_path);
  irconv::unpack_group(ckpt, "param", params.names, params.values);
  irconv::unpack_group(ckpt, "state", states.names, states.values);

  auto corpus =
      load_training_clouds<Real>(data_dir, ae_eff.at("center").get<bool>());
  irconv::SinkhornOptions<Real> sk = irconv::training_sinkhorn_options<Real>();
  sk.eps = static_cast<Real>(ae_eff.at("eps_entropy").get<double>());
  irconv::CloudMoments<Real> moments;
  if (baseline) moments = irconv::compute_moments(corpus);

  std::ostringstream csv;
  csv << std::setprecision(17) << "index,raw,normalized\n";
  std::cout << std::setprecision(17);
  double sum_raw = 0, sum_norm = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const irconv::PointCloud<Real> &target = corpus[i];
    irconv::PointCloud<Real> probe;
    if (baseline) {
      probe = irconv::gen_gaussian<Real>(
          moments, target.n(), irconv::chain_seed(seed, "baseline", i));
    } else {
      probe = irconv::reconstruct(enc, dec, params, states, target,
                                  irconv::chain_seed(seed, "eval-noise", i));
    }
    const double raw = metric_value(metric, probe, target, sk);
    const double norm = raw / static_cast<double>(target.n());
    sum_raw += raw;
    sum_norm += norm;
    csv << i << "," << raw << "," << norm << "\n";
    std::cout << "cloud " << i << ": raw " << raw << ", per-point " << norm
              << "\n";
  }
  const double n = static_cast<double>(corpus.size());
  if (!csv_path.empty()) {
    std::ofstream os(csv_path, std::ios::trunc);
    if (!os) throw irconv::config_error("cannot write '" + csv_path + "'");
    os << csv.str();
  }
  std::cout << "eval-ae: " << metric << (baseline ? " baseline" : "")
            << " mean raw " << sum_raw / n << ", mean per-point " << sum_norm / n
            << " over " << corpus.size() << " clouds\n";
  return 0;
}

// ---- rollout ------------------------------------------------------------------

template <class Real>
int run_rollout(const std::string &ckpt_path, const std::string &init_path,
                std::int64_t steps, const std::string &export_dir) {
  if (steps < 0) throw irconv::config_error("rollout: steps must be >= 0");
  Json sim_eff = sibling_config(ckpt_path, "config.json");
  if (!sim_eff.is_object() || !sim_eff.contains("in"))
    throw irconv::config_error("'" + ckpt_path +
                               "' is not a simulator checkpoint (no 'in' section "
                               "in its config)");
  Json ae_eff = sibling_config(ckpt_path, "ae_config.json");

  irconv::ParamSet<Real> ae_params;
  irconv::StateSet<Real> ae_states;
  irconv::Encoder<Real> enc;
  irconv::Decoder<Real> dec;
  build_autoencoder(ae_eff, ae_params, ae_states, enc, dec);
  irconv::INConfig<Real> icfg;
  icfg.channels = enc.cfg.latent_channels;
  icfg.width = sim_eff.at("in").at("width").get<std::int64_t>();
  icfg.k = sim_eff.at("in").at("k").get<std::int64_t>();
  irconv::ParamSet<Real> params;
  irconv::Rng init_rng(
      irconv::chain_seed(sim_eff.at("seed").get<std::uint64_t>(), "init"));
  irconv::INParams<Real> net = irconv::make_in(params, "in", icfg, init_rng);
  irconv::NamedTensors ckpt = irconv::load_checkpoint(ckpt_path);
  irconv::unpack_group(ckpt, "param", params.names, params.values);
  irconv::unpack_group(ckpt, "ae.param", ae_params.names, ae_params.values);
  irconv::unpack_group(ckpt, "ae.state", ae_states.names, ae_states.values);

  // The initial frame names a position inside a recorded trajectory.
  const fs::path init(init_path);
  const std::string fname = init.filename().string();
  std::int64_t idx = -1;
  if (fname.size() == 16 && fname.rfind("frame_", 0) == 0 &&
      fname.substr(12) == ".xyz") {
    idx = 0;
    for (int i = 6; i < 12 && idx >= 0; ++i)
      idx = std::isdigit(static_cast<unsigned char>(fname[i]))
                ? idx * 10 + (fname[i] - '0')
                : -1;
  }
  if (idx < 0)
    throw irconv::config_error("rollout: --init must point at a trajectory frame "
                               "(frame_NNNNNN.xyz), got '" + fname + "'");
  irconv::Trajectory<Real> traj =
      irconv::load_trajectory<Real>(init.parent_path().string());
  const std::int64_t have = static_cast<std::int64_t>(traj.frames.size());
  if (idx >= have)
    throw irconv::config_error("rollout: frame " + std::to_string(idx) +
                               " is out of range (trajectory holds " +
                               std::to_string(have) + " frames)");
  if (idx + steps > have - 1)
    throw irconv::config_error("rollout: frame " + std::to_string(idx) + " + " +
                               std::to_string(steps) +
                               " steps overruns the trajectory (" +
                               std::to_string(have) + " frames)");
  if (sim_eff.at("center").get<bool>()) irconv::center_frames(traj.frames);

  std::vector<irconv::LatentCloud<Real>> truth;
  truth.reserve(static_cast<std::size_t>(steps) + 1);
  for (std::int64_t s = 0; s <= steps; ++s)
    truth.push_back(encode_cloud(
        enc, ae_params, ae_states,
        traj.frames[static_cast<std::size_t>(idx + s)]));

  irconv::SinkhornOptions<Real> sk = irconv::training_sinkhorn_options<Real>();
  sk.eps = static_cast<Real>(sim_eff.at("eps_entropy").get<double>());
  irconv::RolloutResult<Real> r = irconv::rollout(net, params, truth.front(), steps);

  fs::create_directories(export_dir);
  const auto seed = sim_eff.at("seed").get<std::uint64_t>();
  const std::int64_t n_out =
      traj.frames[static_cast<std::size_t>(idx)].n();
  for (std::int64_t s = 0; s <= r.completed; ++s) {
    irconv::PointCloud<Real> decoded =
        decode_latent(dec, ae_params, ae_states,
                      r.frames[static_cast<std::size_t>(s)], n_out,
                      irconv::chain_seed(seed, "rollout-noise",
                                         static_cast<std::uint64_t>(s)));
    irconv::save_cloud_xyz(decoded,
                           (fs::path(export_dir) / frame_name("pred_", s)).string());
  }
  std::ofstream os(fs::path(export_dir) / "rollout.csv", std::ios::trunc);
  if (!os)
    throw irconv::config_error("cannot write rollout.csv in '" + export_dir + "'");
  os << std::setprecision(17) << "step,loss\n";
  double sum = 0;
  for (std::int64_t s = 1; s <= r.completed; ++s) {
    const double v = static_cast<double>(
        irconv::sim_loss_value(r.frames[static_cast<std::size_t>(s)],
                               truth[static_cast<std::size_t>(s)], sk));
    sum += v;
    os << s << "," << v << "\n";
  }
  std::cout << std::setprecision(17) << "rollout: completed " << r.completed
            << " of " << steps << " steps from frame " << idx
            << (r.diverged ? " (diverged)" : "");
  if (r.completed > 0)
    std::cout << ", mean loss " << sum / static_cast<double>(r.completed);
  std::cout << "\n";
  return 0;
}

// ---- dist ---------------------------------------------------------------------

int run_dist(const std::string &a_path, const std::string &b_path,
             const std::string &metric, double eps) {
  auto a = irconv::load_cloud<double>(a_path);
  auto b = irconv::load_cloud<double>(b_path);
  irconv::SinkhornOptions<double> sk;
  sk.eps = eps;
  std::cout << std::setprecision(17) << metric_value(metric, a, b, sk) << "\n";
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"point-cloud learning toolkit: shape and particle-trajectory "
               "generation, transport metrics, auto-encoder and latent "
               "simulator training"};
  app.require_subcommand(1);

  std::string config_path, out_dir, kind, ckpt_path, data_dir, metric, csv_path;
  std::string init_path, export_dir, a_path, b_path, loss_name;
  bool resume = false, baseline = false;
  std::int64_t steps = 50, iterations = 0, batch = 0;
  std::uint64_t seed = 0;
  double eps = 0.002;

  CLI::App *gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--kind", kind, "dataset kind")
      ->required()
      ->check(CLI::IsMember({"shapes", "ljp"}));
  gen->add_option("--config", config_path, "generator config (JSON)")
      ->check(CLI::ExistingFile);
  gen->add_option("--out", out_dir, "output dataset directory")->required();
  gen->add_option("--seed", seed, "override the config seed");

  CLI::App *ta = app.add_subcommand("train-ae", "train the point-cloud "
                                                "auto-encoder");
  ta->add_option("--config", config_path, "training config (JSON)")
      ->check(CLI::ExistingFile);
  ta->add_option("--out", out_dir, "run directory (checkpoint, loss log, "
                                   "resolved config)")
      ->required();
  ta->add_flag("--resume", resume, "continue from the checkpoint in --out");
  ta->add_option("--data", data_dir, "override the config data directory");
  ta->add_option("--seed", seed, "override the config seed");
  ta->add_option("--iterations", iterations, "override the iteration target");
  ta->add_option("--batch", batch, "override the batch size");
  ta->add_option("--loss", loss_name, "override the reconstruction loss")
      ->check(CLI::IsMember({"chamfer", "emd", "sinkhorn"}));

  CLI::App *ts = app.add_subcommand("train-sim", "train the latent-space "
                                                 "simulator");
  ts->add_option("--config", config_path, "training config (JSON)")
      ->check(CLI::ExistingFile);
  ts->add_option("--out", out_dir, "run directory")->required();
  ts->add_flag("--resume", resume, "continue from the checkpoint in --out");
  ts->add_option("--data", data_dir, "override the config data directory");
  ts->add_option("--ae-checkpoint", ckpt_path, "override the config "
                                               "ae_checkpoint");
  ts->add_option("--seed", seed, "override the config seed");
  ts->add_option("--iterations", iterations, "override the iteration target");

  CLI::App *ev = app.add_subcommand("eval-ae", "reconstruction quality of a "
                                               "trained auto-encoder");
  ev->add_option("--ckpt", ckpt_path, "auto-encoder checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  ev->add_option("--data", data_dir, "evaluation dataset directory")->required();
  ev->add_option("--metric", metric, "distance metric")
      ->required()
      ->check(CLI::IsMember({"chamfer", "emd", "auction", "sinkhorn"}));
  ev->add_flag("--baseline", baseline,
               "score matched-moment Gaussian clouds instead of reconstructions");
  ev->add_option("--csv", csv_path, "write per-cloud results to this CSV file");
  ev->add_option("--seed", seed, "noise seed for decoding / baseline sampling");

  CLI::App *ro = app.add_subcommand("rollout", "roll the latent simulator "
                                               "forward and export predictions");
  ro->add_option("--ckpt", ckpt_path, "simulator checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  ro->add_option("--init", init_path, "initial frame (frame_NNNNNN.xyz inside a "
                                      "trajectory directory)")
      ->required()
      ->check(CLI::ExistingFile);
  ro->add_option("--steps", steps, "number of simulator steps");
  ro->add_option("--export", export_dir, "directory for predicted frames and "
                                         "the loss curve")
      ->required();

  CLI::App *di = app.add_subcommand("dist", "distance between two point clouds");
  di->add_option("--a", a_path, "first cloud")->required()->check(CLI::ExistingFile);
  di->add_option("--b", b_path, "second cloud")->required()->check(CLI::ExistingFile);
  di->add_option("--metric", metric, "distance metric")
      ->required()
      ->check(CLI::IsMember({"chamfer", "emd", "auction", "sinkhorn"}));
  di->add_option("--eps", eps, "entropic weight for the sinkhorn metric");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      Json user = config_path.empty() ? Json::object()
                                      : irconv::load_json_file(config_path);
      if (gen->count("--seed")) user["seed"] = seed;
      Json eff = kind == "shapes" ? irconv::resolve_gen_shapes(user)
                                  : irconv::resolve_gen_ljp(user);
      return run_gen_data(kind, eff, out_dir);
    }
    if (*ta) {
      Json user = config_path.empty() ? Json::object()
                                      : irconv::load_json_file(config_path);
      if (ta->count("--data")) user["data"] = data_dir;
      if (ta->count("--seed")) user["seed"] = seed;
      if (ta->count("--iterations")) user["iterations"] = iterations;
      if (ta->count("--batch")) user["batch"] = batch;
      if (ta->count("--loss")) user["loss"] = loss_name;
      Json eff = irconv::resolve_train_ae(user);
      return eff.at("precision") == "single"
                 ? run_train_ae<float>(eff, out_dir, resume)
                 : run_train_ae<double>(eff, out_dir, resume);
    }
    if (*ts) {
      Json user = config_path.empty() ? Json::object()
                                      : irconv::load_json_file(config_path);
      if (ts->count("--data")) user["data"] = data_dir;
      if (ts->count("--ae-checkpoint")) user["ae_checkpoint"] = ckpt_path;
      if (ts->count("--seed")) user["seed"] = seed;
      if (ts->count("--iterations")) user["iterations"] = iterations;
      Json eff = irconv::resolve_train_sim(user);
      return eff.at("precision") == "single"
                 ? run_train_sim<float>(eff, out_dir, resume)
                 : run_train_sim<double>(eff, out_dir, resume);
    }
    if (*ev) {
      const std::string prec = irconv::effective_precision(
          sibling_config(ckpt_path, "config.json")
              .value("precision", "double"));
      return prec == "single"
                 ? run_eval_ae<float>(ckpt_path, data_dir, metric, baseline,
                                      csv_path, seed)
                 : run_eval_ae<double>(ckpt_path, data_dir, metric, baseline,
                                       csv_path, seed);
    }
    if (*ro) {
      const std::string prec = irconv::effective_precision(
          sibling_config(ckpt_path, "config.json")
              .value("precision", "double"));
      return prec == "single"
                 ? run_rollout<float>(ckpt_path, init_path, steps, export_dir)
                 : run_rollout<double>(ckpt_path, init_path, steps, export_dir);
    }
    return run_dist(a_path, b_path, metric, eps);
  } catch (const irconv::numerical_failure &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const irconv::precision_error &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
