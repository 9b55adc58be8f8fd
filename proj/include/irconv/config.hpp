#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "irconv/autoencoder.hpp"
#include "irconv/checkpoint.hpp"
#include "irconv/datasets.hpp"
#include "irconv/dynamics.hpp"

namespace irconv {

// Run configuration plumbing shared by the command-line tool and its tests:
// strict JSON schemas (unknown keys rejected, defaults filled in), the
// resolved-config echo written beside every run's outputs, checkpoint
// packing of model + optimizer state, and dataset directory layouts.

using Json = nlohmann::json;

// ---- strict JSON reading ------------------------------------------------------

inline Json load_json_file(const std::string &path) {
  std::ifstream is(path);
  if (!is) throw config_error("config: cannot open '" + path + "'");
  try {
    Json j;
    is >> j;
    return j;
  } catch (const nlohmann::json::exception &e) {
    throw config_error("config: cannot parse '" + path + "': " + e.what());
  }
}

// Tracks which keys of one JSON object were consumed; finish() rejects the
// rest, so misspelled or unsupported keys never pass silently.
class JsonReader {
public:
  explicit JsonReader(const Json &j, std::string path = "")
      : j_(&j), path_(std::move(path)) {
    if (!j_->is_object())
      throw config_error("config: " + label() + " must be a JSON object");
  }

  bool has(const std::string &key) const { return j_->contains(key); }

  double num(const std::string &key, double def) {
    const Json *v = take(key);
    if (!v) return def;
    if (!v->is_number()) throw type_error(key, "a number");
    return v->get<double>();
  }

  std::int64_t integer(const std::string &key, std::int64_t def) {
    const Json *v = take(key);
    if (!v) return def;
    if (!v->is_number_integer()) throw type_error(key, "an integer");
    return v->get<std::int64_t>();
  }

  std::uint64_t u64(const std::string &key, std::uint64_t def) {
    const Json *v = take(key);
    if (!v) return def;
    if (v->is_number_unsigned()) return v->get<std::uint64_t>();
    if (v->is_number_integer() && v->get<std::int64_t>() >= 0)
      return static_cast<std::uint64_t>(v->get<std::int64_t>());
    throw type_error(key, "a non-negative integer");
  }

  bool flag(const std::string &key, bool def) {
    const Json *v = take(key);
    if (!v) return def;
    if (!v->is_boolean()) throw type_error(key, "a boolean");
    return v->get<bool>();
  }

  std::string str(const std::string &key, std::string def) {
    const Json *v = take(key);
    if (!v) return def;
    if (!v->is_string()) throw type_error(key, "a string");
    return v->get<std::string>();
  }

  std::vector<double> num_array(const std::string &key, std::vector<double> def) {
    const Json *v = take(key);
    if (!v) return def;
    if (!v->is_array()) throw type_error(key, "an array of numbers");
    std::vector<double> out;
    for (const auto &e : *v) {
      if (!e.is_number()) throw type_error(key, "an array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  // Choice from a fixed vocabulary.
  std::string pick(const std::string &key, const std::string &def,
                   const std::vector<std::string> &allowed) {
    std::string v = str(key, def);
    for (const auto &a : allowed)
      if (v == a) return v;
    std::string opts;
    for (const auto &a : allowed) opts += (opts.empty() ? "" : "|") + a;
    throw config_error("config: key '" + where(key) + "' must be one of " +
                       opts + ", got '" + v + "'");
  }

  const Json &object(const std::string &key) {
    static const Json empty = Json::object();
    const Json *v = take(key);
    if (!v) return empty;
    if (!v->is_object()) throw type_error(key, "an object");
    return *v;
  }

  void finish() const {
    for (const auto &el : j_->items())
      if (!seen_.count(el.key()))
        throw config_error("config: unknown key '" + where(el.key()) + "'");
  }

  std::string where(const std::string &key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

private:
  std::string label() const { return path_.empty() ? "document" : "'" + path_ + "'"; }
  const Json *take(const std::string &key) {
    seen_.insert(key);
    auto it = j_->find(key);
    return it == j_->end() ? nullptr : &*it;
  }
  config_error type_error(const std::string &key, const std::string &want) const {
    return config_error("config: key '" + where(key) + "' must be " + want);
  }

  const Json *j_;
  std::string path_;
  std::set<std::string> seen_;
};

namespace detail {

inline std::int64_t positive(std::int64_t v, const std::string &key) {
  if (v < 1) throw config_error("config: key '" + key + "' must be >= 1");
  return v;
}

inline double positive_num(double v, const std::string &key) {
  if (!(v > 0)) throw config_error("config: key '" + key + "' must be > 0");
  return v;
}

inline Json resolve_adam(JsonReader &r) {
  JsonReader a(r.object("adam"), "adam");
  Json e = {{"lr", positive_num(a.num("lr", 5e-5), "adam.lr")},
            {"beta1", a.num("beta1", 0.9)},
            {"beta2", a.num("beta2", 0.999)},
            {"eps", positive_num(a.num("eps", 1e-8), "adam.eps")}};
  a.finish();
  return e;
}

} // namespace detail

// The IRC_PRECISION environment variable overrides the config's precision,
// so an archived run can be replayed in the other mode without editing it.
inline std::string effective_precision(const std::string &from_config) {
  const char *env = std::getenv("IRC_PRECISION");
  const bool from_env = env && *env;
  std::string p = from_env ? env : from_config;
  if (p != "single" && p != "double")
    throw config_error(std::string(from_env ? "IRC_PRECISION" : "config: precision") +
                       " must be single|double, got '" + p + "'");
  return p;
}

// ---- command schemas ----------------------------------------------------------
// Each resolver turns a user config into the fully-populated effective config
// (every key present, every value validated); the effective document is what
// gets written beside the run's outputs.

inline Json resolve_gen_shapes(const Json &user) {
  JsonReader r(user);
  Json e;
  e["seed"] = r.u64("seed", 0);
  e["count"] = detail::positive(r.integer("count", 200), "count");
  e["n_points"] = detail::positive(r.integer("n_points", 256), "n_points");
  r.finish();
  return e;
}

inline Json resolve_gen_ljp(const Json &user) {
  JsonReader r(user);
  Json e;
  e["seed"] = r.u64("seed", 0);
  e["trajectories"] = detail::positive(r.integer("trajectories", 30), "trajectories");
  e["n_particles"] = detail::positive(r.integer("n_particles", 64), "n_particles");
  e["extent"] = detail::positive_num(r.num("extent", 6), "extent");
  e["eps_lj"] = detail::positive_num(r.num("eps_lj", 1), "eps_lj");
  e["sigma_lj"] = detail::positive_num(r.num("sigma_lj", 1), "sigma_lj");
  e["cutoff"] = detail::positive_num(r.num("cutoff", 2.5), "cutoff");
  e["dt"] = detail::positive_num(r.num("dt", 0.005), "dt");
  e["steps"] = detail::positive(r.integer("steps", 1000), "steps");
  e["stride"] = detail::positive(r.integer("stride", 10), "stride");
  r.finish();
  return e;
}

inline Json resolve_train_ae(const Json &user) {
  JsonReader r(user);
  Json e;
  e["seed"] = r.u64("seed", 1);
  e["precision"] = effective_precision(r.str("precision", "double"));
  e["data"] = r.str("data", "");
  if (e["data"].get<std::string>().empty())
    throw config_error("config: train-ae requires 'data' (dataset directory)");
  e["iterations"] = detail::positive(r.integer("iterations", 500), "iterations");
  e["batch"] = detail::positive(r.integer("batch", 8), "batch");
  e["loss"] = r.pick("loss", "sinkhorn", {"chamfer", "emd", "sinkhorn"});
  e["eps_entropy"] = detail::positive_num(r.num("eps_entropy", 0.002), "eps_entropy");
  e["center"] = r.flag("center", true);
  e["input_channels"] = r.integer("input_channels", 0); // 0: derive from data
  if (e["input_channels"].get<std::int64_t>() < 0)
    throw config_error("config: key 'input_channels' must be >= 0");
  e["adam"] = detail::resolve_adam(r);
  {
    JsonReader n(r.object("encoder"), "encoder");
    std::vector<double> ratios = n.num_array("pool_ratios", {0.25, 0.5, 1});
    if (ratios.empty())
      throw config_error("config: 'encoder.pool_ratios' must not be empty");
    for (double v : ratios)
      if (!(v > 0) || v > 1)
        throw config_error("config: 'encoder.pool_ratios' entries must lie in "
                           "(0, 1]");
    e["encoder"] =
        Json{{"latent_points",
              detail::positive(n.integer("latent_points", 32), "encoder.latent_points")},
             {"latent_channels", detail::positive(n.integer("latent_channels", 13),
                                                  "encoder.latent_channels")},
             {"pool_ratios", ratios},
             {"k", detail::positive(n.integer("k", 16), "encoder.k")},
             {"hidden", detail::positive(n.integer("hidden", 32), "encoder.hidden")},
             {"aggregation", n.pick("aggregation", "sum", {"sum", "max"})},
             {"density_eliminate", n.flag("density_eliminate", false)},
             {"inner_density", n.flag("inner_density", false)},
             {"norm", n.pick("norm", "layer", {"none", "layer", "instance"})},
             {"renorm", n.flag("renorm", true)},
             {"residual", n.flag("residual", true)}};
    n.finish();
  }
  {
    JsonReader d(r.object("decoder"), "decoder");
    e["decoder"] =
        Json{{"layers", detail::positive(d.integer("layers", 5), "decoder.layers")},
             {"width", detail::positive(d.integer("width", 64), "decoder.width")},
             {"conditioner", d.pick("conditioner", "adain", {"adain", "concat"})}};
    d.finish();
  }
  r.finish();
  return e;
}

inline Json resolve_train_sim(const Json &user) {
  JsonReader r(user);
  Json e;
  e["seed"] = r.u64("seed", 1);
  e["precision"] = effective_precision(r.str("precision", "double"));
  e["data"] = r.str("data", "");
  if (e["data"].get<std::string>().empty())
    throw config_error("config: train-sim requires 'data' (trajectory dataset)");
  e["ae_checkpoint"] = r.str("ae_checkpoint", "");
  if (e["ae_checkpoint"].get<std::string>().empty())
    throw config_error("config: train-sim requires 'ae_checkpoint'");
  e["iterations"] = detail::positive(r.integer("iterations", 200), "iterations");
  e["batch"] = detail::positive(r.integer("batch", 2), "batch");
  e["rollout_steps"] = detail::positive(r.integer("rollout_steps", 50), "rollout_steps");
  e["alpha"] = detail::positive_num(r.num("alpha", 0.95), "alpha");
  e["eps_entropy"] = detail::positive_num(r.num("eps_entropy", 0.002), "eps_entropy");
  e["holdout"] = r.integer("holdout", 0);
  if (e["holdout"].get<std::int64_t>() < 0)
    throw config_error("config: key 'holdout' must be >= 0");
  e["center"] = r.flag("center", true);
  e["adam"] = detail::resolve_adam(r);
  {
    JsonReader n(r.object("in"), "in");
    e["in"] = Json{{"width", detail::positive(n.integer("width", 128), "in.width")},
                   {"k", detail::positive(n.integer("k", 8), "in.k")}};
    n.finish();
  }
  r.finish();
  return e;
}

// ---- typed builders (effective config -> library config structs) --------------

template <class Real> AdamOpts<Real> adam_from_json(const Json &a) {
  AdamOpts<Real> o;
  o.lr = static_cast<Real>(a.at("lr").get<double>());
  o.beta1 = static_cast<Real>(a.at("beta1").get<double>());
  o.beta2 = static_cast<Real>(a.at("beta2").get<double>());
  o.eps = static_cast<Real>(a.at("eps").get<double>());
  return o;
}

template <class Real> EncoderConfig<Real> encoder_from_json(const Json &n) {
  EncoderConfig<Real> cfg;
  const std::int64_t k = n.at("k").get<std::int64_t>();
  const std::int64_t c = n.at("latent_channels").get<std::int64_t>();
  const auto ratios = n.at("pool_ratios").get<std::vector<double>>();
  // One conv block per pooling stage: 32 then 64 channels wide, the last
  // block landing on the latent width.
  cfg.blocks.clear();
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    const std::int64_t w = i + 1 == ratios.size() ? c : (i == 0 ? 32 : 64);
    cfg.blocks.push_back({{w, w}, k, static_cast<Real>(ratios[i])});
  }
  cfg.latent_points = n.at("latent_points").get<std::int64_t>();
  cfg.latent_channels = c;
  cfg.hidden = n.at("hidden").get<std::int64_t>();
  cfg.agg = n.at("aggregation").get<std::string>() == "max" ? Aggregation::max
                                                            : Aggregation::sum;
  cfg.density_eliminate = n.at("density_eliminate").get<bool>();
  cfg.inner_density = n.at("inner_density").get<bool>();
  std::string norm = n.at("norm").get<std::string>();
  cfg.norm = norm == "none" ? BlockNorm::none
                            : (norm == "instance" ? BlockNorm::instance
                                                  : BlockNorm::layer);
  cfg.renorm = n.at("renorm").get<bool>();
  cfg.residual = n.at("residual").get<bool>();
  return cfg;
}

template <class Real> DecoderConfig<Real> decoder_from_json(const Json &d) {
  DecoderConfig<Real> cfg;
  cfg.layers = d.at("layers").get<std::int64_t>();
  cfg.width = d.at("width").get<std::int64_t>();
  cfg.conditioner = d.at("conditioner").get<std::string>() == "concat"
                        ? Conditioner::concat
                        : Conditioner::adain;
  return cfg;
}

inline ReconLoss recon_loss_from_name(const std::string &name) {
  if (name == "chamfer") return ReconLoss::chamfer;
  if (name == "emd") return ReconLoss::emd_auction;
  if (name == "sinkhorn") return ReconLoss::sinkhorn;
  throw config_error("config: unknown loss '" + name + "'");
}

template <class Real> AeTrainConfig<Real> ae_train_from_json(const Json &e) {
  AeTrainConfig<Real> cfg;
  cfg.iterations = e.at("iterations").get<std::int64_t>();
  cfg.batch = e.at("batch").get<std::int64_t>();
  cfg.loss = recon_loss_from_name(e.at("loss").get<std::string>());
  cfg.adam = adam_from_json<Real>(e.at("adam"));
  cfg.sinkhorn = training_sinkhorn_options<Real>();
  cfg.sinkhorn.eps = static_cast<Real>(e.at("eps_entropy").get<double>());
  cfg.seed = e.at("seed").get<std::uint64_t>();
  return cfg;
}

template <class Real> SimTrainConfig<Real> sim_train_from_json(const Json &e) {
  SimTrainConfig<Real> cfg;
  cfg.iterations = e.at("iterations").get<std::int64_t>();
  cfg.batch = e.at("batch").get<std::int64_t>();
  cfg.rollout_steps = e.at("rollout_steps").get<std::int64_t>();
  cfg.alpha = static_cast<Real>(e.at("alpha").get<double>());
  cfg.adam = adam_from_json<Real>(e.at("adam"));
  cfg.sinkhorn = training_sinkhorn_options<Real>();
  cfg.sinkhorn.eps = static_cast<Real>(e.at("eps_entropy").get<double>());
  cfg.seed = e.at("seed").get<std::uint64_t>();
  return cfg;
}

inline LJConfig lj_from_json(const Json &e, std::uint64_t seed) {
  LJConfig cfg;
  cfg.n_particles = e.at("n_particles").get<std::int64_t>();
  cfg.extent = e.at("extent").get<double>();
  cfg.eps_lj = e.at("eps_lj").get<double>();
  cfg.sigma_lj = e.at("sigma_lj").get<double>();
  cfg.cutoff = e.at("cutoff").get<double>();
  cfg.dt = e.at("dt").get<double>();
  cfg.steps = e.at("steps").get<std::int64_t>();
  cfg.stride = e.at("stride").get<std::int64_t>();
  cfg.seed = seed;
  return cfg;
}

// ---- checkpoint packing --------------------------------------------------------
// A training checkpoint is a flat tensor container: "meta" = [adam step,
// iteration], then one tensor per name under the groups param/, state/,
// adam.m/, adam.v/.  Values are stored as f64, so single-precision runs
// round-trip bit-exactly.

template <class Real>
void pack_group(NamedTensors &out, const std::string &group,
                const std::vector<std::string> &names,
                const std::vector<Tensor<Real>> &tensors) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    Tensor<double> d(tensors[i].shape);
    for (std::int64_t j = 0; j < tensors[i].size(); ++j)
      d[j] = static_cast<double>(tensors[i][j]);
    out.emplace_back(group + "/" + names[i], std::move(d));
  }
}

// Restore one group; every expected tensor must be present with the exact
// shape, and the group must hold nothing else.
template <class Real>
void unpack_group(const NamedTensors &ckpt, const std::string &group,
                  const std::vector<std::string> &names,
                  std::vector<Tensor<Real>> &tensors) {
  const std::string prefix = group + "/";
  std::map<std::string, const Tensor<double> *> found;
  for (const auto &[name, t] : ckpt)
    if (name.rfind(prefix, 0) == 0) found[name.substr(prefix.size())] = &t;
  if (found.size() != names.size())
    throw config_error("checkpoint: group '" + group + "' holds " +
                       std::to_string(found.size()) + " tensors, model expects " +
                       std::to_string(names.size()));
  for (std::size_t i = 0; i < names.size(); ++i) {
    auto it = found.find(names[i]);
    if (it == found.end())
      throw config_error("checkpoint: missing tensor '" + prefix + names[i] + "'");
    const Tensor<double> &src = *it->second;
    if (src.shape != tensors[i].shape)
      throw config_error("checkpoint: tensor '" + prefix + names[i] +
                         "' has shape " + shape_str(src.shape) +
                         ", model expects " + shape_str(tensors[i].shape));
    for (std::int64_t j = 0; j < src.size(); ++j)
      tensors[i][j] = static_cast<Real>(src[j]);
  }
}

template <class Real>
NamedTensors pack_training_state(const ParamSet<Real> &params,
                                 const StateSet<Real> &states,
                                 const Adam<Real> &adam, std::int64_t iteration) {
  NamedTensors out;
  Tensor<double> meta({2});
  meta[0] = static_cast<double>(adam.step);
  meta[1] = static_cast<double>(iteration);
  out.emplace_back("meta", std::move(meta));
  pack_group(out, "param", params.names, params.values);
  pack_group(out, "state", states.names, states.values);
  pack_group(out, "adam.m", params.names, adam.m);
  pack_group(out, "adam.v", params.names, adam.v);
  return out;
}

// Returns the stored iteration count.
template <class Real>
std::int64_t unpack_training_state(const NamedTensors &ckpt, ParamSet<Real> &params,
                                   StateSet<Real> &states, Adam<Real> &adam) {
  const Tensor<double> *meta = nullptr;
  for (const auto &[name, t] : ckpt)
    if (name == "meta") meta = &t;
  if (!meta || meta->size() != 2)
    throw config_error("checkpoint: missing or malformed 'meta' tensor");
  unpack_group(ckpt, "param", params.names, params.values);
  unpack_group(ckpt, "state", states.names, states.values);
  unpack_group(ckpt, "adam.m", params.names, adam.m);
  unpack_group(ckpt, "adam.v", params.names, adam.v);
  adam.step = static_cast<std::int64_t>((*meta)[0]);
  return static_cast<std::int64_t>((*meta)[1]);
}

// ---- dataset directory layouts --------------------------------------------------

namespace detail {

inline std::string index_name(const std::string &stem, std::size_t i,
                              const std::string &ext) {
  std::ostringstream os;
  os << stem << std::setfill('0') << std::setw(4) << i << ext;
  return os.str();
}

} // namespace detail

// Shapes corpus: shape_0000.xyz ... plus a manifest echoing the generator
// config under "kind": "shapes".
template <class Real>
void save_shape_corpus(const std::vector<PointCloud<Real>> &clouds,
                       const Json &gen_config, const std::string &dir) {
  if (clouds.empty()) throw config_error("shape corpus: nothing to save");
  std::filesystem::create_directories(dir);
  Json manifest = gen_config;
  manifest["kind"] = "shapes";
  std::ofstream os(std::filesystem::path(dir) / "manifest.json");
  if (!os) throw config_error("shape corpus: cannot write manifest in '" + dir + "'");
  os << manifest.dump(2) << "\n";
  for (std::size_t i = 0; i < clouds.size(); ++i)
    save_cloud_xyz(clouds[i], (std::filesystem::path(dir) /
                               detail::index_name("shape_", i, ".xyz")).string());
}

template <class Real>
std::vector<PointCloud<Real>> load_shape_corpus(const std::string &dir) {
  Json m = load_json_file((std::filesystem::path(dir) / "manifest.json").string());
  JsonReader r(m);
  if (r.str("kind", "") != "shapes")
    throw config_error("dataset at '" + dir + "' is not a shapes corpus");
  const std::int64_t count = r.integer("count", 0);
  if (count < 1) throw config_error("shape corpus: bad count in manifest");
  r.integer("n_points", 0);
  r.u64("seed", 0);
  r.finish();
  std::vector<PointCloud<Real>> out;
  out.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i)
    out.push_back(load_cloud<Real>(
        (std::filesystem::path(dir) /
         detail::index_name("shape_", static_cast<std::size_t>(i), ".xyz")).string()));
  return out;
}

// LJP corpus: traj_0000/ ... trajectory directories plus a manifest echoing
// the generator config under "kind": "ljp".
template <class Real>
void save_ljp_corpus(const std::vector<Trajectory<Real>> &trajs,
                     const Json &gen_config, const std::string &dir) {
  if (trajs.empty()) throw config_error("ljp corpus: nothing to save");
  std::filesystem::create_directories(dir);
  Json manifest = gen_config;
  manifest["kind"] = "ljp";
  std::ofstream os(std::filesystem::path(dir) / "manifest.json");
  if (!os) throw config_error("ljp corpus: cannot write manifest in '" + dir + "'");
  os << manifest.dump(2) << "\n";
  for (std::size_t i = 0; i < trajs.size(); ++i)
    save_trajectory(trajs[i], (std::filesystem::path(dir) /
                               detail::index_name("traj_", i, "")).string());
}

template <class Real>
std::vector<Trajectory<Real>> load_ljp_corpus(const std::string &dir) {
  Json m = load_json_file((std::filesystem::path(dir) / "manifest.json").string());
  JsonReader r(m);
  if (r.str("kind", "") != "ljp")
    throw config_error("dataset at '" + dir + "' is not an ljp corpus");
  const std::int64_t count = r.integer("trajectories", 0);
  if (count < 1) throw config_error("ljp corpus: bad trajectory count in manifest");
  for (const char *key : {"n_particles", "steps", "stride"}) r.integer(key, 0);
  for (const char *key : {"extent", "eps_lj", "sigma_lj", "cutoff", "dt"})
    r.num(key, 0);
  r.u64("seed", 0);
  r.finish();
  std::vector<Trajectory<Real>> out;
  out.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i)
    out.push_back(load_trajectory<Real>(
        (std::filesystem::path(dir) /
         detail::index_name("traj_", static_cast<std::size_t>(i), "")).string()));
  return out;
}

// Shift every frame of a trajectory so the first frame's position centroid
// sits at the origin (the default preprocessing before encoding).
template <class Real> void center_frames(std::vector<PointCloud<Real>> &frames) {
  if (frames.empty()) return;
  const PointCloud<Real> &first = frames.front();
  Real c[3] = {0, 0, 0};
  for (std::int64_t i = 0; i < first.n(); ++i)
    for (int a = 0; a < 3; ++a) c[a] += first.positions[i * 3 + a];
  for (int a = 0; a < 3; ++a) c[a] /= static_cast<Real>(first.n());
  for (auto &f : frames)
    for (std::int64_t i = 0; i < f.n(); ++i)
      for (int a = 0; a < 3; ++a) f.positions[i * 3 + a] -= c[a];
}

// ---- run output helpers --------------------------------------------------------

inline void write_json_file(const Json &j, const std::string &path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw config_error("cannot write '" + path + "'");
  os << j.dump(2) << "\n";
}

// Loss log CSV: one "iteration,loss" row per training iteration.  Truncated
// on fresh runs; appended to when resuming, so a resumed run's log is
// byte-identical to an uninterrupted one.
template <class Real>
void write_loss_csv(const std::string &path,
                    const std::vector<TrainRecord<Real>> &log, bool append) {
  const bool header = !append || !std::filesystem::exists(path);
  std::ofstream os(path, append ? std::ios::app : std::ios::trunc);
  if (!os) throw config_error("cannot write '" + path + "'");
  os << std::setprecision(17);
  if (header) os << "iteration,loss\n";
  for (const auto &r : log)
    os << r.iteration << "," << static_cast<double>(r.loss) << "\n";
}

} // namespace irconv
