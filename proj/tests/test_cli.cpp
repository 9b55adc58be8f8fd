// Command-line driver: subprocess smoke tests for every subcommand, the
// exit-code contract (0 success, 2 configuration, 3 numerical), resolved
// config echo, and byte-identical reruns and resumes across output paths.

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

// Scoped scratch directory under the system temp path.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string &tag)
      : path(fs::temp_directory_path() / ("irconv_cli_" + tag)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string file(const std::string &name) const {
    return (path / name).string();
  }
};

struct RunResult {
  int code = -1;
  std::string out; // stdout and stderr, interleaved
};

// Runs the installed binary through the shell; `env` is prepended verbatim
// (e.g. "IRC_PRECISION=single").
RunResult run_cli(const std::string &args, const std::string &env = "") {
  std::string cmd;
  if (!env.empty()) cmd += env + " ";
  cmd += IRC_BIN;
  cmd += " " + args + " 2>&1";
  std::FILE *pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  RunResult r;
  char buf[4096];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text(const std::string &path, const std::string &text) {
  std::ofstream os(path, std::ios::trunc);
  os << text;
}

bool contains(const std::string &hay, const std::string &needle) {
  return hay.find(needle) != std::string::npos;
}

std::size_t count_lines(const std::string &text) {
  std::size_t n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

// One shared corpus plus trained models, built on first use.  The builds
// double as the subcommand smoke tests; later cases compare against these
// artifacts instead of retraining.
struct CliFix {
  TempDir dir{"fix"};
  std::string shapes_dir, ljp_dir;
  std::string ae_cfg, run_ae;       // shape autoencoder
  std::string ljp_ae_cfg, run_ljp_ae; // particle autoencoder feeding the simulator
  std::string sim_cfg, run_sim;
  std::string ae_out, sim_out; // captured training stdout

  CliFix() {
    shapes_dir = dir.file("shapes");
    ljp_dir = dir.file("ljp");
    run_ae = dir.file("run_ae");
    run_ljp_ae = dir.file("run_ljp_ae");
    run_sim = dir.file("run_sim");

    Json gs;
    gs["count"] = 10;
    gs["n_points"] = 64;
    gs["seed"] = 3;
    write_text(dir.file("gen_shapes.json"), gs.dump());
    auto r = run_cli("gen-data --kind shapes --config " +
                     dir.file("gen_shapes.json") + " --out " + shapes_dir);
    REQUIRE(r.code == 0);

    Json gl;
    gl["trajectories"] = 2;
    gl["n_particles"] = 12;
    gl["extent"] = 4.0;
    gl["steps"] = 520; // 53 stored frames per trajectory at stride 10
    gl["stride"] = 10;
    gl["seed"] = 11;
    write_text(dir.file("gen_ljp.json"), gl.dump());
    r = run_cli("gen-data --kind ljp --config " + dir.file("gen_ljp.json") +
                " --out " + ljp_dir);
    REQUIRE(r.code == 0);

    Json ae;
    ae["data"] = shapes_dir;
    ae["iterations"] = 4;
    ae["batch"] = 4;
    ae["seed"] = 5;
    ae["encoder"]["latent_points"] = 8;
    ae["encoder"]["latent_channels"] = 6;
    ae["encoder"]["k"] = 8;
    ae["encoder"]["hidden"] = 16;
    ae["decoder"]["layers"] = 2;
    ae["decoder"]["width"] = 16;
    ae_cfg = dir.file("ae.json");
    write_text(ae_cfg, ae.dump());
    r = run_cli("train-ae --config " + ae_cfg + " --out " + run_ae);
    REQUIRE(r.code == 0);
    ae_out = r.out;

    Json lae;
    lae["data"] = ljp_dir;
    lae["iterations"] = 3;
    lae["batch"] = 2;
    lae["seed"] = 7;
    lae["encoder"]["latent_points"] = 6;
    lae["encoder"]["latent_channels"] = 5;
    lae["encoder"]["pool_ratios"] = Json::array({0.5, 1.0});
    lae["encoder"]["k"] = 5;
    lae["encoder"]["hidden"] = 12;
    lae["decoder"]["layers"] = 2;
    lae["decoder"]["width"] = 12;
    ljp_ae_cfg = dir.file("ae_ljp.json");
    write_text(ljp_ae_cfg, lae.dump());
    r = run_cli("train-ae --config " + ljp_ae_cfg + " --out " + run_ljp_ae);
    REQUIRE(r.code == 0);

    Json sim; // rollout_steps and alpha left to their defaults on purpose
    sim["data"] = ljp_dir;
    sim["ae_checkpoint"] = run_ljp_ae + "/checkpoint.irc";
    sim["iterations"] = 2;
    sim["batch"] = 1;
    sim["holdout"] = 1;
    sim["seed"] = 9;
    sim["in"]["width"] = 8;
    sim["in"]["k"] = 3;
    sim_cfg = dir.file("sim.json");
    write_text(sim_cfg, sim.dump());
    r = run_cli("train-sim --config " + sim_cfg + " --out " + run_sim);
    REQUIRE(r.code == 0);
    sim_out = r.out;
  }
};

const CliFix &fix() {
  static CliFix f;
  return f;
}

} // namespace

TEST_CASE("gen-data writes corpora and regenerates them byte-identically",
          "[cli]") {
  const CliFix &f = fix();
  REQUIRE(fs::exists(f.shapes_dir + "/manifest.json"));
  std::size_t shapes = 0;
  for (auto &e : fs::directory_iterator(f.shapes_dir))
    shapes += e.path().extension() == ".xyz";
  REQUIRE(shapes == 10);
  const Json man = Json::parse(slurp(f.shapes_dir + "/manifest.json"));
  REQUIRE(man.at("kind") == "shapes");
  REQUIRE(man.at("count") == 10);

  REQUIRE(fs::exists(f.ljp_dir + "/manifest.json"));
  REQUIRE(fs::exists(f.ljp_dir + "/traj_0001/frame_000052.xyz"));
  REQUIRE_FALSE(fs::exists(f.ljp_dir + "/traj_0001/frame_000053.xyz"));

  // Same config into a differently named directory: identical bytes.
  TempDir re("gen_rerun");
  const std::string out2 = re.file("shapes_regenerated_much_longer_name");
  auto r = run_cli("gen-data --kind shapes --config " +
                   std::string(fix().dir.file("gen_shapes.json")) + " --out " +
                   out2);
  REQUIRE(r.code == 0);
  REQUIRE(slurp(out2 + "/shape_0003.xyz") ==
          slurp(f.shapes_dir + "/shape_0003.xyz"));
  REQUIRE(slurp(out2 + "/shape_0009.xyz") ==
          slurp(f.shapes_dir + "/shape_0009.xyz"));
}

TEST_CASE("dist reproduces the collapsed-pair reference values", "[cli]") {
  TempDir d("dist");
  write_text(d.file("a.xyz"), "0 0 0\n0 0 0\n0 0 0\n1 0 0\n");
  write_text(d.file("b.xyz"), "0 0 0\n1 0 0\n1 0 0\n1 0 0\n");
  const std::string pair = " --a " + d.file("a.xyz") + " --b " + d.file("b.xyz");

  auto r = run_cli("dist" + pair + " --metric chamfer");
  REQUIRE(r.code == 0);
  REQUIRE(std::stod(r.out) == 0.0);

  r = run_cli("dist" + pair + " --metric emd");
  REQUIRE(r.code == 0);
  REQUIRE(std::stod(r.out) == 0.5);

  r = run_cli("dist" + pair + " --metric sinkhorn");
  REQUIRE(r.code == 0);
  REQUIRE(std::stod(r.out) == Catch::Approx(0.5).margin(1e-4));

  r = run_cli("dist" + pair + " --metric auction");
  REQUIRE(r.code == 0);
  REQUIRE(std::stod(r.out) == Catch::Approx(0.5).epsilon(0.02));
}

TEST_CASE("train-ae writes checkpoint, loss log, and resolved config", "[cli]") {
  const CliFix &f = fix();
  REQUIRE(contains(f.ae_out, "latent space: M=8, C=6 -> 72 dimensions"));
  REQUIRE(fs::exists(f.run_ae + "/checkpoint.irc"));

  const std::string losses = slurp(f.run_ae + "/loss.csv");
  REQUIRE(losses.rfind("iteration,loss\n", 0) == 0);
  REQUIRE(count_lines(losses) == 5); // header + one row per iteration
  REQUIRE(contains(losses, "\n0,"));
  REQUIRE(contains(losses, "\n3,"));

  const Json cfg = Json::parse(slurp(f.run_ae + "/config.json"));
  REQUIRE(cfg.at("iterations") == 4);
  REQUIRE(cfg.at("loss") == "sinkhorn");
  REQUIRE(cfg.at("eps_entropy") == 0.002);
  REQUIRE(cfg.at("precision") == "double");
  REQUIRE(cfg.at("encoder").at("latent_points") == 8);
  REQUIRE(cfg.at("input_channels") >= 1); // derived from data, echoed back
}

TEST_CASE("train-ae reruns are byte-identical across output paths", "[cli]") {
  const CliFix &f = fix();
  TempDir d("ae_rerun");
  const std::string out2 = d.file("run_ae_with_a_much_longer_name");
  auto r = run_cli("train-ae --config " + f.ae_cfg + " --out " + out2);
  REQUIRE(r.code == 0);
  REQUIRE(slurp(out2 + "/checkpoint.irc") == slurp(f.run_ae + "/checkpoint.irc"));
  REQUIRE(slurp(out2 + "/loss.csv") == slurp(f.run_ae + "/loss.csv"));
}

TEST_CASE("train-ae resume continues bitwise from the checkpoint", "[cli]") {
  const CliFix &f = fix();
  TempDir d("ae_resume");
  const std::string out = d.file("part");
  auto r = run_cli("train-ae --config " + f.ae_cfg + " --out " + out +
                   " --iterations 2");
  REQUIRE(r.code == 0);
  r = run_cli("train-ae --config " + f.ae_cfg + " --out " + out +
              " --iterations 4 --resume");
  REQUIRE(r.code == 0);
  REQUIRE(contains(r.out, "iterations 2..4"));
  REQUIRE(slurp(out + "/checkpoint.irc") == slurp(f.run_ae + "/checkpoint.irc"));
  REQUIRE(slurp(out + "/loss.csv") == slurp(f.run_ae + "/loss.csv"));
  // The flag override is echoed into the resolved config.
  REQUIRE(Json::parse(slurp(out + "/config.json")).at("iterations") == 4);

  // Resuming without a checkpoint is a configuration error.
  r = run_cli("train-ae --config " + f.ae_cfg + " --out " +
              d.file("missing") + " --resume");
  REQUIRE(r.code == 2);
}

TEST_CASE("train-sim echoes rollout defaults and stores both models", "[cli]") {
  const CliFix &f = fix();
  REQUIRE(fs::exists(f.run_sim + "/checkpoint.irc"));
  REQUIRE(count_lines(slurp(f.run_sim + "/loss.csv")) == 3);

  const Json cfg = Json::parse(slurp(f.run_sim + "/config.json"));
  REQUIRE(cfg.at("rollout_steps") == 50); // defaults echoed, not dropped
  REQUIRE(cfg.at("alpha") == 0.95);
  REQUIRE(cfg.at("holdout") == 1);
  REQUIRE(cfg.at("in").at("width") == 8);

  // The frozen autoencoder travels with the run, so rollout needs no extras.
  const Json ae = Json::parse(slurp(f.run_sim + "/ae_config.json"));
  REQUIRE(ae.at("encoder").at("latent_points") == 6);
}

TEST_CASE("rollout exports frames and a loss curve, reproducibly", "[cli]") {
  const CliFix &f = fix();
  TempDir d("roll");
  const std::string init = f.ljp_dir + "/traj_0001/frame_000000.xyz";
  const std::string args = "rollout --ckpt " + f.run_sim +
                           "/checkpoint.irc --init " + init + " --steps 3";

  auto r = run_cli(args + " --export " + d.file("out"));
  REQUIRE(r.code == 0);
  REQUIRE(contains(r.out, "completed 3 of 3 steps from frame 0"));
  for (int s = 0; s <= 3; ++s)
    REQUIRE(fs::exists(d.file("out") + "/pred_00000" + std::to_string(s) +
                       ".xyz"));
  REQUIRE_FALSE(fs::exists(d.file("out") + "/pred_000004.xyz"));
  const std::string curve = slurp(d.file("out") + "/rollout.csv");
  REQUIRE(curve.rfind("step,loss\n", 0) == 0);
  REQUIRE(count_lines(curve) == 4);

  r = run_cli(args + " --export " + d.file("out_second_much_longer"));
  REQUIRE(r.code == 0);
  REQUIRE(slurp(d.file("out_second_much_longer") + "/rollout.csv") == curve);
  REQUIRE(slurp(d.file("out_second_much_longer") + "/pred_000003.xyz") ==
          slurp(d.file("out") + "/pred_000003.xyz"));
}

TEST_CASE("rollout with zero steps emits exactly the initial frame", "[cli]") {
  const CliFix &f = fix();
  TempDir d("roll0");
  auto r = run_cli("rollout --ckpt " + f.run_sim + "/checkpoint.irc --init " +
                   f.ljp_dir + "/traj_0000/frame_000010.xyz --steps 0 --export " +
                   d.file("out"));
  REQUIRE(r.code == 0);
  REQUIRE(contains(r.out, "completed 0 of 0 steps from frame 10"));
  REQUIRE(fs::exists(d.file("out") + "/pred_000000.xyz"));
  REQUIRE_FALSE(fs::exists(d.file("out") + "/pred_000001.xyz"));
  REQUIRE(slurp(d.file("out") + "/rollout.csv") == "step,loss\n");
}

TEST_CASE("rollout rejects windows that overrun the trajectory", "[cli]") {
  const CliFix &f = fix();
  TempDir d("rollbad");
  // 53 frames per trajectory: frame 50 + 10 steps runs two past the end.
  auto r = run_cli("rollout --ckpt " + f.run_sim + "/checkpoint.irc --init " +
                   f.ljp_dir + "/traj_0000/frame_000050.xyz --steps 10 --export " +
                   d.file("out"));
  REQUIRE(r.code == 2);
  REQUIRE(contains(r.out, "error:"));

  // An initial frame outside any trajectory directory cannot be windowed.
  write_text(d.file("frame_000000.xyz"), "0 0 0\n1 0 0\n0 1 0\n0 0 1\n");
  r = run_cli("rollout --ckpt " + f.run_sim + "/checkpoint.irc --init " +
              d.file("frame_000000.xyz") + " --steps 1 --export " +
              d.file("out2"));
  REQUIRE(r.code == 2);
}

TEST_CASE("eval-ae reports per-cloud metrics, a mean, and a CSV", "[cli]") {
  const CliFix &f = fix();
  TempDir d("eval");
  const std::string base = "eval-ae --ckpt " + f.run_ae +
                           "/checkpoint.irc --data " + f.shapes_dir;

  auto r = run_cli(base + " --metric chamfer --csv " + d.file("eval.csv"));
  REQUIRE(r.code == 0);
  REQUIRE(contains(r.out, "cloud 0: raw "));
  REQUIRE(contains(r.out, "cloud 9: raw "));
  REQUIRE(contains(r.out, "eval-ae: chamfer mean raw "));
  REQUIRE(contains(r.out, "over 10 clouds"));
  const std::string csv = slurp(d.file("eval.csv"));
  REQUIRE(csv.rfind("index,raw,normalized\n", 0) == 0);
  REQUIRE(count_lines(csv) == 11);

  r = run_cli(base + " --metric chamfer --csv " + d.file("eval2.csv"));
  REQUIRE(r.code == 0);
  REQUIRE(slurp(d.file("eval2.csv")) == csv);

  r = run_cli(base + " --metric emd --baseline");
  REQUIRE(r.code == 0);
  REQUIRE(contains(r.out, "eval-ae: emd baseline mean raw "));
}

TEST_CASE("unknown or missing configuration keys exit with code 2", "[cli]") {
  const CliFix &f = fix();
  TempDir d("cfg");

  Json bad = Json::parse(slurp(f.ae_cfg));
  bad["frobnicate"] = 1;
  write_text(d.file("unknown.json"), bad.dump());
  auto r = run_cli("train-ae --config " + d.file("unknown.json") + " --out " +
                   d.file("o1"));
  REQUIRE(r.code == 2);
  REQUIRE(contains(r.out, "unknown key 'frobnicate'"));

  bad = Json::parse(slurp(f.ae_cfg));
  bad["encoder"]["neighbours"] = 4;
  write_text(d.file("nested.json"), bad.dump());
  r = run_cli("train-ae --config " + d.file("nested.json") + " --out " +
              d.file("o2"));
  REQUIRE(r.code == 2);
  REQUIRE(contains(r.out, "encoder.neighbours"));

  bad = Json::parse(slurp(f.ae_cfg));
  bad.erase("data");
  write_text(d.file("nodata.json"), bad.dump());
  r = run_cli("train-ae --config " + d.file("nodata.json") + " --out " +
              d.file("o3"));
  REQUIRE(r.code == 2);

  r = run_cli("train-ae --config " + f.ae_cfg + " --out " + d.file("o4") +
              " --loss wasserstein");
  REQUIRE(r.code == 2);

  r = run_cli("gen-data --kind meshes --out " + d.file("o5"));
  REQUIRE(r.code == 2);

  r = run_cli("");
  REQUIRE(r.code == 2);
  r = run_cli("--help");
  REQUIRE(r.code == 0);
}

TEST_CASE("IRC_PRECISION overrides the configured precision", "[cli]") {
  const CliFix &f = fix();
  TempDir d("prec");

  // Single precision cannot honour the default eps_entropy: documented error.
  auto r = run_cli("train-ae --config " + f.ae_cfg + " --out " + d.file("o1") +
                   " --iterations 1",
                   "IRC_PRECISION=single");
  REQUIRE(r.code == 3);
  REQUIRE(contains(r.out, "single-precision floor"));

  // The environment wins in the other direction too.
  Json cfg = Json::parse(slurp(f.ae_cfg));
  cfg["precision"] = "single";
  cfg["iterations"] = 1;
  write_text(d.file("single.json"), cfg.dump());
  r = run_cli("train-ae --config " + d.file("single.json") + " --out " +
              d.file("o2"),
              "IRC_PRECISION=double");
  REQUIRE(r.code == 0);
  REQUIRE(Json::parse(slurp(d.file("o2") + "/config.json")).at("precision") ==
          "double");

  r = run_cli("train-ae --config " + f.ae_cfg + " --out " + d.file("o3"),
              "IRC_PRECISION=half");
  REQUIRE(r.code == 2);
  REQUIRE(contains(r.out, "IRC_PRECISION"));
}

TEST_CASE("non-finite training losses abort with exit code 3", "[cli]") {
  const CliFix &f = fix();
  TempDir d("nan");
  Json cfg = Json::parse(slurp(f.ae_cfg));
  cfg["loss"] = "chamfer";
  cfg["iterations"] = 6;
  cfg["adam"]["lr"] = 1e308; // drives the weights non-finite within a step
  write_text(d.file("blowup.json"), cfg.dump());
  auto r = run_cli("train-ae --config " + d.file("blowup.json") + " --out " +
                   d.file("o"));
  REQUIRE(r.code == 3);
  REQUIRE(contains(r.out, "error:"));
}
