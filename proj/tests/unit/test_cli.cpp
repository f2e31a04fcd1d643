// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "hindsight/config.hpp"

using namespace hindsight;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hindsight_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

const char* kDeskConfig =
    "# desk model\n"
    "k = 2\nH = 8\nd_model = 16\nchannels = 4\nN = 1\nheads = 2\nagg_period = 1\ndecoder_layers = 1\n";

}  // namespace

TEST_CASE("config parser accepts every documented key") {
  std::istringstream in(
      "mode = dynamic\nk = 4\nD = 10  # trailing comment\n\nH = 32\nd_model = 64\nencoder = periodic\n"
      "lambda = 100\nbeta = 0.05\nlr = 1e-3\nsteps = 7\nseed = 9\nfraction = 0.125\ndata = /tmp/d\n");
  const RunConfig c = parse_run_config(in);
  CHECK(c.model.mode == GridMode::Dynamic);
  CHECK(c.model.k == 4);
  CHECK(c.model.D == 10);
  CHECK(c.model.H == 32);
  CHECK(c.model.encoder == EncodingVariant::Periodic);
  CHECK(c.model.lambda == 100.0);
  CHECK(c.train.beta == 0.05);
  CHECK(c.train.steps == 7);
  CHECK(c.train.seed == 9);
  CHECK(c.train.fraction == 0.125);
  CHECK(c.data == "/tmp/d");
  CHECK(c.present.count("lr") == 1);
  CHECK(c.present.count("N") == 0);
  CHECK(config_keys().size() >= 20);
}

TEST_CASE("config parser reports line numbers") {
  auto error_of = [](const std::string& text) {
    std::istringstream in(text);
    try {
      parse_run_config(in, "run.cfg");
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(error_of("k = 3\n\nwidth = 4\n").find("run.cfg:3") != std::string::npos);
  CHECK(error_of("k = 3\nwidth = 4\n").find("unknown key 'width'") != std::string::npos);
  CHECK(error_of("k = 3\nk = 4\n").find("run.cfg:2") != std::string::npos);
  CHECK(error_of("# c\nk 3\n").find("run.cfg:2") != std::string::npos);
  CHECK(error_of("H = big\n").find("run.cfg:1") != std::string::npos);
  CHECK(error_of("mode = spiral\n").find("run.cfg:1") != std::string::npos);

  std::istringstream in("k = 3\n");
  const RunConfig c = parse_run_config(in);
  CHECK_NOTHROW(c.require({"k"}, "test"));
  CHECK_THROWS_WITH_AS(c.require({"k", "H", "steps"}, "train"), "train: missing required config key(s): H, steps",
                       ConfigError);
}

TEST_CASE("checkpoint round trip is bit exact") {
  const fs::path dir = scratch_dir("ckpt");
  ModelConfig mc;
  mc.k = 2;
  mc.H = 8;
  mc.d_model = 16;
  mc.channels = 4;
  HindSight<float> a(mc), b(mc);
  a.init(1);
  a.parameters()[0].value[0] = -0.0f;
  a.parameters()[0].value[1] = 1e-42f;
  save_checkpoint(dir / "m.hsgt", snapshot(a.parameters()));
  restore(b.parameters(), load_checkpoint(dir / "m.hsgt"));
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    const auto& x = a.parameters()[i].value;
    const auto& y = b.parameters()[i].value;
    REQUIRE(x.shape() == y.shape());
    CHECK(std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) == 0);
  }
  save_checkpoint(dir / "n.hsgt", snapshot(b.parameters()));
  CHECK(slurp(dir / "m.hsgt") == slurp(dir / "n.hsgt"));
  CHECK(slurp(dir / "m.hsgt").substr(0, 4) == "HSGT");
}

TEST_CASE("checkpoint errors") {
  const fs::path dir = scratch_dir("ckpt_bad");
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.hsgt"), IoError);
  std::ofstream(dir / "bad.hsgt") << "NOPE1234";
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.hsgt"), IoError);
  save_checkpoint(dir / "t.hsgt", {{"w", Tensor<float>(Shape{4, 4}, 1.0f)}});
  const std::string full = slurp(dir / "t.hsgt");
  std::ofstream(dir / "trunc.hsgt", std::ios::binary) << full.substr(0, full.size() - 3);
  CHECK_THROWS_AS(load_checkpoint(dir / "trunc.hsgt"), IoError);

  ParameterStore<float> store;
  store.add("w", {4, 5});
  CHECK_THROWS_WITH_AS(restore(store, load_checkpoint(dir / "t.hsgt")), doctest::Contains("'w'"), ConfigError);
  ParameterStore<float> other;
  other.add("v", {2});
  CHECK_THROWS_WITH_AS(restore(other, load_checkpoint(dir / "t.hsgt")), doctest::Contains("'v'"), ConfigError);
}

TEST_CASE("png round trip") {
  const fs::path dir = scratch_dir("png");
  const ImageBuffer img = synthetic_image(20, 4);
  write_png(dir / "a.png", img);
  const ImageBuffer back = read_png(dir / "a.png");
  CHECK(back.height() == 20);
  for (std::size_t i = 0; i < img.pixels().size(); ++i) CHECK(std::abs(back.pixels()[i] - img.pixels()[i]) <= 0.5f / 255.0f + 1e-6f);
  CHECK_THROWS_AS(read_png(dir / "none.png"), IoError);
}

TEST_CASE("cli usage errors") {
  CHECK(run({}).code == cli::kUsage);
  CHECK(run({"frobnicate"}).code == cli::kUsage);
  CHECK(run({"grid", "--k", "3"}).code == cli::kUsage);
  CHECK(run({"--help"}).code == cli::kOk);
}

TEST_CASE("cli grid writes overlays and manifests") {
  const fs::path dir = scratch_dir("grid");
  write_png(dir / "img.png", synthetic_image(64, 2));
  const std::string img = (dir / "img.png").string();

  Run r = run({"grid", "--image", img, "--mode", "static", "--k", "5", "--out", (dir / "s5").string()});
  CHECK(r.code == 0);
  CHECK(slurp(dir / "s5" / "manifest.txt").find("P 341\n") != std::string::npos);
  for (int l = 1; l <= 5; ++l) CHECK(fs::exists(dir / "s5" / ("level_" + std::to_string(l) + ".png")));

  r = run({"grid", "--image", img, "--mode", "static", "--k", "1", "--out", (dir / "s1").string()});
  CHECK(slurp(dir / "s1" / "manifest.txt").find("P 1\n") != std::string::npos);
  const ImageBuffer overlay = read_png(dir / "s1" / "level_1.png");
  CHECK(overlay.at(0, 0, 0) == 1.0f);
  CHECK(overlay.at(1, 63, 63) == 0.0f);

  r = run({"grid", "--image", img, "--mode", "dynamic", "--k", "6", "--D", "85", "--out", (dir / "d").string()});
  CHECK(r.code == 0);
  CHECK(slurp(dir / "d" / "manifest.txt").find("P 341\n") != std::string::npos);

  r = run({"grid", "--image", img, "--k", "9", "--out", (dir / "bad").string()});
  CHECK(r.code == cli::kUsage);
  CHECK(run({"grid", "--image", (dir / "nope.png").string(), "--k", "2", "--out", (dir / "x").string()}).code ==
        cli::kUsage);
}

TEST_CASE("cli mask counts and determinism") {
  const fs::path dir = scratch_dir("mask");
  write_png(dir / "img.png", synthetic_image(64, 3));
  const std::string img = (dir / "img.png").string();
  auto mask = [&](const std::string& level, const std::string& out) {
    return run({"mask", "--image", img, "--k", "5", "--level", level, "--fraction", "0.25", "--seed", "4", "--out",
                (dir / out).string()});
  };
  CHECK(mask("3", "a").out == "fully_masked=84\n");
  CHECK(mask("3", "b").code == 0);
  CHECK(slurp(dir / "a" / "masked.png") == slurp(dir / "b" / "masked.png"));
  CHECK(slurp(dir / "a" / "manifest.txt") == slurp(dir / "b" / "manifest.txt"));
  CHECK(mask("5", "c").out == "fully_masked=64\n");
  CHECK(mask("6", "d").code == cli::kUsage);
  CHECK(mask("1", "e").code == cli::kUsage);
}

TEST_CASE("cli encode writes one row per patch") {
  const fs::path dir = scratch_dir("encode");
  write_png(dir / "img.png", synthetic_image(64, 5));
  std::ofstream(dir / "run.cfg") << kDeskConfig;
  const RunConfig cfg = load_run_config(dir / "run.cfg");
  HindSight<float> model(cfg.model);
  model.init(3);
  save_checkpoint(dir / "m.hsgt", snapshot(model.parameters()));

  auto encode = [&](const std::string& out) {
    return run({"encode", "--image", (dir / "img.png").string(), "--config", (dir / "run.cfg").string(),
                "--checkpoint", (dir / "m.hsgt").string(), "--out", (dir / out).string()});
  };
  CHECK(encode("a.csv").code == 0);
  CHECK(encode("b.csv").code == 0);
  const std::string a = slurp(dir / "a.csv");
  CHECK(a == slurp(dir / "b.csv"));
  std::istringstream rows(a);
  std::vector<std::string> lines;
  for (std::string l; std::getline(rows, l);) lines.push_back(l);
  REQUIRE(lines.size() == 6);
  for (const auto& l : lines) CHECK(std::count(l.begin(), l.end(), ',') + 1 == 4 + 2 + 16);

  std::ofstream(dir / "wide.cfg") << "k = 2\nH = 8\nd_model = 32\nchannels = 4\nN = 1\nheads = 2\n";
  const Run bad = run({"encode", "--image", (dir / "img.png").string(), "--config", (dir / "wide.cfg").string(),
                       "--checkpoint", (dir / "m.hsgt").string(), "--out", (dir / "c.csv").string()});
  CHECK(bad.code == cli::kDataError);
  CHECK(bad.err.find("parameter '") != std::string::npos);
}

TEST_CASE("cli train continues step numbering on resume") {
  const fs::path dir = scratch_dir("train");
  fs::create_directories(dir / "data");
  write_png(dir / "data" / "a.png", synthetic_image(32, 1));
  std::ofstream(dir / "run.cfg") << kDeskConfig << "steps = 1\nbatch_size = 1\n";
  std::ofstream(dir / "run2.cfg") << kDeskConfig << "steps = 2\nbatch_size = 1\n";
  const std::string data = (dir / "data").string(), out = (dir / "out").string();
  CHECK(run({"train", "--data", data, "--config", (dir / "run.cfg").string(), "--out", out}).code == 0);
  CHECK(fs::exists(dir / "out" / "checkpoint.hsgt"));
  CHECK(run({"train", "--data", data, "--config", (dir / "run2.cfg").string(), "--out", out, "--resume"}).code == 0);
  const std::string metrics = slurp(dir / "out" / "metrics.csv");
  CHECK(metrics.rfind("step,total_loss,recon_loss,div_loss\n1,", 0) == 0);
  CHECK(metrics.find("\n2,") != std::string::npos);
  CHECK(run({"train", "--data", (dir / "missing").string(), "--config", (dir / "run.cfg").string(), "--out", out})
            .code == cli::kDataError);
}
