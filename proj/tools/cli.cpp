// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>

#include "hindsight/config.hpp"
#include "hindsight/gradcheck_suite.hpp"
#include "hindsight/pretext.hpp"

namespace hindsight::cli {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void draw_rect(ImageBuffer& img, const PixelRect& r) {
  static constexpr float kColour[3] = {1.0f, 0.0f, 0.0f};
  if (r.width() == 0 || r.height() == 0) return;
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t x = r.x0; x < r.x1; ++x) {
      img.at(c, r.y0, x) = kColour[c];
      img.at(c, r.y1 - 1, x) = kColour[c];
    }
    for (std::size_t y = r.y0; y < r.y1; ++y) {
      img.at(c, y, r.x0) = kColour[c];
      img.at(c, y, r.x1 - 1) = kColour[c];
    }
  }
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

int cmd_grid(const std::string& image_path, const std::string& mode, int k, int D, std::size_t H,
             const std::string& out_dir, std::ostream& out) {
  GridConfig gc{parse_grid_mode(mode), k, D, H};
  gc.validate();
  const ImageBuffer image = read_png(image_path);
  const PatchSet ps = generate_patches(image, gc);
  fs::create_directories(out_dir);
  const std::vector<std::size_t> counts = ps.level_counts();
  for (std::size_t l = 0; l < counts.size(); ++l) {
    ImageBuffer overlay = image;
    for (std::size_t p = 0; p < ps.size(); ++p) {
      if (ps.meta[p].level == static_cast<int>(l + 1)) draw_rect(overlay, ps.regions[p]);
    }
    write_png(fs::path(out_dir) / ("level_" + std::to_string(l + 1) + ".png"), overlay);
  }
  std::ofstream manifest = open_out(fs::path(out_dir) / "manifest.txt");
  manifest << "mode " << mode << "\nk " << k << "\n";
  if (gc.mode == GridMode::Dynamic) {
    manifest << "D " << D << "\ndivisions " << ps.divisions << "\nexhausted " << (ps.exhausted ? 1 : 0) << "\n";
  }
  manifest << "P " << ps.size() << "\n";
  for (std::size_t l = 0; l < counts.size(); ++l) manifest << "level " << l + 1 << " " << counts[l] << "\n";
  out << "P=" << ps.size() << (ps.exhausted ? " (divisible leaves exhausted)" : "") << "\n";
  return kOk;
}

int cmd_mask(const std::string& image_path, int k, int level, double fraction, std::uint64_t seed,
             const std::string& out_dir, std::ostream& out) {
  if (k < 2) throw ConfigError("--k must be >= 2");
  if (level < 2 || level > k) throw ConfigError("--level must lie in [2, k]");
  const ImageBuffer image = read_png(image_path);
  const StaticGrid grid(image.height(), image.width(), k);
  Rng rng(seed);
  const MaskSpec spec = make_mask(grid, level, fraction, rng);
  fs::create_directories(out_dir);
  write_png(fs::path(out_dir) / "masked.png", apply_mask(image, spec));
  std::ofstream manifest = open_out(fs::path(out_dir) / "manifest.txt");
  manifest << "k " << k << "\nlevel " << level << "\nfraction " << fmt(fraction) << "\nseed " << seed << "\n";
  manifest << "masked_regions " << spec.masked_regions.size() << "\n";
  for (const PixelRect& r : spec.masked_regions) {
    manifest << "rect " << r.x0 << " " << r.y0 << " " << r.x1 << " " << r.y1 << "\n";
  }
  manifest << "fully_masked " << spec.fully_masked.size() << "\n";
  out << "fully_masked=" << spec.fully_masked.size() << "\n";
  return kOk;
}

int cmd_encode(const std::string& image_path, const std::string& config_path, std::string checkpoint,
               const std::string& out_path) {
  const RunConfig cfg = load_run_config(config_path);
  cfg.require({"k", "H", "d_model"}, "encode");
  if (checkpoint.empty()) checkpoint = cfg.checkpoint;
  if (checkpoint.empty()) throw ConfigError("encode: no checkpoint given (--checkpoint or 'checkpoint' key)");
  HindSight<float> model(cfg.model);
  try {
    restore(model.parameters(), load_checkpoint(checkpoint));
  } catch (const ConfigError& e) {
    throw IoError(e.what());  // checkpoint/config disagreement is a data error
  }
  const ImageBuffer image = read_png(image_path);
  const PatchSet ps = generate_patches(image, cfg.model.grid());
  ad::Tape<float> tape(false);
  const EncodeResult<float> r = model.encode(tape, ps);
  const std::size_t k = static_cast<std::size_t>(cfg.model.k), d = cfg.model.d_model;
  std::ofstream csv = open_out(out_path);
  csv << "level,x,y,A";
  for (std::size_t j = 0; j < k; ++j) csv << ",c" << j;
  for (std::size_t i = 0; i < d; ++i) csv << ",f" << i;
  csv << "\n";
  const Tensor<float>& gate = r.gate.value();
  const Tensor<float>& nodes = r.nodes.value();
  for (std::size_t p = 0; p < ps.size(); ++p) {
    const PatchMeta& m = ps.meta[p];
    csv << m.level << "," << fmt(m.x) << "," << fmt(m.y) << "," << fmt(m.area_coverage);
    for (std::size_t j = 0; j < k; ++j) csv << "," << fmt(gate[p * k + j]);
    for (std::size_t i = 0; i < d; ++i) csv << "," << fmt(nodes[p * d + i]);
    csv << "\n";
  }
  if (!csv) throw IoError("failed writing " + out_path);
  return kOk;
}

int cmd_gradcheck(const std::string& config_path, std::uint64_t seed, bool corrupt, std::ostream& out,
                  std::ostream& err) {
  SuiteOptions opt;
  if (!config_path.empty()) opt.model = load_run_config(config_path).model;
  opt.seed = seed;
  opt.corrupt_analytic = corrupt;
  const std::vector<SuiteRow> rows = run_gradcheck_suite(opt);
  std::string failed;
  char line[256];
  std::snprintf(line, sizeof line, "%-30s %14s %10s %9s %8s  %s\n", "component", "max_rel_error", "tolerance",
                "elements", "fixture", "status");
  out << line;
  for (const SuiteRow& r : rows) {
    std::snprintf(line, sizeof line, "%-30s %14.3e %10.0e %9zu %8zu  %s\n", r.component.c_str(),
                  r.result.max_rel_error, r.tolerance, r.result.elements_checked, r.fixture,
                  r.passed() ? "ok" : "FAIL");
    out << line;
    if (r.passed()) continue;
    failed += "  " + r.component + ": ";
    if (!r.fixture_found) {
      failed += "all " + std::to_string(r.fixtures_rejected) + " candidate fixtures rejected (last: " + r.rejection + ")";
    } else {
      failed += "worst " + r.result.worst_param + "[" + std::to_string(r.result.worst_index) +
                "] analytic=" + fmt(r.result.worst_analytic) + " numeric=" + fmt(r.result.worst_numeric);
      if (!r.result.failure.empty()) failed += " (" + r.result.failure + ")";
      if (!r.note.empty()) failed += "; inert under softmax shift: " + r.note;
    }
    failed += "\n";
  }
  if (!failed.empty()) {
    err << "gradient check failed:\n" << failed;
    return kCheckFailed;
  }
  return kOk;
}

int cmd_train(std::string data, const std::string& config_path, std::string out_dir, bool resume, std::ostream& err) {
  const RunConfig cfg = load_run_config(config_path);
  cfg.require({"k", "H", "d_model", "steps"}, "train");
  if (data.empty()) data = cfg.data;
  if (out_dir.empty()) out_dir = cfg.out;
  if (data.empty()) throw ConfigError("train: no dataset directory (--data or 'data' key)");
  if (out_dir.empty()) throw ConfigError("train: no output directory (--out or 'out' key)");
  train_loop(data, cfg.model, cfg.train, out_dir, resume, [&err](const std::string& m) { err << m << "\n"; });
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hierarchical patch-graph image encoder"};
  app.require_subcommand(1);

  std::string image, mode = "static", out_dir, config, checkpoint, out_path, data;
  int k = 3, D = 0, level = 2;
  std::size_t H = 16;
  double fraction = 0.25;
  std::uint64_t seed = 0;
  bool corrupt = false, resume = false;

  auto* grid = app.add_subcommand("grid", "Write per-level grid overlays and a patch manifest");
  grid->add_option("--image", image, "Input PNG")->required()->check(CLI::ExistingFile);
  grid->add_option("--mode", mode, "static or dynamic")->check(CLI::IsMember({"static", "dynamic"}));
  grid->add_option("--k", k, "Number of levels")->required();
  grid->add_option("--D", D, "Divisions (dynamic mode)");
  grid->add_option("--H", H, "Rescale dimension");
  grid->add_option("--out", out_dir, "Output directory")->required();

  auto* mask = app.add_subcommand("mask", "Mask grid cells of one level");
  mask->add_option("--image", image, "Input PNG")->required()->check(CLI::ExistingFile);
  mask->add_option("--k", k, "Number of levels")->required();
  mask->add_option("--level", level, "Mask level in [2, k]")->required();
  mask->add_option("--fraction", fraction, "Fraction of level cells to mask")
      ->check(CLI::IsMember({0.25, 0.125}));
  mask->add_option("--seed", seed, "Random seed");
  mask->add_option("--out", out_dir, "Output directory")->required();

  auto* encode = app.add_subcommand("encode", "Dump the graph state of one image as CSV");
  encode->add_option("--image", image, "Input PNG")->required()->check(CLI::ExistingFile);
  encode->add_option("--config", config, "Run configuration")->required()->check(CLI::ExistingFile);
  encode->add_option("--checkpoint", checkpoint, "Model checkpoint");
  encode->add_option("--out", out_path, "Output CSV")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "Compare analytic and numeric gradients");
  gradcheck->add_option("--config", config, "Run configuration (model keys)")->check(CLI::ExistingFile);
  gradcheck->add_option("--seed", seed, "Random seed");
  gradcheck->add_flag("--corrupt-analytic", corrupt)->group("");

  auto* train = app.add_subcommand("train", "Masked-reconstruction training");
  train->add_option("--data", data, "Directory of PNG images");
  train->add_option("--config", config, "Run configuration")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out_dir, "Output directory");
  train->add_flag("--resume", resume, "Continue from the checkpoint in the output directory");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (grid->parsed()) return cmd_grid(image, mode, k, D, H, out_dir, out);
    if (mask->parsed()) return cmd_mask(image, k, level, fraction, seed, out_dir, out);
    if (encode->parsed()) return cmd_encode(image, config, checkpoint, out_path);
    if (gradcheck->parsed()) return cmd_gradcheck(config, seed, corrupt, out, err);
    if (train->parsed()) return cmd_train(data, config, out_dir, resume, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
  return kUsage;
}

}  // namespace hindsight::cli
