// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero when
// any criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "../common/naive.hpp"
#include "cli.hpp"
#include "hindsight/gradcheck_suite.hpp"
#include "hindsight/graph.hpp"
#include "hindsight/kernels.hpp"
#include "hindsight/pretext.hpp"

using namespace hindsight;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kAreaTol = 1e-12;
constexpr double kLevelFreqTol = 0.02;
constexpr double kGateSumTol = 1e-6;
constexpr double kUniformDivTol = 1e-9;
constexpr double kDivergenceRef = -0.13081;
constexpr double kDivergenceTol = 1e-4;
constexpr double kTrainRatio = 0.1;

// Training preset for criterion 7.
constexpr std::size_t kTrainImages = 8;
constexpr std::size_t kTrainSteps = 500;
constexpr std::uint64_t kTrainSeed = 7;
constexpr double kTrainLr = 2e-3;
constexpr std::size_t kTrainBatch = 8;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (ok) return;
    if (pass) detail = what;
    else if (detail.size() < 600) detail += "; " + what;
    pass = false;
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hindsight_acceptance_" + name);
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

/// High-detail image for the dynamic grid: every quadrant at every depth
/// has non-zero information.
ImageBuffer detailed_image(std::size_t side, std::uint64_t seed) {
  Rng rng(seed);
  ImageBuffer img(side, side);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x) img.at(c, y, x) = static_cast<float>(rng.uniform());
  return img;
}

Outcome patch_counts() {
  Outcome o;
  const ImageBuffer img = detailed_image(64, 1);
  const std::size_t expected[] = {1, 5, 21, 85, 341, 1365};
  std::string got;
  for (int k = 1; k <= 6; ++k) {
    const std::size_t P = static_grid(img, k, 8).size();
    got += (k > 1 ? "," : "") + std::to_string(P);
    o.require(P == expected[k - 1], "static k=" + std::to_string(k) + " gave P=" + std::to_string(P));
  }
  std::string dyn;
  for (int D : {0, 1, 10, 85}) {
    const std::size_t P = dynamic_grid(img, 6, D, 8).size();
    dyn += (D ? "," : "") + std::to_string(P);
    o.require(P == static_cast<std::size_t>(1 + 4 * D), "dynamic D=" + std::to_string(D) + " gave P=" + std::to_string(P));
  }
  if (o.pass) o.detail = "static P={" + got + "}, dynamic P(D=0,1,10,85)={" + dyn + "}";
  return o;
}

Outcome area_coverage_values() {
  Outcome o;
  const double a1 = area_coverage(1.0, 5), a2 = area_coverage(1.0 / 16.0, 5), a4 = area_coverage(1.0 / 256.0, 5);
  o.require(a1 == 1.0, "ratio 1 gave " + fmt("%.17g", a1));
  o.require(std::abs(a2 - 0.2) <= kAreaTol, "4^-2 gave " + fmt("%.17g", a2));
  o.require(std::abs(a4 + 0.6) <= kAreaTol, "4^-4 gave " + fmt("%.17g", a4));
  const ImageBuffer img = detailed_image(64, 2);
  std::size_t checked = 0;
  for (const PatchSet& ps : {static_grid(img, 5, 8), dynamic_grid(img, 6, 85, 8), dynamic_grid(img, 4, 20, 8)}) {
    std::vector<double> by_level(8, std::nan(""));
    for (const PatchMeta& m : ps.meta) {
      double& slot = by_level[static_cast<std::size_t>(m.level)];
      if (std::isnan(slot)) slot = m.area_coverage;
      o.require(slot == m.area_coverage, "patches of one level disagree on area coverage");
      ++checked;
    }
    for (std::size_t l = 2; l < by_level.size(); ++l) {
      if (std::isnan(by_level[l])) continue;
      o.require(by_level[l] < by_level[l - 1], "area coverage not decreasing at level " + std::to_string(l));
    }
  }
  if (o.pass) {
    o.detail = "A(1)=1, A(4^-2,5)=" + fmt("%.15g", a2) + ", A(4^-4,5)=" + fmt("%.15g", a4) + ", monotone over " +
               std::to_string(checked) + " patches";
  }
  return o;
}

Outcome mask_counting() {
  Outcome o;
  const StaticGrid grid(64, 64, 5);
  Rng rng(3);
  const std::size_t c3 = make_mask(grid, 3, 0.25, rng).fully_masked.size();
  const std::size_t c2 = make_mask(grid, 2, 0.25, rng).fully_masked.size();
  const std::size_t c5 = make_mask(grid, 5, 0.25, rng).fully_masked.size();
  o.require(c3 == 84, "level 3 gave " + std::to_string(c3));
  o.require(c2 == 85, "level 2 gave " + std::to_string(c2));
  o.require(c5 == 64, "level 5 gave " + std::to_string(c5));
  Rng levels(4);
  std::size_t counts[6] = {};
  constexpr int kDraws = 10000;
  for (int i = 0; i < kDraws; ++i) ++counts[sample_mask_level(5, levels)];
  std::string freq;
  for (int l = 2; l <= 5; ++l) {
    const double f = static_cast<double>(counts[l]) / kDraws;
    freq += (l > 2 ? "," : "") + fmt("%.4f", f);
    o.require(std::abs(f - 0.25) <= kLevelFreqTol, "level " + std::to_string(l) + " frequency " + fmt("%.4f", f));
  }
  if (o.pass) o.detail = "84/85/64 fully masked; level frequencies {" + freq + "}";
  return o;
}

Outcome aggregator_properties() {
  Outcome o;
  Rng rng(5);
  double worst_sum = 0.0, worst_div = -1e300;
  for (int inst = 0; inst < 1000; ++inst) {
    const std::size_t k = 1 + rng.uniform_int(5), d = 2 + rng.uniform_int(15), P = 1 + rng.uniform_int(6);
    ParameterStore<double> store;
    FeatureAggregator<double> agg(k, d, store);
    Rng init = rng.fork(static_cast<std::uint64_t>(inst));
    agg.init(init);
    for (auto& p : store)
      for (auto& v : p->value.vec()) v += init.uniform(-0.5, 0.5);
    ad::Tape<double> tape(false);
    const auto mfv = tape.constant(naive::random<double>({P * k, d}, rng, -3.0, 3.0));
    std::optional<ad::Var<double>> gq;
    if (inst % 2) gq = tape.constant(naive::random<double>({P, d}, rng));
    const AggregateResult<double> r = agg.aggregate(mfv, gq);
    const Tensor<double>& gate = r.gate.value();
    const Tensor<double>& afv = r.afv.value();
    for (std::size_t p = 0; p < P; ++p) {
      double sum = 0.0;
      std::vector<double> c(k);
      for (std::size_t j = 0; j < k; ++j) sum += (c[j] = gate.at(p, j));
      worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
      const double div = divergence_loss(c);
      worst_div = std::max(worst_div, div);
      for (std::size_t i = 0; i < d; ++i) {
        double lo = 1e300, hi = -1e300;
        for (std::size_t j = 0; j < k; ++j) {
          lo = std::min(lo, mfv.value().at(p * k + j, i));
          hi = std::max(hi, mfv.value().at(p * k + j, i));
        }
        const double slack = 1e-12 * std::max(1.0, std::abs(lo) + std::abs(hi));
        o.require(afv.at(p, i) >= lo - slack && afv.at(p, i) <= hi + slack,
                  "afv outside feature range in instance " + std::to_string(inst));
      }
    }
    if (r.divergence) o.require(r.divergence->value()[0] <= 0.0, "positive divergence loss");
  }
  o.require(worst_sum <= kGateSumTol, "gate sum off by " + fmt("%.3e", worst_sum));
  o.require(worst_div <= 0.0, "divergence loss reached " + fmt("%.3e", worst_div));
  double worst_uniform = 0.0;
  for (std::size_t k = 1; k <= 8; ++k)
    worst_uniform = std::max(worst_uniform, std::abs(divergence_loss(std::vector<double>(k, 1.0 / k))));
  const double d75 = divergence_loss({0.75, 0.25});
  o.require(worst_uniform <= kUniformDivTol, "uniform divergence " + fmt("%.3e", worst_uniform));
  o.require(std::abs(d75 - kDivergenceRef) <= kDivergenceTol, "divergence(0.75,0.25)=" + fmt("%.6f", d75));
  if (o.pass) {
    o.detail = "1000 instances; max |sum-1|=" + fmt("%.1e", worst_sum) + ", max loss=" + fmt("%.3e", worst_div) +
               ", L(0.75,0.25)=" + fmt("%.6f", d75) + ", |L(uniform)|<=" + fmt("%.1e", worst_uniform);
  }
  return o;
}

Outcome gradient_oracle() {
  Outcome o;
  SuiteOptions options;
  options.seed = 0;
  const std::vector<SuiteRow> rows = run_gradcheck_suite(options);
  std::printf("  %-30s %12s %9s %8s  %s\n", "component", "max_rel_err", "tolerance", "fixture", "status");
  std::string failed;
  for (const SuiteRow& r : rows) {
    std::printf("  %-30s %12.3e %9.0e %8zu  %s\n", r.component.c_str(), r.result.max_rel_error, r.tolerance, r.fixture,
                r.passed() ? "ok" : "FAIL");
    if (r.passed()) continue;
    std::string why = r.component + " " + fmt("%.3e", r.result.max_rel_error) + " at " + r.result.worst_param + "[" +
                      std::to_string(r.result.worst_index) + "] (analytic " + fmt("%.4g", r.result.worst_analytic) +
                      ", numeric " + fmt("%.4g", r.result.worst_numeric) + ")";
    if (!r.fixture_found) why += ", no admissible fixture: " + r.rejection;
    if (!r.note.empty()) why += ", inert element: " + r.note;
    std::printf("    %s\n", why.c_str());
    o.require(false, r.component);
  }
  o.require(rows.size() >= 6, "fewer than 6 rows");
  if (o.pass) o.detail = std::to_string(rows.size()) + " components within tolerance";
  else o.detail = "over tolerance: " + o.detail;
  return o;
}

Outcome naive_equivalence() {
  Outcome o;
  Rng rng(6);
  std::size_t cases = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t C = 1 + rng.uniform_int(4), side = 2 * (1 + rng.uniform_int(8)), O = 1 + rng.uniform_int(4);
    const std::size_t K = 1 + rng.uniform_int(std::min<std::size_t>(side, 5));
    const auto in = naive::random<float>({C, side, side}, rng);
    const auto kern = naive::random<float>({O, C, K, K}, rng), bias = naive::random<float>({O}, rng);
    o.require(kernels::conv2d_valid(in, kern, bias) == naive::conv2d_valid(in, kern, bias),
              "conv2d_valid mismatch in trial " + std::to_string(trial));
    o.require(kernels::maxpool2(in).out == naive::maxpool2(in), "maxpool2 mismatch in trial " + std::to_string(trial));
    const auto ind = in.cast<double>();
    const auto kd = kern.cast<double>(), bd = bias.cast<double>();
    o.require(kernels::conv2d_valid(ind, kd, bd) == naive::conv2d_valid(ind, kd, bd), "conv2d_valid (64-bit) mismatch");

    const std::size_t P = 1 + rng.uniform_int(8);
    ParameterStore<float> store;
    auto w = AttentionWeights<float>::create(store, "a", 8, 1);
    for (auto* p : {w.wq, w.bq, w.wk, w.wv, w.bv, w.wo, w.bo}) p->value = naive::random<float>(p->value.shape(), rng);
    const auto x = naive::random<float>({P, 8}, rng, -2.0, 2.0);
    ad::Tape<float> tape(false);
    o.require(mha(tape.constant(x), w).value() == naive::attention(x, w.wq->value, w.bq->value, w.wk->value,
                                                                   w.wv->value, w.bv->value, w.wo->value, w.bo->value),
              "attention mismatch in trial " + std::to_string(trial));
    cases += 4;
  }
  if (o.pass) o.detail = std::to_string(cases) + " random cases bit-identical (conv, pool, attention)";
  return o;
}

/// Per-step recon losses from a metrics CSV.
std::vector<double> recon_column(const fs::path& csv) {
  std::ifstream in(csv);
  std::vector<double> out;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::string cell;
    for (int c = 0; c < 3 && std::getline(row, cell, ','); ++c) {
    }
    out.push_back(std::stod(cell));
  }
  return out;
}

Outcome training_sanity() {
  Outcome o;
  const fs::path data = scratch("train_data");
  for (std::size_t i = 0; i < kTrainImages; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%02zu.png", i);
    write_png(data / name, synthetic_image(64, 100 + i));
  }
  ModelConfig mc;
  mc.k = 3;
  mc.H = 16;
  mc.d_model = 32;
  mc.N = 2;
  TrainConfig tc;
  tc.seed = kTrainSeed;
  tc.steps = kTrainSteps;
  tc.lr = kTrainLr;
  tc.batch_size = kTrainBatch;
  auto quiet = [](const std::string&) {};
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path a = scratch("train_a"), b = scratch("train_b");
  train_loop(data, mc, tc, a, false, quiet);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  train_loop(data, mc, tc, b, false, quiet);
  const std::vector<double> recon = recon_column(TrainPaths(a).metrics);
  o.require(recon.size() == kTrainSteps, "metrics has " + std::to_string(recon.size()) + " rows");
  if (recon.size() == kTrainSteps) {
    const double ratio = recon.back() / recon.front();
    o.require(ratio < kTrainRatio, "final/initial recon = " + fmt("%.4f", ratio));
    o.detail = "recon " + fmt("%.5f", recon.front()) + " -> " + fmt("%.5f", recon.back()) + " (ratio " +
               fmt("%.4f", ratio) + ")";
  }
  const bool same = slurp(TrainPaths(a).metrics) == slurp(TrainPaths(b).metrics);
  o.require(same, "metrics CSVs of two runs differ");
  if (o.pass) o.detail += ", identical CSVs across runs, " + fmt("%.0f", secs) + " s per run";
  return o;
}

int cli_run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  return cli::run(args, out, err);
}

Outcome determinism_round_trip() {
  Outcome o;
  const fs::path dir = scratch("determinism");
  ModelConfig mc;
  mc.k = 3;
  mc.H = 16;
  mc.d_model = 32;
  mc.N = 2;
  HindSight<float> model(mc), loaded(mc);
  model.init(8);
  save_checkpoint(dir / "model.hsgt", snapshot(model.parameters()));
  restore(loaded.parameters(), load_checkpoint(dir / "model.hsgt"));
  std::size_t params = 0;
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    const auto& x = model.parameters()[i].value;
    const auto& y = loaded.parameters()[i].value;
    o.require(x.shape() == y.shape() && std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) == 0,
              "checkpoint differs at " + model.parameters()[i].name);
    ++params;
  }

  write_png(dir / "img.png", synthetic_image(64, 9));
  std::ofstream(dir / "run.cfg") << "k = 3\nH = 16\nd_model = 32\nN = 2\n";
  const std::string img = (dir / "img.png").string();
  std::vector<std::pair<std::string, std::vector<std::string>>> files;
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path r = dir / ("rep" + std::to_string(rep));
    const int codes = cli_run({"grid", "--image", img, "--mode", "static", "--k", "4", "--out", (r / "gs").string()}) +
                      cli_run({"grid", "--image", img, "--mode", "dynamic", "--k", "5", "--D", "30", "--out",
                               (r / "gd").string()}) +
                      cli_run({"mask", "--image", img, "--k", "4", "--level", "3", "--fraction", "0.25", "--seed", "11",
                               "--out", (r / "mask").string()}) +
                      cli_run({"encode", "--image", img, "--config", (dir / "run.cfg").string(), "--checkpoint",
                               (dir / "model.hsgt").string(), "--out", (r / "encode.csv").string()});
    o.require(codes == 0, "a subcommand failed");
  }
  std::size_t compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(dir / "rep0")) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), dir / "rep0");
    o.require(slurp(entry.path()) == slurp(dir / "rep1" / rel), rel.string() + " differs between runs");
    ++compared;
  }
  o.require(compared >= 12, "only " + std::to_string(compared) + " output files");
  if (o.pass) {
    o.detail = std::to_string(params) + " tensors round-trip bit-exactly; " + std::to_string(compared) +
               " grid/mask/encode files byte-identical";
  }
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {"patch-count formulas", patch_counts},
      {"area coverage", area_coverage_values},
      {"mask counting", mask_counting},
      {"aggregator properties", aggregator_properties},
      {"gradient oracle", gradient_oracle},
      {"small-instance equivalence", naive_equivalence},
      {"training sanity", training_sanity},
      {"determinism and round-trip", determinism_round_trip},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    std::printf("[%s] criterion %zu (%s): %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].name, o.detail.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
