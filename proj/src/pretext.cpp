// SPDX-License-Identifier: Apache-2.0
#include "hindsight/pretext.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "json.hpp"

namespace hindsight {

std::size_t masked_cell_count(int level, double fraction) {
  if (level < 1) throw ConfigError("mask: level must be >= 1");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("mask: fraction must lie in (0, 1]");
  const double cells = std::ldexp(1.0, 2 * (level - 1));
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * cells)));
}

int sample_mask_level(int k, Rng& rng) {
  if (k < 2) throw ConfigError("mask: k must be >= 2 to pick a level > 1");
  return 2 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(k - 1)));
}

MaskSpec make_mask(const StaticGrid& grid, int level, double fraction, Rng& rng) {
  if (level < 2 || level > grid.levels()) {
    throw ConfigError("mask: level " + std::to_string(level) + " outside [2, " + std::to_string(grid.levels()) + "]");
  }
  MaskSpec spec;
  spec.level = level;
  spec.fraction = fraction;
  const std::size_t side = StaticGrid::cells_per_side(level);
  const std::size_t n = masked_cell_count(level, fraction);
  std::vector<std::size_t> ids(side * side);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  // Partial Fisher-Yates: the first n entries form a uniform n-subset.
  for (std::size_t i = 0; i < n; ++i) std::swap(ids[i], ids[i + rng.uniform_int(ids.size() - i)]);
  ids.resize(n);
  std::sort(ids.begin(), ids.end());
  std::vector<char> chosen(side * side, 0);
  for (std::size_t id : ids) {
    chosen[id] = 1;
    spec.cells.emplace_back(id / side, id % side);
    spec.masked_regions.push_back(grid.cell(level, id / side, id % side));
  }
  for (int j = level; j <= grid.levels(); ++j) {
    const std::size_t cps = StaticGrid::cells_per_side(j);
    const int shift = j - level;
    for (std::size_t r = 0; r < cps; ++r) {
      for (std::size_t c = 0; c < cps; ++c) {
        if (chosen[(r >> shift) * side + (c >> shift)]) spec.fully_masked.push_back(StaticGrid::patch_index(j, r, c));
      }
    }
  }
  return spec;
}

MaskSpec generate_mask(const StaticGrid& grid, double fraction, Rng& rng) {
  const int level = sample_mask_level(grid.levels(), rng);
  return make_mask(grid, level, fraction, rng);
}

ImageBuffer apply_mask(const ImageBuffer& image, const std::vector<PixelRect>& regions) {
  ImageBuffer out = image;
  for (const PixelRect& r : regions) {
    if (r.x1 > image.width() || r.y1 > image.height()) throw DimensionError("apply_mask: region outside image");
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = r.y0; y < r.y1; ++y)
        for (std::size_t x = r.x0; x < r.x1; ++x) out.at(c, y, x) = kMaskFill;
  }
  return out;
}

double recon_loss(const std::vector<Tensor<float>>& predicted, const std::vector<Tensor<float>>& target) {
  if (predicted.size() != target.size()) throw DimensionError("recon_loss: patch counts differ");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    require_same_shape(predicted[i].shape(), target[i].shape(), "recon_loss");
    for (std::size_t e = 0; e < predicted[i].size(); ++e) {
      const double d = static_cast<double>(predicted[i][e]) - static_cast<double>(target[i][e]);
      sum += d * d;
    }
    count += predicted[i].size();
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

PretextSample prepare_sample(const ModelConfig& config, const ImageBuffer& image, double fraction, Rng& rng) {
  const StaticGrid grid(image.height(), image.width(), config.k);
  PretextSample s;
  s.mask = generate_mask(grid, fraction, rng);
  const ImageBuffer masked = apply_mask(image, s.mask);
  s.patches = generate_patches(masked, config.grid());

  std::vector<char> covered(image.height() * image.width(), 0);
  for (const PixelRect& r : s.mask.masked_regions)
    for (std::size_t y = r.y0; y < r.y1; ++y)
      for (std::size_t x = r.x0; x < r.x1; ++x) covered[y * image.width() + x] = 1;
  for (std::size_t p = 0; p < s.patches.size(); ++p) {
    const PixelRect& r = s.patches.regions[p];
    bool all = true;
    for (std::size_t y = r.y0; y < r.y1 && all; ++y)
      for (std::size_t x = r.x0; x < r.x1 && all; ++x) all = covered[y * image.width() + x] != 0;
    if (!all) s.memory_rows.push_back(p);
  }

  const std::size_t H = config.H, px = 3 * H * H;
  s.target = Tensor<float>(Shape{s.mask.fully_masked.size(), px});
  std::size_t m = 0;
  for (int j = s.mask.level; j <= config.k; ++j) {
    const std::size_t cps = StaticGrid::cells_per_side(j);
    for (std::size_t r = 0; r < cps; ++r) {
      for (std::size_t c = 0; c < cps; ++c) {
        if (m >= s.mask.fully_masked.size() || s.mask.fully_masked[m] != StaticGrid::patch_index(j, r, c)) continue;
        s.query_meta.push_back(grid.meta(j, r, c));
        const Tensor<float> patch = bilinear_resize(image.crop(grid.cell(j, r, c)), H);
        std::copy(patch.data(), patch.data() + px, s.target.data() + m * px);
        ++m;
      }
    }
  }
  return s;
}

template <typename T>
ad::Var<T> pretext_loss(ad::Tape<T>& tape, const HindSight<T>& model, const PretextSample& sample, double beta,
                        LossBreakdown* breakdown) {
  EncodeResult<T> enc = model.encode(tape, sample.patches);
  ad::Var<T> pred = model.decode(tape, sample.query_meta, enc.nodes, sample.memory_rows);
  ad::Var<T> recon = ad::mse(pred, sample.target.template cast<T>());
  ad::Var<T> total = ad::add(recon, ad::scale(enc.divergence, static_cast<T>(beta)));
  if (breakdown) {
    breakdown->total = static_cast<double>(total.value()[0]);
    breakdown->recon = static_cast<double>(recon.value()[0]);
    breakdown->divergence = static_cast<double>(enc.divergence.value()[0]);
  }
  return total;
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("train: lr must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train: moment decays must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("train: adam_eps must be > 0");
  if (!std::isfinite(beta)) throw ConfigError("train: beta must be finite");
  if (steps < 1) throw ConfigError("train: steps must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  masked_cell_count(2, fraction);
}

Adam::Adam(const ParameterStore<float>& store, const TrainConfig& config)
    : lr_(config.lr), b1_(config.beta1), b2_(config.beta2), eps_(config.adam_eps) {
  for (const auto& p : store) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void Adam::step(ParameterStore<float>& store) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  const float b1 = static_cast<float>(b1_), b2 = static_cast<float>(b2_);
  const float step = static_cast<float>(lr_ / c1), inv_c2 = static_cast<float>(1.0 / c2);
  const float eps = static_cast<float>(eps_);
  for (std::size_t i = 0; i < store.size(); ++i) {
    Parameter<float>& p = store[i];
    float* m = m_[i].data();
    float* v = v_[i].data();
    for (std::size_t e = 0; e < p.value.size(); ++e) {
      const float g = p.grad[e];
      m[e] = b1 * m[e] + (1.0f - b1) * g;
      v[e] = b2 * v[e] + (1.0f - b2) * g * g;
      p.value[e] -= step * m[e] / (std::sqrt(v[e] * inv_c2) + eps);
    }
  }
}

std::vector<NamedTensor> Adam::state(const ParameterStore<float>& store) const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < store.size(); ++i) out.push_back({"optim.m." + store[i].name, m_[i]});
  for (std::size_t i = 0; i < store.size(); ++i) out.push_back({"optim.v." + store[i].name, v_[i]});
  return out;
}

void Adam::load_state(const ParameterStore<float>& store, const std::vector<NamedTensor>& tensors) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    for (const char* kind : {"m", "v"}) {
      const std::string name = std::string("optim.") + kind + "." + store[i].name;
      auto it = std::find_if(tensors.begin(), tensors.end(), [&](const NamedTensor& t) { return t.name == name; });
      if (it == tensors.end()) throw ConfigError("checkpoint is missing optimizer state '" + name + "'");
      if (it->value.shape() != store[i].value.shape()) throw ConfigError("optimizer state '" + name + "' has wrong shape");
      (kind[0] == 'm' ? m_ : v_)[i] = it->value;
    }
  }
}

Trainer::Trainer(const ModelConfig& model_config, const TrainConfig& train_config, std::vector<ImageBuffer> images)
    : model_config_(model_config),
      config_(train_config),
      images_(std::move(images)),
      model_(model_config),
      adam_(model_.parameters(), train_config) {
  config_.validate();
  if (images_.empty()) throw ConfigError("train: empty dataset");
  if (model_config_.k < 2) throw ConfigError("train: masking needs k >= 2");
  model_.init(config_.seed);
}

std::vector<std::size_t> Trainer::batch_indices(std::size_t step) const {
  const std::size_t n = images_.size(), B = config_.batch_size;
  std::vector<std::size_t> out;
  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> order(n);
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t pos = step * B + b, epoch = pos / n;
    if (epoch != cached_epoch) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng rng = Rng(config_.seed).fork(0x5eed0000ULL + epoch);
      rng.shuffle(order);
      cached_epoch = epoch;
    }
    out.push_back(order[pos % n]);
  }
  return out;
}

LossBreakdown Trainer::step() {
  const std::vector<std::size_t> batch = batch_indices(step_);
  const Rng step_rng = Rng(config_.seed).fork(step_ + 1);
  ParameterStore<float>& store = model_.parameters();
  store.zero_grad();
  LossBreakdown mean;
  const float inv_b = 1.0f / static_cast<float>(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    Rng rng = step_rng.fork(b);
    const PretextSample sample = prepare_sample(model_config_, images_[batch[b]], config_.fraction, rng);
    ad::Tape<float> tape;
    LossBreakdown losses;
    ad::Var<float> total = pretext_loss(tape, model_, sample, config_.beta, &losses);
    if (!std::isfinite(losses.total)) {
      const auto bad = tape.first_non_finite();
      throw NumericError("non-finite loss at step " + std::to_string(step_ + 1) + "; first non-finite tensor: " +
                         (bad ? std::string(tape.label(*bad)) + " (node " + std::to_string(*bad) + ")" : "loss"));
    }
    tape.backward(total, inv_b);
    mean.total += losses.total;
    mean.recon += losses.recon;
    mean.divergence += losses.divergence;
  }
  adam_.step(store);
  ++step_;
  const double n = static_cast<double>(batch.size());
  return {mean.total / n, mean.recon / n, mean.divergence / n};
}

void Trainer::save(const std::filesystem::path& checkpoint, const std::filesystem::path& state_json) const {
  std::vector<NamedTensor> tensors = snapshot(model_.parameters());
  std::vector<NamedTensor> optim = adam_.state(model_.parameters());
  tensors.insert(tensors.end(), optim.begin(), optim.end());
  save_checkpoint(checkpoint, tensors);
  nlohmann::json state{{"step", step_}, {"seed", config_.seed}};
  std::ofstream out(state_json);
  if (!out) throw IoError("cannot write " + state_json.string());
  out << state.dump(2) << "\n";
}

void Trainer::resume(const std::filesystem::path& checkpoint, const std::filesystem::path& state_json) {
  std::ifstream in(state_json);
  if (!in) throw IoError("cannot open " + state_json.string());
  nlohmann::json state;
  try {
    state = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(state_json.string() + ": " + e.what());
  }
  const std::vector<NamedTensor> tensors = load_checkpoint(checkpoint);
  restore(model_.parameters(), tensors);
  adam_.load_state(model_.parameters(), tensors);
  step_ = state.at("step").get<std::size_t>();
  adam_.set_steps_taken(step_);
}

std::vector<ImageBuffer> load_dataset(const std::filesystem::path& dir, int k,
                                      const std::function<void(const std::string&)>& warn) {
  if (!std::filesystem::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  const std::size_t min_side = (std::size_t{1} << (k - 1)) * 4;
  std::vector<ImageBuffer> images;
  for (const auto& f : files) {
    try {
      ImageBuffer img = read_png(f);
      if (!img.square() || img.width() < min_side) {
        warn("skipping " + f.string() + ": expected a square image of side >= " + std::to_string(min_side));
        continue;
      }
      images.push_back(std::move(img));
    } catch (const std::exception& e) {
      warn("skipping " + f.string() + ": " + e.what());
    }
  }
  if (images.empty()) throw IoError("no usable images in " + dir.string());
  return images;
}

void train_loop(const std::filesystem::path& data_dir, const ModelConfig& model_config,
                const TrainConfig& train_config, const std::filesystem::path& out_dir, bool resume,
                const std::function<void(const std::string&)>& log) {
  Trainer trainer(model_config, train_config, load_dataset(data_dir, model_config.k, log));
  std::filesystem::create_directories(out_dir);
  const TrainPaths paths(out_dir);
  if (resume) {
    trainer.resume(paths.checkpoint, paths.state);
    log("resumed at step " + std::to_string(trainer.step_index()));
  }
  const bool append = resume && std::filesystem::exists(paths.metrics);
  std::ofstream metrics(paths.metrics, append ? std::ios::app : std::ios::trunc);
  if (!metrics) throw IoError("cannot write " + paths.metrics.string());
  if (!append) metrics << kMetricsHeader << "\n";
  while (trainer.step_index() < train_config.steps) {
    const LossBreakdown l = trainer.step();
    const std::size_t s = trainer.step_index();
    char row[160];
    std::snprintf(row, sizeof row, "%zu,%.9g,%.9g,%.9g\n", s, l.total, l.recon, l.divergence);
    metrics << row << std::flush;
    const bool last = s == train_config.steps;
    if (last || (train_config.checkpoint_every > 0 && s % train_config.checkpoint_every == 0)) {
      trainer.save(paths.checkpoint, paths.state);
    }
  }
}

template ad::Var<float> pretext_loss(ad::Tape<float>&, const HindSight<float>&, const PretextSample&, double,
                                     LossBreakdown*);
template ad::Var<double> pretext_loss(ad::Tape<double>&, const HindSight<double>&, const PretextSample&, double,
                                      LossBreakdown*);

}  // namespace hindsight
