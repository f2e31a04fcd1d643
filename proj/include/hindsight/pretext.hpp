// SPDX-License-Identifier: Apache-2.0
//
// Masked-region reconstruction: mask grid cells of one level, encode the
// masked image, and decode the pixels of every fully masked static-grid
// patch from its position/scale encoding.
#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hindsight/checkpoint.hpp"
#include "hindsight/model.hpp"

namespace hindsight {

inline constexpr float kMaskFill = 0.5f;

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MaskSpec {
  int level = 2;
  double fraction = 0.25;
  std::vector<std::pair<std::size_t, std::size_t>> cells;  // (row, col) at `level`, ascending
  std::vector<PixelRect> masked_regions;                   // pixel rectangle of each cell
  std::vector<std::size_t> fully_masked;                   // static-grid patch indices, ascending
};

/// round(fraction * 4^(level-1)), at least 1.
std::size_t masked_cell_count(int level, double fraction);
/// Uniform over {2, ..., k}. Throws ConfigError for k < 2.
int sample_mask_level(int k, Rng& rng);
/// Masks `masked_cell_count` distinct cells of `level`, drawn uniformly.
MaskSpec make_mask(const StaticGrid& grid, int level, double fraction, Rng& rng);
/// Level drawn by sample_mask_level, then make_mask.
MaskSpec generate_mask(const StaticGrid& grid, double fraction, Rng& rng);
/// Masked pixels set to kMaskFill in every channel.
ImageBuffer apply_mask(const ImageBuffer& image, const std::vector<PixelRect>& regions);
inline ImageBuffer apply_mask(const ImageBuffer& image, const MaskSpec& spec) {
  return apply_mask(image, spec.masked_regions);
}

/// Mean squared error over every pixel of every patch.
double recon_loss(const std::vector<Tensor<float>>& predicted, const std::vector<Tensor<float>>& target);

/// Everything needed to evaluate the pretext loss for one image, fixed
/// once the mask has been drawn.
struct PretextSample {
  MaskSpec mask;
  PatchSet patches;                     // generated from the masked image
  std::vector<PatchMeta> query_meta;    // static-grid meta of the fully masked patches
  std::vector<std::size_t> memory_rows; // encoder nodes not entirely covered by the mask
  Tensor<float> target;                 // [M x 3*H*H] original pixels of the fully masked patches
};

PretextSample prepare_sample(const ModelConfig& config, const ImageBuffer& image, double fraction, Rng& rng);

struct LossBreakdown {
  double total = 0.0, recon = 0.0, divergence = 0.0;
};

/// total = recon + beta * divergence, recorded on `tape`.
template <typename T>
ad::Var<T> pretext_loss(ad::Tape<T>& tape, const HindSight<T>& model, const PretextSample& sample, double beta,
                        LossBreakdown* breakdown = nullptr);

struct TrainConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double beta = 0.1;  // divergence loss weight
  std::size_t steps = 100;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  double fraction = 0.25;
  std::size_t checkpoint_every = 0;  // 0: only at the end

  void validate() const;
};

/// First/second moment optimizer with bias correction.
class Adam {
 public:
  Adam(const ParameterStore<float>& store, const TrainConfig& config);

  void step(ParameterStore<float>& store);
  std::size_t steps_taken() const { return t_; }
  void set_steps_taken(std::size_t t) { t_ = t; }

  /// Moments as "optim.m.<param>" / "optim.v.<param>" entries.
  std::vector<NamedTensor> state(const ParameterStore<float>& store) const;
  void load_state(const ParameterStore<float>& store, const std::vector<NamedTensor>& tensors);

 private:
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<Tensor<float>> m_, v_;
};

class Trainer {
 public:
  Trainer(const ModelConfig& model_config, const TrainConfig& train_config, std::vector<ImageBuffer> images);

  HindSight<float>& model() { return model_; }
  const Adam& optimizer() const { return adam_; }
  std::size_t step_index() const { return step_; }

  /// One optimizer step over the next batch; losses are batch means.
  /// Throws NumericError naming the first non-finite tensor.
  LossBreakdown step();

  /// Parameters plus optimizer moments.
  void save(const std::filesystem::path& checkpoint, const std::filesystem::path& state_json) const;
  void resume(const std::filesystem::path& checkpoint, const std::filesystem::path& state_json);

  /// Image indices of batch `step` (epochs reshuffled from the seed).
  std::vector<std::size_t> batch_indices(std::size_t step) const;

 private:
  ModelConfig model_config_;
  TrainConfig config_;
  std::vector<ImageBuffer> images_;
  HindSight<float> model_;
  Adam adam_;
  std::size_t step_ = 0;
};

struct TrainPaths {
  std::filesystem::path checkpoint, state, metrics;
  explicit TrainPaths(const std::filesystem::path& out_dir)
      : checkpoint(out_dir / "checkpoint.hsgt"), state(out_dir / "train_state.json"), metrics(out_dir / "metrics.csv") {}
};

inline constexpr const char* kMetricsHeader = "step,total_loss,recon_loss,div_loss";

/// Loads every readable square PNG of sufficient size (sorted by file
/// name); others are skipped with a message to `warn`. Throws IoError when
/// nothing usable remains.
std::vector<ImageBuffer> load_dataset(const std::filesystem::path& dir, int k,
                                      const std::function<void(const std::string&)>& warn);

/// Trains until `train_config.steps` total steps, appending one metrics row
/// per step and checkpointing every `checkpoint_every` steps and at the end.
/// With `resume`, continues from the checkpoint in `out_dir`.
void train_loop(const std::filesystem::path& data_dir, const ModelConfig& model_config,
                const TrainConfig& train_config, const std::filesystem::path& out_dir, bool resume,
                const std::function<void(const std::string&)>& log);

extern template ad::Var<float> pretext_loss(ad::Tape<float>&, const HindSight<float>&, const PretextSample&, double,
                                            LossBreakdown*);
extern template ad::Var<double> pretext_loss(ad::Tape<double>&, const HindSight<double>&, const PretextSample&,
                                             double, LossBreakdown*);

}  // namespace hindsight
