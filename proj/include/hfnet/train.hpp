#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "hfnet/model.hpp"
#include "hfnet/synth.hpp"

namespace hfnet {

enum class Augmentation { none, crop_scale };

std::string to_string(Augmentation a);

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;  // clips
  double base_lr = 0.01;
  std::vector<std::size_t> lr_milestones{15, 25};
  double lr_decay = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  /// Overrides the model's dropout rate when set.
  std::optional<double> dropout_rate;
  std::uint64_t seed = 1;
  Augmentation augmentation = Augmentation::crop_scale;
  int threads = 1;
  /// Wall-clock epoch times go into metrics only when enabled; otherwise the
  /// field is written as 0 so logs stay byte-reproducible.
  bool record_timing = false;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Learning rate for a 1-based epoch: base_lr * decay^(milestones strictly below epoch).
double lr_at(const TrainConfig& config, std::size_t epoch);

/// Momentum buffers aligned with the trainable entries of a parameter store.
template <typename T>
struct SgdState {
  std::vector<Tensor<T>> velocity;

  static SgdState zeros_like(const ParamStore<T>& params);
};

/// v <- momentum*v + g + weight_decay*p;  p <- p - lr*v, over trainable entries
/// in store order. All gradients are checked before anything is written.
template <typename T>
void sgd_step(ParamStore<T>& params, SgdState<T>& state, const std::vector<Tensor<T>>& grads, T lr, T momentum,
              T weight_decay);

/// Crop-and-rescale augmentation of one clip [T, C, H, W]. Train mode picks one
/// scale from {1, 0.875, 0.75} and one of five crop anchors (center, four
/// corners) for the whole clip and resizes back bilinearly. Eval mode is the
/// full-frame center crop, i.e. the identity.
Tensor<float> augment(const Tensor<float>& clip, Rng& rng, Mode mode);

/// Deterministic variant with the crop fixed; anchor 0 is center, 1..4 are
/// top-left, top-right, bottom-left, bottom-right.
Tensor<float> crop_resize(const Tensor<float>& clip, double scale, int anchor);

/// Bilinear resize of the trailing two axes with half-pixel alignment.
Tensor<float> resize_bilinear(const Tensor<float>& x, std::size_t out_h, std::size_t out_w);

struct EvalReport {
  double top1 = 0.0;
  std::vector<double> per_class;  // 0 for classes with no samples
  std::vector<std::size_t> class_counts;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::size_t samples = 0;
};

/// Argmax with lowest-index tie-break; logits [N, K], 1-based labels.
EvalReport score_logits(const Tensor<float>& logits, std::span<const int> labels, std::size_t num_classes);

EvalReport evaluate(const Model<float>& model, const VideoDataset& data, std::size_t batch_size = 64, int threads = 1);

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double epoch_seconds = 0.0;
};

/// One JSON object, no trailing newline.
std::string to_json_line(const EpochMetrics& m);

struct TrainOptions {
  /// When set, metrics.jsonl, best.hfck and last.hfck are written here after
  /// every epoch, and last_good.hfck on a numeric abort.
  std::optional<std::string> out_dir;
  /// Progress lines; nullptr silences them.
  std::ostream* log = nullptr;
  std::function<void(const EpochMetrics&)> on_epoch;
};

struct TrainResult {
  Model<float> final_model;
  Model<float> best_model;
  std::size_t best_epoch = 0;
  double best_val_acc = 0.0;
  std::vector<EpochMetrics> metrics;
  std::size_t steps = 0;
};

TrainResult train(Model<float> model, const VideoDataset& train_data, const VideoDataset& val_data,
                  const TrainConfig& config, const TrainOptions& options = {});

// Checkpoint container.

struct Checkpoint {
  Model<float> model;
  std::size_t epoch = 0;
  double val_acc = 0.0;
  std::size_t payload_bytes = 0;  // float32 tensor payload only
};

std::vector<std::uint8_t> encode_checkpoint(const Model<float>& model, std::size_t epoch, double val_acc);
Checkpoint decode_checkpoint(std::vector<std::uint8_t> bytes);
void save_checkpoint(const std::string& path, const Model<float>& model, std::size_t epoch, double val_acc);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace hfnet
