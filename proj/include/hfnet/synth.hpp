#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hfnet/tensor.hpp"

namespace hfnet {

enum class Shape { square, circle };
enum class Motion { translate, scale };
enum class Direction { forward, reverse };

std::string to_string(Shape s);
std::string to_string(Motion m);
std::string to_string(Direction d);

struct ClassSpec {
  Shape shape = Shape::square;
  Motion motion = Motion::translate;
  Direction direction = Direction::forward;

  friend bool operator==(const ClassSpec&, const ClassSpec&) = default;
};

struct DatasetSpec {
  std::size_t frames_per_clip = 8;
  std::size_t channels = 1;
  std::size_t height = 32;
  std::size_t width = 32;
  std::vector<ClassSpec> classes;
  std::size_t samples_per_class = 500;
  double noise_std = 0.05;
  std::uint64_t seed = 1;
  // Side length range (pixels) of translating shapes and of the smallest
  // frame of a scaling shape.
  std::size_t min_size = 5;
  std::size_t max_size = 8;

  /// 2 shapes x 2 motions x 2 directions, forward/reverse partners adjacent.
  static DatasetSpec default_spec();
  void validate() const;

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

struct VideoDataset {
  Tensor<float> clips;      // [N*T, C, H, W], values in [0,1]
  std::vector<int> labels;  // 1-based
  std::size_t frames_per_clip = 0;
  std::size_t num_classes = 0;
  std::optional<DatasetSpec> spec;  // set by generate(), not persisted

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t channels() const { return clips.dim(1); }
  std::size_t height() const { return clips.dim(2); }
  std::size_t width() const { return clips.dim(3); }
  std::size_t clip_numel() const { return frames_per_clip * channels() * height() * width(); }

  /// Clips at `indices`, concatenated into [indices.size()*T, C, H, W].
  Tensor<float> gather(std::span<const std::size_t> indices) const;
  std::vector<int> gather_labels(std::span<const std::size_t> indices) const;
  VideoDataset subset(std::span<const std::size_t> indices) const;

  /// Payload equality; the provenance field is ignored.
  friend bool operator==(const VideoDataset& a, const VideoDataset& b) {
    return a.frames_per_clip == b.frames_per_clip && a.num_classes == b.num_classes && a.labels == b.labels &&
           a.clips == b.clips;
  }
};

VideoDataset generate(const DatasetSpec& spec);

void save_dataset(const VideoDataset& ds, const std::string& path);
std::vector<std::uint8_t> encode_dataset(const VideoDataset& ds);
VideoDataset load_dataset(const std::string& path);
VideoDataset decode_dataset(std::vector<std::uint8_t> bytes);

/// Stratified split: per class, round(fraction * count) samples go to train.
std::pair<VideoDataset, VideoDataset> split(const VideoDataset& ds, double fraction, std::uint64_t seed);

}  // namespace hfnet
