#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hfnet/hf.hpp"
#include "hfnet/ops.hpp"

namespace hfnet {

enum class PoolAfter { none, max2 };
enum class HfVariant { none, conservative, nonconservative };
enum class Consensus { average, relation, conv3d };

/// conv3x3 (pad 1) -> [batchnorm] -> ReLU -> [2x2 max pool].
struct BlockSpec {
  std::size_t out_channels = 16;
  bool use_batchnorm = true;
  PoolAfter pool_after = PoolAfter::none;

  friend bool operator==(const BlockSpec&, const BlockSpec&) = default;
};

struct ModelConfig {
  std::size_t in_channels = 1;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t frames_per_clip = 8;
  std::vector<BlockSpec> blocks;
  std::vector<std::size_t> hf_positions;  // 1-based block indices
  HfVariant hf_variant = HfVariant::none;
  Consensus consensus = Consensus::average;
  std::size_t num_classes = 8;
  double dropout_rate = 0.5;

  /// Throws ConfigError on any violated invariant.
  void validate() const;
  bool has_hf_after(std::size_t block) const;  // 1-based

  /// 4 blocks [16,32,64,64], max-pool after blocks 1-3, HF after every block,
  /// T=8, 1x32x32 input, 8 classes, average consensus.
  static ModelConfig toy_default();

  /// Same config with every HF module removed.
  ModelConfig without_hf() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerGeometry {
  std::size_t channels;
  std::size_t height;
  std::size_t width;
};

/// Output geometry of every block, in order.
std::vector<LayerGeometry> block_geometry(const ModelConfig& config);

std::string to_string(HfVariant v);
std::string to_string(Consensus c);
std::string to_string(PoolAfter p);

template <typename T>
struct ParamEntry {
  std::string name;
  Tensor<T> value;
  bool trainable = true;
};

/// Named tensors in a fixed insertion order. Non-trainable entries hold
/// batch-norm running statistics.
template <typename T>
class ParamStore {
 public:
  void add(std::string name, Tensor<T> value, bool trainable = true);
  Tensor<T>& get(const std::string& name);
  const Tensor<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<ParamEntry<T>>& entries() noexcept { return entries_; }
  const std::vector<ParamEntry<T>>& entries() const noexcept { return entries_; }

  std::size_t trainable_scalars() const;
  std::size_t total_scalars() const;

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>(), e.trainable);
    return out;
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      const auto& x = a.entries_[i];
      const auto& y = b.entries_[i];
      if (x.name != y.name || x.trainable != y.trainable || !(x.value == y.value)) return false;
    }
    return true;
  }

 private:
  std::vector<ParamEntry<T>> entries_;
};

template <typename T>
struct Model {
  ModelConfig config;
  ParamStore<T> params;

  template <typename U>
  Model<U> cast() const {
    return Model<U>{config, params.template cast<U>()};
  }
};

/// Fan-in scaled uniform conv/linear weights, unit BN gamma, zero biases and
/// zero gate convs. HF modules draw nothing from `rng`, so models that differ
/// only in HF placement share every other parameter bit for bit.
template <typename T>
Model<T> build_model(const ModelConfig& config, Rng& rng);

template <typename T>
struct ForwardTrace {
  Var<T> logits;
  /// Global-average-pooled final block output, [clips*T, C_last].
  Var<T> frame_features;
  /// (1-based block index, gates) for each HF module; non-conservative
  /// modules report their additive gates.
  std::vector<std::pair<std::size_t, GateTensor<T>>> gates;
  /// Tape leaves bound to the trainable parameters, in store order.
  std::vector<std::pair<std::string, Var<T>>> bound_params;
};

/// Runs the full network on clips [N*T, C, H, W]. In train mode batch-norm
/// running statistics are updated in place and dropout draws from `rng`.
template <typename T>
ForwardTrace<T> forward(Tape<T>& tape, Model<T>& model, Var<T> clips, Mode mode, Rng& rng, bool params_require_grad = true);

/// Same as forward() but with the trainable parameters supplied as tape
/// variables, one per trainable store entry in store order.
template <typename T>
ForwardTrace<T> forward_with(Tape<T>& tape, Model<T>& model, Var<T> clips, Mode mode, Rng& rng,
                             std::span<const Var<T>> trainable);

// Consensus heads over per-frame features.

/// [N*T, D] -> [N, D], order-invariant mean.
template <typename T>
Var<T> consensus_average(Var<T> frame_features, const Segmentation& segments);

/// Concatenate the T descriptors in order, then fc(T*D -> D), ReLU, fc(D -> D).
template <typename T>
Var<T> consensus_relation(Var<T> frame_features, const Segmentation& segments, Var<T> fc1_weight, Var<T> fc1_bias,
                          Var<T> fc2_weight, Var<T> fc2_bias);

/// [N*T, C, h, w] -> 3x3x3 conv over (T,h,w), pad 1 -> ReLU -> global mean -> [N, C_out].
template <typename T>
Var<T> consensus_conv3d(Var<T> frame_maps, const Segmentation& segments, Var<T> weight, Var<T> bias);

}  // namespace hfnet
