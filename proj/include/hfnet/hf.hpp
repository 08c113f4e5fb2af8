#pragma once

#include <iosfwd>
#include <vector>

#include "hfnet/ops.hpp"

namespace hfnet {

// HF aggregation: each frame hands a gated share of its
// successor's features to itself and gives up the share its predecessor took,
//
//   F_t = F'_t + G_t * F'_{t+1} - G_{t-1} * F'_t,   F'_{T+1} = 0, G_0 = 0,
//
// so per clip the temporal sum of the features is unchanged. The gate
// G_t = tanh(W * [F'_t, F'_{t+1}] + B) is a 2x3x3 single-output 3D conv over
// the stacked neighbours, broadcast across all feature channels.

/// Per-frame feature maps [clips*T, C, H, W] for a batch of clips.
template <typename T>
struct FeatureSequence {
  Var<T> values;
  Segmentation segments;
};

/// Single-channel gates [clips*T, 1, H, W] with values in [-1, 1].
template <typename T>
struct GateTensor {
  Var<T> values;
  Segmentation segments;
};

/// Gate conv weight [1, C, 2, 3, 3] and bias [1].
template <typename T>
struct GateConvParams {
  Var<T> weight;
  Var<T> bias;
};

inline Dims gate_weight_dims(std::size_t channels) { return Dims{1, channels, 2, 3, 3}; }
inline std::size_t gate_param_count(std::size_t channels) { return 18 * channels + 1; }

template <typename T>
GateConvParams<T> bind_gate_params(Tape<T>& tape, const Tensor<T>& weight, const Tensor<T>& bias, bool requires_grad = true) {
  return GateConvParams<T>{tape.leaf(weight, requires_grad), tape.leaf(bias, requires_grad)};
}

template <typename T>
GateTensor<T> compute_gates(const FeatureSequence<T>& block_output, const GateConvParams<T>& params);

template <typename T>
struct HfResult {
  FeatureSequence<T> features;
  GateTensor<T> gates;
};

/// Shift-based batch realization: F- = shift_left(F+), G- = gates,
/// G+ = shift_right(G-), out = F+ + G- (.) F- - G+ (.) F+.
template <typename T>
HfResult<T> hf_forward_parallel(const FeatureSequence<T>& block_output, const GateConvParams<T>& params);

template <typename T>
struct HfNonConservativeResult {
  FeatureSequence<T> features;
  GateTensor<T> add_gates;
  GateTensor<T> sub_gates;
};

/// Ablation with independent gates for the incoming and outgoing transfer:
/// F_t = F'_t + A_t (.) F'_{t+1} - B_{t-1} (.) F'_t. Breaks flow conservation.
template <typename T>
HfNonConservativeResult<T> hf_forward_nonconservative(const FeatureSequence<T>& block_output,
                                                      const GateConvParams<T>& params_add,
                                                      const GateConvParams<T>& params_sub);

/// Reference evaluation of the transfer rule one timestep at a time, on plain
/// tensors. `features` is [clips*T, C, H, W], `gates` is [clips*T, 1, H, W].
template <typename T>
Tensor<T> hf_forward_sequential(const Tensor<T>& features, const Tensor<T>& gates, const Segmentation& segments);

/// Gates by direct nested-loop evaluation of the 2x3x3 conv and tanh, one
/// timestep at a time, without the tape. Same reduction order as conv3d.
template <typename T>
Tensor<T> compute_gates_reference(const Tensor<T>& features, const Tensor<T>& weight, const Tensor<T>& bias,
                                  const Segmentation& segments);

/// Sequential reference with separate incoming/outgoing gates.
template <typename T>
Tensor<T> hf_transfer_sequential(const Tensor<T>& features, const Tensor<T>& add_gates, const Tensor<T>& sub_gates,
                                 const Segmentation& segments);

struct GateSummary {
  double mean = 0.0;
  double mean_abs = 0.0;
  double frac_pos = 0.0;  // share of scalars > 0.1
  double frac_neg = 0.0;  // share of scalars < -0.1
  double min = 0.0;
  double max = 0.0;
  std::size_t count = 0;
  std::vector<double> timestep_means;
};

/// Streaming accumulator, one bucket per timestep; lets statistics span many batches.
class GateAccumulator {
 public:
  explicit GateAccumulator(std::size_t frames);

  template <typename T>
  void add(const Tensor<T>& gates, const Segmentation& segments);

  std::size_t frames() const noexcept { return buckets_.size(); }
  GateSummary overall() const;
  GateSummary at_timestep(std::size_t t) const;  // 0-based

 private:
  struct Bucket {
    double sum = 0.0;
    double sum_abs = 0.0;
    std::size_t pos = 0;
    std::size_t neg = 0;
    std::size_t count = 0;
    double min = 0.0;
    double max = 0.0;
  };
  static GateSummary summarize(const Bucket& b);
  std::vector<Bucket> buckets_;
};

template <typename T>
GateSummary gate_statistics(const Tensor<T>& gates, const Segmentation& segments);

struct GateStatsRow {
  std::size_t layer_index = 0;
  std::size_t timestep = 0;  // 1-based
  GateSummary summary;
};

/// CSV: layer_index,timestep,mean,mean_abs,frac_pos,frac_neg,min,max
void write_gate_stats_csv(std::ostream& os, const std::vector<GateStatsRow>& rows);

}  // namespace hfnet
