#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>

#include "hfnet/tape.hpp"
#include "hfnet/tensor.hpp"

namespace hfnet {

using Rng = std::mt19937_64;

enum class Mode { train, eval };

/// Partition of a leading batch-time axis into `clips` runs of `frames`
/// consecutive entries. Temporal ops never move data across runs.
struct Segmentation {
  std::size_t clips = 1;
  std::size_t frames = 1;

  std::size_t total() const noexcept { return clips * frames; }
  friend bool operator==(const Segmentation&, const Segmentation&) = default;
};

struct Conv2dGeometry {
  std::array<std::size_t, 2> stride{1, 1};
  std::array<std::size_t, 2> pad{0, 0};
};

struct Conv3dGeometry {
  std::array<std::size_t, 3> stride{1, 1, 1};
  std::array<std::size_t, 3> pad{0, 0, 0};
};

// Convolution is cross-correlation (no kernel flip). Input may omit the batch
// axis ([C,H,W] / [C,D,H,W]); the output then omits it too.
template <typename T>
Var<T> conv2d(Var<T> input, Var<T> weight, Var<T> bias, const Conv2dGeometry& geometry = {});
template <typename T>
Var<T> conv3d(Var<T> input, Var<T> weight, Var<T> bias, const Conv3dGeometry& geometry = {});

// Binary elementwise ops: `b` must match `a` or have extent 1 on the axes it
// stretches over (same rank). Backward sums over stretched axes.
template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);

template <typename T>
Var<T> tanh(Var<T> x);
template <typename T>
Var<T> relu(Var<T> x);
template <typename T>
Var<T> scale(Var<T> x, T factor);
template <typename T>
Var<T> add_scalar(Var<T> x, T offset);
/// 1 - x
template <typename T>
Var<T> complement(Var<T> x);

enum class ShiftDirection { left, right };

/// left:  out[t] = x[t+1], last frame of each clip zero.
/// right: out[t] = x[t-1], first frame of each clip zero.
template <typename T>
Var<T> temporal_shift(Var<T> x, const Segmentation& segments, ShiftDirection direction);

/// Two [N,C,H,W] tensors -> [N,C,2,H,W] with `first` at depth 0.
template <typename T>
Var<T> stack_depth(Var<T> first, Var<T> second);

template <typename T>
Var<T> reshape(Var<T> x, Dims dims);

enum class PoolKind { max2d, avg2d, global_avg };

/// max2d/avg2d act on the trailing two axes with a square window, no padding.
/// Max ties resolve to the lowest linear index. global_avg averages the
/// trailing two axes away.
template <typename T>
Var<T> pool(Var<T> x, PoolKind kind, std::size_t kernel = 2, std::size_t stride = 2);

template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias);

/// Views of the running mean/variance buffers owned by a model.
template <typename T>
struct RunningStats {
  Tensor<T>& mean;
  Tensor<T>& var;
};

/// Per-channel normalization over (N,H,W). Train mode also updates `stats`
/// as stats = (1-momentum)*stats + momentum*batch, with unbiased variance.
template <typename T>
Var<T> batchnorm2d(Var<T> x, Var<T> gamma, Var<T> beta, RunningStats<T> stats, Mode mode, T momentum, T eps);

/// Inverted dropout: survivors scaled by 1/(1-rate) in train mode.
template <typename T>
Var<T> dropout(Var<T> x, double rate, Mode mode, Rng& rng);

/// Mean cross-entropy over the batch. Labels are 1-based class ids.
template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels);

template <typename T>
Var<T> sum(Var<T> x);

/// [N*T, ...] -> [N, ...], averaging the T frames of each clip.
template <typename T>
Var<T> segment_mean(Var<T> x, const Segmentation& segments);

/// [N*T, C, h, w] -> [N, C, T, h, w].
template <typename T>
Var<T> frames_to_volume(Var<T> x, const Segmentation& segments);

/// Rows [first, first+count) of the leading axis.
template <typename T>
Var<T> slice_rows(Var<T> x, std::size_t first, std::size_t count);

}  // namespace hfnet
