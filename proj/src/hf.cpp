#include "hfnet/hf.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>

namespace hfnet {
namespace {

template <typename T>
void check_sequence(const char* op, const Dims& d, const Segmentation& segments) {
  if (d.size() != 4) throw DimensionError(std::string(op) + ": features must be [clips*T,C,H,W], got " + to_string(d));
  if (segments.frames < 1 || d[0] != segments.total()) {
    throw DimensionError(std::string(op) + ": leading axis " + std::to_string(d[0]) + " does not match " +
                         std::to_string(segments.clips) + " clips x " + std::to_string(segments.frames) + " frames");
  }
}

template <typename T>
void check_params(const char* op, const GateConvParams<T>& params, std::size_t channels) {
  if (params.weight.dims() != gate_weight_dims(channels)) {
    throw DimensionError(std::string(op) + ": gate weight dims " + to_string(params.weight.dims()) + " vs expected " +
                         to_string(gate_weight_dims(channels)) + " for " + std::to_string(channels) + " channels");
  }
  if (params.bias.dims() != Dims{1}) throw DimensionError(std::string(op) + ": gate bias must be [1]");
}

// Gates from F+ and its left-shifted copy F-.
template <typename T>
GateTensor<T> gates_from(Var<T> plus, Var<T> minus, const Segmentation& segments, const GateConvParams<T>& params) {
  const Dims& d = plus.dims();
  Var<T> stacked = stack_depth(plus, minus);
  Var<T> pre = conv3d(stacked, params.weight, params.bias, Conv3dGeometry{.stride = {1, 1, 1}, .pad = {0, 1, 1}});
  Var<T> gates = tanh(reshape(pre, Dims{d[0], 1, d[2], d[3]}));
  for (T g : gates.value().data()) {
    // tanh is bounded by 1; float32 rounds saturated values onto the bound itself.
    if (!(std::abs(g) <= T{1})) throw NumericError("compute_gates: gate value " + std::to_string(g) + " outside [-1,1]");
  }
  return GateTensor<T>{gates, segments};
}

template <typename T>
Tensor<T> transfer_reference(const Tensor<T>& f, const Tensor<T>& add_g, const Tensor<T>& sub_g, const Segmentation& seg) {
  const Dims& d = f.dims();
  check_sequence<T>("hf_forward_sequential", d, seg);
  const Dims gd{d[0], 1, d[2], d[3]};
  if (add_g.dims() != gd || sub_g.dims() != gd) {
    throw DimensionError("hf_forward_sequential: gates must be " + to_string(gd) + ", got " + to_string(add_g.dims()) +
                         " / " + to_string(sub_g.dims()));
  }
  const std::size_t C = d[1], HW = d[2] * d[3], T_ = seg.frames;
  Tensor<T> out(d);
  for (std::size_t n = 0; n < seg.clips; ++n) {
    for (std::size_t t = 0; t < T_; ++t) {
      const std::size_t row = n * T_ + t;
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < HW; ++i) {
          const T cur = f[(row * C + c) * HW + i];
          const T next = t + 1 < T_ ? f[((row + 1) * C + c) * HW + i] : T{0};
          const T g_in = add_g[row * HW + i];
          const T g_out_prev = t >= 1 ? sub_g[(row - 1) * HW + i] : T{0};
          out[(row * C + c) * HW + i] = cur + g_in * next - g_out_prev * cur;
        }
      }
    }
  }
  return out;
}

}  // namespace

template <typename T>
GateTensor<T> compute_gates(const FeatureSequence<T>& block_output, const GateConvParams<T>& params) {
  check_sequence<T>("compute_gates", block_output.values.dims(), block_output.segments);
  check_params("compute_gates", params, block_output.values.dims()[1]);
  Var<T> minus = temporal_shift(block_output.values, block_output.segments, ShiftDirection::left);
  return gates_from(block_output.values, minus, block_output.segments, params);
}

template <typename T>
HfResult<T> hf_forward_parallel(const FeatureSequence<T>& block_output, const GateConvParams<T>& params) {
  const Segmentation& seg = block_output.segments;
  check_sequence<T>("hf_forward_parallel", block_output.values.dims(), seg);
  check_params("hf_forward_parallel", params, block_output.values.dims()[1]);
  Var<T> plus = block_output.values;
  Var<T> minus = temporal_shift(plus, seg, ShiftDirection::left);
  GateTensor<T> g_minus = gates_from(plus, minus, seg, params);
  Var<T> g_plus = temporal_shift(g_minus.values, seg, ShiftDirection::right);
  // (1 - G+) (.) F+ is distributed as F+ - G+ (.) F+ so the arithmetic matches
  // the per-timestep rule operation for operation.
  Var<T> out = sub(add(plus, mul(minus, g_minus.values)), mul(plus, g_plus));
  return HfResult<T>{FeatureSequence<T>{out, seg}, g_minus};
}

template <typename T>
HfNonConservativeResult<T> hf_forward_nonconservative(const FeatureSequence<T>& block_output,
                                                      const GateConvParams<T>& params_add,
                                                      const GateConvParams<T>& params_sub) {
  const Segmentation& seg = block_output.segments;
  check_sequence<T>("hf_forward_nonconservative", block_output.values.dims(), seg);
  check_params("hf_forward_nonconservative", params_add, block_output.values.dims()[1]);
  check_params("hf_forward_nonconservative", params_sub, block_output.values.dims()[1]);
  Var<T> plus = block_output.values;
  Var<T> minus = temporal_shift(plus, seg, ShiftDirection::left);
  GateTensor<T> a = gates_from(plus, minus, seg, params_add);
  GateTensor<T> b = gates_from(plus, minus, seg, params_sub);
  Var<T> b_plus = temporal_shift(b.values, seg, ShiftDirection::right);
  Var<T> out = sub(add(plus, mul(minus, a.values)), mul(plus, b_plus));
  return HfNonConservativeResult<T>{FeatureSequence<T>{out, seg}, a, b};
}

template <typename T>
Tensor<T> hf_forward_sequential(const Tensor<T>& features, const Tensor<T>& gates, const Segmentation& segments) {
  return transfer_reference(features, gates, gates, segments);
}

template <typename T>
Tensor<T> hf_transfer_sequential(const Tensor<T>& features, const Tensor<T>& add_gates, const Tensor<T>& sub_gates,
                                 const Segmentation& segments) {
  return transfer_reference(features, add_gates, sub_gates, segments);
}

template <typename T>
Tensor<T> compute_gates_reference(const Tensor<T>& f, const Tensor<T>& weight, const Tensor<T>& bias, const Segmentation& seg) {
  const Dims& d = f.dims();
  check_sequence<T>("compute_gates_reference", d, seg);
  if (weight.dims() != gate_weight_dims(d[1]) || bias.dims() != Dims{1}) {
    throw DimensionError("compute_gates_reference: gate params do not match " + std::to_string(d[1]) + " channels");
  }
  const std::size_t C = d[1], H = d[2], W = d[3], T_ = seg.frames;
  Tensor<T> g(Dims{d[0], 1, H, W});
  for (std::size_t n = 0; n < seg.clips; ++n) {
    for (std::size_t t = 0; t < T_; ++t) {
      const std::size_t row = n * T_ + t;
      for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
          T acc = T{0};
          for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t dt = 0; dt < 2; ++dt) {
              for (std::size_t ky = 0; ky < 3; ++ky) {
                for (std::size_t kx = 0; kx < 3; ++kx) {
                  const long iy = static_cast<long>(y + ky) - 1, ix = static_cast<long>(x + kx) - 1;
                  T v = T{0};
                  if (iy >= 0 && ix >= 0 && iy < static_cast<long>(H) && ix < static_cast<long>(W) && t + dt < T_) {
                    v = f[(((row + dt) * C + c) * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)];
                  }
                  acc += weight[((c * 2 + dt) * 3 + ky) * 3 + kx] * v;
                }
              }
            }
          }
          g[(row * H + y) * W + x] = std::tanh(acc + bias[0]);
        }
      }
    }
  }
  return g;
}

GateAccumulator::GateAccumulator(std::size_t frames) : buckets_(frames) {
  for (Bucket& b : buckets_) {
    b.min = std::numeric_limits<double>::infinity();
    b.max = -std::numeric_limits<double>::infinity();
  }
}

template <typename T>
void GateAccumulator::add(const Tensor<T>& gates, const Segmentation& segments) {
  if (segments.frames != buckets_.size()) {
    throw DimensionError("gate statistics: accumulator has " + std::to_string(buckets_.size()) +
                         " timesteps, gates have " + std::to_string(segments.frames));
  }
  if (gates.rank() < 1 || gates.dim(0) != segments.total()) {
    throw DimensionError("gate statistics: gate dims " + to_string(gates.dims()) + " do not match segmentation");
  }
  const std::size_t frame = segments.total() ? gates.numel() / segments.total() : 0;
  for (std::size_t row = 0; row < segments.total(); ++row) {
    Bucket& b = buckets_[row % segments.frames];
    for (std::size_t i = 0; i < frame; ++i) {
      const double g = gates[row * frame + i];
      b.sum += g;
      b.sum_abs += std::abs(g);
      b.pos += g > 0.1;
      b.neg += g < -0.1;
      b.min = std::min(b.min, g);
      b.max = std::max(b.max, g);
      ++b.count;
    }
  }
}

GateSummary GateAccumulator::summarize(const Bucket& b) {
  GateSummary s;
  s.count = b.count;
  if (b.count == 0) return s;
  const double n = static_cast<double>(b.count);
  s.mean = b.sum / n;
  s.mean_abs = b.sum_abs / n;
  s.frac_pos = static_cast<double>(b.pos) / n;
  s.frac_neg = static_cast<double>(b.neg) / n;
  s.min = b.min;
  s.max = b.max;
  return s;
}

GateSummary GateAccumulator::at_timestep(std::size_t t) const {
  GateSummary s = summarize(buckets_.at(t));
  s.timestep_means = {s.mean};
  return s;
}

GateSummary GateAccumulator::overall() const {
  Bucket all;
  all.min = std::numeric_limits<double>::infinity();
  all.max = -std::numeric_limits<double>::infinity();
  for (const Bucket& b : buckets_) {
    all.sum += b.sum;
    all.sum_abs += b.sum_abs;
    all.pos += b.pos;
    all.neg += b.neg;
    all.count += b.count;
    all.min = std::min(all.min, b.min);
    all.max = std::max(all.max, b.max);
  }
  GateSummary s = summarize(all);
  for (const Bucket& b : buckets_) s.timestep_means.push_back(b.count ? b.sum / static_cast<double>(b.count) : 0.0);
  return s;
}

template <typename T>
GateSummary gate_statistics(const Tensor<T>& gates, const Segmentation& segments) {
  GateAccumulator acc(segments.frames);
  acc.add(gates, segments);
  return acc.overall();
}

void write_gate_stats_csv(std::ostream& os, const std::vector<GateStatsRow>& rows) {
  os << "layer_index,timestep,mean,mean_abs,frac_pos,frac_neg,min,max\n";
  const auto old = os.precision(std::numeric_limits<double>::max_digits10);
  for (const GateStatsRow& r : rows) {
    const GateSummary& s = r.summary;
    os << r.layer_index << ',' << r.timestep << ',' << s.mean << ',' << s.mean_abs << ',' << s.frac_pos << ','
       << s.frac_neg << ',' << s.min << ',' << s.max << '\n';
  }
  os.precision(old);
}

#define HFNET_INSTANTIATE_HF(T)                                                                                   \
  template GateTensor<T> compute_gates(const FeatureSequence<T>&, const GateConvParams<T>&);                      \
  template HfResult<T> hf_forward_parallel(const FeatureSequence<T>&, const GateConvParams<T>&);                  \
  template HfNonConservativeResult<T> hf_forward_nonconservative(const FeatureSequence<T>&,                       \
                                                                 const GateConvParams<T>&,                        \
                                                                 const GateConvParams<T>&);                       \
  template Tensor<T> hf_forward_sequential(const Tensor<T>&, const Tensor<T>&, const Segmentation&);              \
  template Tensor<T> hf_transfer_sequential(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                 \
                                            const Segmentation&);                                                 \
  template Tensor<T> compute_gates_reference(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Segmentation&); \
  template void GateAccumulator::add(const Tensor<T>&, const Segmentation&);                                      \
  template GateSummary gate_statistics(const Tensor<T>&, const Segmentation&);

HFNET_INSTANTIATE_HF(float)
HFNET_INSTANTIATE_HF(double)

}  // namespace hfnet
