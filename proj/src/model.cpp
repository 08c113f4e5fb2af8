#include "hfnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace hfnet {

namespace {

constexpr double kBnMomentum = 0.1;
constexpr double kBnEps = 1e-5;

std::string block_name(std::size_t i) { return "block" + std::to_string(i); }
std::string hf_name(std::size_t i) { return "hf" + std::to_string(i); }

template <typename T>
Tensor<T> uniform_tensor(Dims dims, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(std::move(dims));
  for (T& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

}  // namespace

void ModelConfig::validate() const {
  if (in_channels < 1 || height < 1 || width < 1) throw ConfigError("model: input dims must be >= 1");
  if (frames_per_clip < 1) throw ConfigError("model: frames_per_clip must be >= 1");
  if (blocks.empty()) throw ConfigError("model: at least one block is required");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (blocks[i].out_channels < 1) throw ConfigError("model: block " + std::to_string(i + 1) + " has zero out_channels");
  }
  if (num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("model: dropout_rate must lie in [0,1)");
  std::set<std::size_t> seen;
  for (std::size_t p : hf_positions) {
    if (p < 1 || p > blocks.size()) {
      throw ConfigError("model: hf position " + std::to_string(p) + " outside blocks 1.." + std::to_string(blocks.size()));
    }
    if (!seen.insert(p).second) throw ConfigError("model: duplicate hf position " + std::to_string(p));
  }
  if ((hf_variant == HfVariant::none) != hf_positions.empty()) {
    throw ConfigError("model: hf_variant 'none' must come with an empty hf_positions list and vice versa");
  }
  (void)block_geometry(*this);
}

bool ModelConfig::has_hf_after(std::size_t block) const {
  return std::find(hf_positions.begin(), hf_positions.end(), block) != hf_positions.end();
}

ModelConfig ModelConfig::toy_default() {
  ModelConfig c;
  c.blocks = {{16, true, PoolAfter::max2}, {32, true, PoolAfter::max2}, {64, true, PoolAfter::max2}, {64, true, PoolAfter::none}};
  c.hf_positions = {1, 2, 3, 4};
  c.hf_variant = HfVariant::conservative;
  return c;
}

ModelConfig ModelConfig::without_hf() const {
  ModelConfig c = *this;
  c.hf_positions.clear();
  c.hf_variant = HfVariant::none;
  return c;
}

std::vector<LayerGeometry> block_geometry(const ModelConfig& config) {
  std::vector<LayerGeometry> out;
  std::size_t h = config.height, w = config.width;
  for (std::size_t i = 0; i < config.blocks.size(); ++i) {
    const BlockSpec& b = config.blocks[i];
    if (b.pool_after == PoolAfter::max2) {
      if (h < 2 || w < 2) {
        throw ConfigError("model: block " + std::to_string(i + 1) + " pools a " + std::to_string(h) + "x" +
                          std::to_string(w) + " map");
      }
      h = (h - 2) / 2 + 1;
      w = (w - 2) / 2 + 1;
    }
    out.push_back({b.out_channels, h, w});
  }
  return out;
}

std::string to_string(HfVariant v) {
  switch (v) {
    case HfVariant::none: return "none";
    case HfVariant::conservative: return "conservative";
    case HfVariant::nonconservative: return "nonconservative";
  }
  return "?";
}

std::string to_string(Consensus c) {
  switch (c) {
    case Consensus::average: return "average";
    case Consensus::relation: return "relation";
    case Consensus::conv3d: return "conv3d";
  }
  return "?";
}

std::string to_string(PoolAfter p) { return p == PoolAfter::max2 ? "max2" : "none"; }

template <typename T>
void ParamStore<T>::add(std::string name, Tensor<T> value, bool trainable) {
  if (contains(name)) throw UsageError("parameter store: duplicate name '" + name + "'");
  entries_.push_back(ParamEntry<T>{std::move(name), std::move(value), trainable});
}

template <typename T>
Tensor<T>& ParamStore<T>::get(const std::string& name) {
  for (auto& e : entries_) {
    if (e.name == name) return e.value;
  }
  throw UsageError("parameter store: no entry '" + name + "'");
}

template <typename T>
const Tensor<T>& ParamStore<T>::get(const std::string& name) const {
  return const_cast<ParamStore*>(this)->get(name);
}

template <typename T>
bool ParamStore<T>::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.name == name; });
}

template <typename T>
std::size_t ParamStore<T>::trainable_scalars() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.trainable ? e.value.numel() : 0;
  return n;
}

template <typename T>
std::size_t ParamStore<T>::total_scalars() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

template <typename T>
Model<T> build_model(const ModelConfig& config, Rng& rng) {
  config.validate();
  Model<T> model{config, {}};
  ParamStore<T>& ps = model.params;
  const auto geom = block_geometry(config);
  std::size_t in_c = config.in_channels;
  for (std::size_t i = 1; i <= config.blocks.size(); ++i) {
    const BlockSpec& b = config.blocks[i - 1];
    const std::string base = block_name(i);
    const double bound = std::sqrt(6.0 / static_cast<double>(in_c * 9));
    ps.add(base + ".conv.weight", uniform_tensor<T>(Dims{b.out_channels, in_c, 3, 3}, bound, rng));
    ps.add(base + ".conv.bias", Tensor<T>(Dims{b.out_channels}));
    if (b.use_batchnorm) {
      ps.add(base + ".bn.gamma", Tensor<T>::full(Dims{b.out_channels}, T{1}));
      ps.add(base + ".bn.beta", Tensor<T>(Dims{b.out_channels}));
      ps.add(base + ".bn.running_mean", Tensor<T>(Dims{b.out_channels}), false);
      ps.add(base + ".bn.running_var", Tensor<T>::full(Dims{b.out_channels}, T{1}), false);
    }
    if (config.has_hf_after(i)) {
      const std::string hf = hf_name(i);
      const Dims wd = gate_weight_dims(b.out_channels);
      if (config.hf_variant == HfVariant::conservative) {
        ps.add(hf + ".gate.weight", Tensor<T>(wd));
        ps.add(hf + ".gate.bias", Tensor<T>(Dims{1}));
      } else {
        ps.add(hf + ".gate_add.weight", Tensor<T>(wd));
        ps.add(hf + ".gate_add.bias", Tensor<T>(Dims{1}));
        ps.add(hf + ".gate_sub.weight", Tensor<T>(wd));
        ps.add(hf + ".gate_sub.bias", Tensor<T>(Dims{1}));
      }
    }
    in_c = b.out_channels;
  }
  const std::size_t D = geom.back().channels;
  const std::size_t T_ = config.frames_per_clip;
  if (config.consensus == Consensus::relation) {
    ps.add("consensus.fc1.weight", uniform_tensor<T>(Dims{D, T_ * D}, std::sqrt(6.0 / static_cast<double>(T_ * D)), rng));
    ps.add("consensus.fc1.bias", Tensor<T>(Dims{D}));
    ps.add("consensus.fc2.weight", uniform_tensor<T>(Dims{D, D}, std::sqrt(6.0 / static_cast<double>(D)), rng));
    ps.add("consensus.fc2.bias", Tensor<T>(Dims{D}));
  } else if (config.consensus == Consensus::conv3d) {
    ps.add("consensus.conv3d.weight", uniform_tensor<T>(Dims{D, D, 3, 3, 3}, std::sqrt(6.0 / static_cast<double>(D * 27)), rng));
    ps.add("consensus.conv3d.bias", Tensor<T>(Dims{D}));
  }
  ps.add("classifier.weight", uniform_tensor<T>(Dims{config.num_classes, D}, 1.0 / std::sqrt(static_cast<double>(D)), rng));
  ps.add("classifier.bias", Tensor<T>(Dims{config.num_classes}));
  return model;
}

template <typename T>
Var<T> consensus_average(Var<T> frame_features, const Segmentation& segments) {
  return segment_mean(frame_features, segments);
}

template <typename T>
Var<T> consensus_relation(Var<T> frame_features, const Segmentation& segments, Var<T> fc1_weight, Var<T> fc1_bias,
                          Var<T> fc2_weight, Var<T> fc2_bias) {
  const Dims& d = frame_features.dims();
  if (d.size() != 2 || d[0] != segments.total()) {
    throw DimensionError("consensus_relation: expected [clips*T, D] features, got " + to_string(d));
  }
  if (fc1_weight.dims().size() != 2 || fc1_weight.dims()[1] != segments.frames * d[1]) {
    throw DimensionError("consensus_relation: fc1 expects input width " +
                         (fc1_weight.dims().size() == 2 ? std::to_string(fc1_weight.dims()[1]) : std::string("?")) +
                         " but T*D = " + std::to_string(segments.frames * d[1]));
  }
  Var<T> joined = reshape(frame_features, Dims{segments.clips, segments.frames * d[1]});
  return linear(relu(linear(joined, fc1_weight, fc1_bias)), fc2_weight, fc2_bias);
}

template <typename T>
Var<T> consensus_conv3d(Var<T> frame_maps, const Segmentation& segments, Var<T> weight, Var<T> bias) {
  if (segments.frames < 1) throw DimensionError("consensus_conv3d: T must be >= 1");
  Var<T> volume = frames_to_volume(frame_maps, segments);
  Var<T> act = relu(conv3d(volume, weight, bias, Conv3dGeometry{.stride = {1, 1, 1}, .pad = {1, 1, 1}}));
  const Dims& d = act.dims();
  return pool(reshape(act, Dims{d[0], d[1], d[2] * d[3], d[4]}), PoolKind::global_avg);
}

template <typename T>
ForwardTrace<T> forward(Tape<T>& tape, Model<T>& model, Var<T> clips, Mode mode, Rng& rng, bool params_require_grad) {
  std::vector<Var<T>> vars;
  for (auto& e : model.params.entries()) {
    if (e.trainable) vars.push_back(tape.leaf(e.value, params_require_grad));
  }
  return forward_with(tape, model, clips, mode, rng, std::span<const Var<T>>(vars));
}

template <typename T>
ForwardTrace<T> forward_with(Tape<T>& tape, Model<T>& model, Var<T> clips, Mode mode, Rng& rng,
                             std::span<const Var<T>> trainable) {
  const ModelConfig& cfg = model.config;
  const Dims& cd = clips.dims();
  if (cd.size() != 4 || cd[1] != cfg.in_channels || cd[2] != cfg.height || cd[3] != cfg.width ||
      cd[0] % cfg.frames_per_clip != 0 || cd[0] == 0) {
    throw DimensionError("forward: clips " + to_string(cd) + " do not match model input [N*" +
                         std::to_string(cfg.frames_per_clip) + "," + std::to_string(cfg.in_channels) + "," +
                         std::to_string(cfg.height) + "," + std::to_string(cfg.width) + "]");
  }
  const Segmentation seg{cd[0] / cfg.frames_per_clip, cfg.frames_per_clip};

  ForwardTrace<T> trace;
  auto param = [&](const std::string& name) -> Var<T> {
    for (auto& [n, v] : trace.bound_params) {
      if (n == name) return v;
    }
    throw UsageError("forward: parameter '" + name + "' not bound");
  };
  std::size_t next = 0;
  for (auto& e : model.params.entries()) {
    if (!e.trainable) continue;
    if (next >= trainable.size() || trainable[next].dims() != e.value.dims()) {
      throw UsageError("forward: bound variables do not match trainable parameter '" + e.name + "'");
    }
    trace.bound_params.emplace_back(e.name, trainable[next++]);
  }
  if (next != trainable.size()) throw UsageError("forward: more bound variables than trainable parameters");

  Var<T> x = clips;
  for (std::size_t i = 1; i <= cfg.blocks.size(); ++i) {
    const BlockSpec& b = cfg.blocks[i - 1];
    const std::string base = block_name(i);
    {
      auto scope = tape.scope(base);
      x = conv2d(x, param(base + ".conv.weight"), param(base + ".conv.bias"), Conv2dGeometry{.stride = {1, 1}, .pad = {1, 1}});
      if (b.use_batchnorm) {
        RunningStats<T> stats{model.params.get(base + ".bn.running_mean"), model.params.get(base + ".bn.running_var")};
        x = batchnorm2d(x, param(base + ".bn.gamma"), param(base + ".bn.beta"), stats, mode, static_cast<T>(kBnMomentum),
                        static_cast<T>(kBnEps));
      }
      x = relu(x);
      if (b.pool_after == PoolAfter::max2) x = pool(x, PoolKind::max2d, 2, 2);
    }
    if (cfg.has_hf_after(i)) {
      auto scope = tape.scope(hf_name(i));
      const std::string hf = hf_name(i);
      FeatureSequence<T> fs{x, seg};
      if (cfg.hf_variant == HfVariant::conservative) {
        auto r = hf_forward_parallel(fs, GateConvParams<T>{param(hf + ".gate.weight"), param(hf + ".gate.bias")});
        x = r.features.values;
        trace.gates.emplace_back(i, r.gates);
      } else {
        auto r = hf_forward_nonconservative(fs, GateConvParams<T>{param(hf + ".gate_add.weight"), param(hf + ".gate_add.bias")},
                                            GateConvParams<T>{param(hf + ".gate_sub.weight"), param(hf + ".gate_sub.bias")});
        x = r.features.values;
        trace.gates.emplace_back(i, r.add_gates);
      }
    }
  }

  Var<T> clip_repr;
  {
    auto scope = tape.scope("consensus");
    trace.frame_features = pool(x, PoolKind::global_avg);
    switch (cfg.consensus) {
      case Consensus::average: clip_repr = consensus_average(trace.frame_features, seg); break;
      case Consensus::relation:
        clip_repr = consensus_relation(trace.frame_features, seg, param("consensus.fc1.weight"), param("consensus.fc1.bias"),
                                       param("consensus.fc2.weight"), param("consensus.fc2.bias"));
        break;
      case Consensus::conv3d:
        clip_repr = consensus_conv3d(x, seg, param("consensus.conv3d.weight"), param("consensus.conv3d.bias"));
        break;
    }
  }
  auto scope = tape.scope("classifier");
  Var<T> dropped = dropout(clip_repr, cfg.dropout_rate, mode, rng);
  trace.logits = linear(dropped, param("classifier.weight"), param("classifier.bias"));
  return trace;
}

#define HFNET_INSTANTIATE_MODEL(T)                                                                              \
  template class ParamStore<T>;                                                                                 \
  template Model<T> build_model(const ModelConfig&, Rng&);                                                      \
  template ForwardTrace<T> forward(Tape<T>&, Model<T>&, Var<T>, Mode, Rng&, bool);                              \
  template ForwardTrace<T> forward_with(Tape<T>&, Model<T>&, Var<T>, Mode, Rng&, std::span<const Var<T>>);        \
  template Var<T> consensus_average(Var<T>, const Segmentation&);                                               \
  template Var<T> consensus_relation(Var<T>, const Segmentation&, Var<T>, Var<T>, Var<T>, Var<T>);              \
  template Var<T> consensus_conv3d(Var<T>, const Segmentation&, Var<T>, Var<T>);

HFNET_INSTANTIATE_MODEL(float)
HFNET_INSTANTIATE_MODEL(double)

}  // namespace hfnet
