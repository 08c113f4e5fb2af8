#include "hfnet/complexity.hpp"

#include <ostream>

#include "hfnet/config_io.hpp"

namespace hfnet {

namespace {

std::uint64_t macs(std::uint64_t n, MacConvention mac) { return mac == MacConvention::two ? 2 * n : n; }

double pct(std::uint64_t part, std::uint64_t whole) {
  return whole ? 100.0 * static_cast<double>(part) / static_cast<double>(whole) : 0.0;
}

struct ModelCosts {
  std::vector<LayerCost> layers;
  std::vector<std::uint64_t> mac1;  // same rows under mac=1
};

ModelCosts model_costs(const ModelConfig& c) {
  c.validate();
  ModelCosts out;
  const auto geom = block_geometry(c);
  const std::uint64_t T = c.frames_per_clip;
  const auto table = model_param_count(c);
  auto params_with_prefix = [&](const std::string& prefix) {
    std::uint64_t n = 0;
    for (const ParamRow& r : table.rows) {
      if (r.trainable && r.name.rfind(prefix, 0) == 0) n += r.count;
    }
    return n;
  };
  auto push = [&](std::string name, std::string kind, std::uint64_t flops2, std::uint64_t flops1) {
    out.layers.push_back({name, std::move(kind), params_with_prefix(name + "."), flops2});
    out.mac1.push_back(flops1);
  };

  std::uint64_t in_c = c.in_channels, h = c.height, w = c.width;
  for (std::size_t i = 0; i < c.blocks.size(); ++i) {
    const BlockSpec& b = c.blocks[i];
    const std::uint64_t co = b.out_channels, hw = h * w;
    const std::uint64_t conv_mac = 9 * in_c * co * hw * T;
    std::uint64_t rest = co * hw * T;  // relu
    if (b.use_batchnorm) rest += 2 * co * hw * T;
    if (b.pool_after == PoolAfter::max2) rest += co * hw * T;
    push("block" + std::to_string(i + 1), "conv_block", 2 * conv_mac + rest, conv_mac + rest);
    const LayerGeometry& g = geom[i];
    if (c.has_hf_after(i + 1)) {
      const HfInsertion at{g.channels, g.height, g.width};
      push("hf" + std::to_string(i + 1), "hf", T * hf_module_flops(at, c.hf_variant, MacConvention::two).total(),
           T * hf_module_flops(at, c.hf_variant, MacConvention::one).total());
    }
    in_c = g.channels;
    h = g.height;
    w = g.width;
  }

  const std::uint64_t D = in_c, hw = h * w;
  // The frame descriptors are always pooled, whichever head consumes them.
  std::uint64_t cons2 = D * hw * T, cons1 = D * hw * T;
  switch (c.consensus) {
    case Consensus::average:
      cons2 += D * T;
      cons1 += D * T;
      break;
    case Consensus::relation: {
      const std::uint64_t fc = T * D * D + D * D;
      cons2 += 2 * fc + D;
      cons1 += fc + D;
      break;
    }
    case Consensus::conv3d: {
      const std::uint64_t conv = 27 * D * D * T * hw;
      cons2 += 2 * conv + 2 * D * T * hw;
      cons1 += conv + 2 * D * T * hw;
      break;
    }
  }
  push("consensus", "consensus", cons2, cons1);
  const std::uint64_t cls = c.num_classes * D;
  push("classifier", "classifier", 2 * cls, cls);
  return out;
}

}  // namespace

void ArchChannelSpec::validate() const {
  if (frames < 1) throw ConfigError("arch spec: frames must be >= 1");
  if (variant == HfVariant::none) throw ConfigError("arch spec: hf variant must be conservative or nonconservative");
  for (std::size_t i = 0; i < insertions.size(); ++i) {
    const HfInsertion& in = insertions[i];
    if (in.channels < 1 || in.height < 1 || in.width < 1) {
      throw ConfigError("arch spec: insertion " + std::to_string(i + 1) + " needs channels and spatial dims >= 1");
    }
  }
}

std::uint64_t hf_param_count(const ArchChannelSpec& spec) {
  spec.validate();
  std::uint64_t n = 0;
  for (const HfInsertion& in : spec.insertions) n += gate_param_count(in.channels);
  return spec.variant == HfVariant::nonconservative ? 2 * n : n;
}

HfFlops hf_module_flops(const HfInsertion& at, HfVariant variant, MacConvention mac) {
  const std::uint64_t hw = at.height * at.width, c = at.channels;
  const std::uint64_t gates = variant == HfVariant::nonconservative ? 2 : 1;
  return HfFlops{gates * macs(18 * c * hw, mac), gates * hw, 4 * c * hw};
}

std::uint64_t hf_flop_count(const ArchChannelSpec& spec, MacConvention mac) {
  spec.validate();
  std::uint64_t n = 0;
  for (const HfInsertion& in : spec.insertions) n += hf_module_flops(in, spec.variant, mac).total();
  return n * spec.frames;
}

ArchChannelSpec hf_spec_of(const ModelConfig& config) {
  config.validate();
  ArchChannelSpec s;
  s.name = "model";
  s.frames = config.frames_per_clip;
  s.variant = config.hf_variant == HfVariant::none ? HfVariant::conservative : config.hf_variant;
  const auto geom = block_geometry(config);
  for (std::size_t i = 0; i < geom.size(); ++i) {
    if (config.has_hf_after(i + 1)) s.insertions.push_back({geom[i].channels, geom[i].height, geom[i].width});
  }
  return s;
}

ParamTable model_param_count(const ModelConfig& c) {
  c.validate();
  ParamTable t;
  auto add = [&](std::string name, std::string kind, std::size_t n, bool trainable = true) {
    t.rows.push_back({std::move(name), std::move(kind), n, trainable});
    t.total += n;
    if (trainable) t.trainable += n;
    if (t.rows.back().kind == "hf_gate") t.hf += n;
  };
  std::size_t in_c = c.in_channels;
  for (std::size_t i = 1; i <= c.blocks.size(); ++i) {
    const BlockSpec& b = c.blocks[i - 1];
    const std::string base = "block" + std::to_string(i);
    const std::size_t co = b.out_channels;
    add(base + ".conv.weight", "conv", co * in_c * 9);
    add(base + ".conv.bias", "conv", co);
    if (b.use_batchnorm) {
      add(base + ".bn.gamma", "batchnorm", co);
      add(base + ".bn.beta", "batchnorm", co);
      add(base + ".bn.running_mean", "batchnorm", co, false);
      add(base + ".bn.running_var", "batchnorm", co, false);
    }
    if (c.has_hf_after(i)) {
      const std::string hf = "hf" + std::to_string(i);
      const std::vector<std::string> gates =
          c.hf_variant == HfVariant::conservative ? std::vector<std::string>{".gate"} : std::vector<std::string>{".gate_add", ".gate_sub"};
      for (const std::string& g : gates) {
        add(hf + g + ".weight", "hf_gate", 18 * co);
        add(hf + g + ".bias", "hf_gate", 1);
      }
    }
    in_c = co;
  }
  const std::size_t D = in_c, T = c.frames_per_clip;
  if (c.consensus == Consensus::relation) {
    add("consensus.fc1.weight", "consensus", D * T * D);
    add("consensus.fc1.bias", "consensus", D);
    add("consensus.fc2.weight", "consensus", D * D);
    add("consensus.fc2.bias", "consensus", D);
  } else if (c.consensus == Consensus::conv3d) {
    add("consensus.conv3d.weight", "consensus", D * D * 27);
    add("consensus.conv3d.bias", "consensus", D);
  }
  add("classifier.weight", "classifier", c.num_classes * D);
  add("classifier.bias", "classifier", c.num_classes);
  return t;
}

double ComplexityReport::hf_param_pct() const { return pct(hf_params, baseline_params); }
double ComplexityReport::hf_flop_pct() const { return pct(hf_flops, baseline_flops); }
double ComplexityReport::hf_flop_pct_mac1() const { return pct(hf_flops_mac1, baseline_flops_mac1); }

ComplexityReport audit_model(const ModelConfig& config) {
  const ModelCosts costs = model_costs(config);
  ComplexityReport r;
  r.layers = costs.layers;
  for (std::size_t i = 0; i < costs.layers.size(); ++i) {
    const LayerCost& l = costs.layers[i];
    if (l.kind == "hf") {
      r.hf_params += l.params;
      r.hf_flops += l.flops;
      r.hf_flops_mac1 += costs.mac1[i];
    } else {
      r.baseline_params += l.params;
      r.baseline_flops += l.flops;
      r.baseline_flops_mac1 += costs.mac1[i];
    }
  }
  return r;
}

ComplexityReport audit_arch(const ArchChannelSpec& spec) {
  spec.validate();
  ComplexityReport r;
  for (std::size_t i = 0; i < spec.insertions.size(); ++i) {
    const HfInsertion& in = spec.insertions[i];
    const std::uint64_t per = (spec.variant == HfVariant::nonconservative ? 2 : 1) * gate_param_count(in.channels);
    r.layers.push_back({"hf" + std::to_string(i + 1), "hf", per,
                        spec.frames * hf_module_flops(in, spec.variant, MacConvention::two).total()});
  }
  r.hf_params = hf_param_count(spec);
  r.hf_flops = hf_flop_count(spec, MacConvention::two);
  r.hf_flops_mac1 = hf_flop_count(spec, MacConvention::one);
  r.has_baseline_params = spec.baseline_params.has_value();
  r.has_baseline_flops = spec.baseline_flops.has_value();
  r.baseline_params = spec.baseline_params.value_or(0);
  r.baseline_flops = spec.baseline_flops.value_or(0);
  r.baseline_flops_mac1 = r.baseline_flops;
  return r;
}

void write_cost_csv(std::ostream& os, const ComplexityReport& report) {
  os << "layer_name,kind,params,flops\n";
  for (const LayerCost& l : report.layers) os << l.layer_name << ',' << l.kind << ',' << l.params << ',' << l.flops << '\n';
}

std::string summary_json(const ComplexityReport& r) {
  auto opt_num = [](bool has, auto v) { return has ? Json(v) : Json(nullptr); };
  Json j{{"baseline_params", opt_num(r.has_baseline_params, r.baseline_params)},
         {"hf_params", r.hf_params},
         {"hf_param_pct", opt_num(r.has_baseline_params, r.hf_param_pct())},
         {"baseline_flops", opt_num(r.has_baseline_flops, r.baseline_flops)},
         {"hf_flops", r.hf_flops},
         {"hf_flop_pct", opt_num(r.has_baseline_flops, r.hf_flop_pct())},
         {"hf_flops_mac1", r.hf_flops_mac1},
         {"hf_flop_pct_mac1", opt_num(r.has_baseline_flops, r.hf_flop_pct_mac1())}};
  return j.dump();
}

}  // namespace hfnet
