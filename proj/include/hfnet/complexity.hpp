#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "hfnet/model.hpp"

namespace hfnet {

/// Feature map seen by one HF module.
struct HfInsertion {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  friend bool operator==(const HfInsertion&, const HfInsertion&) = default;
};

/// Channel/spatial description of an external architecture's HF insertion
/// points, with optional baseline totals supplied from outside.
struct ArchChannelSpec {
  std::string name;
  std::optional<std::uint64_t> baseline_params;
  std::optional<std::uint64_t> baseline_flops;
  std::vector<HfInsertion> insertions;
  std::size_t frames = 1;
  HfVariant variant = HfVariant::conservative;

  void validate() const;
  friend bool operator==(const ArchChannelSpec&, const ArchChannelSpec&) = default;
};

/// FLOPs charged per multiply-add.
enum class MacConvention { two, one };

// Costs are per HF module per frame unless noted:
//   gate conv   2*18*C*H*W  (mac=2)  or 18*C*H*W (mac=1)
//   tanh        H*W
//   transfer    4*C*H*W: two broadcast products, one add, one subtract.
// The non-conservative variant runs two gate convs and two tanh maps.
struct HfFlops {
  std::uint64_t gate_conv = 0;
  std::uint64_t tanh = 0;
  std::uint64_t transfer = 0;
  std::uint64_t total() const noexcept { return gate_conv + tanh + transfer; }
};

std::uint64_t hf_param_count(const ArchChannelSpec& spec);
HfFlops hf_module_flops(const HfInsertion& at, HfVariant variant, MacConvention mac);
/// Summed over insertions and frames.
std::uint64_t hf_flop_count(const ArchChannelSpec& spec, MacConvention mac = MacConvention::two);

/// The HF insertion points of a toy model, at its block output resolution.
ArchChannelSpec hf_spec_of(const ModelConfig& config);

struct ParamRow {
  std::string name;
  std::string kind;  // conv, batchnorm, hf_gate, consensus, classifier
  std::size_t count = 0;
  bool trainable = true;
};

struct ParamTable {
  std::vector<ParamRow> rows;
  std::size_t trainable = 0;
  std::size_t total = 0;  // includes batch-norm running statistics
  std::size_t hf = 0;
};

/// Enumerates every tensor build_model() would create, without building it.
ParamTable model_param_count(const ModelConfig& config);

struct LayerCost {
  std::string layer_name;
  std::string kind;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;  // one clip of T frames, eval mode
};

struct ComplexityReport {
  std::vector<LayerCost> layers;
  std::uint64_t baseline_params = 0;
  std::uint64_t hf_params = 0;
  std::uint64_t baseline_flops = 0;
  std::uint64_t hf_flops = 0;
  std::uint64_t baseline_flops_mac1 = 0;
  std::uint64_t hf_flops_mac1 = 0;
  bool has_baseline_params = true;
  bool has_baseline_flops = true;

  double hf_param_pct() const;
  double hf_flop_pct() const;
  double hf_flop_pct_mac1() const;
};

/// Eval-mode FLOPs of one clip per layer scope (block{i}, hf{i}, consensus,
/// classifier), matching what the instrumented forward pass counts.
ComplexityReport audit_model(const ModelConfig& config);

/// HF overhead of an external architecture. Baselines are taken as given and
/// used for both conventions.
ComplexityReport audit_arch(const ArchChannelSpec& spec);

/// CSV rows layer_name,kind,params,flops.
void write_cost_csv(std::ostream& os, const ComplexityReport& report);
/// One-line JSON summary.
std::string summary_json(const ComplexityReport& report);

}  // namespace hfnet
