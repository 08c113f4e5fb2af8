#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "hfnet/gradcheck.hpp"
#include "hfnet/hf.hpp"

namespace hfnet {

/// The HF forward implementation under test. Swappable so that a deliberately
/// broken variant can be checked to fail.
struct HfImplementation {
  std::function<HfResult<float>(const FeatureSequence<float>&, const GateConvParams<float>&)> f32 =
      [](const FeatureSequence<float>& x, const GateConvParams<float>& p) { return hf_forward_parallel(x, p); };
  std::function<HfResult<double>(const FeatureSequence<double>&, const GateConvParams<double>&)> f64 =
      [](const FeatureSequence<double>& x, const GateConvParams<double>& p) { return hf_forward_parallel(x, p); };
};

struct HfInstance {
  Segmentation segments;
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  Tensor<double> features;  // [clips*T, C, H, W]
  Tensor<double> weight;    // [1, C, 2, 3, 3]
  Tensor<double> bias;      // [1]
};

/// Instance `index` of the randomized family: T cycles through {1,2,3,8},
/// C through {1,3,16}, spatial through {1x1,5x5,8x8}; 1-2 clips; normal
/// features, gate weights scaled so the gates spread over (-1,1).
HfInstance make_hf_instance(std::uint64_t seed, std::size_t index);

struct SuiteResult {
  std::string suite;
  std::string check;
  bool passed = false;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::size_t cases = 0;
  std::string detail;
};

struct VerifyOptions {
  std::uint64_t seed = 2024;
  std::size_t instances = 500;
  HfImplementation hf;
};

/// Per coordinate, |sum_t out - sum_t in| / max(sum_t |in|, 1e-300), worst case.
std::vector<SuiteResult> verify_conservation(const VerifyOptions& options = {});
/// Parallel realization against per-timestep evaluation with independently
/// computed gates: exact in float64, 1e-6 relative in float32.
std::vector<SuiteResult> verify_equivalence(const VerifyOptions& options = {});
/// Central differences (h=1e-5, float64) for every tensor op, the HF block and
/// a two-block model.
std::vector<SuiteResult> verify_gradcheck(const VerifyOptions& options = {});

struct GradCase {
  std::string name;
  DifferentiableFn fn;
  std::vector<Tensor<double>> inputs;
};
std::vector<GradCase> gradcheck_cases(std::uint64_t seed);

/// Suite names: gradcheck, conservation, equivalence, all.
std::vector<SuiteResult> run_verify(const std::string& suite, const VerifyOptions& options = {});

void write_verify_table(std::ostream& os, const std::vector<SuiteResult>& results);

}  // namespace hfnet
