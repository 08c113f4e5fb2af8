#include "hfnet/verify.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>
#include <algorithm>

#include "hfnet/errors.hpp"
#include "hfnet/model.hpp"

namespace hfnet {

namespace {

constexpr std::size_t kFrames[] = {1, 2, 3, 8};
constexpr std::size_t kChannels[] = {1, 3, 16};
constexpr std::size_t kSpatial[] = {1, 5, 8};

// Normal draws truncated to |x| <= 2.
Tensor<double> normal(Dims dims, Rng& rng, double stddev = 1.0) {
  std::normal_distribution<double> nd(0.0, stddev);
  Tensor<double> t(std::move(dims));
  for (double& v : t.data()) {
    do {
      v = nd(rng);
    } while (std::abs(v) > 2.0);
  }
  return t;
}

// Normal draws kept at least `margin` away from zero, so ReLU kinks and
// max-pool ties stay out of reach of a finite-difference step. Also used for
// loss weights: a gradient that is a single weight must not sit below the
// finite-difference noise floor.
Tensor<double> normal_off_zero(Dims dims, Rng& rng, double margin = 1e-2) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Tensor<double> t(std::move(dims));
  for (double& v : t.data()) {
    do {
      v = nd(rng);
    } while (std::abs(v) < margin || std::abs(v) > 2.0);
  }
  return t;
}

double eval_scalar(const DifferentiableFn& f, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (const auto& in : inputs) vars.push_back(tape.leaf(in, false));
  return f(tape, vars).value()[0];
}

// Largest gap between central differences at h and h/2 over all coordinates.
// Smooth functions keep it at rounding level; a ReLU or max-pool kink inside
// the step shows up as a gap of the order of the gradient itself.
double fd_step_gap(const DifferentiableFn& f, std::vector<Tensor<double>> x, double h) {
  double gap = 0.0;
  for (auto& t : x) {
    for (std::size_t j = 0; j < t.numel(); ++j) {
      const double saved = t[j];
      double fd[2];
      for (int k = 0; k < 2; ++k) {
        const double s = k == 0 ? h : h / 2;
        t[j] = saved + s;
        const double up = eval_scalar(f, x);
        t[j] = saved - s;
        const double down = eval_scalar(f, x);
        fd[k] = (up - down) / (2 * s);
      }
      t[j] = saved;
      gap = std::max(gap, std::abs(fd[0] - fd[1]));
    }
  }
  return gap;
}

Var<double> weighted_sum(Var<double> x, const Tensor<double>& r) { return sum(mul(x, x.tape->constant(r))); }

template <typename T>
FeatureSequence<T> as_sequence(Tape<T>& tape, const HfInstance& in, bool requires_grad = false) {
  return FeatureSequence<T>{tape.leaf(in.features.cast<T>(), requires_grad), in.segments};
}

// Worst per-coordinate conservation error of one output against its input.
template <typename T>
double conservation_error(const Tensor<T>& in, const Tensor<T>& out, const Segmentation& seg) {
  const std::size_t frame = in.numel() / seg.total();
  double worst = 0.0;
  for (std::size_t n = 0; n < seg.clips; ++n) {
    for (std::size_t i = 0; i < frame; ++i) {
      double s_in = 0.0, s_out = 0.0, mass = 0.0;
      for (std::size_t t = 0; t < seg.frames; ++t) {
        const std::size_t at = (n * seg.frames + t) * frame + i;
        s_in += static_cast<double>(in[at]);
        s_out += static_cast<double>(out[at]);
        mass += std::abs(static_cast<double>(in[at]));
      }
      worst = std::max(worst, std::abs(s_out - s_in) / std::max(mass, 1e-300));
    }
  }
  return worst;
}

template <typename T>
double max_elementwise_rel(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dims() != b.dims()) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double x = a[i], y = b[i];
    if (x == y) continue;
    if (!std::isfinite(x) || !std::isfinite(y)) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, std::abs(x - y) / std::max({std::abs(x), std::abs(y), 1e-30}));
  }
  return worst;
}

SuiteResult make_result(std::string suite, std::string check, double err, double tol, std::size_t cases, std::string detail = {}) {
  return SuiteResult{std::move(suite), std::move(check), err <= tol, err, tol, cases, std::move(detail)};
}

}  // namespace

HfInstance make_hf_instance(std::uint64_t seed, std::size_t index) {
  HfInstance in;
  const std::size_t T = kFrames[index % 4];
  in.channels = kChannels[(index / 4) % 3];
  in.height = in.width = kSpatial[(index / 12) % 3];
  in.segments = Segmentation{1 + (index / 36) % 2, T};
  Rng rng(seed * 1000003ULL + index);
  in.features = normal(Dims{in.segments.total(), in.channels, in.height, in.width}, rng);
  in.weight = normal(gate_weight_dims(in.channels), rng, 1.0 / std::sqrt(18.0 * static_cast<double>(in.channels)));
  in.bias = normal(Dims{1}, rng, 0.5);
  return in;
}

std::vector<SuiteResult> verify_conservation(const VerifyOptions& options) {
  double err32 = 0.0, err64 = 0.0;
  std::size_t worst32 = 0, worst64 = 0;
  for (std::size_t i = 0; i < options.instances; ++i) {
    const HfInstance in = make_hf_instance(options.seed, i);
    {
      Tape<double> tape;
      auto r = options.hf.f64(as_sequence<double>(tape, in),
                              bind_gate_params(tape, in.weight, in.bias, false));
      const double e = conservation_error(in.features, r.features.values.value(), in.segments);
      if (e > err64 || i == 0) err64 = e, worst64 = i;
    }
    {
      Tape<float> tape;
      const Tensor<float> f = in.features.cast<float>();
      auto r = options.hf.f32(FeatureSequence<float>{tape.constant(f), in.segments},
                              bind_gate_params(tape, in.weight.cast<float>(), in.bias.cast<float>(), false));
      const double e = conservation_error(f, r.features.values.value(), in.segments);
      if (e > err32 || i == 0) err32 = e, worst32 = i;
    }
  }
  return {make_result("conservation", "float64", err64, 1e-12, options.instances, "worst instance " + std::to_string(worst64)),
          make_result("conservation", "float32", err32, 1e-5, options.instances, "worst instance " + std::to_string(worst32))};
}

std::vector<SuiteResult> verify_equivalence(const VerifyOptions& options) {
  double err32 = 0.0, err64 = 0.0;
  for (std::size_t i = 0; i < options.instances; ++i) {
    const HfInstance in = make_hf_instance(options.seed, i);
    {
      const Tensor<double> gates = compute_gates_reference(in.features, in.weight, in.bias, in.segments);
      const Tensor<double> expect = hf_forward_sequential(in.features, gates, in.segments);
      Tape<double> tape;
      auto r = options.hf.f64(as_sequence<double>(tape, in), bind_gate_params(tape, in.weight, in.bias, false));
      err64 = std::max({err64, max_elementwise_rel(r.features.values.value(), expect),
                        max_elementwise_rel(r.gates.values.value(), gates)});
    }
    {
      const Tensor<float> f = in.features.cast<float>(), w = in.weight.cast<float>(), b = in.bias.cast<float>();
      const Tensor<float> gates = compute_gates_reference(f, w, b, in.segments);
      const Tensor<float> expect = hf_forward_sequential(f, gates, in.segments);
      Tape<float> tape;
      auto r = options.hf.f32(FeatureSequence<float>{tape.constant(f), in.segments}, bind_gate_params(tape, w, b, false));
      err32 = std::max(err32, max_elementwise_rel(r.features.values.value(), expect));
    }
  }
  return {make_result("equivalence", "float64", err64, 0.0, options.instances),
          make_result("equivalence", "float32", err32, 1e-6, options.instances)};
}

std::vector<GradCase> gradcheck_cases(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradCase> cases;
  auto push = [&](std::string name, DifferentiableFn fn, std::vector<Tensor<double>> inputs) {
    cases.push_back({std::move(name), std::move(fn), std::move(inputs)});
  };
  using V = std::span<const Var<double>>;

  {
    const Tensor<double> r = normal_off_zero(Dims{2, 4, 5, 5}, rng, 0.1);
    push("conv2d", [r](Tape<double>&, V v) { return weighted_sum(conv2d(v[0], v[1], v[2], Conv2dGeometry{{1, 1}, {1, 1}}), r); },
        {normal(Dims{2, 3, 5, 5}, rng), normal(Dims{4, 3, 3, 3}, rng), normal(Dims{4}, rng)});
  }
  {
    const Tensor<double> r = normal_off_zero(Dims{2, 3, 3}, rng, 0.1);
    push("conv2d_strided_unbatched",
        [r](Tape<double>&, V v) { return weighted_sum(conv2d(v[0], v[1], v[2], Conv2dGeometry{{2, 2}, {0, 0}}), r); },
        {normal(Dims{3, 6, 6}, rng), normal(Dims{2, 3, 2, 2}, rng), normal(Dims{2}, rng)});
  }
  {
    const Tensor<double> r = normal_off_zero(Dims{2, 3, 2, 4, 4}, rng, 0.1);
    push("conv3d",
        [r](Tape<double>&, V v) { return weighted_sum(conv3d(v[0], v[1], v[2], Conv3dGeometry{{1, 1, 1}, {0, 1, 1}}), r); },
        {normal(Dims{2, 2, 3, 4, 4}, rng), normal(Dims{3, 2, 2, 3, 3}, rng), normal(Dims{3}, rng)});
  }
  {
    const Tensor<double> r = normal_off_zero(Dims{2, 3, 4, 4}, rng, 0.1);
    push("add_broadcast", [r](Tape<double>&, V v) { return weighted_sum(add(v[0], v[1]), r); },
        {normal(Dims{2, 3, 4, 4}, rng), normal(Dims{2, 1, 4, 4}, rng)});
    push("sub_broadcast", [r](Tape<double>&, V v) { return weighted_sum(sub(v[0], v[1]), r); },
        {normal(Dims{2, 3, 4, 4}, rng), normal(Dims{1, 3, 1, 1}, rng)});
    push("mul_broadcast", [r](Tape<double>&, V v) { return weighted_sum(mul(v[0], v[1]), r); },
        {normal(Dims{2, 3, 4, 4}, rng), normal(Dims{2, 1, 4, 4}, rng)});
    push("mul_same", [r](Tape<double>&, V v) { return weighted_sum(mul(v[0], v[1]), r); },
        {normal(Dims{2, 3, 4, 4}, rng), normal(Dims{2, 3, 4, 4}, rng)});
  }
  {
    const Tensor<double> r = normal_off_zero(Dims{3, 7}, rng, 0.1);
    push("tanh", [r](Tape<double>&, V v) { return weighted_sum(tanh(v[0]), r); }, {normal(Dims{3, 7}, rng)});
    push("relu", [r](Tape<double>&, V v) { return weighted_sum(relu(v[0]), r); }, {normal_off_zero(Dims{3, 7}, rng)});
    push("scale", [r](Tape<double>&, V v) { return weighted_sum(scale(v[0], 1.7), r); }, {normal(Dims{3, 7}, rng)});
    push("add_scalar", [r](Tape<double>&, V v) { return weighted_sum(add_scalar(v[0], -0.3), r); }, {normal(Dims{3, 7}, rng)});
    push("complement", [r](Tape<double>&, V v) { return weighted_sum(complement(v[0]), r); }, {normal(Dims{3, 7}, rng)});
    push("sum", [](Tape<double>&, V v) { return sum(v[0]); }, {normal(Dims{3, 7}, rng)});
  }
  {
    const Segmentation seg{2, 3};
    const Tensor<double> r = normal_off_zero(Dims{6, 2, 3, 3}, rng, 0.1);
    push("temporal_shift_left",
        [r, seg](Tape<double>&, V v) { return weighted_sum(temporal_shift(v[0], seg, ShiftDirection::left), r); },
        {normal(Dims{6, 2, 3, 3}, rng)});
    push("temporal_shift_right",
        [r, seg](Tape<double>&, V v) { return weighted_sum(temporal_shift(v[0], seg, ShiftDirection::right), r); },
        {normal(Dims{6, 2, 3, 3}, rng)});
    const Tensor<double> r2 = normal_off_zero(Dims{6, 2, 2, 3, 3}, rng, 0.1);
    push("stack_depth", [r2](Tape<double>&, V v) { return weighted_sum(stack_depth(v[0], v[1]), r2); },
        {normal(Dims{6, 2, 3, 3}, rng), normal(Dims{6, 2, 3, 3}, rng)});
    const Tensor<double> r3 = normal_off_zero(Dims{2, 2, 3, 3, 3}, rng, 0.1);
    push("frames_to_volume", [r3, seg](Tape<double>&, V v) { return weighted_sum(frames_to_volume(v[0], seg), r3); },
        {normal(Dims{6, 2, 3, 3}, rng)});
    const Tensor<double> r4 = normal_off_zero(Dims{2, 2, 3, 3}, rng, 0.1);
    push("segment_mean", [r4, seg](Tape<double>&, V v) { return weighted_sum(segment_mean(v[0], seg), r4); },
        {normal(Dims{6, 2, 3, 3}, rng)});
    const Tensor<double> r5 = normal_off_zero(Dims{3, 2, 3, 3}, rng, 0.1);
    push("slice_rows", [r5](Tape<double>&, V v) { return weighted_sum(slice_rows(v[0], 2, 3), r5); }, {normal(Dims{6, 2, 3, 3}, rng)});
    const Tensor<double> r6 = normal_off_zero(Dims{6, 18}, rng, 0.1);
    push("reshape", [r6](Tape<double>&, V v) { return weighted_sum(reshape(v[0], Dims{6, 18}), r6); }, {normal(Dims{6, 2, 3, 3}, rng)});
  }
  {
    const Tensor<double> r = normal_off_zero(Dims{2, 3, 3, 3}, rng, 0.1);
    push("max_pool", [r](Tape<double>&, V v) { return weighted_sum(pool(v[0], PoolKind::max2d, 2, 2), r); },
        {normal(Dims{2, 3, 6, 6}, rng)});
    push("avg_pool", [r](Tape<double>&, V v) { return weighted_sum(pool(v[0], PoolKind::avg2d, 2, 2), r); },
        {normal(Dims{2, 3, 6, 6}, rng)});
    const Tensor<double> rg = normal_off_zero(Dims{2, 3}, rng, 0.1);
    push("global_avg_pool", [rg](Tape<double>&, V v) { return weighted_sum(pool(v[0], PoolKind::global_avg), rg); },
        {normal(Dims{2, 3, 6, 6}, rng)});
  }
  {
    const Tensor<double> r = normal_off_zero(Dims{4, 3}, rng, 0.1);
    push("linear", [r](Tape<double>&, V v) { return weighted_sum(linear(v[0], v[1], v[2]), r); },
        {normal(Dims{4, 5}, rng), normal(Dims{3, 5}, rng), normal(Dims{3}, rng)});
  }
  {
    const Tensor<double> r = normal_off_zero(Dims{4, 3, 3, 3}, rng, 0.1);
    for (Mode mode : {Mode::train, Mode::eval}) {
      push(mode == Mode::train ? "batchnorm2d_train" : "batchnorm2d_eval",
          [r, mode](Tape<double>&, V v) {
            Tensor<double> mean(Dims{3}, 0.1), var(Dims{3}, 1.5);
            return weighted_sum(batchnorm2d(v[0], v[1], v[2], RunningStats<double>{mean, var}, mode, 0.1, 1e-5), r);
          },
          {normal(Dims{4, 3, 3, 3}, rng), normal(Dims{3}, rng), normal(Dims{3}, rng)});
    }
  }
  {
    const Tensor<double> r = normal_off_zero(Dims{5, 6}, rng, 0.1);
    push("dropout_train",
        [r](Tape<double>&, V v) {
          Rng mask_rng(99);  // same mask on every evaluation
          return weighted_sum(dropout(v[0], 0.3, Mode::train, mask_rng), r);
        },
        {normal(Dims{5, 6}, rng)});
  }
  {
    const std::vector<int> labels{1, 3, 5, 2};
    push("softmax_cross_entropy",
        [labels](Tape<double>&, V v) { return softmax_cross_entropy(v[0], std::span<const int>(labels)); },
        {normal(Dims{4, 5}, rng)});
  }
  {
    const Segmentation seg{2, 3};
    const Tensor<double> r = normal_off_zero(Dims{6, 4, 3, 3}, rng, 0.1);
    push("hf_block",
        [r, seg](Tape<double>&, V v) {
          auto out = hf_forward_parallel(FeatureSequence<double>{v[0], seg}, GateConvParams<double>{v[1], v[2]});
          return weighted_sum(out.features.values, r);
        },
        {normal(Dims{6, 4, 3, 3}, rng), normal(gate_weight_dims(4), rng, 0.2), normal(Dims{1}, rng, 0.5)});
    push("hf_block_nonconservative",
        [r, seg](Tape<double>&, V v) {
          auto out = hf_forward_nonconservative(FeatureSequence<double>{v[0], seg}, GateConvParams<double>{v[1], v[2]},
                                                GateConvParams<double>{v[3], v[4]});
          return weighted_sum(out.features.values, r);
        },
        {normal(Dims{6, 4, 3, 3}, rng), normal(gate_weight_dims(4), rng, 0.2), normal(Dims{1}, rng, 0.5),
         normal(gate_weight_dims(4), rng, 0.2), normal(Dims{1}, rng, 0.5)});
    const Tensor<double> rc = normal_off_zero(Dims{2, 4}, rng, 0.1);
    push("consensus_relation",
        [rc, seg](Tape<double>&, V v) { return weighted_sum(consensus_relation(v[0], seg, v[1], v[2], v[3], v[4]), rc); },
        {normal(Dims{6, 4}, rng), normal(Dims{4, 12}, rng, 0.3), normal(Dims{4}, rng), normal(Dims{4, 4}, rng, 0.5),
         normal(Dims{4}, rng)});
    push("consensus_conv3d",
        [rc, seg](Tape<double>&, V v) { return weighted_sum(consensus_conv3d(v[0], seg, v[1], v[2]), rc); },
        {normal(Dims{6, 3, 3, 3}, rng), normal(Dims{4, 3, 3, 3, 3}, rng, 0.2), normal(Dims{4}, rng)});
  }
  {
    // Two conv blocks with HF after each. Batch norm after a biased conv and an
    // HF module feeding average consensus both have exactly zero gradients, which
    // finite differences only resolve to rounding noise, so this model uses
    // neither; both are checked on their own above.
    ModelConfig mc;
    mc.in_channels = 1;
    mc.height = mc.width = 6;
    mc.frames_per_clip = 3;
    mc.blocks = {{3, false, PoolAfter::max2}, {4, false, PoolAfter::none}};
    mc.consensus = Consensus::relation;
    mc.hf_positions = {1, 2};
    mc.hf_variant = HfVariant::conservative;
    mc.num_classes = 3;
    mc.dropout_rate = 0.0;
    Rng init(seed + 1);
    Model<double> model = build_model<double>(mc, init);
    const std::vector<int> labels{2, 3};
    DifferentiableFn fn = [model, labels](Tape<double>& tape, V v) mutable {
      Rng unused(0);
      auto trace = forward_with(tape, model, v[0], Mode::train, unused, v.subspan(1));
      return softmax_cross_entropy(trace.logits, std::span<const int>(labels));
    };
    // Redraw while a ReLU or pooling kink sits within a step of the draw;
    // there the finite-difference oracle itself is undefined.
    std::vector<Tensor<double>> inputs;
    for (int attempt = 0; attempt < 16; ++attempt) {
      inputs = {normal(Dims{6, 1, 6, 6}, rng)};
      for (const auto& e : model.params.entries()) {
        if (!e.trainable) continue;
        // Nonzero gates so the transfer path carries gradient too.
        inputs.push_back(e.name.find(".gate.") != std::string::npos ? normal(e.value.dims(), rng, 0.3) : e.value);
      }
      if (fd_step_gap(fn, inputs, 1e-5) < 1e-7) break;
    }
    push("model_two_blocks", std::move(fn), std::move(inputs));
  }
  return cases;
}

std::vector<SuiteResult> verify_gradcheck(const VerifyOptions& options) {
  std::vector<SuiteResult> out;
  for (const GradCase& c : gradcheck_cases(options.seed)) {
    const GradCheckReport r = grad_check(c.fn, c.inputs, 1e-5);
    std::ostringstream detail;
    detail << "input " << r.worst_input << " coord " << r.worst_coordinate << " tape " << r.tape_grad << " fd " << r.fd_grad;
    out.push_back(make_result("gradcheck", c.name, r.max_rel_error, 1e-5, 1, detail.str()));
  }
  return out;
}

std::vector<SuiteResult> run_verify(const std::string& suite, const VerifyOptions& options) {
  std::vector<SuiteResult> out;
  auto append = [&](std::vector<SuiteResult> r) { out.insert(out.end(), r.begin(), r.end()); };
  if (suite == "gradcheck" || suite == "all") append(verify_gradcheck(options));
  if (suite == "conservation" || suite == "all") append(verify_conservation(options));
  if (suite == "equivalence" || suite == "all") append(verify_equivalence(options));
  if (out.empty()) throw UsageError("verify: unknown suite '" + suite + "' (gradcheck, conservation, equivalence, all)");
  return out;
}

void write_verify_table(std::ostream& os, const std::vector<SuiteResult>& results) {
  os << std::left << std::setw(14) << "suite" << std::setw(28) << "check" << std::setw(8) << "result" << std::setw(14)
     << "max_error" << std::setw(12) << "tolerance" << "detail\n";
  for (const SuiteResult& r : results) {
    std::ostringstream err, tol;
    err << std::setprecision(3) << std::scientific << r.max_error;
    tol << std::setprecision(1) << std::scientific << r.tolerance;
    os << std::setw(14) << r.suite << std::setw(28) << r.check << std::setw(8) << (r.passed ? "PASS" : "FAIL") << std::setw(14)
       << err.str() << std::setw(12) << tol.str() << r.detail << '\n';
  }
}

}  // namespace hfnet
