#include "hfnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace hfnet {
namespace {

double evaluate(const DifferentiableFn& f, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape(TapeOptions{.check_finite = true});
  std::vector<Var<double>> vars;
  vars.reserve(inputs.size());
  for (const auto& in : inputs) vars.push_back(tape.leaf(in, false));
  Var<double> out = f(tape, vars);
  if (out.numel() != 1) throw UsageError("grad_check: function must be scalar-valued");
  return out.value()[0];
}

}  // namespace

GradCheckReport grad_check(const DifferentiableFn& f, const std::vector<Tensor<double>>& inputs, double h) {
  if (!(h > 0.0)) throw ParameterError("grad_check: step h must be > 0");

  std::vector<Tensor<double>> tape_grads;
  {
    Tape<double> tape(TapeOptions{.check_finite = true});
    std::vector<Var<double>> vars;
    for (const auto& in : inputs) vars.push_back(tape.leaf(in, true));
    Var<double> out = f(tape, vars);
    tape.backward(out);
    for (const auto& v : vars) tape_grads.push_back(v.grad());
  }

  GradCheckReport report;
  std::vector<Tensor<double>> probe = inputs;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    for (std::size_t j = 0; j < probe[i].numel(); ++j) {
      const double saved = probe[i][j];
      probe[i][j] = saved + h;
      const double up = evaluate(f, probe);
      probe[i][j] = saved - h;
      const double down = evaluate(f, probe);
      probe[i][j] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double g = tape_grads[i][j];
      const double err = std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), 1e-8});
      if (err > report.max_rel_error || (i == 0 && j == 0)) {
        report = GradCheckReport{err, i, j, g, fd};
      }
    }
  }
  return report;
}

}  // namespace hfnet
