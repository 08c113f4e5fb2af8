#pragma once

#include <functional>
#include <span>
#include <vector>

#include "hfnet/tape.hpp"

namespace hfnet {

/// Scalar-valued function built fresh on each call.
using DifferentiableFn = std::function<Var<double>(Tape<double>&, std::span<const Var<double>>)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_coordinate = 0;
  double tape_grad = 0.0;
  double fd_grad = 0.0;
};

/// Compares tape gradients with central differences (f(x+h)-f(x-h))/(2h) on
/// every input scalar. Error per coordinate is
/// |g_tape - g_fd| / max(|g_tape|, |g_fd|, 1e-8). Evaluations run with
/// finite-value checking on, so a NaN/Inf surfaces as NumericError naming the op.
GradCheckReport grad_check(const DifferentiableFn& f, const std::vector<Tensor<double>>& inputs, double h = 1e-5);

}  // namespace hfnet
