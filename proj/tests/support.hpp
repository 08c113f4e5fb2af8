#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <random>
#include <vector>

#include "hfnet/gradcheck.hpp"
#include "hfnet/ops.hpp"
#include "hfnet/tensor.hpp"

namespace testing {

using hfnet::Dims;
using hfnet::Tensor;

// Central differences can only resolve a gradient down to about
// ulp(f) / 2h; below that the relative error measures rounding in f, not the
// backward pass. This check accepts a coordinate when its relative error is
// within `tol`, or when the disagreement is within `ulps` units of f's last
// place divided by 2h. Returns the worst such ulp ratio over coordinates that
// miss `tol` (0 when none do).
struct FdVerdict {
  double max_rel_error = 0.0;
  double worst_ulp_ratio = 0.0;
};

inline FdVerdict fd_verdict(const hfnet::DifferentiableFn& f, std::vector<Tensor<double>> x, double h, double tol) {
  using hfnet::Tape;
  using hfnet::Var;
  auto eval = [&](const std::vector<Tensor<double>>& in) {
    Tape<double> tape;
    std::vector<Var<double>> v;
    for (const auto& t : in) v.push_back(tape.leaf(t, false));
    return f(tape, v).value()[0];
  };
  std::vector<Tensor<double>> g;
  {
    Tape<double> tape;
    std::vector<Var<double>> v;
    for (const auto& t : x) v.push_back(tape.leaf(t, true));
    tape.backward(f(tape, v));
    for (const auto& vi : v) g.push_back(vi.grad());
  }
  FdVerdict out;
  const double eps = std::numeric_limits<double>::epsilon();
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < x[i].numel(); ++j) {
      const double saved = x[i][j];
      x[i][j] = saved + h;
      const double up = eval(x);
      x[i][j] = saved - h;
      const double down = eval(x);
      x[i][j] = saved;
      const double fd = (up - down) / (2 * h);
      const double diff = std::abs(g[i][j] - fd);
      const double rel = diff / std::max({std::abs(g[i][j]), std::abs(fd), 1e-8});
      out.max_rel_error = std::max(out.max_rel_error, rel);
      if (rel > tol) {
        const double ulp = eps * std::max(std::abs(up), std::abs(down));
        out.worst_ulp_ratio = std::max(out.worst_ulp_ratio, diff * 2 * h / ulp);
      }
    }
  }
  return out;
}

template <typename T = double>
Tensor<T> uniform(Dims dims, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(std::move(dims));
  for (auto& v : t.data()) v = static_cast<T>(u(rng));
  return t;
}

// Direct loop evaluations. Accumulation runs over (ci, [kd,] kh, kw) with
// padding taps contributing w*0 and the bias added last, which is the order
// the library's kernels promise.

template <typename T>
Tensor<T> conv2d_loop(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride, std::size_t pad) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
  Tensor<T> out(Dims{N, Co, Ho, Wo});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < Co; ++o)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          T acc = 0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t a = 0; a < kh; ++a)
              for (std::size_t e = 0; e < kw; ++e) {
                const long y = static_cast<long>(i * stride + a) - static_cast<long>(pad);
                const long z = static_cast<long>(j * stride + e) - static_cast<long>(pad);
                const bool inside = y >= 0 && z >= 0 && y < static_cast<long>(H) && z < static_cast<long>(W);
                acc += w.at({o, c, a, e}) * (inside ? x.at({n, c, std::size_t(y), std::size_t(z)}) : T{0});
              }
          out.at({n, o, i, j}) = acc + b[o];
        }
  return out;
}

template <typename T>
Tensor<T> conv3d_loop(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::array<std::size_t, 3> pad) {
  const std::size_t N = x.dim(0), C = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  const std::size_t Co = w.dim(0), kd = w.dim(2), kh = w.dim(3), kw = w.dim(4);
  const std::size_t Do = D + 2 * pad[0] - kd + 1, Ho = H + 2 * pad[1] - kh + 1, Wo = W + 2 * pad[2] - kw + 1;
  Tensor<T> out(Dims{N, Co, Do, Ho, Wo});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < Co; ++o)
      for (std::size_t d = 0; d < Do; ++d)
        for (std::size_t i = 0; i < Ho; ++i)
          for (std::size_t j = 0; j < Wo; ++j) {
            T acc = 0;
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t q = 0; q < kd; ++q)
                for (std::size_t a = 0; a < kh; ++a)
                  for (std::size_t e = 0; e < kw; ++e) {
                    const long t = long(d + q) - long(pad[0]), y = long(i + a) - long(pad[1]), z = long(j + e) - long(pad[2]);
                    const bool inside = t >= 0 && y >= 0 && z >= 0 && t < long(D) && y < long(H) && z < long(W);
                    acc += w.at({o, c, q, a, e}) *
                           (inside ? x.at({n, c, std::size_t(t), std::size_t(y), std::size_t(z)}) : T{0});
                  }
            out.at({n, o, d, i, j}) = acc + b[o];
          }
  return out;
}

template <typename T>
Tensor<T> linear_loop(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  Tensor<T> out(Dims{x.dim(0), w.dim(0)});
  for (std::size_t n = 0; n < x.dim(0); ++n)
    for (std::size_t o = 0; o < w.dim(0); ++o) {
      T acc = 0;
      for (std::size_t i = 0; i < x.dim(1); ++i) acc += x.at({n, i}) * w.at({o, i});
      out.at({n, o}) = acc + b[o];
    }
  return out;
}

template <typename T>
Tensor<T> avg_pool_loop(const Tensor<T>& x, std::size_t k, std::size_t s) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = (H - k) / s + 1, Wo = (W - k) / s + 1;
  Tensor<T> out(Dims{N, C, Ho, Wo});
  const T inv = T{1} / static_cast<T>(k * k);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          T acc = 0;
          for (std::size_t a = 0; a < k; ++a)
            for (std::size_t e = 0; e < k; ++e) acc += x.at({n, c, i * s + a, j * s + e});
          out.at({n, c, i, j}) = acc * inv;
        }
  return out;
}

template <typename T>
Tensor<T> max_pool_loop(const Tensor<T>& x, std::size_t k, std::size_t s) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = (H - k) / s + 1, Wo = (W - k) / s + 1;
  Tensor<T> out(Dims{N, C, Ho, Wo});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          T best = x.at({n, c, i * s, j * s});
          for (std::size_t a = 0; a < k; ++a)
            for (std::size_t e = 0; e < k; ++e) best = std::max(best, x.at({n, c, i * s + a, j * s + e}));
          out.at({n, c, i, j}) = best;
        }
  return out;
}

}  // namespace testing
