#include "hfnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

namespace hfnet {
namespace {

// ---------------------------------------------------------------------------
// Convolution via im2col. Every output scalar is reduced over the kernel taps
// in (c_in, kd, kh, kw) order and the bias is added last, so results equal a
// plain nested loop that uses the same order.

struct ConvShape {
  std::size_t n, c, d, h, w;
  std::size_t co, kd, kh, kw;
  std::size_t sd, sh, sw, pd, ph, pw;
  std::size_t od, oh, ow;
  std::size_t k() const { return c * kd * kh * kw; }
  std::size_t p() const { return od * oh * ow; }
};

std::size_t out_extent(const char* op, const char* axis, std::size_t in, std::size_t kernel, std::size_t stride,
                       std::size_t pad) {
  if (kernel < 1) throw DimensionError(std::string(op) + ": kernel extent on axis " + axis + " must be >= 1");
  if (stride < 1) throw DimensionError(std::string(op) + ": stride on axis " + axis + " must be >= 1");
  if (in + 2 * pad < kernel) {
    throw DimensionError(std::string(op) + ": padded extent " + std::to_string(in + 2 * pad) + " on axis " + axis +
                         " is smaller than kernel extent " + std::to_string(kernel));
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

// Valid output columns [lo, hi) for kernel tap `e`: those whose input column
// ow*stride + e - pad lands inside [0, in).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t in, std::size_t stride, std::size_t e,
                                                       std::size_t pad) {
  std::size_t lo = 0;
  while (lo < out && lo * stride + e < pad) ++lo;
  std::size_t hi = lo;
  while (hi < out && hi * stride + e - pad < in) ++hi;
  return {lo, hi};
}

template <typename T>
void im2col(const ConvShape& s, const T* x, T* col) {
  const std::size_t P = s.p();
  std::size_t k = 0;
  for (std::size_t ci = 0; ci < s.c; ++ci) {
    const T* xc = x + ci * s.d * s.h * s.w;
    for (std::size_t a = 0; a < s.kd; ++a) {
      for (std::size_t b = 0; b < s.kh; ++b) {
        for (std::size_t e = 0; e < s.kw; ++e, ++k) {
          T* row = col + k * P;
          const auto [lo, hi] = valid_range(s.ow, s.w, s.sw, e, s.pw);
          for (std::size_t od = 0; od < s.od; ++od) {
            const long id = static_cast<long>(od * s.sd + a) - static_cast<long>(s.pd);
            const bool din = id >= 0 && id < static_cast<long>(s.d);
            for (std::size_t oh = 0; oh < s.oh; ++oh) {
              T* dst = row + (od * s.oh + oh) * s.ow;
              const long ih = static_cast<long>(oh * s.sh + b) - static_cast<long>(s.ph);
              if (!din || ih < 0 || ih >= static_cast<long>(s.h) || lo >= hi) {
                std::fill(dst, dst + s.ow, T{0});
                continue;
              }
              const T* src = xc + (static_cast<std::size_t>(id) * s.h + static_cast<std::size_t>(ih)) * s.w;
              std::fill(dst, dst + lo, T{0});
              if (s.sw == 1) {
                std::copy(src + lo + e - s.pw, src + hi + e - s.pw, dst + lo);
              } else {
                for (std::size_t ow = lo; ow < hi; ++ow) dst[ow] = src[ow * s.sw + e - s.pw];
              }
              std::fill(dst + hi, dst + s.ow, T{0});
            }
          }
        }
      }
    }
  }
}

// Scatter-add of a [K,P] column buffer back onto the input volume.
template <typename T>
void col2im(const ConvShape& s, const T* col, T* dx) {
  const std::size_t P = s.p();
  std::size_t k = 0;
  for (std::size_t ci = 0; ci < s.c; ++ci) {
    T* xc = dx + ci * s.d * s.h * s.w;
    for (std::size_t a = 0; a < s.kd; ++a) {
      for (std::size_t b = 0; b < s.kh; ++b) {
        for (std::size_t e = 0; e < s.kw; ++e, ++k) {
          const T* row = col + k * P;
          const auto [lo, hi] = valid_range(s.ow, s.w, s.sw, e, s.pw);
          for (std::size_t od = 0; od < s.od; ++od) {
            const long id = static_cast<long>(od * s.sd + a) - static_cast<long>(s.pd);
            if (id < 0 || id >= static_cast<long>(s.d)) continue;
            for (std::size_t oh = 0; oh < s.oh; ++oh) {
              const long ih = static_cast<long>(oh * s.sh + b) - static_cast<long>(s.ph);
              if (ih < 0 || ih >= static_cast<long>(s.h)) continue;
              const T* src = row + (od * s.oh + oh) * s.ow;
              T* dst = xc + (static_cast<std::size_t>(id) * s.h + static_cast<std::size_t>(ih)) * s.w;
              if (s.sw == 1) {
                T* d = dst + e - s.pw;
                for (std::size_t ow = lo; ow < hi; ++ow) d[ow] += src[ow];
              } else {
                for (std::size_t ow = lo; ow < hi; ++ow) dst[ow * s.sw + e - s.pw] += src[ow];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
inline void axpy(T* __restrict y, T a, const T* __restrict x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

// 32-byte SIMD values through GCC vector extensions; lanes are independent so
// vectorizing across output columns leaves each reduction untouched.
template <typename T>
struct VecOf;
template <>
struct VecOf<float> {
  typedef float type __attribute__((vector_size(32)));
};
template <>
struct VecOf<double> {
  typedef double type __attribute__((vector_size(32)));
};
template <typename T>
using Vec = typename VecOf<T>::type;
template <typename T>
constexpr std::size_t kWidth = 32 / sizeof(T);
constexpr std::size_t kLanes = 2;

template <typename T>
inline Vec<T> load_vec(const T* p) {
  Vec<T> v;
  std::memcpy(&v, p, sizeof v);
  return v;
}
template <typename T>
inline void store_vec(T* p, const Vec<T>& v) {
  std::memcpy(p, &v, sizeof v);
}

// Rows [r0, r0+RN) of out[r][c] (+)= sum_j A(r,j) * B[j][c], A(r,j) = a[r*ars + j*acs].
// Every output is reduced over j in ascending order, whatever the blocking.
template <std::size_t RN, typename T>
void gemm_rows(std::size_t r0, std::size_t C, std::size_t J, const T* a, std::size_t ars, std::size_t acs, const T* b,
               std::size_t ldb, T* out, std::size_t ldo, bool accumulate) {
  constexpr std::size_t CB = kLanes * kWidth<T>;
  std::size_t c0 = 0;
  for (; c0 + CB <= C; c0 += CB) {
    Vec<T> acc[RN][kLanes];
    for (std::size_t i = 0; i < RN; ++i) {
      for (std::size_t v = 0; v < kLanes; ++v) {
        acc[i][v] = accumulate ? load_vec(out + (r0 + i) * ldo + c0 + v * kWidth<T>) : Vec<T>{};
      }
    }
    for (std::size_t j = 0; j < J; ++j) {
      const T* bj = b + j * ldb + c0;
      Vec<T> bv[kLanes];
      for (std::size_t v = 0; v < kLanes; ++v) bv[v] = load_vec(bj + v * kWidth<T>);
      for (std::size_t i = 0; i < RN; ++i) {
        const T w = a[(r0 + i) * ars + j * acs];
        for (std::size_t v = 0; v < kLanes; ++v) acc[i][v] += w * bv[v];
      }
    }
    for (std::size_t i = 0; i < RN; ++i) {
      for (std::size_t v = 0; v < kLanes; ++v) store_vec(out + (r0 + i) * ldo + c0 + v * kWidth<T>, acc[i][v]);
    }
  }
  const std::size_t rest = C - c0;
  if (rest == 0) return;
  T acc[RN][CB];
  for (std::size_t i = 0; i < RN; ++i) {
    for (std::size_t c = 0; c < rest; ++c) acc[i][c] = accumulate ? out[(r0 + i) * ldo + c0 + c] : T{0};
  }
  for (std::size_t j = 0; j < J; ++j) {
    const T* bj = b + j * ldb + c0;
    for (std::size_t i = 0; i < RN; ++i) {
      const T w = a[(r0 + i) * ars + j * acs];
      for (std::size_t c = 0; c < rest; ++c) acc[i][c] += w * bj[c];
    }
  }
  for (std::size_t i = 0; i < RN; ++i) {
    for (std::size_t c = 0; c < rest; ++c) out[(r0 + i) * ldo + c0 + c] = acc[i][c];
  }
}

template <typename T>
void gemm(std::size_t R, std::size_t C, std::size_t J, const T* a, std::size_t ars, std::size_t acs, const T* b,
          std::size_t ldb, T* out, std::size_t ldo, bool accumulate, int threads) {
  constexpr std::size_t RB = 4;
  const std::size_t row_blocks = (R + RB - 1) / RB;
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1)
  for (long rb = 0; rb < static_cast<long>(row_blocks); ++rb) {
    const std::size_t r0 = static_cast<std::size_t>(rb) * RB;
    switch (std::min(RB, R - r0)) {
      case 4: gemm_rows<4>(r0, C, J, a, ars, acs, b, ldb, out, ldo, accumulate); break;
      case 3: gemm_rows<3>(r0, C, J, a, ars, acs, b, ldb, out, ldo, accumulate); break;
      case 2: gemm_rows<2>(r0, C, J, a, ars, acs, b, ldb, out, ldo, accumulate); break;
      default: gemm_rows<1>(r0, C, J, a, ars, acs, b, ldb, out, ldo, accumulate); break;
    }
  }
}

template <typename T>
void conv_forward(const ConvShape& s, const T* x, const T* wt, const T* bias, T* out, int threads) {
  const std::size_t K = s.k();
  const std::size_t P = s.p();
  std::vector<T> col(K * P);
  for (std::size_t n = 0; n < s.n; ++n) {
    im2col(s, x + n * s.c * s.d * s.h * s.w, col.data());
    T* out_n = out + n * s.co * P;
    gemm(s.co, P, K, wt, K, 1, col.data(), P, out_n, P, false, threads);
    for (std::size_t co = 0; co < s.co; ++co) {
      T* row = out_n + co * P;
      const T b = bias[co];
      for (std::size_t p = 0; p < P; ++p) row[p] += b;
    }
  }
}

template <typename T>
void conv_backward(const ConvShape& s, const T* x, const T* wt, const T* g, T* dx, T* dw, T* db, int threads) {
  const std::size_t K = s.k();
  const std::size_t P = s.p();
  const std::size_t in_frame = s.c * s.d * s.h * s.w;
  std::vector<T> col(K * P);
  std::vector<T> col_t(dw ? K * P : 0);
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* g_n = g + n * s.co * P;
    if (dx) {
      // col[k][p] = sum_co w[co][k] g[co][p]
      gemm(K, P, s.co, wt, 1, K, g_n, P, col.data(), P, false, threads);
      col2im(s, col.data(), dx + n * in_frame);
    }
    if (dw) {
      im2col(s, x + n * in_frame, col.data());
      constexpr std::size_t TB = 16;
      for (std::size_t k0 = 0; k0 < K; k0 += TB) {
        for (std::size_t p0 = 0; p0 < P; p0 += TB) {
          for (std::size_t k = k0; k < std::min(K, k0 + TB); ++k) {
            for (std::size_t p = p0; p < std::min(P, p0 + TB); ++p) col_t[p * K + k] = col[k * P + p];
          }
        }
      }
      // dw[co][k] += sum_p g[co][p] col[k][p]
      gemm(s.co, K, P, g_n, P, 1, col_t.data(), K, dw, K, true, threads);
    }
    if (db) {
      for (std::size_t co = 0; co < s.co; ++co) {
        const T* grow = g_n + co * P;
        T acc = T{0};
        for (std::size_t p = 0; p < P; ++p) acc += grow[p];
        db[co] += acc;
      }
    }
  }
}

template <typename T>
Var<T> conv_impl(const char* op, Var<T> input, Var<T> weight, Var<T> bias, ConvShape s, Dims out_dims) {
  Tape<T>& tape = *input.tape;
  Tensor<T> out(std::move(out_dims));
  conv_forward(s, input.value().data().data(), weight.value().data().data(), bias.value().data().data(),
               out.data().data(), tape.options().threads);
  tape.count_flops(2ULL * s.k() * s.p() * s.co * s.n);
  return tape.record(op, std::move(out), {input, weight, bias}, [input, weight, bias, s](Tape<T>& t, std::size_t self) {
    const T* g = t.grad_buffer(self).data().data();
    T* dx = t.requires_grad(input.index) ? t.grad_buffer(input.index).data().data() : nullptr;
    T* dw = t.requires_grad(weight.index) ? t.grad_buffer(weight.index).data().data() : nullptr;
    T* db = t.requires_grad(bias.index) ? t.grad_buffer(bias.index).data().data() : nullptr;
    conv_backward(s, t.value(input.index).data().data(), t.value(weight.index).data().data(), g, dx, dw, db,
                  t.options().threads);
  });
}

// ---------------------------------------------------------------------------
// Broadcasting helpers.

std::vector<std::size_t> broadcast_strides(const char* op, const Dims& a, const Dims& b) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(op) + ": rank mismatch " + to_string(a) + " vs " + to_string(b));
  }
  std::vector<std::size_t> strides(a.size(), 0);
  std::size_t stride = 1;
  for (std::size_t axis = a.size(); axis-- > 0;) {
    if (b[axis] == a[axis]) {
      strides[axis] = stride;
    } else if (b[axis] == 1) {
      strides[axis] = 0;
    } else {
      throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " has extent " +
                           std::to_string(a[axis]) + " vs " + std::to_string(b[axis]) + " (not broadcastable)");
    }
    stride *= b[axis];
  }
  return strides;
}

// Calls f(ia, ib) for every linear index ia of `a` in increasing order.
template <typename F>
void for_each_broadcast(const Dims& a, const std::vector<std::size_t>& b_strides, F&& f) {
  const std::size_t total = product(a);
  if (total == 0) return;
  if (a.empty()) {
    f(std::size_t{0}, std::size_t{0});
    return;
  }
  const std::size_t rank = a.size();
  const std::size_t inner = a[rank - 1];
  const std::size_t inner_stride = b_strides[rank - 1];
  std::vector<std::size_t> index(rank, 0);
  std::size_t ib_base = 0;
  for (std::size_t ia = 0; ia < total; ia += inner) {
    std::size_t ib = ib_base;
    for (std::size_t j = 0; j < inner; ++j, ib += inner_stride) f(ia + j, ib);
    for (std::size_t axis = rank - 1; axis-- > 0;) {
      ++index[axis];
      ib_base += b_strides[axis];
      if (index[axis] < a[axis]) break;
      ib_base -= b_strides[axis] * index[axis];
      index[axis] = 0;
    }
  }
}

enum class BinaryKind { add, sub, mul };

template <typename T>
Var<T> binary(BinaryKind kind, Var<T> a, Var<T> b) {
  static constexpr const char* names[] = {"add", "sub", "mul"};
  const char* op = names[static_cast<int>(kind)];
  Tape<T>& tape = *a.tape;
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Tensor<T> out(av.dims());
  T* o = out.data().data();
  const T* x = av.data().data();
  const T* y = bv.data().data();
  const bool same = av.dims() == bv.dims();
  const std::vector<std::size_t> strides = same ? std::vector<std::size_t>{} : broadcast_strides(op, av.dims(), bv.dims());
  auto apply = [&](auto fn) {
    if (same) {
      for (std::size_t i = 0; i < av.numel(); ++i) o[i] = fn(x[i], y[i]);
    } else {
      for_each_broadcast(av.dims(), strides, [&](std::size_t ia, std::size_t ib) { o[ia] = fn(x[ia], y[ib]); });
    }
  };
  switch (kind) {
    case BinaryKind::add: apply([](T p, T q) { return p + q; }); break;
    case BinaryKind::sub: apply([](T p, T q) { return p - q; }); break;
    case BinaryKind::mul: apply([](T p, T q) { return p * q; }); break;
  }
  tape.count_flops(out.numel());
  return tape.record(op, std::move(out), {a, b}, [kind, a, b, same, strides](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad_buffer(self);
    const T* gp = g.data().data();
    const std::size_t n = g.numel();
    if (t.requires_grad(a.index)) {
      T* da = t.grad_buffer(a.index).data().data();
      if (kind == BinaryKind::mul) {
        const T* y = t.value(b.index).data().data();
        if (same) {
          for (std::size_t i = 0; i < n; ++i) da[i] += gp[i] * y[i];
        } else {
          for_each_broadcast(g.dims(), strides, [&](std::size_t ia, std::size_t ib) { da[ia] += gp[ia] * y[ib]; });
        }
      } else {
        for (std::size_t i = 0; i < n; ++i) da[i] += gp[i];
      }
    }
    if (t.requires_grad(b.index)) {
      T* db = t.grad_buffer(b.index).data().data();
      const T* x = t.value(a.index).data().data();
      auto contribution = [&](std::size_t ia) -> T {
        switch (kind) {
          case BinaryKind::add: return gp[ia];
          case BinaryKind::sub: return -gp[ia];
          case BinaryKind::mul: return gp[ia] * x[ia];
        }
        return T{0};
      };
      if (same) {
        for (std::size_t i = 0; i < n; ++i) db[i] += contribution(i);
      } else {
        for_each_broadcast(g.dims(), strides, [&](std::size_t ia, std::size_t ib) { db[ib] += contribution(ia); });
      }
    }
  });
}

template <typename T, typename Fwd, typename Deriv>
Var<T> unary(const char* op, Var<T> x, Fwd fwd, Deriv deriv) {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.dims());
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = fwd(xv[i]);
  tape.count_flops(out.numel());
  return tape.record(op, std::move(out), {x}, [x, deriv](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad_buffer(self);
    const Tensor<T>& xin = t.value(x.index);
    const Tensor<T>& y = t.value(self);
    Tensor<T>& dx = t.grad_buffer(x.index);
    for (std::size_t i = 0; i < g.numel(); ++i) dx[i] += deriv(g[i], xin[i], y[i]);
  });
}

}  // namespace

template <typename T>
Var<T> conv2d(Var<T> input, Var<T> weight, Var<T> bias, const Conv2dGeometry& geometry) {
  const Dims& xd = input.dims();
  const Dims& wd = weight.dims();
  if (xd.size() != 3 && xd.size() != 4) throw DimensionError("conv2d: input must be [C,H,W] or [N,C,H,W], got " + to_string(xd));
  if (wd.size() != 4) throw DimensionError("conv2d: weight must be [C_out,C_in,kh,kw], got " + to_string(wd));
  const bool batched = xd.size() == 4;
  const std::size_t off = batched ? 1 : 0;
  ConvShape s{};
  s.n = batched ? xd[0] : 1;
  s.c = xd[off];
  s.d = 1;
  s.h = xd[off + 1];
  s.w = xd[off + 2];
  s.co = wd[0];
  s.kd = 1;
  s.kh = wd[2];
  s.kw = wd[3];
  if (wd[1] != s.c) {
    throw DimensionError("conv2d: input channel axis has extent " + std::to_string(s.c) + " but weight axis 1 has " +
                         std::to_string(wd[1]));
  }
  if (bias.dims() != Dims{s.co}) {
    throw DimensionError("conv2d: bias dims " + to_string(bias.dims()) + " do not match C_out=" + std::to_string(s.co));
  }
  s.sd = 1;
  s.pd = 0;
  s.sh = geometry.stride[0];
  s.sw = geometry.stride[1];
  s.ph = geometry.pad[0];
  s.pw = geometry.pad[1];
  s.od = 1;
  s.oh = out_extent("conv2d", "H", s.h, s.kh, s.sh, s.ph);
  s.ow = out_extent("conv2d", "W", s.w, s.kw, s.sw, s.pw);
  Dims out_dims = batched ? Dims{s.n, s.co, s.oh, s.ow} : Dims{s.co, s.oh, s.ow};
  return conv_impl("conv2d", input, weight, bias, s, std::move(out_dims));
}

template <typename T>
Var<T> conv3d(Var<T> input, Var<T> weight, Var<T> bias, const Conv3dGeometry& geometry) {
  const Dims& xd = input.dims();
  const Dims& wd = weight.dims();
  if (xd.size() != 4 && xd.size() != 5) {
    throw DimensionError("conv3d: input must be [C,D,H,W] or [N,C,D,H,W], got " + to_string(xd));
  }
  if (wd.size() != 5) throw DimensionError("conv3d: weight must be [C_out,C_in,kd,kh,kw], got " + to_string(wd));
  const bool batched = xd.size() == 5;
  const std::size_t off = batched ? 1 : 0;
  ConvShape s{};
  s.n = batched ? xd[0] : 1;
  s.c = xd[off];
  s.d = xd[off + 1];
  s.h = xd[off + 2];
  s.w = xd[off + 3];
  s.co = wd[0];
  s.kd = wd[2];
  s.kh = wd[3];
  s.kw = wd[4];
  if (wd[1] != s.c) {
    throw DimensionError("conv3d: input channel axis has extent " + std::to_string(s.c) + " but weight axis 1 has " +
                         std::to_string(wd[1]));
  }
  if (bias.dims() != Dims{s.co}) {
    throw DimensionError("conv3d: bias dims " + to_string(bias.dims()) + " do not match C_out=" + std::to_string(s.co));
  }
  s.sd = geometry.stride[0];
  s.sh = geometry.stride[1];
  s.sw = geometry.stride[2];
  s.pd = geometry.pad[0];
  s.ph = geometry.pad[1];
  s.pw = geometry.pad[2];
  s.od = out_extent("conv3d", "D", s.d, s.kd, s.sd, s.pd);
  s.oh = out_extent("conv3d", "H", s.h, s.kh, s.sh, s.ph);
  s.ow = out_extent("conv3d", "W", s.w, s.kw, s.sw, s.pw);
  Dims out_dims = batched ? Dims{s.n, s.co, s.od, s.oh, s.ow} : Dims{s.co, s.od, s.oh, s.ow};
  return conv_impl("conv3d", input, weight, bias, s, std::move(out_dims));
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return binary(BinaryKind::add, a, b);
}
template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return binary(BinaryKind::sub, a, b);
}
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  return binary(BinaryKind::mul, a, b);
}

template <typename T>
Var<T> tanh(Var<T> x) {
  return unary(
      "tanh", x, [](T v) { return std::tanh(v); }, [](T g, T, T y) { return g * (T{1} - y * y); });
}

template <typename T>
Var<T> relu(Var<T> x) {
  return unary(
      "relu", x, [](T v) { return v > T{0} ? v : T{0}; }, [](T g, T v, T) { return v > T{0} ? g : T{0}; });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  return unary(
      "scale", x, [factor](T v) { return factor * v; }, [factor](T g, T, T) { return factor * g; });
}

template <typename T>
Var<T> add_scalar(Var<T> x, T offset) {
  return unary(
      "add_scalar", x, [offset](T v) { return v + offset; }, [](T g, T, T) { return g; });
}

template <typename T>
Var<T> complement(Var<T> x) {
  return unary(
      "complement", x, [](T v) { return T{1} - v; }, [](T g, T, T) { return -g; });
}

template <typename T>
Var<T> temporal_shift(Var<T> x, const Segmentation& segments, ShiftDirection direction) {
  const Tensor<T>& xv = x.value();
  if (xv.rank() < 1 || segments.frames < 1 || xv.dim(0) != segments.total()) {
    throw UsageError("temporal_shift: leading axis " + to_string(xv.dims()) + " is not annotated by a segmentation of " +
                     std::to_string(segments.clips) + " clips x " + std::to_string(segments.frames) + " frames");
  }
  const std::size_t frame = segments.total() ? xv.numel() / segments.total() : 0;
  const std::size_t T_ = segments.frames;
  Tensor<T> out(xv.dims());
  // left: dst t <- src t+1; right: dst t <- src t-1.
  auto copy_shift = [frame, T_, segments](const T* src, T* dst, ShiftDirection dir, bool accumulate) {
    for (std::size_t n = 0; n < segments.clips; ++n) {
      for (std::size_t t = 0; t < T_; ++t) {
        const bool valid = dir == ShiftDirection::left ? t + 1 < T_ : t >= 1;
        if (!valid) continue;
        const std::size_t from = n * T_ + (dir == ShiftDirection::left ? t + 1 : t - 1);
        const T* s = src + from * frame;
        T* d = dst + (n * T_ + t) * frame;
        if (accumulate) {
          for (std::size_t i = 0; i < frame; ++i) d[i] += s[i];
        } else {
          std::copy(s, s + frame, d);
        }
      }
    }
  };
  copy_shift(xv.data().data(), out.data().data(), direction, false);
  const char* op = direction == ShiftDirection::left ? "shift_left" : "shift_right";
  return x.tape->record(op, std::move(out), {x}, [x, direction, copy_shift](Tape<T>& t, std::size_t self) {
    const ShiftDirection back = direction == ShiftDirection::left ? ShiftDirection::right : ShiftDirection::left;
    copy_shift(t.grad_buffer(self).data().data(), t.grad_buffer(x.index).data().data(), back, true);
  });
}

template <typename T>
Var<T> stack_depth(Var<T> first, Var<T> second) {
  const Dims& d = first.dims();
  if (d.size() != 4) throw DimensionError("stack_depth: expected [N,C,H,W], got " + to_string(d));
  if (second.dims() != d) {
    throw DimensionError("stack_depth: operand dims " + to_string(d) + " vs " + to_string(second.dims()));
  }
  const std::size_t outer = d[0] * d[1];
  const std::size_t plane = d[2] * d[3];
  Tensor<T> out(Dims{d[0], d[1], 2, d[2], d[3]});
  const T* a = first.value().data().data();
  const T* b = second.value().data().data();
  T* o = out.data().data();
  for (std::size_t i = 0; i < outer; ++i) {
    std::copy(a + i * plane, a + (i + 1) * plane, o + (2 * i) * plane);
    std::copy(b + i * plane, b + (i + 1) * plane, o + (2 * i + 1) * plane);
  }
  return first.tape->record("stack_depth", std::move(out), {first, second},
                            [first, second, outer, plane](Tape<T>& t, std::size_t self) {
                              const T* g = t.grad_buffer(self).data().data();
                              for (int which = 0; which < 2; ++which) {
                                const Var<T>& v = which == 0 ? first : second;
                                if (!t.requires_grad(v.index)) continue;
                                T* dst = t.grad_buffer(v.index).data().data();
                                for (std::size_t i = 0; i < outer; ++i) {
                                  const T* src = g + (2 * i + which) * plane;
                                  for (std::size_t j = 0; j < plane; ++j) dst[i * plane + j] += src[j];
                                }
                              }
                            });
}

template <typename T>
Var<T> reshape(Var<T> x, Dims dims) {
  Tensor<T> out = x.value().reshaped(std::move(dims));
  return x.tape->record("reshape", std::move(out), {x}, [x](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad_buffer(self);
    Tensor<T>& dx = t.grad_buffer(x.index);
    for (std::size_t i = 0; i < g.numel(); ++i) dx[i] += g[i];
  });
}

template <typename T>
Var<T> pool(Var<T> x, PoolKind kind, std::size_t kernel, std::size_t stride) {
  const Tensor<T>& xv = x.value();
  const Dims& d = xv.dims();
  if (d.size() < 2) throw DimensionError("pool: input needs at least two trailing spatial axes, got " + to_string(d));
  const std::size_t H = d[d.size() - 2];
  const std::size_t W = d[d.size() - 1];
  const std::size_t planes = (H * W) != 0 ? xv.numel() / (H * W) : 0;
  Tape<T>& tape = *x.tape;
  tape.count_flops(xv.numel());

  if (kind == PoolKind::global_avg) {
    if (H * W == 0) throw DimensionError("pool: global average over an empty plane");
    Dims od(d.begin(), d.end() - 2);
    Tensor<T> out(od);
    const T inv = T{1} / static_cast<T>(H * W);
    for (std::size_t p = 0; p < planes; ++p) {
      T acc = T{0};
      const T* src = xv.data().data() + p * H * W;
      for (std::size_t i = 0; i < H * W; ++i) acc += src[i];
      out[p] = acc * inv;
    }
    return tape.record("global_avg_pool", std::move(out), {x}, [x, planes, H, W, inv](Tape<T>& t, std::size_t self) {
      const Tensor<T>& g = t.grad_buffer(self);
      T* dx = t.grad_buffer(x.index).data().data();
      for (std::size_t p = 0; p < planes; ++p) {
        const T v = g[p] * inv;
        for (std::size_t i = 0; i < H * W; ++i) dx[p * H * W + i] += v;
      }
    });
  }

  if (kernel < 1 || stride < 1) throw DimensionError("pool: kernel and stride must be >= 1");
  if (kernel > H || kernel > W) {
    throw DimensionError("pool: kernel " + std::to_string(kernel) + " exceeds input plane " + std::to_string(H) + "x" +
                         std::to_string(W));
  }
  const std::size_t Ho = (H - kernel) / stride + 1;
  const std::size_t Wo = (W - kernel) / stride + 1;
  Dims od = d;
  od[d.size() - 2] = Ho;
  od[d.size() - 1] = Wo;
  Tensor<T> out(od);
  const T* src = xv.data().data();

  if (kind == PoolKind::max2d) {
    std::vector<std::size_t> argmax(out.numel());
    std::size_t o = 0;
    for (std::size_t p = 0; p < planes; ++p) {
      const T* plane = src + p * H * W;
      for (std::size_t oh = 0; oh < Ho; ++oh) {
        for (std::size_t ow = 0; ow < Wo; ++ow, ++o) {
          std::size_t best = (oh * stride) * W + ow * stride;
          for (std::size_t a = 0; a < kernel; ++a) {
            for (std::size_t b = 0; b < kernel; ++b) {
              const std::size_t idx = (oh * stride + a) * W + ow * stride + b;
              if (plane[idx] > plane[best]) best = idx;
            }
          }
          out[o] = plane[best];
          argmax[o] = p * H * W + best;
        }
      }
    }
    return tape.record("max_pool2d", std::move(out), {x}, [x, argmax = std::move(argmax)](Tape<T>& t, std::size_t self) {
      const Tensor<T>& g = t.grad_buffer(self);
      Tensor<T>& dx = t.grad_buffer(x.index);
      for (std::size_t i = 0; i < g.numel(); ++i) dx[argmax[i]] += g[i];
    });
  }

  const T inv = T{1} / static_cast<T>(kernel * kernel);
  std::size_t o = 0;
  for (std::size_t p = 0; p < planes; ++p) {
    const T* plane = src + p * H * W;
    for (std::size_t oh = 0; oh < Ho; ++oh) {
      for (std::size_t ow = 0; ow < Wo; ++ow, ++o) {
        T acc = T{0};
        for (std::size_t a = 0; a < kernel; ++a) {
          for (std::size_t b = 0; b < kernel; ++b) acc += plane[(oh * stride + a) * W + ow * stride + b];
        }
        out[o] = acc * inv;
      }
    }
  }
  return tape.record("avg_pool2d", std::move(out), {x},
                     [x, planes, H, W, Ho, Wo, kernel, stride, inv](Tape<T>& t, std::size_t self) {
                       const Tensor<T>& g = t.grad_buffer(self);
                       T* dx = t.grad_buffer(x.index).data().data();
                       std::size_t o = 0;
                       for (std::size_t p = 0; p < planes; ++p) {
                         for (std::size_t oh = 0; oh < Ho; ++oh) {
                           for (std::size_t ow = 0; ow < Wo; ++ow, ++o) {
                             const T v = g[o] * inv;
                             for (std::size_t a = 0; a < kernel; ++a) {
                               for (std::size_t b = 0; b < kernel; ++b) {
                                 dx[p * H * W + (oh * stride + a) * W + ow * stride + b] += v;
                               }
                             }
                           }
                         }
                       }
                     });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
  const Dims& xd = x.dims();
  const Dims& wd = weight.dims();
  if (xd.size() != 2) throw DimensionError("linear: input must be [N,D_in], got " + to_string(xd));
  if (wd.size() != 2) throw DimensionError("linear: weight must be [D_out,D_in], got " + to_string(wd));
  if (wd[1] != xd[1]) {
    throw DimensionError("linear: input axis 1 has extent " + std::to_string(xd[1]) + " but weight axis 1 has " +
                         std::to_string(wd[1]));
  }
  if (bias.dims() != Dims{wd[0]}) throw DimensionError("linear: bias dims " + to_string(bias.dims()) + " vs D_out=" + std::to_string(wd[0]));
  const std::size_t N = xd[0], Din = xd[1], Dout = wd[0];
  Tensor<T> out(Dims{N, Dout});
  const T* xp = x.value().data().data();
  const T* wp = weight.value().data().data();
  const T* bp = bias.value().data().data();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t o = 0; o < Dout; ++o) {
      T acc = T{0};
      for (std::size_t i = 0; i < Din; ++i) acc += xp[n * Din + i] * wp[o * Din + i];
      out[n * Dout + o] = acc + bp[o];
    }
  }
  x.tape->count_flops(2ULL * N * Dout * Din);
  return x.tape->record("linear", std::move(out), {x, weight, bias}, [x, weight, bias, N, Din, Dout](Tape<T>& t, std::size_t self) {
    const T* g = t.grad_buffer(self).data().data();
    const T* xp = t.value(x.index).data().data();
    const T* wp = t.value(weight.index).data().data();
    if (t.requires_grad(x.index)) {
      T* dx = t.grad_buffer(x.index).data().data();
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t o = 0; o < Dout; ++o) axpy(dx + n * Din, g[n * Dout + o], wp + o * Din, Din);
      }
    }
    if (t.requires_grad(weight.index)) {
      T* dw = t.grad_buffer(weight.index).data().data();
      for (std::size_t o = 0; o < Dout; ++o) {
        for (std::size_t n = 0; n < N; ++n) axpy(dw + o * Din, g[n * Dout + o], xp + n * Din, Din);
      }
    }
    if (t.requires_grad(bias.index)) {
      T* db = t.grad_buffer(bias.index).data().data();
      for (std::size_t o = 0; o < Dout; ++o) {
        T acc = T{0};
        for (std::size_t n = 0; n < N; ++n) acc += g[n * Dout + o];
        db[o] += acc;
      }
    }
  });
}

template <typename T>
Var<T> batchnorm2d(Var<T> x, Var<T> gamma, Var<T> beta, RunningStats<T> stats, Mode mode, T momentum, T eps) {
  const Dims& d = x.dims();
  if (d.size() != 4) throw DimensionError("batchnorm2d: input must be [N,C,H,W], got " + to_string(d));
  const std::size_t N = d[0], C = d[1], HW = d[2] * d[3];
  const std::size_t M = N * HW;
  for (const auto* p : {&gamma.dims(), &beta.dims(), &stats.mean.dims(), &stats.var.dims()}) {
    if (*p != Dims{C}) throw DimensionError("batchnorm2d: parameter dims " + to_string(*p) + " vs C=" + std::to_string(C));
  }
  if (!(eps > T{0})) throw ParameterError("batchnorm2d: eps must be > 0");
  if (mode == Mode::train && M < 2) {
    throw DataError("batchnorm2d: degenerate batch, N*H*W=" + std::to_string(M) + " < 2 in train mode");
  }
  const T* xp = x.value().data().data();
  const T* gp = gamma.value().data().data();
  const T* bp = beta.value().data().data();
  Tensor<T> out(d);
  std::vector<T> xhat(x.numel());
  std::vector<T> invstd(C);
  for (std::size_t c = 0; c < C; ++c) {
    T mean, var;
    if (mode == Mode::train) {
      T acc = T{0};
      for (std::size_t n = 0; n < N; ++n) {
        const T* src = xp + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) acc += src[i];
      }
      mean = acc / static_cast<T>(M);
      T sq = T{0};
      for (std::size_t n = 0; n < N; ++n) {
        const T* src = xp + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) {
          const T dv = src[i] - mean;
          sq += dv * dv;
        }
      }
      var = sq / static_cast<T>(M);
      stats.mean[c] = (T{1} - momentum) * stats.mean[c] + momentum * mean;
      stats.var[c] = (T{1} - momentum) * stats.var[c] + momentum * var * static_cast<T>(M) / static_cast<T>(M - 1);
    } else {
      mean = stats.mean[c];
      var = stats.var[c];
    }
    const T is = T{1} / std::sqrt(var + eps);
    invstd[c] = is;
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t base = (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        const T xh = (xp[base + i] - mean) * is;
        xhat[base + i] = xh;
        out[base + i] = gp[c] * xh + bp[c];
      }
    }
  }
  // Inference cost is an affine map per scalar; train mode also gathers statistics.
  x.tape->count_flops((mode == Mode::train ? 4ULL : 2ULL) * x.numel());
  return x.tape->record(
      "batchnorm2d", std::move(out), {x, gamma, beta},
      [x, gamma, beta, mode, N, C, HW, M, xhat = std::move(xhat), invstd = std::move(invstd)](Tape<T>& t, std::size_t self) {
        const T* g = t.grad_buffer(self).data().data();
        const T* gam = t.value(gamma.index).data().data();
        T* dx = t.requires_grad(x.index) ? t.grad_buffer(x.index).data().data() : nullptr;
        T* dgamma = t.requires_grad(gamma.index) ? t.grad_buffer(gamma.index).data().data() : nullptr;
        T* dbeta = t.requires_grad(beta.index) ? t.grad_buffer(beta.index).data().data() : nullptr;
        for (std::size_t c = 0; c < C; ++c) {
          T sum_g = T{0};
          T sum_gx = T{0};
          for (std::size_t n = 0; n < N; ++n) {
            const std::size_t base = (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) {
              sum_g += g[base + i];
              sum_gx += g[base + i] * xhat[base + i];
            }
          }
          if (dgamma) dgamma[c] += sum_gx;
          if (dbeta) dbeta[c] += sum_g;
          if (!dx) continue;
          const T k = gam[c] * invstd[c];
          if (mode == Mode::eval) {
            for (std::size_t n = 0; n < N; ++n) {
              const std::size_t base = (n * C + c) * HW;
              for (std::size_t i = 0; i < HW; ++i) dx[base + i] += k * g[base + i];
            }
          } else {
            const T m = static_cast<T>(M);
            for (std::size_t n = 0; n < N; ++n) {
              const std::size_t base = (n * C + c) * HW;
              for (std::size_t i = 0; i < HW; ++i) {
                dx[base + i] += k / m * (m * g[base + i] - sum_g - xhat[base + i] * sum_gx);
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> dropout(Var<T> x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ParameterError("dropout: rate must lie in [0,1), got " + std::to_string(rate));
  const Tensor<T>& xv = x.value();
  if (mode == Mode::eval || rate == 0.0) {
    return x.tape->record("dropout", xv, {x}, [x](Tape<T>& t, std::size_t self) {
      const Tensor<T>& g = t.grad_buffer(self);
      Tensor<T>& dx = t.grad_buffer(x.index);
      for (std::size_t i = 0; i < g.numel(); ++i) dx[i] += g[i];
    });
  }
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<T> mask(xv.numel());
  for (T& m : mask) m = uniform(rng) < rate ? T{0} : keep_scale;
  Tensor<T> out(xv.dims());
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = xv[i] * mask[i];
  x.tape->count_flops(xv.numel());
  return x.tape->record("dropout", std::move(out), {x}, [x, mask = std::move(mask)](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad_buffer(self);
    Tensor<T>& dx = t.grad_buffer(x.index);
    for (std::size_t i = 0; i < g.numel(); ++i) dx[i] += g[i] * mask[i];
  });
}

template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels) {
  const Dims& d = logits.dims();
  if (d.size() != 2) throw DimensionError("softmax_cross_entropy: logits must be [N,K], got " + to_string(d));
  const std::size_t N = d[0], K = d[1];
  if (labels.size() != N) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(N));
  }
  if (N == 0) throw DimensionError("softmax_cross_entropy: empty batch");
  std::vector<int> lab(labels.begin(), labels.end());
  for (std::size_t n = 0; n < N; ++n) {
    if (lab[n] < 1 || static_cast<std::size_t>(lab[n]) > K) {
      throw DataError("softmax_cross_entropy: label " + std::to_string(lab[n]) + " at row " + std::to_string(n) +
                      " outside [1," + std::to_string(K) + "]");
    }
  }
  const T* z = logits.value().data().data();
  std::vector<T> prob(N * K);
  T total = T{0};
  for (std::size_t n = 0; n < N; ++n) {
    const T* row = z + n * K;
    const T m = *std::max_element(row, row + K);
    T se = T{0};
    for (std::size_t k = 0; k < K; ++k) {
      prob[n * K + k] = std::exp(row[k] - m);
      se += prob[n * K + k];
    }
    for (std::size_t k = 0; k < K; ++k) prob[n * K + k] /= se;
    total += std::log(se) + m - row[lab[n] - 1];
  }
  Tensor<T> out(Dims{}, total / static_cast<T>(N));
  return logits.tape->record("softmax_cross_entropy", std::move(out), {logits},
                             [logits, N, K, lab = std::move(lab), prob = std::move(prob)](Tape<T>& t, std::size_t self) {
                               const T g = t.grad_buffer(self)[0] / static_cast<T>(N);
                               T* dz = t.grad_buffer(logits.index).data().data();
                               for (std::size_t n = 0; n < N; ++n) {
                                 for (std::size_t k = 0; k < K; ++k) {
                                   const T onehot = static_cast<std::size_t>(lab[n]) == k + 1 ? T{1} : T{0};
                                   dz[n * K + k] += g * (prob[n * K + k] - onehot);
                                 }
                               }
                             });
}

template <typename T>
Var<T> sum(Var<T> x) {
  T acc = T{0};
  for (T v : x.value().data()) acc += v;
  x.tape->count_flops(x.numel());
  return x.tape->record("sum", Tensor<T>(Dims{}, acc), {x}, [x](Tape<T>& t, std::size_t self) {
    const T g = t.grad_buffer(self)[0];
    for (T& v : t.grad_buffer(x.index).data()) v += g;
  });
}

template <typename T>
Var<T> segment_mean(Var<T> x, const Segmentation& segments) {
  const Tensor<T>& xv = x.value();
  if (xv.rank() < 1 || segments.frames < 1 || xv.dim(0) != segments.total()) {
    throw UsageError("segment_mean: leading axis " + to_string(xv.dims()) + " does not match " +
                     std::to_string(segments.clips) + " clips x " + std::to_string(segments.frames) + " frames");
  }
  const std::size_t F = segments.frames;
  const std::size_t frame = xv.numel() / segments.total();
  Dims od = xv.dims();
  od[0] = segments.clips;
  Tensor<T> out(od);
  const T inv = T{1} / static_cast<T>(F);
  // Frame values are summed in ascending order of value, so any permutation of
  // a clip's frames yields the bitwise-same mean.
  std::vector<T> column(F);
  for (std::size_t n = 0; n < segments.clips; ++n) {
    for (std::size_t i = 0; i < frame; ++i) {
      for (std::size_t t = 0; t < F; ++t) column[t] = xv[(n * F + t) * frame + i];
      std::sort(column.begin(), column.end());
      T acc = T{0};
      for (T v : column) acc += v;
      out[n * frame + i] = acc * inv;
    }
  }
  x.tape->count_flops(xv.numel());
  return x.tape->record("segment_mean", std::move(out), {x}, [x, segments, frame, inv](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad_buffer(self);
    Tensor<T>& dx = t.grad_buffer(x.index);
    const std::size_t F = segments.frames;
    for (std::size_t n = 0; n < segments.clips; ++n) {
      for (std::size_t tt = 0; tt < F; ++tt) {
        for (std::size_t i = 0; i < frame; ++i) dx[(n * F + tt) * frame + i] += g[n * frame + i] * inv;
      }
    }
  });
}

template <typename T>
Var<T> frames_to_volume(Var<T> x, const Segmentation& segments) {
  const Dims& d = x.dims();
  if (d.size() != 4) throw DimensionError("frames_to_volume: expected [N*T,C,h,w], got " + to_string(d));
  if (segments.frames < 1 || d[0] != segments.total()) {
    throw DimensionError("frames_to_volume: leading axis " + std::to_string(d[0]) + " does not match " +
                         std::to_string(segments.clips) + " clips x " + std::to_string(segments.frames) + " frames");
  }
  const std::size_t N = segments.clips, F = segments.frames, C = d[1], plane = d[2] * d[3];
  Tensor<T> out(Dims{N, C, F, d[2], d[3]});
  const T* src = x.value().data().data();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t t = 0; t < F; ++t) {
      for (std::size_t c = 0; c < C; ++c) {
        const T* s = src + ((n * F + t) * C + c) * plane;
        std::copy(s, s + plane, out.data().data() + ((n * C + c) * F + t) * plane);
      }
    }
  }
  return x.tape->record("frames_to_volume", std::move(out), {x}, [x, N, F, C, plane](Tape<T>& t, std::size_t self) {
    const T* g = t.grad_buffer(self).data().data();
    T* dx = t.grad_buffer(x.index).data().data();
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t tt = 0; tt < F; ++tt) {
        for (std::size_t c = 0; c < C; ++c) {
          const T* s = g + ((n * C + c) * F + tt) * plane;
          T* dst = dx + ((n * F + tt) * C + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) dst[i] += s[i];
        }
      }
    }
  });
}

template <typename T>
Var<T> slice_rows(Var<T> x, std::size_t first, std::size_t count) {
  const Dims& d = x.dims();
  if (d.empty() || first + count > d[0]) {
    throw DimensionError("slice_rows: rows [" + std::to_string(first) + "," + std::to_string(first + count) +
                         ") outside " + to_string(d));
  }
  const std::size_t row = product(d) / d[0];
  Dims od = d;
  od[0] = count;
  const T* src = x.value().data().data() + first * row;
  Tensor<T> out(od, std::vector<T>(src, src + count * row));
  return x.tape->record("slice_rows", std::move(out), {x}, [x, first, row](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad_buffer(self);
    T* dx = t.grad_buffer(x.index).data().data() + first * row;
    for (std::size_t i = 0; i < g.numel(); ++i) dx[i] += g[i];
  });
}

#define HFNET_INSTANTIATE_OPS(T)                                                                      \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, const Conv2dGeometry&);                              \
  template Var<T> conv3d(Var<T>, Var<T>, Var<T>, const Conv3dGeometry&);                              \
  template Var<T> add(Var<T>, Var<T>);                                                                \
  template Var<T> sub(Var<T>, Var<T>);                                                                \
  template Var<T> mul(Var<T>, Var<T>);                                                                \
  template Var<T> tanh(Var<T>);                                                                       \
  template Var<T> relu(Var<T>);                                                                       \
  template Var<T> scale(Var<T>, T);                                                                   \
  template Var<T> add_scalar(Var<T>, T);                                                              \
  template Var<T> complement(Var<T>);                                                                 \
  template Var<T> temporal_shift(Var<T>, const Segmentation&, ShiftDirection);                        \
  template Var<T> stack_depth(Var<T>, Var<T>);                                                        \
  template Var<T> reshape(Var<T>, Dims);                                                              \
  template Var<T> pool(Var<T>, PoolKind, std::size_t, std::size_t);                                   \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                                     \
  template Var<T> batchnorm2d(Var<T>, Var<T>, Var<T>, RunningStats<T>, Mode, T, T);                  \
  template Var<T> dropout(Var<T>, double, Mode, Rng&);                                                \
  template Var<T> softmax_cross_entropy(Var<T>, std::span<const int>);                                \
  template Var<T> sum(Var<T>);                                                                        \
  template Var<T> segment_mean(Var<T>, const Segmentation&);                                          \
  template Var<T> frames_to_volume(Var<T>, const Segmentation&);                                      \
  template Var<T> slice_rows(Var<T>, std::size_t, std::size_t);

HFNET_INSTANTIATE_OPS(float)
HFNET_INSTANTIATE_OPS(double)

}  // namespace hfnet
