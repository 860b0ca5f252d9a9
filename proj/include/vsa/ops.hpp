#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "vsa/tensor.hpp"

// Primitive tensor operations. Every differentiable op computes its result
// eagerly and, when a tape is active and an input is grad-enabled, records a
// backward closure that accumulates into input gradients. Closures must not
// record (Tape::backward suspends recording).

namespace vsa {

namespace detail {

inline size_t normalize_axis(int axis, size_t rank) {
  int r = static_cast<int>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r)
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  return static_cast<size_t>(axis);
}

inline Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (size_t i = 0; i < rank; ++i) {
    size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                       shape_str(b) + " are not broadcastable");
    out[i] = std::max(da, db);
  }
  return out;
}

// Element strides of `in` viewed through broadcast shape `out` (0 on
// broadcast dimensions), right-aligned.
inline std::vector<size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<size_t> full = row_major_strides(in);
  std::vector<size_t> st(out.size(), 0);
  size_t off = out.size() - in.size();
  for (size_t i = 0; i < in.size(); ++i)
    st[off + i] = (in[i] == 1 && out[off + i] != 1) ? 0 : full[i];
  return st;
}

// Odometer walk over `out`, yielding (linear out index, a offset, b offset).
template <class F>
void for_each2(const Shape& out, const std::vector<size_t>& sa,
               const std::vector<size_t>& sb, F&& f) {
  size_t n = numel(out);
  size_t rank = out.size();
  std::vector<size_t> idx(rank, 0);
  size_t ao = 0, bo = 0;
  for (size_t i = 0; i < n; ++i) {
    f(i, ao, bo);
    for (size_t d = rank; d-- > 0;) {
      ++idx[d];
      ao += sa[d];
      bo += sb[d];
      if (idx[d] < out[d]) break;
      ao -= sa[d] * out[d];
      bo -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

// Offset-pattern classification for the broadcast walk. Most pipeline ops hit
// one of three regular patterns that avoid the generic odometer: identical
// shapes, a trailing-repeat operand (bias [d]), or an inner-broadcast operand
// ([B, n, 1]).
struct IterKind {
  int kind;       // 0 identity, 1 tail-repeat, 2 head-keep, 3 generic
  size_t period;  // repeat length (1) or inner extent (2)
};

inline IterKind classify_strides(const Shape& out,
                                 const std::vector<size_t>& s) {
  std::vector<size_t> os = row_major_strides(out);
  if (s == os) return {0, 0};
  size_t rank = out.size();
  {
    size_t split = 0;
    while (split < rank && s[split] == 0) ++split;
    bool ok = split > 0;
    size_t p = 1;
    for (size_t d = split; d < rank && ok; ++d) {
      if (s[d] != os[d]) ok = false;
      p *= out[d];
    }
    if (ok) return {1, p};  // offset = i mod p
  }
  {
    size_t split = rank;
    while (split > 0 && s[split - 1] == 0) --split;
    size_t q = 1;
    for (size_t d = split; d < rank; ++d) q *= out[d];
    bool ok = split < rank;
    for (size_t d = 0; d < split && ok; ++d)
      if (s[d] != os[d] / q) ok = false;
    if (ok) return {2, q};  // offset = i div q
  }
  return {3, 0};
}

template <int KA, int KB, class F>
void for_each2_pattern(size_t total, size_t pa, size_t pb, F&& f) {
  size_t ai = 0, bi = 0, ca = 0, cb = 0;
  for (size_t i = 0; i < total; ++i) {
    f(i, KA == 0 ? i : ai, KB == 0 ? i : bi);
    if constexpr (KA == 1) {
      if (++ai == pa) ai = 0;
    } else if constexpr (KA == 2) {
      if (++ca == pa) {
        ca = 0;
        ++ai;
      }
    }
    if constexpr (KB == 1) {
      if (++bi == pb) bi = 0;
    } else if constexpr (KB == 2) {
      if (++cb == pb) {
        cb = 0;
        ++bi;
      }
    }
  }
}

// Fast-path dispatcher over the regular patterns; falls back to the odometer.
template <class F>
void for_each2_fast(const Shape& out, const std::vector<size_t>& sa,
                    const std::vector<size_t>& sb, F&& f) {
  IterKind ka = classify_strides(out, sa);
  IterKind kb = classify_strides(out, sb);
  if (ka.kind == 3 || kb.kind == 3) {
    for_each2(out, sa, sb, std::forward<F>(f));
    return;
  }
  size_t total = numel(out);
  switch (ka.kind * 3 + kb.kind) {
    case 0: for_each2_pattern<0, 0>(total, ka.period, kb.period, f); break;
    case 1: for_each2_pattern<0, 1>(total, ka.period, kb.period, f); break;
    case 2: for_each2_pattern<0, 2>(total, ka.period, kb.period, f); break;
    case 3: for_each2_pattern<1, 0>(total, ka.period, kb.period, f); break;
    case 4: for_each2_pattern<1, 1>(total, ka.period, kb.period, f); break;
    case 5: for_each2_pattern<1, 2>(total, ka.period, kb.period, f); break;
    case 6: for_each2_pattern<2, 0>(total, ka.period, kb.period, f); break;
    case 7: for_each2_pattern<2, 1>(total, ka.period, kb.period, f); break;
    default: for_each2_pattern<2, 2>(total, ka.period, kb.period, f); break;
  }
}

// Split a shape at `axis` into [outer, n, inner] extents.
struct AxisView {
  size_t outer, n, inner;
};
inline AxisView axis_view(const Shape& s, size_t axis) {
  AxisView v{1, s[axis], 1};
  for (size_t i = 0; i < axis; ++i) v.outer *= s[i];
  for (size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

inline Shape reduced_shape(const Shape& s, size_t axis, bool keepdims) {
  Shape out = s;
  if (keepdims) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + static_cast<long>(axis));
    if (out.empty()) out = {1};
  }
  return out;
}

// Materialize a broadcastable 0/1 mask against shape `to`.
template <typename T>
std::vector<uint8_t> expand_mask(const Tensor<T>& mask, const Shape& to) {
  Shape bc = broadcast_shapes(mask.shape(), to, "mask");
  if (bc != to)
    throw ShapeError("mask shape " + shape_str(mask.shape()) +
                     " does not broadcast to " + shape_str(to));
  std::vector<uint8_t> out(numel(to));
  auto sm = broadcast_strides(mask.shape(), to);
  auto sx = row_major_strides(to);
  const T* m = mask.data().data();
  for_each2(to, sx, sm, [&](size_t i, size_t, size_t mo) {
    out[i] = m[mo] > T(0.5) ? 1 : 0;
  });
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops with broadcasting
// ---------------------------------------------------------------------------

// fwd(av, bv) -> value; dfa(up, av, bv) -> grad contribution to a; likewise dfb.
template <typename T, class Fwd, class Dfa, class Dfb>
Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b,
                    Fwd fwd, Dfa dfa, Dfb dfb) {
  Shape os = detail::broadcast_shapes(a.shape(), b.shape(), name);
  auto sa = detail::broadcast_strides(a.shape(), os);
  auto sb = detail::broadcast_strides(b.shape(), os);
  Tensor<T> out = Tensor<T>::zeros(os);
  {
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* po = out.data_mut().data();
    detail::for_each2_fast(os, sa, sb, [&](size_t i, size_t ao, size_t bo) {
      po[i] = fwd(pa[ao], pb[bo]);
    });
  }
  Tape<T>* tp = g_active_tape<T>;
  if (tp && (a.grad_enabled() || b.grad_enabled())) {
    Tensor<T> ac = a, bc = b;
    ac.mark_used();
    bc.mark_used();
    out.mark_tracked();
    tp->record([ac, bc, out, os, sa, sb, dfa, dfb]() mutable {
      if (!out.has_grad()) return;
      std::span<const T> up = out.grad();
      const T* pa = ac.data().data();
      const T* pb = bc.data().data();
      T* ga = ac.grad_enabled() ? ac.grad().data() : nullptr;
      T* gb = bc.grad_enabled() ? bc.grad().data() : nullptr;
      detail::for_each2_fast(os, sa, sb, [&](size_t i, size_t ao, size_t bo) {
        if (ga) ga[ao] += dfa(up[i], pa[ao], pb[bo]);
        if (gb) gb[bo] += dfb(up[i], pa[ao], pb[bo]);
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "add", a, b, [](T x, T y) { return x + y; },
      [](T up, T, T) { return up; }, [](T up, T, T) { return up; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "sub", a, b, [](T x, T y) { return x - y; },
      [](T up, T, T) { return up; }, [](T up, T, T) { return -up; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "mul", a, b, [](T x, T y) { return x * y; },
      [](T up, T, T y) { return up * y; }, [](T up, T x, T) { return up * x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  for (T v : b.data())
    if (v == T(0)) throw DomainError("div: zero denominator");
  return binary_op<T>(
      "div", a, b, [](T x, T y) { return x / y; },
      [](T up, T, T y) { return up / y; },
      [](T up, T x, T y) { return -up * x / (y * y); });
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

// fwd(x) -> y; dfx(up, x, y) -> grad contribution.
template <typename T, class Fwd, class Dfx>
Tensor<T> unary_op(const Tensor<T>& x, Fwd fwd, Dfx dfx) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  {
    std::span<const T> px = x.data();
    T* po = out.data_mut().data();
    for (size_t i = 0; i < px.size(); ++i) po[i] = fwd(px[i]);
  }
  Tape<T>* tp = g_active_tape<T>;
  if (tp && x.grad_enabled()) {
    Tensor<T> xc = x;
    xc.mark_used();
    out.mark_tracked();
    tp->record([xc, out, dfx]() mutable {
      if (!out.has_grad()) return;
      std::span<const T> up = out.grad();
      std::span<const T> px = xc.data();
      std::span<const T> py = out.data();
      T* gx = xc.grad().data();
      for (size_t i = 0; i < px.size(); ++i) gx[i] += dfx(up[i], px[i], py[i]);
    });
  }
  return out;
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary_op<T>(x, [](T v) { return std::exp(v); },
                     [](T up, T, T y) { return up * y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  for (T v : x.data())
    if (v <= T(0)) throw DomainError("log: non-positive input");
  return unary_op<T>(x, [](T v) { return std::log(v); },
                     [](T up, T v, T) { return up / v; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  for (T v : x.data())
    if (v < T(0)) throw DomainError("sqrt: negative input");
  return unary_op<T>(x, [](T v) { return std::sqrt(v); },
                     [](T up, T, T y) { return up / (T(2) * y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary_op<T>(x, [](T v) { return std::tanh(v); },
                     [](T up, T, T y) { return up * (T(1) - y * y); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary_op<T>(
      x, [](T v) { return v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                                    : std::exp(v) / (T(1) + std::exp(v)); },
      [](T up, T, T y) { return up * y * (T(1) - y); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary_op<T>(x, [](T v) { return v > T(0) ? v : T(0); },
                     [](T up, T v, T) { return v > T(0) ? up : T(0); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, double c) {
  T tc = static_cast<T>(c);
  return unary_op<T>(x, [tc](T v) { return v * tc; },
                     [tc](T up, T, T) { return up * tc; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, double c) {
  T tc = static_cast<T>(c);
  return unary_op<T>(x, [tc](T v) { return v + tc; },
                     [](T up, T, T) { return up; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) { return scale(x, -1.0); }

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
  if (numel(new_shape) != x.size())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(new_shape));
  Tensor<T> out = Tensor<T>::from_vector(
      std::move(new_shape), std::vector<T>(x.data().begin(), x.data().end()));
  Tape<T>* tp = g_active_tape<T>;
  if (tp && x.grad_enabled()) {
    Tensor<T> xc = x;
    xc.mark_used();
    out.mark_tracked();
    tp->record([xc, out]() mutable {
      if (!out.has_grad()) return;
      std::span<const T> up = out.grad();
      T* gx = xc.grad().data();
      for (size_t i = 0; i < up.size(); ++i) gx[i] += up[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<size_t>& perm) {
  size_t rank = x.rank();
  if (perm.size() != rank)
    throw ShapeError("permute: permutation size mismatch for shape " +
                     shape_str(x.shape()));
  std::vector<bool> seen(rank, false);
  Shape os(rank);
  for (size_t d = 0; d < rank; ++d) {
    if (perm[d] >= rank || seen[perm[d]])
      throw ShapeError("permute: invalid permutation");
    seen[perm[d]] = true;
    os[d] = x.shape()[perm[d]];
  }
  auto xs = row_major_strides(x.shape());
  std::vector<size_t> src_strides(rank);
  for (size_t d = 0; d < rank; ++d) src_strides[d] = xs[perm[d]];
  auto out_id = row_major_strides(os);

  Tensor<T> out = Tensor<T>::zeros(os);
  {
    const T* px = x.data().data();
    T* po = out.data_mut().data();
    detail::for_each2(os, out_id, src_strides,
                      [&](size_t i, size_t, size_t so) { po[i] = px[so]; });
  }
  Tape<T>* tp = g_active_tape<T>;
  if (tp && x.grad_enabled()) {
    Tensor<T> xc = x;
    xc.mark_used();
    out.mark_tracked();
    tp->record([xc, out, os, out_id, src_strides]() mutable {
      if (!out.has_grad()) return;
      std::span<const T> up = out.grad();
      T* gx = xc.grad().data();
      detail::for_each2(os, out_id, src_strides,
                        [&](size_t i, size_t, size_t so) { gx[so] += up[i]; });
    });
  }
  return out;
}

// Swap the last two axes (the matmul transpose).
template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
  if (x.rank() < 2) throw ShapeError("transpose: rank < 2");
  std::vector<size_t> perm(x.rank());
  for (size_t i = 0; i < x.rank(); ++i) perm[i] = i;
  std::swap(perm[x.rank() - 1], perm[x.rank() - 2]);
  return permute(x, perm);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis_in) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  size_t axis = detail::normalize_axis(axis_in, parts[0].rank());
  Shape os = parts[0].shape();
  size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != os.size())
      throw ShapeError("concat: rank mismatch");
    for (size_t d = 0; d < os.size(); ++d)
      if (d != axis && p.shape()[d] != os[d])
        throw ShapeError("concat: shapes " + shape_str(parts[0].shape()) +
                         " and " + shape_str(p.shape()) + " differ off-axis");
    total += p.shape()[axis];
  }
  os[axis] = total;
  auto v = detail::axis_view(os, axis);
  Tensor<T> out = Tensor<T>::zeros(os);
  {
    T* po = out.data_mut().data();
    size_t at = 0;
    for (const auto& p : parts) {
      size_t np = p.shape()[axis];
      const T* pp = p.data().data();
      for (size_t o = 0; o < v.outer; ++o)
        std::memcpy(po + (o * v.n + at) * v.inner, pp + o * np * v.inner,
                    np * v.inner * sizeof(T));
      at += np;
    }
  }
  Tape<T>* tp = g_active_tape<T>;
  bool any = false;
  for (const auto& p : parts) any = any || p.grad_enabled();
  if (tp && any) {
    std::vector<Tensor<T>> pc = parts;
    for (auto& p : pc) p.mark_used();
    out.mark_tracked();
    tp->record([pc, out, v]() mutable {
      if (!out.has_grad()) return;
      std::span<const T> up = out.grad();
      size_t at = 0;
      for (auto& p : pc) {
        size_t np = p.size() / (v.outer * v.inner);
        if (p.grad_enabled()) {
          T* gp = p.grad().data();
          for (size_t o = 0; o < v.outer; ++o) {
            const T* u = up.data() + (o * v.n + at) * v.inner;
            T* g = gp + o * np * v.inner;
            for (size_t j = 0; j < np * v.inner; ++j) g[j] += u[j];
          }
        }
        at += np;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis_in, size_t start, size_t len) {
  size_t axis = detail::normalize_axis(axis_in, x.rank());
  if (start + len > x.shape()[axis])
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") exceeds axis size " +
                     std::to_string(x.shape()[axis]));
  Shape os = x.shape();
  os[axis] = len;
  auto v = detail::axis_view(x.shape(), axis);
  Tensor<T> out = Tensor<T>::zeros(os);
  {
    const T* px = x.data().data();
    T* po = out.data_mut().data();
    for (size_t o = 0; o < v.outer; ++o)
      std::memcpy(po + o * len * v.inner, px + (o * v.n + start) * v.inner,
                  len * v.inner * sizeof(T));
  }
  Tape<T>* tp = g_active_tape<T>;
  if (tp && x.grad_enabled()) {
    Tensor<T> xc = x;
    xc.mark_used();
    out.mark_tracked();
    tp->record([xc, out, v, start, len]() mutable {
      if (!out.has_grad()) return;
      std::span<const T> up = out.grad();
      T* gx = xc.grad().data();
      for (size_t o = 0; o < v.outer; ++o) {
        const T* u = up.data() + o * len * v.inner;
        T* g = gx + (o * v.n + start) * v.inner;
        for (size_t j = 0; j < len * v.inner; ++j) g[j] += u[j];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matmul
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void gemm(size_t m, size_t p, size_t n, const T* A, const T* B, T* O) {
  // O[m,n] += A[m,p] * B[p,n]
  for (size_t i = 0; i < m; ++i) {
    T* orow = O + i * n;
    for (size_t k = 0; k < p; ++k) {
      T av = A[i * p + k];
      const T* brow = B + k * n;
      for (size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

template <typename T>
void gemm_abt(size_t m, size_t n, size_t p, const T* A, const T* B, T* O) {
  // O[m,p] += A[m,n] * B[p,n]^T
  for (size_t i = 0; i < m; ++i) {
    const T* arow = A + i * n;
    T* orow = O + i * p;
    for (size_t k = 0; k < p; ++k) {
      const T* brow = B + k * n;
      T acc = T(0);
      for (size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      orow[k] += acc;
    }
  }
}

template <typename T>
void gemm_atb(size_t m, size_t p, size_t n, const T* A, const T* B, T* O) {
  // O[p,n] += A[m,p]^T * B[m,n]
  for (size_t i = 0; i < m; ++i) {
    const T* arow = A + i * p;
    const T* brow = B + i * n;
    for (size_t k = 0; k < p; ++k) {
      T av = arow[k];
      T* orow = O + k * n;
      for (size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw ShapeError("matmul: both operands need rank >= 2, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  size_t m = a.shape()[a.rank() - 2], p = a.shape()[a.rank() - 1];
  size_t p2 = b.shape()[b.rank() - 2], n = b.shape()[b.rank() - 1];
  if (p != p2)
    throw ShapeError("matmul: inner dimensions disagree for shapes " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  Shape ab(a.shape().begin(), a.shape().end() - 2);
  Shape bb(b.shape().begin(), b.shape().end() - 2);
  Shape os = detail::broadcast_shapes(ab, bb, "matmul");
  Shape batch = os.empty() ? Shape{1} : os;
  os.push_back(m);
  os.push_back(n);
  auto sa = detail::broadcast_strides(ab.empty() ? Shape{1} : ab, batch);
  auto sb = detail::broadcast_strides(bb.empty() ? Shape{1} : bb, batch);
  for (auto& s : sa) s *= m * p;
  for (auto& s : sb) s *= p * n;

  Tensor<T> out = Tensor<T>::zeros(os);
  {
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* po = out.data_mut().data();
    size_t mat = 0;
    detail::for_each2(batch, sa, sb, [&](size_t, size_t ao, size_t bo) {
      detail::gemm(m, p, n, pa + ao, pb + bo, po + mat * m * n);
      ++mat;
    });
  }
  Tape<T>* tp = g_active_tape<T>;
  if (tp && (a.grad_enabled() || b.grad_enabled())) {
    Tensor<T> ac = a, bc = b;
    ac.mark_used();
    bc.mark_used();
    out.mark_tracked();
    tp->record([ac, bc, out, batch, sa, sb, m, p, n]() mutable {
      if (!out.has_grad()) return;
      std::span<const T> up = out.grad();
      const T* pa = ac.data().data();
      const T* pb = bc.data().data();
      T* ga = ac.grad_enabled() ? ac.grad().data() : nullptr;
      T* gb = bc.grad_enabled() ? bc.grad().data() : nullptr;
      size_t mat = 0;
      detail::for_each2(batch, sa, sb, [&](size_t, size_t ao, size_t bo) {
        const T* u = up.data() + mat * m * n;
        if (ga) detail::gemm_abt(m, n, p, u, pb + bo, ga + ao);
        if (gb) detail::gemm_atb(m, p, n, pa + ao, u, gb + bo);
        ++mat;
      });
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x, int axis_in, bool keepdims = false) {
  size_t axis = detail::normalize_axis(axis_in, x.rank());
  auto v = detail::axis_view(x.shape(), axis);
  Tensor<T> out = Tensor<T>::zeros(detail::reduced_shape(x.shape(), axis, keepdims));
  {
    const T* px = x.data().data();
    T* po = out.data_mut().data();
    for (size_t o = 0; o < v.outer; ++o)
      for (size_t k = 0; k < v.n; ++k)
        for (size_t i = 0; i < v.inner; ++i)
          po[o * v.inner + i] += px[(o * v.n + k) * v.inner + i];
  }
  Tape<T>* tp = g_active_tape<T>;
  if (tp && x.grad_enabled()) {
    Tensor<T> xc = x;
    xc.mark_used();
    out.mark_tracked();
    tp->record([xc, out, v]() mutable {
      if (!out.has_grad()) return;
      std::span<const T> up = out.grad();
      T* gx = xc.grad().data();
      for (size_t o = 0; o < v.outer; ++o)
        for (size_t k = 0; k < v.n; ++k)
          for (size_t i = 0; i < v.inner; ++i)
            gx[(o * v.n + k) * v.inner + i] += up[o * v.inner + i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, int axis, bool keepdims = false) {
  size_t ax = detail::normalize_axis(axis, x.rank());
  return scale(sum(x, axis, keepdims), 1.0 / static_cast<double>(x.shape()[ax]));
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  return sum(reshape(x, {x.size()}), 0);
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(x.size()));
}

// Max over an axis; gradient routes to the first maximal element per slice.
template <typename T>
Tensor<T> max_reduce(const Tensor<T>& x, int axis_in, bool keepdims = false) {
  size_t axis = detail::normalize_axis(axis_in, x.rank());
  auto v = detail::axis_view(x.shape(), axis);
  Tensor<T> out = Tensor<T>::zeros(detail::reduced_shape(x.shape(), axis, keepdims));
  auto argmax = std::make_shared<std::vector<size_t>>(v.outer * v.inner);
  {
    const T* px = x.data().data();
    T* po = out.data_mut().data();
    for (size_t o = 0; o < v.outer; ++o)
      for (size_t i = 0; i < v.inner; ++i) {
        T best = px[(o * v.n) * v.inner + i];
        size_t bk = 0;
        for (size_t k = 1; k < v.n; ++k) {
          T val = px[(o * v.n + k) * v.inner + i];
          if (val > best) {
            best = val;
            bk = k;
          }
        }
        po[o * v.inner + i] = best;
        (*argmax)[o * v.inner + i] = bk;
      }
  }
  Tape<T>* tp = g_active_tape<T>;
  if (tp && x.grad_enabled()) {
    Tensor<T> xc = x;
    xc.mark_used();
    out.mark_tracked();
    tp->record([xc, out, v, argmax]() mutable {
      if (!out.has_grad()) return;
      std::span<const T> up = out.grad();
      T* gx = xc.grad().data();
      for (size_t o = 0; o < v.outer; ++o)
        for (size_t i = 0; i < v.inner; ++i) {
          size_t k = (*argmax)[o * v.inner + i];
          gx[(o * v.n + k) * v.inner + i] += up[o * v.inner + i];
        }
    });
  }
  return out;
}

// Stable log-sum-exp over an axis. -inf inputs (masked) contribute nothing; a
// slice with no finite entry is degenerate.
template <typename T>
Tensor<T> logsumexp(const Tensor<T>& x, int axis_in, bool keepdims = false) {
  size_t axis = detail::normalize_axis(axis_in, x.rank());
  auto v = detail::axis_view(x.shape(), axis);
  Tensor<T> out = Tensor<T>::zeros(detail::reduced_shape(x.shape(), axis, keepdims));
  {
    const T* px = x.data().data();
    T* po = out.data_mut().data();
    for (size_t o = 0; o < v.outer; ++o)
      for (size_t i = 0; i < v.inner; ++i) {
        T m = -std::numeric_limits<T>::infinity();
        for (size_t k = 0; k < v.n; ++k)
          m = std::max(m, px[(o * v.n + k) * v.inner + i]);
        if (std::isinf(m) && m < T(0))
          throw DomainError("logsumexp: slice has no finite entries");
        T s = T(0);
        for (size_t k = 0; k < v.n; ++k)
          s += std::exp(px[(o * v.n + k) * v.inner + i] - m);
        po[o * v.inner + i] = m + std::log(s);
      }
  }
  Tape<T>* tp = g_active_tape<T>;
  if (tp && x.grad_enabled()) {
    Tensor<T> xc = x;
    xc.mark_used();
    out.mark_tracked();
    tp->record([xc, out, v]() mutable {
      if (!out.has_grad()) return;
      std::span<const T> up = out.grad();
      std::span<const T> py = out.data();
      std::span<const T> px = xc.data();
      T* gx = xc.grad().data();
      for (size_t o = 0; o < v.outer; ++o)
        for (size_t i = 0; i < v.inner; ++i) {
          T lse = py[o * v.inner + i];
          T u = up[o * v.inner + i];
          for (size_t k = 0; k < v.n; ++k) {
            size_t xi = (o * v.n + k) * v.inner + i;
            T xv = px[xi];
            if (std::isinf(xv) && xv < T(0)) continue;  // exact zero weight
            gx[xi] += u * std::exp(xv - lse);
          }
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax and masking
// ---------------------------------------------------------------------------

// Numerically stabilized softmax along `axis`. Optional 0/1 mask
// (broadcastable to x): masked positions get exactly 0 and zero gradient;
// a fully masked slice is a degenerate input.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis_in,
                  const Tensor<T>* mask = nullptr) {
  size_t axis = detail::normalize_axis(axis_in, x.rank());
  auto v = detail::axis_view(x.shape(), axis);
  std::shared_ptr<std::vector<uint8_t>> keep;
  if (mask) {
    keep = std::make_shared<std::vector<uint8_t>>(
        detail::expand_mask(*mask, x.shape()));
  }
  auto unmasked = [&](size_t xi) { return !keep || (*keep)[xi]; };

  Tensor<T> out = Tensor<T>::zeros(x.shape());
  {
    const T* px = x.data().data();
    T* po = out.data_mut().data();
    for (size_t o = 0; o < v.outer; ++o)
      for (size_t i = 0; i < v.inner; ++i) {
        T m = -std::numeric_limits<T>::infinity();
        size_t valid = 0;
        for (size_t k = 0; k < v.n; ++k) {
          size_t xi = (o * v.n + k) * v.inner + i;
          if (unmasked(xi)) {
            m = std::max(m, px[xi]);
            ++valid;
          }
        }
        if (valid == 0)
          throw DomainError("softmax: fully masked slice");
        T denom = T(0);
        for (size_t k = 0; k < v.n; ++k) {
          size_t xi = (o * v.n + k) * v.inner + i;
          if (unmasked(xi)) denom += std::exp(px[xi] - m);
        }
        for (size_t k = 0; k < v.n; ++k) {
          size_t xi = (o * v.n + k) * v.inner + i;
          po[xi] = unmasked(xi) ? std::exp(px[xi] - m) / denom : T(0);
        }
      }
  }
  Tape<T>* tp = g_active_tape<T>;
  if (tp && x.grad_enabled()) {
    Tensor<T> xc = x;
    xc.mark_used();
    out.mark_tracked();
    tp->record([xc, out, v]() mutable {
      if (!out.has_grad()) return;
      std::span<const T> up = out.grad();
      std::span<const T> py = out.data();
      T* gx = xc.grad().data();
      for (size_t o = 0; o < v.outer; ++o)
        for (size_t i = 0; i < v.inner; ++i) {
          T dot = T(0);
          for (size_t k = 0; k < v.n; ++k) {
            size_t xi = (o * v.n + k) * v.inner + i;
            dot += up[xi] * py[xi];
          }
          for (size_t k = 0; k < v.n; ++k) {
            size_t xi = (o * v.n + k) * v.inner + i;
            gx[xi] += py[xi] * (up[xi] - dot);  // masked: py == 0
          }
        }
    });
  }
  return out;
}

// out = mask ? x : fill. Gradient passes only through kept positions.
template <typename T>
Tensor<T> masked_fill(const Tensor<T>& x, const Tensor<T>& mask, T fill) {
  auto keep = std::make_shared<std::vector<uint8_t>>(
      detail::expand_mask(mask, x.shape()));
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  {
    const T* px = x.data().data();
    T* po = out.data_mut().data();
    for (size_t i = 0; i < x.size(); ++i) po[i] = (*keep)[i] ? px[i] : fill;
  }
  Tape<T>* tp = g_active_tape<T>;
  if (tp && x.grad_enabled()) {
    Tensor<T> xc = x;
    xc.mark_used();
    out.mark_tracked();
    tp->record([xc, out, keep]() mutable {
      if (!out.has_grad()) return;
      std::span<const T> up = out.grad();
      T* gx = xc.grad().data();
      for (size_t i = 0; i < up.size(); ++i)
        if ((*keep)[i]) gx[i] += up[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Layer normalization
// ---------------------------------------------------------------------------

// Normalizes over the last axis, then applies gain and bias (both [d]).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, double eps = 1e-5) {
  size_t d = x.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
    throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(d) +
                     "], got " + shape_str(gain.shape()) + " / " +
                     shape_str(bias.shape()));
  size_t rows = x.size() / d;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  {
    const T* px = x.data().data();
    const T* pg = gain.data().data();
    const T* pb = bias.data().data();
    T* po = out.data_mut().data();
    for (size_t r = 0; r < rows; ++r) {
      const T* row = px + r * d;
      T mean = T(0);
      for (size_t c = 0; c < d; ++c) mean += row[c];
      mean /= static_cast<T>(d);
      T var = T(0);
      for (size_t c = 0; c < d; ++c) {
        T diff = row[c] - mean;
        var += diff * diff;
      }
      var /= static_cast<T>(d);
      T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
      (*rstd)[r] = inv;
      for (size_t c = 0; c < d; ++c) {
        T h = (row[c] - mean) * inv;
        (*xhat)[r * d + c] = h;
        po[r * d + c] = h * pg[c] + pb[c];
      }
    }
  }
  Tape<T>* tp = g_active_tape<T>;
  if (tp && (x.grad_enabled() || gain.grad_enabled() || bias.grad_enabled())) {
    Tensor<T> xc = x, gc = gain, bc = bias;
    xc.mark_used();
    gc.mark_used();
    bc.mark_used();
    out.mark_tracked();
    tp->record([xc, gc, bc, out, xhat, rstd, rows, d]() mutable {
      if (!out.has_grad()) return;
      std::span<const T> up = out.grad();
      const T* pg = gc.data().data();
      T* gx = xc.grad_enabled() ? xc.grad().data() : nullptr;
      T* gg = gc.grad_enabled() ? gc.grad().data() : nullptr;
      T* gb = bc.grad_enabled() ? bc.grad().data() : nullptr;
      for (size_t r = 0; r < rows; ++r) {
        const T* u = up.data() + r * d;
        const T* h = xhat->data() + r * d;
        if (gg || gb) {
          for (size_t c = 0; c < d; ++c) {
            if (gg) gg[c] += u[c] * h[c];
            if (gb) gb[c] += u[c];
          }
        }
        if (gx) {
          // dx = rstd * (du*g - mean(du*g) - xhat * mean(du*g*xhat))
          T m1 = T(0), m2 = T(0);
          for (size_t c = 0; c < d; ++c) {
            T ug = u[c] * pg[c];
            m1 += ug;
            m2 += ug * h[c];
          }
          m1 /= static_cast<T>(d);
          m2 /= static_cast<T>(d);
          T inv = (*rstd)[r];
          T* g = gx + r * d;
          for (size_t c = 0; c < d; ++c)
            g[c] += inv * (u[c] * pg[c] - m1 - h[c] * m2);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Embedding lookup
// ---------------------------------------------------------------------------

// table: [V, E]; ids laid out row-major under ids_shape. Output
// ids_shape x [E]. Backward scatter-adds rows of the upstream gradient.
template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table,
                           const std::vector<int64_t>& ids, Shape ids_shape) {
  if (table.rank() != 2)
    throw ShapeError("embedding_lookup: table must be [vocab, width], got " +
                     shape_str(table.shape()));
  if (numel(ids_shape) != ids.size())
    throw ShapeError("embedding_lookup: ids length does not match shape");
  size_t V = table.dim(0), E = table.dim(1);
  Shape os = ids_shape;
  os.push_back(E);
  Tensor<T> out = Tensor<T>::zeros(os);
  {
    const T* pt = table.data().data();
    T* po = out.data_mut().data();
    for (size_t i = 0; i < ids.size(); ++i) {
      int64_t id = ids[i];
      if (id < 0 || static_cast<size_t>(id) >= V)
        throw ContractError("embedding_lookup: id " + std::to_string(id) +
                            " out of range [0, " + std::to_string(V) + ")");
      std::memcpy(po + i * E, pt + static_cast<size_t>(id) * E, E * sizeof(T));
    }
  }
  Tape<T>* tp = g_active_tape<T>;
  if (tp && table.grad_enabled()) {
    Tensor<T> tc = table;
    tc.mark_used();
    out.mark_tracked();
    auto idc = std::make_shared<std::vector<int64_t>>(ids);
    tp->record([tc, out, idc, E]() mutable {
      if (!out.has_grad()) return;
      std::span<const T> up = out.grad();
      T* gt = tc.grad().data();
      for (size_t i = 0; i < idc->size(); ++i) {
        const T* u = up.data() + i * E;
        T* g = gt + static_cast<size_t>((*idc)[i]) * E;
        for (size_t e = 0; e < E; ++e) g[e] += u[e];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss primitives
// ---------------------------------------------------------------------------

// Multi-label binary cross-entropy on logits, mean over all elements,
// computed in the stable softplus form.
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& targets) {
  if (logits.shape() != targets.shape())
    throw ShapeError("bce_with_logits: logits " + shape_str(logits.shape()) +
                     " vs targets " + shape_str(targets.shape()));
  for (T t : targets.data())
    if (t < T(0) || t > T(1))
      throw ContractError("bce_with_logits: target outside [0, 1]");
  auto softplus = [](T v) {
    return std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v)));
  };
  size_t n = logits.size();
  T acc = T(0);
  {
    std::span<const T> pl = logits.data();
    std::span<const T> pt = targets.data();
    for (size_t i = 0; i < n; ++i)
      acc += pt[i] * softplus(-pl[i]) + (T(1) - pt[i]) * softplus(pl[i]);
  }
  Tensor<T> out = Tensor<T>::from_vector({1}, {acc / static_cast<T>(n)});
  Tape<T>* tp = g_active_tape<T>;
  if (tp && (logits.grad_enabled() || targets.grad_enabled())) {
    Tensor<T> lc = logits, tc = targets;
    lc.mark_used();
    tc.mark_used();
    out.mark_tracked();
    tp->record([lc, tc, out, n]() mutable {
      if (!out.has_grad()) return;
      T u = out.grad()[0] / static_cast<T>(n);
      std::span<const T> pl = lc.data();
      std::span<const T> pt = tc.data();
      auto sig = [](T v) {
        return v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                         : std::exp(v) / (T(1) + std::exp(v));
      };
      if (lc.grad_enabled()) {
        T* gl = lc.grad().data();
        for (size_t i = 0; i < n; ++i) gl[i] += u * (sig(pl[i]) - pt[i]);
      }
      if (tc.grad_enabled()) {
        T* gt = tc.grad().data();
        for (size_t i = 0; i < n; ++i) gt[i] += u * (-pl[i]);
      }
    });
  }
  return out;
}

// Hinge triplet loss over a [B, B] similarity matrix whose diagonal holds the
// positive pairs; only the hardest negative per row and per column
// contributes (mean over anchors).
template <typename T>
Tensor<T> triplet_loss_hard(const Tensor<T>& sim, double margin) {
  if (sim.rank() != 2 || sim.dim(0) != sim.dim(1))
    throw ContractError("triplet_loss_hard: similarity matrix must be square, got " +
                        shape_str(sim.shape()));
  size_t B = sim.dim(0);
  if (B < 2)
    throw ContractError("triplet_loss_hard: needs at least 2 pairs for negatives");
  T alpha = static_cast<T>(margin);
  std::span<const T> s = sim.data();
  struct Pick {
    size_t row_neg, col_neg;
    bool row_active, col_active;
  };
  auto picks = std::make_shared<std::vector<Pick>>(B);
  T acc = T(0);
  for (size_t i = 0; i < B; ++i) {
    size_t jr = i == 0 ? 1 : 0, jc = jr;
    for (size_t j = 0; j < B; ++j) {
      if (j == i) continue;
      if (s[i * B + j] > s[i * B + jr]) jr = j;
      if (s[j * B + i] > s[jc * B + i]) jc = j;
    }
    T t_row = alpha - s[i * B + i] + s[i * B + jr];
    T t_col = alpha - s[i * B + i] + s[jc * B + i];
    (*picks)[i] = {jr, jc, t_row > T(0), t_col > T(0)};
    acc += std::max(t_row, T(0)) + std::max(t_col, T(0));
  }
  Tensor<T> out = Tensor<T>::from_vector({1}, {acc / static_cast<T>(B)});
  Tape<T>* tp = g_active_tape<T>;
  if (tp && sim.grad_enabled()) {
    Tensor<T> sc = sim;
    sc.mark_used();
    out.mark_tracked();
    tp->record([sc, out, picks, B]() mutable {
      if (!out.has_grad()) return;
      T u = out.grad()[0] / static_cast<T>(B);
      T* g = sc.grad().data();
      for (size_t i = 0; i < B; ++i) {
        const Pick& pk = (*picks)[i];
        if (pk.row_active) {
          g[i * B + pk.row_neg] += u;
          g[i * B + i] -= u;
        }
        if (pk.col_active) {
          g[pk.col_neg * B + i] += u;
          g[i * B + i] -= u;
        }
      }
    });
  }
  return out;
}

}  // namespace vsa
