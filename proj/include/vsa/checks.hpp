#pragma once

#include <functional>

#include "vsa/nn.hpp"

// Independent verification helpers: finite-difference gradient checking and
// naive per-element reference computations. Everything here deliberately
// avoids the vectorized tensor-op path it is used to verify; reference
// implementations are plain scalar loops over raw buffers.

namespace vsa::checks {

inline double rel_err(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
}

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                        bool requires_grad = false) {
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>::from_vector(std::move(shape), std::move(v), requires_grad);
}

struct GradCheck {
  double max_rel_err = 0.0;
  size_t coords_checked = 0;
  size_t worst_param = 0;
  size_t worst_coord = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Central finite differences against recorded analytic gradients, in 64-bit.
// `loss_fn` must be a pure function of the parameter values (reseed any
// internal randomness per call). `sample_rate` < 1 checks a deterministic
// pseudo-random subset of coordinates.
template <typename F>
GradCheck check_gradients(std::vector<Tensor<double>> params, F&& loss_fn,
                          double h = 1e-5, double sample_rate = 1.0,
                          uint64_t sample_seed = 0) {
  for (auto& p : params) p.zero_grad();
  {
    Tape<double> tape;
    Tensor<double> loss = loss_fn();
    tape.backward(loss);
  }
  Rng pick(sample_seed, RngStream::kTest);
  GradCheck res;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    std::vector<double> analytic(p.grad().begin(), p.grad().end());
    auto vals = p.data_mut();
    for (size_t i = 0; i < vals.size(); ++i) {
      if (sample_rate < 1.0 && pick.uniform(0.0, 1.0) >= sample_rate) continue;
      double orig = vals[i];
      vals[i] = orig + h;
      double up = loss_fn().item();
      vals[i] = orig - h;
      double dn = loss_fn().item();
      vals[i] = orig;
      double numeric = (up - dn) / (2.0 * h);
      double e = rel_err(analytic[i], numeric);
      if (e > res.max_rel_err) {
        res.max_rel_err = e;
        res.worst_param = pi;
        res.worst_coord = i;
        res.worst_analytic = analytic[i];
        res.worst_numeric = numeric;
      }
      ++res.coords_checked;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Naive scaled dot-product attention (per-element triple loop)
// ---------------------------------------------------------------------------

struct NaiveLinear {
  std::vector<double> w;  // [in][out] row-major
  std::vector<double> b;  // [out]
  size_t in = 0, out = 0;
};

template <typename T>
NaiveLinear naive_of(const Linear<T>& l) {
  NaiveLinear n;
  n.in = l.weight.dim(0);
  n.out = l.weight.dim(1);
  n.w.assign(l.weight.data().begin(), l.weight.data().end());
  n.b.assign(l.bias.data().begin(), l.bias.data().end());
  return n;
}

inline std::vector<double> naive_apply(const NaiveLinear& l,
                                       const std::vector<double>& x) {
  std::vector<double> y(l.out, 0.0);
  for (size_t o = 0; o < l.out; ++o) {
    double acc = l.b[o];
    for (size_t i = 0; i < l.in; ++i) acc += x[i] * l.w[i * l.out + o];
    y[o] = acc;
  }
  return y;
}

// One batch row of multi-head attention, scalar loops throughout.
// q: [nq][d], kv: [nk][d] (already width d), kv_mask: validity of keys.
// Returns [nq][d] rows of concat(heads) BEFORE the output projection.
inline std::vector<std::vector<double>> naive_mha_heads(
    const NaiveLinear& wq, const NaiveLinear& wk, const NaiveLinear& wv,
    size_t heads, const std::vector<std::vector<double>>& q,
    const std::vector<std::vector<double>>& kv,
    const std::vector<uint8_t>& kv_mask) {
  size_t d = wq.out, nq = q.size(), nk = kv.size();
  size_t dh = d / heads;
  std::vector<std::vector<double>> Q(nq), K(nk), V(nk);
  for (size_t i = 0; i < nq; ++i) Q[i] = naive_apply(wq, q[i]);
  for (size_t j = 0; j < nk; ++j) {
    K[j] = naive_apply(wk, kv[j]);
    V[j] = naive_apply(wv, kv[j]);
  }
  std::vector<std::vector<double>> out(nq, std::vector<double>(d, 0.0));
  for (size_t h = 0; h < heads; ++h) {
    for (size_t i = 0; i < nq; ++i) {
      std::vector<double> logits(nk, 0.0);
      for (size_t j = 0; j < nk; ++j) {
        double dot = 0.0;
        for (size_t c = 0; c < dh; ++c)
          dot += Q[i][h * dh + c] * K[j][h * dh + c];
        logits[j] = dot / std::sqrt(static_cast<double>(dh));
      }
      double m = -std::numeric_limits<double>::infinity();
      for (size_t j = 0; j < nk; ++j)
        if (kv_mask[j]) m = std::max(m, logits[j]);
      double denom = 0.0;
      for (size_t j = 0; j < nk; ++j)
        if (kv_mask[j]) denom += std::exp(logits[j] - m);
      for (size_t j = 0; j < nk; ++j) {
        if (!kv_mask[j]) continue;
        double w = std::exp(logits[j] - m) / denom;
        for (size_t c = 0; c < dh; ++c)
          out[i][h * dh + c] += w * V[j][h * dh + c];
      }
    }
  }
  return out;
}

// One batch row of the score operator, scalar loops throughout: per-head
// cross attention, concat, scalar projection, softmax over unmasked query
// positions. Returns one weight per query position (0 where masked).
inline std::vector<double> naive_score_attention_row(
    const NaiveLinear& wq, const NaiveLinear& wk, const NaiveLinear& wv,
    const NaiveLinear& fc, size_t heads,
    const std::vector<std::vector<double>>& x,
    const std::vector<std::vector<double>>& z,
    const std::vector<uint8_t>& z_mask, const std::vector<uint8_t>& x_mask) {
  auto ctx = naive_mha_heads(wq, wk, wv, heads, x, z, z_mask);
  size_t nq = x.size();
  std::vector<double> raw(nq, 0.0);
  for (size_t i = 0; i < nq; ++i) raw[i] = naive_apply(fc, ctx[i])[0];
  double m = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < nq; ++i)
    if (x_mask[i]) m = std::max(m, raw[i]);
  double denom = 0.0;
  for (size_t i = 0; i < nq; ++i)
    if (x_mask[i]) denom += std::exp(raw[i] - m);
  std::vector<double> s(nq, 0.0);
  for (size_t i = 0; i < nq; ++i)
    if (x_mask[i]) s[i] = std::exp(raw[i] - m) / denom;
  return s;
}

}  // namespace vsa::checks
