#pragma once

#include <string>

#include "vsa/ops.hpp"

namespace vsa {

// Named parameter list in registration order; the checkpoint format and the
// optimizer both iterate it. Shared tensors are registered once.
template <typename T>
struct ParamSet {
  std::vector<std::pair<std::string, Tensor<T>>> items;

  void add(const std::string& name, const Tensor<T>& t) {
    for (const auto& [n, p] : items)
      if (p.same_storage(t)) return;
    items.emplace_back(name, t);
  }
  void merge(const ParamSet& other, const std::string& prefix) {
    for (const auto& [n, p] : other.items) add(prefix + "." + n, p);
  }
  size_t count() const {
    size_t n = 0;
    for (const auto& [name, p] : items) n += p.size();
    return n;
  }
  void zero_grads() {
    for (auto& [name, p] : items) p.zero_grad();
  }
};

template <typename T>
Tensor<T> init_uniform(Shape shape, double lo, double hi, Rng& rng) {
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>::from_vector(std::move(shape), std::move(v), true);
}

// fan-in scaled uniform init for linear/recurrent weights.
template <typename T>
Tensor<T> init_fan_in(Shape shape, size_t fan_in, Rng& rng) {
  double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return init_uniform<T>(std::move(shape), -s, s, rng);
}

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]

  Linear() = default;
  Linear(size_t in, size_t out, Rng& rng)
      : weight(init_fan_in<T>({in, out}, in, rng)),
        bias(Tensor<T>::zeros({out}, true)) {}

  Tensor<T> operator()(const Tensor<T>& x) const {
    return add(matmul(x, weight), bias);
  }
  void collect(ParamSet<T>& ps, const std::string& name) const {
    ps.add(name + ".weight", weight);
    ps.add(name + ".bias", bias);
  }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gain;  // [d]
  Tensor<T> bias;  // [d]
  static constexpr double kEps = 1e-5;

  LayerNorm() = default;
  explicit LayerNorm(size_t d)
      : gain(Tensor<T>::from_vector({d}, std::vector<T>(d, T(1)), true)),
        bias(Tensor<T>::zeros({d}, true)) {}

  // Normalizes over the last axis.
  Tensor<T> operator()(const Tensor<T>& x) const {
    return layer_norm(x, gain, bias, kEps);
  }
  void collect(ParamSet<T>& ps, const std::string& name) const {
    ps.add(name + ".gain", gain);
    ps.add(name + ".bias", bias);
  }
};

// Inverted dropout: at train time keeps each element with probability `keep`
// and scales survivors by 1/keep; identity at eval or keep == 1.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double keep, bool train, Rng& rng) {
  if (keep <= 0.0 || keep > 1.0)
    throw ContractError("dropout: keep probability must be in (0, 1]");
  if (!train || keep == 1.0) return x;
  std::vector<T> m(x.size());
  T inv = static_cast<T>(1.0 / keep);
  for (auto& v : m) v = rng.bernoulli(keep) ? inv : T(0);
  return mul(x, Tensor<T>::from_vector(x.shape(), std::move(m)));
}

// A padded batch of feature sequences [B, L, d] plus a 0/1 validity mask
// [B, L]. All variable-length handling flows through the mask; the mask never
// carries gradient.
template <typename T>
struct SequenceBatch {
  Tensor<T> feats;  // [B, L, d]
  Tensor<T> mask;   // [B, L]

  SequenceBatch() = default;
  SequenceBatch(Tensor<T> f, Tensor<T> m) : feats(std::move(f)), mask(std::move(m)) {
    if (feats.rank() != 3)
      throw ShapeError("SequenceBatch: features must be [B, L, d], got " +
                       shape_str(feats.shape()));
    if (mask.rank() != 2 || mask.dim(0) != feats.dim(0) ||
        mask.dim(1) != feats.dim(1))
      throw ShapeError("SequenceBatch: mask " + shape_str(mask.shape()) +
                       " does not match features " + shape_str(feats.shape()));
  }

  size_t batch() const { return feats.dim(0); }
  size_t len() const { return feats.dim(1); }
  size_t width() const { return feats.dim(2); }

  static Tensor<T> mask_from_lengths(size_t batch, size_t len,
                                     const std::vector<size_t>& lengths) {
    std::vector<T> m(batch * len, T(0));
    for (size_t b = 0; b < batch; ++b) {
      if (lengths[b] > len)
        throw ContractError("mask_from_lengths: length exceeds padded size");
      for (size_t t = 0; t < lengths[b]; ++t) m[b * len + t] = T(1);
    }
    return Tensor<T>::from_vector({batch, len}, std::move(m));
  }
};

}  // namespace vsa
