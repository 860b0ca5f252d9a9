#pragma once

#include "vsa/attention.hpp"

namespace vsa {

enum class AggregatorKind {
  kScoreAttention,
  kMean,
  kMax,
  kLogSumExp,
  kConv1d,
  kClsToken,
};

inline const char* aggregator_name(AggregatorKind k) {
  switch (k) {
    case AggregatorKind::kScoreAttention: return "score_attention";
    case AggregatorKind::kMean: return "mean";
    case AggregatorKind::kMax: return "max";
    case AggregatorKind::kLogSumExp: return "logsumexp";
    case AggregatorKind::kConv1d: return "conv1d";
    case AggregatorKind::kClsToken: return "cls";
  }
  return "?";
}

inline AggregatorKind parse_aggregator(const std::string& s) {
  if (s == "score_attention") return AggregatorKind::kScoreAttention;
  if (s == "mean") return AggregatorKind::kMean;
  if (s == "max") return AggregatorKind::kMax;
  if (s == "logsumexp") return AggregatorKind::kLogSumExp;
  if (s == "conv1d") return AggregatorKind::kConv1d;
  if (s == "cls") return AggregatorKind::kClsToken;
  throw ConfigError("unknown aggregator '" + s +
                    "' (expected score_attention|mean|max|logsumexp|conv1d|cls)");
}

// One parallel instance of the score operator: cross-attention projections
// for the reduced modality's queries and the other modality's keys/values,
// plus the linear head mapping each query's concatenated head outputs to a
// single scalar.
template <typename T>
struct ScoreAttnInstance {
  Linear<T> wq, wk, wv;
  Linear<T> fc;  // d -> 1
  size_t heads = 0;
  size_t d = 0;

  ScoreAttnInstance() = default;
  ScoreAttnInstance(size_t width, size_t n_heads, Rng& rng)
      : wq(width, width, rng),
        wk(width, width, rng),
        wv(width, width, rng),
        fc(width, 1, rng),
        heads(n_heads),
        d(width) {
    if (width % n_heads != 0)
      throw ConfigError("score attention width not divisible by head count");
  }

  void collect(ParamSet<T>& ps, const std::string& name) const {
    wq.collect(ps, name + ".wq");
    wk.collect(ps, name + ".wk");
    wv.collect(ps, name + ".wv");
    fc.collect(ps, name + ".fc");
  }
};

template <typename T>
struct ScoreAttentionParams {
  std::vector<ScoreAttnInstance<T>> instances;

  ScoreAttentionParams() = default;
  ScoreAttentionParams(size_t k, size_t width, size_t heads, Rng& rng) {
    if (k < 1) throw ConfigError("score attention needs k >= 1");
    instances.reserve(k);
    for (size_t i = 0; i < k; ++i) instances.emplace_back(width, heads, rng);
  }
  size_t k() const { return instances.size(); }

  void collect(ParamSet<T>& ps, const std::string& name) const {
    for (size_t i = 0; i < instances.size(); ++i)
      instances[i].collect(ps, name + "[" + std::to_string(i) + "]");
  }
};

// Relevance distribution over x's positions conditioned on z: per-head
// cross-attention outputs are concatenated, projected to one scalar per
// position, and softmax-normalized over x's unmasked positions.
template <typename T>
Tensor<T> score_attention_scores(const ScoreAttnInstance<T>& p,
                                 const SequenceBatch<T>& x,
                                 const SequenceBatch<T>& z) {
  if (x.width() != p.d || z.width() != p.d)
    throw ShapeError("score_attention: widths " + shape_str(x.feats.shape()) +
                     " / " + shape_str(z.feats.shape()) +
                     " do not match operator width " + std::to_string(p.d));
  size_t B = x.batch(), nq = x.len(), nk = z.len();
  size_t dh = p.d / p.heads;

  Tensor<T> q = split_heads(p.wq(x.feats), p.heads);
  Tensor<T> k = split_heads(p.wk(z.feats), p.heads);
  Tensor<T> v = split_heads(p.wv(z.feats), p.heads);
  Tensor<T> logits = scale(matmul(q, transpose_last2(k)),
                           1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor<T> key_mask = reshape(z.mask, {B, 1, 1, nk});
  Tensor<T> attn = softmax(logits, -1, &key_mask);
  Tensor<T> heads_out = merge_heads(matmul(attn, v));       // [B,nq,d]
  Tensor<T> raw = reshape(p.fc(heads_out), {B, nq});        // one scalar each
  return softmax(raw, -1, &x.mask);
}

// Eq-style reduction: each of the k instances takes a score-weighted sum of
// x's ORIGINAL vectors (the attention machinery only produces the weights).
// Output [B, k, d].
template <typename T>
Tensor<T> score_attention_reduce(const ScoreAttentionParams<T>& p,
                                 const SequenceBatch<T>& x,
                                 const SequenceBatch<T>& z) {
  size_t B = x.batch(), nq = x.len(), d = x.width();
  std::vector<Tensor<T>> outs;
  outs.reserve(p.k());
  for (const auto& inst : p.instances) {
    Tensor<T> s = score_attention_scores(inst, x, z);       // [B,nq]
    Tensor<T> weighted = mul(x.feats, reshape(s, {B, nq, 1}));
    outs.push_back(reshape(sum(weighted, 1), {B, 1, d}));
  }
  return outs.size() == 1 ? outs[0] : concat(outs, 1);
}

// Mean over the k compressed vectors (the VQA combination rule).
template <typename T>
Tensor<T> combine_k_vqa(const Tensor<T>& y) {
  if (y.rank() != 3) throw ShapeError("combine_k_vqa: expected [B, k, d]");
  return mean(y, 1);
}

constexpr double kCosineEps = 1e-8;

// Slot-matched cosine similarities averaged over k. Output [B].
template <typename T>
Tensor<T> combine_k_retrieval(const Tensor<T>& y_img, const Tensor<T>& y_txt) {
  if (y_img.shape() != y_txt.shape() || y_img.rank() != 3)
    throw ShapeError("combine_k_retrieval: shapes " + shape_str(y_img.shape()) +
                     " and " + shape_str(y_txt.shape()) + " must match [B,k,d]");
  Tensor<T> dots = sum(mul(y_img, y_txt), -1);                   // [B,k]
  Tensor<T> na = sqrt(sum(mul(y_img, y_img), -1));
  Tensor<T> nb = sqrt(sum(mul(y_txt, y_txt), -1));
  Tensor<T> sim = div(dots, add_scalar(mul(na, nb), kCosineEps));
  return mean(sim, 1);
}

// Row-paired k*k-slot variant: every slot of y_img[i] against every slot of
// y_txt[i], averaged. Output [B].
template <typename T>
Tensor<T> combine_k_retrieval_all_pairs(const Tensor<T>& y_img,
                                        const Tensor<T>& y_txt) {
  if (y_img.shape() != y_txt.shape() || y_img.rank() != 3)
    throw ShapeError("combine_k_retrieval_all_pairs: shapes must match [B,k,d]");
  size_t B = y_img.dim(0), k = y_img.dim(1), d = y_img.dim(2);
  Tensor<T> a = reshape(y_img, {B, k, 1, d});
  Tensor<T> b = reshape(y_txt, {B, 1, k, d});
  Tensor<T> dots = sum(mul(a, b), -1);  // [B,k,k]
  Tensor<T> na = reshape(sqrt(sum(mul(y_img, y_img), -1)), {B, k, 1});
  Tensor<T> nb = reshape(sqrt(sum(mul(y_txt, y_txt), -1)), {B, 1, k});
  Tensor<T> sim = div(dots, add_scalar(mul(na, nb), kCosineEps));
  return mean(mean(sim, -1), -1);
}

// All-pairs similarity matrix between two batches of compressed vectors.
// matched=true pairs slot i with slot i (k scores averaged); otherwise all
// k*k slot pairs are averaged.
template <typename T>
Tensor<T> similarity_matrix(const Tensor<T>& y_img, const Tensor<T>& y_txt,
                            bool matched_slots = true) {
  if (y_img.rank() != 3 || y_txt.rank() != 3 || y_img.dim(1) != y_txt.dim(1) ||
      y_img.dim(2) != y_txt.dim(2))
    throw ShapeError("similarity_matrix: incompatible shapes " +
                     shape_str(y_img.shape()) + " and " +
                     shape_str(y_txt.shape()));
  size_t Bi = y_img.dim(0), Bt = y_txt.dim(0), k = y_img.dim(1), d = y_img.dim(2);
  if (matched_slots) {
    Tensor<T> a = reshape(y_img, {Bi, 1, k, d});
    Tensor<T> b = reshape(y_txt, {1, Bt, k, d});
    Tensor<T> dots = sum(mul(a, b), -1);  // [Bi,Bt,k]
    Tensor<T> na = reshape(sqrt(sum(mul(y_img, y_img), -1)), {Bi, 1, k});
    Tensor<T> nb = reshape(sqrt(sum(mul(y_txt, y_txt), -1)), {1, Bt, k});
    Tensor<T> sim = div(dots, add_scalar(mul(na, nb), kCosineEps));
    return mean(sim, -1);
  }
  Tensor<T> a = reshape(y_img, {Bi, 1, k, 1, d});
  Tensor<T> b = reshape(y_txt, {1, Bt, 1, k, d});
  Tensor<T> dots = sum(mul(a, b), -1);  // [Bi,Bt,k,k]
  Tensor<T> na = reshape(sqrt(sum(mul(y_img, y_img), -1)), {Bi, 1, k, 1});
  Tensor<T> nb = reshape(sqrt(sum(mul(y_txt, y_txt), -1)), {1, Bt, 1, k});
  Tensor<T> sim = div(dots, add_scalar(mul(na, nb), kCosineEps));
  return mean(mean(sim, -1), -1);
}

namespace detail {

template <typename T>
void require_valid_rows(const SequenceBatch<T>& x, const char* op) {
  size_t B = x.batch(), L = x.len();
  for (size_t b = 0; b < B; ++b) {
    T s = T(0);
    for (size_t t = 0; t < L; ++t) s += x.mask.data()[b * L + t];
    if (s == T(0))
      throw DomainError(std::string(op) + ": empty valid set in batch row " +
                        std::to_string(b));
  }
}

}  // namespace detail

// Parameter-free baselines over valid positions. Output [B, d].
template <typename T>
Tensor<T> baseline_reduce(AggregatorKind kind, const SequenceBatch<T>& x) {
  detail::require_valid_rows(x, "baseline_reduce");
  size_t B = x.batch(), L = x.len(), d = x.width();
  Tensor<T> mask3 = reshape(x.mask, {B, L, 1});
  switch (kind) {
    case AggregatorKind::kMean: {
      Tensor<T> tot = sum(mul(x.feats, mask3), 1);          // [B,d]
      Tensor<T> cnt = reshape(sum(x.mask, 1), {B, 1});      // [B,1]
      return div(tot, cnt);
    }
    case AggregatorKind::kMax: {
      Tensor<T> filled = masked_fill(
          x.feats, mask3, -std::numeric_limits<T>::infinity());
      return max_reduce(filled, 1);
    }
    case AggregatorKind::kLogSumExp: {
      // LSE along the sequence axis, one value per channel (see the module
      // notes on the axis choice).
      Tensor<T> filled = masked_fill(
          x.feats, mask3, -std::numeric_limits<T>::infinity());
      return logsumexp(filled, 1);
    }
    default:
      throw ContractError("baseline_reduce: kind carries learnable state, use "
                          "its dedicated path");
  }
}

// Learned full-window depthwise 1-D convolution along the sequence axis.
// The kernel spans the configured maximum length; padded positions
// contribute zero.
template <typename T>
struct Conv1dParams {
  Tensor<T> weight;  // [L_max, d]
  Tensor<T> bias;    // [d]

  Conv1dParams() = default;
  Conv1dParams(size_t max_len, size_t d, Rng& rng)
      : weight(init_fan_in<T>({max_len, d}, max_len, rng)),
        bias(Tensor<T>::zeros({d}, true)) {}

  void collect(ParamSet<T>& ps, const std::string& name) const {
    ps.add(name + ".weight", weight);
    ps.add(name + ".bias", bias);
  }
};

template <typename T>
Tensor<T> conv1d_reduce(const Conv1dParams<T>& p, const SequenceBatch<T>& x) {
  detail::require_valid_rows(x, "conv1d_reduce");
  size_t B = x.batch(), L = x.len();
  if (L > p.weight.dim(0))
    throw ShapeError("conv1d_reduce: sequence length " + std::to_string(L) +
                     " exceeds kernel span " + std::to_string(p.weight.dim(0)));
  Tensor<T> mask3 = reshape(x.mask, {B, L, 1});
  Tensor<T> kernel = L == p.weight.dim(0) ? p.weight : slice(p.weight, 0, 0, L);
  Tensor<T> prod = mul(mul(x.feats, mask3), kernel);  // [B,L,d]
  return add(sum(prod, 1), p.bias);
}

// Learnable CLS embedding, one per modality.
template <typename T>
struct ClsParams {
  Tensor<T> embedding;  // [d]

  ClsParams() = default;
  ClsParams(size_t d, Rng& rng)
      : embedding(init_uniform<T>({d}, -0.1, 0.1, rng)) {}

  void collect(ParamSet<T>& ps, const std::string& name) const {
    ps.add(name + ".embedding", embedding);
  }
};

// Prepend the learnable CLS embedding; the new position is always valid.
template <typename T>
SequenceBatch<T> prepend_cls(const SequenceBatch<T>& x,
                             const Tensor<T>& cls_embedding) {
  size_t B = x.batch(), d = x.width();
  if (cls_embedding.shape() != Shape{d})
    throw ShapeError("prepend_cls: embedding shape " +
                     shape_str(cls_embedding.shape()) + " vs width " +
                     std::to_string(d));
  Tensor<T> tile = add(Tensor<T>::zeros({B, 1, d}),
                       reshape(cls_embedding, {1, 1, d}));
  Tensor<T> feats = concat<T>({tile, x.feats}, 1);
  Tensor<T> ones = Tensor<T>::full({B, 1}, T(1));
  Tensor<T> mask = concat<T>({ones, x.mask}, 1);
  return SequenceBatch<T>(feats, mask);
}

// Summary of a CLS-prepended, attention-propagated sequence: its row 0.
template <typename T>
Tensor<T> cls_reduce(const SequenceBatch<T>& x) {
  return reshape(slice(x.feats, 1, 0, 1), {x.batch(), x.width()});
}

}  // namespace vsa
