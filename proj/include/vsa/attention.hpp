#pragma once

#include "vsa/nn.hpp"

namespace vsa {

template <typename T>
struct MultiHeadParams {
  Linear<T> wq, wk, wv, wo;
  size_t heads = 0;
  size_t d = 0;

  MultiHeadParams() = default;
  MultiHeadParams(size_t width, size_t n_heads, Rng& rng)
      : wq(width, width, rng),
        wk(width, width, rng),
        wv(width, width, rng),
        wo(width, width, rng),
        heads(n_heads),
        d(width) {
    if (width % n_heads != 0)
      throw ConfigError("attention width " + std::to_string(width) +
                        " is not divisible by " + std::to_string(n_heads) +
                        " heads");
  }

  void collect(ParamSet<T>& ps, const std::string& name) const {
    wq.collect(ps, name + ".wq");
    wk.collect(ps, name + ".wk");
    wv.collect(ps, name + ".wv");
    wo.collect(ps, name + ".wo");
  }
};

template <typename T>
struct AttentionResult {
  Tensor<T> output;   // [B, n_q, d]
  Tensor<T> weights;  // [B, h, n_q, n_k]
};

// [B, n, d] -> [B, h, n, d/h]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, size_t heads) {
  size_t B = x.dim(0), n = x.dim(1), d = x.dim(2);
  return permute(reshape(x, {B, n, heads, d / heads}), {0, 2, 1, 3});
}

// [B, h, n, d/h] -> [B, n, d]
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x) {
  size_t B = x.dim(0), h = x.dim(1), n = x.dim(2), dh = x.dim(3);
  return reshape(permute(x, {0, 2, 1, 3}), {B, n, h * dh});
}

// Scaled dot-product attention over h heads: per head
// softmax(Q K^T / sqrt(d_h)) V with the key-side validity mask applied before
// the softmax, heads concatenated, then output-projected. Rows at padded
// query positions are not meaningful; callers mask them.
template <typename T>
AttentionResult<T> multi_head_attention_full(const MultiHeadParams<T>& p,
                                             const SequenceBatch<T>& queries,
                                             const SequenceBatch<T>& keys_values) {
  if (queries.width() != p.d || keys_values.width() != p.d)
    throw ShapeError("multi_head_attention: widths " +
                     shape_str(queries.feats.shape()) + " / " +
                     shape_str(keys_values.feats.shape()) +
                     " do not match model width " + std::to_string(p.d));
  size_t B = queries.batch(), nk = keys_values.len();
  size_t dh = p.d / p.heads;

  Tensor<T> q = split_heads(p.wq(queries.feats), p.heads);   // [B,h,nq,dh]
  Tensor<T> k = split_heads(p.wk(keys_values.feats), p.heads);
  Tensor<T> v = split_heads(p.wv(keys_values.feats), p.heads);

  Tensor<T> logits = scale(matmul(q, transpose_last2(k)),
                           1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor<T> key_mask = reshape(keys_values.mask, {B, 1, 1, nk});
  Tensor<T> weights = softmax(logits, -1, &key_mask);  // [B,h,nq,nk]
  Tensor<T> ctx = merge_heads(matmul(weights, v));     // [B,nq,d]
  return {p.wo(ctx), weights};
}

template <typename T>
Tensor<T> multi_head_attention(const MultiHeadParams<T>& p,
                               const SequenceBatch<T>& queries,
                               const SequenceBatch<T>& keys_values) {
  return multi_head_attention_full(p, queries, keys_values).output;
}

template <typename T>
struct AttentionBlockParams {
  MultiHeadParams<T> mha;
  LayerNorm<T> ln;
  double dropout_keep = 1.0;

  AttentionBlockParams() = default;
  AttentionBlockParams(size_t d, size_t heads, double keep, Rng& rng)
      : mha(d, heads, rng), ln(d), dropout_keep(keep) {
    if (keep <= 0.0 || keep > 1.0)
      throw ConfigError("dropout keep probability must be in (0, 1]");
  }

  void collect(ParamSet<T>& ps, const std::string& name) const {
    mha.collect(ps, name + ".mha");
    ln.collect(ps, name + ".ln");
  }
};

// attention -> dropout -> residual add -> layer norm (post-norm). Padded rows
// are zeroed after the norm so nothing downstream can pick them up.
template <typename T>
SequenceBatch<T> cross_attention_block(const AttentionBlockParams<T>& p,
                                       const SequenceBatch<T>& x,
                                       const SequenceBatch<T>& z, bool train,
                                       Rng& rng) {
  Tensor<T> attn = multi_head_attention(p.mha, x, z);
  Tensor<T> out = p.ln(add(x.feats, dropout(attn, p.dropout_keep, train, rng)));
  Tensor<T> row_mask =
      reshape(x.mask, {x.batch(), x.len(), 1});
  return SequenceBatch<T>(mul(out, row_mask), x.mask);
}

template <typename T>
SequenceBatch<T> self_attention_block(const AttentionBlockParams<T>& p,
                                      const SequenceBatch<T>& x, bool train,
                                      Rng& rng) {
  return cross_attention_block(p, x, x, train, rng);
}

}  // namespace vsa
