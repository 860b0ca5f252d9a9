#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "vsa/attention.hpp"
#include "vsa/checks.hpp"

using namespace vsa;
using checks::random_tensor;

using D = Tensor<double>;
using Seq = SequenceBatch<double>;

namespace {

Seq random_seq(size_t B, size_t L, size_t d, Rng& rng,
               const std::vector<size_t>& lengths) {
  return Seq(random_tensor<double>({B, L, d}, rng),
             Seq::mask_from_lengths(B, L, lengths));
}

// Naive per-batch-row attention including the output projection.
std::vector<std::vector<double>> naive_mha_row(
    const MultiHeadParams<double>& p, const std::vector<std::vector<double>>& q,
    const std::vector<std::vector<double>>& kv,
    const std::vector<uint8_t>& kv_mask) {
  auto heads = checks::naive_mha_heads(
      checks::naive_of(p.wq), checks::naive_of(p.wk), checks::naive_of(p.wv),
      p.heads, q, kv, kv_mask);
  auto wo = checks::naive_of(p.wo);
  std::vector<std::vector<double>> out;
  out.reserve(heads.size());
  for (auto& row : heads) out.push_back(checks::naive_apply(wo, row));
  return out;
}

std::vector<std::vector<double>> rows_of(const D& t, size_t b) {
  size_t n = t.dim(1), d = t.dim(2);
  std::vector<std::vector<double>> rows(n, std::vector<double>(d));
  for (size_t i = 0; i < n; ++i)
    for (size_t c = 0; c < d; ++c) rows[i][c] = t.data()[(b * n + i) * d + c];
  return rows;
}

}  // namespace

TEST_CASE("single query, single key: softmax over one element is 1") {
  Rng rng(2, RngStream::kTest);
  MultiHeadParams<double> p(8, 2, rng);
  Seq q = random_seq(1, 1, 8, rng, {1});
  Seq kv = random_seq(1, 1, 8, rng, {1});
  D out = multi_head_attention(p, q, kv);
  // expected: W_o(V-projection of the key vector) + bias
  D expect = p.wo(p.wv(kv.feats));
  for (size_t i = 0; i < out.size(); ++i)
    CHECK(out.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-12));
}

TEST_CASE("identical keys give the projected common value for any query") {
  Rng rng(3, RngStream::kTest);
  MultiHeadParams<double> p(8, 4, rng);
  std::vector<double> row(8);
  for (auto& v : row) v = rng.uniform(-1, 1);
  std::vector<double> kvv;
  for (int j = 0; j < 5; ++j) kvv.insert(kvv.end(), row.begin(), row.end());
  Seq kv(D::from_vector({1, 5, 8}, kvv), Seq::mask_from_lengths(1, 5, {5}));
  Seq q = random_seq(1, 3, 8, rng, {3});
  D out = multi_head_attention(p, q, kv);
  D common = p.wo(p.wv(D::from_vector({1, 1, 8}, row)));
  for (size_t i = 0; i < 3; ++i)
    for (size_t c = 0; c < 8; ++c)
      CHECK(out.data()[i * 8 + c] ==
            doctest::Approx(common.data()[c]).epsilon(1e-10));
}

TEST_CASE("vectorized attention equals the naive per-element oracle") {
  Rng rng(5, RngStream::kTest);
  MultiHeadParams<double> p(8, 2, rng);
  Seq q = random_seq(1, 3, 8, rng, {3});
  Seq kv = random_seq(1, 4, 8, rng, {4});
  D out = multi_head_attention(p, q, kv);
  auto naive = naive_mha_row(p, rows_of(q.feats, 0), rows_of(kv.feats, 0),
                             {1, 1, 1, 1});
  for (size_t i = 0; i < 3; ++i)
    for (size_t c = 0; c < 8; ++c)
      CHECK(std::abs(out.data()[i * 8 + c] - naive[i][c]) < 1e-10);
}

TEST_CASE("naive-oracle equivalence across small shapes with masks") {
  for (uint64_t seed = 0; seed < 12; ++seed) {
    Rng rng(seed, RngStream::kTest);
    size_t B = 1 + seed % 2, nq = 1 + seed % 5, nk = 1 + (seed * 7) % 5;
    size_t d = (seed % 2) ? 8 : 4, h = (seed % 3 == 0) ? 1 : 2;
    std::vector<size_t> qlen(B), klen(B);
    for (size_t b = 0; b < B; ++b) {
      qlen[b] = 1 + rng.uniform_int(0, static_cast<int64_t>(nq) - 1);
      klen[b] = 1 + rng.uniform_int(0, static_cast<int64_t>(nk) - 1);
    }
    MultiHeadParams<double> p(d, h, rng);
    Seq q = random_seq(B, nq, d, rng, qlen);
    Seq kv = random_seq(B, nk, d, rng, klen);
    D out = multi_head_attention(p, q, kv);
    for (size_t b = 0; b < B; ++b) {
      std::vector<uint8_t> km(nk, 0);
      for (size_t j = 0; j < klen[b]; ++j) km[j] = 1;
      auto naive = naive_mha_row(p, rows_of(q.feats, b), rows_of(kv.feats, b), km);
      for (size_t i = 0; i < qlen[b]; ++i)
        for (size_t c = 0; c < d; ++c)
          CHECK(std::abs(out.data()[(b * nq + i) * d + c] - naive[i][c]) < 1e-10);
    }
  }
}

TEST_CASE("attention weights: rows sum to 1, masked keys get exactly zero") {
  Rng rng(7, RngStream::kTest);
  MultiHeadParams<double> p(8, 2, rng);
  Seq q = random_seq(2, 3, 8, rng, {3, 2});
  Seq kv = random_seq(2, 5, 8, rng, {4, 2});
  auto res = multi_head_attention_full(p, q, kv);
  const auto& w = res.weights;  // [B,h,nq,nk]
  for (size_t b = 0; b < 2; ++b)
    for (size_t h = 0; h < 2; ++h)
      for (size_t i = 0; i < 3; ++i) {
        double s = 0;
        for (size_t j = 0; j < 5; ++j) {
          double v = w.data()[((b * 2 + h) * 3 + i) * 5 + j];
          if (kv.mask.data()[b * 5 + j] == 0.0) CHECK(v == 0.0);
          s += v;
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
      }
}

TEST_CASE("key permutation invariance and query permutation equivariance") {
  Rng rng(11, RngStream::kTest);
  MultiHeadParams<double> p(8, 2, rng);
  Seq q = random_seq(1, 4, 8, rng, {4});
  Seq kv = random_seq(1, 5, 8, rng, {3});
  D base = multi_head_attention(p, q, kv);

  std::vector<size_t> perm{4, 2, 0, 3, 1};
  std::vector<double> kf(5 * 8), km(5);
  for (size_t j = 0; j < 5; ++j) {
    for (size_t c = 0; c < 8; ++c)
      kf[j * 8 + c] = kv.feats.data()[perm[j] * 8 + c];
    km[j] = kv.mask.data()[perm[j]];
  }
  Seq kv_p(D::from_vector({1, 5, 8}, kf), D::from_vector({1, 5}, km));
  D permuted = multi_head_attention(p, q, kv_p);
  for (size_t i = 0; i < base.size(); ++i)
    CHECK(std::abs(base.data()[i] - permuted.data()[i]) < 1e-9);

  std::vector<size_t> qperm{2, 0, 3, 1};
  std::vector<double> qf(4 * 8);
  for (size_t i = 0; i < 4; ++i)
    for (size_t c = 0; c < 8; ++c)
      qf[i * 8 + c] = q.feats.data()[qperm[i] * 8 + c];
  Seq q_p(D::from_vector({1, 4, 8}, qf), q.mask);
  D qout = multi_head_attention(p, q_p, kv);
  for (size_t i = 0; i < 4; ++i)
    for (size_t c = 0; c < 8; ++c)
      CHECK(std::abs(qout.data()[i * 8 + c] -
                     base.data()[qperm[i] * 8 + c]) < 1e-9);
}

TEST_CASE("fully masked key set is rejected") {
  Rng rng(13, RngStream::kTest);
  MultiHeadParams<double> p(4, 1, rng);
  Seq q = random_seq(1, 2, 4, rng, {2});
  Seq kv(random_tensor<double>({1, 3, 4}, rng), D::zeros({1, 3}));
  CHECK_THROWS_AS(multi_head_attention(p, q, kv), DomainError);
}

TEST_CASE("cross block with zeroed output projection reduces to layer_norm(x)") {
  Rng rng(17, RngStream::kTest);
  AttentionBlockParams<double> blk(8, 2, 1.0, rng);
  for (auto& v : blk.mha.wo.weight.data_mut()) v = 0.0;
  for (auto& v : blk.mha.wo.bias.data_mut()) v = 0.0;
  Seq x = random_seq(2, 3, 8, rng, {3, 3});
  Seq z = random_seq(2, 4, 8, rng, {4, 4});
  Rng drop(0, RngStream::kDropout);
  Seq out = cross_attention_block(blk, x, z, true, drop);
  D expect = blk.ln(x.feats);
  for (size_t i = 0; i < out.feats.size(); ++i)
    CHECK(out.feats.data()[i] ==
          doctest::Approx(expect.data()[i]).epsilon(1e-12));
}

TEST_CASE("cross block is invariant to permuting z") {
  Rng rng(19, RngStream::kTest);
  AttentionBlockParams<double> blk(8, 2, 1.0, rng);
  Seq x = random_seq(1, 3, 8, rng, {3});
  Seq z = random_seq(1, 4, 8, rng, {3});
  Rng drop(0, RngStream::kDropout);
  Seq base = cross_attention_block(blk, x, z, false, drop);
  std::vector<size_t> perm{3, 1, 2, 0};
  std::vector<double> zf(4 * 8), zm(4);
  for (size_t j = 0; j < 4; ++j) {
    for (size_t c = 0; c < 8; ++c)
      zf[j * 8 + c] = z.feats.data()[perm[j] * 8 + c];
    zm[j] = z.mask.data()[perm[j]];
  }
  Seq zp(D::from_vector({1, 4, 8}, zf), D::from_vector({1, 4}, zm));
  Seq other = cross_attention_block(blk, x, zp, false, drop);
  for (size_t i = 0; i < base.feats.size(); ++i)
    CHECK(std::abs(base.feats.data()[i] - other.feats.data()[i]) < 1e-9);
}

TEST_CASE("cross block gradients match finite differences") {
  Rng rng(23, RngStream::kTest);
  AttentionBlockParams<double> blk(8, 2, 0.9, rng);
  Seq x = random_seq(1, 3, 8, rng, {2});
  Seq z = random_seq(1, 4, 8, rng, {3});
  D c = random_tensor<double>({1, 3, 8}, rng);
  auto loss = [&] {
    Rng drop(42, RngStream::kDropout);
    Seq out = cross_attention_block(blk, x, z, true, drop);
    return sum_all(mul(out.feats, c));
  };
  auto res = checks::check_gradients(
      {blk.mha.wq.weight, blk.mha.wq.bias, blk.mha.wk.weight,
       blk.mha.wv.weight, blk.mha.wo.weight, blk.ln.gain, blk.ln.bias},
      loss);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("self block on a length-1 sequence is layer_norm(x + proj(x))") {
  Rng rng(29, RngStream::kTest);
  AttentionBlockParams<double> blk(8, 2, 1.0, rng);
  Seq x = random_seq(1, 1, 8, rng, {1});
  Rng drop(0, RngStream::kDropout);
  Seq out = self_attention_block(blk, x, false, drop);
  D expect = blk.ln(add(x.feats, blk.mha.wo(blk.mha.wv(x.feats))));
  for (size_t i = 0; i < out.feats.size(); ++i)
    CHECK(out.feats.data()[i] ==
          doctest::Approx(expect.data()[i]).epsilon(1e-12));
}

TEST_CASE("padded positions cannot influence unmasked outputs") {
  Rng rng(31, RngStream::kTest);
  AttentionBlockParams<double> blk(8, 2, 1.0, rng);
  Seq x = random_seq(2, 4, 8, rng, {3, 2});
  Rng drop(0, RngStream::kDropout);
  Seq base = self_attention_block(blk, x, false, drop);

  // garble every padded position
  D feats2 = D::from_vector(x.feats.shape(),
                            {x.feats.data().begin(), x.feats.data().end()});
  auto f2 = feats2.data_mut();
  for (size_t b = 0; b < 2; ++b)
    for (size_t t = 0; t < 4; ++t)
      if (x.mask.data()[b * 4 + t] == 0.0)
        for (size_t c = 0; c < 8; ++c) f2[(b * 4 + t) * 8 + c] = 1e6;
  Seq garbled(feats2, x.mask);
  Seq other = self_attention_block(blk, garbled, false, drop);
  for (size_t i = 0; i < base.feats.size(); ++i)
    CHECK(std::abs(base.feats.data()[i] - other.feats.data()[i]) < 1e-9);
}
