#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "vsa/aggregation.hpp"
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

std::vector<std::vector<double>> rows_of(const D& t, size_t b) {
  size_t n = t.dim(1), d = t.dim(2);
  std::vector<std::vector<double>> rows(n, std::vector<double>(d));
  for (size_t i = 0; i < n; ++i)
    for (size_t c = 0; c < d; ++c) rows[i][c] = t.data()[(b * n + i) * d + c];
  return rows;
}

std::vector<double> naive_scores(const ScoreAttnInstance<double>& p,
                                 const Seq& x, const Seq& z, size_t b) {
  size_t nq = x.len(), nk = z.len();
  std::vector<uint8_t> xm(nq), zm(nk);
  for (size_t i = 0; i < nq; ++i) xm[i] = x.mask.data()[b * nq + i] > 0.5;
  for (size_t j = 0; j < nk; ++j) zm[j] = z.mask.data()[b * nk + j] > 0.5;
  return checks::naive_score_attention_row(
      checks::naive_of(p.wq), checks::naive_of(p.wk), checks::naive_of(p.wv),
      checks::naive_of(p.fc), p.heads, rows_of(x.feats, b), rows_of(z.feats, b),
      zm, xm);
}

}  // namespace

TEST_CASE("single query position always scores 1") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed, RngStream::kTest);
    ScoreAttnInstance<double> p(8, 2, rng);
    Seq x = random_seq(2, 1, 8, rng, {1, 1});
    Seq z = random_seq(2, 4, 8, rng, {4, 3});
    D s = score_attention_scores(p, x, z);
    CHECK(s.data()[0] == 1.0);
    CHECK(s.data()[1] == 1.0);
  }
}

TEST_CASE("identical query positions share the score mass equally") {
  Rng rng(3, RngStream::kTest);
  ScoreAttnInstance<double> p(8, 2, rng);
  std::vector<double> row(8);
  for (auto& v : row) v = rng.uniform(-1, 1);
  std::vector<double> xf(row.begin(), row.end());
  xf.insert(xf.end(), row.begin(), row.end());
  Seq x(D::from_vector({1, 2, 8}, xf), Seq::mask_from_lengths(1, 2, {2}));
  Seq z = random_seq(1, 4, 8, rng, {4});
  D s = score_attention_scores(p, x, z);
  CHECK(s.data()[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(s.data()[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("vectorized scores equal the naive per-element oracle") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed, RngStream::kTest);
    ScoreAttnInstance<double> p(8, 2, rng);
    Seq x = random_seq(1, 3, 8, rng, {3});
    Seq z = random_seq(1, 4, 8, rng, {4});
    D s = score_attention_scores(p, x, z);
    auto naive = naive_scores(p, x, z, 0);
    for (size_t i = 0; i < 3; ++i)
      CHECK(std::abs(s.data()[i] - naive[i]) < 1e-10);
  }
}

TEST_CASE("score rows are a distribution with exact zeros at masked slots") {
  Rng rng(7, RngStream::kTest);
  ScoreAttnInstance<double> p(8, 2, rng);
  Seq x = random_seq(3, 5, 8, rng, {5, 2, 3});
  Seq z = random_seq(3, 4, 8, rng, {4, 4, 1});
  D s = score_attention_scores(p, x, z);
  for (size_t b = 0; b < 3; ++b) {
    double total = 0;
    for (size_t i = 0; i < 5; ++i) {
      double v = s.data()[b * 5 + i];
      CHECK(v >= 0.0);
      if (x.mask.data()[b * 5 + i] == 0.0) CHECK(v == 0.0);
      total += v;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("all-masked query row is a degenerate input") {
  Rng rng(9, RngStream::kTest);
  ScoreAttnInstance<double> p(4, 1, rng);
  Seq x(random_tensor<double>({1, 3, 4}, rng), D::zeros({1, 3}));
  Seq z = random_seq(1, 2, 4, rng, {2});
  CHECK_THROWS_AS(score_attention_scores(p, x, z), DomainError);
}

TEST_CASE("reduction returns X_j when only position j is valid") {
  Rng rng(11, RngStream::kTest);
  ScoreAttentionParams<double> p(1, 8, 2, rng);
  D feats = random_tensor<double>({1, 4, 8}, rng);
  Seq z = random_seq(1, 3, 8, rng, {3});
  for (size_t j = 0; j < 4; ++j) {
    std::vector<double> m(4, 0.0);
    m[j] = 1.0;
    Seq x(feats, D::from_vector({1, 4}, m));
    D y = score_attention_reduce(p, x, z);
    REQUIRE(y.shape() == Shape{1, 1, 8});
    for (size_t c = 0; c < 8; ++c)
      CHECK(y.data()[c] == doctest::Approx(feats.data()[j * 8 + c]).epsilon(1e-12));
  }
}

TEST_CASE("reduction of a length-1 sequence is its only vector") {
  Rng rng(13, RngStream::kTest);
  ScoreAttentionParams<double> p(2, 8, 2, rng);
  Seq x = random_seq(2, 1, 8, rng, {1, 1});
  Seq z = random_seq(2, 3, 8, rng, {3, 2});
  D y = score_attention_reduce(p, x, z);
  REQUIRE(y.shape() == Shape{2, 2, 8});
  for (size_t b = 0; b < 2; ++b)
    for (size_t slot = 0; slot < 2; ++slot)
      for (size_t c = 0; c < 8; ++c)
        CHECK(y.data()[(b * 2 + slot) * 8 + c] ==
              doctest::Approx(x.feats.data()[b * 8 + c]).epsilon(1e-12));
}

TEST_CASE("reduced coordinates stay inside the unmasked convex hull") {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed, RngStream::kTest);
    size_t nq = 2 + seed % 4;
    ScoreAttentionParams<double> p(1 + seed % 3, 8, 2, rng);
    std::vector<size_t> lens{1 + seed % nq, nq};
    Seq x = random_seq(2, nq, 8, rng, lens);
    Seq z = random_seq(2, 3, 8, rng, {3, 2});
    D y = score_attention_reduce(p, x, z);
    for (size_t b = 0; b < 2; ++b)
      for (size_t c = 0; c < 8; ++c) {
        double lo = 1e300, hi = -1e300;
        for (size_t t = 0; t < nq; ++t)
          if (x.mask.data()[b * nq + t] > 0.5) {
            lo = std::min(lo, x.feats.data()[(b * nq + t) * 8 + c]);
            hi = std::max(hi, x.feats.data()[(b * nq + t) * 8 + c]);
          }
        for (size_t slot = 0; slot < p.k(); ++slot) {
          double v = y.data()[(b * p.k() + slot) * 8 + c];
          CHECK(v >= lo - 1e-9);
          CHECK(v <= hi + 1e-9);
        }
      }
  }
}

TEST_CASE("scores respond to the other modality (cross-modal dependence)") {
  int changed = 0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed, RngStream::kTest);
    ScoreAttnInstance<double> p(8, 2, rng);
    Seq x = random_seq(1, 4, 8, rng, {4});
    Seq z = random_seq(1, 4, 8, rng, {4});
    D s0 = score_attention_scores(p, x, z);
    D zf = D::from_vector(z.feats.shape(),
                          {z.feats.data().begin(), z.feats.data().end()});
    size_t idx = static_cast<size_t>(rng.uniform_int(0, 31));
    zf.data_mut()[idx] += rng.uniform(0.5, 1.0);
    D s1 = score_attention_scores(p, x, Seq(zf, z.mask));
    double diff = 0;
    for (size_t i = 0; i < 4; ++i)
      diff = std::max(diff, std::abs(s0.data()[i] - s1.data()[i]));
    if (diff > 1e-6) ++changed;
  }
  CHECK(changed >= 95);
}

TEST_CASE("padded positions of either modality cannot change the outputs") {
  Rng rng(17, RngStream::kTest);
  ScoreAttentionParams<double> p(2, 8, 2, rng);
  Seq x = random_seq(2, 4, 8, rng, {3, 2});
  Seq z = random_seq(2, 4, 8, rng, {2, 4});
  D y0 = score_attention_reduce(p, x, z);
  auto garble = [](const Seq& s) {
    D f = D::from_vector(s.feats.shape(),
                         {s.feats.data().begin(), s.feats.data().end()});
    auto fm = f.data_mut();
    size_t L = s.len(), d = s.width();
    for (size_t b = 0; b < s.batch(); ++b)
      for (size_t t = 0; t < L; ++t)
        if (s.mask.data()[b * L + t] == 0.0)
          for (size_t c = 0; c < d; ++c) fm[(b * L + t) * d + c] = 1e5;
    return Seq(f, s.mask);
  };
  D y1 = score_attention_reduce(p, garble(x), garble(z));
  for (size_t i = 0; i < y0.size(); ++i)
    CHECK(std::abs(y0.data()[i] - y1.data()[i]) < 1e-9);
}

TEST_CASE("permuting z leaves S and Y unchanged; permuting x permutes S") {
  Rng rng(19, RngStream::kTest);
  ScoreAttentionParams<double> p(1, 8, 2, rng);
  Seq x = random_seq(1, 4, 8, rng, {4});
  Seq z = random_seq(1, 5, 8, rng, {4});
  D s0 = score_attention_scores(p.instances[0], x, z);
  D y0 = score_attention_reduce(p, x, z);

  std::vector<size_t> zperm{4, 0, 2, 1, 3};
  std::vector<double> zf(5 * 8), zm(5);
  for (size_t j = 0; j < 5; ++j) {
    for (size_t c = 0; c < 8; ++c)
      zf[j * 8 + c] = z.feats.data()[zperm[j] * 8 + c];
    zm[j] = z.mask.data()[zperm[j]];
  }
  Seq zp(D::from_vector({1, 5, 8}, zf), D::from_vector({1, 5}, zm));
  D s1 = score_attention_scores(p.instances[0], x, zp);
  D y1 = score_attention_reduce(p, x, zp);
  for (size_t i = 0; i < 4; ++i)
    CHECK(std::abs(s0.data()[i] - s1.data()[i]) < 1e-9);
  for (size_t i = 0; i < y0.size(); ++i)
    CHECK(std::abs(y0.data()[i] - y1.data()[i]) < 1e-9);

  std::vector<size_t> xperm{2, 0, 3, 1};
  std::vector<double> xf(4 * 8);
  for (size_t i = 0; i < 4; ++i)
    for (size_t c = 0; c < 8; ++c)
      xf[i * 8 + c] = x.feats.data()[xperm[i] * 8 + c];
  Seq xp(D::from_vector({1, 4, 8}, xf), x.mask);
  D s2 = score_attention_scores(p.instances[0], xp, z);
  D y2 = score_attention_reduce(p, xp, z);
  for (size_t i = 0; i < 4; ++i)
    CHECK(std::abs(s2.data()[i] - s0.data()[xperm[i]]) < 1e-9);
  for (size_t i = 0; i < y0.size(); ++i)
    CHECK(std::abs(y0.data()[i] - y2.data()[i]) < 1e-9);
}

TEST_CASE("combine_k_vqa averages slots and splits gradient 1/k") {
  Rng rng(23, RngStream::kTest);
  D y1 = random_tensor<double>({2, 1, 4}, rng, -1, 1, true);
  D m1 = combine_k_vqa(y1);
  for (size_t i = 0; i < 8; ++i)
    CHECK(m1.data()[i] == doctest::Approx(y1.data()[i]));

  std::vector<double> v(2 * 2 * 4);
  for (size_t b = 0; b < 2; ++b)
    for (size_t c = 0; c < 4; ++c) {
      double val = rng.uniform(-1, 1);
      v[(b * 2 + 0) * 4 + c] = val;
      v[(b * 2 + 1) * 4 + c] = -val;
    }
  D y2 = D::from_vector({2, 2, 4}, v);
  D m2 = combine_k_vqa(y2);
  for (size_t i = 0; i < 8; ++i) CHECK(std::abs(m2.data()[i]) < 1e-12);

  D y3 = random_tensor<double>({1, 4, 3}, rng, -1, 1, true);
  {
    Tape<double> tape;
    tape.backward(sum_all(combine_k_vqa(y3)));
  }
  for (double g : y3.grad()) CHECK(g == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("combine_k_retrieval matches the scalar-loop oracle") {
  Rng rng(29, RngStream::kTest);
  D a = random_tensor<double>({2, 3, 6}, rng);
  D b = random_tensor<double>({2, 3, 6}, rng);
  D s = combine_k_retrieval(a, b);
  for (size_t row = 0; row < 2; ++row) {
    double acc = 0;
    for (size_t slot = 0; slot < 3; ++slot) {
      double dot = 0, na = 0, nb = 0;
      for (size_t c = 0; c < 6; ++c) {
        double av = a.data()[(row * 3 + slot) * 6 + c];
        double bv = b.data()[(row * 3 + slot) * 6 + c];
        dot += av * bv;
        na += av * av;
        nb += bv * bv;
      }
      acc += dot / (std::sqrt(na) * std::sqrt(nb) + 1e-8);
    }
    CHECK(std::abs(s.data()[row] - acc / 3.0) < 1e-12);
  }

  D same = combine_k_retrieval(a, a);
  for (size_t row = 0; row < 2; ++row)
    CHECK(same.data()[row] == doctest::Approx(1.0).epsilon(1e-6));

  // slot similarities +1 and -1 cancel
  D u = random_tensor<double>({1, 2, 4}, rng);
  std::vector<double> w(u.data().begin(), u.data().end());
  for (size_t c = 0; c < 4; ++c) w[4 + c] = -u.data()[4 + c];
  D opp = D::from_vector({1, 2, 4}, w);
  CHECK(std::abs(combine_k_retrieval(u, opp).data()[0]) < 1e-6);
}

TEST_CASE("baseline mean/max/logsumexp over valid positions") {
  D feats = D::from_vector({1, 2, 2}, {1, 3, 3, 5});
  Seq x(feats, Seq::mask_from_lengths(1, 2, {2}));
  D m = baseline_reduce(AggregatorKind::kMean, x);
  CHECK(m.data()[0] == doctest::Approx(2.0));
  CHECK(m.data()[1] == doctest::Approx(4.0));

  Seq x1(feats, Seq::mask_from_lengths(1, 2, {1}));
  D mx = baseline_reduce(AggregatorKind::kMax, x1);
  CHECK(mx.data()[0] == 1.0);
  CHECK(mx.data()[1] == 3.0);

  D zeros = D::zeros({1, 2, 3});
  Seq xz(zeros, Seq::mask_from_lengths(1, 2, {2}));
  D lse = baseline_reduce(AggregatorKind::kLogSumExp, xz);
  for (size_t c = 0; c < 3; ++c)
    CHECK(lse.data()[c] == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Seq empty(feats, D::zeros({1, 2}));
  CHECK_THROWS_AS(baseline_reduce(AggregatorKind::kMean, empty), DomainError);
}

TEST_CASE("parameter-free baselines are permutation invariant") {
  Rng rng(31, RngStream::kTest);
  Seq x = random_seq(1, 5, 4, rng, {4});
  std::vector<size_t> perm{3, 1, 4, 0, 2};
  std::vector<double> xf(5 * 4), xm(5);
  for (size_t t = 0; t < 5; ++t) {
    for (size_t c = 0; c < 4; ++c)
      xf[t * 4 + c] = x.feats.data()[perm[t] * 4 + c];
    xm[t] = x.mask.data()[perm[t]];
  }
  Seq xp(D::from_vector({1, 5, 4}, xf), D::from_vector({1, 5}, xm));
  for (auto kind : {AggregatorKind::kMean, AggregatorKind::kMax,
                    AggregatorKind::kLogSumExp}) {
    D a = baseline_reduce(kind, x);
    D b = baseline_reduce(kind, xp);
    for (size_t i = 0; i < a.size(); ++i)
      CHECK(std::abs(a.data()[i] - b.data()[i]) < 1e-12);
  }
}

TEST_CASE("conv1d spans the configured max length, padding contributes zero") {
  Rng rng(37, RngStream::kTest);
  Conv1dParams<double> p(6, 4, rng);
  Seq x = random_seq(2, 5, 4, rng, {5, 3});
  D out = conv1d_reduce(p, x);
  REQUIRE(out.shape() == Shape{2, 4});
  for (size_t b = 0; b < 2; ++b)
    for (size_t c = 0; c < 4; ++c) {
      double acc = p.bias.data()[c];
      for (size_t t = 0; t < 5; ++t)
        if (x.mask.data()[b * 5 + t] > 0.5)
          acc += p.weight.data()[t * 4 + c] * x.feats.data()[(b * 5 + t) * 4 + c];
      CHECK(out.data()[b * 4 + c] == doctest::Approx(acc).epsilon(1e-12));
    }
  Seq too_long = random_seq(1, 7, 4, rng, {7});
  CHECK_THROWS_AS(conv1d_reduce(p, too_long), ShapeError);
}

TEST_CASE("prepend_cls extends the sequence and learns from the loss") {
  Rng rng(41, RngStream::kTest);
  ClsParams<double> cls(4, rng);
  Seq x = random_seq(2, 3, 4, rng, {3, 1});
  Seq ext = prepend_cls(x, cls.embedding);
  CHECK(ext.len() == 4);
  CHECK(ext.mask.data()[0] == 1.0);
  CHECK(ext.mask.data()[4] == 1.0);
  for (size_t c = 0; c < 4; ++c)
    CHECK(ext.feats.data()[c] == doctest::Approx(cls.embedding.data()[c]));

  auto res = checks::check_gradients({cls.embedding}, [&] {
    Seq e = prepend_cls(x, cls.embedding);
    return sum_all(tanh(cls_reduce(e)));
  });
  CHECK(res.max_rel_err < 1e-4);
  // and the gradient is actually nonzero
  cls.embedding.zero_grad();
  {
    Tape<double> tape;
    Seq e = prepend_cls(x, cls.embedding);
    tape.backward(sum_all(tanh(cls_reduce(e))));
  }
  double mag = 0;
  for (double g : cls.embedding.grad()) mag += std::abs(g);
  CHECK(mag > 1e-6);
}

TEST_CASE("score attention gradients match finite differences") {
  Rng rng(43, RngStream::kTest);
  ScoreAttentionParams<double> p(1, 8, 2, rng);
  Seq x = random_seq(1, 3, 8, rng, {3});
  Seq z = random_seq(1, 4, 8, rng, {3});
  D c = random_tensor<double>({1, 1, 8}, rng);
  auto& inst = p.instances[0];
  auto res = checks::check_gradients(
      {inst.wq.weight, inst.wq.bias, inst.wk.weight, inst.wv.weight,
       inst.fc.weight, inst.fc.bias},
      [&] { return sum_all(mul(score_attention_reduce(p, x, z), c)); });
  CHECK(res.max_rel_err < 1e-4);
}
