#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "vsa/checks.hpp"
#include "vsa/encoders.hpp"

using namespace vsa;
using checks::random_tensor;

using D = Tensor<double>;

namespace {

// scalar-loop GRU cell for the single-step oracle
std::vector<double> naive_gru_step(const GruCell<double>& c,
                                   const std::vector<double>& x,
                                   const std::vector<double>& h) {
  auto lin = [&](const D& w, const D& bx, const std::vector<double>& v) {
    size_t in = w.dim(0), out = w.dim(1);
    std::vector<double> y(out);
    for (size_t o = 0; o < out; ++o) {
      double acc = bx.data()[o];
      for (size_t i = 0; i < in; ++i) acc += v[i] * w.data()[i * out + o];
      y[o] = acc;
    }
    return y;
  };
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  size_t d = c.d;
  auto xz = lin(c.wxz, c.bxz, x), hz = lin(c.whz, c.bhz, h);
  auto xr = lin(c.wxr, c.bxr, x), hr = lin(c.whr, c.bhr, h);
  auto xn = lin(c.wxn, c.bxn, x), hn = lin(c.whn, c.bhn, h);
  std::vector<double> out(d);
  for (size_t i = 0; i < d; ++i) {
    double z = sig(xz[i] + hz[i]);
    double r = sig(xr[i] + hr[i]);
    double n = std::tanh(xn[i] + r * hn[i]);
    out[i] = (1.0 - z) * n + z * h[i];
  }
  return out;
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& contents) {
    path = std::string("vsa_test_") + std::to_string(::getpid()) + "_" +
           std::to_string(counter++) + ".txt";
    std::ofstream out(path);
    out << contents;
  }
  ~TempFile() { std::remove(path.c_str()); }
  static int counter;
};
int TempFile::counter = 0;

}  // namespace

TEST_CASE("length-1 sequence averages the two single-step hidden states") {
  Rng rng(1, RngStream::kTest);
  GruParams<double> gru(5, 4, rng);
  D emb = random_tensor<double>({7, 5}, rng);
  std::vector<int64_t> ids{3};
  auto out = encode_text(gru, emb, ids, 1, 1, {1});
  REQUIRE(out.feats.shape() == Shape{1, 1, 4});
  std::vector<double> x(emb.data().begin() + 3 * 5, emb.data().begin() + 4 * 5);
  std::vector<double> h0(4, 0.0);
  auto hf = naive_gru_step(gru.fwd, x, h0);
  auto hb = naive_gru_step(gru.bwd, x, h0);
  for (size_t c = 0; c < 4; ++c)
    CHECK(out.feats.data()[c] ==
          doctest::Approx(0.5 * (hf[c] + hb[c])).epsilon(1e-12));
}

TEST_CASE("all-zero GRU weights give all-zero outputs") {
  Rng rng(2, RngStream::kTest);
  GruParams<double> gru(3, 4, rng);
  ParamSet<double> ps;
  gru.collect(ps, "gru");
  for (auto& [name, p] : ps.items)
    for (auto& v : p.data_mut()) v = 0.0;
  D emb = random_tensor<double>({5, 3}, rng);
  std::vector<int64_t> ids{1, 2, 3, 4, 0, 0};
  auto out = encode_text(gru, emb, ids, 2, 3, {3, 1});
  for (double v : out.feats.data()) CHECK(v == 0.0);
}

TEST_CASE("GRU gradients match finite differences on every weight") {
  Rng rng(3, RngStream::kTest);
  GruParams<double> gru(5, 8, rng);
  D emb = random_tensor<double>({6, 5}, rng, -0.5, 0.5, true);
  std::vector<int64_t> ids{1, 2, 3, 4, 5, 2, 0, 0};
  D c = random_tensor<double>({2, 4, 8}, rng);
  ParamSet<double> ps;
  gru.collect(ps, "gru");
  std::vector<D> params;
  for (auto& [name, p] : ps.items) params.push_back(p);
  params.push_back(emb);
  auto res = checks::check_gradients(params, [&] {
    auto out = encode_text(gru, emb, ids, 2, 4, {4, 2});
    return sum_all(mul(out.feats, c));
  });
  CHECK(res.max_rel_err < 1e-4);
  CHECK(res.coords_checked > 500);
}

TEST_CASE("padding extension never changes outputs on the valid prefix") {
  Rng rng(4, RngStream::kTest);
  GruParams<double> gru(5, 6, rng);
  D emb = random_tensor<double>({9, 5}, rng);
  std::vector<int64_t> exact{4, 7, 2};
  auto tight = encode_text(gru, emb, exact, 1, 3, {3});
  std::vector<int64_t> padded{4, 7, 2, 0, 0, 8};  // junk ids in the padding
  auto wide = encode_text(gru, emb, padded, 1, 6, {3});
  for (size_t t = 0; t < 3; ++t)
    for (size_t c = 0; c < 6; ++c)
      CHECK(std::abs(tight.feats.data()[t * 6 + c] -
                     wide.feats.data()[t * 6 + c]) < 1e-9);
  CHECK(wide.mask.data()[3] == 0.0);
}

TEST_CASE("empty sequences are rejected") {
  Rng rng(5, RngStream::kTest);
  GruParams<double> gru(3, 4, rng);
  D emb = random_tensor<double>({4, 3}, rng);
  std::vector<int64_t> ids{1, 0};
  CHECK_THROWS_AS(encode_text(gru, emb, ids, 1, 2, {0}), DomainError);
}

TEST_CASE("region projection: identity weights pass features through") {
  Rng rng(6, RngStream::kTest);
  Linear<double> proj(4, 4, rng);
  {
    auto w = proj.weight.data_mut();
    for (size_t i = 0; i < 4; ++i)
      for (size_t j = 0; j < 4; ++j) w[i * 4 + j] = i == j ? 1.0 : 0.0;
    for (auto& b : proj.bias.data_mut()) b = 0.0;
  }
  D regions = random_tensor<double>({2, 3, 4}, rng);
  auto out = encode_regions(proj, regions);
  for (size_t i = 0; i < regions.size(); ++i)
    CHECK(out.feats.data()[i] == doctest::Approx(regions.data()[i]));
  for (double m : out.mask.data()) CHECK(m == 1.0);

  for (auto& w : proj.weight.data_mut()) w = 0.0;
  auto zero = encode_regions(proj, regions);
  for (double v : zero.feats.data()) CHECK(v == 0.0);
}

TEST_CASE("region projection rejects width mismatches and checks gradients") {
  Rng rng(7, RngStream::kTest);
  Linear<double> proj(5, 6, rng);
  CHECK_THROWS_AS(encode_regions(proj, Tensor<double>::zeros({1, 2, 4})),
                  ShapeError);
  D regions = random_tensor<double>({2, 3, 5}, rng);
  D c = random_tensor<double>({2, 3, 6}, rng);
  auto res = checks::check_gradients({proj.weight, proj.bias}, [&] {
    return sum_all(mul(encode_regions(proj, regions).feats, c));
  });
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("vocabulary build honors min_count and stays deterministic") {
  std::vector<std::vector<std::string>> corpus{tokenize("a a a"), tokenize("a b")};
  Vocabulary v = Vocabulary::build(corpus, 2);
  CHECK(v.contains("a"));
  CHECK(!v.contains("b"));
  CHECK(v.index("b") == Vocabulary::kUnk);
  CHECK(v.index("<pad>") >= 0);

  Vocabulary all = Vocabulary::build(corpus, 1);
  CHECK(all.contains("a"));
  CHECK(all.contains("b"));

  Vocabulary v2 = Vocabulary::build(corpus, 2);
  CHECK(v.tokens() == v2.tokens());
  for (int64_t i = 0; i < static_cast<int64_t>(v.size()); ++i)
    CHECK(v.index(v.token(i)) == i);
}

TEST_CASE("tokenizer lowercases and strips punctuation") {
  auto toks = tokenize("What's  THE cat, doing?");
  REQUIRE(toks.size() == 5);
  CHECK(toks[0] == "what");
  CHECK(toks[1] == "s");
  CHECK(toks[2] == "the");
  CHECK(toks[3] == "cat");
  CHECK(toks[4] == "doing");
}

TEST_CASE("answer vocabulary keeps answers above the threshold") {
  std::vector<std::string> ans;
  for (int i = 0; i < 10; ++i) ans.push_back("yes");
  for (int i = 0; i < 9; ++i) ans.push_back("no");
  for (int i = 0; i < 8; ++i) ans.push_back("two");  // exactly 8: excluded
  AnswerVocabulary av = AnswerVocabulary::build(ans, 8);
  CHECK(av.size() == 2);
  CHECK(av.index("yes") == 0);
  CHECK(av.index("no") == 1);
  CHECK(av.index("two") == -1);
}

TEST_CASE("embedding loader copies file rows for in-vocab tokens") {
  Vocabulary v = Vocabulary::build({tokenize("cat dog cat dog")}, 1);
  TempFile f("cat 1.0 2.0 3.0\ndog -1.0 0.5 0.25\nzebra 9 9 9\n");
  Rng rng(8, RngStream::kParamInit);
  auto table = load_pretrained_embeddings<double>(f.path, v, 3, true, rng);
  REQUIRE(table.shape() == Shape{4, 3});
  size_t cat = static_cast<size_t>(v.index("cat"));
  CHECK(table.data()[cat * 3 + 0] == 1.0);
  CHECK(table.data()[cat * 3 + 2] == 3.0);
  size_t dog = static_cast<size_t>(v.index("dog"));
  CHECK(table.data()[dog * 3 + 1] == 0.5);
  CHECK(table.requires_grad());
}

TEST_CASE("empty embedding file still yields a usable random table") {
  Vocabulary v = Vocabulary::build({tokenize("cat dog")}, 1);
  TempFile f("");
  Rng rng(9, RngStream::kParamInit);
  auto table = load_pretrained_embeddings<double>(f.path, v, 4, false, rng);
  REQUIRE(table.shape() == Shape{4, 4});
  CHECK(!table.requires_grad());
  for (double x : table.data()) {
    CHECK(x >= -0.1);
    CHECK(x <= 0.1);
  }
}

TEST_CASE("embedding loader reports malformed lines and width mismatches") {
  Vocabulary v = Vocabulary::build({tokenize("cat")}, 1);
  Rng rng(10, RngStream::kParamInit);
  {
    TempFile f("cat 1.0 2.0\ndog 1.0 oops\n");
    CHECK_THROWS_WITH_AS(
        (load_pretrained_embeddings<double>(f.path, v, 2, true, rng)),
        doctest::Contains("line 2"), ParseError);
  }
  {
    TempFile f("cat 1.0 2.0 3.0\n");
    CHECK_THROWS_AS(
        (load_pretrained_embeddings<double>(f.path, v, 2, true, rng)),
        ConfigError);
  }
  {
    TempFile f("cat 1.0 2.0\ndog 1.0\n");
    CHECK_THROWS_WITH_AS(
        (load_pretrained_embeddings<double>(f.path, v, 2, true, rng)),
        doctest::Contains("line 2"), ParseError);
  }
}

TEST_CASE("frozen embedding table receives no gradient") {
  Rng rng(11, RngStream::kTest);
  GruParams<double> gru(3, 4, rng);
  D emb = random_tensor<double>({5, 3}, rng);
  emb.set_requires_grad(false);
  std::vector<int64_t> ids{1, 2};
  {
    Tape<double> tape;
    auto out = encode_text(gru, emb, ids, 1, 2, {2});
    tape.backward(sum_all(out.feats));
  }
  CHECK(!emb.has_grad());
}
