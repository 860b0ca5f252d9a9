#pragma once

#include <chrono>

#include "vsa/checks.hpp"
#include "vsa/metrics.hpp"
#include "vsa/pipeline.hpp"
#include "vsa/training.hpp"

// Runnable correctness batteries: finite-difference gradient checks, naive
// per-element oracles, and structural invariants. Shared by the verify CLI
// subcommand and the acceptance suite. Everything runs in 64-bit.

namespace vsa::checks {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};
using CheckList = std::vector<CheckResult>;

inline bool all_pass(const CheckList& list) {
  for (const auto& c : list)
    if (!c.pass) return false;
  return true;
}

// Test seams for mutation checks: a deliberately injected defect must make
// the oracle suite fail. Production callers use the defaults.
struct OracleHooks {
  double eq3_sign = 1.0;  // sign applied to the score-weighted reduction
};

namespace detail {

using D = Tensor<double>;
using Seq = SequenceBatch<double>;

inline Seq random_seq(size_t B, size_t L, size_t d, Rng& rng,
                      std::vector<size_t> lengths = {}) {
  if (lengths.empty())
    for (size_t b = 0; b < B; ++b)
      lengths.push_back(1 + static_cast<size_t>(
                            rng.uniform_int(0, static_cast<int64_t>(L) - 1)));
  return Seq(random_tensor<double>({B, L, d}, rng),
             Seq::mask_from_lengths(B, L, lengths));
}

inline std::vector<std::vector<double>> rows_of(const D& t, size_t b) {
  size_t n = t.dim(1), d = t.dim(2);
  std::vector<std::vector<double>> rows(n, std::vector<double>(d));
  for (size_t i = 0; i < n; ++i)
    for (size_t c = 0; c < d; ++c) rows[i][c] = t.data()[(b * n + i) * d + c];
  return rows;
}

inline ModelConfig check_model_config(Task task, size_t d = 16) {
  ModelConfig cfg;
  cfg.d = d;
  cfg.heads = 2;
  cfg.k = 1;
  cfg.task = task;
  cfg.dropout_keep = 0.9;
  cfg.feature_width = 6;
  cfg.word_dim = 5;
  cfg.max_question_len = 4;
  return cfg;
}

inline ModelInput<double> random_model_input(size_t B, size_t R, size_t L,
                                             size_t F, size_t vocab, Rng& rng) {
  ModelInput<double> in;
  in.regions = random_tensor<double>({B, R, F}, rng, -0.8, 0.8);
  in.region_mask = D::full({B, R}, 1.0);
  in.text_len = L;
  for (size_t b = 0; b < B; ++b)
    in.text_lengths.push_back(1 + static_cast<size_t>(rng.uniform_int(
                                  0, static_cast<int64_t>(L) - 1)));
  in.tokens.assign(B * L, 0);
  for (size_t b = 0; b < B; ++b)
    for (size_t t = 0; t < in.text_lengths[b]; ++t)
      in.tokens[b * L + t] = rng.uniform_int(2, static_cast<int64_t>(vocab) - 1);
  return in;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Gradient suite: every parameterized operation against 64-bit central
// finite differences (h = 1e-5), rel err < 1e-4.
// ---------------------------------------------------------------------------

inline CheckList run_gradient_suite() {
  using namespace detail;
  CheckList out;
  constexpr double kTol = 1e-4;
  auto record = [&](const std::string& name, const GradCheck& res,
                    size_t configs) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "max rel err %.3e over %zu configs (%zu coords)",
                  res.max_rel_err, configs, res.coords_checked);
    out.push_back({name, res.max_rel_err < kTol, buf});
  };

  {  // cross/self attention blocks
    GradCheck agg;
    size_t configs = 14;
    for (uint64_t s = 0; s < configs; ++s) {
      Rng rng(s, RngStream::kTest);
      size_t d = (s % 2) ? 16 : 8;
      AttentionBlockParams<double> blk(d, 2, 0.9, rng);
      Seq x = random_seq(2, 1 + s % 5, d, rng);
      Seq z = random_seq(2, 1 + (s * 3) % 6, d, rng);
      D c = random_tensor<double>({2, x.len(), d}, rng);
      auto loss = [&] {
        Rng drop(s, RngStream::kDropout);
        Seq o = s % 2 ? cross_attention_block(blk, x, z, true, drop)
                      : self_attention_block(blk, x, true, drop);
        return scale(sum_all(mul(o.feats, c)), 0.05);
      };
      auto res = check_gradients(
          {blk.mha.wq.weight, blk.mha.wq.bias, blk.mha.wk.weight,
           blk.mha.wv.weight, blk.mha.wo.weight, blk.mha.wo.bias, blk.ln.gain,
           blk.ln.bias},
          loss);
      agg.max_rel_err = std::max(agg.max_rel_err, res.max_rel_err);
      agg.coords_checked += res.coords_checked;
    }
    record("gradients/attention_blocks", agg, configs);
  }

  {  // score attention
    GradCheck agg;
    size_t configs = 12;
    for (uint64_t s = 0; s < configs; ++s) {
      Rng rng(100 + s, RngStream::kTest);
      size_t k = 1 + s % 2;
      ScoreAttentionParams<double> p(k, 8, 2, rng);
      Seq x = random_seq(2, 1 + s % 4, 8, rng);
      Seq z = random_seq(2, 1 + (s * 5) % 6, 8, rng);
      D c = random_tensor<double>({2, k, 8}, rng);
      std::vector<D> params;
      for (auto& inst : p.instances) {
        params.push_back(inst.wq.weight);
        params.push_back(inst.wk.weight);
        params.push_back(inst.wv.weight);
        params.push_back(inst.fc.weight);
        params.push_back(inst.fc.bias);
      }
      auto res = check_gradients(params, [&] {
        return scale(sum_all(mul(score_attention_reduce(p, x, z), c)), 0.05);
      });
      agg.max_rel_err = std::max(agg.max_rel_err, res.max_rel_err);
      agg.coords_checked += res.coords_checked;
    }
    record("gradients/score_attention", agg, configs);
  }

  {  // bi-GRU
    GradCheck agg;
    size_t configs = 6;
    for (uint64_t s = 0; s < configs; ++s) {
      Rng rng(200 + s, RngStream::kTest);
      GruParams<double> gru(5, 8, rng);
      D emb = random_tensor<double>({7, 5}, rng, -0.5, 0.5, true);
      size_t L = 2 + s % 3;
      std::vector<int64_t> ids(2 * L);
      for (auto& id : ids) id = rng.uniform_int(1, 6);
      std::vector<size_t> lens{L, 1 + s % L};
      D c = random_tensor<double>({2, L, 8}, rng);
      ParamSet<double> ps;
      gru.collect(ps, "gru");
      std::vector<D> params{emb};
      for (auto& [n, p] : ps.items) params.push_back(p);
      auto res = check_gradients(params, [&] {
        auto o = encode_text(gru, emb, ids, 2, L, lens);
        return scale(sum_all(mul(o.feats, c)), 0.05);
      });
      agg.max_rel_err = std::max(agg.max_rel_err, res.max_rel_err);
      agg.coords_checked += res.coords_checked;
    }
    record("gradients/bi_gru", agg, configs);
  }

  {  // heads: region projection, VQA feed-forward + classifier
    GradCheck agg;
    size_t configs = 8;
    for (uint64_t s = 0; s < configs; ++s) {
      Rng rng(300 + s, RngStream::kTest);
      Linear<double> proj(6, 8, rng);
      VqaHeadParams<double> head(8, 3, rng);
      D yi = random_tensor<double>({2, 8}, rng, -1, 1);
      D yt = random_tensor<double>({2, 8}, rng, -1, 1);
      D regions = random_tensor<double>({2, 3, 6}, rng);
      D targets = random_tensor<double>({2, 3}, rng, 0, 1);
      auto loss = [&] {
        D fi = head.ln_img(add(yi, head.ff2_img(relu(head.ff1_img(yi)))));
        D ft = head.ln_txt(add(yt, head.ff2_txt(relu(head.ff1_txt(yt)))));
        D logits = head.classifier(concat<double>({fi, ft}, 1));
        D reg = sum_all(mul(encode_regions(proj, regions).feats,
                            Tensor<double>::full({2, 3, 8}, 0.01)));
        return scale(add(bce_with_logits(logits, targets), reg), 0.1);
      };
      ParamSet<double> ps;
      head.collect(ps, "head");
      proj.collect(ps, "proj");
      std::vector<D> params;
      for (auto& [n, p] : ps.items) params.push_back(p);
      auto res = check_gradients(params, loss);
      agg.max_rel_err = std::max(agg.max_rel_err, res.max_rel_err);
      agg.coords_checked += res.coords_checked;
    }
    record("gradients/heads", agg, configs);
  }

  {  // losses straight through their inputs
    GradCheck agg;
    size_t configs = 10;
    for (uint64_t s = 0; s < configs; ++s) {
      Rng rng(400 + s, RngStream::kTest);
      D logits = random_tensor<double>({3, 4}, rng, -2, 2, true);
      D targets = random_tensor<double>({3, 4}, rng, 0, 1);
      auto r1 = check_gradients(
          {logits}, [&] { return scale(bce_with_logits(logits, targets), 0.1); });
      D sim = random_tensor<double>({4, 4}, rng, -1, 1, true);
      auto r2 = check_gradients(
          {sim}, [&] { return scale(triplet_loss_hard(sim, 0.2), 0.1); });
      agg.max_rel_err =
          std::max({agg.max_rel_err, r1.max_rel_err, r2.max_rel_err});
      agg.coords_checked += r1.coords_checked + r2.coords_checked;
    }
    record("gradients/losses", agg, configs * 2);
  }

  {  // end-to-end pipeline, 5% parameter sample
    GradCheck agg;
    size_t configs = 2;
    for (uint64_t s = 0; s < configs; ++s) {
      Task task = s == 0 ? Task::kVqa : Task::kRetrieval;
      Rng rng(500 + s, RngStream::kParamInit);
      ModelConfig cfg = detail::check_model_config(task);
      Model<double> model(cfg, 8, task == Task::kVqa ? 4 : 0, 3, 4, rng);
      Rng data_rng(500 + s, RngStream::kTest);
      auto in = random_model_input(task == Task::kVqa ? 2 : 3, 3, 4, 6, 8,
                                   data_rng);
      D targets = random_tensor<double>(
          {in.batch(), 4}, data_rng, 0, 1);
      auto ps = model.parameters();
      std::vector<D> params;
      for (auto& [n, p] : ps.items) params.push_back(p);
      auto loss = [&] {
        Rng drop(7, RngStream::kDropout);
        auto y = model.forward(in, true, drop);
        if (task == Task::kVqa)
          return scale(
              vqa_loss(model.vqa_logits(y, true, drop), targets), 0.05);
        return scale(
            triplet_loss_hard(model.retrieval_similarity(y), 0.2), 0.03);
      };
      auto res = check_gradients(params, loss, 1e-5, 0.05, 900 + s);
      agg.max_rel_err = std::max(agg.max_rel_err, res.max_rel_err);
      agg.coords_checked += res.coords_checked;
    }
    record("gradients/end_to_end", agg, configs);
  }

  return out;
}

// ---------------------------------------------------------------------------
// Oracle suite: vectorized paths against naive scalar loops.
// ---------------------------------------------------------------------------

inline CheckList run_oracle_suite(const OracleHooks& hooks = {}) {
  using namespace detail;
  CheckList out;

  {  // score computation (Eq. 2 + Eq. 4 style) on 100 random instances
    double worst = 0.0;
    for (uint64_t s = 0; s < 100; ++s) {
      Rng rng(s, RngStream::kTest);
      size_t nq = 1 + s % 5, nk = 1 + (s * 7) % 5;
      size_t h = (s % 3 == 0) ? 1 : 2;
      ScoreAttnInstance<double> p(8, h, rng);
      Seq x = random_seq(1, nq, 8, rng, {nq});
      Seq z = random_seq(1, nk, 8, rng);
      D scores = score_attention_scores(p, x, z);
      std::vector<uint8_t> zm(nk);
      for (size_t j = 0; j < nk; ++j) zm[j] = z.mask.data()[j] > 0.5;
      auto naive = naive_score_attention_row(
          naive_of(p.wq), naive_of(p.wk), naive_of(p.wv), naive_of(p.fc),
          p.heads, rows_of(x.feats, 0), rows_of(z.feats, 0), zm,
          std::vector<uint8_t>(nq, 1));
      for (size_t i = 0; i < nq; ++i)
        worst = std::max(worst, std::abs(scores.data()[i] - naive[i]));
    }
    char buf[96];
    std::snprintf(buf, sizeof(buf), "max abs diff %.3e over 100 instances", worst);
    out.push_back({"oracles/score_vs_naive_loop", worst < 1e-10, buf});
  }

  {  // multi-head attention against the naive triple loop
    double worst = 0.0;
    for (uint64_t s = 0; s < 50; ++s) {
      Rng rng(1000 + s, RngStream::kTest);
      size_t nq = 1 + s % 4, nk = 1 + (s * 3) % 5;
      MultiHeadParams<double> p(8, 2, rng);
      Seq q = random_seq(1, nq, 8, rng, {nq});
      Seq kv = random_seq(1, nk, 8, rng);
      D o = multi_head_attention(p, q, kv);
      std::vector<uint8_t> km(nk);
      for (size_t j = 0; j < nk; ++j) km[j] = kv.mask.data()[j] > 0.5;
      auto heads = naive_mha_heads(naive_of(p.wq), naive_of(p.wk),
                                   naive_of(p.wv), 2, rows_of(q.feats, 0),
                                   rows_of(kv.feats, 0), km);
      auto wo = naive_of(p.wo);
      for (size_t i = 0; i < nq; ++i) {
        auto row = naive_apply(wo, heads[i]);
        for (size_t c = 0; c < 8; ++c)
          worst = std::max(worst, std::abs(o.data()[i * 8 + c] - row[c]));
      }
    }
    char buf[96];
    std::snprintf(buf, sizeof(buf), "max abs diff %.3e over 50 instances", worst);
    out.push_back({"oracles/attention_vs_naive_loop", worst < 1e-10, buf});
  }

  {  // score-weighted reduction against a scalar loop (Eq. 3 style)
    double worst = 0.0;
    for (uint64_t s = 0; s < 100; ++s) {
      Rng rng(2000 + s, RngStream::kTest);
      size_t nq = 1 + s % 5;
      ScoreAttentionParams<double> p(1, 8, 2, rng);
      Seq x = random_seq(1, nq, 8, rng, {nq});
      Seq z = random_seq(1, 4, 8, rng);
      D y = scale(score_attention_reduce(p, x, z), hooks.eq3_sign);
      D scores = score_attention_scores(p.instances[0], x, z);
      for (size_t c = 0; c < 8; ++c) {
        double acc = 0;
        for (size_t t = 0; t < nq; ++t)
          acc += scores.data()[t] * x.feats.data()[t * 8 + c];
        worst = std::max(worst, std::abs(y.data()[c] - acc));
      }
    }
    char buf[96];
    std::snprintf(buf, sizeof(buf), "max abs diff %.3e over 100 instances", worst);
    out.push_back({"oracles/reduction_vs_scalar_loop", worst < 1e-10, buf});
  }

  {  // triplet loss against brute force over all negatives
    double worst = 0.0;
    bool worked_example = true;
    std::vector<double> m(16, 0.5);
    for (size_t i = 0; i < 4; ++i) m[i * 4 + i] = 0.9;
    worked_example =
        triplet_loss_hard(D::from_vector({4, 4}, m), 0.2).item() == 0.0;
    Rng rng(3000, RngStream::kTest);
    for (int trial = 0; trial < 100; ++trial) {
      size_t B = 2 + static_cast<size_t>(rng.uniform_int(0, 6));
      D sim = random_tensor<double>({B, B}, rng, -1, 1);
      double expect = 0;
      for (size_t i = 0; i < B; ++i) {
        double hr = -2, hc = -2;
        for (size_t j = 0; j < B; ++j) {
          if (j == i) continue;
          hr = std::max(hr, sim.data()[i * B + j]);
          hc = std::max(hc, sim.data()[j * B + i]);
        }
        expect += std::max(0.2 - sim.data()[i * B + i] + hr, 0.0) +
                  std::max(0.2 - sim.data()[i * B + i] + hc, 0.0);
      }
      expect /= static_cast<double>(B);
      worst = std::max(worst,
                       std::abs(triplet_loss_hard(sim, 0.2).item() - expect));
    }
    char buf[96];
    std::snprintf(buf, sizeof(buf), "max abs diff %.3e; worked example %s",
                  worst, worked_example ? "ok" : "FAILED");
    out.push_back(
        {"oracles/triplet_vs_brute_force", worst < 1e-12 && worked_example, buf});
  }

  {  // multi-label BCE against a per-element loop
    double worst = 0.0;
    Rng rng(4000, RngStream::kTest);
    for (int trial = 0; trial < 100; ++trial) {
      D l = random_tensor<double>({3, 5}, rng, -3, 3);
      D t = random_tensor<double>({3, 5}, rng, 0, 1);
      double expect = 0;
      for (size_t i = 0; i < 15; ++i) {
        double sig = 1.0 / (1.0 + std::exp(-l.data()[i]));
        expect += -(t.data()[i] * std::log(sig) +
                    (1 - t.data()[i]) * std::log(1 - sig));
      }
      expect /= 15.0;
      worst = std::max(worst, std::abs(vqa_loss(l, t).item() - expect));
    }
    char buf[96];
    std::snprintf(buf, sizeof(buf), "max abs diff %.3e over 100 instances", worst);
    out.push_back({"oracles/vqa_loss_vs_loop", worst < 1e-12, buf});
  }

  {  // recall@K against a brute-force membership oracle
    bool exact = true;
    bool monotone = true;
    Rng rng(5000, RngStream::kTest);
    for (int trial = 0; trial < 100; ++trial) {
      size_t nq = 10, nt = 50;
      std::vector<double> sim(nq * nt);
      for (auto& v : sim) v = rng.uniform(-1, 1);
      std::vector<std::vector<size_t>> gt(nq);
      for (size_t q = 0; q < nq; ++q)
        for (size_t j = 0; j < 5; ++j) gt[q].push_back(q * 5 + j);
      double prev = 0;
      for (size_t K : {size_t(1), size_t(5), size_t(10)}) {
        size_t hits = 0;
        for (size_t q = 0; q < nq; ++q) {
          bool hit = false;
          for (size_t t : gt[q]) {
            size_t better = 0;
            for (size_t j = 0; j < nt; ++j) {
              if (j == t) continue;
              if (sim[q * nt + j] > sim[q * nt + t] ||
                  (sim[q * nt + j] == sim[q * nt + t] && j < t))
                ++better;
            }
            if (better < K) hit = true;
          }
          hits += hit;
        }
        double got = recall_at_k(sim, nq, nt, gt, K);
        if (got != 100.0 * static_cast<double>(hits) / 10.0) exact = false;
        if (got < prev) monotone = false;
        prev = got;
      }
    }
    // fold averaging against a hand computation
    EvalReport f1, f2;
    f1.task = f2.task = "retrieval";
    f1.set("r1_text", 30.0);
    f2.set("r1_text", 50.0);
    bool folds_ok = fold_average({f1, f2}).get("r1_text") == 40.0;
    out.push_back({"oracles/recall_vs_brute_force",
                   exact && monotone && folds_ok,
                   exact ? "exact match on 100 matrices" : "MISMATCH"});
  }

  return out;
}

// ---------------------------------------------------------------------------
// Invariant suite: distributions, convexity, masking, permutations,
// schedule/clipping.
// ---------------------------------------------------------------------------

inline CheckList run_invariant_suite() {
  using namespace detail;
  CheckList out;

  {  // score rows: distribution + exact zeros + convex hull, 1000 instances
    bool dist_ok = true, hull_ok = true;
    for (uint64_t s = 0; s < 1000; ++s) {
      Rng rng(s, RngStream::kTest);
      size_t nq = 2 + s % 4;
      ScoreAttentionParams<double> p(1 + s % 2, 8, 2, rng);
      Seq x = random_seq(2, nq, 8, rng,
                         {1 + s % nq, nq});
      Seq z = random_seq(2, 3, 8, rng);
      D scores = score_attention_scores(p.instances[0], x, z);
      for (size_t b = 0; b < 2; ++b) {
        double total = 0;
        for (size_t i = 0; i < nq; ++i) {
          double v = scores.data()[b * nq + i];
          if (v < 0.0) dist_ok = false;
          if (x.mask.data()[b * nq + i] == 0.0 && v != 0.0) dist_ok = false;
          total += v;
        }
        if (std::abs(total - 1.0) > 1e-6) dist_ok = false;
      }
      D y = score_attention_reduce(p, x, z);
      size_t k = p.k();
      for (size_t b = 0; b < 2; ++b)
        for (size_t c = 0; c < 8; ++c) {
          double lo = 1e300, hi = -1e300;
          for (size_t t = 0; t < nq; ++t)
            if (x.mask.data()[b * nq + t] > 0.5) {
              lo = std::min(lo, x.feats.data()[(b * nq + t) * 8 + c]);
              hi = std::max(hi, x.feats.data()[(b * nq + t) * 8 + c]);
            }
          for (size_t slot = 0; slot < k; ++slot) {
            double v = y.data()[(b * k + slot) * 8 + c];
            if (v < lo - 1e-9 || v > hi + 1e-9) hull_ok = false;
          }
        }
    }
    out.push_back({"invariants/score_distribution", dist_ok,
                   "rows sum to 1, masked entries exactly 0 (1000 instances)"});
    out.push_back({"invariants/reduction_convex_hull", hull_ok,
                   "all coordinates inside the unmasked [min, max] (1000 instances)"});
  }

  {  // attention masking + permutation invariances, 100 instances each
    bool mask_ok = true, perm_ok = true;
    for (uint64_t s = 0; s < 100; ++s) {
      Rng rng(7000 + s, RngStream::kTest);
      AttentionBlockParams<double> blk(8, 2, 1.0, rng);
      Seq x = random_seq(2, 4, 8, rng);
      Seq z = random_seq(2, 5, 8, rng);
      Rng drop(0, RngStream::kDropout);
      Seq base = cross_attention_block(blk, x, z, false, drop);

      // garble padding on both sides
      auto garble = [&rng](const Seq& sq) {
        D f = D::from_vector(sq.feats.shape(),
                             {sq.feats.data().begin(), sq.feats.data().end()});
        auto fm = f.data_mut();
        size_t L = sq.len(), d = sq.width();
        for (size_t b = 0; b < sq.batch(); ++b)
          for (size_t t = 0; t < L; ++t)
            if (sq.mask.data()[b * L + t] == 0.0)
              for (size_t c = 0; c < d; ++c)
                fm[(b * L + t) * d + c] = rng.uniform(-1e4, 1e4);
        return Seq(f, sq.mask);
      };
      Seq o2 = cross_attention_block(blk, garble(x), garble(z), false, drop);
      for (size_t i = 0; i < base.feats.size(); ++i)
        if (std::abs(base.feats.data()[i] - o2.feats.data()[i]) > 1e-9)
          mask_ok = false;

      // permute keys
      size_t nk = 5;
      std::vector<size_t> perm(nk);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng.engine());
      std::vector<double> zf(2 * nk * 8), zm(2 * nk);
      for (size_t b = 0; b < 2; ++b)
        for (size_t j = 0; j < nk; ++j) {
          for (size_t c = 0; c < 8; ++c)
            zf[(b * nk + j) * 8 + c] =
                z.feats.data()[(b * nk + perm[j]) * 8 + c];
          zm[b * nk + j] = z.mask.data()[b * nk + perm[j]];
        }
      Seq zp(D::from_vector({2, nk, 8}, zf), D::from_vector({2, nk}, zm));
      Seq o3 = cross_attention_block(blk, x, zp, false, drop);
      for (size_t i = 0; i < base.feats.size(); ++i)
        if (std::abs(base.feats.data()[i] - o3.feats.data()[i]) > 1e-9)
          perm_ok = false;
    }
    out.push_back({"invariants/attention_masking", mask_ok,
                   "padded content never reaches unmasked outputs (100 instances)"});
    out.push_back({"invariants/attention_key_permutation", perm_ok,
                   "outputs invariant to key order (100 instances)"});
  }

  {  // aggregation masking + permutation + cross-modal dependence
    bool mask_ok = true, perm_ok = true;
    int changed = 0;
    for (uint64_t s = 0; s < 100; ++s) {
      Rng rng(8000 + s, RngStream::kTest);
      ScoreAttentionParams<double> p(1, 8, 2, rng);
      Seq x = random_seq(1, 4, 8, rng);
      Seq z = random_seq(1, 4, 8, rng);
      D y0 = score_attention_reduce(p, x, z);
      D s0 = score_attention_scores(p.instances[0], x, z);

      // garbled padding
      auto garble = [&rng](const Seq& sq) {
        D f = D::from_vector(sq.feats.shape(),
                             {sq.feats.data().begin(), sq.feats.data().end()});
        auto fm = f.data_mut();
        size_t L = sq.len(), d = sq.width();
        for (size_t b = 0; b < sq.batch(); ++b)
          for (size_t t = 0; t < L; ++t)
            if (sq.mask.data()[b * L + t] == 0.0)
              for (size_t c = 0; c < d; ++c) fm[(b * L + t) * d + c] = 99.0;
        return Seq(f, sq.mask);
      };
      D y1 = score_attention_reduce(p, garble(x), garble(z));
      for (size_t i = 0; i < y0.size(); ++i)
        if (std::abs(y0.data()[i] - y1.data()[i]) > 1e-9) mask_ok = false;

      // permute z positions: scores and reduction unchanged
      std::vector<size_t> perm{3, 0, 2, 1};
      std::vector<double> zf(4 * 8), zm(4);
      for (size_t j = 0; j < 4; ++j) {
        for (size_t c = 0; c < 8; ++c)
          zf[j * 8 + c] = z.feats.data()[perm[j] * 8 + c];
        zm[j] = z.mask.data()[perm[j]];
      }
      Seq zp(D::from_vector({1, 4, 8}, zf), D::from_vector({1, 4}, zm));
      D y2 = score_attention_reduce(p, x, zp);
      for (size_t i = 0; i < y0.size(); ++i)
        if (std::abs(y0.data()[i] - y2.data()[i]) > 1e-9) perm_ok = false;
      // permute x positions: scores permute, reduction unchanged
      std::vector<double> xf(4 * 8), xm(4);
      for (size_t j = 0; j < 4; ++j) {
        for (size_t c = 0; c < 8; ++c)
          xf[j * 8 + c] = x.feats.data()[perm[j] * 8 + c];
        xm[j] = x.mask.data()[perm[j]];
      }
      Seq xp(D::from_vector({1, 4, 8}, xf), D::from_vector({1, 4}, xm));
      D s2 = score_attention_scores(p.instances[0], xp, zp);
      D y3 = score_attention_reduce(p, xp, zp);
      for (size_t j = 0; j < 4; ++j)
        if (std::abs(s2.data()[j] - s0.data()[perm[j]]) > 1e-9) perm_ok = false;
      for (size_t i = 0; i < y0.size(); ++i)
        if (std::abs(y0.data()[i] - y3.data()[i]) > 1e-9) perm_ok = false;

    }
    // cross-modal dependence: perturb valid z content (padded positions are
    // invisible by design) with at least two unmasked query positions
    for (uint64_t s = 0; s < 100; ++s) {
      Rng rng(8500 + s, RngStream::kTest);
      ScoreAttentionParams<double> p(1, 8, 2, rng);
      Seq x = random_seq(1, 4, 8, rng, {4});
      Seq z = random_seq(1, 4, 8, rng, {4});
      D s0 = score_attention_scores(p.instances[0], x, z);
      D zf2 = D::from_vector(z.feats.shape(),
                             {z.feats.data().begin(), z.feats.data().end()});
      zf2.data_mut()[static_cast<size_t>(rng.uniform_int(0, 31))] +=
          rng.uniform(0.5, 1.0);
      D s1 = score_attention_scores(p.instances[0], x, Seq(zf2, z.mask));
      double diff = 0;
      for (size_t i = 0; i < 4; ++i)
        diff = std::max(diff, std::abs(s0.data()[i] - s1.data()[i]));
      if (diff > 1e-6) ++changed;
    }
    out.push_back({"invariants/aggregation_masking", mask_ok,
                   "padding invisible to S and Y (100 instances)"});
    out.push_back({"invariants/aggregation_permutation", perm_ok,
                   "z-permutation invariant; x-permutation equivariant (100 instances)"});
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%d/100 perturbations moved a score", changed);
    out.push_back({"invariants/cross_modal_dependence", changed >= 95, buf});
  }

  {  // schedule and clipping
    TrainConfig cfg;
    cfg.lr = 0.0005;
    bool lr_ok = lr_at(cfg, Task::kVqa, 0) == 0.0005 &&
                 std::abs(lr_at(cfg, Task::kVqa, 10) - 0.00005) < 1e-18 &&
                 std::abs(lr_at(cfg, Task::kVqa, 25) - 0.000005) < 1e-18;
    out.push_back({"invariants/lr_schedule", lr_ok,
                   "factor-10 decay every 10 epochs"});

    D p = D::zeros({2}, true);
    p.grad()[0] = 3.0;
    p.grad()[1] = 4.0;
    std::vector<D> params{p};
    double sc = clip_global_norm(params, 2.0);
    bool clip_ok = std::abs(sc - 0.4) < 1e-12 &&
                   std::abs(p.grad()[0] - 1.2) < 1e-12 &&
                   std::abs(p.grad()[1] - 1.6) < 1e-12;
    Rng rng(9000, RngStream::kTest);
    for (int t = 0; t < 50 && clip_ok; ++t) {
      D a = random_tensor<double>({7}, rng, -9, 9, true);
      auto g = a.grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] = rng.uniform(-9, 9);
      std::vector<D> ps{a};
      clip_global_norm(ps, 2.0);
      double total = 0;
      for (double gv : a.grad()) total += gv * gv;
      if (std::sqrt(total) > 2.0 + 1e-9) clip_ok = false;
    }
    out.push_back({"invariants/gradient_clipping", clip_ok,
                   "[3,4] -> [1.2,1.6]; post-norm <= 2"});
  }

  return out;
}

inline CheckList run_suite(const std::string& name) {
  if (name == "gradients") return run_gradient_suite();
  if (name == "oracles") return run_oracle_suite();
  if (name == "invariants") return run_invariant_suite();
  if (name == "all") {
    CheckList all = run_gradient_suite();
    CheckList o = run_oracle_suite();
    CheckList inv = run_invariant_suite();
    all.insert(all.end(), o.begin(), o.end());
    all.insert(all.end(), inv.begin(), inv.end());
    return all;
  }
  throw ConfigError("unknown verify suite '" + name +
                    "' (expected gradients|oracles|invariants|all)");
}

}  // namespace vsa::checks
