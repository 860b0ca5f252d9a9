#pragma once

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "vsa/data.hpp"
#include "vsa/pipeline.hpp"

namespace vsa {

// Step-decayed learning rate: lr0 * factor^(-floor(epoch / every)).
inline double lr_at(const TrainConfig& cfg, Task task, size_t epoch) {
  double drops = static_cast<double>(epoch / cfg.decay_every);
  return cfg.effective_lr(task) * std::pow(cfg.decay_factor, -drops);
}

// Bias-corrected Adam over the trainable parameters, updated in place.
template <typename T>
class Adam {
 public:
  explicit Adam(std::vector<Tensor<T>> params, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), b1_(beta1), b2_(beta2), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      m_.emplace_back(p.size(), T(0));
      v_.emplace_back(p.size(), T(0));
    }
  }

  size_t step_count() const { return t_; }

  void step(double lr) {
    ++t_;
    T b1 = static_cast<T>(b1_), b2 = static_cast<T>(b2_);
    T corr1 = static_cast<T>(1.0 - std::pow(b1_, static_cast<double>(t_)));
    T corr2 = static_cast<T>(1.0 - std::pow(b2_, static_cast<double>(t_)));
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (!p.has_grad())
        throw ContractError("adam_step: parameter " + std::to_string(i) +
                            " has no gradient");
      auto g = p.grad();
      auto vals = p.data_mut();
      T* m = m_[i].data();
      T* v = v_[i].data();
      for (size_t j = 0; j < vals.size(); ++j) {
        m[j] = b1 * m[j] + (T(1) - b1) * g[j];
        v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
        T mhat = m[j] / corr1;
        T vhat = v[j] / corr2;
        vals[j] -= static_cast<T>(lr) * mhat /
                   (std::sqrt(vhat) + static_cast<T>(eps_));
      }
    }
  }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> m_, v_;
  double b1_, b2_, eps_;
  size_t t_ = 0;
};

// Scales every gradient by max_norm / ||g_all||_2 when the concatenated norm
// exceeds max_norm; returns the applied scale.
template <typename T>
double clip_global_norm(std::vector<Tensor<T>>& params, double max_norm) {
  double total = 0.0;
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    for (T g : p.grad()) total += static_cast<double>(g) * static_cast<double>(g);
  }
  double norm = std::sqrt(total);
  if (norm <= max_norm || norm == 0.0) return 1.0;
  double scale = max_norm / norm;
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    for (T& g : p.grad()) g = static_cast<T>(g * scale);
  }
  return scale;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

template <typename T>
struct BatchBuilder {
  const Dataset* data = nullptr;
  const Vocabulary* vocab = nullptr;
  const ModelConfig* model_cfg = nullptr;

  // One image against a list of candidate texts (pairwise retrieval scoring).
  ModelInput<T> pair_input(size_t image_sample,
                           const std::vector<size_t>& text_idx) const {
    ModelInput<T> in = input(text_idx);
    const auto& img = data->images[data->samples[image_sample].image_index];
    size_t B = text_idx.size(), R = img.n_regions, F = img.width;
    std::vector<T> regions(B * R * F);
    std::vector<T> rmask(B * R, T(1));
    for (size_t b = 0; b < B; ++b)
      for (size_t j = 0; j < R * F; ++j)
        regions[b * R * F + j] = static_cast<T>(img.feats[j]);
    in.regions = Tensor<T>::from_vector({B, R, F}, std::move(regions));
    in.region_mask = Tensor<T>::from_vector({B, R}, std::move(rmask));
    return in;
  }

  ModelInput<T> input(const std::vector<size_t>& idx) const {
    ModelInput<T> in;
    size_t B = idx.size();
    size_t R = 0, F = 0;
    for (size_t i : idx) {
      R = std::max(R, data->images[data->samples[i].image_index].n_regions);
      F = data->images[data->samples[i].image_index].width;
    }
    std::vector<T> regions(B * R * F, T(0));
    std::vector<T> rmask(B * R, T(0));
    for (size_t b = 0; b < B; ++b) {
      const auto& img = data->images[data->samples[idx[b]].image_index];
      for (size_t r = 0; r < img.n_regions; ++r) {
        rmask[b * R + r] = T(1);
        for (size_t c = 0; c < F; ++c)
          regions[(b * R + r) * F + c] = static_cast<T>(img.feats[r * F + c]);
      }
    }
    in.regions = Tensor<T>::from_vector({B, R, F}, std::move(regions));
    in.region_mask = Tensor<T>::from_vector({B, R}, std::move(rmask));

    size_t L;
    if (data->task == Task::kVqa) {
      L = model_cfg->max_question_len;  // questions: fixed pad/truncate length
    } else {
      L = 1;
      for (size_t i : idx)
        L = std::max(L, data->samples[i].caption_tokens.size());
    }
    in.text_len = L;
    in.tokens.assign(B * L, Vocabulary::kPad);
    in.text_lengths.resize(B);
    for (size_t b = 0; b < B; ++b) {
      const auto& toks = data->samples[idx[b]].caption_tokens;
      size_t n = std::min(toks.size(), L);
      if (n == 0)
        throw DomainError("batch: sample " + std::to_string(idx[b]) +
                          " has an empty text");
      in.text_lengths[b] = n;
      for (size_t t = 0; t < n; ++t)
        in.tokens[b * L + t] = vocab->index(toks[t]);
    }
    return in;
  }

  // Soft targets: min(annotator count / 3, 1); or a one-hot of the modal
  // answer when soft targets are disabled.
  Tensor<T> vqa_targets(const std::vector<size_t>& idx,
                        const AnswerVocabulary& answers) const {
    size_t B = idx.size(), A = answers.size();
    std::vector<T> t(B * A, T(0));
    for (size_t b = 0; b < B; ++b) {
      const auto& s = data->samples[idx[b]];
      if (model_cfg->soft_targets) {
        std::map<std::string, size_t> counts;
        for (const auto& a : s.answers) ++counts[a];
        for (const auto& [a, n] : counts) {
          int64_t cls = answers.index(a);
          if (cls >= 0)
            t[b * A + static_cast<size_t>(cls)] =
                std::min(static_cast<T>(n) / T(3), T(1));
        }
      } else {
        int64_t cls = answers.index(modal_answer(s.answers));
        if (cls >= 0) t[b * A + static_cast<size_t>(cls)] = T(1);
      }
    }
    return Tensor<T>::from_vector({B, A}, std::move(t));
  }

  std::vector<VqaAnnotation> annotations(const std::vector<size_t>& idx) const {
    std::vector<VqaAnnotation> out;
    out.reserve(idx.size());
    for (size_t i : idx)
      out.push_back({data->samples[i].category, data->samples[i].answers});
    return out;
  }
};

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainResult {
  std::string loss_csv;  // epoch,step,loss,lr
  double initial_loss = 0.0;
  double final_loss = 0.0;
  EvalReport report;
};

template <typename T>
class Trainer {
 public:
  explicit Trainer(const RunConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    if (!cfg_.data.dir.empty())
      data_ = load_dataset_dir(cfg_.model.task, cfg_.data.dir);
    else
      data_ = generate_synthetic(SyntheticSpec::from_config(cfg_));
    if (data_.train.images.empty() || data_.train.samples.empty())
      throw ConfigError("training split is empty");

    std::vector<std::vector<std::string>> corpus;
    for (const auto& s : data_.train.samples) corpus.push_back(s.caption_tokens);
    vocab_ = Vocabulary::build(corpus, 5);
    if (cfg_.model.task == Task::kVqa) {
      std::vector<std::string> all_answers;
      for (const auto& s : data_.train.samples)
        for (const auto& a : s.answers) all_answers.push_back(a);
      answers_ = AnswerVocabulary::build(all_answers, 8);
      if (answers_.size() == 0)
        throw ConfigError("answer vocabulary is empty (no answer occurs more "
                          "than 8 times)");
    }

    cfg_.model.feature_width = data_.train.images[0].width;
    size_t max_r = 0, max_l = 1;
    for (const auto& img : data_.train.images)
      max_r = std::max(max_r, img.n_regions);
    for (const auto& img : data_.test.images)
      max_r = std::max(max_r, img.n_regions);
    if (cfg_.model.task == Task::kVqa) {
      max_l = cfg_.model.max_question_len;
    } else {
      for (const auto& s : data_.train.samples)
        max_l = std::max(max_l, s.caption_tokens.size());
      for (const auto& s : data_.test.samples)
        max_l = std::max(max_l, s.caption_tokens.size());
    }
    Rng init_rng(cfg_.train.seed, RngStream::kParamInit);
    model_.emplace(cfg_.model, vocab_.size(), answers_.size(), max_r, max_l,
                   init_rng);
    if (!cfg_.model.embedding_path.empty()) {
      Rng emb_rng(cfg_.train.seed, RngStream::kParamInit);
      model_->set_word_embeddings(load_pretrained_embeddings<T>(
          cfg_.model.embedding_path, vocab_, cfg_.model.word_dim,
          cfg_.model.finetune_embeddings, emb_rng));
    }
  }

  const RunConfig& config() const { return cfg_; }
  Model<T>& model() { return *model_; }
  const Vocabulary& vocab() const { return vocab_; }
  const AnswerVocabulary& answers() const { return answers_; }
  const SyntheticData& dataset() const { return data_; }

  TrainResult run() {
    TrainResult result;
    BatchBuilder<T> builder{&data_.train, &vocab_, &model_->config()};

    ParamSet<T> ps = model_->parameters();
    std::vector<Tensor<T>> trainable;
    for (auto& [name, p] : ps.items)
      if (p.requires_grad()) trainable.push_back(p);
    Adam<T> opt(trainable);

    Rng shuffle_rng(cfg_.train.seed, RngStream::kShuffle);
    Rng drop_rng(cfg_.train.seed, RngStream::kDropout);
    std::vector<size_t> order(data_.train.samples.size());
    std::iota(order.begin(), order.end(), 0);

    std::string csv = "epoch,step,loss,lr\n";
    size_t global_step = 0;
    bool first = true;
    double last_loss = 0.0;
    for (size_t epoch = 0; epoch < cfg_.train.epochs; ++epoch) {
      double lr = lr_at(cfg_.train, cfg_.model.task, epoch);
      std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
      for (size_t at = 0; at < order.size(); at += cfg_.train.batch) {
        std::vector<size_t> idx(
            order.begin() + static_cast<long>(at),
            order.begin() +
                static_cast<long>(std::min(at + cfg_.train.batch, order.size())));
        if (cfg_.model.task == Task::kRetrieval && idx.size() < 2)
          continue;  // a lone sample has no in-batch negatives

        // ordering contract: zero -> forward -> loss -> backward ->
        // clip (retrieval) -> step
        ps.zero_grads();
        double loss_val;
        {
          Tape<T> tape;
          ModelInput<T> in = builder.input(idx);
          Tensor<T> loss;
          if (cfg_.model.task == Task::kVqa) {
            auto y = model_->forward(in, true, drop_rng);
            Tensor<T> targets = builder.vqa_targets(idx, answers_);
            loss = vqa_loss(model_->vqa_logits(y, true, drop_rng), targets);
          } else if (cfg_.train.pairwise_sims) {
            loss = triplet_loss_hard(pairwise_batch_sims(in, drop_rng),
                                     cfg_.train.margin);
          } else {
            auto y = model_->forward(in, true, drop_rng);
            loss = triplet_loss_hard(model_->retrieval_similarity(y),
                                     cfg_.train.margin);
          }
          loss_val = static_cast<double>(loss.item());
          if (!std::isfinite(loss_val))
            throw NumericError("non-finite loss at epoch " +
                               std::to_string(epoch) + " step " +
                               std::to_string(global_step));
          tape.backward(loss);
        }
        if (cfg_.model.task == Task::kRetrieval)
          clip_global_norm(trainable, cfg_.train.clip_norm);
        opt.step(lr);

        char row[96];
        std::snprintf(row, sizeof(row), "%zu,%zu,%.9g,%.9g\n", epoch,
                      global_step, loss_val, lr);
        csv += row;
        if (first) {
          result.initial_loss = loss_val;
          first = false;
        }
        last_loss = loss_val;
        ++global_step;
      }
    }
    result.loss_csv = std::move(csv);
    result.final_loss = last_loss;
    result.report = evaluate();
    return result;
  }

  EvalReport evaluate() {
    return cfg_.model.task == Task::kVqa ? evaluate_vqa() : evaluate_retrieval();
  }

 private:
  // In-batch B x B similarity matrix where every entry runs the
  // pair-conditioned attention stage. Encoders run once; the pair grid is
  // built with on-tape broadcasting so gradients flow back to the single
  // encoding.
  Tensor<T> pairwise_batch_sims(const ModelInput<T>& in, Rng& drop_rng) {
    size_t B = in.batch();
    SequenceBatch<T> img = model_->encode_image(in);
    SequenceBatch<T> txt = model_->encode_texts(in);
    size_t R = img.len(), L = txt.len(), d = model_->config().d;

    Tensor<T> img_grid = reshape(
        add(reshape(img.feats, {B, 1, R, d}), Tensor<T>::zeros({1, B, 1, 1})),
        {B * B, R, d});
    Tensor<T> txt_grid = reshape(
        add(reshape(txt.feats, {1, B, L, d}), Tensor<T>::zeros({B, 1, 1, 1})),
        {B * B, L, d});
    Tensor<T> img_mask = reshape(
        add(reshape(img.mask, {B, 1, R}), Tensor<T>::zeros({1, B, 1})),
        {B * B, R});
    Tensor<T> txt_mask = reshape(
        add(reshape(txt.mask, {1, B, L}), Tensor<T>::zeros({B, 1, 1})),
        {B * B, L});

    auto y = model_->attend_and_aggregate(SequenceBatch<T>(img_grid, img_mask),
                                          SequenceBatch<T>(txt_grid, txt_mask),
                                          true, drop_rng);
    Tensor<T> sims = cfg_.model.retrieval_all_pairs
                         ? combine_k_retrieval_all_pairs(y.img, y.txt)
                         : combine_k_retrieval(y.img, y.txt);
    return reshape(sims, {B, B});
  }

  EvalReport evaluate_vqa() {
    BatchBuilder<T> builder{&data_.test, &vocab_, &model_->config()};
    Rng drop(0, RngStream::kDropout);  // unused at eval
    std::vector<std::string> preds;
    std::vector<VqaAnnotation> anns;
    size_t n = data_.test.samples.size();
    for (size_t at = 0; at < n; at += cfg_.train.batch) {
      std::vector<size_t> idx;
      for (size_t i = at; i < std::min(at + cfg_.train.batch, n); ++i)
        idx.push_back(i);
      ModelInput<T> in = builder.input(idx);
      auto y = model_->forward(in, false, drop);
      Tensor<T> logits = model_->vqa_logits(y, false, drop);
      size_t A = logits.dim(1);
      for (size_t b = 0; b < idx.size(); ++b) {
        size_t best = 0;
        for (size_t a = 1; a < A; ++a)
          if (logits.data()[b * A + a] > logits.data()[b * A + best]) best = a;
        preds.push_back(answers_.answer(static_cast<int64_t>(best)));
      }
      auto batch_anns = builder.annotations(idx);
      anns.insert(anns.end(), batch_anns.begin(), batch_anns.end());
    }
    EvalReport rep;
    rep.task = "vqa";
    rep.folds = 1;
    rep.metrics = vqa_accuracy(preds, anns);
    return rep;
  }

  EvalReport evaluate_retrieval() {
    size_t n = data_.test.samples.size();
    std::vector<double> sim(n * n);
    compute_similarities(sim, n);
    auto gt = retrieval_ground_truth(data_.test);

    size_t folds = std::min<size_t>(cfg_.eval_folds, n);
    std::vector<EvalReport> reports;
    size_t fold_size = n / folds;
    for (size_t f = 0; f < folds; ++f) {
      size_t lo = f * fold_size;
      size_t hi = f + 1 == folds ? n : lo + fold_size;
      reports.push_back(fold_report(sim, gt, n, lo, hi));
    }
    return folds == 1 ? reports[0] : fold_average(reports);
  }

  void compute_similarities(std::vector<double>& sim, size_t n) {
    if (cfg_.eval_pairwise)
      compute_similarities_pairwise(sim, n);
    else
      compute_similarities_broadcast(sim, n);
  }

  // S(I, T) through the pair-conditioned pipeline: every candidate pair runs
  // the full cross/self-attention stage before aggregation and cosine. The
  // pair-independent encoder outputs are computed once and reused.
  void compute_similarities_pairwise(std::vector<double>& sim, size_t n) {
    BatchBuilder<T> builder{&data_.test, &vocab_, &model_->config()};
    Rng drop(0, RngStream::kDropout);

    // one global encoding pass (captions padded to the test-set max)
    std::vector<size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    ModelInput<T> in = builder.input(all);
    auto img_all = model_->encode_image(in);
    auto txt_all = model_->encode_texts(in);
    size_t R = img_all.len(), L = txt_all.len(), d = model_->config().d;
    std::span<const T> img_enc = img_all.feats.data();
    std::span<const T> txt_enc = txt_all.feats.data();
    std::span<const T> img_mask = img_all.mask.data();
    std::span<const T> txt_mask = txt_all.mask.data();

    const size_t chunk = 250;
    for (size_t i = 0; i < n; ++i) {
      for (size_t lo = 0; lo < n; lo += chunk) {
        size_t hi = std::min(lo + chunk, n);
        size_t B = hi - lo;
        // image i tiled against candidate texts lo..hi
        std::vector<T> ifeat(B * R * d), imask(B * R);
        for (size_t b = 0; b < B; ++b) {
          std::copy(img_enc.begin() + static_cast<long>(i * R * d),
                    img_enc.begin() + static_cast<long>((i + 1) * R * d),
                    ifeat.begin() + static_cast<long>(b * R * d));
          std::copy(img_mask.begin() + static_cast<long>(i * R),
                    img_mask.begin() + static_cast<long>((i + 1) * R),
                    imask.begin() + static_cast<long>(b * R));
        }
        std::vector<T> tfeat(txt_enc.begin() + static_cast<long>(lo * L * d),
                             txt_enc.begin() + static_cast<long>(hi * L * d));
        std::vector<T> tmask(txt_mask.begin() + static_cast<long>(lo * L),
                             txt_mask.begin() + static_cast<long>(hi * L));
        SequenceBatch<T> img(Tensor<T>::from_vector({B, R, d}, std::move(ifeat)),
                             Tensor<T>::from_vector({B, R}, std::move(imask)));
        SequenceBatch<T> txt(Tensor<T>::from_vector({B, L, d}, std::move(tfeat)),
                             Tensor<T>::from_vector({B, L}, std::move(tmask)));
        auto y = model_->attend_and_aggregate(img, txt, false, drop);
        Tensor<T> s = cfg_.model.retrieval_all_pairs
                          ? combine_k_retrieval_all_pairs(y.img, y.txt)
                          : combine_k_retrieval(y.img, y.txt);
        for (size_t r = 0; r < B; ++r)
          sim[i * n + lo + r] = static_cast<double>(s.data()[r]);
      }
    }
  }

  // Broadcast construction: per-sample compressed vectors from the paired
  // forward, cosine over all pairs.
  void compute_similarities_broadcast(std::vector<double>& sim, size_t n) {
    BatchBuilder<T> builder{&data_.test, &vocab_, &model_->config()};
    Rng drop(0, RngStream::kDropout);
    // compress everything once
    std::vector<T> img_flat, txt_flat;
    size_t k = 0, d = 0;
    for (size_t at = 0; at < n; at += cfg_.train.batch) {
      std::vector<size_t> idx;
      for (size_t i = at; i < std::min(at + cfg_.train.batch, n); ++i)
        idx.push_back(i);
      ModelInput<T> in = builder.input(idx);
      auto y = model_->forward(in, false, drop);
      k = y.img.dim(1);
      d = y.img.dim(2);
      img_flat.insert(img_flat.end(), y.img.data().begin(), y.img.data().end());
      txt_flat.insert(txt_flat.end(), y.txt.data().begin(), y.txt.data().end());
    }
    Tensor<T> txt_all = Tensor<T>::from_vector({n, k, d}, std::move(txt_flat));
    // row chunks keep the broadcast intermediates small
    const size_t chunk = 64;
    for (size_t lo = 0; lo < n; lo += chunk) {
      size_t hi = std::min(lo + chunk, n);
      std::vector<T> rows(img_flat.begin() + static_cast<long>(lo * k * d),
                          img_flat.begin() + static_cast<long>(hi * k * d));
      Tensor<T> img_rows =
          Tensor<T>::from_vector({hi - lo, k, d}, std::move(rows));
      Tensor<T> s = similarity_matrix(img_rows, txt_all,
                                      !cfg_.model.retrieval_all_pairs);
      for (size_t r = 0; r < hi - lo; ++r)
        for (size_t c = 0; c < n; ++c)
          sim[(lo + r) * n + c] = static_cast<double>(s.data()[r * n + c]);
    }
  }

  EvalReport fold_report(const std::vector<double>& sim,
                         const std::vector<std::vector<size_t>>& gt, size_t n,
                         size_t lo, size_t hi) {
    size_t m = hi - lo;
    std::vector<double> sub(m * m), sub_t(m * m);
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < m; ++j) {
        sub[i * m + j] = sim[(lo + i) * n + (lo + j)];
        sub_t[i * m + j] = sim[(lo + j) * n + (lo + i)];
      }
    std::vector<std::vector<size_t>> fold_gt(m);
    for (size_t i = 0; i < m; ++i)
      for (size_t j : gt[lo + i])
        if (j >= lo && j < hi) fold_gt[i].push_back(j - lo);
    EvalReport rep;
    rep.task = "retrieval";
    rep.folds = 1;
    for (size_t kk : {size_t(1), size_t(5), size_t(10)}) {
      if (kk > m) continue;
      rep.set("r" + std::to_string(kk) + "_text",
              recall_at_k(sub, m, m, fold_gt, kk));
      rep.set("r" + std::to_string(kk) + "_image",
              recall_at_k(sub_t, m, m, fold_gt, kk));
    }
    return rep;
  }

  RunConfig cfg_;
  SyntheticData data_;
  Vocabulary vocab_;
  AnswerVocabulary answers_;
  std::optional<Model<T>> model_;
};

}  // namespace vsa
