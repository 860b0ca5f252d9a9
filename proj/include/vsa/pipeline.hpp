#pragma once

#include <optional>

#include "vsa/config.hpp"
#include "vsa/encoders.hpp"

namespace vsa {

// One raw batch: precomputed region features plus padded token ids.
template <typename T>
struct ModelInput {
  Tensor<T> regions;      // [B, R, feature_width]
  Tensor<T> region_mask;  // [B, R]
  std::vector<int64_t> tokens;      // B * L, pad id 0
  size_t text_len = 0;              // L
  std::vector<size_t> text_lengths; // per-sample valid lengths

  size_t batch() const { return regions.dim(0); }
};

// One cross-attention + self-attention stage per modality.
template <typename T>
struct StageParams {
  AttentionBlockParams<T> cross_img;                 // image queries, text kv
  std::optional<AttentionBlockParams<T>> cross_txt;  // absent when shared
  AttentionBlockParams<T> self_img, self_txt;

  const AttentionBlockParams<T>& text_cross() const {
    return cross_txt ? *cross_txt : cross_img;
  }
};

// Per-modality aggregator state; only the configured kind is populated.
template <typename T>
struct AggregatorSide {
  ScoreAttentionParams<T> score;
  Conv1dParams<T> conv;
  ClsParams<T> cls;
};

template <typename T>
struct VqaHeadParams {
  // position-wise feed-forward per modality, then a classifier on the
  // concatenated pair
  Linear<T> ff1_img, ff2_img, ff1_txt, ff2_txt;
  LayerNorm<T> ln_img, ln_txt;
  Linear<T> classifier;  // [2d, n_answers]

  VqaHeadParams() = default;
  VqaHeadParams(size_t d, size_t n_answers, Rng& rng)
      : ff1_img(d, d, rng),
        ff2_img(d, d, rng),
        ff1_txt(d, d, rng),
        ff2_txt(d, d, rng),
        ln_img(d),
        ln_txt(d),
        classifier(2 * d, n_answers, rng) {}

  void collect(ParamSet<T>& ps, const std::string& name) const {
    ff1_img.collect(ps, name + ".ff1_img");
    ff2_img.collect(ps, name + ".ff2_img");
    ff1_txt.collect(ps, name + ".ff1_txt");
    ff2_txt.collect(ps, name + ".ff2_txt");
    ln_img.collect(ps, name + ".ln_img");
    ln_txt.collect(ps, name + ".ln_txt");
    classifier.collect(ps, name + ".classifier");
  }
};

// The visual-semantic model: encoders, one or more cross/self attention
// stages, per-modality aggregation, and the task head.
template <typename T>
class Model {
 public:
  struct Compressed {
    Tensor<T> img, txt;  // [B, k, d] each
  };

  Model(const ModelConfig& cfg, size_t vocab_size, size_t n_answers,
        size_t max_img_len, size_t max_txt_len, Rng& rng)
      : cfg_(cfg), n_answers_(n_answers) {
    cfg_.validate();
    word_emb_ = init_uniform<T>({vocab_size, cfg.word_dim}, -0.1, 0.1, rng);
    word_emb_.set_requires_grad(true);
    gru_ = GruParams<T>(cfg.word_dim, cfg.d, rng);
    region_proj_ = Linear<T>(cfg.feature_width, cfg.d, rng);
    size_t img_len = max_img_len, txt_len = max_txt_len;
    if (cfg.aggregator == AggregatorKind::kClsToken) {
      ++img_len;  // CLS position
      ++txt_len;
    }
    stages_.reserve(cfg.depth);
    for (size_t s = 0; s < cfg.depth; ++s) {
      StageParams<T> st;
      st.cross_img = AttentionBlockParams<T>(cfg.d, cfg.heads, cfg.dropout_keep, rng);
      if (!cfg.share_cross_attention)
        st.cross_txt = AttentionBlockParams<T>(cfg.d, cfg.heads, cfg.dropout_keep, rng);
      st.self_img = AttentionBlockParams<T>(cfg.d, cfg.heads, cfg.dropout_keep, rng);
      st.self_txt = AttentionBlockParams<T>(cfg.d, cfg.heads, cfg.dropout_keep, rng);
      stages_.push_back(std::move(st));
    }
    init_side(agg_img_, img_len, rng);
    init_side(agg_txt_, txt_len, rng);
    if (cfg.task == Task::kVqa) {
      if (n_answers == 0)
        throw ConfigError("VQA model needs a non-empty answer vocabulary");
      head_ = VqaHeadParams<T>(cfg.d, n_answers, rng);
    }
  }

  // Swap in a pre-trained word embedding table (trainability preset by the
  // loader).
  void set_word_embeddings(Tensor<T> table) {
    if (table.shape() != word_emb_.shape())
      throw ConfigError("embedding table shape " + shape_str(table.shape()) +
                        " does not match model table " +
                        shape_str(word_emb_.shape()));
    word_emb_ = std::move(table);
  }

  const ModelConfig& config() const { return cfg_; }
  size_t n_answers() const { return n_answers_; }
  Tensor<T>& word_embeddings() { return word_emb_; }

  ParamSet<T> parameters() const {
    ParamSet<T> ps;
    ps.add("word_emb", word_emb_);
    gru_.collect(ps, "gru");
    region_proj_.collect(ps, "region_proj");
    for (size_t s = 0; s < stages_.size(); ++s) {
      std::string pre = "stage" + std::to_string(s);
      stages_[s].cross_img.collect(ps, pre + ".cross_img");
      if (stages_[s].cross_txt)
        stages_[s].cross_txt->collect(ps, pre + ".cross_txt");
      stages_[s].self_img.collect(ps, pre + ".self_img");
      stages_[s].self_txt.collect(ps, pre + ".self_txt");
    }
    collect_side(agg_img_, ps, "agg_img");
    collect_side(agg_txt_, ps, "agg_txt");
    if (head_) head_->collect(ps, "head");
    return ps;
  }

  // Encoders -> attention stages -> per-modality aggregation.
  Compressed forward(const ModelInput<T>& in, bool train, Rng& drop_rng) const {
    return attend_and_aggregate(encode_image(in), encode_texts(in), train,
                                drop_rng);
  }

  SequenceBatch<T> encode_image(const ModelInput<T>& in) const {
    return encode_regions(region_proj_, in.regions, in.region_mask);
  }

  SequenceBatch<T> encode_texts(const ModelInput<T>& in) const {
    return encode_text(gru_, word_emb_, in.tokens, in.batch(), in.text_len,
                       in.text_lengths);
  }

  // The pair-dependent tail: CLS prepending, cross/self attention stages,
  // and per-modality aggregation over already-encoded width-d sequences.
  Compressed attend_and_aggregate(SequenceBatch<T> img, SequenceBatch<T> txt,
                                  bool train, Rng& drop_rng) const {
    if (cfg_.aggregator == AggregatorKind::kClsToken) {
      img = prepend_cls(img, agg_img_.cls.embedding);
      txt = prepend_cls(txt, agg_txt_.cls.embedding);
    }
    SequenceBatch<T> img_pre = img, txt_pre = txt;
    for (const auto& st : stages_) {
      SequenceBatch<T> xi = cross_attention_block(st.cross_img, img, txt, train, drop_rng);
      SequenceBatch<T> xt = cross_attention_block(st.text_cross(), txt, img, train, drop_rng);
      img = self_attention_block(st.self_img, xi, train, drop_rng);
      txt = self_attention_block(st.self_txt, xt, train, drop_rng);
    }
    const SequenceBatch<T>& cond_img =
        cfg_.condition_scores_on_preattention ? txt_pre : txt;
    const SequenceBatch<T>& cond_txt =
        cfg_.condition_scores_on_preattention ? img_pre : img;
    return {aggregate(agg_img_, img, cond_img),
            aggregate(agg_txt_, txt, cond_txt)};
  }

  // classifier(concat(ff(avg_k(img)), ff(avg_k(txt)))) -> [B, n_answers]
  Tensor<T> vqa_logits(const Compressed& y, bool train, Rng& drop_rng) const {
    if (!head_) throw ContractError("vqa_logits on a retrieval model");
    Tensor<T> yi = combine_k_vqa(y.img);
    Tensor<T> yt = combine_k_vqa(y.txt);
    Tensor<T> fi = position_ff(head_->ff1_img, head_->ff2_img, head_->ln_img,
                               yi, train, drop_rng);
    Tensor<T> ft = position_ff(head_->ff1_txt, head_->ff2_txt, head_->ln_txt,
                               yt, train, drop_rng);
    return head_->classifier(concat<T>({fi, ft}, 1));
  }

  // Pairwise similarities for a batch of pairs (diagonal = positives).
  Tensor<T> retrieval_similarity(const Compressed& y) const {
    return similarity_matrix(y.img, y.txt, !cfg_.retrieval_all_pairs);
  }

 private:
  void init_side(AggregatorSide<T>& side, size_t max_len, Rng& rng) {
    switch (cfg_.aggregator) {
      case AggregatorKind::kScoreAttention:
        side.score = ScoreAttentionParams<T>(cfg_.k, cfg_.d, cfg_.heads, rng);
        break;
      case AggregatorKind::kConv1d:
        side.conv = Conv1dParams<T>(max_len, cfg_.d, rng);
        break;
      case AggregatorKind::kClsToken:
        side.cls = ClsParams<T>(cfg_.d, rng);
        break;
      default:
        break;  // parameter-free
    }
  }

  void collect_side(const AggregatorSide<T>& side, ParamSet<T>& ps,
                    const std::string& name) const {
    switch (cfg_.aggregator) {
      case AggregatorKind::kScoreAttention:
        side.score.collect(ps, name + ".score");
        break;
      case AggregatorKind::kConv1d:
        side.conv.collect(ps, name + ".conv");
        break;
      case AggregatorKind::kClsToken:
        side.cls.collect(ps, name + ".cls");
        break;
      default:
        break;
    }
  }

  Tensor<T> aggregate(const AggregatorSide<T>& side, const SequenceBatch<T>& x,
                      const SequenceBatch<T>& other) const {
    size_t B = x.batch(), d = x.width();
    switch (cfg_.aggregator) {
      case AggregatorKind::kScoreAttention:
        return score_attention_reduce(side.score, x, other);
      case AggregatorKind::kConv1d:
        return reshape(conv1d_reduce(side.conv, x), {B, 1, d});
      case AggregatorKind::kClsToken:
        return reshape(cls_reduce(x), {B, 1, d});
      default:
        return reshape(baseline_reduce(cfg_.aggregator, x), {B, 1, d});
    }
  }

  Tensor<T> position_ff(const Linear<T>& l1, const Linear<T>& l2,
                        const LayerNorm<T>& ln, const Tensor<T>& y, bool train,
                        Rng& rng) const {
    Tensor<T> h = l2(relu(l1(y)));
    return ln(add(y, dropout(h, cfg_.dropout_keep, train, rng)));
  }

  ModelConfig cfg_;
  size_t n_answers_ = 0;
  Tensor<T> word_emb_;
  GruParams<T> gru_;
  Linear<T> region_proj_;
  std::vector<StageParams<T>> stages_;
  AggregatorSide<T> agg_img_, agg_txt_;
  std::optional<VqaHeadParams<T>> head_;
};

// Multi-label BCE over answer classes (targets in [0,1]).
template <typename T>
Tensor<T> vqa_loss(const Tensor<T>& logits, const Tensor<T>& targets) {
  return bce_with_logits(logits, targets);
}

}  // namespace vsa
