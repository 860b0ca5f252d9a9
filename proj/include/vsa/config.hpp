#pragma once

#include <map>
#include <string>

#include "vsa/aggregation.hpp"

namespace vsa {

enum class Task { kVqa, kRetrieval };

inline const char* task_name(Task t) {
  return t == Task::kVqa ? "vqa" : "retrieval";
}

inline Task parse_task(const std::string& s) {
  if (s == "vqa") return Task::kVqa;
  if (s == "retrieval") return Task::kRetrieval;
  throw ConfigError("unknown task '" + s + "' (expected vqa|retrieval)");
}

// Architectural hyperparameters. Struct defaults are the full-scale values;
// desk_defaults() is the synthetic-experiment profile the CLI starts from.
struct ModelConfig {
  size_t d = 512;
  size_t heads = 8;
  size_t k = 1;
  double dropout_keep = 0.9;
  AggregatorKind aggregator = AggregatorKind::kScoreAttention;
  Task task = Task::kVqa;
  size_t depth = 1;
  size_t max_question_len = 14;
  size_t feature_width = 2048;  // region feature input width
  size_t word_dim = 300;
  bool share_cross_attention = false;
  // score-attention conditioning side: post-attention features by default
  bool condition_scores_on_preattention = false;
  // retrieval k-combination: matched slots by default, k*k pairs if set
  bool retrieval_all_pairs = false;
  bool finetune_embeddings = true;
  std::string embedding_path;  // empty: learned embeddings
  bool soft_targets = true;    // VQA loss targets (metric always uses the mode)

  static ModelConfig desk_defaults() {
    ModelConfig c;
    c.d = 32;
    c.heads = 4;
    c.feature_width = 64;
    c.word_dim = 32;
    return c;
  }

  void validate() const {
    if (d == 0 || heads == 0 || d % heads != 0)
      throw ConfigError("model width " + std::to_string(d) +
                        " must be a positive multiple of heads " +
                        std::to_string(heads));
    if (k < 1) throw ConfigError("k must be >= 1");
    if (aggregator != AggregatorKind::kScoreAttention && k != 1)
      throw ConfigError("k > 1 is only meaningful for score_attention");
    if (dropout_keep <= 0.0 || dropout_keep > 1.0)
      throw ConfigError("dropout_keep must be in (0, 1]");
    if (depth < 1) throw ConfigError("depth must be >= 1");
  }
};

struct TrainConfig {
  double lr = 0.0;  // 0: task default (vqa 0.0005, retrieval 0.00007)
  double decay_factor = 10.0;
  size_t decay_every = 10;
  size_t batch = 64;
  double margin = 0.2;
  double clip_norm = 2.0;  // applied to retrieval runs only
  size_t epochs = 30;
  uint64_t seed = 0;
  // retrieval in-batch similarities through the pair-conditioned pipeline
  // (matches S(I,T) semantics); false falls back to the cheap broadcast
  // construction over per-sample compressed vectors
  bool pairwise_sims = true;

  static TrainConfig desk_defaults() {
    TrainConfig c;
    c.batch = 8;
    c.lr = 0.0005;
    c.decay_every = 20;
    return c;
  }

  double effective_lr(Task task) const {
    if (lr > 0.0) return lr;
    return task == Task::kVqa ? 0.0005 : 0.00007;
  }

  void validate(Task task) const {
    if (lr < 0.0) throw ConfigError("lr must be > 0");
    if (decay_factor <= 0.0) throw ConfigError("decay_factor must be > 0");
    if (decay_every == 0) throw ConfigError("decay_every must be >= 1");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (task == Task::kRetrieval && batch < 2)
      throw ConfigError("retrieval needs batch >= 2 (triplet negatives)");
    if (margin < 0.0) throw ConfigError("margin must be >= 0");
    if (clip_norm <= 0.0) throw ConfigError("clip_norm must be > 0");
  }
};

// Synthetic needle-in-haystack generator spec, or a directory of dataset
// files when `dir` is set.
struct DataConfig {
  size_t n_train = 2000;
  size_t n_test = 500;
  size_t regions = 8;        // R
  size_t caption_len = 8;    // L
  size_t feature_width = 64;
  size_t vocab_size = 100;
  size_t n_classes = 0;      // 0: task default (retrieval 64, vqa 8)
  double noise = 0.25;       // needle jitter scale
  double marker = -1.0;      // needle marker strength; <0: task default
  double distractor_scale = 1.0;  // distractor norm relative to signatures
  // "signatures": distractor regions carry other classes' signatures;
  // "noise": norm-matched random directions
  std::string distractor_mode = "signatures";
  uint64_t seed = 0;         // 0: derived from the run seed
  std::string dir;

  size_t effective_classes(Task) const { return n_classes > 0 ? n_classes : 8; }
  // the marker tags the needle position; with signature decoys it is what
  // makes the planted position observable at all
  double effective_marker(Task) const { return marker >= 0.0 ? marker : 1.0; }

  void validate() const {
    if (distractor_mode != "signatures" && distractor_mode != "noise")
      throw ConfigError("data.distractor_mode must be signatures|noise");
    if (n_train == 0 || n_test == 0)
      throw ConfigError("dataset sizes must be positive");
    if (regions == 0 || caption_len == 0)
      throw ConfigError("regions and caption_len must be positive");
    if (feature_width == 0) throw ConfigError("feature_width must be positive");
    if (noise < 0.0) throw ConfigError("noise must be >= 0");
  }
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  std::string out_dir = "out";
  int precision = 32;
  size_t eval_folds = 1;
  // retrieval eval scores candidate pairs through the pair-conditioned
  // pipeline; the cheap broadcast construction is available for ablation
  bool eval_pairwise = true;

  static RunConfig desk_defaults() {
    RunConfig c;
    c.model = ModelConfig::desk_defaults();
    c.train = TrainConfig::desk_defaults();
    return c;
  }

  void validate() const {
    model.validate();
    train.validate(model.task);
    data.validate();
    if (precision != 32 && precision != 64)
      throw ConfigError("precision must be 32 or 64");
    if (eval_folds == 0) throw ConfigError("eval folds must be >= 1");
  }
};

// Minimal TOML subset: comments, [sections], dotted keys, strings, booleans,
// integers, floats. Returns a flat dotted-key -> raw-value map.
std::map<std::string, std::string> parse_toml(const std::string& text);
std::map<std::string, std::string> parse_toml_file(const std::string& path);

// Applies dotted-path keys onto a RunConfig; every key must be known.
void apply_config_entries(RunConfig& cfg,
                          const std::map<std::string, std::string>& entries);

// Full dotted-key snapshot of a RunConfig; round-trips through
// apply_config_entries.
std::map<std::string, std::string> config_entries(const RunConfig& cfg);

}  // namespace vsa
