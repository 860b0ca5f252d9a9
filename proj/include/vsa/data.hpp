#pragma once

#include "vsa/config.hpp"
#include "vsa/metrics.hpp"
#include "vsa/vocab.hpp"

namespace vsa {

struct ImageFeatures {
  std::string id;
  size_t n_regions = 0;
  size_t width = 0;
  std::vector<float> feats;  // n_regions * width, row-major
};

struct Sample {
  size_t image_index = 0;                   // into Dataset::images
  std::vector<std::string> caption_tokens;  // caption or question words
  std::vector<std::string> answers;         // VQA: annotator answers
  std::string category = "other";           // VQA category tag
  int64_t class_id = -1;                    // signature class, -1 if unknown
};

struct Dataset {
  Task task = Task::kRetrieval;
  std::vector<ImageFeatures> images;
  std::vector<Sample> samples;
  bool has_classes = false;

  // generator metadata, used only by oracle checks
  std::vector<size_t> needle_position;             // per sample
  std::vector<std::vector<float>> signatures;      // per class
  std::vector<float> marker;                       // importance marker vector
};

struct SyntheticData {
  Dataset train, test;
};

// Needle-in-haystack construction: every image plants one class signature at
// a random position among same-scale distractors drawn from the other
// classes; every caption names the class once among distractor tokens.
// Matching signatures define the retrieval ground truth; the signature class
// is the VQA answer.
struct SyntheticSpec {
  enum DistractorMode { kSignatureDecoys, kNoiseDirections };

  Task task = Task::kRetrieval;
  size_t n_train = 2000;
  size_t n_test = 500;
  size_t regions = 8;
  size_t caption_len = 8;
  size_t feature_width = 64;
  size_t vocab_size = 100;
  size_t n_classes = 64;
  double noise = 0.25;
  double marker = 0.0;
  double distractor_scale = 1.0;
  DistractorMode distractors = kSignatureDecoys;
  uint64_t seed = 0;

  static SyntheticSpec from_config(const RunConfig& cfg) {
    SyntheticSpec s;
    s.task = cfg.model.task;
    s.n_train = cfg.data.n_train;
    s.n_test = cfg.data.n_test;
    s.regions = cfg.data.regions;
    s.caption_len = cfg.data.caption_len;
    s.feature_width = cfg.data.feature_width;
    s.vocab_size = cfg.data.vocab_size;
    s.n_classes = cfg.data.effective_classes(cfg.model.task);
    s.noise = cfg.data.noise;
    s.marker = cfg.data.effective_marker(cfg.model.task);
    s.distractor_scale = cfg.data.distractor_scale;
    s.distractors = cfg.data.distractor_mode == "noise" ? kNoiseDirections
                                                        : kSignatureDecoys;
    s.seed = cfg.data.seed != 0 ? cfg.data.seed : cfg.train.seed + 1;
    return s;
  }
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

// Region-feature file: one record per image -- u32 id length, id bytes,
// u32 n_regions, u32 width, then n_regions*width little-endian f32.
void write_region_file(const std::string& path,
                       const std::vector<ImageFeatures>& images);
std::vector<ImageFeatures> read_region_file(const std::string& path);

// JSON-lines samples. Retrieval: {image_id, caption [, class]};
// VQA: {image_id, question, answers [, category, class]}.
void write_samples_jsonl(const std::string& path, const Dataset& data);
void read_samples_jsonl(const std::string& path, Dataset& data);

// dir/{train,test}.jsonl + dir/regions_{train,test}.bin
void write_dataset_dir(const std::string& dir, const SyntheticData& data);
SyntheticData load_dataset_dir(Task task, const std::string& dir);

// Ground-truth target sets for retrieval evaluation: same-class samples when
// class ids are known, otherwise the samples of the same image.
std::vector<std::vector<size_t>> retrieval_ground_truth(const Dataset& data);

}  // namespace vsa
