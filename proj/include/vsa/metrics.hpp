#pragma once

#include <string>
#include <vector>

#include "vsa/common.hpp"

namespace vsa {

// Metric table emitted by evaluation: ordered (name, value) pairs, all values
// percentages in [0, 100]. Categories with no samples are absent, not zero.
struct EvalReport {
  std::string task;
  size_t folds = 1;
  std::vector<std::pair<std::string, double>> metrics;

  bool has(const std::string& name) const;
  double get(const std::string& name) const;
  void set(const std::string& name, double value);

  std::string to_json() const;
  std::string to_table() const;
};

// Percentage of queries whose top-K targets (descending similarity, ties
// broken toward the lower index) intersect the query's ground-truth set.
// sim is row-major [n_queries, n_targets].
double recall_at_k(const std::vector<double>& sim, size_t n_queries,
                   size_t n_targets,
                   const std::vector<std::vector<size_t>>& ground_truth,
                   size_t k);

struct VqaAnnotation {
  std::string category;              // yes/no | number | other
  std::vector<std::string> answers;  // the 10 annotator answers
};

// A prediction is correct iff it equals the most frequent annotated answer
// (ties broken lexicographically). Returns overall accuracy plus one entry
// per category that actually occurs.
std::vector<std::pair<std::string, double>> vqa_accuracy(
    const std::vector<std::string>& predictions,
    const std::vector<VqaAnnotation>& samples);

// The most frequent answer, ties broken lexicographically.
std::string modal_answer(const std::vector<std::string>& answers);

EvalReport fold_average(const std::vector<EvalReport>& folds);

}  // namespace vsa
