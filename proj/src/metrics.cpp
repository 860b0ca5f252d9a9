#include "vsa/metrics.hpp"

#include <algorithm>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

namespace vsa {

bool EvalReport::has(const std::string& name) const {
  for (const auto& [n, v] : metrics)
    if (n == name) return true;
  return false;
}

double EvalReport::get(const std::string& name) const {
  for (const auto& [n, v] : metrics)
    if (n == name) return v;
  throw ContractError("EvalReport: no metric named '" + name + "'");
}

void EvalReport::set(const std::string& name, double value) {
  for (auto& [n, v] : metrics)
    if (n == name) {
      v = value;
      return;
    }
  metrics.emplace_back(name, value);
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["task"] = task;
  j["folds"] = folds;
  nlohmann::json m = nlohmann::json::object();
  for (const auto& [n, v] : metrics) m[n] = v;
  j["metrics"] = m;
  return j.dump(2);
}

std::string EvalReport::to_table() const {
  size_t name_w = 6;
  for (const auto& [n, v] : metrics) name_w = std::max(name_w, n.size());
  std::ostringstream os;
  os << "task: " << task << "  (folds: " << folds << ")\n";
  for (const auto& [n, v] : metrics) {
    os << "  " << std::left << std::setw(static_cast<int>(name_w) + 2) << n
       << std::right << std::fixed << std::setprecision(2) << std::setw(7) << v
       << "\n";
  }
  return os.str();
}

double recall_at_k(const std::vector<double>& sim, size_t n_queries,
                   size_t n_targets,
                   const std::vector<std::vector<size_t>>& ground_truth,
                   size_t k) {
  if (sim.size() != n_queries * n_targets)
    throw ContractError("recall_at_k: similarity matrix size mismatch");
  if (k == 0 || k > n_targets)
    throw ContractError("recall_at_k: K must be in [1, n_targets]");
  if (ground_truth.size() != n_queries)
    throw ContractError("recall_at_k: one ground-truth set per query required");
  size_t hits = 0;
  std::vector<size_t> order(n_targets);
  for (size_t q = 0; q < n_queries; ++q) {
    if (ground_truth[q].empty())
      throw ContractError("recall_at_k: empty ground-truth set for query " +
                          std::to_string(q));
    const double* row = sim.data() + q * n_targets;
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      return row[a] != row[b] ? row[a] > row[b] : a < b;
    });
    std::set<size_t> gt(ground_truth[q].begin(), ground_truth[q].end());
    for (size_t r = 0; r < k; ++r)
      if (gt.count(order[r])) {
        ++hits;
        break;
      }
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(n_queries);
}

std::string modal_answer(const std::vector<std::string>& answers) {
  if (answers.empty()) throw ContractError("modal_answer: no answers");
  std::map<std::string, size_t> counts;
  for (const auto& a : answers) ++counts[a];
  std::string best;
  size_t best_n = 0;
  for (const auto& [a, n] : counts) {
    if (n > best_n) {  // map order makes ties resolve lexicographically
      best = a;
      best_n = n;
    }
  }
  return best;
}

std::vector<std::pair<std::string, double>> vqa_accuracy(
    const std::vector<std::string>& predictions,
    const std::vector<VqaAnnotation>& samples) {
  if (predictions.size() != samples.size())
    throw ContractError("vqa_accuracy: prediction/sample count mismatch");
  static const std::set<std::string> kCategories{"yes/no", "number", "other"};
  std::map<std::string, std::pair<size_t, size_t>> per_cat;  // correct, total
  size_t correct = 0;
  for (size_t i = 0; i < samples.size(); ++i) {
    if (!kCategories.count(samples[i].category))
      throw ContractError("vqa_accuracy: unknown category '" +
                          samples[i].category + "'");
    bool ok = predictions[i] == modal_answer(samples[i].answers);
    correct += ok;
    auto& [c, t] = per_cat[samples[i].category];
    c += ok;
    ++t;
  }
  std::vector<std::pair<std::string, double>> out;
  out.emplace_back("all", samples.empty()
                              ? 0.0
                              : 100.0 * static_cast<double>(correct) /
                                    static_cast<double>(samples.size()));
  for (const char* cat : {"yes/no", "number", "other"}) {
    auto it = per_cat.find(cat);
    if (it == per_cat.end()) continue;  // absent, not zero
    out.emplace_back(cat, 100.0 * static_cast<double>(it->second.first) /
                              static_cast<double>(it->second.second));
  }
  return out;
}

EvalReport fold_average(const std::vector<EvalReport>& folds) {
  if (folds.empty()) throw ContractError("fold_average: no folds");
  EvalReport out;
  out.task = folds[0].task;
  out.folds = folds.size();
  for (const auto& [name, v0] : folds[0].metrics) {
    double acc = 0.0;
    for (const auto& f : folds) acc += f.get(name);
    out.metrics.emplace_back(name, acc / static_cast<double>(folds.size()));
  }
  for (const auto& f : folds)
    if (f.metrics.size() != folds[0].metrics.size())
      throw ContractError("fold_average: folds report different metric sets");
  return out;
}

}  // namespace vsa
