#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace vsa {

// Whitespace tokenization after lowercasing and punctuation stripping.
std::vector<std::string> tokenize(const std::string& text);

// Token vocabulary with reserved pad/unk slots. Indices are dense and the
// build order is deterministic (count descending, then lexicographic).
class Vocabulary {
 public:
  static constexpr int64_t kPad = 0;
  static constexpr int64_t kUnk = 1;

  Vocabulary();

  static Vocabulary build(const std::vector<std::vector<std::string>>& corpus,
                          size_t min_count);
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  int64_t index(const std::string& token) const;  // kUnk when absent
  const std::string& token(int64_t index) const;
  bool contains(const std::string& token) const;
  size_t size() const { return tokens_.size(); }
  // index -> token list including the pad/unk sentinels
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int64_t> index_;
};

// Answer-class vocabulary: answers occurring strictly more than the threshold
// in the training annotations become classes.
class AnswerVocabulary {
 public:
  AnswerVocabulary() = default;

  static AnswerVocabulary build(const std::vector<std::string>& answers,
                                size_t more_than);
  static AnswerVocabulary from_answers(const std::vector<std::string>& answers);

  int64_t index(const std::string& answer) const;  // -1 when absent
  const std::string& answer(int64_t index) const;
  size_t size() const { return answers_.size(); }
  const std::vector<std::string>& answers() const { return answers_; }

 private:
  std::vector<std::string> answers_;
  std::unordered_map<std::string, int64_t> index_;
};

}  // namespace vsa
