#include "vsa/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "vsa/common.hpp"

namespace vsa {

std::vector<std::string> tokenize(const std::string& text) {
  std::string clean;
  clean.reserve(text.size());
  for (unsigned char c : text) {
    if (std::isalnum(c))
      clean.push_back(static_cast<char>(std::tolower(c)));
    else
      clean.push_back(' ');
  }
  std::vector<std::string> out;
  size_t i = 0;
  while (i < clean.size()) {
    while (i < clean.size() && clean[i] == ' ') ++i;
    size_t j = i;
    while (j < clean.size() && clean[j] != ' ') ++j;
    if (j > i) out.push_back(clean.substr(i, j - i));
    i = j;
  }
  return out;
}

Vocabulary::Vocabulary() {
  tokens_ = {"<pad>", "<unk>"};
  index_["<pad>"] = kPad;
  index_["<unk>"] = kUnk;
}

Vocabulary Vocabulary::build(
    const std::vector<std::vector<std::string>>& corpus, size_t min_count) {
  // std::map keeps candidate enumeration deterministic across runs
  std::map<std::string, size_t> counts;
  for (const auto& seq : corpus)
    for (const auto& tok : seq) ++counts[tok];
  std::vector<std::pair<std::string, size_t>> kept;
  for (const auto& [tok, n] : counts)
    if (n >= min_count) kept.emplace_back(tok, n);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Vocabulary v;
  for (const auto& [tok, n] : kept) {
    v.index_[tok] = static_cast<int64_t>(v.tokens_.size());
    v.tokens_.push_back(tok);
  }
  return v;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  if (tokens.size() < 2 || tokens[0] != "<pad>" || tokens[1] != "<unk>")
    throw ParseError("vocabulary token list must start with <pad>, <unk>");
  Vocabulary v;
  for (size_t i = 2; i < tokens.size(); ++i) {
    v.index_[tokens[i]] = static_cast<int64_t>(v.tokens_.size());
    v.tokens_.push_back(tokens[i]);
  }
  return v;
}

int64_t Vocabulary::index(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int64_t index) const {
  if (index < 0 || static_cast<size_t>(index) >= tokens_.size())
    throw ContractError("vocabulary index " + std::to_string(index) +
                        " out of range");
  return tokens_[static_cast<size_t>(index)];
}

bool Vocabulary::contains(const std::string& token) const {
  return index_.count(token) > 0;
}

AnswerVocabulary AnswerVocabulary::build(const std::vector<std::string>& answers,
                                         size_t more_than) {
  std::map<std::string, size_t> counts;
  for (const auto& a : answers) ++counts[a];
  std::vector<std::pair<std::string, size_t>> kept;
  for (const auto& [a, n] : counts)
    if (n > more_than) kept.emplace_back(a, n);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  AnswerVocabulary v;
  for (const auto& [a, n] : kept) {
    v.index_[a] = static_cast<int64_t>(v.answers_.size());
    v.answers_.push_back(a);
  }
  return v;
}

AnswerVocabulary AnswerVocabulary::from_answers(
    const std::vector<std::string>& answers) {
  AnswerVocabulary v;
  for (const auto& a : answers) {
    v.index_[a] = static_cast<int64_t>(v.answers_.size());
    v.answers_.push_back(a);
  }
  return v;
}

int64_t AnswerVocabulary::index(const std::string& answer) const {
  auto it = index_.find(answer);
  return it == index_.end() ? -1 : it->second;
}

const std::string& AnswerVocabulary::answer(int64_t index) const {
  if (index < 0 || static_cast<size_t>(index) >= answers_.size())
    throw ContractError("answer index " + std::to_string(index) +
                        " out of range");
  return answers_[static_cast<size_t>(index)];
}

}  // namespace vsa
