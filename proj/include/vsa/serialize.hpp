#pragma once

#include <bit>
#include <fstream>

#include <json.hpp>

#include "vsa/config.hpp"
#include "vsa/nn.hpp"
#include "vsa/vocab.hpp"

namespace vsa {

static_assert(std::endian::native == std::endian::little,
              "serialized tensors are little-endian");

// Tensor wire format: u32 rank, u32 dims[rank], then the flat value buffer in
// the tensor's native float width.
template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  uint32_t rank = static_cast<uint32_t>(t.rank());
  os.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
  for (size_t d : t.shape()) {
    uint32_t v = static_cast<uint32_t>(d);
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  os.write(reinterpret_cast<const char*>(t.data().data()),
           static_cast<std::streamsize>(t.size() * sizeof(T)));
}

template <typename T>
Tensor<T> read_tensor(std::istream& is) {
  uint32_t rank = 0;
  is.read(reinterpret_cast<char*>(&rank), sizeof(rank));
  if (!is) throw ParseError("tensor stream: truncated rank");
  if (rank > 8) throw ParseError("tensor stream: implausible rank");
  Shape shape(rank);
  for (auto& d : shape) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw ParseError("tensor stream: truncated shape");
    d = v;
  }
  std::vector<T> values(numel(shape));
  is.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(values.size() * sizeof(T)));
  if (!is) throw ParseError("tensor stream: truncated data");
  return Tensor<T>::from_vector(std::move(shape), std::move(values));
}

constexpr uint8_t kCheckpointVersion = 1;

struct CheckpointHeader {
  RunConfig config;
  std::vector<std::string> vocab_tokens;
  std::vector<std::string> answers;
  std::vector<std::string> param_names;
};

namespace detail {

inline nlohmann::json header_json(const RunConfig& cfg,
                                  const Vocabulary& vocab,
                                  const AnswerVocabulary& answers,
                                  const std::vector<std::string>& param_names) {
  nlohmann::json j;
  j["config"] = config_entries(cfg);
  j["vocab"] = vocab.tokens();
  j["answers"] = answers.answers();
  j["params"] = param_names;
  return j;
}

}  // namespace detail

// Checkpoint layout: version byte, u32 JSON length, JSON blob (config,
// vocabularies, parameter manifest), then every parameter tensor in
// registration order.
template <typename T>
void save_checkpoint(const std::string& path, const RunConfig& cfg,
                     const Vocabulary& vocab, const AnswerVocabulary& answers,
                     const ParamSet<T>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write checkpoint: " + path);
  std::vector<std::string> names;
  for (const auto& [n, p] : params.items) names.push_back(n);
  std::string blob = detail::header_json(cfg, vocab, answers, names).dump();
  os.put(static_cast<char>(kCheckpointVersion));
  uint32_t len = static_cast<uint32_t>(blob.size());
  os.write(reinterpret_cast<const char*>(&len), sizeof(len));
  os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  for (const auto& [n, p] : params.items) write_tensor(os, p);
}

inline CheckpointHeader read_checkpoint_header(std::istream& is) {
  int version = is.get();
  if (version != kCheckpointVersion)
    throw ParseError("checkpoint: unsupported format version " +
                     std::to_string(version));
  uint32_t len = 0;
  is.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!is) throw ParseError("checkpoint: truncated header");
  std::string blob(len, '\0');
  is.read(blob.data(), len);
  if (!is) throw ParseError("checkpoint: truncated metadata blob");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(blob);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: corrupt metadata: ") + e.what());
  }
  CheckpointHeader h;
  std::map<std::string, std::string> entries;
  for (auto& [k, v] : j.at("config").items())
    entries[k] = v.get<std::string>();
  apply_config_entries(h.config, entries);
  h.vocab_tokens = j.at("vocab").get<std::vector<std::string>>();
  h.answers = j.at("answers").get<std::vector<std::string>>();
  h.param_names = j.at("params").get<std::vector<std::string>>();
  return h;
}

// Reads parameter tensors into an already-constructed model's registered
// parameter set, validating names and shapes.
template <typename T>
void load_checkpoint_params(std::istream& is, const CheckpointHeader& h,
                            ParamSet<T>& params) {
  if (h.param_names.size() != params.items.size())
    throw ConfigError("checkpoint/config mismatch: " +
                      std::to_string(h.param_names.size()) +
                      " stored parameters vs " +
                      std::to_string(params.items.size()) + " in the model");
  for (size_t i = 0; i < params.items.size(); ++i) {
    auto& [name, p] = params.items[i];
    if (h.param_names[i] != name)
      throw ConfigError("checkpoint/config mismatch: parameter '" +
                        h.param_names[i] + "' where '" + name + "' expected");
    Tensor<T> loaded = read_tensor<T>(is);
    if (loaded.shape() != p.shape())
      throw ConfigError("checkpoint/config mismatch: '" + name + "' has shape " +
                        shape_str(loaded.shape()) + ", model expects " +
                        shape_str(p.shape()));
    std::copy(loaded.data().begin(), loaded.data().end(),
              p.data_mut().begin());
  }
}

}  // namespace vsa
