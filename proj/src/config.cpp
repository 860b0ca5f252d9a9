#include "vsa/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace vsa {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// strips an inline comment that is not inside a quoted string
std::string strip_comment(const std::string& s) {
  bool quoted = false;
  for (size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') quoted = !quoted;
    if (s[i] == '#' && !quoted) return s.substr(0, i);
  }
  return s;
}

}  // namespace

std::map<std::string, std::string> parse_toml(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line, section;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string body = trim(strip_comment(line));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']')
        throw ParseError("config line " + std::to_string(line_no) +
                         ": unterminated section header");
      section = trim(body.substr(1, body.size() - 2));
      if (section.empty())
        throw ParseError("config line " + std::to_string(line_no) +
                         ": empty section name");
      continue;
    }
    size_t eq = body.find('=');
    if (eq == std::string::npos)
      throw ParseError("config line " + std::to_string(line_no) +
                       ": expected key = value");
    std::string key = trim(body.substr(0, eq));
    std::string val = trim(body.substr(eq + 1));
    if (key.empty() || val.empty())
      throw ParseError("config line " + std::to_string(line_no) +
                       ": empty key or value");
    if (val.size() >= 2 && val.front() == '"' && val.back() == '"')
      val = val.substr(1, val.size() - 2);
    std::string full = section.empty() ? key : section + "." + key;
    if (out.count(full))
      throw ParseError("config line " + std::to_string(line_no) +
                       ": duplicate key '" + full + "'");
    out[full] = val;
  }
  return out;
}

std::map<std::string, std::string> parse_toml_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_toml(ss.str());
}

namespace {

uint64_t to_u64(const std::string& key, const std::string& v) {
  uint64_t x = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("config key '" + key + "': expected an integer, got '" +
                      v + "'");
  return x;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" +
                      v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" +
                    v + "'");
}

}  // namespace

void apply_config_entries(RunConfig& cfg,
                          const std::map<std::string, std::string>& entries) {
  using Setter = std::function<void(RunConfig&, const std::string&,
                                    const std::string&)>;
  static const std::map<std::string, Setter> setters = {
      {"task", [](RunConfig& c, const std::string&, const std::string& v) {
         c.model.task = parse_task(v);
       }},
      {"seed", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.seed = to_u64(k, v);
       }},
      {"out", [](RunConfig& c, const std::string&, const std::string& v) {
         c.out_dir = v;
       }},
      {"precision", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.precision = static_cast<int>(to_u64(k, v));
       }},
      {"eval.folds", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.eval_folds = to_u64(k, v);
       }},
      {"model.d", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.d = to_u64(k, v);
       }},
      {"model.heads", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.heads = to_u64(k, v);
       }},
      {"model.k", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.k = to_u64(k, v);
       }},
      {"model.dropout_keep",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.dropout_keep = to_double(k, v);
       }},
      {"model.aggregator",
       [](RunConfig& c, const std::string&, const std::string& v) {
         c.model.aggregator = parse_aggregator(v);
       }},
      {"model.depth", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.depth = to_u64(k, v);
       }},
      {"model.max_question_len",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.max_question_len = to_u64(k, v);
       }},
      {"model.feature_width",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.feature_width = to_u64(k, v);
       }},
      {"model.word_dim",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.word_dim = to_u64(k, v);
       }},
      {"model.share_cross_attention",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.share_cross_attention = to_bool(k, v);
       }},
      {"model.condition_scores_on_preattention",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.condition_scores_on_preattention = to_bool(k, v);
       }},
      {"model.retrieval_all_pairs",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.retrieval_all_pairs = to_bool(k, v);
       }},
      {"model.finetune_embeddings",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.finetune_embeddings = to_bool(k, v);
       }},
      {"model.embedding_path",
       [](RunConfig& c, const std::string&, const std::string& v) {
         c.model.embedding_path = v;
       }},
      {"model.soft_targets",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.soft_targets = to_bool(k, v);
       }},
      {"train.lr", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.lr = to_double(k, v);
       }},
      {"train.decay_factor",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.decay_factor = to_double(k, v);
       }},
      {"train.decay_every",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.decay_every = to_u64(k, v);
       }},
      {"train.batch", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.batch = to_u64(k, v);
       }},
      {"train.margin", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.margin = to_double(k, v);
       }},
      {"train.clip_norm",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.clip_norm = to_double(k, v);
       }},
      {"train.epochs", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.epochs = to_u64(k, v);
       }},
      {"train.pairwise_sims",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.pairwise_sims = to_bool(k, v);
       }},
      {"data.n_train", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.data.n_train = to_u64(k, v);
       }},
      {"data.n_test", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.data.n_test = to_u64(k, v);
       }},
      {"data.regions", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.data.regions = to_u64(k, v);
       }},
      {"data.caption_len",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.data.caption_len = to_u64(k, v);
       }},
      {"data.feature_width",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.data.feature_width = to_u64(k, v);
       }},
      {"data.vocab_size",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.data.vocab_size = to_u64(k, v);
       }},
      {"data.n_classes",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.data.n_classes = to_u64(k, v);
       }},
      {"data.noise", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.data.noise = to_double(k, v);
       }},
      {"data.distractor_scale",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.data.distractor_scale = to_double(k, v);
       }},
      {"data.distractor_mode",
       [](RunConfig& c, const std::string&, const std::string& v) {
         c.data.distractor_mode = v;
       }},
      {"eval.pairwise",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.eval_pairwise = to_bool(k, v);
       }},
      {"data.marker", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.data.marker = to_double(k, v);
       }},
      {"data.seed", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.data.seed = to_u64(k, v);
       }},
      {"data.dir", [](RunConfig& c, const std::string&, const std::string& v) {
         c.data.dir = v;
       }},
  };
  for (const auto& [key, value] : entries) {
    auto it = setters.find(key);
    if (it == setters.end())
      throw ConfigError("unknown config key '" + key + "'");
    it->second(cfg, key, value);
  }
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::map<std::string, std::string> config_entries(const RunConfig& cfg) {
  std::map<std::string, std::string> e;
  e["task"] = task_name(cfg.model.task);
  e["seed"] = std::to_string(cfg.train.seed);
  e["out"] = cfg.out_dir;
  e["precision"] = std::to_string(cfg.precision);
  e["eval.folds"] = std::to_string(cfg.eval_folds);
  e["eval.pairwise"] = cfg.eval_pairwise ? "true" : "false";
  e["model.d"] = std::to_string(cfg.model.d);
  e["model.heads"] = std::to_string(cfg.model.heads);
  e["model.k"] = std::to_string(cfg.model.k);
  e["model.dropout_keep"] = fmt_double(cfg.model.dropout_keep);
  e["model.aggregator"] = aggregator_name(cfg.model.aggregator);
  e["model.depth"] = std::to_string(cfg.model.depth);
  e["model.max_question_len"] = std::to_string(cfg.model.max_question_len);
  e["model.feature_width"] = std::to_string(cfg.model.feature_width);
  e["model.word_dim"] = std::to_string(cfg.model.word_dim);
  e["model.share_cross_attention"] =
      cfg.model.share_cross_attention ? "true" : "false";
  e["model.condition_scores_on_preattention"] =
      cfg.model.condition_scores_on_preattention ? "true" : "false";
  e["model.retrieval_all_pairs"] =
      cfg.model.retrieval_all_pairs ? "true" : "false";
  e["model.finetune_embeddings"] =
      cfg.model.finetune_embeddings ? "true" : "false";
  e["model.embedding_path"] = cfg.model.embedding_path;
  e["model.soft_targets"] = cfg.model.soft_targets ? "true" : "false";
  e["train.lr"] = fmt_double(cfg.train.lr);
  e["train.decay_factor"] = fmt_double(cfg.train.decay_factor);
  e["train.decay_every"] = std::to_string(cfg.train.decay_every);
  e["train.batch"] = std::to_string(cfg.train.batch);
  e["train.margin"] = fmt_double(cfg.train.margin);
  e["train.clip_norm"] = fmt_double(cfg.train.clip_norm);
  e["train.epochs"] = std::to_string(cfg.train.epochs);
  e["train.pairwise_sims"] = cfg.train.pairwise_sims ? "true" : "false";
  e["data.n_train"] = std::to_string(cfg.data.n_train);
  e["data.n_test"] = std::to_string(cfg.data.n_test);
  e["data.regions"] = std::to_string(cfg.data.regions);
  e["data.caption_len"] = std::to_string(cfg.data.caption_len);
  e["data.feature_width"] = std::to_string(cfg.data.feature_width);
  e["data.vocab_size"] = std::to_string(cfg.data.vocab_size);
  e["data.n_classes"] = std::to_string(cfg.data.n_classes);
  e["data.noise"] = fmt_double(cfg.data.noise);
  e["data.distractor_scale"] = fmt_double(cfg.data.distractor_scale);
  e["data.distractor_mode"] = cfg.data.distractor_mode;
  e["data.marker"] = fmt_double(cfg.data.marker);
  e["data.seed"] = std::to_string(cfg.data.seed);
  e["data.dir"] = cfg.data.dir;
  return e;
}

}  // namespace vsa
