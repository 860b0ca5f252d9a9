#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <sstream>

#include "vsa/checks.hpp"
#include "vsa/serialize.hpp"
#include "vsa/training.hpp"

using namespace vsa;
using checks::random_tensor;

TEST_CASE("tensor serialization round-trips bit-exactly") {
  Rng rng(1, RngStream::kTest);
  auto t32 = random_tensor<float>({3, 4, 2}, rng);
  auto t64 = random_tensor<double>({5}, rng);
  std::stringstream ss;
  write_tensor(ss, t32);
  write_tensor(ss, t64);
  auto r32 = read_tensor<float>(ss);
  auto r64 = read_tensor<double>(ss);
  REQUIRE(r32.shape() == t32.shape());
  REQUIRE(r64.shape() == t64.shape());
  for (size_t i = 0; i < t32.size(); ++i) CHECK(r32.data()[i] == t32.data()[i]);
  for (size_t i = 0; i < t64.size(); ++i) CHECK(r64.data()[i] == t64.data()[i]);
}

TEST_CASE("truncated tensor stream raises a parse error") {
  Rng rng(2, RngStream::kTest);
  auto t = random_tensor<float>({4, 4}, rng);
  std::stringstream ss;
  write_tensor(ss, t);
  std::string buf = ss.str();
  std::stringstream cut(buf.substr(0, buf.size() - 7));
  CHECK_THROWS_AS(read_tensor<float>(cut), ParseError);
}

namespace {

RunConfig tiny_cfg(uint64_t seed) {
  RunConfig cfg = RunConfig::desk_defaults();
  cfg.model.task = Task::kVqa;
  cfg.model.d = 16;
  cfg.model.heads = 2;
  cfg.model.word_dim = 8;
  cfg.train.seed = seed;
  cfg.train.epochs = 1;
  cfg.train.batch = 8;
  cfg.data.n_train = 32;
  cfg.data.n_test = 16;
  cfg.data.n_classes = 4;
  cfg.data.vocab_size = 20;
  cfg.data.feature_width = 16;
  cfg.data.regions = 4;
  cfg.data.caption_len = 4;
  return cfg;
}

}  // namespace

TEST_CASE("checkpoint round-trip restores every parameter") {
  RunConfig cfg = tiny_cfg(5);
  Trainer<float> tr(cfg);
  tr.run();
  std::string path = "vsa_test_ckpt.bin";
  save_checkpoint(path, tr.config(), tr.vocab(), tr.answers(),
                  tr.model().parameters());

  Trainer<float> fresh(cfg);  // same config, untrained weights
  std::ifstream is(path, std::ios::binary);
  CheckpointHeader h = read_checkpoint_header(is);
  CHECK(h.config.model.d == 16);
  CHECK(h.vocab_tokens == tr.vocab().tokens());
  ParamSet<float> ps = fresh.model().parameters();
  load_checkpoint_params(is, h, ps);

  ParamSet<float> trained = tr.model().parameters();
  REQUIRE(trained.items.size() == ps.items.size());
  for (size_t i = 0; i < ps.items.size(); ++i) {
    auto& [name, p] = ps.items[i];
    auto& [tname, tp] = trained.items[i];
    CHECK(name == tname);
    for (size_t j = 0; j < p.size(); ++j) CHECK(p.data()[j] == tp.data()[j]);
  }
  std::remove(path.c_str());
}

TEST_CASE("checkpoint with a different architecture is rejected") {
  RunConfig cfg = tiny_cfg(6);
  Trainer<float> tr(cfg);
  std::string path = "vsa_test_ckpt2.bin";
  save_checkpoint(path, tr.config(), tr.vocab(), tr.answers(),
                  tr.model().parameters());

  RunConfig other = cfg;
  other.model.d = 32;
  Trainer<float> wrong(other);
  std::ifstream is(path, std::ios::binary);
  CheckpointHeader h = read_checkpoint_header(is);
  ParamSet<float> ps = wrong.model().parameters();
  CHECK_THROWS_AS(load_checkpoint_params(is, h, ps), ConfigError);
  std::remove(path.c_str());
}

TEST_CASE("corrupted checkpoint raises a clean parse error") {
  std::string path = "vsa_test_ckpt3.bin";
  {
    std::ofstream os(path, std::ios::binary);
    os.put(static_cast<char>(kCheckpointVersion));
    uint32_t len = 1000;  // longer than the file
    os.write(reinterpret_cast<char*>(&len), 4);
    os << "{\"config\":";
  }
  std::ifstream is(path, std::ios::binary);
  CHECK_THROWS_AS(read_checkpoint_header(is), ParseError);
  std::remove(path.c_str());

  std::stringstream bad_version;
  bad_version.put(9);
  CHECK_THROWS_AS(read_checkpoint_header(bad_version), ParseError);
}

TEST_CASE("toml subset: sections, dotted keys, comments, types") {
  std::string text = R"(
# experiment config
task = "retrieval"
seed = 7

[model]
d = 32          # width
aggregator = "score_attention"
share_cross_attention = true

[train]
lr = 0.001
epochs = 3

[data]
dir = "some/path"
)";
  auto entries = parse_toml(text);
  CHECK(entries.at("task") == "retrieval");
  CHECK(entries.at("seed") == "7");
  CHECK(entries.at("model.d") == "32");
  CHECK(entries.at("model.share_cross_attention") == "true");
  CHECK(entries.at("train.lr") == "0.001");
  CHECK(entries.at("data.dir") == "some/path");

  RunConfig cfg = RunConfig::desk_defaults();
  apply_config_entries(cfg, entries);
  CHECK(cfg.model.task == Task::kRetrieval);
  CHECK(cfg.model.d == 32);
  CHECK(cfg.model.share_cross_attention);
  CHECK(cfg.train.lr == 0.001);
  CHECK(cfg.train.epochs == 3);
  CHECK(cfg.data.dir == "some/path");
}

TEST_CASE("config rejects unknown keys and malformed values") {
  RunConfig cfg = RunConfig::desk_defaults();
  CHECK_THROWS_WITH_AS(apply_config_entries(cfg, {{"model.bogus", "1"}}),
                       doctest::Contains("model.bogus"), ConfigError);
  CHECK_THROWS_AS(apply_config_entries(cfg, {{"model.d", "not_a_number"}}),
                  ConfigError);
  CHECK_THROWS_AS(apply_config_entries(cfg, {{"model.aggregator", "bogus"}}),
                  ConfigError);
  CHECK_THROWS_AS(parse_toml("a = 1\na = 2\n"), ParseError);
  CHECK_THROWS_AS(parse_toml("[unterminated\n"), ParseError);
  CHECK_THROWS_AS(parse_toml("novalue\n"), ParseError);
}

TEST_CASE("config validation enforces the documented invariants") {
  RunConfig cfg = RunConfig::desk_defaults();
  cfg.model.d = 30;
  cfg.model.heads = 4;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = RunConfig::desk_defaults();
  cfg.model.task = Task::kRetrieval;
  cfg.train.batch = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = RunConfig::desk_defaults();
  cfg.model.dropout_keep = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = RunConfig::desk_defaults();
  cfg.model.aggregator = AggregatorKind::kMean;
  cfg.model.k = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = RunConfig::desk_defaults();
  cfg.precision = 16;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("config entries round-trip through the parser") {
  RunConfig cfg = RunConfig::desk_defaults();
  cfg.model.task = Task::kRetrieval;
  cfg.model.k = 4;
  cfg.model.aggregator = AggregatorKind::kScoreAttention;
  cfg.train.lr = 0.00007;
  cfg.train.seed = 99;
  cfg.data.noise = 0.3;
  auto entries = config_entries(cfg);
  RunConfig back;
  apply_config_entries(back, entries);
  CHECK(back.model.task == cfg.model.task);
  CHECK(back.model.k == cfg.model.k);
  CHECK(back.train.lr == cfg.train.lr);
  CHECK(back.train.seed == cfg.train.seed);
  CHECK(back.data.noise == cfg.data.noise);
  CHECK(config_entries(back) == entries);
}

TEST_CASE("eval report renders json and an aligned table") {
  EvalReport rep;
  rep.task = "retrieval";
  rep.folds = 5;
  rep.set("r1_text", 70.36);
  rep.set("r5_text", 93.46);
  std::string json = rep.to_json();
  CHECK(json.find("\"task\": \"retrieval\"") != std::string::npos);
  CHECK(json.find("r1_text") != std::string::npos);
  std::string table = rep.to_table();
  CHECK(table.find("70.36") != std::string::npos);
  CHECK(table.find("folds: 5") != std::string::npos);
}
