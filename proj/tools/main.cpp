// Command-line entry point: train / eval / bench / verify / gen-data over the
// visual-semantic aggregation pipeline.
//
// Exit codes: 0 success, 2 config or usage error, 3 numeric divergence,
// 4 verification failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "vsa/serialize.hpp"
#include "vsa/training.hpp"
#include "vsa/verify.hpp"

namespace fs = std::filesystem;
using namespace vsa;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitVerify = 4;

struct FlagBinding {
  CLI::Option* opt = nullptr;
  std::string key;
  std::string value;
};

// Declares the shared config-override flags on a subcommand and returns the
// bindings used to turn explicitly-passed flags into config entries.
std::vector<std::shared_ptr<FlagBinding>> add_config_flags(CLI::App* cmd) {
  static const std::vector<std::pair<std::string, std::string>> kFlags = {
      {"--task", "task"},
      {"--aggregator", "model.aggregator"},
      {"--k", "model.k"},
      {"--d", "model.d"},
      {"--heads", "model.heads"},
      {"--depth", "model.depth"},
      {"--dropout-keep", "model.dropout_keep"},
      {"--max-question-len", "model.max_question_len"},
      {"--word-dim", "model.word_dim"},
      {"--embedding-path", "model.embedding_path"},
      {"--epochs", "train.epochs"},
      {"--batch", "train.batch"},
      {"--lr", "train.lr"},
      {"--margin", "train.margin"},
      {"--clip-norm", "train.clip_norm"},
      {"--n-train", "data.n_train"},
      {"--n-test", "data.n_test"},
      {"--regions", "data.regions"},
      {"--caption-len", "data.caption_len"},
      {"--feature-width", "data.feature_width"},
      {"--vocab-size", "data.vocab_size"},
      {"--n-classes", "data.n_classes"},
      {"--noise", "data.noise"},
      {"--marker", "data.marker"},
      {"--data-dir", "data.dir"},
      {"--folds", "eval.folds"},
  };
  std::vector<std::shared_ptr<FlagBinding>> bindings;
  for (const auto& [flag, key] : kFlags) {
    auto b = std::make_shared<FlagBinding>();
    b->key = key;
    b->opt = cmd->add_option(flag, b->value, "config key " + key);
    bindings.push_back(b);
  }
  return bindings;
}

// desk defaults <- config file <- explicit flags <- --set pairs
RunConfig build_config(const std::string& config_path,
                       const std::vector<std::shared_ptr<FlagBinding>>& bindings,
                       const std::vector<std::string>& sets,
                       const std::string& out_dir, uint64_t seed, bool seed_set,
                       int precision, bool precision_set) {
  RunConfig cfg = RunConfig::desk_defaults();
  if (!config_path.empty())
    apply_config_entries(cfg, parse_toml_file(config_path));
  std::map<std::string, std::string> entries;
  for (const auto& b : bindings)
    if (b->opt->count() > 0) entries[b->key] = b->value;
  for (const auto& s : sets) {
    size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got '" + s + "'");
    entries[s.substr(0, eq)] = s.substr(eq + 1);
  }
  apply_config_entries(cfg, entries);
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  if (seed_set) cfg.train.seed = seed;
  if (precision_set) cfg.precision = precision;
  cfg.validate();
  return cfg;
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write " + path);
  os << contents;
}

template <typename T>
int run_train(const RunConfig& cfg) {
  Trainer<T> trainer(cfg);
  std::cout << "training task=" << task_name(cfg.model.task)
            << " aggregator=" << aggregator_name(cfg.model.aggregator)
            << " k=" << cfg.model.k << " seed=" << cfg.train.seed << "\n";
  TrainResult result = trainer.run();
  fs::create_directories(cfg.out_dir);
  write_file(cfg.out_dir + "/loss.csv", result.loss_csv);
  write_file(cfg.out_dir + "/report.json", result.report.to_json());
  write_file(cfg.out_dir + "/report.txt", result.report.to_table());
  save_checkpoint(cfg.out_dir + "/checkpoint.bin", trainer.config(),
                  trainer.vocab(), trainer.answers(),
                  trainer.model().parameters());
  std::cout << "initial loss " << result.initial_loss << ", final loss "
            << result.final_loss << "\n"
            << result.report.to_table()
            << "artifacts in " << cfg.out_dir << "\n";
  return kExitOk;
}

template <typename T>
int run_eval(const RunConfig& header_cfg, const CheckpointHeader& header,
             std::ifstream& is, const std::string& out_dir) {
  Trainer<T> trainer(header_cfg);
  if (trainer.vocab().tokens() != header.vocab_tokens)
    throw ConfigError("checkpoint/config mismatch: vocabulary differs from "
                      "the one rebuilt from the data configuration");
  if (trainer.answers().answers() != header.answers)
    throw ConfigError("checkpoint/config mismatch: answer vocabulary differs");
  ParamSet<T> ps = trainer.model().parameters();
  load_checkpoint_params(is, header, ps);
  EvalReport rep = trainer.evaluate();
  fs::create_directories(out_dir);
  write_file(out_dir + "/report.json", rep.to_json());
  write_file(out_dir + "/report.txt", rep.to_table());
  std::cout << rep.to_table();
  return kExitOk;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <typename T>
int run_bench(RunConfig cfg, size_t n_seeds, const std::vector<size_t>& ours_k) {
  struct Row {
    std::string label;
    RunConfig cfg;
  };
  std::vector<Row> rows;
  for (auto kind : {AggregatorKind::kMean, AggregatorKind::kMax,
                    AggregatorKind::kLogSumExp, AggregatorKind::kConv1d,
                    AggregatorKind::kClsToken}) {
    RunConfig c = cfg;
    c.model.aggregator = kind;
    c.model.k = 1;
    rows.push_back({aggregator_name(kind), c});
  }
  for (size_t k : ours_k) {
    RunConfig c = cfg;
    c.model.aggregator = AggregatorKind::kScoreAttention;
    c.model.k = k;
    rows.push_back({"score_attention(k=" + std::to_string(k) + ")", c});
  }

  // identical synthetic data for every cell
  uint64_t base_seed = cfg.train.seed;
  uint64_t data_seed = cfg.data.seed != 0 ? cfg.data.seed : base_seed + 1;

  std::vector<std::string> metric_names;
  std::vector<std::vector<double>> table;  // row x metric medians
  for (auto& row : rows) {
    std::map<std::string, std::vector<double>> values;
    for (size_t s = 0; s < n_seeds; ++s) {
      RunConfig cell = row.cfg;
      cell.train.seed = base_seed + s;
      cell.data.seed = data_seed;
      cell.validate();
      Trainer<T> trainer(cell);
      TrainResult res = trainer.run();
      for (const auto& [name, v] : res.report.metrics) values[name].push_back(v);
      std::cout << "bench " << row.label << " seed " << cell.train.seed
                << " done\n";
    }
    if (metric_names.empty())
      for (const auto& [name, vals] : values) metric_names.push_back(name);
    std::vector<double> med;
    for (const auto& name : metric_names) med.push_back(median(values.at(name)));
    table.push_back(std::move(med));
  }

  std::ostringstream os;
  size_t label_w = 12;
  for (const auto& row : rows) label_w = std::max(label_w, row.label.size());
  os << std::left << std::setw(static_cast<int>(label_w) + 2) << "aggregator";
  for (const auto& name : metric_names)
    os << std::right << std::setw(10) << name;
  os << "\n";
  for (size_t r = 0; r < rows.size(); ++r) {
    os << std::left << std::setw(static_cast<int>(label_w) + 2) << rows[r].label;
    for (double v : table[r])
      os << std::right << std::fixed << std::setprecision(2) << std::setw(10)
         << v;
    os << "\n";
  }
  std::string rendered = os.str();
  std::cout << rendered;

  nlohmann::json j;
  j["task"] = task_name(cfg.model.task);
  j["seeds"] = n_seeds;
  j["metrics"] = metric_names;
  nlohmann::json jrows = nlohmann::json::array();
  for (size_t r = 0; r < rows.size(); ++r) {
    nlohmann::json jr;
    jr["aggregator"] = rows[r].label;
    for (size_t m = 0; m < metric_names.size(); ++m)
      jr[metric_names[m]] = table[r][m];
    jrows.push_back(jr);
  }
  j["rows"] = jrows;
  fs::create_directories(cfg.out_dir);
  write_file(cfg.out_dir + "/bench.json", j.dump(2));
  write_file(cfg.out_dir + "/bench.txt", rendered);
  return kExitOk;
}

int run_verify(const std::string& suite) {
  auto t0 = std::chrono::steady_clock::now();
  checks::CheckList results = checks::run_suite(suite);
  auto t1 = std::chrono::steady_clock::now();
  size_t name_w = 8;
  for (const auto& c : results) name_w = std::max(name_w, c.name.size());
  bool ok = true;
  for (const auto& c : results) {
    std::cout << (c.pass ? "[PASS] " : "[FAIL] ") << std::left
              << std::setw(static_cast<int>(name_w) + 2) << c.name << c.detail
              << "\n";
    ok = ok && c.pass;
  }
  double secs = std::chrono::duration<double>(t1 - t0).count();
  std::cout << (ok ? "verification passed" : "verification FAILED") << " ("
            << results.size() << " checks, " << std::fixed
            << std::setprecision(1) << secs << "s)\n";
  return ok ? kExitOk : kExitVerify;
}

int run_gen_data(const RunConfig& cfg) {
  SyntheticData data = generate_synthetic(SyntheticSpec::from_config(cfg));
  fs::create_directories(cfg.out_dir);
  write_dataset_dir(cfg.out_dir, data);
  std::cout << "wrote " << data.train.samples.size() << " train / "
            << data.test.samples.size() << " test samples to " << cfg.out_dir
            << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"visual-semantic aggregation workbench"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  std::string config_path, out_dir;
  uint64_t seed = 0;
  int precision = 32;
  app.add_option("--config", config_path, "TOML config file")
      ->expected(1);
  auto* seed_opt = app.add_option("--seed", seed, "master RNG seed");
  auto* out_opt = app.add_option("--out", out_dir, "output directory");
  auto* prec_opt =
      app.add_option("--precision", precision, "float width: 32 or 64");

  auto* train_cmd = app.add_subcommand("train", "train a model");
  auto train_flags = add_config_flags(train_cmd);
  std::vector<std::string> train_sets;
  train_cmd->add_option("--set", train_sets, "dotted config override key=value");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ckpt_path;
  eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")
      ->required();

  auto* bench_cmd =
      app.add_subcommand("bench", "compare aggregators on identical data");
  auto bench_flags = add_config_flags(bench_cmd);
  std::vector<std::string> bench_sets;
  bench_cmd->add_option("--set", bench_sets, "dotted config override key=value");
  size_t n_seeds = 3;
  bench_cmd->add_option("--seeds", n_seeds, "seeds per cell (median reported)");
  std::vector<size_t> ours_k{1};
  bench_cmd->add_option("--ours-k", ours_k, "k values for the score rows");

  auto* verify_cmd =
      app.add_subcommand("verify", "run correctness suites");
  std::string suite = "all";
  verify_cmd->add_option("suite", suite,
                         "gradients|oracles|invariants|all");

  auto* gen_cmd = app.add_subcommand("gen-data", "write synthetic dataset files");
  auto gen_flags = add_config_flags(gen_cmd);
  std::vector<std::string> gen_sets;
  gen_cmd->add_option("--set", gen_sets, "dotted config override key=value");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (train_cmd->parsed()) {
      RunConfig cfg = build_config(config_path, train_flags, train_sets,
                                   out_dir, seed, seed_opt->count() > 0,
                                   precision, prec_opt->count() > 0);
      return cfg.precision == 64 ? run_train<double>(cfg)
                                 : run_train<float>(cfg);
    }
    if (eval_cmd->parsed()) {
      std::ifstream is(ckpt_path, std::ios::binary);
      if (!is) throw ConfigError("cannot open checkpoint: " + ckpt_path);
      CheckpointHeader header = read_checkpoint_header(is);
      std::string dest = out_opt->count() ? out_dir : header.config.out_dir;
      return header.config.precision == 64
                 ? run_eval<double>(header.config, header, is, dest)
                 : run_eval<float>(header.config, header, is, dest);
    }
    if (bench_cmd->parsed()) {
      RunConfig cfg = build_config(config_path, bench_flags, bench_sets,
                                   out_dir, seed, seed_opt->count() > 0,
                                   precision, prec_opt->count() > 0);
      for (size_t k : ours_k)
        if (k < 1) throw ConfigError("--ours-k values must be >= 1");
      return cfg.precision == 64 ? run_bench<double>(cfg, n_seeds, ours_k)
                                 : run_bench<float>(cfg, n_seeds, ours_k);
    }
    if (verify_cmd->parsed()) return run_verify(suite);
    if (gen_cmd->parsed()) {
      RunConfig cfg = build_config(config_path, gen_flags, gen_sets, out_dir,
                                   seed, seed_opt->count() > 0, precision,
                                   prec_opt->count() > 0);
      return run_gen_data(cfg);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitConfig;
}
