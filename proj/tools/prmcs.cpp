// prmcs: command-line front end for caption perturbation, encoder training,
// scoring and robustness/correlation reports.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "prmcs/prmcs.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace prmcs;

namespace {

/// Collects explicitly-given flags so they can be layered over a JSON config.
class Overrides {
 public:
  template <typename T>
  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    app->add_option_function<T>(flag, [this, key](const T& v) { values_[key] = v; }, help);
  }

  void add_list(CLI::App* app, const std::string& flag, const std::string& key,
                const std::string& help) {
    app->add_option_function<std::string>(
        flag,
        [this, key](const std::string& v) {
          json list = json::array();
          std::stringstream ss(v);
          for (std::string item; std::getline(ss, item, ',');) {
            if (!item.empty()) list.push_back(item);
          }
          values_[key] = list;
        },
        help);
  }

  /// defaults <- config file <- flags.
  json resolve(json defaults, const std::string& config_path) const {
    if (!config_path.empty()) {
      json file;
      try {
        file = json::parse(io::read_file(config_path));
      } catch (const json::exception& e) {
        throw ParseError("config " + config_path + ": " + e.what());
      }
      if (!file.is_object()) throw ParseError("config " + config_path + " is not a JSON object");
      defaults.update(file);
    }
    defaults.update(values_);
    return defaults;
  }

 private:
  json values_ = json::object();
};

void log_config(const std::string& command, const json& config) {
  json line;
  line["command"] = command;
  line["config"] = config;
  std::cerr << line.dump() << '\n';
}

std::string require(const json& cfg, const std::string& key) {
  if (!cfg.contains(key) || cfg.at(key).get<std::string>().empty()) {
    throw ParseError("missing required setting '" + key + "'");
  }
  return cfg.at(key).get<std::string>();
}

std::vector<PerturbationKind> kinds_from(const json& list) {
  std::vector<PerturbationKind> kinds;
  for (const auto& name : list) {
    const auto k = parse_kind(name.get<std::string>());
    if (!k) throw ParseError("unknown perturbation kind '" + name.get<std::string>() + "'");
    kinds.push_back(*k);
  }
  return kinds;
}

json kind_names(std::span<const PerturbationKind> kinds) {
  json out = json::array();
  for (auto k : kinds) out.push_back(std::string(kind_name(k)));
  return out;
}

/// Stream for one (record, kind) pair; independent of record order.
RngStream record_stream(std::uint64_t seed, const std::string& id, PerturbationKind kind) {
  RngStream mix(seed ^ fnv1a64(id + '\x1f' + std::string(kind_name(kind))));
  return RngStream(mix.next_u64());
}

// ---------------------------------------------------------------------------

struct PerturbCmd {
  Overrides flags;
  std::string config;
  std::vector<std::string> forced;

  void attach(CLI::App* sub) {
    sub->add_option("--config", config, "JSON config file");
    flags.add<std::string>(sub, "--input", "input", "input JSONL dataset");
    flags.add<std::string>(sub, "--output", "output", "output JSONL dataset");
    flags.add_list(sub, "--kinds", "kinds", "comma-separated perturbation kinds");
    flags.add<double>(sub, "--p", "p", "event (keep, for removal) probability");
    flags.add<std::uint64_t>(sub, "--seed", "seed", "perturbation seed");
    sub->add_option("--force-permutation", forced,
                    "substitution order to apply instead of a random reshuffle (testing)");
  }

  int run() {
    json defaults = {{"input", ""}, {"output", ""}, {"kinds", kind_names(kAllKinds)},
                     {"p", 0.4}, {"seed", 0}};
    json cfg = flags.resolve(defaults, config);
    if (!forced.empty()) cfg["force_permutation"] = forced;
    log_config("perturb", cfg);

    const auto records = load_records(require(cfg, "input"));
    const auto kinds = kinds_from(cfg.at("kinds"));
    const double p = cfg.at("p").get<double>();
    if (!(p >= 0.0 && p <= 1.0)) throw ParseError("p must lie in [0, 1]");
    const auto seed = cfg.at("seed").get<std::uint64_t>();
    std::optional<std::vector<std::string>> order;
    if (cfg.contains("force_permutation")) {
      order = cfg.at("force_permutation").get<std::vector<std::string>>();
    }

    std::vector<CaptionRecord> out;
    for (const auto& rec : records) {
      for (PerturbationKind kind : kinds) {
        RngStream rng = record_stream(seed, rec.id, kind);
        auto forced_here = kind == PerturbationKind::kSubstitution ? order : std::nullopt;
        if (forced_here && forced_here->size() != rec.critical_objects.size()) {
          throw InvalidRecord("record '" + rec.id + "': forced permutation has " +
                              std::to_string(forced_here->size()) + " objects, record has " +
                              std::to_string(rec.critical_objects.size()));
        }
        auto perturbed = perturb_record(rec, kind, p, rng, forced_here);
        perturbed.provenance->seed = seed;
        out.push_back(std::move(perturbed));
      }
    }
    save_records(require(cfg, "output"), out);
    std::cerr << "perturb: wrote " << out.size() << " records\n";
    return 0;
  }
};

struct SynthCmd {
  Overrides flags;
  std::string config;

  void attach(CLI::App* sub) {
    sub->add_option("--config", config, "JSON config file");
    flags.add<std::size_t>(sub, "--n-pairs", "n_pairs", "number of image/caption pairs");
    flags.add<std::size_t>(sub, "--vocab-words", "vocab_words", "lexicon size");
    flags.add<std::size_t>(sub, "--dim", "dim", "embedding dimension");
    flags.add<double>(sub, "--sigma", "sigma", "image noise standard deviation");
    flags.add<std::uint64_t>(sub, "--seed", "seed", "generator seed");
    flags.add<std::string>(sub, "--out-dir", "out_dir", "output directory");
  }

  int run() {
    const SynthOptions d;
    json defaults = {{"n_pairs", d.n_pairs}, {"vocab_words", d.vocab_words}, {"dim", d.dim},
                     {"sigma", d.sigma},     {"seed", d.seed},               {"out_dir", ""}};
    json cfg = flags.resolve(defaults, config);
    log_config("synth", cfg);
    SynthOptions opt;
    opt.n_pairs = cfg.at("n_pairs");
    opt.vocab_words = cfg.at("vocab_words");
    opt.dim = cfg.at("dim");
    opt.sigma = cfg.at("sigma");
    opt.seed = cfg.at("seed");
    const fs::path dir = require(cfg, "out_dir");
    fs::create_directories(dir);
    const auto data = synth_dataset(opt);
    save_matrix(dir / "images.prmc", data.images);
    save_matrix(dir / "teacher.prmc", data.teacher);
    save_records(dir / "captions.jsonl", data.records);
    std::cerr << "synth: wrote " << data.records.size() << " pairs to " << dir.string() << '\n';
    return 0;
  }
};

struct TrainCmd {
  explicit TrainCmd(std::string m) : mode(std::move(m)) {}

  std::string mode;  // distill | pr | few-shot
  Overrides flags;
  std::string config;

  void attach(CLI::App* sub) {
    sub->add_option("--config", config, "JSON config file");
    flags.add<std::string>(sub, "--captions", "captions", "caption JSONL dataset");
    if (mode == "distill") {
      flags.add<std::string>(sub, "--teacher", "teacher", "teacher embeddings (PRMC)");
    } else {
      flags.add<std::string>(sub, "--images", "images", "image embeddings (PRMC)");
    }
    if (mode == "few-shot") {
      flags.add<std::string>(sub, "--split-dir", "split_dir",
                             "directory for adaptation.jsonl / evaluation.jsonl");
    }
    flags.add<std::string>(sub, "--init", "init", "starting checkpoint (PRMP)");
    flags.add<std::string>(sub, "--out", "out", "output checkpoint (PRMP)");
    flags.add<std::string>(sub, "--trace", "trace", "loss trace CSV (default: <out>.trace.csv)");
    flags.add<std::uint64_t>(sub, "--init-seed", "init_seed", "initialization seed (default: seed)");
    flags.add<std::size_t>(sub, "--vocab", "vocab", "hashed vocabulary size");
    flags.add<std::size_t>(sub, "--hidden", "hidden", "hidden width");
    flags.add<std::size_t>(sub, "--out-dim", "out_dim", "output dimension");
    flags.add<double>(sub, "--gate-gain", "gate_gain", "positional gate gain");
    flags.add<double>(sub, "--lr", "lr", "learning rate");
    flags.add<double>(sub, "--beta1", "beta1", "AdamW beta1");
    flags.add<double>(sub, "--beta2", "beta2", "AdamW beta2");
    flags.add<double>(sub, "--eps", "eps", "AdamW epsilon");
    flags.add<double>(sub, "--weight-decay", "weight_decay", "decoupled weight decay");
    flags.add<std::size_t>(sub, "--batch-size", "batch_size", "batch size");
    flags.add<std::size_t>(sub, "--steps", "steps", "optimizer steps");
    flags.add<std::uint64_t>(sub, "--seed", "seed", "training seed");
    flags.add<double>(sub, "--p", "p", "perturbation probability");
    flags.add_list(sub, "--kinds", "kinds", "comma-separated enabled perturbation kinds");
    flags.add<double>(sub, "--lambda1", "lambda1", "weight of the image/original term");
    flags.add<double>(sub, "--lambda2", "lambda2", "weight of the image/perturbed term");
    flags.add<double>(sub, "--lambda3", "lambda3", "weight of the original/perturbed term");
  }

  int run() {
    json defaults = TrainConfig{};
    const EncoderShape shape;
    defaults.update(json{{"captions", ""}, {"out", ""}, {"trace", ""}, {"init", ""},
                         {"vocab", shape.vocab}, {"hidden", shape.hidden},
                         {"out_dim", shape.out_dim}, {"gate_gain", kDefaultGateGain}});
    json cfg = flags.resolve(defaults, config);
    if (!cfg.contains("init_seed")) cfg["init_seed"] = cfg.at("seed");
    log_config("train " + mode, cfg);

    TrainConfig tc = cfg.get<TrainConfig>();
    tc.validate();
    EncoderParams params;
    if (!cfg.at("init").get<std::string>().empty()) {
      params = load_params(cfg.at("init").get<std::string>());
    } else {
      params = init_params({cfg.at("vocab"), cfg.at("hidden"), cfg.at("out_dim")},
                           cfg.at("init_seed"), cfg.at("gate_gain"));
    }
    const auto captions = load_records(require(cfg, "captions"));
    const fs::path out = require(cfg, "out");

    TrainResult result;
    if (mode == "distill") {
      result = train_distill(load_matrix(require(cfg, "teacher")), captions, std::move(params), tc);
    } else if (mode == "pr") {
      result = train_pr(load_matrix(require(cfg, "images")), captions, std::move(params), tc);
    } else {
      auto fs_result =
          train_few_shot(load_matrix(require(cfg, "images")), captions, std::move(params), tc);
      if (cfg.contains("split_dir")) {
        const fs::path dir = cfg.at("split_dir").get<std::string>();
        fs::create_directories(dir);
        save_records(dir / "adaptation.jsonl", fs_result.split.adaptation);
        save_records(dir / "evaluation.jsonl", fs_result.split.evaluation);
      }
      std::cerr << "few-shot: " << fs_result.split.adaptation.size() << " adaptation / "
                << fs_result.split.evaluation.size() << " evaluation records\n";
      result = std::move(fs_result.training);
    }

    save_params(out, result.params);
    fs::path trace = cfg.at("trace").get<std::string>();
    if (trace.empty()) trace = fs::path(out.string() + ".trace.csv");
    io::write_file_atomic(trace, trace_csv(result.trace));
    if (result.trace.empty()) {
      std::cout << "no steps run; checkpoint written to " << out.string() << '\n';
    } else {
      const auto& last = result.trace.back().loss;
      std::printf("step %zu total %.6g clip %.6g l1 %.6g l2 %.6g l3 %.6g\n",
                  result.trace.back().step, last.total, last.clip, last.l1, last.l2, last.l3);
    }
    return 0;
  }
};

struct ScoreCmd {
  Overrides flags;
  std::string config;

  void attach(CLI::App* sub) {
    sub->add_option("--config", config, "JSON config file");
    flags.add<std::string>(sub, "--images", "images", "image embeddings (PRMC)");
    flags.add<std::string>(sub, "--params", "params", "encoder checkpoint (PRMP)");
    flags.add<std::string>(sub, "--captions", "captions", "caption JSONL (original or perturbed)");
    flags.add<std::string>(sub, "--out", "out", "output scores CSV");
    flags.add<double>(sub, "--w", "w", "score weight");
  }

  int run() {
    json cfg = flags.resolve({{"w", MetricConfig{}.w}}, config);
    log_config("score", cfg);
    const auto images = load_matrix(require(cfg, "images"));
    const auto params = load_params(require(cfg, "params"));
    const auto records = load_records(require(cfg, "captions"), false);
    const auto rows = score_dataset(images, params, records, MetricConfig{cfg.at("w")});
    io::write_file_atomic(require(cfg, "out"), scores_csv(rows));
    std::cerr << "score: wrote " << rows.size() << " rows\n";
    return 0;
  }
};

struct EvalDropCmd {
  Overrides flags;
  std::string config;

  void attach(CLI::App* sub) {
    sub->add_option("--config", config, "JSON config file");
    flags.add<std::string>(sub, "--original", "original", "scores CSV of original captions");
    flags.add<std::string>(sub, "--perturbed", "perturbed", "scores CSV of perturbed captions");
    flags.add<std::string>(sub, "--json", "json", "report JSON output");
    flags.add<std::string>(sub, "--table", "table", "report table output (default: stdout)");
  }

  int run() {
    json cfg = flags.resolve(json::object(), config);
    log_config("eval drop", cfg);
    const auto original = parse_scores_csv(io::read_file(require(cfg, "original")));
    const auto perturbed = parse_scores_csv(io::read_file(require(cfg, "perturbed")));
    const auto report = drop_report(original, perturbed);
    const auto table = drop_report_table(report);
    if (cfg.contains("json")) {
      io::write_file_atomic(cfg.at("json").get<std::string>(), drop_report_json(report).dump(2) + "\n");
    }
    if (cfg.contains("table")) {
      io::write_file_atomic(cfg.at("table").get<std::string>(), table);
    } else {
      std::cout << table;
    }
    return 0;
  }
};

struct EvalCorrCmd {
  Overrides flags;
  std::string config;

  void attach(CLI::App* sub) {
    sub->add_option("--config", config, "JSON config file");
    flags.add<std::string>(sub, "--pairs", "pairs", "CSV with header x,y");
    flags.add_list(sub, "--x", "x", "comma-separated metric scores");
    flags.add_list(sub, "--y", "y", "comma-separated human ratings");
    flags.add<std::string>(sub, "--out", "out", "result JSON (default: stdout)");
  }

  static std::vector<double> numbers(const json& list, const std::string& what) {
    std::vector<double> out;
    for (const auto& item : list) {
      try {
        std::size_t used = 0;
        const auto s = item.is_string() ? item.get<std::string>() : item.dump();
        out.push_back(std::stod(s, &used));
        if (used != s.size()) throw std::invalid_argument(s);
      } catch (const std::logic_error&) {
        throw ParseError("bad number in " + what + ": " + item.dump());
      }
    }
    return out;
  }

  static RatingPairs read_pairs_csv(const std::string& path) {
    RatingPairs pairs;
    std::stringstream ss(io::read_file(path));
    std::size_t line_no = 0;
    for (std::string line; std::getline(ss, line);) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || (line_no == 1 && line.find_first_of("0123456789") != 0 &&
                           line.front() != '-' && line.front() != '.')) {
        continue;
      }
      const auto comma = line.find(',');
      if (comma == std::string::npos) {
        throw ParseError(path + " line " + std::to_string(line_no) + ": expected x,y");
      }
      const auto values = numbers(json{line.substr(0, comma), line.substr(comma + 1)},
                                  path + " line " + std::to_string(line_no));
      pairs.x.push_back(values[0]);
      pairs.y.push_back(values[1]);
    }
    return pairs;
  }

  int run() {
    json cfg = flags.resolve(json::object(), config);
    log_config("eval corr", cfg);
    RatingPairs pairs;
    if (cfg.contains("pairs")) {
      pairs = read_pairs_csv(cfg.at("pairs").get<std::string>());
    } else if (cfg.contains("x") && cfg.contains("y")) {
      pairs.x = numbers(cfg.at("x"), "x");
      pairs.y = numbers(cfg.at("y"), "y");
    } else {
      throw ParseError("eval corr needs --pairs or both --x and --y");
    }
    nlohmann::ordered_json result;
    result["tau_c"] = kendall_tau_c(pairs);
    result["pearson"] = pearson(pairs);
    result["n"] = pairs.x.size();
    const std::string text = result.dump() + "\n";
    if (cfg.contains("out")) {
      io::write_file_atomic(cfg.at("out").get<std::string>(), text);
    } else {
      std::cout << text;
    }
    return 0;
  }
};

struct GradCheckCmd {
  Overrides flags;
  std::string config;

  void attach(CLI::App* sub) {
    sub->add_option("--config", config, "JSON config file");
    flags.add<std::uint64_t>(sub, "--seed", "seed", "seed for data, weights and sampling");
    flags.add<std::size_t>(sub, "--batch-size", "batch_size", "triplets per batch");
    flags.add<double>(sub, "--step", "h", "central-difference step");
    flags.add<double>(sub, "--tolerance", "tolerance", "maximum accepted relative error");
    flags.add<std::size_t>(sub, "--vocab", "vocab", "hashed vocabulary size");
    flags.add<std::size_t>(sub, "--hidden", "hidden", "hidden width");
    flags.add<std::size_t>(sub, "--out-dim", "out_dim", "output dimension");
    flags.add<double>(sub, "--lambda1", "lambda1", "weight of the image/original term");
    flags.add<double>(sub, "--lambda2", "lambda2", "weight of the image/perturbed term");
    flags.add<double>(sub, "--lambda3", "lambda3", "weight of the original/perturbed term");
  }

  int run() {
    const EncoderShape shape;
    const LossWeights w;
    json cfg = flags.resolve({{"seed", 0}, {"batch_size", 8}, {"h", 1e-5}, {"tolerance", 1e-4},
                              {"vocab", shape.vocab}, {"hidden", shape.hidden},
                              {"out_dim", shape.out_dim}, {"lambda1", w.l1},
                              {"lambda2", w.l2}, {"lambda3", w.l3}},
                             config);
    log_config("gradcheck", cfg);
    const std::uint64_t seed = cfg.at("seed");
    const std::size_t batch_size = cfg.at("batch_size");
    if (batch_size < 1) throw ParseError("batch_size must be >= 1");
    SynthOptions opt;
    opt.n_pairs = batch_size;
    opt.dim = cfg.at("out_dim");
    opt.seed = seed;
    const auto data = synth_dataset(opt);
    const auto params = init_params({cfg.at("vocab"), cfg.at("hidden"), cfg.at("out_dim")}, seed);
    RngStream rng(seed ^ 0x5eedULL);
    std::vector<std::size_t> idx(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) idx[i] = i;
    const auto kind = kAllKinds[rng.below(kAllKinds.size())];
    const auto batch = make_triplet_batch(data.images, data.records, idx, kind, 0.4, rng);
    const LossWeights weights{cfg.at("lambda1"), cfg.at("lambda2"), cfg.at("lambda3")};
    const auto report = finite_diff_check(batch, params, weights, cfg.at("h"), seed);
    nlohmann::ordered_json out;
    out["max_rel_error"] = report.max_rel_error;
    out["checked"] = report.checked;
    out["skipped_kinks"] = report.skipped_kinks;
    out["worst_block"] = std::string(kBlockNames[report.worst.block]);
    out["worst_index"] = report.worst.index;
    std::cout << out.dump() << '\n';
    return report.max_rel_error < cfg.at("tolerance").get<double>() ? 0 : 1;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Perturbation-robust multilingual caption scoring toolkit"};
  app.require_subcommand(1);

  PerturbCmd perturb;
  auto* perturb_app = app.add_subcommand("perturb", "write perturbed copies of a caption dataset");
  perturb.attach(perturb_app);
  SynthCmd synth;
  auto* synth_app = app.add_subcommand("synth", "generate a synthetic image/caption dataset");
  synth.attach(synth_app);

  auto* train = app.add_subcommand("train", "train the text encoder");
  train->require_subcommand(1);
  TrainCmd distill{"distill"}, pr{"pr"}, few_shot{"few-shot"};
  auto* distill_app = train->add_subcommand("distill", "teacher-embedding distillation");
  distill.attach(distill_app);
  auto* pr_app = train->add_subcommand("pr", "perturbation-robust fine-tuning");
  pr.attach(pr_app);
  auto* few_shot_app = train->add_subcommand("few-shot", "fine-tuning on a 1:9 adaptation split");
  few_shot.attach(few_shot_app);

  ScoreCmd score;
  auto* score_app = app.add_subcommand("score", "score captions against image embeddings");
  score.attach(score_app);

  auto* eval = app.add_subcommand("eval", "robustness and correlation reports");
  eval->require_subcommand(1);
  EvalDropCmd drop;
  auto* drop_app = eval->add_subcommand("drop", "score-drop report");
  drop.attach(drop_app);
  EvalCorrCmd corr;
  auto* corr_app = eval->add_subcommand("corr", "Kendall tau-c and Pearson correlation");
  corr.attach(corr_app);

  GradCheckCmd gradcheck;
  auto* gradcheck_app = app.add_subcommand("gradcheck", "finite-difference gradient check");
  gradcheck.attach(gradcheck_app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help or the usage error
    return code == 0 ? 0 : static_cast<int>(ExitCode::kUsage);
  }

  try {
    if (perturb_app->parsed()) return perturb.run();
    if (synth_app->parsed()) return synth.run();
    if (distill_app->parsed()) return distill.run();
    if (pr_app->parsed()) return pr.run();
    if (few_shot_app->parsed()) return few_shot.run();
    if (score_app->parsed()) return score.run();
    if (drop_app->parsed()) return drop.run();
    if (corr_app->parsed()) return corr.run();
    if (gradcheck_app->parsed()) return gradcheck.run();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: ParseError: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kInputParse);
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kInputParse);
  }
  return static_cast<int>(ExitCode::kUsage);
}
