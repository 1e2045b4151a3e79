// pcnet command-line driver: train, detect, decode, ablate, validate-ckpt.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pcnet/io.hpp"
#include "pcnet/numeric.hpp"
#include "pcnet/pipeline.hpp"
#include "pcnet/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pcnet;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct UsageError : Error {
  using Error::Error;
};

// Reads a JSON object as config; nested objects become dotted sections.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool write_description,
                        std::string prefix) const override {
    return CLI::ConfigTOML().to_config(app, default_also, write_description, std::move(prefix));
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      input >> j;
    } catch (const json::exception& e) {
      throw CLI::ConversionError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("JSON config must be an object");
    std::vector<CLI::ConfigItem> out;
    flatten(j, {}, out);
    return out;
  }

 private:
  static std::string scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  static void flatten(const json& obj, const std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& out) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      if (it->is_object()) {
        auto p = parents;
        p.push_back(it.key());
        flatten(*it, p, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = it.key();
      if (it->is_array()) {
        for (const auto& v : *it) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(*it));
      }
      out.push_back(std::move(item));
    }
  }
};

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// The config formatter must be chosen before parsing.
bool wants_json_config(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return ends_with(argv[i + 1], ".json");
    if (a.rfind("--config=", 0) == 0) return ends_with(a, ".json");
  }
  return false;
}

bool seed_flag_given(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--seed" || a.rfind("--seed=", 0) == 0) return true;
  }
  return false;
}

void add_run_options(CLI::App& app, RunConfig& c) {
  app.add_option("--seed", c.seed, "Run seed (PCNET_SEED overrides the config file)");
  app.add_option("--seeds", c.seeds, "Seeds swept by ablate")->delimiter(',');
  app.add_option("--train_samples", c.train_samples, "Training samples (half factual, half hallucinated)");
  app.add_option("--eval_samples", c.eval_samples, "Held-out samples (validation + test)");
  app.add_option("--validation_fraction", c.validation_fraction, "Share of held-out pairs used to calibrate tau");
  app.add_option("--proj_dim", c.proj_dim, "Projection dimension d");
  app.add_option("--hidden_dim", c.hidden_dim, "Bottleneck hidden width (0 = 2 * proj_dim)");
  app.add_option("--depth", c.depth, "Circuit depth");
  app.add_option("--branching", c.branching, "Circuit branching factor");

  app.add_option("--alpha", c.train.alpha, "Generative loss weight");
  app.add_option("--gamma", c.train.gamma, "Contrastive margin");
  app.add_option("--lr", c.train.lr, "Adam learning rate");
  app.add_option("--weight_decay", c.train.weight_decay, "Decoupled weight decay");
  app.add_option("--epochs", c.train.epochs, "Training epochs");
  app.add_option("--batch_size", c.train.batch_size, "Pairs per batch");
  app.add_option("--clip_norm", c.train.clip_norm, "Global gradient norm clip");

  app.add_option("--num_anchors", c.toylm.num_anchors, "Toy LM factual tokens");
  app.add_option("--d_llm", c.toylm.d_llm, "Toy LM hidden width");
  app.add_option("--anchor_scale", c.toylm.anchor_scale, "Toy LM anchor embedding scale");
  app.add_option("--displacement", c.toylm.displacement, "Planted hallucination displacement");
  app.add_option("--recurrence_gain", c.toylm.recurrence_gain, "Frobenius norm of the toy LM recurrence");
  app.add_option("--embedding_noise", c.toylm.embedding_noise, "Toy LM embedding noise");
  app.add_option("--logit_gain", c.toylm.logit_gain, "Factual successor logit gain");
  app.add_option("--shadow_logit_gain", c.toylm.shadow_logit_gain, "Shadow successor logit gain");
  app.add_option("--drift_logit_gain", c.toylm.drift_logit_gain, "Shadow logit gain along the drift direction");

  app.add_option("--answer_len", c.corpus.answer_len, "Gold continuation length");
  app.add_option("--min_prompt_len", c.corpus.min_prompt_len, "Shortest prompt");
  app.add_option("--max_prompt_len", c.corpus.max_prompt_len, "Longest prompt");
  app.add_option("--zipf_exponent", c.corpus.zipf_exponent, "Skew of prompt token frequencies");

  app.add_option("--k", c.k, "Lookahead candidates per step");
  app.add_option("--gate_margin", c.gate_margin, "Intervene when beta >= gate_margin");
  app.add_option("--ungated_beta", c.ungated_beta, "Constant beta used by ungated decoding");
  app.add_option("--decode_prompts", c.decode_prompts, "Prompts evaluated by decode");

  // A repeated scalar flag overrides the earlier one.
  for (CLI::Option* o : app.get_options())
    if (o->get_items_expected_max() == 1) o->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os << text;
}

// Resolved run config as TOML. Values keep the exact text they were given
// with, so reloading the file reproduces the run.
std::string resolved_config(const CLI::App& app, const RunConfig& c) {
  std::ostringstream os;
  for (const CLI::Option* opt : app.get_options()) {
    const std::string name = opt->get_single_name();
    if (name == "help" || name == "config" || name == "out") continue;
    std::vector<std::string> values;
    if (name == "seed") {
      values.push_back(std::to_string(c.seed));
    } else if (opt->count() > 0) {
      values = opt->reduced_results();
    } else if (name == "seeds") {
      for (auto s : c.seeds) values.push_back(std::to_string(s));
    } else {
      values.push_back(opt->get_default_str());
    }
    os << name << " = ";
    if (opt->get_expected_max() > 1) {
      os << '[';
      for (std::size_t i = 0; i < values.size(); ++i) os << (i ? ", " : "") << values[i];
      os << ']';
    } else {
      os << (values.empty() ? std::string() : values.front());
    }
    os << '\n';
  }
  return os.str();
}

json seed_record(const RunConfig& c, const std::string& source) {
  auto stream = [&](SeedStream s) { return derive_seed(c.seed, static_cast<std::uint64_t>(s)); };
  return {{"seed", c.seed},
          {"source", source},
          {"seeds", c.seeds},
          {"derived",
           {{"toylm", c.seed},
            {"circuit", c.seed},
            {"train_shuffle", c.seed},
            {"train_corpus", stream(SeedStream::kTrainCorpus)},
            {"eval_corpus", stream(SeedStream::kEvalCorpus)},
            {"bottleneck", stream(SeedStream::kBottleneck)}}}};
}

ToyLm toy_lm_for(const Checkpoint& ckpt, const RunConfig& c) {
  if (ckpt.toylm) return ToyLm(*ckpt.toylm);
  ToyLmConfig lm = c.toylm;
  lm.seed = c.seed;
  return ToyLm(lm);
}

double parse_tau(const std::string& s) {
  if (s == "inf" || s == "+inf") return kInf;
  if (s == "-inf") return -kInf;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw UsageError("--tau must be a number, inf, or auto (got '" + s + "')");
}

void cmd_train(const RunConfig& c, const fs::path& out) {
  const Experiment e = make_experiment(c);
  const PcNet initial = init_model(c);
  const TrainResult r = train(initial, training_subset(e.train_corpus, c.train_samples), c.train);
  save_checkpoint(out / "initial_checkpoint.json", {initial, e.lm.spec()});
  save_checkpoint(out / "checkpoint.json", {r.model, e.lm.spec()});
  std::ofstream loss(out / "loss.csv", std::ios::binary);
  write_loss_csv(loss, r.history);
  std::ofstream train_corpus(out / "train_corpus.jsonl", std::ios::binary);
  write_corpus_jsonl(train_corpus, e.train_corpus);
  std::ofstream eval_corpus(out / "eval_corpus.jsonl", std::ios::binary);
  write_corpus_jsonl(eval_corpus, e.eval_corpus);
  if (r.diverged) throw Error("training diverged: " + r.error + " (last finite model saved)");
  std::cout << "trained " << r.history.size() << " epochs; final loss " << r.history.back().total_loss << '\n';
}

void cmd_detect(const RunConfig& c, const fs::path& checkpoint, const fs::path& out) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const Experiment e = make_experiment(c, toy_lm_for(ckpt, c));
  const DetectionReport r = evaluate_detection(ckpt.model, e);
  write_text(out / "detection.json", to_json(r).dump(2) + "\n");
  std::cout << "auroc " << r.auroc << " f1 " << r.f1 << " tau " << r.tau << '\n';
}

void cmd_decode(const RunConfig& c, const fs::path& checkpoint, const std::string& mode_name,
                const std::string& tau_arg, const fs::path& out) {
  const bool calibrate = tau_arg == "auto";
  double tau = calibrate ? 0.0 : parse_tau(tau_arg);
  const DecodeMode mode = parse_decode_mode(mode_name);
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const Experiment e = make_experiment(c, toy_lm_for(ckpt, c));
  if (calibrate) tau = evaluate_detection(ckpt.model, e).tau;
  const auto prompts = decode_prompts(e, c.decode_prompts);
  const DecodeReport r = evaluate_decoding(ckpt.model, e.lm, prompts, decode_options(c, mode, tau), c.corpus.answer_len);

  std::ofstream traces(out / ("traces_" + mode_name + ".jsonl"), std::ios::binary);
  if (!traces) throw Error("cannot write traces");
  for (std::size_t i = 0; i < r.outcomes.size(); ++i) {
    for (const GateDecision& d : r.outcomes[i].generation.decisions) {
      json line = to_json(d);
      line["prompt_index"] = i;
      traces << line.dump() << '\n';
    }
  }
  const json summary = summary_json(r);
  write_text(out / ("summary_" + mode_name + ".json"), summary.dump(2) + "\n");
  std::ostringstream csv;
  std::vector<std::string> keys;
  for (auto it = summary.begin(); it != summary.end(); ++it) keys.push_back(it.key());
  for (std::size_t i = 0; i < keys.size(); ++i) csv << (i ? "," : "") << keys[i];
  csv << '\n';
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const json& v = summary.at(keys[i]);
    csv << (i ? "," : "") << (v.is_string() ? v.get<std::string>() : v.dump());
  }
  csv << '\n';
  write_text(out / ("summary_" + mode_name + ".csv"), csv.str());
  std::cout << mode_name << ": accuracy " << r.accuracy << " corruption " << r.corruption_rate << " preservation "
            << r.preservation_rate << " igr " << r.summary.igr << '\n';
}

void cmd_ablate(const RunConfig& c, const std::string& axis_name, const std::vector<std::size_t>& values,
                const fs::path& out) {
  const AblationAxis axis = parse_ablation_axis(axis_name);
  const auto points = run_ablation(c, axis, values);
  std::ostringstream csv;
  csv << "axis,value,seed,auroc,f1,tau\n";
  char buf[160];
  for (const AblationPoint& p : points) {
    std::snprintf(buf, sizeof(buf), "%s,%zu,%llu,%.17g,%.17g,%.17g\n", to_string(p.axis), p.value,
                  static_cast<unsigned long long>(p.seed), p.auroc, p.f1, p.tau);
    csv << buf;
  }
  write_text(out / ("ablation_" + axis_name + ".csv"), csv.str());
  std::cout << points.size() << " sweep points written\n";
}

int cmd_validate(const fs::path& checkpoint) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const auto violations = validate(ckpt.model.circuit);
  for (const Violation& v : violations) std::cout << "node " << v.node << " " << v.kind << ": " << v.message << '\n';
  if (!violations.empty()) {
    std::cerr << violations.size() << " violation(s)\n";
    return kExitRuntime;
  }
  std::cout << "ok: " << ckpt.model.circuit.size() << " nodes, " << ckpt.model.circuit.num_leaves() << " leaves\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probabilistic-circuit hallucination detection and gated lookahead decoding"};
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->always_capture_default();
  if (wants_json_config(argc, argv)) app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "TOML (or .json) config file");
  app.allow_config_extras(CLI::config_extras_mode::error);

  RunConfig config;
  add_run_options(app, config);
  std::string out_dir = "pcnet-run";
  app.add_option("--out", out_dir, "Run output directory");

  std::string checkpoint;
  std::string mode = "gated";
  std::string tau = "auto";
  std::string axis = "train_size";
  std::vector<std::size_t> values;

  auto* train = app.add_subcommand("train", "Build the toy LM, corpus and model, then train");
  auto* detect = app.add_subcommand("detect", "Calibrate tau and report AUROC/F1 on held-out states");
  detect->add_option("--checkpoint", checkpoint, "Checkpoint (default <out>/checkpoint.json)");
  auto* decode = app.add_subcommand("decode", "Run vanilla, gated or ungated lookahead decoding");
  decode->add_option("--checkpoint", checkpoint, "Checkpoint (default <out>/checkpoint.json)");
  decode->add_option("--mode", mode, "vanilla | gated | ungated")->check(CLI::IsMember({"vanilla", "gated", "ungated"}));
  decode->add_option("--tau", tau, "Detection threshold: number, inf, or auto (calibrate)");
  auto* ablate = app.add_subcommand("ablate", "Sweep train_size or proj_dim over all seeds");
  ablate->add_option("--axis", axis, "train_size | proj_dim")->check(CLI::IsMember({"train_size", "proj_dim"}));
  ablate->add_option("--values", values, "Override the sweep grid")->delimiter(',');
  auto* validate_ckpt = app.add_subcommand("validate-ckpt", "Check circuit structure and parameters");
  validate_ckpt->add_option("--checkpoint", checkpoint, "Checkpoint to validate")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  std::string seed_source = "config";
  try {
    if (const char* env = std::getenv("PCNET_SEED"); env != nullptr && !seed_flag_given(argc, argv)) {
      const std::string s = env;
      std::size_t used = 0;
      unsigned long long v = 0;
      try {
        v = std::stoull(s, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (s.empty() || used != s.size()) throw UsageError("PCNET_SEED must be an unsigned integer (got '" + s + "')");
      config.seed = v;
      seed_source = "env:PCNET_SEED";
    }
    config = config.with_seed(config.seed);
    try {
      config.check();
    } catch (const Error& e) {
      throw UsageError(std::string("invalid config: ") + e.what());
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (validate_ckpt->parsed()) return cmd_validate(checkpoint);

    const fs::path out(out_dir);
    ensure_dir(out);
    write_text(out / "config.toml", resolved_config(app, config));
    write_text(out / "seed.json", seed_record(config, seed_source).dump(2) + "\n");
    const fs::path ckpt = checkpoint.empty() ? out / "checkpoint.json" : fs::path(checkpoint);

    if (train->parsed()) cmd_train(config, out);
    if (detect->parsed()) cmd_detect(config, ckpt, out);
    if (decode->parsed()) cmd_decode(config, ckpt, mode, tau, out);
    if (ablate->parsed()) cmd_ablate(config, axis, values, out);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
