#include "pcnet/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "pcnet/numeric.hpp"
#include "pcnet/rng.hpp"

namespace pcnet {

using nlohmann::json;

void RunConfig::check() const {
  train.check();
  if (train_samples < 2 || train_samples % 2 != 0) throw Error("train_samples must be an even number >= 2");
  if (eval_samples < 4 || eval_samples % 2 != 0) throw Error("eval_samples must be an even number >= 4");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw Error("validation_fraction must lie in (0, 1)");
  if (proj_dim < 2) throw Error("proj_dim must be at least 2");
  if (resolved_hidden_dim() < proj_dim) throw Error("hidden_dim must be >= proj_dim");
  if (depth < 1) throw Error("depth must be at least 1");
  if (branching < 2) throw Error("branching must be at least 2");
  if (k < 1) throw Error("k must be at least 1");
  if (!(gate_margin >= 0.0 && gate_margin <= 1.0)) throw Error("gate_margin must lie in [0, 1]");
  if (!(ungated_beta > 0.0)) throw Error("ungated_beta must be positive");
}

RunConfig RunConfig::with_seed(std::uint64_t s) const {
  RunConfig c = *this;
  c.seed = s;
  c.train.seed = s;
  c.toylm.seed = s;
  return c;
}

Experiment make_experiment(const RunConfig& config) {
  ToyLmConfig lm_config = config.toylm;
  lm_config.seed = config.seed;
  return make_experiment(config, ToyLm(lm_config));
}

Experiment make_experiment(const RunConfig& config, ToyLm lm) {
  config.check();
  CorpusOptions corpus = config.corpus;
  corpus.k = config.k;
  Experiment e{std::move(lm), {}, {}, 0};
  e.train_corpus = build_planted_corpus(e.lm, config.train_samples,
                                        derive_seed(config.seed, static_cast<std::uint64_t>(SeedStream::kTrainCorpus)),
                                        corpus);
  e.eval_corpus = build_planted_corpus(e.lm, config.eval_samples,
                                       derive_seed(config.seed, static_cast<std::uint64_t>(SeedStream::kEvalCorpus)),
                                       corpus);
  const std::size_t pairs = config.eval_samples / 2;
  e.validation_pairs = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(config.validation_fraction * static_cast<double>(pairs))), 1, pairs - 1);
  return e;
}

PcNet init_model(const RunConfig& config) {
  PcNet model;
  model.circuit = build_random_circuit(config.proj_dim, config.depth, config.branching, config.seed);
  model.bottleneck =
      init_bottleneck(config.toylm.d_llm, config.resolved_hidden_dim(), config.proj_dim,
                      derive_seed(config.seed, static_cast<std::uint64_t>(SeedStream::kBottleneck)));
  return model;
}

PairedBatch training_subset(const PlantedCorpus& corpus, std::size_t n) {
  const std::size_t pairs = std::min(n / 2, corpus.states.positives.size());
  PairedBatch out;
  out.positives.assign(corpus.states.positives.begin(), corpus.states.positives.begin() + pairs);
  out.negatives.assign(corpus.states.negatives.begin(), corpus.states.negatives.begin() + pairs);
  return out;
}

DetectionReport evaluate_detection(const PcNet& model, const Experiment& experiment) {
  const PairedBatch& states = experiment.eval_corpus.states;
  DetectionReport r;
  for (std::size_t i = 0; i < states.positives.size(); ++i) {
    auto& bucket = i < experiment.validation_pairs ? r.validation : r.test;
    bucket.push_back({nll_score(model, states.positives[i]), Label::kFactual});
    bucket.push_back({nll_score(model, states.negatives[i]), Label::kHallucinated});
  }
  const Threshold t = calibrate_threshold(r.validation);
  r.tau = t.tau;
  r.validation_f1 = t.f1;
  r.auroc = auroc(r.test);
  r.f1 = f1_at(r.test, r.tau);
  for (const ScoredSample& s : r.test) (s.label == Label::kHallucinated ? r.n_pos : r.n_neg) += 1;
  return r;
}

json to_json(const DetectionReport& r) {
  auto samples = [](const std::vector<ScoredSample>& v, const char* split) {
    json out = json::array();
    for (const ScoredSample& s : v) out.push_back({{"split", split}, {"nll", s.nll}, {"label", static_cast<int>(s.label)}});
    return out;
  };
  json per_sample = samples(r.validation, "validation");
  for (auto& s : samples(r.test, "test")) per_sample.push_back(std::move(s));
  return {{"auroc", r.auroc},         {"f1", r.f1},   {"tau", r.tau},
          {"validation_f1", r.validation_f1}, {"n_pos", r.n_pos}, {"n_neg", r.n_neg},
          {"per_sample", std::move(per_sample)}};
}

std::vector<PlantedPrompt> decode_prompts(const Experiment& experiment, std::size_t limit) {
  const auto& prompts = experiment.eval_corpus.prompts;
  std::vector<PlantedPrompt> out;
  for (std::size_t i = 2 * experiment.validation_pairs; i < prompts.size() && out.size() < limit; ++i)
    out.push_back(prompts[i]);
  return out;
}

DecodeOptions decode_options(const RunConfig& config, DecodeMode mode, double tau) {
  DecodeOptions o;
  o.mode = mode;
  o.tau = tau;
  o.k = config.k;
  o.gate_margin = config.gate_margin;
  o.forced_beta = config.ungated_beta;
  return o;
}

DecodeReport evaluate_decoding(const PcNet& model, const LanguageModel& lm, std::span<const PlantedPrompt> prompts,
                               const DecodeOptions& options, std::size_t max_tokens) {
  DecodeReport r;
  r.mode = options.mode;
  r.tau = options.tau;
  DecodeOptions vanilla = options;
  vanilla.mode = DecodeMode::kVanilla;
  EvalStats stats;
  std::size_t correct = 0;
  std::size_t kept = 0;
  std::vector<Generation> generations;
  for (const PlantedPrompt& p : prompts) {
    PromptOutcome o;
    o.generation = generate(lm, p.prompt, model, options, max_tokens, &stats);
    o.correct = o.generation.tokens == p.gold;
    if (options.mode == DecodeMode::kVanilla) {
      o.vanilla_correct = o.correct;
    } else {
      o.vanilla_correct = generate(lm, p.prompt, model, vanilla, max_tokens).tokens == p.gold;
    }
    correct += o.correct ? 1 : 0;
    if (o.vanilla_correct) {
      ++r.vanilla_correct;
      kept += o.correct ? 1 : 0;
    }
    generations.push_back(o.generation);
    r.outcomes.push_back(std::move(o));
  }
  r.summary = summarize(generations);
  r.circuit_passes = stats.passes;
  if (!prompts.empty()) r.accuracy = static_cast<double>(correct) / static_cast<double>(prompts.size());
  if (r.vanilla_correct > 0) {
    r.preservation_rate = static_cast<double>(kept) / static_cast<double>(r.vanilla_correct);
    r.corruption_rate = 1.0 - r.preservation_rate;
  }
  return r;
}

json summary_json(const DecodeReport& r) {
  return {{"mode", to_string(r.mode)},
          {"tau", std::isfinite(r.tau) ? json(r.tau) : json(r.tau > 0 ? "inf" : "-inf")},
          {"generations", r.summary.generations},
          {"tokens", r.summary.tokens},
          {"igr", r.summary.igr},
          {"token_intervention_rate", r.summary.token_intervention_rate},
          {"accuracy", r.accuracy},
          {"vanilla_correct", r.vanilla_correct},
          {"corruption_rate", r.corruption_rate},
          {"preservation_rate", r.preservation_rate},
          {"circuit_passes", r.circuit_passes}};
}

RunResult run_train_and_detect(const RunConfig& config) {
  RunResult r;
  r.config = config;
  const Experiment experiment = make_experiment(config);
  r.initial = init_model(config);
  r.training = train(r.initial, training_subset(experiment.train_corpus, config.train_samples), config.train);
  if (r.training.diverged) throw Error("training diverged: " + r.training.error);
  r.detection = evaluate_detection(r.training.model, experiment);
  return r;
}

AblationAxis parse_ablation_axis(const std::string& name) {
  if (name == "train_size") return AblationAxis::kTrainSize;
  if (name == "proj_dim") return AblationAxis::kProjDim;
  throw Error("unknown ablation axis '" + name + "' (expected train_size or proj_dim)");
}

const char* to_string(AblationAxis axis) {
  return axis == AblationAxis::kTrainSize ? "train_size" : "proj_dim";
}

std::vector<std::size_t> ablation_grid(AblationAxis axis) {
  if (axis == AblationAxis::kTrainSize) return {50, 100, 250, 500, 750, 1000};
  return {32, 64, 128, 256, 512};
}

RunConfig ablation_config(const RunConfig& base, AblationAxis axis, std::size_t value, std::uint64_t seed) {
  RunConfig c = base.with_seed(seed);
  if (axis == AblationAxis::kTrainSize) {
    c.train_samples = value;
  } else {
    c.proj_dim = value;
    if (c.hidden_dim != 0 && c.hidden_dim < value) c.hidden_dim = 0;
  }
  return c;
}

std::vector<AblationPoint> run_ablation(const RunConfig& base, AblationAxis axis, std::span<const std::size_t> values) {
  const std::vector<std::size_t> grid =
      values.empty() ? ablation_grid(axis) : std::vector<std::size_t>(values.begin(), values.end());
  std::vector<AblationPoint> out;
  for (std::size_t value : grid) {
    for (std::uint64_t seed : base.seeds) {
      const RunResult r = run_train_and_detect(ablation_config(base, axis, value, seed));
      out.push_back({axis, value, seed, r.detection.auroc, r.detection.f1, r.detection.tau});
    }
  }
  return out;
}

}  // namespace pcnet
