#ifndef PCNET_PIPELINE_HPP
#define PCNET_PIPELINE_HPP

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pcnet/decoding.hpp"
#include "pcnet/detection.hpp"
#include "pcnet/model.hpp"
#include "pcnet/toylm.hpp"
#include "pcnet/training.hpp"

namespace pcnet {

/// Everything one run needs. Defaults: 500 samples, 50 epochs, batch 8,
/// lr 1e-3, weight decay 1e-5, alpha 0.8, gamma 5, clip 1.0, d = 128,
/// depth 4, branching 3, seeds 42/43/44.
struct RunConfig {
  std::uint64_t seed = 42;
  std::vector<std::uint64_t> seeds = {42, 43, 44};

  std::size_t train_samples = 500;
  std::size_t eval_samples = 400;
  double validation_fraction = 0.25;

  std::size_t proj_dim = 128;
  std::size_t hidden_dim = 0;  // 0 selects 2 * proj_dim
  std::size_t depth = 4;
  std::size_t branching = 3;

  TrainConfig train;
  ToyLmConfig toylm;
  CorpusOptions corpus;

  std::size_t k = 8;
  double gate_margin = 0.05;
  double ungated_beta = 1.0;
  std::size_t decode_prompts = 300;

  void check() const;
  std::size_t resolved_hidden_dim() const { return hidden_dim == 0 ? 2 * proj_dim : hidden_dim; }
  /// Copy with every seed-bearing field set from `seed`.
  RunConfig with_seed(std::uint64_t seed) const;
};

/// Sub-seed streams derived from the run seed.
enum class SeedStream : std::uint64_t { kTrainCorpus = 1, kEvalCorpus = 2, kBottleneck = 3 };

struct Experiment {
  ToyLm lm;
  PlantedCorpus train_corpus;
  PlantedCorpus eval_corpus;  // split into validation then test pairs
  std::size_t validation_pairs = 0;
};

Experiment make_experiment(const RunConfig& config);
/// Same corpora, generated from an existing toy LM (e.g. a checkpoint sidecar).
Experiment make_experiment(const RunConfig& config, ToyLm lm);

/// Untrained model for `config.seed`.
PcNet init_model(const RunConfig& config);

/// First `n` samples of the training corpus (n/2 pairs).
PairedBatch training_subset(const PlantedCorpus& corpus, std::size_t n);

struct DetectionReport {
  double auroc = 0.0;
  double f1 = 0.0;
  double tau = 0.0;
  double validation_f1 = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  std::vector<ScoredSample> validation;
  std::vector<ScoredSample> test;
};

/// Scores the eval corpus, calibrates tau on the validation pairs and reports
/// AUROC / F1 on the test pairs.
DetectionReport evaluate_detection(const PcNet& model, const Experiment& experiment);

nlohmann::json to_json(const DetectionReport& report);

/// Test-split prompts used for decoding evaluation (factual and adversarial
/// interleaved), at most `limit`.
std::vector<PlantedPrompt> decode_prompts(const Experiment& experiment, std::size_t limit);

struct PromptOutcome {
  Generation generation;
  bool correct = false;
  bool vanilla_correct = false;
};

struct DecodeReport {
  DecodeMode mode = DecodeMode::kGated;
  double tau = 0.0;
  GenerationSummary summary;
  double accuracy = 0.0;
  std::size_t vanilla_correct = 0;
  double corruption_rate = 0.0;    // vanilla-correct prompts that became incorrect
  double preservation_rate = 0.0;  // vanilla-correct prompts that stayed correct
  std::size_t circuit_passes = 0;
  std::vector<PromptOutcome> outcomes;
};

DecodeReport evaluate_decoding(const PcNet& model, const LanguageModel& lm, std::span<const PlantedPrompt> prompts,
                               const DecodeOptions& options, std::size_t max_tokens);

nlohmann::json summary_json(const DecodeReport& report);

DecodeOptions decode_options(const RunConfig& config, DecodeMode mode, double tau);

/// Training plus detection for one seed, the unit shared by train/detect and
/// every ablation point.
struct RunResult {
  RunConfig config;
  PcNet initial;
  TrainResult training;
  DetectionReport detection;
};

RunResult run_train_and_detect(const RunConfig& config);

enum class AblationAxis { kTrainSize, kProjDim };

AblationAxis parse_ablation_axis(const std::string& name);
const char* to_string(AblationAxis axis);
std::vector<std::size_t> ablation_grid(AblationAxis axis);

struct AblationPoint {
  AblationAxis axis = AblationAxis::kTrainSize;
  std::size_t value = 0;
  std::uint64_t seed = 0;
  double auroc = 0.0;
  double f1 = 0.0;
  double tau = 0.0;
};

/// Config for one sweep point.
RunConfig ablation_config(const RunConfig& base, AblationAxis axis, std::size_t value, std::uint64_t seed);

std::vector<AblationPoint> run_ablation(const RunConfig& base, AblationAxis axis,
                                        std::span<const std::size_t> values = {});

}  // namespace pcnet

#endif  // PCNET_PIPELINE_HPP
