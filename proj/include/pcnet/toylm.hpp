#ifndef PCNET_TOYLM_HPP
#define PCNET_TOYLM_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pcnet/decoding.hpp"
#include "pcnet/training.hpp"

namespace pcnet {

/// Construction knobs for the planted-manifold toy language model.
///
/// The vocabulary has `num_anchors` factual tokens (ids 0..K-1) and the same
/// number of hallucination-tagged shadow tokens (ids K..2K-1). Shadow token
/// K+j embeds exactly like factual token j plus `displacement` along a
/// direction orthogonal to every anchor.
struct ToyLmConfig {
  std::size_t num_anchors = 16;
  std::size_t d_llm = 64;
  double anchor_scale = 3.0;
  double displacement = 2.0;
  double recurrence_gain = 0.3;  // Frobenius norm of the recurrence matrix
  double embedding_noise = 0.3;
  double logit_gain = 0.3;         // factual successor logit per unit anchor alignment
  double shadow_logit_gain = 0.21; // shadow successor logit per unit anchor alignment
  double drift_logit_gain = 0.3;   // shadow logit per unit displacement
  std::uint64_t seed = 42;
};

struct ToyLmSpec {
  ToyLmConfig config;
  std::size_t vocab_size = 0;
  std::size_t d_llm = 0;
  std::vector<double> embeddings;  // vocab_size x d_llm
  std::vector<double> recurrence;  // d_llm x d_llm
  std::vector<double> output;      // vocab_size x d_llm
  std::vector<bool> hallucination_tag;
  std::vector<Token> successor;  // factual successor of factual token j
};

ToyLmSpec build_toy_lm_spec(const ToyLmConfig& config);

/// h_{t+1} = tanh(W h_t + E[token]).
std::vector<double> step_hidden(const ToyLmSpec& spec, std::span<const double> h, Token token);

/// Hidden state after consuming `prefix` from h_0 = 0.
std::vector<double> rollout_hidden(const ToyLmSpec& spec, std::span<const Token> prefix);

/// log_softmax(U h_t) after `prefix`.
std::vector<double> log_probs(const ToyLmSpec& spec, std::span<const Token> prefix);

/// Upper bound on ||h_t|| for every t when ||h_0|| <= 1:
/// max(1, max_token ||E[token]|| / (1 - ||W||_F)), capped at sqrt(d_llm).
double trajectory_bound(const ToyLmSpec& spec);

class ToyLm final : public LanguageModel {
 public:
  explicit ToyLm(ToyLmSpec spec);
  explicit ToyLm(const ToyLmConfig& config) : ToyLm(build_toy_lm_spec(config)) {}

  const ToyLmSpec& spec() const { return spec_; }
  bool is_hallucination(Token t) const { return spec_.hallucination_tag.at(t); }

  std::size_t vocab_size() const override { return spec_.vocab_size; }
  std::vector<double> log_probs(std::span<const Token> prefix) const override;
  std::vector<double> hidden(std::span<const Token> prefix) const override;
  std::vector<double> lookahead_hidden(std::span<const Token> prefix, Token candidate) const override;

 private:
  ToyLmSpec spec_;
};

enum class PromptKind { kFactual, kAdversarial };

struct PlantedPrompt {
  PromptKind kind = PromptKind::kFactual;
  std::vector<Token> prompt;
  std::vector<Token> gold;
  std::vector<int> prompt_labels;  // 1 = hallucination-tagged token
  std::vector<int> gold_labels;
  // Adversarial prompts: greedy next token is hallucination-tagged while a
  // factual token is among the top k.
  bool reranking_case = false;
};

/// Balanced corpus: prompt i of each factual/adversarial pair supplies
/// states.positives[i] / states.negatives[i] (last-token hidden states).
struct PlantedCorpus {
  std::vector<PlantedPrompt> prompts;  // factual, adversarial, factual, ...
  PairedBatch states;
};

struct CorpusOptions {
  std::size_t answer_len = 3;
  std::size_t k = 8;
  std::size_t min_prompt_len = 3;
  std::size_t max_prompt_len = 6;
  // Prompt tokens are drawn with P(anchor j) proportional to (j + 1)^-zipf_exponent,
  // so some valid states are rare in training.
  double zipf_exponent = 1.0;
};

PlantedCorpus build_planted_corpus(const ToyLm& lm, std::size_t n_samples, std::uint64_t seed,
                                   const CorpusOptions& options = {});

}  // namespace pcnet

#endif  // PCNET_TOYLM_HPP
