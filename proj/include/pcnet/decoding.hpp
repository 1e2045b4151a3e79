#ifndef PCNET_DECODING_HPP
#define PCNET_DECODING_HPP

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pcnet/model.hpp"

namespace pcnet {

using Token = std::size_t;

/// What PC-LDCD needs from a language model. Implementations must be pure
/// functions of the prefix: lookahead_hidden may not change what later calls
/// observe.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;
  virtual std::size_t vocab_size() const = 0;
  /// Next-token log-probabilities after `prefix`.
  virtual std::vector<double> log_probs(std::span<const Token> prefix) const = 0;
  /// Hidden state h_t at the last position of `prefix`.
  virtual std::vector<double> hidden(std::span<const Token> prefix) const = 0;
  /// Hidden state after appending `candidate` to `prefix`.
  virtual std::vector<double> lookahead_hidden(std::span<const Token> prefix, Token candidate) const = 0;
};

/// beta = sigmoid(nll - tau).
double gate_strength(double nll, double tau);

/// lm_logprob - beta * candidate_nll.
double ldcd_score(double lm_logprob, double beta, double candidate_nll);

enum class DecodeMode {
  kVanilla,  // greedy, never intervenes
  kGated,    // intervene iff beta >= gate_margin
  kUngated,  // intervene at every step with beta fixed to forced_beta
};

const char* to_string(DecodeMode mode);
DecodeMode parse_decode_mode(const std::string& name);

struct DecodeOptions {
  DecodeMode mode = DecodeMode::kGated;
  double tau = 0.0;
  std::size_t k = 8;
  double gate_margin = 0.05;
  double forced_beta = 1.0;
};

struct CandidateScore {
  Token token = 0;
  double lm_logprob = 0.0;
  double candidate_nll = 0.0;
  double ldcd_score = 0.0;
};

struct GateDecision {
  std::size_t step = 0;
  double nll = 0.0;
  double beta = 0.0;
  bool intervened = false;
  Token chosen = 0;
  std::vector<CandidateScore> candidates;  // empty unless intervened
};

/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> v);

/// Indices of the k largest entries, descending by value, ties by lowest id.
std::vector<Token> top_k(std::span<const double> v, std::size_t k);

/// One token of gated lookahead decoding. `stats` counts circuit passes:
/// one for the current state plus k when the step intervenes.
GateDecision decode_step(const LanguageModel& lm, std::span<const Token> prefix, const PcNet& model,
                         const DecodeOptions& options, std::size_t step = 0, EvalStats* stats = nullptr);

struct Generation {
  std::vector<Token> tokens;  // generated continuation only
  std::vector<GateDecision> decisions;

  bool any_intervened() const;
  std::size_t interventions() const;
};

Generation generate(const LanguageModel& lm, std::span<const Token> prompt, const PcNet& model,
                    const DecodeOptions& options, std::size_t max_tokens, EvalStats* stats = nullptr);

struct GenerationSummary {
  std::size_t generations = 0;
  std::size_t tokens = 0;
  double igr = 0.0;                     // generations with >= 1 intervention
  double token_intervention_rate = 0.0;
};

GenerationSummary summarize(std::span<const Generation> generations);

}  // namespace pcnet

#endif  // PCNET_DECODING_HPP
