#include "pcnet/decoding.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "pcnet/detection.hpp"
#include "pcnet/numeric.hpp"

namespace pcnet {

double gate_strength(double nll, double tau) { return 1.0 / (1.0 + std::exp(-(nll - tau))); }

double ldcd_score(double lm_logprob, double beta, double candidate_nll) { return lm_logprob - beta * candidate_nll; }

const char* to_string(DecodeMode mode) {
  switch (mode) {
    case DecodeMode::kVanilla: return "vanilla";
    case DecodeMode::kGated: return "gated";
    case DecodeMode::kUngated: return "ungated";
  }
  return "unknown";
}

DecodeMode parse_decode_mode(const std::string& name) {
  if (name == "vanilla") return DecodeMode::kVanilla;
  if (name == "gated") return DecodeMode::kGated;
  if (name == "ungated") return DecodeMode::kUngated;
  throw Error("unknown decode mode '" + name + "' (expected vanilla, ungated or gated)");
}

std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw Error("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

std::vector<Token> top_k(std::span<const double> v, std::size_t k) {
  std::vector<Token> idx(v.size());
  std::iota(idx.begin(), idx.end(), Token{0});
  k = std::min(k, v.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&v](Token a, Token b) { return v[a] > v[b] || (v[a] == v[b] && a < b); });
  idx.resize(k);
  return idx;
}

GateDecision decode_step(const LanguageModel& lm, std::span<const Token> prefix, const PcNet& model,
                         const DecodeOptions& options, std::size_t step, EvalStats* stats) {
  if (options.k < 1) throw Error("decode_step: k must be at least 1");
  if (prefix.empty()) throw Error("decode_step: prefix must be non-empty");
  const std::vector<double> logp = lm.log_probs(prefix);
  GateDecision d;
  d.step = step;
  d.nll = nll_score(model, lm.hidden(prefix), stats);
  d.beta = gate_strength(d.nll, options.tau);
  switch (options.mode) {
    case DecodeMode::kVanilla:
      d.intervened = false;
      break;
    case DecodeMode::kGated:
      d.intervened = d.beta >= options.gate_margin;
      break;
    case DecodeMode::kUngated:
      d.beta = options.forced_beta;
      d.intervened = true;
      break;
  }
  if (!d.intervened) {
    d.chosen = argmax(logp);
    return d;
  }
  // Candidates are scored in fixed top-k order so any parallel evaluation
  // reduces to the same choice.
  std::vector<double> scores;
  for (Token c : top_k(logp, options.k)) {
    CandidateScore cs;
    cs.token = c;
    cs.lm_logprob = logp[c];
    cs.candidate_nll = nll_score(model, lm.lookahead_hidden(prefix, c), stats);
    cs.ldcd_score = ldcd_score(cs.lm_logprob, d.beta, cs.candidate_nll);
    scores.push_back(cs.ldcd_score);
    d.candidates.push_back(cs);
  }
  // Ties go to the lowest token id, not the highest-ranked candidate.
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best] || (scores[i] == scores[best] && d.candidates[i].token < d.candidates[best].token))
      best = i;
  }
  d.chosen = d.candidates[best].token;
  return d;
}

bool Generation::any_intervened() const {
  return std::any_of(decisions.begin(), decisions.end(), [](const GateDecision& d) { return d.intervened; });
}

std::size_t Generation::interventions() const {
  return static_cast<std::size_t>(
      std::count_if(decisions.begin(), decisions.end(), [](const GateDecision& d) { return d.intervened; }));
}

Generation generate(const LanguageModel& lm, std::span<const Token> prompt, const PcNet& model,
                    const DecodeOptions& options, std::size_t max_tokens, EvalStats* stats) {
  if (max_tokens < 1) throw Error("generate: max_tokens must be at least 1");
  std::vector<Token> prefix(prompt.begin(), prompt.end());
  Generation g;
  for (std::size_t step = 0; step < max_tokens; ++step) {
    GateDecision d = decode_step(lm, prefix, model, options, step, stats);
    prefix.push_back(d.chosen);
    g.tokens.push_back(d.chosen);
    g.decisions.push_back(std::move(d));
  }
  return g;
}

GenerationSummary summarize(std::span<const Generation> generations) {
  GenerationSummary s;
  s.generations = generations.size();
  std::size_t with_intervention = 0;
  std::size_t interventions = 0;
  for (const Generation& g : generations) {
    s.tokens += g.tokens.size();
    interventions += g.interventions();
    if (g.any_intervened()) ++with_intervention;
  }
  if (s.generations > 0) s.igr = static_cast<double>(with_intervention) / static_cast<double>(s.generations);
  if (s.tokens > 0) s.token_intervention_rate = static_cast<double>(interventions) / static_cast<double>(s.tokens);
  return s;
}

}  // namespace pcnet
