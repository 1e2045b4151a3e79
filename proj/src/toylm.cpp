#include "pcnet/toylm.hpp"

#include <algorithm>
#include <cmath>

#include "pcnet/numeric.hpp"
#include "pcnet/rng.hpp"

namespace pcnet {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

// Modified Gram-Schmidt on Gaussian draws.
std::vector<std::vector<double>> orthonormal_basis(std::size_t count, std::size_t dim, Rng& rng) {
  std::vector<std::vector<double>> basis;
  while (basis.size() < count) {
    std::vector<double> v(dim);
    for (double& x : v) x = rng.normal();
    for (const auto& b : basis) {
      const double p = dot(v, b);
      for (std::size_t i = 0; i < dim; ++i) v[i] -= p * b[i];
    }
    const double n = std::sqrt(dot(v, v));
    if (n < 1e-6) continue;
    for (double& x : v) x /= n;
    basis.push_back(std::move(v));
  }
  return basis;
}

}  // namespace

ToyLmSpec build_toy_lm_spec(const ToyLmConfig& config) {
  const std::size_t k = config.num_anchors;
  const std::size_t d = config.d_llm;
  if (k < 2) throw Error("toy LM needs at least 2 anchors");
  if (k + 1 > d) throw Error("toy LM needs d_llm > num_anchors to fit the drift direction");
  if (!(config.recurrence_gain >= 0.0 && config.recurrence_gain < 1.0))
    throw Error("toy LM recurrence_gain must lie in [0, 1) for a contractive recurrence");

  Rng rng(config.seed);
  ToyLmSpec spec;
  spec.config = config;
  spec.vocab_size = 2 * k;
  spec.d_llm = d;
  const auto basis = orthonormal_basis(k + 1, d, rng);
  const auto& drift = basis[k];

  spec.embeddings.assign(spec.vocab_size * d, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    std::vector<double> noise(d);
    for (double& x : noise) x = rng.normal(0.0, config.embedding_noise / std::sqrt(static_cast<double>(d)));
    const double along = dot(noise, drift);
    for (std::size_t i = 0; i < d; ++i) noise[i] -= along * drift[i];
    double* fact = spec.embeddings.data() + j * d;
    double* shadow = spec.embeddings.data() + (k + j) * d;
    for (std::size_t i = 0; i < d; ++i) {
      fact[i] = config.anchor_scale * basis[j][i] + noise[i];
      shadow[i] = fact[i] + config.displacement * drift[i];
    }
  }

  spec.recurrence.resize(d * d);
  double frob = 0.0;
  for (double& w : spec.recurrence) {
    w = rng.normal();
    frob += w * w;
  }
  frob = std::sqrt(frob);
  for (double& w : spec.recurrence) w *= config.recurrence_gain / frob;

  spec.successor = rng.permutation(k);
  spec.output.assign(spec.vocab_size * d, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    double* fact_row = spec.output.data() + spec.successor[j] * d;
    double* shadow_row = spec.output.data() + (k + spec.successor[j]) * d;
    for (std::size_t i = 0; i < d; ++i) {
      fact_row[i] = config.logit_gain * basis[j][i];
      shadow_row[i] = config.shadow_logit_gain * basis[j][i] + config.drift_logit_gain * drift[i];
    }
  }
  spec.hallucination_tag.assign(spec.vocab_size, false);
  for (std::size_t j = k; j < spec.vocab_size; ++j) spec.hallucination_tag[j] = true;
  return spec;
}

std::vector<double> step_hidden(const ToyLmSpec& spec, std::span<const double> h, Token token) {
  if (token >= spec.vocab_size) throw Error("unknown token " + std::to_string(token));
  if (h.size() != spec.d_llm) throw Error("hidden state has the wrong width");
  const std::size_t d = spec.d_llm;
  const double* e = spec.embeddings.data() + token * d;
  std::vector<double> out(d);
  for (std::size_t r = 0; r < d; ++r) {
    const double* row = spec.recurrence.data() + r * d;
    double acc = e[r];
    for (std::size_t c = 0; c < d; ++c) acc += row[c] * h[c];
    out[r] = std::tanh(acc);
  }
  return out;
}

std::vector<double> rollout_hidden(const ToyLmSpec& spec, std::span<const Token> prefix) {
  std::vector<double> h(spec.d_llm, 0.0);
  for (Token t : prefix) h = step_hidden(spec, h, t);
  return h;
}

namespace {

std::vector<double> log_probs_from_hidden(const ToyLmSpec& spec, std::span<const double> h) {
  std::vector<double> logits(spec.vocab_size);
  for (std::size_t v = 0; v < spec.vocab_size; ++v)
    logits[v] = dot(std::span<const double>(spec.output.data() + v * spec.d_llm, spec.d_llm), h);
  const double norm = logsumexp(logits);
  for (double& l : logits) l -= norm;
  return logits;
}

}  // namespace

std::vector<double> log_probs(const ToyLmSpec& spec, std::span<const Token> prefix) {
  if (prefix.empty()) throw Error("log_probs: prefix must be non-empty");
  return log_probs_from_hidden(spec, rollout_hidden(spec, prefix));
}

double trajectory_bound(const ToyLmSpec& spec) {
  double max_e = 0.0;
  for (std::size_t v = 0; v < spec.vocab_size; ++v) {
    std::span<const double> e(spec.embeddings.data() + v * spec.d_llm, spec.d_llm);
    max_e = std::max(max_e, std::sqrt(dot(e, e)));
  }
  double frob = 0.0;
  for (double w : spec.recurrence) frob += w * w;
  frob = std::sqrt(frob);
  const double cap = std::sqrt(static_cast<double>(spec.d_llm));
  if (frob >= 1.0) return cap;
  return std::min(cap, std::max(1.0, max_e / (1.0 - frob)));
}

ToyLm::ToyLm(ToyLmSpec spec) : spec_(std::move(spec)) {
  const std::size_t v = spec_.vocab_size;
  const std::size_t d = spec_.d_llm;
  if (spec_.embeddings.size() != v * d || spec_.output.size() != v * d || spec_.recurrence.size() != d * d ||
      spec_.hallucination_tag.size() != v)
    throw Error("toy LM spec has inconsistent shapes");
}

std::vector<double> ToyLm::log_probs(std::span<const Token> prefix) const { return pcnet::log_probs(spec_, prefix); }

std::vector<double> ToyLm::hidden(std::span<const Token> prefix) const { return rollout_hidden(spec_, prefix); }

std::vector<double> ToyLm::lookahead_hidden(std::span<const Token> prefix, Token candidate) const {
  return step_hidden(spec_, rollout_hidden(spec_, prefix), candidate);
}

namespace {

std::vector<Token> greedy_rollout(const ToyLm& lm, std::vector<Token> prefix, Token first, std::size_t len) {
  std::vector<Token> out{first};
  prefix.push_back(first);
  while (out.size() < len) {
    const Token next = argmax(lm.log_probs(prefix));
    out.push_back(next);
    prefix.push_back(next);
  }
  return out;
}

std::vector<int> tags(const ToyLm& lm, std::span<const Token> tokens) {
  std::vector<int> out;
  for (Token t : tokens) out.push_back(lm.is_hallucination(t) ? 1 : 0);
  return out;
}

}  // namespace

PlantedCorpus build_planted_corpus(const ToyLm& lm, std::size_t n_samples, std::uint64_t seed,
                                   const CorpusOptions& options) {
  if (n_samples % 2 != 0) throw Error("planted corpus size must be even");
  if (options.answer_len < 1 || options.min_prompt_len < 1 || options.max_prompt_len < options.min_prompt_len)
    throw Error("invalid corpus options");
  const std::size_t k = lm.spec().config.num_anchors;
  constexpr int kMaxAttempts = 100;
  if (!(options.zipf_exponent >= 0.0)) throw Error("zipf_exponent must be non-negative");
  std::vector<double> cdf(k);
  double acc = 0.0;
  for (std::size_t j = 0; j < k; ++j) cdf[j] = acc += std::pow(static_cast<double>(j + 1), -options.zipf_exponent);
  Rng rng(seed);
  auto draw_anchor = [&] {
    const double u = rng.uniform() * acc;
    return static_cast<Token>(std::min<std::ptrdiff_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin(),
                                                       static_cast<std::ptrdiff_t>(k - 1)));
  };
  auto draw_prefix = [&] {
    const std::size_t len = options.min_prompt_len + rng.index(options.max_prompt_len - options.min_prompt_len + 1);
    std::vector<Token> p(len);
    for (Token& t : p) t = draw_anchor();
    return p;
  };

  PlantedCorpus corpus;
  for (std::size_t pair = 0; pair < n_samples / 2; ++pair) {
    PlantedPrompt fact;
    fact.kind = PromptKind::kFactual;
    fact.prompt = draw_prefix();
    const Token greedy = argmax(lm.log_probs(fact.prompt));
    fact.gold = greedy_rollout(lm, fact.prompt, greedy, options.answer_len);

    PlantedPrompt adv;
    adv.kind = PromptKind::kAdversarial;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
      adv.prompt = draw_prefix();
      adv.prompt.back() += k;  // shadow of the last factual token
      const std::vector<double> logp = lm.log_probs(adv.prompt);
      const std::vector<Token> top = top_k(logp, options.k);
      const bool greedy_tagged = lm.is_hallucination(top.front());
      const bool factual_alt = std::any_of(top.begin(), top.end(), [&](Token t) { return !lm.is_hallucination(t); });
      adv.reranking_case = greedy_tagged && factual_alt;
      if (adv.reranking_case) break;
    }
    const std::vector<double> logp = lm.log_probs(adv.prompt);
    Token best_factual = 0;
    for (Token t = 1; t < lm.vocab_size(); ++t)
      if (!lm.is_hallucination(t) && logp[t] > logp[best_factual]) best_factual = t;
    adv.gold = greedy_rollout(lm, adv.prompt, best_factual, options.answer_len);

    for (PlantedPrompt* p : {&fact, &adv}) {
      p->prompt_labels = tags(lm, p->prompt);
      p->gold_labels = tags(lm, p->gold);
    }
    corpus.states.positives.push_back(lm.hidden(fact.prompt));
    corpus.states.negatives.push_back(lm.hidden(adv.prompt));
    corpus.prompts.push_back(std::move(fact));
    corpus.prompts.push_back(std::move(adv));
  }
  return corpus;
}

}  // namespace pcnet
