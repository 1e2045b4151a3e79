#include <doctest.h>

#include <cmath>
#include <map>

#include "pcnet/numeric.hpp"
#include "pcnet/rng.hpp"
#include "pcnet/toylm.hpp"

using namespace pcnet;

namespace {

ToyLmConfig small_config() {
  ToyLmConfig c;
  c.num_anchors = 6;
  c.d_llm = 16;
  return c;
}

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

std::vector<Token> random_prefix(Rng& rng, std::size_t vocab, std::size_t len) {
  std::vector<Token> p(len);
  for (Token& t : p) t = rng.index(vocab);
  return p;
}

}  // namespace

TEST_CASE("without recurrence the state only sees the last token") {
  ToyLmConfig c = small_config();
  c.recurrence_gain = 0.0;
  const ToyLmSpec spec = build_toy_lm_spec(c);
  const std::vector<Token> prefix = {3, 7, 1, 10};
  const auto h = rollout_hidden(spec, prefix);
  for (std::size_t i = 0; i < spec.d_llm; ++i) CHECK(h[i] == std::tanh(spec.embeddings[10 * spec.d_llm + i]));
  CHECK(rollout_hidden(spec, std::vector<Token>{}) == std::vector<double>(spec.d_llm, 0.0));
}

TEST_CASE("saturated states stay inside the unit cube") {
  ToyLmConfig c = small_config();
  c.anchor_scale = 1e6;
  c.recurrence_gain = 0.99;
  const ToyLm lm(c);
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const auto h = lm.hidden(random_prefix(rng, lm.vocab_size(), 1 + rng.index(10)));
    for (double x : h) CHECK(std::abs(x) <= 1.0);
    CHECK(all_finite(lm.log_probs(random_prefix(rng, lm.vocab_size(), 4))));
  }
}

TEST_CASE("trajectories respect the stated bound") {
  for (double gain : {0.0, 0.3, 0.9}) {
    ToyLmConfig c = small_config();
    c.recurrence_gain = gain;
    c.anchor_scale = 0.2;
    const ToyLmSpec spec = build_toy_lm_spec(c);
    const double bound = trajectory_bound(spec);
    CHECK(bound <= std::sqrt(static_cast<double>(spec.d_llm)));
    Rng rng(2);
    for (int i = 0; i < 50; ++i) {
      std::vector<double> h(spec.d_llm, 0.0);
      for (int t = 0; t < 30; ++t) {
        h = step_hidden(spec, h, rng.index(spec.vocab_size));
        CHECK(norm(h) <= bound + 1e-12);
      }
    }
  }
}

TEST_CASE("zero output map gives a uniform distribution") {
  ToyLmConfig c = small_config();
  c.logit_gain = c.shadow_logit_gain = c.drift_logit_gain = 0.0;
  const ToyLm lm(c);
  for (double lp : lm.log_probs(std::vector<Token>{2, 4}))
    CHECK(lp == doctest::Approx(-std::log(static_cast<double>(lm.vocab_size()))).epsilon(1e-15));
}

TEST_CASE("next-token distribution matches a direct softmax") {
  const ToyLm lm(small_config());
  const ToyLmSpec& s = lm.spec();
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const auto prefix = random_prefix(rng, s.vocab_size, 1 + rng.index(6));
    const auto h = lm.hidden(prefix);
    std::vector<long double> logits(s.vocab_size);
    long double z = 0.0L;
    for (std::size_t v = 0; v < s.vocab_size; ++v) {
      long double acc = 0.0L;
      for (std::size_t j = 0; j < s.d_llm; ++j) acc += static_cast<long double>(s.output[v * s.d_llm + j]) * h[j];
      logits[v] = acc;
      z += std::exp(acc);
    }
    const auto lp = lm.log_probs(prefix);
    double total = 0.0;
    for (std::size_t v = 0; v < s.vocab_size; ++v) {
      CHECK(lp[v] == doctest::Approx(static_cast<double>(logits[v] - std::log(z))).epsilon(1e-12));
      total += std::exp(lp[v]);
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("shadow tokens are displaced copies of their anchors") {
  ToyLmConfig c = small_config();
  c.displacement = 1.7;
  const ToyLmSpec s = build_toy_lm_spec(c);
  const std::size_t k = c.num_anchors, d = s.d_llm;
  std::vector<double> first(d);
  for (std::size_t i = 0; i < d; ++i) first[i] = s.embeddings[k * d + i] - s.embeddings[i];
  CHECK(norm(first) == doctest::Approx(1.7).epsilon(1e-12));
  for (std::size_t j = 0; j < k; ++j) {
    double along_anchor = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      CHECK(s.embeddings[(k + j) * d + i] - s.embeddings[j * d + i] == doctest::Approx(first[i]).epsilon(1e-12));
      along_anchor += first[i] * s.embeddings[j * d + i];
    }
    CHECK(std::abs(along_anchor) < 1e-9);
    CHECK_FALSE(s.hallucination_tag[j]);
    CHECK(s.hallucination_tag[k + j]);
  }
  CHECK(build_toy_lm_spec(c).embeddings == s.embeddings);
}

TEST_CASE("toy LM configuration checks") {
  ToyLmConfig c = small_config();
  c.num_anchors = c.d_llm;
  CHECK_THROWS_AS(build_toy_lm_spec(c), Error);
  c = small_config();
  c.recurrence_gain = 1.0;
  CHECK_THROWS_AS(build_toy_lm_spec(c), Error);
  const ToyLmSpec s = build_toy_lm_spec(small_config());
  CHECK_THROWS_AS(step_hidden(s, std::vector<double>(s.d_llm), s.vocab_size), Error);
  CHECK_THROWS_AS(log_probs(s, std::vector<Token>{}), Error);
}

TEST_CASE("planted corpus layout") {
  const ToyLm lm(small_config());
  const std::size_t k = lm.spec().config.num_anchors;
  const PlantedCorpus corpus = build_planted_corpus(lm, 40, 9);
  REQUIRE(corpus.prompts.size() == 40);
  REQUIRE(corpus.states.positives.size() == 20);
  REQUIRE(corpus.states.negatives.size() == 20);
  for (std::size_t i = 0; i < 20; ++i) {
    const PlantedPrompt& f = corpus.prompts[2 * i];
    const PlantedPrompt& a = corpus.prompts[2 * i + 1];
    CHECK(f.kind == PromptKind::kFactual);
    CHECK(a.kind == PromptKind::kAdversarial);
    CHECK(f.prompt.size() >= 3);
    CHECK(f.prompt.size() <= 6);
    CHECK(f.gold.size() == 3);
    for (int l : f.prompt_labels) CHECK(l == 0);
    CHECK(a.prompt.back() >= k);
    CHECK(a.prompt_labels.back() == 1);
    CHECK_FALSE(lm.is_hallucination(a.gold.front()));
    CHECK(corpus.states.positives[i] == lm.hidden(f.prompt));
    CHECK(corpus.states.negatives[i] == lm.hidden(a.prompt));
  }
  const PlantedCorpus again = build_planted_corpus(lm, 40, 9);
  CHECK(again.states.negatives == corpus.states.negatives);
  CHECK(build_planted_corpus(lm, 40, 10).states.positives != corpus.states.positives);
  CHECK_THROWS_AS(build_planted_corpus(lm, 41, 9), Error);
  CorpusOptions bad;
  bad.zipf_exponent = -1.0;
  CHECK_THROWS_AS(build_planted_corpus(lm, 4, 9, bad), Error);
}

TEST_CASE("prompt tokens follow the frequency law") {
  const ToyLm lm(small_config());
  const std::size_t k = lm.spec().config.num_anchors;
  for (double s : {0.0, 1.0, 2.0}) {
    CorpusOptions o;
    o.zipf_exponent = s;
    const PlantedCorpus corpus = build_planted_corpus(lm, 800, 4, o);
    std::map<Token, double> counts;
    double total = 0.0;
    for (std::size_t i = 0; i < corpus.prompts.size(); i += 2)
      for (Token t : corpus.prompts[i].prompt) counts[t] += 1.0, total += 1.0;
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::pow(j + 1.0, -s);
    for (std::size_t j = 0; j < k; ++j) {
      const double expected = std::pow(j + 1.0, -s) / z;
      CHECK(counts[j] / total == doctest::Approx(expected).epsilon(0.2));
    }
  }
}

TEST_CASE("hallucinated states are displaced along the drift direction") {
  const ToyLm lm(small_config());
  const ToyLmSpec& s = lm.spec();
  const std::size_t k = s.config.num_anchors, d = s.d_llm;
  std::vector<double> drift(d);
  for (std::size_t i = 0; i < d; ++i) drift[i] = (s.embeddings[k * d + i] - s.embeddings[i]) / s.config.displacement;
  const PlantedCorpus corpus = build_planted_corpus(lm, 200, 5);
  double gap = 0.0;
  std::size_t above = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    double p = 0.0, n = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      p += corpus.states.positives[i][j] * drift[j];
      n += corpus.states.negatives[i][j] * drift[j];
    }
    gap += (n - p) / 100.0;
    if (n > p) ++above;
  }
  CHECK(gap > 0.5);
  CHECK(above >= 95);
}

TEST_CASE("a full-width toy LM runs") {
  ToyLmConfig c;
  c.d_llm = 4096;
  const ToyLm lm(c);
  const std::vector<Token> prompt = {1, 2, 3};
  const auto h = lm.hidden(prompt);
  CHECK(h.size() == 4096);
  CHECK(all_finite(h));
  CHECK(all_finite(lm.log_probs(prompt)));
  CHECK(norm(h) <= trajectory_bound(lm.spec()) + 1e-12);
}
