#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "oracles.hpp"
#include "pcnet/numeric.hpp"
#include "pcnet/training.hpp"

using namespace pcnet;

namespace {

PcNet small_model(std::uint64_t seed, std::size_t d_llm = 6, std::size_t dims = 4) {
  PcNet m;
  m.circuit = build_random_circuit(dims, 2, 2, seed);
  m.bottleneck = init_bottleneck(d_llm, 2 * dims, dims, seed + 1);
  return m;
}

PairedBatch random_batch(std::uint64_t seed, std::size_t pairs, std::size_t d_llm = 6, double shift = 1.0) {
  Rng rng(seed);
  PairedBatch b;
  for (std::size_t i = 0; i < pairs; ++i) {
    std::vector<double> p(d_llm), q(d_llm);
    for (double& v : p) v = rng.normal(0.0, 0.5);
    for (double& v : q) v = rng.normal(shift, 0.5);
    b.positives.push_back(p);
    b.negatives.push_back(q);
  }
  return b;
}

bool bit_equal(const ParameterSet& a, const ParameterSet& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [k, v] : a) {
    const auto& w = b.at(k);
    if (v.size() != w.size() || std::memcmp(v.data(), w.data(), v.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("alpha = 1 reduces to the mean positive NLL") {
  const PcNet m = small_model(1);
  const PairedBatch b = random_batch(2, 5);
  const LossBreakdown l = composite_loss(m, b, 1.0, 5.0);
  double nll = 0.0;
  for (double lp : l.pos_log_density) nll -= lp;
  CHECK(l.total == nll / 5.0);
  CHECK(l.total == l.generative);
  CHECK(l.contrastive >= 0.0);
}

TEST_CASE("satisfied margins contribute exactly zero") {
  const PcNet m = small_model(3);
  PairedBatch b = random_batch(4, 2, 6, 0.0);
  // Pair 0: negative far off-manifold; pair 1: identical states.
  for (double& v : b.negatives[0]) v = 40.0;
  b.negatives[1] = b.positives[1];
  const LossBreakdown l = composite_loss(m, b, 0.0, 5.0);
  REQUIRE(l.pos_log_density[0] - l.neg_log_density[0] >= 5.0);
  CHECK(l.contrastive == doctest::Approx(5.0 / 2.0).epsilon(1e-12));
  CHECK(l.total == l.contrastive);
  PairedBatch satisfied = b;
  satisfied.negatives[1] = satisfied.negatives[0];
  satisfied.positives[1] = satisfied.positives[0];
  CHECK(composite_loss(m, satisfied, 0.3, 5.0).contrastive == 0.0);
}

TEST_CASE("composite loss matches a direct evaluation") {
  PcNet m = small_model(5, 6, 3);
  oracle::randomize(m.circuit, 6, 0.7);
  const PairedBatch b = random_batch(7, 4, 6, 0.4);
  std::vector<double> lp, ln;
  for (std::size_t i = 0; i < 4; ++i) {
    lp.push_back(oracle::mixture_log_density(m.circuit, project(m.bottleneck, b.positives[i])));
    ln.push_back(oracle::mixture_log_density(m.circuit, project(m.bottleneck, b.negatives[i])));
  }
  const double want = oracle::composite(lp, ln, 0.8, 5.0);
  CHECK(composite_loss(m, b, 0.8, 5.0).total == doctest::Approx(want).epsilon(1e-6));

  Tape tape;
  TapeModel tm(tape, m);
  LossBreakdown recorded;
  const Slot s = record_composite_loss(tape, tm, b, 0.8, 5.0, &recorded);
  CHECK(tape.scalar(s) == doctest::Approx(want).epsilon(1e-10));
  CHECK(recorded.total == doctest::Approx(want).epsilon(1e-10));
}

TEST_CASE("non-finite losses name the sample") {
  PcNet m = small_model(8);
  for (Node& n : m.circuit.nodes)
    if (n.kind == NodeKind::kLeaf) n.leaf = LeafParams::from_constrained(20.0, {1, 0, 0}, 0.0, 1.0, 5.0);
  std::fill(m.bottleneck.w1.begin(), m.bottleneck.w1.end(), 1.0);  // keep every hidden unit active
  PairedBatch b = random_batch(9, 3);
  for (double& v : b.positives[1]) v = 1e160;
  CHECK_THROWS_WITH(composite_loss(m, b, 0.8, 5.0), "non-finite loss at sample 1");
}

TEST_CASE("batch validation") {
  PairedBatch b = random_batch(1, 2);
  b.negatives.pop_back();
  CHECK_THROWS_AS(check_batch(b), Error);
  CHECK_THROWS_AS(check_batch(PairedBatch{}), Error);
  TrainConfig c;
  c.alpha = 1.5;
  CHECK_THROWS_AS(c.check(), Error);
  c = TrainConfig{};
  c.gamma = 0.0;
  CHECK_THROWS_AS(c.check(), Error);
}

TEST_CASE("adam with zero gradient and no decay is the identity") {
  ParameterSet p = {{"a", {1.0, -2.0}}, {"b", {0.5}}};
  const ParameterSet before = p;
  GradientBundle g;
  g.grads = {{"a", {0.0, 0.0}}, {"b", {0.0}}};
  AdamState s;
  adam_step(p, g, s, 0.1, 0.0);
  CHECK(bit_equal(p, before));
  CHECK(s.step == 1);
}

TEST_CASE("first adam step is bias corrected") {
  ParameterSet p = {{"x", {0.0}}};
  GradientBundle g;
  g.grads = {{"x", {1.0}}};
  AdamState s;
  adam_step(p, g, s, 0.1, 0.0);
  CHECK(p["x"][0] == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-15));
}

TEST_CASE("decoupled weight decay precedes the update") {
  ParameterSet p = {{"x", {1.0}}, {"keep", {1.0}}};
  GradientBundle g;
  g.grads = {{"x", {0.0}}, {"keep", {0.0}}};
  AdamState s;
  adam_step(p, g, s, 0.1, 0.1, [](const std::string& id) { return id != "keep"; });
  CHECK(p["x"][0] == doctest::Approx(0.99).epsilon(1e-15));
  CHECK(p["keep"][0] == 1.0);
}

TEST_CASE("adam follows a hand-rolled reference trace") {
  const std::vector<double> target = {1.0, -3.0, 0.25};
  ParameterSet p = {{"w", {0.0, 0.0, 0.0}}};
  AdamState s;
  std::vector<double> ref = {0.0, 0.0, 0.0}, m(3, 0.0), v(3, 0.0);
  const double lr = 0.05, wd = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int step = 1; step <= 3; ++step) {
    GradientBundle g;
    g.grads["w"].resize(3);
    for (int i = 0; i < 3; ++i) g.grads["w"][i] = 2.0 * (p["w"][i] - target[i]);
    adam_step(p, g, s, lr, wd);
    for (int i = 0; i < 3; ++i) {
      const double grad = 2.0 * (ref[i] - target[i]);
      ref[i] *= 1.0 - lr * wd;
      m[i] = b1 * m[i] + (1 - b1) * grad;
      v[i] = b2 * v[i] + (1 - b2) * grad * grad;
      const double mh = m[i] / (1 - std::pow(b1, step));
      const double vh = v[i] / (1 - std::pow(b2, step));
      ref[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
    for (int i = 0; i < 3; ++i) CHECK(p["w"][i] == doctest::Approx(ref[i]).epsilon(1e-9));
  }
}

TEST_CASE("model adam step exempts and renormalizes sum weights") {
  PcNet m = small_model(10);
  oracle::randomize(m.circuit, 11, 0.0);
  const ParameterSet before = pack_parameters(m);
  GradientBundle g;
  for (const auto& [k, v] : before) g.grads[k] = std::vector<double>(v.size(), 0.0);
  AdamState s;
  adam_step(m, g, s, 0.1, 0.5);
  const ParameterSet after = pack_parameters(m);
  CHECK(after.at(param_id::kSumLogWeights) == before.at(param_id::kSumLogWeights));
  CHECK(after.at(param_id::kW1)[0] == doctest::Approx(before.at(param_id::kW1)[0] * 0.95).epsilon(1e-15));

  for (auto& x : g.grads[param_id::kSumLogWeights]) x = 0.7;
  g.grads[param_id::kSumLogWeights][0] = -0.7;
  adam_step(m, g, s, 0.1, 0.0);
  CHECK(validate(m.circuit).empty());
}

TEST_CASE("lr = 0 leaves the model identical to its initialization") {
  const PcNet init = small_model(12);
  const PairedBatch data = random_batch(13, 4);
  TrainConfig c;
  c.lr = 0.0;
  c.epochs = 1;
  c.batch_size = 4;
  const TrainResult r = train(init, data, c);
  CHECK_FALSE(r.diverged);
  CHECK(r.history.size() == 1);
  CHECK(bit_equal(pack_parameters(r.model), pack_parameters(init)));
}

TEST_CASE("training is deterministic and respects the clip norm") {
  const PcNet init = small_model(14);
  const PairedBatch data = random_batch(15, 20);
  TrainConfig c;
  c.epochs = 5;
  c.lr = 1e-2;
  c.clip_norm = 0.5;
  const TrainResult a = train(init, data, c);
  const TrainResult b = train(init, data, c);
  std::ostringstream ca, cb;
  write_loss_csv(ca, a.history);
  write_loss_csv(cb, b.history);
  CHECK(ca.str() == cb.str());
  CHECK(bit_equal(pack_parameters(a.model), pack_parameters(b.model)));
  CHECK(a.post_clip_norms.size() == 5 * 3);
  for (double n : a.post_clip_norms) CHECK(n <= 0.5 + 1e-9);
  CHECK(a.history.back().total_loss < a.history.front().total_loss);
  CHECK(validate(a.model.circuit).empty());

  c.seed = 43;
  std::ostringstream cc;
  write_loss_csv(cc, train(init, data, c).history);
  CHECK(cc.str() != ca.str());
}

TEST_CASE("loss CSV layout") {
  std::ostringstream os;
  write_loss_csv(os, {EpochStats{1, 0.1, 0.2, 0.3, 0.5}});
  CHECK(os.str() == "epoch,total_loss,pos_nll,neg_nll,margin_violation_rate\n"
                    "1,0.10000000000000001,0.20000000000000001,0.29999999999999999,0.5\n");
}

TEST_CASE("divergence stops with the last finite model") {
  const PcNet init = small_model(16);
  const PairedBatch data = random_batch(17, 16);
  TrainConfig c;
  c.lr = 1e6;
  c.epochs = 20;
  c.clip_norm = 1e6;
  const TrainResult r = train(init, data, c);
  REQUIRE(r.diverged);
  CHECK(r.error.find("non-finite") != std::string::npos);
  CHECK(std::isfinite(composite_loss(r.model, data, c.alpha, c.gamma).total));
}
