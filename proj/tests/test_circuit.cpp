#include <doctest.h>

#include <cmath>
#include <cstring>
#include <set>

#include "oracles.hpp"
#include "pcnet/circuit.hpp"
#include "pcnet/numeric.hpp"

using namespace pcnet;

namespace {

LeafParams saturated(std::array<double, 3> w, double loc = 0.0, double scale = 1.0, double dof = 5.0) {
  return LeafParams::from_constrained(20.0, w, loc, scale, dof);
}

std::size_t add_leaf(CircuitGraph& c, std::size_t dim, const LeafParams& p) {
  Node n;
  n.kind = NodeKind::kLeaf;
  n.dim = dim;
  n.leaf = p;
  c.nodes.push_back(n);
  return c.nodes.size() - 1;
}

std::size_t add_inner(CircuitGraph& c, NodeKind kind, std::vector<std::size_t> children,
                      std::vector<double> weights = {}) {
  Node n;
  n.kind = kind;
  n.children = std::move(children);
  for (double w : weights) n.log_weights.push_back(std::log(w));
  c.nodes.push_back(n);
  return c.nodes.size() - 1;
}

CircuitGraph two_gaussians() {
  CircuitGraph c;
  c.num_dims = 2;
  const auto a = add_leaf(c, 0, saturated({1, 0, 0}));
  const auto b = add_leaf(c, 1, saturated({1, 0, 0}));
  c.root = add_inner(c, NodeKind::kProduct, {a, b});
  return c;
}

}  // namespace

TEST_CASE("leaf density at the mode of pure components") {
  const double z = 0.0;
  CHECK(leaf_log_density(saturated({1, 0, 0}), z) == doctest::Approx(-0.5 * std::log(2 * M_PI)).epsilon(1e-8));
  CHECK(leaf_log_density(saturated({0, 1, 0}), z) == doctest::Approx(-std::log(2.0)).epsilon(1e-8));
}

TEST_CASE("leaf density matches closed-form pdfs") {
  const LeafParams p = saturated({1.0 / 3, 1.0 / 3, 1.0 / 3}, 0.5, 2.0, 4.0);
  CHECK(leaf_log_density(p, 1.2) == doctest::Approx(oracle::leaf(p, 1.2)).epsilon(1e-12));
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    const LeafParams q = LeafParams::from_constrained(rng.uniform(-3, 3), {rng.uniform(), rng.uniform(), rng.uniform()},
                                                      rng.uniform(-2, 2), rng.uniform(0.2, 3), rng.uniform(1.1, 30));
    const double z = rng.uniform(-10, 10);
    CHECK(leaf_log_density(q, z) == doctest::Approx(oracle::leaf(q, z)).epsilon(1e-10));
  }
}

TEST_CASE("gate scales the leaf log-density") {
  LeafParams p = saturated({0.2, 0.3, 0.5}, 0.1, 1.3, 3.0);
  const double full = leaf_log_density(p, 0.7);
  p.gate_logit = 0.0;
  CHECK(leaf_log_density(p, 0.7) == doctest::Approx(0.5 * full).epsilon(1e-8));
}

TEST_CASE("dropping a mixture component never raises the leaf density") {
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    std::array<double, 3> w{rng.uniform(0.1, 1), rng.uniform(0.1, 1), rng.uniform(0.1, 1)};
    const double loc = rng.uniform(-1, 1);
    const double z = rng.uniform(-5, 5);
    const double with_all = leaf_log_density(saturated(w, loc, 1.0, 3.0), z);
    for (int k = 0; k < 3; ++k) {
      // Zeroing component k removes its mass from the mixture sum.
      double mix_all = 0.0;
      double mix_dropped = 0.0;
      const LeafParams p = saturated(w, loc, 1.0, 3.0);
      const auto lw = p.log_weights();
      const double comps[3] = {gaussian_log_pdf(z, loc, 1.0), laplace_log_pdf(z, loc, 1.0),
                               student_t_log_pdf(z, loc, 1.0, 3.0)};
      for (int j = 0; j < 3; ++j) {
        mix_all += std::exp(lw[j] + comps[j]);
        if (j != k) mix_dropped += std::exp(lw[j] + comps[j]);
      }
      CHECK(std::log(mix_dropped) <= std::log(mix_all));
      CHECK(std::log(mix_all) == doctest::Approx(with_all).epsilon(1e-8));
    }
  }
}

TEST_CASE("leaf rejects non-finite input") {
  CHECK_THROWS_WITH(leaf_log_density(saturated({1, 0, 0}), std::nan("")), "non-finite input");
  CHECK_THROWS_WITH(leaf_log_density(saturated({1, 0, 0}), kInf), "non-finite input");
}

TEST_CASE("parameterization keeps scale and dof in range") {
  LeafParams p;
  p.log_scale = -50.0;
  p.dof_raw = -30.0;
  CHECK(p.scale() > 0.0);
  CHECK(p.dof() > 1.0);
  const auto lw = saturated({0.2, 0.3, 0.5}).log_weights();
  CHECK(std::exp(lw[0]) + std::exp(lw[1]) + std::exp(lw[2]) == doctest::Approx(1.0).epsilon(1e-12));
  const auto zero = saturated({1, 0, 0}).log_weights();
  CHECK(zero[1] == -kInf);
}

TEST_CASE("log_density on hand-built circuits") {
  CircuitGraph single;
  single.num_dims = 1;
  single.root = add_leaf(single, 0, saturated({1, 0, 0}));
  const double z0[1] = {0.0};
  CHECK(log_density(single, z0) == doctest::Approx(-0.918939).epsilon(1e-6));

  const CircuitGraph prod = two_gaussians();
  const double zz[2] = {0.0, 0.0};
  CHECK(log_density(prod, zz) == doctest::Approx(-std::log(2 * M_PI)).epsilon(1e-8));

  CircuitGraph mix = two_gaussians();
  const auto copy = add_inner(mix, NodeKind::kProduct, {0, 1});
  mix.root = add_inner(mix, NodeKind::kSum, {2, copy}, {0.5, 0.5});
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const double z[2] = {rng.uniform(-4, 4), rng.uniform(-4, 4)};
    CHECK(log_density(mix, z) == doctest::Approx(log_density(prod, z)).epsilon(1e-12));
  }
}

TEST_CASE("log_density argument errors") {
  const CircuitGraph c = two_gaussians();
  const double short_z[1] = {0.0};
  CHECK_THROWS_AS(log_density(c, short_z), Error);

  CircuitGraph bad = two_gaussians();
  bad.nodes[0].leaf.loc = std::nan("");
  const double z[2] = {0.0, 0.0};
  CHECK_THROWS_WITH(log_density(bad, z), doctest::Contains("node 0"));
}

TEST_CASE("log_density matches the circuit expansion oracle") {
  Rng rng(2024);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t dims = 2 + rng.index(2);
    const std::size_t depth = 1 + rng.index(2);
    CircuitGraph c = build_random_circuit(dims, depth, 2, 100 + trial);
    oracle::randomize(c, 500 + trial, trial % 2 == 0 ? 20.0 : rng.uniform(-2, 2));
    std::vector<double> z(dims);
    for (double& v : z) v = rng.uniform(-3, 3);
    CHECK(log_density(c, z) == doctest::Approx(oracle::mixture_log_density(c, z)).epsilon(1e-9));
  }
}

TEST_CASE("every node is visited exactly once per pass") {
  const CircuitGraph c = build_random_circuit(16, 4, 3, 9);
  std::vector<double> z(16, 0.1);
  EvalStats stats;
  log_density(c, z, &stats);
  log_density(c, z, &stats);
  CHECK(stats.passes == 2);
  CHECK(stats.node_visits == 2 * c.size());
}

TEST_CASE("log_density is deterministic") {
  CircuitGraph c = build_random_circuit(8, 3, 2, 5);
  oracle::randomize(c, 6, 0.3);
  std::vector<double> z = {0.1, -0.2, 0.3, 1.4, -2.0, 0.0, 0.5, 0.25};
  const double a = log_density(c, z);
  const double b = log_density(c, z);
  CHECK(std::memcmp(&a, &b, sizeof(double)) == 0);
}

TEST_CASE("saturated circuits integrate to one") {
  // Trapezoid rule on [-30, 30]^2; step 0.05 keeps the unit test quick, the
  // acceptance suite repeats this on ten circuits.
  CircuitGraph c = build_random_circuit(2, 2, 2, 77);
  oracle::randomize(c, 78, 20.0);
  for (Node& n : c.nodes)
    if (n.kind == NodeKind::kLeaf) n.leaf.gate_logit = 40.0;
  const double h = 0.05;
  const int steps = static_cast<int>(std::lround(60.0 / h));
  double total = 0.0;
  for (int i = 0; i <= steps; ++i) {
    const double wi = (i == 0 || i == steps) ? 0.5 : 1.0;
    for (int j = 0; j <= steps; ++j) {
      const double wj = (j == 0 || j == steps) ? 0.5 : 1.0;
      const double z[2] = {-30.0 + i * h, -30.0 + j * h};
      total += wi * wj * std::exp(log_density(c, z));
    }
  }
  CHECK(total * h * h == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("build_random_circuit shapes") {
  const CircuitGraph tiny = build_random_circuit(2, 1, 2, 42);
  CHECK(tiny.size() == 3);
  CHECK(tiny.nodes[tiny.root].kind == NodeKind::kProduct);
  CHECK(validate(tiny).empty());

  const CircuitGraph a = build_random_circuit(128, 4, 3, 42);
  const CircuitGraph b = build_random_circuit(128, 4, 3, 42);
  const CircuitGraph other = build_random_circuit(128, 4, 3, 43);
  CHECK(validate(a).empty());
  CHECK(validate(other).empty());
  REQUIRE(a.size() == b.size());
  bool same = true;
  for (std::size_t i = 0; i < a.size(); ++i)
    same = same && a.nodes[i].kind == b.nodes[i].kind && a.nodes[i].children == b.nodes[i].children &&
           a.nodes[i].dim == b.nodes[i].dim && a.nodes[i].leaf.loc == b.nodes[i].leaf.loc;
  CHECK(same);
  bool differs = a.size() != other.size();
  for (std::size_t i = 0; !differs && i < a.size(); ++i)
    differs = a.nodes[i].children != other.nodes[i].children || a.nodes[i].dim != other.nodes[i].dim;
  CHECK(differs);
  CHECK(a.size() > 500);
  CHECK(a.size() < 5000);
  CHECK(a.nodes[a.root].kind == NodeKind::kSum);  // even depth
}

TEST_CASE("initial leaf parameters") {
  const CircuitGraph c = build_random_circuit(64, 2, 2, 1);
  std::set<std::size_t> dims;
  double sum_loc = 0.0;
  std::size_t leaves = 0;
  for (const Node& n : c.nodes) {
    if (n.kind != NodeKind::kLeaf) continue;
    ++leaves;
    dims.insert(n.dim);
    CHECK(n.leaf.gate() == doctest::Approx(0.5));
    CHECK(n.leaf.scale() == doctest::Approx(1.0));
    CHECK(n.leaf.dof() == doctest::Approx(5.0));
    const auto lw = n.leaf.log_weights();
    CHECK(std::exp(lw[0]) == doctest::Approx(1.0 / 3));
    sum_loc += n.leaf.loc;
  }
  CHECK(dims.size() == 64);
  CHECK(std::abs(sum_loc / static_cast<double>(leaves)) < 0.05);
}

TEST_CASE("build_random_circuit rejects infeasible requests") {
  CHECK_THROWS_AS(build_random_circuit(4, 0, 2, 1), Error);
  CHECK_THROWS_AS(build_random_circuit(4, 2, 1, 1), Error);
  CHECK_THROWS_WITH(build_random_circuit(1, 2, 2, 1), doctest::Contains("infeasible scope partition"));
}

TEST_CASE("validate reports structural violations") {
  CircuitGraph overlap;
  overlap.num_dims = 2;
  const auto a = add_leaf(overlap, 0, saturated({1, 0, 0}));
  const auto b = add_leaf(overlap, 0, saturated({1, 0, 0}));
  const auto c = add_leaf(overlap, 1, saturated({1, 0, 0}));
  const auto p = add_inner(overlap, NodeKind::kProduct, {a, b});
  overlap.root = add_inner(overlap, NodeKind::kProduct, {p, c});
  auto v = validate(overlap);
  REQUIRE(v.size() == 1);
  CHECK(v[0].kind == "decomposability");
  CHECK(v[0].node == p);

  CircuitGraph heavy = two_gaussians();
  const auto copy = add_inner(heavy, NodeKind::kProduct, {0, 1});
  heavy.root = add_inner(heavy, NodeKind::kSum, {2, copy}, {0.7, 0.7});
  v = validate(heavy);
  REQUIRE(v.size() == 1);
  CHECK(v[0].kind == "normalization");
  CHECK(v[0].node == heavy.root);

  CircuitGraph unsmooth;
  unsmooth.num_dims = 2;
  const auto l0 = add_leaf(unsmooth, 0, saturated({1, 0, 0}));
  const auto l1 = add_leaf(unsmooth, 1, saturated({1, 0, 0}));
  const auto s = add_inner(unsmooth, NodeKind::kSum, {l0, l1}, {0.5, 0.5});
  unsmooth.root = s;
  v = validate(unsmooth);
  bool smooth_flagged = false;
  for (const auto& x : v) smooth_flagged = smooth_flagged || (x.kind == "smoothness" && x.node == s);
  CHECK(smooth_flagged);

  CircuitGraph order = two_gaussians();
  order.nodes[0].children = {2};
  order.nodes[0].kind = NodeKind::kProduct;
  CHECK_FALSE(validate(order).empty());

  CircuitGraph partial = two_gaussians();
  partial.root = 0;
  v = validate(partial);
  bool scope_flagged = false;
  for (const auto& x : v) scope_flagged = scope_flagged || x.kind == "scope";
  CHECK(scope_flagged);
}

TEST_CASE("renormalize_sum_weights restores the simplex") {
  CircuitGraph c = build_random_circuit(6, 2, 3, 4);
  for (Node& n : c.nodes)
    for (double& w : n.log_weights) w += 0.3;
  CHECK_FALSE(validate(c).empty());
  renormalize_sum_weights(c);
  CHECK(validate(c).empty());
}

TEST_CASE("compile_layout mirrors the graph") {
  const CircuitGraph c = build_random_circuit(9, 3, 3, 8);
  const CircuitLayout l = compile_layout(c);
  CHECK(l.kinds.size() == c.size());
  CHECK(l.leaf_dims.size() == c.num_leaves());
  CHECK(l.num_sum_weights == c.num_sum_weights());
  CHECK(l.root == c.root);
}
