// Independent reference implementations used by the tests.

#ifndef PCNET_TESTS_ORACLES_HPP
#define PCNET_TESTS_ORACLES_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <boost/math/distributions/laplace.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "pcnet/circuit.hpp"
#include "pcnet/model.hpp"
#include "pcnet/numeric.hpp"
#include "pcnet/rng.hpp"

namespace oracle {

inline double log_sum(const std::vector<double>& x) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : x) m = std::max(m, v);
  if (std::isinf(m)) return m;
  long double acc = 0.0L;
  for (double v : x) acc += std::exp(static_cast<long double>(v - m));
  return m + static_cast<double>(std::log(acc));
}

// Closed-form pdfs via Boost.Math, combined in probability space.
inline double leaf(const pcnet::LeafParams& p, double z) {
  const double s = std::exp(p.log_scale);
  const double nu = std::log1p(std::exp(p.dof_raw)) + 1.0;
  std::vector<double> w(p.weight_logits.begin(), p.weight_logits.end());
  const double norm = log_sum(w);
  const double g = 1.0 / (1.0 + std::exp(-p.gate_logit));
  const double pg = boost::math::pdf(boost::math::normal_distribution<double>(p.loc, s), z);
  const double pl = boost::math::pdf(boost::math::laplace_distribution<double>(p.loc, s), z);
  const double pt = boost::math::pdf(boost::math::students_t_distribution<double>(nu), (z - p.loc) / s) / s;
  const double mix = std::exp(w[0] - norm) * pg + std::exp(w[1] - norm) * pl + std::exp(w[2] - norm) * pt;
  return g * std::log(mix);
}

// One term of the expanded circuit polynomial: a weight and one leaf per
// dimension.
struct Term {
  double log_weight = 0.0;
  std::vector<std::size_t> leaves;  // leaf node id per dimension, or npos
};

inline std::vector<Term> expand(const pcnet::CircuitGraph& c, std::size_t id) {
  const pcnet::Node& n = c.nodes[id];
  if (n.kind == pcnet::NodeKind::kLeaf) {
    Term t;
    t.leaves.assign(c.num_dims, static_cast<std::size_t>(-1));
    t.leaves[n.dim] = id;
    return {t};
  }
  if (n.kind == pcnet::NodeKind::kSum) {
    std::vector<Term> out;
    for (std::size_t i = 0; i < n.children.size(); ++i) {
      for (Term t : expand(c, n.children[i])) {
        t.log_weight += n.log_weights[i];
        out.push_back(std::move(t));
      }
    }
    return out;
  }
  std::vector<Term> acc = {Term{0.0, std::vector<std::size_t>(c.num_dims, static_cast<std::size_t>(-1))}};
  for (std::size_t child : n.children) {
    const std::vector<Term> rhs = expand(c, child);
    std::vector<Term> next;
    for (const Term& a : acc) {
      for (const Term& b : rhs) {
        Term t = a;
        t.log_weight += b.log_weight;
        for (std::size_t d = 0; d < c.num_dims; ++d)
          if (b.leaves[d] != static_cast<std::size_t>(-1)) t.leaves[d] = b.leaves[d];
        next.push_back(std::move(t));
      }
    }
    acc = std::move(next);
  }
  return acc;
}

// log C(z) as an explicit mixture of fully factorized terms.
inline double mixture_log_density(const pcnet::CircuitGraph& c, const std::vector<double>& z) {
  std::vector<double> terms;
  for (const Term& t : expand(c, c.root)) {
    double v = t.log_weight;
    for (std::size_t d = 0; d < c.num_dims; ++d) v += leaf(c.nodes[t.leaves[d]].leaf, z[d]);
    terms.push_back(v);
  }
  return log_sum(terms);
}

// Random leaf parameters and sum weights, gates set to `gate_logit`.
inline void randomize(pcnet::CircuitGraph& c, std::uint64_t seed, double gate_logit = 20.0) {
  pcnet::Rng rng(seed);
  for (pcnet::Node& n : c.nodes) {
    if (n.kind == pcnet::NodeKind::kLeaf) {
      n.leaf.gate_logit = gate_logit;
      for (double& w : n.leaf.weight_logits) w = rng.uniform(-1.0, 1.0);
      n.leaf.loc = rng.uniform(-1.0, 1.0);
      n.leaf.log_scale = std::log(rng.uniform(0.5, 1.5));
      n.leaf.dof_raw = pcnet::softplus_inverse(rng.uniform(2.0, 6.0));
    } else if (n.kind == pcnet::NodeKind::kSum) {
      std::vector<double> w(n.children.size());
      double total = 0.0;
      for (double& x : w) total += x = rng.uniform(0.1, 1.0);
      for (std::size_t i = 0; i < w.size(); ++i) n.log_weights[i] = std::log(w[i] / total);
    }
  }
}

// Central differences of f over every entry of every parameter group.
inline std::map<std::string, std::vector<double>> finite_differences(
    const pcnet::PcNet& model, const std::function<double(const pcnet::PcNet&)>& f, double eps = 1e-4) {
  const pcnet::ParameterSet base = pcnet::pack_parameters(model);
  std::map<std::string, std::vector<double>> out;
  pcnet::PcNet work = model;
  for (const auto& [key, values] : base) {
    std::vector<double> g(values.size(), 0.0);
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!std::isfinite(values[i])) continue;
      pcnet::ParameterSet p = base;
      p[key][i] = values[i] + eps;
      pcnet::unpack_parameters(p, work);
      const double up = f(work);
      p[key][i] = values[i] - eps;
      pcnet::unpack_parameters(p, work);
      const double down = f(work);
      g[i] = (up - down) / (2.0 * eps);
    }
    out[key] = std::move(g);
  }
  return out;
}

// Straight-line composite objective on precomputed log-densities.
inline double composite(const std::vector<double>& lp_pos, const std::vector<double>& lp_neg, double alpha,
                        double gamma) {
  double gen = 0.0;
  double con = 0.0;
  for (std::size_t i = 0; i < lp_pos.size(); ++i) {
    gen += -lp_pos[i];
    con += std::max(0.0, gamma + lp_neg[i] - lp_pos[i]);
  }
  const double n = static_cast<double>(lp_pos.size());
  return alpha * gen / n + (1.0 - alpha) * con / n;
}

}  // namespace oracle

#endif  // PCNET_TESTS_ORACLES_HPP
