#include "pcnet/circuit.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pcnet/numeric.hpp"
#include "pcnet/rng.hpp"

namespace pcnet {

double LeafParams::gate() const { return sigmoid(gate_logit); }
double LeafParams::scale() const { return std::exp(log_scale); }
double LeafParams::dof() const { return softplus(dof_raw) + 1.0; }

std::array<double, kNumLeafFamilies> LeafParams::log_weights() const {
  const double norm = logsumexp(weight_logits);
  std::array<double, kNumLeafFamilies> out{};
  for (std::size_t k = 0; k < kNumLeafFamilies; ++k) out[k] = weight_logits[k] - norm;
  return out;
}

LeafParams LeafParams::from_constrained(double gate_logit, std::array<double, kNumLeafFamilies> weights,
                                        double loc, double scale, double dof) {
  if (!(scale > 0.0)) throw Error("leaf scale must be positive");
  if (!(dof > 1.0)) throw Error("leaf dof must exceed 1");
  LeafParams p;
  p.gate_logit = gate_logit;
  for (std::size_t k = 0; k < kNumLeafFamilies; ++k) {
    if (weights[k] < 0.0) throw Error("leaf mixture weights must be non-negative");
    p.weight_logits[k] = std::log(weights[k]);
  }
  p.loc = loc;
  p.log_scale = std::log(scale);
  p.dof_raw = softplus_inverse(dof - 1.0);
  return p;
}

double gaussian_log_pdf(double z, double loc, double scale) {
  const double r = (z - loc) / scale;
  return -0.5 * kLogTwoPi - std::log(scale) - 0.5 * r * r;
}

double laplace_log_pdf(double z, double loc, double scale) {
  return -kLogTwo - std::log(scale) - std::abs(z - loc) / scale;
}

double student_t_log_pdf(double z, double loc, double scale, double dof) {
  const double r = (z - loc) / scale;
  return std::lgamma(0.5 * (dof + 1.0)) - std::lgamma(0.5 * dof) - 0.5 * (std::log(dof) + kLogPi) -
         std::log(scale) - 0.5 * (dof + 1.0) * std::log1p(r * r / dof);
}

double leaf_log_density(const LeafParams& params, double z) {
  if (!std::isfinite(z)) throw Error("non-finite input");
  const auto log_w = params.log_weights();
  const double s = params.scale();
  const std::array<double, kNumLeafFamilies> terms = {
      log_w[0] + gaussian_log_pdf(z, params.loc, s),
      log_w[1] + laplace_log_pdf(z, params.loc, s),
      log_w[2] + student_t_log_pdf(z, params.loc, s, params.dof()),
  };
  return params.gate() * logsumexp(terms);
}

const char* to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::kLeaf: return "leaf";
    case NodeKind::kSum: return "sum";
    case NodeKind::kProduct: return "product";
  }
  return "unknown";
}

std::size_t CircuitGraph::num_leaves() const {
  return static_cast<std::size_t>(
      std::count_if(nodes.begin(), nodes.end(), [](const Node& n) { return n.kind == NodeKind::kLeaf; }));
}

std::size_t CircuitGraph::num_sum_weights() const {
  std::size_t total = 0;
  for (const Node& n : nodes)
    if (n.kind == NodeKind::kSum) total += n.children.size();
  return total;
}

double log_density(const CircuitGraph& circuit, std::span<const double> z, EvalStats* stats) {
  if (z.size() != circuit.num_dims) {
    std::ostringstream msg;
    msg << "dimension mismatch: circuit has " << circuit.num_dims << " dims, input has " << z.size();
    throw Error(msg.str());
  }
  std::vector<double> value(circuit.nodes.size());
  std::vector<double> scratch;
  for (std::size_t id = 0; id < circuit.nodes.size(); ++id) {
    const Node& node = circuit.nodes[id];
    double v = 0.0;
    switch (node.kind) {
      case NodeKind::kLeaf:
        v = leaf_log_density(node.leaf, z[node.dim]);
        break;
      case NodeKind::kSum:
        scratch.resize(node.children.size());
        for (std::size_t c = 0; c < node.children.size(); ++c)
          scratch[c] = node.log_weights[c] + value[node.children[c]];
        v = logsumexp(scratch);
        break;
      case NodeKind::kProduct:
        for (std::size_t child : node.children) v += value[child];
        break;
    }
    if (std::isnan(v)) throw Error("NaN at node " + std::to_string(id) + " (" + to_string(node.kind) + ")");
    value[id] = v;
  }
  if (stats != nullptr) {
    ++stats->passes;
    stats->node_visits += circuit.nodes.size();
  }
  return value[circuit.root];
}

namespace {

class CircuitBuilder {
 public:
  CircuitBuilder(CircuitGraph& graph, std::uint64_t seed) : graph_(graph), rng_(seed) {}

  // Returns the id of the node built over `scope` at `layer` (1 = lowest).
  std::size_t build(std::vector<std::size_t> scope, std::size_t layer) {
    if (layer == 0 || (scope.size() == 1 && is_product_layer(layer))) return make_leaf(scope.front());
    if (is_product_layer(layer)) {
      rng_.shuffle(scope);
      const std::size_t blocks = layer == 1 ? scope.size() : std::min(graph_.branching, scope.size());
      Node node;
      node.kind = NodeKind::kProduct;
      std::size_t begin = 0;
      for (std::size_t b = 0; b < blocks; ++b) {
        const std::size_t end = begin + (scope.size() - begin) / (blocks - b);
        std::vector<std::size_t> block(scope.begin() + static_cast<std::ptrdiff_t>(begin),
                                       scope.begin() + static_cast<std::ptrdiff_t>(end));
        node.children.push_back(build(std::move(block), layer - 1));
        begin = end;
      }
      return push(std::move(node));
    }
    Node node;
    node.kind = NodeKind::kSum;
    std::vector<double> raw;
    for (std::size_t r = 0; r < graph_.branching; ++r) {
      node.children.push_back(build(scope, layer - 1));
      raw.push_back(std::log(rng_.uniform(0.5, 1.5)));
    }
    const double norm = logsumexp(raw);
    for (double w : raw) node.log_weights.push_back(w - norm);
    return push(std::move(node));
  }

 private:
  static bool is_product_layer(std::size_t layer) { return layer % 2 == 1; }

  std::size_t make_leaf(std::size_t dim) {
    Node node;
    node.kind = NodeKind::kLeaf;
    node.dim = dim;
    node.leaf = LeafParams::from_constrained(0.0, {1.0, 1.0, 1.0}, rng_.normal(0.0, 0.1), 1.0, 5.0);
    return push(std::move(node));
  }

  std::size_t push(Node node) {
    graph_.nodes.push_back(std::move(node));
    return graph_.nodes.size() - 1;
  }

  CircuitGraph& graph_;
  Rng rng_;
};

}  // namespace

CircuitGraph build_random_circuit(std::size_t num_dims, std::size_t depth, std::size_t branching,
                                  std::uint64_t seed) {
  if (depth < 1) throw Error("circuit depth must be at least 1");
  if (branching < 2) throw Error("circuit branching must be at least 2");
  if (num_dims < 2)
    throw Error("infeasible scope partition: a product layer needs at least 2 dimensions to split into "
                "disjoint scopes, got num_dims=" + std::to_string(num_dims));
  // Each sum layer multiplies the leaf count by `branching`.
  double leaves = static_cast<double>(num_dims);
  for (std::size_t layer = 2; layer <= depth; layer += 2) leaves *= static_cast<double>(branching);
  if (leaves > 5e6)
    throw Error("infeasible circuit size: depth=" + std::to_string(depth) + " branching=" +
                std::to_string(branching) + " would create more than 5e6 leaves");

  CircuitGraph graph;
  graph.num_dims = num_dims;
  graph.depth = depth;
  graph.branching = branching;
  graph.seed = seed;
  std::vector<std::size_t> scope(num_dims);
  for (std::size_t i = 0; i < num_dims; ++i) scope[i] = i;
  CircuitBuilder builder(graph, seed);
  graph.root = builder.build(std::move(scope), depth);
  return graph;
}

namespace {

using Scope = std::vector<bool>;

bool disjoint(const Scope& a, const Scope& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] && b[i]) return false;
  return true;
}

}  // namespace

std::vector<Violation> validate(const CircuitGraph& circuit) {
  std::vector<Violation> out;
  const std::size_t n = circuit.nodes.size();
  auto report = [&out](std::size_t node, std::string kind, std::string message) {
    out.push_back({node, std::move(kind), std::move(message)});
  };
  if (n == 0) {
    report(0, "topology", "circuit has no nodes");
    return out;
  }
  std::vector<Scope> scope(n, Scope(circuit.num_dims, false));
  for (std::size_t id = 0; id < n; ++id) {
    const Node& node = circuit.nodes[id];
    bool children_ok = true;
    for (std::size_t c : node.children) {
      if (c >= id) {
        report(id, "topology", "node " + std::to_string(id) + " reads child " + std::to_string(c) +
                                   " that does not precede it");
        children_ok = false;
      }
    }
    if (!children_ok) continue;
    switch (node.kind) {
      case NodeKind::kLeaf: {
        if (!node.children.empty()) report(id, "topology", "leaf " + std::to_string(id) + " has children");
        if (node.dim >= circuit.num_dims) {
          report(id, "scope", "leaf " + std::to_string(id) + " dimension out of range");
          break;
        }
        scope[id][node.dim] = true;
        const LeafParams& p = node.leaf;
        if (!std::isfinite(p.gate_logit) || !std::isfinite(p.loc) || !std::isfinite(p.log_scale) ||
            !std::isfinite(p.dof_raw))
          report(id, "parameters", "leaf " + std::to_string(id) + " has non-finite parameters");
        break;
      }
      case NodeKind::kSum: {
        if (node.children.empty()) {
          report(id, "topology", "sum " + std::to_string(id) + " has no children");
          break;
        }
        scope[id] = scope[node.children.front()];
        for (std::size_t c : node.children) {
          if (scope[c] != scope[id]) {
            report(id, "smoothness", "sum " + std::to_string(id) + " mixes children with different scopes");
            break;
          }
        }
        if (node.log_weights.size() != node.children.size()) {
          report(id, "normalization", "sum " + std::to_string(id) + " has " +
                                          std::to_string(node.log_weights.size()) + " weights for " +
                                          std::to_string(node.children.size()) + " children");
          break;
        }
        double total = 0.0;
        for (double lw : node.log_weights) total += std::exp(lw);
        if (std::abs(total - 1.0) > 1e-9)
          report(id, "normalization", "sum " + std::to_string(id) + " weights sum to " + std::to_string(total));
        break;
      }
      case NodeKind::kProduct: {
        if (node.children.empty()) {
          report(id, "topology", "product " + std::to_string(id) + " has no children");
          break;
        }
        bool overlap = false;
        for (std::size_t c : node.children) {
          if (!disjoint(scope[id], scope[c])) overlap = true;
          for (std::size_t i = 0; i < circuit.num_dims; ++i)
            if (scope[c][i]) scope[id][i] = true;
        }
        if (overlap)
          report(id, "decomposability", "product " + std::to_string(id) + " has children with overlapping scopes");
        break;
      }
    }
  }
  if (circuit.root >= n) {
    report(circuit.root, "topology", "root id out of range");
    return out;
  }
  const Scope& root_scope = scope[circuit.root];
  if (std::find(root_scope.begin(), root_scope.end(), false) != root_scope.end())
    report(circuit.root, "scope", "root " + std::to_string(circuit.root) + " does not cover every dimension");
  return out;
}

void renormalize_sum_weights(CircuitGraph& circuit) {
  for (Node& node : circuit.nodes) {
    if (node.kind != NodeKind::kSum) continue;
    const double norm = logsumexp(node.log_weights);
    for (double& lw : node.log_weights) lw -= norm;
  }
}

CircuitLayout compile_layout(const CircuitGraph& circuit) {
  CircuitLayout layout;
  const std::size_t n = circuit.nodes.size();
  layout.kinds.resize(n);
  layout.children.resize(n);
  layout.slot.resize(n);
  layout.root = circuit.root;
  for (std::size_t id = 0; id < n; ++id) {
    const Node& node = circuit.nodes[id];
    layout.kinds[id] = node.kind;
    layout.children[id] = node.children;
    if (node.kind == NodeKind::kLeaf) {
      layout.slot[id] = layout.leaf_dims.size();
      layout.leaf_dims.push_back(node.dim);
    } else if (node.kind == NodeKind::kSum) {
      layout.slot[id] = layout.num_sum_weights;
      layout.num_sum_weights += node.children.size();
    }
  }
  return layout;
}

}  // namespace pcnet
