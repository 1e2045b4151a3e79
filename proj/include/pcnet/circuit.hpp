#ifndef PCNET_CIRCUIT_HPP
#define PCNET_CIRCUIT_HPP

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace pcnet {

inline constexpr std::size_t kNumLeafFamilies = 3;  // Gaussian, Laplace, Student-T

/// Parameters of one heterogeneous mixture leaf, stored unconstrained.
///
/// The three components share location and scale. Positivity of the scale
/// and dof > 1 come from the parameterization (log-scale, softplus + 1), so no
/// optimizer step can leave the valid region.
struct LeafParams {
  double gate_logit = 0.0;
  std::array<double, kNumLeafFamilies> weight_logits{};
  double loc = 0.0;
  double log_scale = 0.0;
  double dof_raw = 0.0;

  double gate() const;
  double scale() const;
  double dof() const;
  /// Log mixture weights (log-softmax of the logits).
  std::array<double, kNumLeafFamilies> log_weights() const;

  /// Builds raw parameters from constrained values. Zero weights map to -inf
  /// logits; weights need not be pre-normalized.
  static LeafParams from_constrained(double gate_logit, std::array<double, kNumLeafFamilies> weights,
                                     double loc, double scale, double dof);
};

double gaussian_log_pdf(double z, double loc, double scale);
double laplace_log_pdf(double z, double loc, double scale);
double student_t_log_pdf(double z, double loc, double scale, double dof);

/// sigmoid(g) * log sum_k w_k P_k(z | loc, scale, dof), evaluated in log space.
double leaf_log_density(const LeafParams& params, double z);

enum class NodeKind { kLeaf, kSum, kProduct };

const char* to_string(NodeKind kind);

struct Node {
  NodeKind kind = NodeKind::kLeaf;
  std::vector<std::size_t> children;
  std::vector<double> log_weights;  // sum nodes: one per child, normalized
  std::size_t dim = 0;              // leaf nodes: input dimension
  LeafParams leaf;                  // leaf nodes
};

/// Smooth, decomposable circuit. Nodes are stored in topological order
/// (children precede parents) and node ids are vector indices.
struct CircuitGraph {
  std::vector<Node> nodes;
  std::size_t root = 0;
  std::size_t num_dims = 0;
  std::size_t depth = 0;
  std::size_t branching = 0;
  std::uint64_t seed = 0;

  std::size_t size() const { return nodes.size(); }
  std::size_t num_leaves() const;
  std::size_t num_sum_weights() const;
};

/// Counts circuit passes and node visits. Owned by the caller, so concurrent
/// evaluations over a shared graph each pass their own instance.
struct EvalStats {
  std::size_t passes = 0;
  std::size_t node_visits = 0;
};

/// log C_root(z) in one bottom-up pass, visiting each node exactly once.
double log_density(const CircuitGraph& circuit, std::span<const double> z,
                   EvalStats* stats = nullptr);

/// Randomized layered construction.
///
/// Layer 1 (just above the leaves) is a product layer and layers alternate
/// product/sum up to `depth`, so the root is a product for odd depth and a sum
/// for even depth. A product node permutes its scope and splits it into
/// `branching` contiguous blocks; the lowest product layer splits into
/// singletons, one leaf per dimension. A sum node mixes `branching` replicas
/// of its scope, each built from fresh permutations.
CircuitGraph build_random_circuit(std::size_t num_dims, std::size_t depth, std::size_t branching,
                                  std::uint64_t seed);

struct Violation {
  std::size_t node = 0;
  std::string kind;  // "topology", "smoothness", "decomposability", "normalization", ...
  std::string message;
};

/// Structural check. Returns an empty list iff the circuit is well formed.
std::vector<Violation> validate(const CircuitGraph& circuit);

/// Re-projects every sum node's log-weights onto the simplex.
void renormalize_sum_weights(CircuitGraph& circuit);

/// Flat view of a circuit used by the differentiable pass: leaves are
/// numbered in node order and sum weights are concatenated in node order.
struct CircuitLayout {
  std::vector<NodeKind> kinds;
  std::vector<std::vector<std::size_t>> children;
  std::vector<std::size_t> slot;  // leaf index or sum-weight offset per node
  std::vector<std::size_t> leaf_dims;
  std::size_t root = 0;
  std::size_t num_sum_weights = 0;
};

CircuitLayout compile_layout(const CircuitGraph& circuit);

}  // namespace pcnet

#endif  // PCNET_CIRCUIT_HPP
