#ifndef PCNET_MODEL_HPP
#define PCNET_MODEL_HPP

#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pcnet/autodiff.hpp"
#include "pcnet/bottleneck.hpp"
#include "pcnet/circuit.hpp"

namespace pcnet {

/// Bottleneck followed by circuit: log C_root(f_phi(h)).
struct PcNet {
  CircuitGraph circuit;
  Bottleneck bottleneck;
};

double log_density(const PcNet& model, std::span<const double> h, EvalStats* stats = nullptr);

namespace param_id {
inline constexpr const char* kLeafGate = "circuit.leaf.gate_logit";
inline constexpr const char* kLeafWeights = "circuit.leaf.weight_logits";
inline constexpr const char* kLeafLoc = "circuit.leaf.loc";
inline constexpr const char* kLeafLogScale = "circuit.leaf.log_scale";
inline constexpr const char* kLeafDofRaw = "circuit.leaf.dof_raw";
inline constexpr const char* kSumLogWeights = "circuit.sum.log_weights";
inline constexpr const char* kW1 = "bottleneck.w1";
inline constexpr const char* kB1 = "bottleneck.b1";
inline constexpr const char* kW2 = "bottleneck.w2";
inline constexpr const char* kB2 = "bottleneck.b2";
}  // namespace param_id

/// Flat parameter groups keyed by param_id. Leaves appear in node order,
/// weight logits as rows of three.
using ParameterSet = std::map<std::string, std::vector<double>>;

ParameterSet pack_parameters(const PcNet& model);
/// Writes a parameter set back into a model with the same structure.
void unpack_parameters(const ParameterSet& params, PcNet& model);

/// Records log C_root(f_phi(h)) for many inputs onto one tape.
///
/// Leaf-level transforms (gates, mixture log-weights, dof, Student-T
/// normalizers) are recorded once at construction and shared by every
/// log_density call.
class TapeModel {
 public:
  TapeModel(Tape& tape, const PcNet& model);

  Slot log_density(std::span<const double> h);

 private:
  Tape& tape_;
  const Bottleneck& bottleneck_;
  std::shared_ptr<const CircuitLayout> layout_;
  std::shared_ptr<const std::vector<std::size_t>> leaf_dims_;
  Slot w1_, b1_, w2_, b2_;
  Slot gate_, log_weights_, loc_, log_scale_, dof_, t_norm_, sum_weights_;
};

}  // namespace pcnet

#endif  // PCNET_MODEL_HPP
