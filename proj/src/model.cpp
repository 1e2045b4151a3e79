#include "pcnet/model.hpp"

#include "pcnet/numeric.hpp"

namespace pcnet {

double log_density(const PcNet& model, std::span<const double> h, EvalStats* stats) {
  const std::vector<double> z = project(model.bottleneck, h);
  return log_density(model.circuit, z, stats);
}

ParameterSet pack_parameters(const PcNet& model) {
  ParameterSet p;
  auto& gate = p[param_id::kLeafGate];
  auto& weights = p[param_id::kLeafWeights];
  auto& loc = p[param_id::kLeafLoc];
  auto& log_scale = p[param_id::kLeafLogScale];
  auto& dof = p[param_id::kLeafDofRaw];
  auto& sum_w = p[param_id::kSumLogWeights];
  for (const Node& node : model.circuit.nodes) {
    if (node.kind == NodeKind::kLeaf) {
      gate.push_back(node.leaf.gate_logit);
      weights.insert(weights.end(), node.leaf.weight_logits.begin(), node.leaf.weight_logits.end());
      loc.push_back(node.leaf.loc);
      log_scale.push_back(node.leaf.log_scale);
      dof.push_back(node.leaf.dof_raw);
    } else if (node.kind == NodeKind::kSum) {
      sum_w.insert(sum_w.end(), node.log_weights.begin(), node.log_weights.end());
    }
  }
  p[param_id::kW1] = model.bottleneck.w1;
  p[param_id::kB1] = model.bottleneck.b1;
  p[param_id::kW2] = model.bottleneck.w2;
  p[param_id::kB2] = model.bottleneck.b2;
  return p;
}

void unpack_parameters(const ParameterSet& params, PcNet& model) {
  const auto& gate = params.at(param_id::kLeafGate);
  const auto& weights = params.at(param_id::kLeafWeights);
  const auto& loc = params.at(param_id::kLeafLoc);
  const auto& log_scale = params.at(param_id::kLeafLogScale);
  const auto& dof = params.at(param_id::kLeafDofRaw);
  const auto& sum_w = params.at(param_id::kSumLogWeights);
  const std::size_t leaves = model.circuit.num_leaves();
  if (gate.size() != leaves || weights.size() != kNumLeafFamilies * leaves || loc.size() != leaves ||
      log_scale.size() != leaves || dof.size() != leaves || sum_w.size() != model.circuit.num_sum_weights())
    throw Error("parameter set does not match the circuit structure");
  std::size_t leaf = 0;
  std::size_t offset = 0;
  for (Node& node : model.circuit.nodes) {
    if (node.kind == NodeKind::kLeaf) {
      node.leaf.gate_logit = gate[leaf];
      for (std::size_t k = 0; k < kNumLeafFamilies; ++k)
        node.leaf.weight_logits[k] = weights[kNumLeafFamilies * leaf + k];
      node.leaf.loc = loc[leaf];
      node.leaf.log_scale = log_scale[leaf];
      node.leaf.dof_raw = dof[leaf];
      ++leaf;
    } else if (node.kind == NodeKind::kSum) {
      for (double& lw : node.log_weights) lw = sum_w[offset++];
    }
  }
  Bottleneck& b = model.bottleneck;
  const auto& w1 = params.at(param_id::kW1);
  const auto& b1 = params.at(param_id::kB1);
  const auto& w2 = params.at(param_id::kW2);
  const auto& b2 = params.at(param_id::kB2);
  if (w1.size() != b.w1.size() || b1.size() != b.b1.size() || w2.size() != b.w2.size() || b2.size() != b.b2.size())
    throw Error("parameter set does not match the bottleneck shapes");
  b.w1 = w1;
  b.b1 = b1;
  b.w2 = w2;
  b.b2 = b2;
}

TapeModel::TapeModel(Tape& tape, const PcNet& model)
    : tape_(tape),
      bottleneck_(model.bottleneck),
      layout_(std::make_shared<const CircuitLayout>(compile_layout(model.circuit))) {
  leaf_dims_ = std::shared_ptr<const std::vector<std::size_t>>(layout_, &layout_->leaf_dims);
  const ParameterSet p = pack_parameters(model);
  w1_ = tape.parameter(param_id::kW1, p.at(param_id::kW1));
  b1_ = tape.parameter(param_id::kB1, p.at(param_id::kB1));
  w2_ = tape.parameter(param_id::kW2, p.at(param_id::kW2));
  b2_ = tape.parameter(param_id::kB2, p.at(param_id::kB2));
  gate_ = tape.sigmoid(tape.parameter(param_id::kLeafGate, p.at(param_id::kLeafGate)));
  log_weights_ =
      tape.log_softmax_rows(tape.parameter(param_id::kLeafWeights, p.at(param_id::kLeafWeights)), kNumLeafFamilies);
  loc_ = tape.parameter(param_id::kLeafLoc, p.at(param_id::kLeafLoc));
  log_scale_ = tape.parameter(param_id::kLeafLogScale, p.at(param_id::kLeafLogScale));
  dof_ = tape.add_scalar(tape.softplus(tape.parameter(param_id::kLeafDofRaw, p.at(param_id::kLeafDofRaw))), 1.0);
  t_norm_ = tape.student_t_log_norm(dof_);
  sum_weights_ = tape.parameter(param_id::kSumLogWeights, p.at(param_id::kSumLogWeights));
}

Slot TapeModel::log_density(std::span<const double> h) {
  const Bottleneck& b = bottleneck_;
  if (h.size() != b.input_dim)
    throw Error("shape mismatch: bottleneck expects " + std::to_string(b.input_dim) + " inputs, got " +
                std::to_string(h.size()));
  Tape& t = tape_;
  const Slot x = t.constant(std::vector<double>(h.begin(), h.end()));
  const Slot mid = t.relu(t.add(t.matvec(w1_, b.hidden_dim, b.input_dim, x), b1_));
  const Slot z = t.add(t.matvec(w2_, b.output_dim, b.hidden_dim, mid), b2_);
  const Slot zl = t.gather(z, leaf_dims_);
  const Slot components = t.stack_columns({
      t.gaussian_log_pdf(zl, loc_, log_scale_),
      t.laplace_log_pdf(zl, loc_, log_scale_),
      t.student_t_log_pdf(zl, loc_, log_scale_, dof_, t_norm_),
  });
  const Slot mixture = t.logsumexp_rows(t.add(components, log_weights_), kNumLeafFamilies);
  const Slot leaves = t.mul(gate_, mixture);
  return t.circuit_pass(leaves, sum_weights_, layout_);
}

}  // namespace pcnet
