#include "pcnet/training.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include "pcnet/numeric.hpp"
#include "pcnet/rng.hpp"

namespace pcnet {

void check_batch(const PairedBatch& batch) {
  if (batch.positives.size() != batch.negatives.size())
    throw Error("paired batch has " + std::to_string(batch.positives.size()) + " positives but " +
                std::to_string(batch.negatives.size()) + " negatives");
  if (batch.positives.empty()) throw Error("paired batch is empty");
  for (std::size_t i = 0; i < batch.positives.size(); ++i)
    if (!all_finite(batch.positives[i]) || !all_finite(batch.negatives[i]))
      throw Error("paired batch has a non-finite hidden state at index " + std::to_string(i));
}

void TrainConfig::check() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error("alpha must lie in [0, 1]");
  if (!(gamma > 0.0)) throw Error("gamma must be positive");
  if (!(lr >= 0.0)) throw Error("lr must be non-negative");
  if (!(weight_decay >= 0.0)) throw Error("weight_decay must be non-negative");
  if (batch_size == 0) throw Error("batch_size must be at least 1");
  if (!(clip_norm > 0.0)) throw Error("clip_norm must be positive");
}

namespace {

void finish_breakdown(LossBreakdown& out, double alpha, double gamma) {
  const std::size_t n = out.pos_log_density.size();
  double nll = 0.0;
  double margin = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lp = out.pos_log_density[i];
    const double ln = out.neg_log_density[i];
    if (!std::isfinite(lp) || !std::isfinite(ln)) throw Error("non-finite loss at sample " + std::to_string(i));
    nll -= lp;
    margin += std::max(0.0, gamma + ln - lp);
  }
  out.generative = nll / static_cast<double>(n);
  out.contrastive = margin / static_cast<double>(n);
  out.total = alpha * out.generative + (1.0 - alpha) * out.contrastive;
}

}  // namespace

LossBreakdown composite_loss(const PcNet& model, const PairedBatch& batch, double alpha, double gamma) {
  check_batch(batch);
  LossBreakdown out;
  for (std::size_t i = 0; i < batch.positives.size(); ++i) {
    out.pos_log_density.push_back(log_density(model, batch.positives[i]));
    out.neg_log_density.push_back(log_density(model, batch.negatives[i]));
  }
  finish_breakdown(out, alpha, gamma);
  return out;
}

Slot record_composite_loss(Tape& tape, TapeModel& model, const PairedBatch& batch, double alpha, double gamma,
                           LossBreakdown* breakdown) {
  check_batch(batch);
  const std::size_t n = batch.positives.size();
  std::vector<Slot> pos;
  std::vector<Slot> hinge;
  LossBreakdown local;
  for (std::size_t i = 0; i < n; ++i) {
    const Slot lp = model.log_density(batch.positives[i]);
    const Slot ln = model.log_density(batch.negatives[i]);
    local.pos_log_density.push_back(tape.scalar(lp));
    local.neg_log_density.push_back(tape.scalar(ln));
    pos.push_back(lp);
    hinge.push_back(tape.relu(tape.add_scalar(tape.sub(ln, lp), gamma)));
  }
  finish_breakdown(local, alpha, gamma);
  const double inv_n = 1.0 / static_cast<double>(n);
  const Slot generative = tape.scale(tape.sum(pos), -inv_n);
  const Slot contrastive = tape.scale(tape.sum(hinge), inv_n);
  const Slot loss = tape.sum({tape.scale(generative, alpha), tape.scale(contrastive, 1.0 - alpha)});
  if (breakdown != nullptr) *breakdown = std::move(local);
  return loss;
}

void adam_step(ParameterSet& params, const GradientBundle& grads, AdamState& state, double lr, double weight_decay,
               const std::function<bool(const std::string&)>& decay) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (auto& [id, p] : params) {
    auto it = grads.grads.find(id);
    if (it == grads.grads.end()) continue;
    const auto& g = it->second;
    if (g.size() != p.size()) throw Error("adam_step: gradient shape mismatch for " + id);
    auto& m = state.first_moment[id];
    auto& v = state.second_moment[id];
    if (m.empty()) {
      m.assign(p.size(), 0.0);
      v.assign(p.size(), 0.0);
    }
    const double shrink = (!decay || decay(id)) ? 1.0 - lr * weight_decay : 1.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p[i] = p[i] * shrink - lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

void adam_step(PcNet& model, const GradientBundle& grads, AdamState& state, double lr, double weight_decay) {
  ParameterSet params = pack_parameters(model);
  const std::vector<double> before = params.at(param_id::kSumLogWeights);
  adam_step(params, grads, state, lr, weight_decay,
            [](const std::string& id) { return id != param_id::kSumLogWeights; });
  unpack_parameters(params, model);
  // Only nodes whose weights moved are re-projected, so a zero step is exact.
  std::size_t offset = 0;
  for (Node& node : model.circuit.nodes) {
    if (node.kind != NodeKind::kSum) continue;
    bool moved = false;
    for (std::size_t c = 0; c < node.log_weights.size(); ++c) moved |= node.log_weights[c] != before[offset + c];
    offset += node.log_weights.size();
    if (!moved) continue;
    const double norm = logsumexp(node.log_weights);
    for (double& lw : node.log_weights) lw -= norm;
  }
}

TrainResult train(PcNet model, const PairedBatch& dataset, const TrainConfig& config) {
  config.check();
  check_batch(dataset);
  const std::size_t n = dataset.positives.size();
  TrainResult result;
  AdamState adam;
  PcNet last_good = model;  // last parameters with a finite loss
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, epoch));
    const std::vector<std::size_t> pos_order = rng.permutation(n);
    const std::vector<std::size_t> neg_order = rng.permutation(n);
    EpochStats stats;
    stats.epoch = epoch;
    std::size_t violations = 0;
    for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
      const std::size_t end = std::min(n, begin + config.batch_size);
      PairedBatch batch;
      for (std::size_t i = begin; i < end; ++i) {
        batch.positives.push_back(dataset.positives[pos_order[i]]);
        batch.negatives.push_back(dataset.negatives[neg_order[i]]);
      }
      Tape tape;
      TapeModel tape_model(tape, model);
      LossBreakdown loss;
      Slot loss_slot = 0;
      GradientBundle grads;
      try {
        loss_slot = record_composite_loss(tape, tape_model, batch, config.alpha, config.gamma, &loss);
        grads = tape.backward(loss_slot);
      } catch (const Error& e) {
        result.diverged = true;
        result.error = "epoch " + std::to_string(epoch) + ": " + e.what();
        result.model = std::move(last_good);
        return result;
      }
      last_good = model;
      grads = clip_global_norm(std::move(grads), config.clip_norm);
      result.post_clip_norms.push_back(grads.norm());
      adam_step(model, grads, adam, config.lr, config.weight_decay);

      const double batch_n = static_cast<double>(end - begin);
      stats.total_loss += loss.total * batch_n;
      stats.pos_nll += loss.generative * batch_n;
      for (std::size_t i = 0; i < loss.neg_log_density.size(); ++i) {
        stats.neg_nll -= loss.neg_log_density[i];
        if (config.gamma + loss.neg_log_density[i] - loss.pos_log_density[i] > 0.0) ++violations;
      }
    }
    const double dn = static_cast<double>(n);
    stats.total_loss /= dn;
    stats.pos_nll /= dn;
    stats.neg_nll /= dn;
    stats.margin_violation_rate = static_cast<double>(violations) / dn;
    result.history.push_back(stats);
  }
  result.model = std::move(model);
  return result;
}

void write_loss_csv(std::ostream& os, const std::vector<EpochStats>& history) {
  os << "epoch,total_loss,pos_nll,neg_nll,margin_violation_rate\n";
  char buf[256];
  for (const EpochStats& s : history) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g\n", s.epoch, s.total_loss, s.pos_nll, s.neg_nll,
                  s.margin_violation_rate);
    os << buf;
  }
}

}  // namespace pcnet
