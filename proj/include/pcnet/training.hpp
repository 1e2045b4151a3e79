#ifndef PCNET_TRAINING_HPP
#define PCNET_TRAINING_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "pcnet/autodiff.hpp"
#include "pcnet/model.hpp"

namespace pcnet {

using HiddenState = std::vector<double>;

/// Factual (positive) and hallucinated (negative) hidden states, paired by
/// index.
struct PairedBatch {
  std::vector<HiddenState> positives;
  std::vector<HiddenState> negatives;
};

void check_batch(const PairedBatch& batch);

struct TrainConfig {
  double alpha = 0.8;
  double gamma = 5.0;
  double lr = 1e-3;
  double weight_decay = 1e-5;
  std::size_t epochs = 50;
  std::size_t batch_size = 8;
  double clip_norm = 1.0;
  std::uint64_t seed = 42;

  void check() const;
};

struct LossBreakdown {
  double total = 0.0;
  double generative = 0.0;   // mean -log C(z+)
  double contrastive = 0.0;  // mean max(0, gamma + log C(z-) - log C(z+))
  std::vector<double> pos_log_density;
  std::vector<double> neg_log_density;
};

/// alpha * generative + (1 - alpha) * contrastive, evaluated without a tape.
LossBreakdown composite_loss(const PcNet& model, const PairedBatch& batch, double alpha, double gamma);

/// Same objective recorded on a tape; returns the loss slot.
Slot record_composite_loss(Tape& tape, TapeModel& model, const PairedBatch& batch, double alpha, double gamma,
                           LossBreakdown* breakdown = nullptr);

struct AdamState {
  ParameterSet first_moment;
  ParameterSet second_moment;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Decoupled weight decay then bias-corrected Adam. Keys for which
/// `decay` returns false skip weight decay.
void adam_step(ParameterSet& params, const GradientBundle& grads, AdamState& state, double lr, double weight_decay,
               const std::function<bool(const std::string&)>& decay = {});

/// Model-level step: sum-node log-weights are exempt from weight decay and
/// re-projected onto the simplex after the update.
void adam_step(PcNet& model, const GradientBundle& grads, AdamState& state, double lr, double weight_decay);

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double total_loss = 0.0;
  double pos_nll = 0.0;
  double neg_nll = 0.0;
  double margin_violation_rate = 0.0;
};

struct TrainResult {
  PcNet model;
  std::vector<EpochStats> history;
  std::vector<double> post_clip_norms;  // one per optimizer step
  bool diverged = false;
  std::string error;
};

/// Mini-batch training over the whole dataset for config.epochs epochs.
/// Positives and negatives are shuffled independently each epoch from a
/// seed-derived stream and paired by position. On a non-finite loss the run
/// stops and returns the last finite model with diverged = true.
TrainResult train(PcNet model, const PairedBatch& dataset, const TrainConfig& config);

/// epoch,total_loss,pos_nll,neg_nll,margin_violation_rate with round-trip
/// precision.
void write_loss_csv(std::ostream& os, const std::vector<EpochStats>& history);

}  // namespace pcnet

#endif  // PCNET_TRAINING_HPP
