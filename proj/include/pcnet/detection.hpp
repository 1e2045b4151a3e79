#ifndef PCNET_DETECTION_HPP
#define PCNET_DETECTION_HPP

#include <span>
#include <vector>

#include "pcnet/model.hpp"

namespace pcnet {

enum class Label : int { kFactual = 0, kHallucinated = 1 };

struct ScoredSample {
  double nll = 0.0;
  Label label = Label::kFactual;
};

struct Threshold {
  double tau = 0.0;
  double f1 = 0.0;
};

/// -log C_root(f_phi(h)).
double nll_score(const PcNet& model, std::span<const double> h, EvalStats* stats = nullptr);

// Hallucinated is the positive class; a sample is flagged when nll >= tau.

/// Max-F1 threshold over candidate cut points: the midpoints between
/// consecutive distinct scores, plus one point below the smallest score
/// (the all-positive predictor). Ties go to the smallest tau.
Threshold calibrate_threshold(std::span<const ScoredSample> scores);

/// Candidate cut points swept by calibrate_threshold, ascending.
std::vector<double> threshold_candidates(std::span<const ScoredSample> scores);

/// Mann-Whitney AUROC, ties count one half.
double auroc(std::span<const ScoredSample> scores);

double f1_at(std::span<const ScoredSample> scores, double tau);

}  // namespace pcnet

#endif  // PCNET_DETECTION_HPP
