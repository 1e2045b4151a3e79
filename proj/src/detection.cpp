#include "pcnet/detection.hpp"

#include <algorithm>
#include <cmath>

#include "pcnet/numeric.hpp"

namespace pcnet {

namespace {

struct ClassCounts {
  std::size_t pos = 0;
  std::size_t neg = 0;
};

ClassCounts count_classes(std::span<const ScoredSample> scores, const char* who) {
  ClassCounts c;
  for (const ScoredSample& s : scores) {
    if (!std::isfinite(s.nll)) throw Error(std::string(who) + ": non-finite score");
    (s.label == Label::kHallucinated ? c.pos : c.neg) += 1;
  }
  if (c.pos == 0 || c.neg == 0) throw Error("degenerate labels");
  return c;
}

double f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 || tp == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

std::vector<ScoredSample> sorted_by_score(std::span<const ScoredSample> scores) {
  std::vector<ScoredSample> v(scores.begin(), scores.end());
  std::stable_sort(v.begin(), v.end(), [](const ScoredSample& a, const ScoredSample& b) { return a.nll < b.nll; });
  return v;
}

}  // namespace

double nll_score(const PcNet& model, std::span<const double> h, EvalStats* stats) {
  return -log_density(model, h, stats);
}

std::vector<double> threshold_candidates(std::span<const ScoredSample> scores) {
  const auto sorted = sorted_by_score(scores);
  std::vector<double> out;
  if (sorted.empty()) return out;
  out.push_back(sorted.front().nll - 1.0);
  for (std::size_t i = 1; i < sorted.size(); ++i)
    if (sorted[i].nll != sorted[i - 1].nll) out.push_back(0.5 * (sorted[i - 1].nll + sorted[i].nll));
  return out;
}

Threshold calibrate_threshold(std::span<const ScoredSample> scores) {
  const ClassCounts counts = count_classes(scores, "calibrate_threshold");
  const auto sorted = sorted_by_score(scores);
  // Sweep upward: everything at or above the cut is predicted positive.
  std::size_t tp = counts.pos;
  std::size_t fp = counts.neg;
  Threshold best{sorted.front().nll - 1.0, f1_from_counts(tp, fp, 0)};
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
    (sorted[i].label == Label::kHallucinated ? tp : fp) -= 1;
    if (sorted[i + 1].nll == sorted[i].nll) continue;
    const double f1 = f1_from_counts(tp, fp, counts.pos - tp);
    if (f1 > best.f1) best = {0.5 * (sorted[i].nll + sorted[i + 1].nll), f1};
  }
  return best;
}

double auroc(std::span<const ScoredSample> scores) {
  const ClassCounts counts = count_classes(scores, "auroc");
  const auto sorted = sorted_by_score(scores);
  // Sum of (1-based, tie-averaged) ranks of the positives.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    std::size_t pos_in_group = 0;
    while (j < sorted.size() && sorted[j].nll == sorted[i].nll) {
      if (sorted[j].label == Label::kHallucinated) ++pos_in_group;
      ++j;
    }
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    rank_sum += avg_rank * static_cast<double>(pos_in_group);
    i = j;
  }
  const double np = static_cast<double>(counts.pos);
  const double nn = static_cast<double>(counts.neg);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double f1_at(std::span<const ScoredSample> scores, double tau) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const ScoredSample& s : scores) {
    const bool flagged = s.nll >= tau;
    const bool positive = s.label == Label::kHallucinated;
    if (flagged && positive) ++tp;
    if (flagged && !positive) ++fp;
    if (!flagged && positive) ++fn;
  }
  return f1_from_counts(tp, fp, fn);
}

}  // namespace pcnet
