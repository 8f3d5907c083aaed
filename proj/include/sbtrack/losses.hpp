// Tracklet ranking objectives and their gradients w.r.t. raw scores.

#pragma once

#include "sbtrack/encoder.hpp"

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace sbtrack {

struct ScoredBranch {
  double raw_score = 0.0;
  int ids_count = 0;
  bool is_gt = false;
};

/// Loss value plus dL/draw for every input branch. For losses taking a
/// separate ground-truth branch, gt_grad holds its derivative and
/// score_grads follows the order of the other branches.
struct LossOutput {
  double value = 0.0;
  double gt_grad = 0.0;
  std::vector<double> score_grads;
};

/// sum_neg max(0, alpha - s(gt) + s(neg)), s = logistic.
inline LossOutput margin_loss(const ScoredBranch& gt, std::span<const ScoredBranch> negatives, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("margin_loss: alpha must be positive");
  LossOutput out;
  out.score_grads.assign(negatives.size(), 0.0);
  const double sg = sigmoid(gt.raw_score);
  const double dsg = sg * (1.0 - sg);
  for (std::size_t i = 0; i < negatives.size(); ++i) {
    const double sn = sigmoid(negatives[i].raw_score);
    const double hinge = alpha - sg + sn;
    if (hinge > 0.0) {
      out.value += hinge;
      out.gt_grad -= dsg;
      out.score_grads[i] = sn * (1.0 - sn);
    }
  }
  return out;
}

/// Pairwise ranking: for each unordered pair with different IDS counts,
/// s(gamma * (f_i - f_j)) with gamma = +1 when IDS_i > IDS_j, else -1. Equal
/// IDS pairs carry no ordering and contribute nothing.
inline LossOutput rank_loss(std::span<const ScoredBranch> branches, double scale = 1.0) {
  LossOutput out;
  out.score_grads.assign(branches.size(), 0.0);
  for (std::size_t i = 0; i < branches.size(); ++i) {
    for (std::size_t j = i + 1; j < branches.size(); ++j) {
      const int di = branches[i].ids_count;
      const int dj = branches[j].ids_count;
      if (di == dj) continue;
      const double gamma = di > dj ? 1.0 : -1.0;
      const double s = sigmoid(gamma * (branches[i].raw_score - branches[j].raw_score));
      out.value += scale * s;
      const double d = scale * s * (1.0 - s) * gamma;
      out.score_grads[i] += d;
      out.score_grads[j] -= d;
    }
  }
  return out;
}

/// margin + rank_weight * rank over the retained set.
inline LossOutput step_loss(const ScoredBranch& gt, std::span<const ScoredBranch> retained, double alpha,
                            double rank_weight = 1.0) {
  LossOutput m = margin_loss(gt, retained, alpha);
  const LossOutput r = rank_loss(retained, rank_weight);
  m.value += r.value;
  for (std::size_t i = 0; i < retained.size(); ++i) m.score_grads[i] += r.score_grads[i];
  return m;
}

/// Binary cross-entropy on the logistic of the raw score:
/// softplus(raw) - y * raw, gradient s(raw) - y.
inline LossOutput cross_entropy_baseline(const ScoredBranch& branch, bool label) {
  const double x = branch.raw_score;
  const double y = label ? 1.0 : 0.0;
  const double softplus = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
  LossOutput out;
  out.value = softplus - y * x;
  out.score_grads = {sigmoid(x) - y};
  return out;
}

}  // namespace sbtrack
