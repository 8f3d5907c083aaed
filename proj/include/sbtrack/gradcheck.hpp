// Finite-difference verification of analytic gradients.

#pragma once

#include "sbtrack/encoder.hpp"
#include "sbtrack/rng.hpp"
#include "sbtrack/sbto.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

namespace sbtrack {

struct GradCheckOptions {
  long max_coords = 0;      // 0 checks every parameter, otherwise a seeded subsample
  std::uint64_t seed = 7;
  double floor = 1e-5;      // denominator floor of the relative error
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  long checked = 0;
  long skipped = 0;  // coordinates where the perturbation changed a discrete choice
};

/// A loss evaluation for grad_check: value, optionally the analytic
/// gradient, and a signature of every discrete choice the loss made.
struct LossProbe {
  double value = 0.0;
  GradientSet grad;
  std::vector<std::size_t> signature;
};

using LossFunction = std::function<LossProbe(const ModelParams&, bool with_grad)>;

/// Central differences of f against its analytic gradient. A coordinate is
/// skipped when +eps or -eps changes the signature, since the loss is not
/// differentiable across such a switch.
inline GradCheckReport grad_check(const ModelParams& p, const LossFunction& f, double eps,
                                  const GradCheckOptions& opt = {}) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  const LossProbe base = f(p, true);
  if (!std::isfinite(base.value)) throw NumericError("grad_check: non-finite loss");

  struct Coord {
    std::size_t tensor;
    Eigen::Index index;
  };
  std::vector<Coord> coords;
  {
    const auto views = p.w.views();
    for (std::size_t t = 0; t < views.size(); ++t) {
      for (Eigen::Index i = 0; i < views[t].size(); ++i) coords.push_back({t, i});
    }
  }
  if (opt.max_coords > 0 && static_cast<long>(coords.size()) > opt.max_coords) {
    Rng rng(opt.seed);
    rng.shuffle(coords);
    coords.resize(static_cast<std::size_t>(opt.max_coords));
  }

  GradCheckReport rep;
  const auto gviews = base.grad.views();
  ModelParams q = p;
  for (const Coord& c : coords) {
    double& w = q.w.views()[c.tensor].data[c.index];
    const double orig = w;
    w = orig + eps;
    const LossProbe plus = f(q, false);
    w = orig - eps;
    const LossProbe minus = f(q, false);
    w = orig;
    if (!std::isfinite(plus.value) || !std::isfinite(minus.value)) throw NumericError("grad_check: non-finite loss");
    if (plus.signature != base.signature || minus.signature != base.signature) {
      ++rep.skipped;
      continue;
    }
    const double numeric = (plus.value - minus.value) / (2.0 * eps);
    const double analytic = gviews[c.tensor].data[c.index];
    const double abs_err = std::abs(analytic - numeric);
    const double rel = abs_err / std::max({std::abs(analytic), std::abs(numeric), opt.floor});
    rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
    rep.max_rel_error = std::max(rep.max_rel_error, rel);
    ++rep.checked;
  }
  return rep;
}

/// Loss function of one training episode with a fixed episode seed.
inline LossFunction episode_loss(const TrainingClip& clip, const TrainConfig& cfg, std::uint64_t episode_seed = 0) {
  return [&clip, cfg, episode_seed](const ModelParams& q, bool with_grad) {
    EpisodeRecord r = sbto_episode(clip, q, cfg, with_grad, episode_seed);
    LossProbe probe;
    probe.value = r.total;
    if (with_grad) probe.grad = std::move(r.grad);
    for (const auto& s : r.steps) {
      probe.signature.push_back(s.selection.size());
      probe.signature.insert(probe.signature.end(), s.selection.begin(), s.selection.end());
      // margin hinges that are active (1) or not (0)
      const double sg = sigmoid(s.gt_score);
      for (const auto& t : s.retained) probe.signature.push_back(cfg.alpha - sg + sigmoid(t.score) > 0.0 ? 1 : 0);
    }
    return probe;
  };
}

/// grad_check on the full episode loss of a clip.
inline GradCheckReport grad_check(const ModelParams& p, const TrainingClip& clip, const TrainConfig& cfg, double eps,
                                  const GradCheckOptions& opt = {}, std::uint64_t episode_seed = 0) {
  return grad_check(p, episode_loss(clip, cfg, episode_seed), eps, opt);
}

}  // namespace sbtrack
