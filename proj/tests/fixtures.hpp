// Hand-built tracking scenarios shared by the unit tests and the acceptance
// suite.

#pragma once

#include "sbtrack/association.hpp"
#include "sbtrack/core.hpp"

#include <Eigen/Dense>

#include <utility>
#include <vector>

namespace sbtrack::testing {

/// Appearance-only scorer comparing the newest feature with the one before
/// it: raw = kappa * (rho - distance). A lone detection scores kappa * rho.
inline TrackletScorer last_feature_scorer(double kappa, double rho) {
  return [kappa, rho](const Tracklet& t) {
    Tracklet out = t;
    const auto& d = t.detections();
    const double raw =
        d.size() == 1 ? kappa * rho : kappa * (rho - (d.back()->feature - d[d.size() - 2]->feature).norm());
    out.score = raw;
    return std::pair{raw, out};
  };
}

struct CrossingScenario {
  std::vector<std::vector<DetectionPtr>> frames;
  std::vector<Trajectory> gt;
  TrackletScorer scorer;
};

/// Two objects cross over six frames. A (features near (0,0)) walks down,
/// B (near (1,0)) walks up; they overlap at frame 3, where both features are
/// blurred, and A is hidden at frame 4 while B's feature drifts. Committing
/// frame by frame, handing B's frame-4 detection to A's track scores a
/// little higher, after which both identities switch. Over all six frames
/// the true assignment is the heaviest.
inline CrossingScenario occlusion_crossing() {
  CrossingScenario s;
  s.frames.resize(6);
  s.gt.resize(2);
  auto box = [](int who, int f) {
    const double dy = (who == 0 ? 12.0 : -12.0) * (f - 3.5);
    return BBox(20.0 + 10.0 * f, 100.0 + dy, 40.0, 40.0);
  };
  auto feature = [](int who, int f) -> Eigen::Vector2d {
    if (f == 3) return who == 0 ? Eigen::Vector2d(0.45, -0.15) : Eigen::Vector2d(0.90, 0.30);
    if (f == 4 && who == 1) return {1.00, -0.20};
    return who == 0 ? Eigen::Vector2d(0.0, 0.0) : Eigen::Vector2d(1.0, 0.0);
  };
  for (int who = 0; who < 2; ++who) s.gt[static_cast<std::size_t>(who)].track_id = who + 1;
  for (int f = 1; f <= 6; ++f) {
    for (int who = 0; who < 2; ++who) {
      s.gt[static_cast<std::size_t>(who)].entries.push_back({f, box(who, f)});
      if (who == 0 && f == 4) continue;
      Detection d;
      d.frame = f;
      d.box = box(who, f);
      d.feature = feature(who, f);
      d.gt_identity = who + 1;
      s.frames[static_cast<std::size_t>(f - 1)].push_back(make_detection(std::move(d)));
    }
  }
  s.scorer = last_feature_scorer(4.0, 0.95);
  return s;
}

}  // namespace sbtrack::testing
