// Synthetic scenarios standing in for detector output plus CNN embeddings,
// and training-clip sampling.

#pragma once

#include "sbtrack/core.hpp"
#include "sbtrack/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

namespace sbtrack {

struct Scenario {
  std::string name = "scenario";
  int frame_count = 0;
  int feature_dim = 0;
  std::vector<Trajectory> gt;                        // track_id = identity
  std::vector<std::vector<DetectionPtr>> detections;  // detections[frame - 1]

  const std::vector<DetectionPtr>& at_frame(int frame) const { return detections.at(static_cast<std::size_t>(frame - 1)); }

  std::size_t detection_count() const {
    std::size_t n = 0;
    for (const auto& f : detections) n += f.size();
    return n;
  }
};

/// Checks frame bounds, feature coverage and that every labelled detection
/// belongs to a ground-truth trajectory present at that frame.
inline void validate_scenario(const Scenario& s) {
  if (s.frame_count < 0 || static_cast<int>(s.detections.size()) != s.frame_count) {
    throw DataError("scenario '" + s.name + "': detections do not cover frame_count");
  }
  std::map<int, std::map<int, bool>> present;  // id -> frame -> present
  for (const auto& t : s.gt) {
    for (std::size_t i = 0; i < t.entries.size(); ++i) {
      const int f = t.entries[i].frame;
      if (f < 1 || f > s.frame_count) throw DataError("scenario '" + s.name + "': gt frame out of range");
      if (i > 0 && f <= t.entries[i - 1].frame) throw DataError("scenario '" + s.name + "': gt frames not increasing");
      present[t.track_id][f] = true;
    }
  }
  for (int f = 1; f <= s.frame_count; ++f) {
    for (const auto& d : s.at_frame(f)) {
      if (d->frame != f) throw DataError("scenario '" + s.name + "': detection filed under the wrong frame");
      if (d->feature.size() != s.feature_dim) {
        throw DataError("scenario '" + s.name + "': detection at frame " + std::to_string(f) + " lacks a " +
                        std::to_string(s.feature_dim) + "-d feature");
      }
      if (d->gt_identity) {
        auto it = present.find(*d->gt_identity);
        if (it == present.end() || !it->second.count(f)) {
          throw DataError("scenario '" + s.name + "': detection labelled " + std::to_string(*d->gt_identity) +
                          " at frame " + std::to_string(f) + " has no gt trajectory there");
        }
      }
    }
  }
}

struct SynthConfig {
  std::string name = "synth";
  int n_identities = 8;
  int n_frames = 100;
  double arena_width = 640.0;
  double arena_height = 480.0;
  double box_width_min = 30.0;
  double box_width_max = 50.0;
  double aspect = 2.0;  // height / width
  double speed_min = 1.0;
  double speed_max = 4.0;
  double motion_jitter = 0.5;
  int embedding_dim = 16;
  double identity_separation = 1.0;
  double appearance_noise = 0.3;
  double detection_noise = 1.0;
  double fp_rate = 0.05;
  double fn_rate = 0.05;
  double crossing_rate = 0.5;
  std::uint64_t seed = 1;

  void validate() const {
    auto rate = [](double r) { return r >= 0.0 && r <= 1.0; };
    if (n_identities < 0 || n_frames < 0 || embedding_dim < 1) throw std::invalid_argument("SynthConfig: bad sizes");
    if (!(identity_separation > 0.0)) throw std::invalid_argument("SynthConfig: identity_separation must be positive");
    if (!rate(fp_rate) || !rate(fn_rate) || !rate(crossing_rate)) throw std::invalid_argument("SynthConfig: rates must lie in [0,1]");
    if (appearance_noise < 0.0 || detection_noise < 0.0 || motion_jitter < 0.0) throw std::invalid_argument("SynthConfig: negative noise");
    if (!(box_width_min > 0.0) || box_width_max < box_width_min || !(aspect > 0.0)) throw std::invalid_argument("SynthConfig: bad box size");
    if (arena_width <= box_width_max || arena_height <= box_width_max * aspect) throw std::invalid_argument("SynthConfig: arena too small");
    if (speed_min < 0.0 || speed_max < speed_min) throw std::invalid_argument("SynthConfig: bad speed range");
  }
};

namespace detail {

/// Reflects x into [0, len] (motion bouncing between walls).
inline double fold(double x, double len) {
  const double period = 2.0 * len;
  double m = std::fmod(x, period);
  if (m < 0.0) m += period;
  return m <= len ? m : period - m;
}

inline Eigen::VectorXd random_direction(Rng& rng, int dim) {
  Eigen::VectorXd v(dim);
  do {
    for (int i = 0; i < dim; ++i) v(i) = rng.normal();
  } while (v.norm() < 1e-12);
  return v.normalized();
}

}  // namespace detail

/// Identity anchors on the sphere of radius `separation`, pairwise at least
/// `separation` apart. Rejects configurations it cannot place.
inline std::vector<Eigen::VectorXd> place_anchors(int n, int dim, double separation, Rng& rng) {
  std::vector<Eigen::VectorXd> anchors;
  constexpr int kTries = 2000;
  for (int i = 0; i < n; ++i) {
    bool placed = false;
    for (int t = 0; t < kTries && !placed; ++t) {
      Eigen::VectorXd a = separation * detail::random_direction(rng, dim);
      bool ok = true;
      for (const auto& b : anchors) {
        if ((a - b).norm() < separation) {
          ok = false;
          break;
        }
      }
      if (ok) {
        anchors.push_back(std::move(a));
        placed = true;
      }
    }
    if (!placed) {
      throw DataError("synth: cannot place " + std::to_string(n) + " identities " + std::to_string(separation) +
                      " apart in " + std::to_string(dim) + " dimensions");
    }
  }
  return anchors;
}

/// Identities move with constant velocity plus jitter, reflecting at the
/// arena walls. With probability crossing_rate an identity is aimed so that
/// it coincides with an earlier identity at a random mid-sequence frame.
inline Scenario synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  Scenario s;
  s.name = cfg.name;
  s.frame_count = cfg.n_frames;
  s.feature_dim = cfg.embedding_dim;
  s.detections.assign(static_cast<std::size_t>(cfg.n_frames), {});

  const auto anchors = place_anchors(cfg.n_identities, cfg.embedding_dim, cfg.identity_separation, rng);

  struct Motion {
    double w, h, x0, y0, vx, vy;
  };
  std::vector<Motion> motion;
  auto position = [&](const Motion& m, double t) {
    return std::pair{detail::fold(m.x0 + m.vx * t, cfg.arena_width - m.w), detail::fold(m.y0 + m.vy * t, cfg.arena_height - m.h)};
  };
  for (int i = 0; i < cfg.n_identities; ++i) {
    Motion m;
    m.w = rng.uniform(cfg.box_width_min, cfg.box_width_max);
    m.h = m.w * cfg.aspect;
    const double speed = rng.uniform(cfg.speed_min, cfg.speed_max);
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    m.vx = speed * std::cos(angle);
    m.vy = speed * std::sin(angle);
    m.x0 = rng.uniform(0.0, cfg.arena_width - m.w);
    m.y0 = rng.uniform(0.0, cfg.arena_height - m.h);
    if (i > 0 && cfg.n_frames > 2 && rng.bernoulli(cfg.crossing_rate)) {
      const auto& partner = motion[rng.below(static_cast<std::uint64_t>(i))];
      const int lo = std::max(1, cfg.n_frames / 5);
      const int hi = std::max(lo, (4 * cfg.n_frames) / 5);
      const double tc = static_cast<double>(lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))));
      auto [px, py] = position(partner, tc);
      // centre on the partner's centre at tc
      px += 0.5 * (partner.w - m.w);
      py += 0.5 * (partner.h - m.h);
      px = std::clamp(px, 0.0, cfg.arena_width - m.w);
      py = std::clamp(py, 0.0, cfg.arena_height - m.h);
      m.x0 = px - m.vx * tc;
      m.y0 = py - m.vy * tc;
    }
    motion.push_back(m);
  }

  for (int i = 0; i < cfg.n_identities; ++i) {
    Trajectory traj;
    traj.track_id = i + 1;
    for (int f = 1; f <= cfg.n_frames; ++f) {
      auto [x, y] = position(motion[static_cast<std::size_t>(i)], f - 1);
      x += rng.normal(0.0, cfg.motion_jitter);
      y += rng.normal(0.0, cfg.motion_jitter);
      traj.entries.push_back({f, BBox(x, y, motion[static_cast<std::size_t>(i)].w, motion[static_cast<std::size_t>(i)].h)});
    }
    s.gt.push_back(std::move(traj));
  }

  for (int f = 1; f <= cfg.n_frames; ++f) {
    auto& frame = s.detections[static_cast<std::size_t>(f - 1)];
    std::vector<Detection> dets;
    for (int i = 0; i < cfg.n_identities; ++i) {
      const BBox& g = s.gt[static_cast<std::size_t>(i)].entries[static_cast<std::size_t>(f - 1)].box;
      if (rng.bernoulli(cfg.fn_rate)) continue;
      Detection d;
      d.frame = f;
      const double w = std::max(1.0, g.width + rng.normal(0.0, 0.5 * cfg.detection_noise));
      const double h = std::max(1.0, g.height + rng.normal(0.0, 0.5 * cfg.detection_noise));
      d.box = BBox(g.left + rng.normal(0.0, cfg.detection_noise), g.top + rng.normal(0.0, cfg.detection_noise), w, h);
      d.confidence = rng.uniform(0.5, 1.0);
      d.feature = anchors[static_cast<std::size_t>(i)];
      for (int k = 0; k < cfg.embedding_dim; ++k) d.feature(k) += rng.normal(0.0, cfg.appearance_noise);
      d.gt_identity = i + 1;
      dets.push_back(std::move(d));
    }
    for (int i = 0; i < cfg.n_identities; ++i) {
      if (!rng.bernoulli(cfg.fp_rate)) continue;
      Detection d;
      d.frame = f;
      const double w = rng.uniform(cfg.box_width_min, cfg.box_width_max);
      d.box = BBox(rng.uniform(0.0, cfg.arena_width - w), rng.uniform(0.0, cfg.arena_height - w * cfg.aspect), w, w * cfg.aspect);
      d.confidence = rng.uniform(0.3, 0.9);
      // clutter appearance: on the anchor sphere but away from every anchor
      Eigen::VectorXd feat;
      for (int t = 0; t < 100; ++t) {
        feat = cfg.identity_separation * detail::random_direction(rng, cfg.embedding_dim);
        bool far = true;
        for (const auto& a : anchors) {
          if ((feat - a).norm() < 0.5 * cfg.identity_separation) {
            far = false;
            break;
          }
        }
        if (far) break;
      }
      for (int k = 0; k < cfg.embedding_dim; ++k) feat(k) += rng.normal(0.0, cfg.appearance_noise);
      d.feature = std::move(feat);
      dets.push_back(std::move(d));
    }
    rng.shuffle(dets);
    for (auto& d : dets) frame.push_back(make_detection(std::move(d)));
  }
  validate_scenario(s);
  return s;
}

struct ClipSampling {
  int n_length = 8;
  int candidates = 4;        // C
  int count = 60;            // clips to draw
  double near_weight = 8.0;  // candidate weight = 1 + near_weight * iou(gt box, candidate box)
  std::uint64_t seed = 1;
};

/// Weights used to draw the candidates of one frame.
inline std::vector<double> candidate_weights(const BBox& gt_box, const std::vector<DetectionPtr>& pool, double near_weight) {
  std::vector<double> w;
  w.reserve(pool.size());
  for (const auto& d : pool) w.push_back(1.0 + near_weight * iou(gt_box, d->box));
  return w;
}

/// Draws clips: a ground-truth run of n_length consecutive frames of one
/// identity, and per frame `candidates` detections of other identities or
/// clutter from the same frame, favouring ones overlapping the true box.
/// Candidates are drawn without replacement while the frame has enough.
inline std::vector<TrainingClip> sample_clips(const Scenario& s, const ClipSampling& opt) {
  if (opt.candidates < 1) throw std::invalid_argument("sample_clips: candidate count must be >= 1");
  if (opt.n_length < 2) throw std::invalid_argument("sample_clips: n_length must be >= 2");
  // identity -> frame -> detection
  std::map<int, std::map<int, DetectionPtr>> by_id;
  for (int f = 1; f <= s.frame_count; ++f) {
    for (const auto& d : s.at_frame(f)) {
      if (d->gt_identity) by_id[*d->gt_identity].emplace(f, d);
    }
  }
  struct Window {
    int identity;
    int start;
  };
  std::vector<Window> windows;
  for (const auto& [id, frames] : by_id) {
    for (const auto& [start, _] : frames) {
      bool ok = true;
      for (int k = 0; k < opt.n_length && ok; ++k) {
        const int f = start + k;
        auto it = frames.find(f);
        if (it == frames.end()) {
          ok = false;
          break;
        }
        bool has_other = false;
        for (const auto& d : s.at_frame(f)) {
          if (d != it->second && (!d->gt_identity || *d->gt_identity != id)) {
            has_other = true;
            break;
          }
        }
        ok = has_other;
      }
      if (ok) windows.push_back({id, start});
    }
  }
  if (windows.empty()) {
    throw DataError("sample_clips: scenario '" + s.name + "' has no identity with " + std::to_string(opt.n_length) +
                    " consecutive detected frames that also have candidates");
  }

  Rng rng = Rng(opt.seed).fork(0xC11F);
  std::vector<TrainingClip> clips;
  for (int c = 0; c < opt.count; ++c) {
    const Window w = windows[rng.below(windows.size())];
    TrainingClip clip;
    char key[64];
    std::snprintf(key, sizeof key, "/%06d", c);
    clip.key = s.name + key;
    for (int k = 0; k < opt.n_length; ++k) {
      const int f = w.start + k;
      const DetectionPtr& g = by_id.at(w.identity).at(f);
      std::vector<DetectionPtr> pool;
      for (const auto& d : s.at_frame(f)) {
        if (d != g && (!d->gt_identity || *d->gt_identity != w.identity)) pool.push_back(d);
      }
      const auto weights = candidate_weights(g->box, pool, opt.near_weight);
      std::vector<DetectionPtr> picked;
      std::vector<double> remaining = weights;
      for (int j = 0; j < opt.candidates; ++j) {
        double left = 0.0;
        for (double x : remaining) left += x;
        const bool with_replacement = !(left > 0.0);
        const std::size_t i = rng.weighted(with_replacement ? weights : remaining);
        picked.push_back(pool[i]);
        if (!with_replacement) remaining[i] = 0.0;
      }
      clip.gt.push_back(g);
      clip.candidates.push_back(std::move(picked));
    }
    clips.push_back(std::move(clip));
  }
  return clips;
}

}  // namespace sbtrack
