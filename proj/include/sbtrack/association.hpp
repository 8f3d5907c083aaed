// Inference-time data association.
//
// Online mode assigns each frame's detections to the active tracks with one
// Hungarian problem whose costs are the negated logistic scores of the
// extended tracklets. Near-online mode keeps a hypothesis tree per object,
// picks a globally consistent set of branches with a maximum-weight
// independent set every frame and commits decisions N frames late.
//
// Both modes accept any tracklet scorer; the ModelParams overloads use the
// learned encoder.

#pragma once

#include "sbtrack/core.hpp"
#include "sbtrack/encoder.hpp"
#include "sbtrack/hungarian.hpp"
#include "sbtrack/mwis.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sbtrack {

enum class AssocMode { online, mht };

inline std::string to_string(AssocMode m) { return m == AssocMode::online ? "online" : "mht"; }

inline AssocMode assoc_mode_from_string(const std::string& s) {
  if (s == "online") return AssocMode::online;
  if (s == "mht") return AssocMode::mht;
  throw std::invalid_argument("unknown association mode '" + s + "'");
}

struct AssocConfig {
  AssocMode mode = AssocMode::online;
  double iou_gate = 0.1;     // tau_g
  double score_gate = 0.5;   // tau_s, minimum logistic score of an accepted extension
  int mht_K = 3;             // leaves kept per hypothesis tree
  int nscan_N = 3;           // decision delay in frames
  int birth_min = 2;         // consecutive hits before a track is confirmed
  int death_max = 5;         // consecutive misses that end a track
  double det_conf_min = 0.0;
  double miss_penalty = 0.3;  // subtracted from the logistic score of a missed step
  MwisOptions mwis;

  void validate() const {
    if (iou_gate < 0.0 || iou_gate > 1.0) throw std::invalid_argument("AssocConfig: iou_gate outside [0,1]");
    if (!(score_gate > 0.0 && score_gate < 1.0)) throw std::invalid_argument("AssocConfig: score_gate outside (0,1)");
    if (mht_K < 1 || nscan_N < 0 || birth_min < 1 || death_max < 1) throw std::invalid_argument("AssocConfig: bad counts");
    if (det_conf_min < 0.0 || det_conf_min > 1.0) throw std::invalid_argument("AssocConfig: det_conf_min outside [0,1]");
    if (miss_penalty < 0.0) throw std::invalid_argument("AssocConfig: negative miss_penalty");
  }
};

/// Scores a tracklet, returning the raw score and the tracklet with its
/// refreshed cache (the contract of score()).
using TrackletScorer = std::function<std::pair<double, Tracklet>(const Tracklet&)>;

inline TrackletScorer encoder_scorer(const ModelParams& p) {
  return [&p](const Tracklet& t) { return score(t, p); };
}

/// Detections overlapping the tracklet's last box by at least tau_g, in
/// input order.
inline std::vector<DetectionPtr> gate(const Tracklet& t, std::span<const DetectionPtr> dets, double tau_g) {
  std::vector<DetectionPtr> out;
  if (t.empty()) return out;
  for (const auto& d : dets) {
    if (iou(t.back().box, d->box) >= tau_g) out.push_back(d);
  }
  return out;
}

/// One frame of detections per entry, entry i holding frame i + 1.
using FrameStream = std::span<const std::vector<DetectionPtr>>;

namespace detail {

inline std::vector<std::vector<DetectionPtr>> prefilter(FrameStream frames, double conf_min, int dim) {
  std::vector<std::vector<DetectionPtr>> out(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (const auto& d : frames[f]) {
      if (d->frame != static_cast<int>(f) + 1) {
        throw DataError("detection stream: frame " + std::to_string(d->frame) + " filed under frame " + std::to_string(f + 1));
      }
      if (dim >= 0 && d->feature.size() != dim) {
        throw DataError("detection at frame " + std::to_string(d->frame) + " has a " + std::to_string(d->feature.size()) +
                        "-d feature, model expects " + std::to_string(dim));
      }
      if (d->confidence >= conf_min) out[f].push_back(d);
    }
  }
  return out;
}

inline Trajectory to_trajectory(const std::vector<DetectionPtr>& dets, int id) {
  Trajectory t;
  t.track_id = id;
  for (const auto& d : dets) t.entries.push_back({d->frame, d->box});
  return t;
}

}  // namespace detail

// ------------------------------------------------------------------ online

inline std::vector<Trajectory> track_online(FrameStream frames, const TrackletScorer& scorer, const AssocConfig& cfg,
                                            int feature_dim = -1) {
  cfg.validate();
  const auto stream = detail::prefilter(frames, cfg.det_conf_min, feature_dim);

  struct Track {
    Tracklet t;
    int hits = 1;    // consecutive
    int misses = 0;  // consecutive
    bool confirmed = false;
  };
  std::vector<Track> active;
  std::vector<Tracklet> finished;

  for (const auto& dets : stream) {
    const auto nt = static_cast<Eigen::Index>(active.size());
    const auto nd = static_cast<Eigen::Index>(dets.size());
    Eigen::MatrixXd cost = Eigen::MatrixXd::Constant(nt, nd, kForbidden);
    std::map<std::pair<Eigen::Index, Eigen::Index>, Tracklet> extended;
    for (Eigen::Index i = 0; i < nt; ++i) {
      const Tracklet& t = active[static_cast<std::size_t>(i)].t;
      for (Eigen::Index j = 0; j < nd; ++j) {
        const DetectionPtr& d = dets[static_cast<std::size_t>(j)];
        if (iou(t.back().box, d->box) < cfg.iou_gate) continue;
        auto [raw, ext] = scorer(extend(t, d));
        cost(i, j) = -sigmoid(raw);
        extended.emplace(std::pair{i, j}, std::move(ext));
      }
    }
    std::vector<char> track_hit(active.size(), 0), det_used(dets.size(), 0);
    if (nt > 0 && nd > 0) {
      for (auto [i, j] : hungarian(cost)) {
        if (-cost(i, j) < cfg.score_gate) continue;
        Track& tr = active[static_cast<std::size_t>(i)];
        tr.t = std::move(extended.at({i, j}));
        ++tr.hits;
        tr.misses = 0;
        if (tr.hits >= cfg.birth_min) tr.confirmed = true;
        track_hit[static_cast<std::size_t>(i)] = 1;
        det_used[static_cast<std::size_t>(j)] = 1;
      }
    }
    std::vector<Track> next;
    for (std::size_t i = 0; i < active.size(); ++i) {
      Track& tr = active[i];
      if (!track_hit[i]) {
        tr.hits = 0;
        ++tr.misses;
        if (!tr.confirmed) continue;  // tentative tracks die on their first miss
        if (tr.misses >= cfg.death_max) {
          finished.push_back(std::move(tr.t));
          continue;
        }
      }
      next.push_back(std::move(tr));
    }
    for (std::size_t j = 0; j < dets.size(); ++j) {
      if (det_used[j]) continue;
      Track tr;
      tr.t = scorer(Tracklet(dets[j])).second;
      tr.confirmed = cfg.birth_min <= 1;
      next.push_back(std::move(tr));
    }
    active = std::move(next);
  }
  for (auto& tr : active) {
    if (tr.confirmed) finished.push_back(std::move(tr.t));
  }
  std::stable_sort(finished.begin(), finished.end(),
                   [](const Tracklet& a, const Tracklet& b) { return a.front().frame < b.front().frame; });
  // ties keep creation order: tracks born in one frame are created in detection order
  std::vector<Trajectory> out;
  for (const auto& t : finished) out.push_back(detail::to_trajectory(t.detections(), static_cast<int>(out.size()) + 1));
  return out;
}

inline std::vector<Trajectory> track_online(FrameStream frames, const ModelParams& p, const AssocConfig& cfg) {
  return track_online(frames, encoder_scorer(p), cfg, p.config.input_dim);
}

// --------------------------------------------------------------------- MHT

/// One root-to-leaf path of a hypothesis tree.
struct Hypothesis {
  Tracklet path;       // hits only
  double weight = 0.0; // accumulated step scores
  int misses = 0;      // consecutive misses at the end of the path
  long serial = 0;     // generation order, for deterministic ties
};

struct HypothesisTree {
  long id = 0;               // creation order
  int root_frame = 0;
  std::vector<Hypothesis> leaves;
  std::optional<Hypothesis> selected;  // last globally selected leaf
  int selected_frame = 0;
};

namespace detail {

/// Hits of the path at frames <= frame.
inline std::vector<const Detection*> prefix_until(const Tracklet& t, int frame) {
  std::vector<const Detection*> out;
  for (const auto& d : t.detections()) {
    if (d->frame > frame) break;
    out.push_back(d.get());
  }
  return out;
}

inline bool contains_any(const Tracklet& t, const std::set<const Detection*>& dets) {
  for (const auto& d : t.detections()) {
    if (dets.count(d.get())) return true;
  }
  return false;
}

}  // namespace detail

/// Observer called after every frame with the surviving trees and the
/// selected leaves (tree index, leaf index); used by invariant tests.
using MhtObserver = std::function<void(int frame, const std::vector<HypothesisTree>&,
                                       const std::vector<std::pair<std::size_t, std::size_t>>&)>;

/// Multiple hypothesis tracking.
///
/// Each leaf is extended by every gated detection whose extension scores at
/// least tau_s and by a missed child carrying the path unchanged; a hit adds
/// the logistic score of the extended path to the branch weight, a miss adds
/// the logistic score of the unchanged path minus miss_penalty. The best
/// mht_K children per tree survive. Leaves sharing a detection conflict (all
/// leaves of one tree share its root). The maximum-weight independent set of
/// the conflict graph is the current global hypothesis. Its paths are then
/// committed up to frame t - N: leaves of the same tree that disagree with
/// the selected path there are deleted, as are leaves of other trees using a
/// committed detection. Detections no selected path uses start new trees.
///
/// Output: every tree that was ever selected contributes its last selected
/// path. Paths are taken in order of the frame they were last selected
/// (latest first), detections already emitted are dropped, and what remains
/// is emitted when it still has birth_min hits.
inline std::vector<Trajectory> track_mht(FrameStream frames, const TrackletScorer& scorer, const AssocConfig& cfg,
                                         int feature_dim = -1, const MhtObserver& observer = {}) {
  cfg.validate();
  const auto stream = detail::prefilter(frames, cfg.det_conf_min, feature_dim);
  std::vector<HypothesisTree> trees;
  std::vector<HypothesisTree> dead;
  long next_tree = 0;
  long serial = 0;

  for (std::size_t fi = 0; fi < stream.size(); ++fi) {
    const int frame = static_cast<int>(fi) + 1;
    const auto& dets = stream[fi];

    // 1. grow every tree and keep its best mht_K leaves
    for (auto& tree : trees) {
      std::vector<Hypothesis> children;
      for (const auto& leaf : tree.leaves) {
        for (const auto& d : dets) {
          if (iou(leaf.path.back().box, d->box) < cfg.iou_gate) continue;
          auto [raw, ext] = scorer(extend(leaf.path, d));
          const double s = sigmoid(raw);
          if (s < cfg.score_gate) continue;
          children.push_back({std::move(ext), leaf.weight + s, 0, serial++});
        }
        if (leaf.misses + 1 < cfg.death_max) {
          children.push_back({leaf.path, leaf.weight + sigmoid(leaf.path.score) - cfg.miss_penalty, leaf.misses + 1, serial++});
        }
      }
      std::stable_sort(children.begin(), children.end(),
                       [](const Hypothesis& a, const Hypothesis& b) { return a.weight > b.weight; });
      if (children.size() > static_cast<std::size_t>(cfg.mht_K)) children.resize(static_cast<std::size_t>(cfg.mht_K));
      tree.leaves = std::move(children);
    }
    for (auto& tree : trees) {
      if (tree.leaves.empty()) dead.push_back(std::move(tree));
    }
    std::erase_if(trees, [](const HypothesisTree& t) { return t.leaves.empty(); });

    // 2. global hypothesis
    std::vector<std::pair<std::size_t, std::size_t>> vertex;  // (tree, leaf)
    std::vector<double> weights;
    for (std::size_t ti = 0; ti < trees.size(); ++ti) {
      for (std::size_t li = 0; li < trees[ti].leaves.size(); ++li) {
        vertex.push_back({ti, li});
        weights.push_back(trees[ti].leaves[li].weight);
      }
    }
    ConflictGraph g(weights);
    std::map<const Detection*, std::vector<int>> users;
    for (std::size_t v = 0; v < vertex.size(); ++v) {
      for (const auto& d : trees[vertex[v].first].leaves[vertex[v].second].path.detections()) {
        users[d.get()].push_back(static_cast<int>(v));
      }
    }
    for (const auto& [_, vs] : users) {
      for (std::size_t a = 0; a < vs.size(); ++a) {
        for (std::size_t b = a + 1; b < vs.size(); ++b) g.add_edge(vs[a], vs[b]);
      }
    }
    const MwisResult sel = mwis(g, cfg.mwis);

    // 3. record the selection and commit up to frame - N
    std::vector<std::pair<std::size_t, std::size_t>> chosen;
    std::set<const Detection*> claimed;
    std::set<const Detection*> committed;
    std::map<std::size_t, std::vector<const Detection*>> keep_prefix;  // tree -> committed prefix
    const int commit_frame = frame - cfg.nscan_N;
    for (int v : sel.vertices) {
      const auto [ti, li] = vertex[static_cast<std::size_t>(v)];
      chosen.push_back({ti, li});
      HypothesisTree& tree = trees[ti];
      tree.selected = tree.leaves[li];
      tree.selected_frame = frame;
      for (const auto& d : tree.leaves[li].path.detections()) claimed.insert(d.get());
      auto prefix = detail::prefix_until(tree.leaves[li].path, commit_frame);
      committed.insert(prefix.begin(), prefix.end());
      keep_prefix[ti] = std::move(prefix);
    }
    std::set<std::pair<std::size_t, std::size_t>> removed;
    for (std::size_t ti = 0; ti < trees.size(); ++ti) {
      auto& leaves = trees[ti].leaves;
      const auto kp = keep_prefix.find(ti);
      for (std::size_t li = 0; li < leaves.size(); ++li) {
        bool drop = false;
        if (kp != keep_prefix.end()) {
          // the selected tree keeps only leaves agreeing with the committed prefix
          drop = detail::prefix_until(leaves[li].path, commit_frame) != kp->second;
        } else {
          drop = detail::contains_any(leaves[li].path, committed);
        }
        if (drop) removed.insert({ti, li});
      }
    }
    // selected leaves are never removed, so the chosen indices must be remapped
    std::vector<std::pair<std::size_t, std::size_t>> chosen_after;
    for (std::size_t ti = 0; ti < trees.size(); ++ti) {
      std::vector<Hypothesis> kept;
      for (std::size_t li = 0; li < trees[ti].leaves.size(); ++li) {
        if (removed.count({ti, li})) continue;
        if (std::find(chosen.begin(), chosen.end(), std::pair{ti, li}) != chosen.end()) chosen_after.push_back({ti, kept.size()});
        kept.push_back(std::move(trees[ti].leaves[li]));
      }
      trees[ti].leaves = std::move(kept);
    }

    // 4. new trees from unclaimed detections
    for (const auto& d : dets) {
      if (claimed.count(d.get())) continue;
      HypothesisTree tree;
      tree.id = next_tree++;
      tree.root_frame = frame;
      Tracklet root = scorer(Tracklet(d)).second;
      const double w = sigmoid(root.score);
      tree.leaves.push_back({std::move(root), w, 0, serial++});
      trees.push_back(std::move(tree));
    }
    // compact trees emptied by cross-tree commitments
    std::vector<HypothesisTree> alive;
    std::vector<std::size_t> new_index(trees.size(), static_cast<std::size_t>(-1));
    for (std::size_t ti = 0; ti < trees.size(); ++ti) {
      if (trees[ti].leaves.empty()) {
        dead.push_back(std::move(trees[ti]));
      } else {
        new_index[ti] = alive.size();
        alive.push_back(std::move(trees[ti]));
      }
    }
    trees = std::move(alive);
    for (auto& [ti, li] : chosen_after) ti = new_index[ti];
    if (observer) observer(frame, trees, chosen_after);
  }

  // emission
  for (auto& t : trees) dead.push_back(std::move(t));
  std::vector<const HypothesisTree*> order;
  for (const auto& t : dead) {
    if (t.selected) order.push_back(&t);
  }
  std::stable_sort(order.begin(), order.end(), [](const HypothesisTree* a, const HypothesisTree* b) {
    if (a->selected_frame != b->selected_frame) return a->selected_frame > b->selected_frame;
    return a->id < b->id;
  });
  std::set<const Detection*> emitted;
  struct Out {
    int start;
    long tree;
    std::vector<DetectionPtr> dets;
  };
  std::vector<Out> outs;
  for (const HypothesisTree* t : order) {
    std::vector<DetectionPtr> kept;
    for (const auto& d : t->selected->path.detections()) {
      if (!emitted.count(d.get())) kept.push_back(d);
    }
    if (static_cast<int>(kept.size()) < cfg.birth_min) continue;
    for (const auto& d : kept) emitted.insert(d.get());
    outs.push_back({kept.front()->frame, t->id, std::move(kept)});
  }
  std::sort(outs.begin(), outs.end(), [](const Out& a, const Out& b) { return std::tie(a.start, a.tree) < std::tie(b.start, b.tree); });
  std::vector<Trajectory> result;
  for (const auto& o : outs) result.push_back(detail::to_trajectory(o.dets, static_cast<int>(result.size()) + 1));
  return result;
}

inline std::vector<Trajectory> track_mht(FrameStream frames, const ModelParams& p, const AssocConfig& cfg,
                                         const MhtObserver& observer = {}) {
  return track_mht(frames, encoder_scorer(p), cfg, p.config.input_dim, observer);
}

/// Dispatches on cfg.mode.
inline std::vector<Trajectory> track(FrameStream frames, const ModelParams& p, const AssocConfig& cfg) {
  return cfg.mode == AssocMode::online ? track_online(frames, p, cfg) : track_mht(frames, p, cfg);
}

}  // namespace sbtrack
