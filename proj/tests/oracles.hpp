// Exhaustive reference solvers used by the unit tests and the acceptance
// suite. They share no code with the library beyond its data types.

#pragma once

#include "sbtrack/association.hpp"
#include "sbtrack/core.hpp"
#include "sbtrack/mwis.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <utility>
#include <vector>

namespace sbtrack::oracle {

struct BruteAssignment {
  std::vector<std::pair<int, int>> pairs;  // admissible pairs, sorted by row
  int cardinality = 0;
  double cost = 0.0;
};

/// Every injection of the smaller side into the larger one; admissible
/// (finite) pairs count first, then total cost, then the lexicographically
/// smallest pair list.
inline BruteAssignment brute_force_assignment(const Eigen::MatrixXd& cost) {
  const int m = static_cast<int>(cost.rows());
  const int n = static_cast<int>(cost.cols());
  BruteAssignment best;
  bool have = false;
  const bool rows_small = m <= n;
  const int small = rows_small ? m : n;
  const int large = rows_small ? n : m;
  std::vector<int> perm(static_cast<std::size_t>(large));
  std::iota(perm.begin(), perm.end(), 0);
  // first `small` entries of each permutation give the injection; repeats
  // of the same prefix are harmless
  do {
    BruteAssignment cur;
    for (int k = 0; k < small; ++k) {
      const int r = rows_small ? k : perm[static_cast<std::size_t>(k)];
      const int c = rows_small ? perm[static_cast<std::size_t>(k)] : k;
      const double v = cost(r, c);
      if (std::isinf(v)) continue;
      cur.pairs.push_back({r, c});
      cur.cost += v;
      ++cur.cardinality;
    }
    std::sort(cur.pairs.begin(), cur.pairs.end());
    bool better = !have;
    if (have) {
      if (cur.cardinality != best.cardinality) better = cur.cardinality > best.cardinality;
      else if (cur.cost != best.cost) better = cur.cost < best.cost;
      else better = cur.pairs < best.pairs;
    }
    if (better) {
      best = cur;
      have = true;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

struct BruteIndependentSet {
  std::vector<int> vertices;
  double weight = 0.0;
};

/// All 2^n subsets of the positive-weight vertices; maximum weight, ties to
/// the lexicographically smallest sorted vertex list.
inline BruteIndependentSet brute_force_mwis(const ConflictGraph& g) {
  const int n = g.size();
  std::vector<int> positive;
  for (int v = 0; v < n; ++v) {
    if (g.weight(v) > 0.0) positive.push_back(v);
  }
  BruteIndependentSet best;
  const std::uint64_t total = std::uint64_t{1} << positive.size();
  for (std::uint64_t mask = 0; mask < total; ++mask) {
    std::vector<int> set;
    double w = 0.0;
    bool ok = true;
    for (std::size_t i = 0; i < positive.size() && ok; ++i) {
      if (!(mask >> i & 1)) continue;
      for (int u : set) {
        if (g.adjacent(u, positive[i])) {
          ok = false;
          break;
        }
      }
      set.push_back(positive[i]);
      w += g.weight(positive[i]);
    }
    if (!ok) continue;
    if (w > best.weight || (w == best.weight && set < best.vertices)) {
      best.vertices = set;
      best.weight = w;
    }
  }
  return best;
}

struct BruteMot {
  long fp = 0, fn = 0, ids = 0, frag = 0, matches = 0, total_gt = 0;
  double iou_sum = 0.0;
  long gt_tracks = 0, mt_tracks = 0, ml_tracks = 0;
};

namespace detail {

struct Pick {
  int count = 0;
  double overlap = 0.0;
  std::vector<std::pair<int, int>> pairs;  // (gt index, pred index)
};

// Every partial matching of gts[k..] to unused preds with IoU >= tau.
inline void enumerate_matchings(const std::vector<BBox>& gts, const std::vector<BBox>& preds, double tau, std::size_t k,
                                std::vector<char>& used, Pick& cur, Pick& best, bool& have) {
  if (k == gts.size()) {
    auto sorted = cur.pairs;
    std::sort(sorted.begin(), sorted.end());
    bool better = !have;
    if (have) {
      if (cur.count != best.count) better = cur.count > best.count;
      else if (cur.overlap != best.overlap) better = cur.overlap > best.overlap;
      else better = sorted < best.pairs;
    }
    if (better) {
      best = cur;
      best.pairs = sorted;
      have = true;
    }
    return;
  }
  enumerate_matchings(gts, preds, tau, k + 1, used, cur, best, have);
  for (std::size_t j = 0; j < preds.size(); ++j) {
    const double o = iou(gts[k], preds[j]);
    if (used[j] || o < tau) continue;
    used[j] = 1;
    ++cur.count;
    cur.overlap += o;
    cur.pairs.push_back({static_cast<int>(k), static_cast<int>(j)});
    enumerate_matchings(gts, preds, tau, k + 1, used, cur, best, have);
    cur.pairs.pop_back();
    cur.overlap -= o;
    --cur.count;
    used[j] = 0;
  }
}

inline std::map<int, std::map<int, BBox>> frame_index(const std::vector<Trajectory>& trajs) {
  std::map<int, std::map<int, BBox>> out;
  for (const auto& t : trajs) {
    for (const auto& e : t.entries) out[e.frame][t.track_id] = e.box;
  }
  return out;
}

}  // namespace detail

/// CLEAR MOT written out directly: carried-over correspondences first, then
/// the matching of the rest chosen by enumeration (most matches, then most
/// overlap).
inline BruteMot brute_force_clear_mot(const std::vector<Trajectory>& gt, const std::vector<Trajectory>& pred,
                                      double tau = 0.5) {
  const auto g = detail::frame_index(gt);
  const auto p = detail::frame_index(pred);
  std::set<int> frames;
  for (const auto& [f, _] : g) frames.insert(f);
  for (const auto& [f, _] : p) frames.insert(f);
  BruteMot r;
  std::map<int, int> prev, last;
  std::map<int, bool> was_matched;
  std::map<int, int> present, covered;
  for (int f : frames) {
    const auto gi = g.count(f) ? g.at(f) : std::map<int, BBox>{};
    const auto pi = p.count(f) ? p.at(f) : std::map<int, BBox>{};
    std::map<int, int> match;  // gt id -> pred id
    std::set<int> taken;
    for (const auto& [gid, gbox] : gi) {
      auto it = prev.find(gid);
      if (it == prev.end() || !pi.count(it->second) || taken.count(it->second)) continue;
      if (iou(gbox, pi.at(it->second)) >= tau) {
        match[gid] = it->second;
        taken.insert(it->second);
      }
    }
    std::vector<int> gids, pids;
    std::vector<BBox> gboxes, pboxes;
    for (const auto& [gid, b] : gi) {
      if (!match.count(gid)) {
        gids.push_back(gid);
        gboxes.push_back(b);
      }
    }
    for (const auto& [pid, b] : pi) {
      if (!taken.count(pid)) {
        pids.push_back(pid);
        pboxes.push_back(b);
      }
    }
    detail::Pick cur, best;
    bool have = false;
    std::vector<char> used(pboxes.size(), 0);
    detail::enumerate_matchings(gboxes, pboxes, tau, 0, used, cur, best, have);
    for (auto [a, b] : best.pairs) {
      match[gids[static_cast<std::size_t>(a)]] = pids[static_cast<std::size_t>(b)];
      taken.insert(pids[static_cast<std::size_t>(b)]);
    }
    for (const auto& [gid, gbox] : gi) {
      ++present[gid];
      ++r.total_gt;
      const bool hit = match.count(gid) > 0;
      if (was_matched.count(gid) && was_matched[gid] && !hit) ++r.frag;
      was_matched[gid] = hit;
      if (!hit) {
        ++r.fn;
        continue;
      }
      const int pid = match[gid];
      ++covered[gid];
      ++r.matches;
      r.iou_sum += iou(gbox, pi.at(pid));
      if (last.count(gid) && last[gid] != pid) ++r.ids;
      last[gid] = pid;
    }
    r.fp += static_cast<long>(pi.size()) - static_cast<long>(taken.size());
    prev = match;
  }
  for (const auto& [gid, n] : present) {
    ++r.gt_tracks;
    const double cov = static_cast<double>(covered[gid]) / n;
    if (cov >= 0.8) ++r.mt_tracks;
    if (cov <= 0.2) ++r.ml_tracks;
  }
  return r;
}

/// Identity true positives: the best one-to-one pairing of gt and predicted
/// tracks over all injections, scored by frames of overlap >= tau.
inline long brute_force_idtp(const std::vector<Trajectory>& gt, const std::vector<Trajectory>& pred, double tau = 0.5) {
  const std::size_t ng = gt.size(), np = pred.size();
  std::vector<std::vector<long>> overlap(ng, std::vector<long>(np, 0));
  for (std::size_t a = 0; a < ng; ++a) {
    for (std::size_t b = 0; b < np; ++b) {
      for (const auto& ge : gt[a].entries) {
        for (const auto& pe : pred[b].entries) {
          if (ge.frame == pe.frame && iou(ge.box, pe.box) >= tau) ++overlap[a][b];
        }
      }
    }
  }
  long best = 0;
  std::vector<int> perm(std::max(ng, np));
  std::iota(perm.begin(), perm.end(), 0);
  do {
    long s = 0;
    for (std::size_t a = 0; a < ng; ++a) {
      const auto b = static_cast<std::size_t>(perm[a]);
      if (b < np) s += overlap[a][b];
    }
    best = std::max(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

struct BestLabelling {
  std::vector<std::vector<DetectionPtr>> tracks;  // one per frame-1 detection
  double weight = 0.0;
  double runner_up = -std::numeric_limits<double>::infinity();
};

/// Branch weight of one track under the tracker's scoring rules: the root
/// scores its logistic value; every later frame adds the logistic score of
/// the extended path on a hit, or that of the unchanged path minus the miss
/// penalty on a miss. Returns nullopt when a hit fails a gate or the track
/// runs out of misses.
inline std::optional<double> track_weight(const std::vector<DetectionPtr>& hits, int last_frame,
                                          const TrackletScorer& scorer, const AssocConfig& cfg) {
  auto [root_raw, t] = scorer(Tracklet(hits.front()));
  double w = 1.0 / (1.0 + std::exp(-root_raw));
  double last_raw = root_raw;
  std::size_t next = 1;
  int misses = 0;
  for (int f = hits.front()->frame + 1; f <= last_frame; ++f) {
    if (next < hits.size() && hits[next]->frame == f) {
      if (iou(t.back().box, hits[next]->box) < cfg.iou_gate) return std::nullopt;
      auto [raw, ext] = scorer(extend(t, hits[next]));
      const double s = 1.0 / (1.0 + std::exp(-raw));
      if (s < cfg.score_gate) return std::nullopt;
      w += s;
      t = std::move(ext);
      last_raw = raw;
      misses = 0;
      ++next;
    } else {
      if (++misses >= cfg.death_max) return std::nullopt;
      w += 1.0 / (1.0 + std::exp(-last_raw)) - cfg.miss_penalty;
    }
  }
  return w;
}

/// Enumerates every way of handing the detections after frame 1 to the
/// tracks rooted at frame 1 (each detection used once, each track at most
/// one detection per frame) and returns the heaviest labelling.
inline BestLabelling best_labelling(const std::vector<std::vector<DetectionPtr>>& frames, const TrackletScorer& scorer,
                                    const AssocConfig& cfg) {
  const std::size_t n = frames.front().size();
  std::vector<DetectionPtr> rest;
  for (std::size_t f = 1; f < frames.size(); ++f) rest.insert(rest.end(), frames[f].begin(), frames[f].end());
  const int last_frame = static_cast<int>(frames.size());
  BestLabelling best;
  best.weight = -std::numeric_limits<double>::infinity();
  std::vector<std::size_t> label(rest.size(), 0);
  while (true) {
    std::vector<std::vector<DetectionPtr>> tracks;
    for (const auto& root : frames.front()) tracks.push_back({root});
    bool ok = true;
    for (std::size_t i = 0; i < rest.size() && ok; ++i) {
      auto& t = tracks[label[i]];
      if (t.back()->frame == rest[i]->frame) ok = false;
      else t.push_back(rest[i]);
    }
    double w = 0.0;
    for (std::size_t k = 0; k < n && ok; ++k) {
      const auto tw = track_weight(tracks[k], last_frame, scorer, cfg);
      if (tw) w += *tw;
      else ok = false;
    }
    if (ok) {
      if (w > best.weight) {
        best.runner_up = best.weight;
        best.weight = w;
        best.tracks = tracks;
      } else {
        best.runner_up = std::max(best.runner_up, w);
      }
    }
    std::size_t i = 0;
    while (i < label.size() && ++label[i] == n) label[i++] = 0;
    if (i == label.size()) break;
  }
  return best;
}

}  // namespace sbtrack::oracle
