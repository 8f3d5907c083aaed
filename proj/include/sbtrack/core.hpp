// Domain types shared by every module: boxes, detections, tracklets and
// the identity-switch bookkeeping used as the ranking signal in training.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sbtrack {

/// Malformed or inconsistent input data (files, scenarios, detections).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Loss or gradient became non-finite, or a numeric check failed.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Axis-aligned box in MOT Challenge convention (left, top, width, height).
struct BBox {
  double left = 0.0;
  double top = 0.0;
  double width = 1.0;
  double height = 1.0;

  BBox() = default;
  BBox(double l, double t, double w, double h) : left(l), top(t), width(w), height(h) {
    if (!(w > 0.0) || !(h > 0.0)) {
      throw std::invalid_argument("BBox: width and height must be positive");
    }
  }

  double right() const { return left + width; }
  double bottom() const { return top + height; }
  double area() const { return width * height; }
  double cx() const { return left + 0.5 * width; }
  double cy() const { return top + 0.5 * height; }

  friend bool operator==(const BBox&, const BBox&) = default;
};

inline double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.right(), b.right()) - std::max(a.left, b.left);
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.top, b.top);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

struct Detection {
  int frame = 1;
  BBox box;
  double confidence = 1.0;
  Eigen::VectorXd feature;
  std::optional<int> gt_identity;  // labeled data only
};

using DetectionPtr = std::shared_ptr<const Detection>;

inline DetectionPtr make_detection(Detection d) {
  return std::make_shared<const Detection>(std::move(d));
}

/// Number of adjacent identity transitions. An absent identity is a fresh
/// pseudo-identity at every occurrence, so it differs from all neighbours.
inline int count_ids(std::span<const std::optional<int>> identities) {
  if (identities.empty()) throw std::invalid_argument("count_ids: empty sequence");
  int n = 0;
  for (std::size_t i = 1; i < identities.size(); ++i) {
    const auto& a = identities[i - 1];
    const auto& b = identities[i];
    if (!a || !b || *a != *b) ++n;
  }
  return n;
}

inline int count_ids(const std::vector<std::optional<int>>& identities) {
  return count_ids(std::span<const std::optional<int>>(identities));
}

struct EncoderNode;  // defined in encoder.hpp

/// Opaque per-step encoder state. Nodes are immutable and shared between
/// tracklets that extend a common prefix, which is what lets the search tree
/// reuse forward computation and accumulate gradients over shared prefixes.
using EncoderCache = std::shared_ptr<const EncoderNode>;

/// Ordered detections hypothesized to belong to one object.
class Tracklet {
 public:
  Tracklet() = default;
  explicit Tracklet(DetectionPtr root) {
    if (!root) throw std::invalid_argument("Tracklet: null detection");
    dets_.push_back(std::move(root));
  }

  std::size_t size() const { return dets_.size(); }
  bool empty() const { return dets_.empty(); }
  const std::vector<DetectionPtr>& detections() const { return dets_; }
  const Detection& at(std::size_t i) const { return *dets_.at(i); }
  const Detection& front() const { return *dets_.front(); }
  const Detection& back() const { return *dets_.back(); }
  const DetectionPtr& back_ptr() const { return dets_.back(); }
  int last_frame() const { return dets_.back()->frame; }

  double score = 0.0;  // last raw f_s output
  int ids_count = 0;   // identity transitions vs ground truth
  EncoderCache encoder_cache;

  std::vector<std::optional<int>> identities() const {
    std::vector<std::optional<int>> out;
    out.reserve(dets_.size());
    for (const auto& d : dets_) out.push_back(d->gt_identity);
    return out;
  }

 private:
  std::vector<DetectionPtr> dets_;

  friend Tracklet extend(const Tracklet& t, DetectionPtr d);
};

/// Returns t with d appended. The cache is carried forward unchanged; the
/// encoder extends it lazily on the next score() call.
inline Tracklet extend(const Tracklet& t, DetectionPtr d) {
  if (!d) throw std::invalid_argument("extend: null detection");
  if (t.empty()) return Tracklet(std::move(d));
  if (d->frame <= t.last_frame()) {
    throw std::invalid_argument("extend: detection frame " + std::to_string(d->frame) +
                                " not after tracklet end " + std::to_string(t.last_frame()));
  }
  Tracklet out = t;
  const auto& prev = t.back().gt_identity;
  const auto& next = d->gt_identity;
  if (!prev || !next || *prev != *next) ++out.ids_count;
  out.dets_.push_back(std::move(d));
  return out;
}

inline Tracklet extend(const Tracklet& t, const Detection& d) {
  return extend(t, make_detection(d));
}

/// The retained branches for one tracked object during search or MHT.
struct HypothesisSet {
  int object_id = 0;
  std::vector<Tracklet> branches;
  std::optional<Tracklet> gt_branch;
};

/// One training sample: a ground-truth sub-track and, for every frame of it,
/// the candidate detections the search may confuse it with.
struct TrainingClip {
  std::string key;  // unique, defines the canonical dataset order
  std::vector<DetectionPtr> gt;
  std::vector<std::vector<DetectionPtr>> candidates;  // candidates[i] at frame of gt[i]

  std::size_t length() const { return gt.size(); }
};

struct TrajectoryEntry {
  int frame = 0;
  BBox box;
  friend bool operator==(const TrajectoryEntry&, const TrajectoryEntry&) = default;
};

struct Trajectory {
  int track_id = 0;
  std::vector<TrajectoryEntry> entries;
  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

/// Throws std::invalid_argument unless frames strictly increase in every
/// trajectory and track ids are unique.
inline void validate_trajectories(std::span<const Trajectory> trajs) {
  std::vector<int> ids;
  ids.reserve(trajs.size());
  for (const auto& t : trajs) {
    for (std::size_t i = 1; i < t.entries.size(); ++i) {
      if (t.entries[i].frame <= t.entries[i - 1].frame) {
        throw std::invalid_argument("trajectory " + std::to_string(t.track_id) +
                                    ": frames not strictly increasing");
      }
    }
    ids.push_back(t.track_id);
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw std::invalid_argument("duplicate track id in trajectory set");
  }
}

}  // namespace sbtrack
