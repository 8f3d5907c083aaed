// CLEAR MOT and identity metrics.

#pragma once

#include "sbtrack/core.hpp"
#include "sbtrack/hungarian.hpp"

#include <cstdio>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace sbtrack {

struct EvalReport {
  std::string name = "all";
  double mota = 0.0;
  double motp = 0.0;
  double idf1 = 0.0;
  double idp = 0.0;
  double idr = 0.0;
  long fp = 0;
  long fn = 0;
  long ids = 0;
  long frag = 0;
  double mt = 0.0;  // percent of gt tracks covered >= 80%
  double ml = 0.0;  // percent of gt tracks covered <= 20%

  // raw counts, kept so reports can be aggregated exactly
  long total_gt = 0;
  long total_pred = 0;
  long matches = 0;
  double iou_sum = 0.0;
  long idtp = 0;
  long gt_tracks = 0;
  long mt_tracks = 0;
  long ml_tracks = 0;

  void finalize() {
    mota = 1.0 - static_cast<double>(fp + fn + ids) / static_cast<double>(std::max<long>(total_gt, 1));
    motp = matches > 0 ? iou_sum / static_cast<double>(matches) : 0.0;
    const long idfp = total_pred - idtp;
    const long idfn = total_gt - idtp;
    idp = (idtp + idfp) > 0 ? static_cast<double>(idtp) / static_cast<double>(idtp + idfp) : 0.0;
    idr = (idtp + idfn) > 0 ? static_cast<double>(idtp) / static_cast<double>(idtp + idfn) : 0.0;
    idf1 = (2 * idtp + idfp + idfn) > 0 ? 2.0 * static_cast<double>(idtp) / static_cast<double>(2 * idtp + idfp + idfn) : 0.0;
    mt = gt_tracks > 0 ? 100.0 * static_cast<double>(mt_tracks) / static_cast<double>(gt_tracks) : 0.0;
    ml = gt_tracks > 0 ? 100.0 * static_cast<double>(ml_tracks) / static_cast<double>(gt_tracks) : 0.0;
  }
};

struct IdMetrics {
  double idf1 = 0.0;
  double idp = 0.0;
  double idr = 0.0;
  long idtp = 0;
  long idfp = 0;
  long idfn = 0;
};

namespace detail {

struct FrameBox {
  int id;
  BBox box;
};

/// frame -> boxes sorted by id; rejects a track id appearing twice in a frame.
inline std::map<int, std::vector<FrameBox>> by_frame(std::span<const Trajectory> trajs, const char* what) {
  std::map<int, std::vector<FrameBox>> out;
  for (const auto& t : trajs) {
    for (const auto& e : t.entries) out[e.frame].push_back({t.track_id, e.box});
  }
  for (auto& [f, v] : out) {
    std::sort(v.begin(), v.end(), [](const FrameBox& a, const FrameBox& b) { return a.id < b.id; });
    for (std::size_t i = 1; i < v.size(); ++i) {
      if (v[i].id == v[i - 1].id) {
        throw DataError(std::string(what) + ": track id " + std::to_string(v[i].id) + " appears twice in frame " +
                        std::to_string(f));
      }
    }
  }
  return out;
}

}  // namespace detail

/// Global gt-track / pred-track bijection maximizing the number of frames
/// where the pair overlaps by at least tau_match.
inline IdMetrics id_metrics(std::span<const Trajectory> gt, std::span<const Trajectory> pred, double tau_match = 0.5) {
  const auto gtf = detail::by_frame(gt, "ground truth");
  const auto prf = detail::by_frame(pred, "prediction");
  std::map<int, int> gi, pi;
  for (const auto& t : gt) gi.emplace(t.track_id, static_cast<int>(gi.size()));
  for (const auto& t : pred) pi.emplace(t.track_id, static_cast<int>(pi.size()));
  long total_gt = 0, total_pred = 0;
  for (const auto& t : gt) total_gt += static_cast<long>(t.entries.size());
  for (const auto& t : pred) total_pred += static_cast<long>(t.entries.size());

  Eigen::MatrixXd overlap = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(gi.size()), static_cast<Eigen::Index>(pi.size()));
  for (const auto& [f, gboxes] : gtf) {
    auto it = prf.find(f);
    if (it == prf.end()) continue;
    for (const auto& g : gboxes) {
      for (const auto& p : it->second) {
        if (iou(g.box, p.box) >= tau_match) overlap(gi.at(g.id), pi.at(p.id)) += 1.0;
      }
    }
  }
  IdMetrics m;
  if (overlap.size() > 0) {
    for (auto [r, c] : hungarian(-overlap)) m.idtp += static_cast<long>(overlap(r, c));
  }
  m.idfp = total_pred - m.idtp;
  m.idfn = total_gt - m.idtp;
  m.idp = (m.idtp + m.idfp) > 0 ? static_cast<double>(m.idtp) / static_cast<double>(m.idtp + m.idfp) : 0.0;
  m.idr = (m.idtp + m.idfn) > 0 ? static_cast<double>(m.idtp) / static_cast<double>(m.idtp + m.idfn) : 0.0;
  const long den = 2 * m.idtp + m.idfp + m.idfn;
  m.idf1 = den > 0 ? 2.0 * static_cast<double>(m.idtp) / static_cast<double>(den) : 0.0;
  return m;
}

/// CLEAR MOT with persistent correspondences: last frame's matches that
/// still overlap by tau_match are kept, the rest is matched by maximum IoU.
/// The returned report also carries the identity metrics.
inline EvalReport clear_mot(std::span<const Trajectory> gt, std::span<const Trajectory> pred, double tau_match = 0.5) {
  const auto gtf = detail::by_frame(gt, "ground truth");
  const auto prf = detail::by_frame(pred, "prediction");
  std::set<int> frames;
  for (const auto& [f, _] : gtf) frames.insert(f);
  for (const auto& [f, _] : prf) frames.insert(f);

  EvalReport r;
  std::map<int, int> prev_match;        // gt id -> pred id in the previous frame
  std::map<int, int> last_pred;         // gt id -> last pred id ever matched
  std::map<int, bool> matched_at_last;  // gt id -> matched at its previous appearance
  std::map<int, long> present, covered;
  static const std::vector<detail::FrameBox> kNone;

  for (int f : frames) {
    const auto git = gtf.find(f);
    const auto pit = prf.find(f);
    const auto& gboxes = git == gtf.end() ? kNone : git->second;
    const auto& pboxes = pit == prf.end() ? kNone : pit->second;
    std::vector<int> g_match(gboxes.size(), -1);
    std::vector<char> p_used(pboxes.size(), 0);

    for (std::size_t i = 0; i < gboxes.size(); ++i) {
      auto pm = prev_match.find(gboxes[i].id);
      if (pm == prev_match.end()) continue;
      for (std::size_t j = 0; j < pboxes.size(); ++j) {
        if (pboxes[j].id == pm->second && !p_used[j] && iou(gboxes[i].box, pboxes[j].box) >= tau_match) {
          g_match[i] = static_cast<int>(j);
          p_used[j] = 1;
        }
      }
    }
    std::vector<std::size_t> rows, cols;
    for (std::size_t i = 0; i < gboxes.size(); ++i) {
      if (g_match[i] < 0) rows.push_back(i);
    }
    for (std::size_t j = 0; j < pboxes.size(); ++j) {
      if (!p_used[j]) cols.push_back(j);
    }
    if (!rows.empty() && !cols.empty()) {
      Eigen::MatrixXd cost(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
      for (std::size_t a = 0; a < rows.size(); ++a) {
        for (std::size_t b = 0; b < cols.size(); ++b) {
          const double o = iou(gboxes[rows[a]].box, pboxes[cols[b]].box);
          cost(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = o >= tau_match ? 1.0 - o : kForbidden;
        }
      }
      for (auto [a, b] : hungarian(cost)) {
        g_match[rows[static_cast<std::size_t>(a)]] = static_cast<int>(cols[static_cast<std::size_t>(b)]);
        p_used[cols[static_cast<std::size_t>(b)]] = 1;
      }
    }

    std::map<int, int> now;
    for (std::size_t i = 0; i < gboxes.size(); ++i) {
      const int gid = gboxes[i].id;
      ++present[gid];
      ++r.total_gt;
      const bool matched = g_match[i] >= 0;
      auto was = matched_at_last.find(gid);
      if (was != matched_at_last.end() && was->second && !matched) ++r.frag;
      matched_at_last[gid] = matched;
      if (!matched) {
        ++r.fn;
        continue;
      }
      const auto& pb = pboxes[static_cast<std::size_t>(g_match[i])];
      ++covered[gid];
      ++r.matches;
      r.iou_sum += iou(gboxes[i].box, pb.box);
      auto lp = last_pred.find(gid);
      if (lp != last_pred.end() && lp->second != pb.id) ++r.ids;
      last_pred[gid] = pb.id;
      now[gid] = pb.id;
    }
    for (std::size_t j = 0; j < pboxes.size(); ++j) {
      ++r.total_pred;
      if (!p_used[j]) ++r.fp;
    }
    prev_match = std::move(now);
  }

  for (const auto& [gid, n] : present) {
    ++r.gt_tracks;
    const double cov = static_cast<double>(covered[gid]) / static_cast<double>(n);
    if (cov >= 0.8) ++r.mt_tracks;
    if (cov <= 0.2) ++r.ml_tracks;
  }
  r.idtp = id_metrics(gt, pred, tau_match).idtp;
  r.finalize();
  return r;
}

/// Sums the raw counts of several per-sequence reports.
inline EvalReport aggregate(std::span<const EvalReport> parts, const std::string& name = "all") {
  EvalReport r;
  r.name = name;
  for (const auto& p : parts) {
    r.fp += p.fp;
    r.fn += p.fn;
    r.ids += p.ids;
    r.frag += p.frag;
    r.total_gt += p.total_gt;
    r.total_pred += p.total_pred;
    r.matches += p.matches;
    r.iou_sum += p.iou_sum;
    r.idtp += p.idtp;
    r.gt_tracks += p.gt_tracks;
    r.mt_tracks += p.mt_tracks;
    r.ml_tracks += p.ml_tracks;
  }
  r.finalize();
  return r;
}

inline const char* kReportCsvHeader = "sequence,MOTA,MOTP,FP,FN,IDF1,IDP,IDR,IDS,Frag,MT,ML";

inline std::string report_csv_row(const EvalReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%.3f,%.3f,%ld,%ld,%.3f,%.3f,%.3f,%ld,%ld,%.1f,%.1f", r.name.c_str(), r.mota, r.motp,
                r.fp, r.fn, r.idf1, r.idp, r.idr, r.ids, r.frag, r.mt, r.ml);
  return buf;
}

/// Aligned text table, one row per report.
inline std::string report_table(std::span<const EvalReport> rows) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-16s %7s %7s %7s %7s %7s %7s %7s %6s %6s %6s %6s\n", "sequence", "MOTA", "MOTP", "FP",
                "FN", "IDF1", "IDP", "IDR", "IDS", "Frag", "MT", "ML");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-16s %7.3f %7.3f %7ld %7ld %7.3f %7.3f %7.3f %6ld %6ld %6.1f %6.1f\n", r.name.c_str(),
                  r.mota, r.motp, r.fp, r.fn, r.idf1, r.idp, r.idr, r.ids, r.frag, r.mt, r.ml);
    os << buf;
  }
  return os.str();
}

}  // namespace sbtrack
