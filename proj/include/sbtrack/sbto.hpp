// Search-based tracklet training.
//
// An episode walks one ground-truth sub-track. At every step the retained
// hypothesis branches are extended by every candidate of the next frame (the
// ground-truth detection included), all extensions and the ground-truth
// branch are scored, the ground-truth-consistent extension is removed, the
// rest is pruned to the K best by raw score, and the step loss is computed on
// what survived. Step losses are summed over the clip and one backward pass
// over the shared search tree gives the gradient.

#pragma once

#include "sbtrack/core.hpp"
#include "sbtrack/encoder.hpp"
#include "sbtrack/losses.hpp"
#include "sbtrack/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace sbtrack {

enum class LossMode { margin_rank_search, margin_rank, margin_only, cross_entropy };

inline std::string to_string(LossMode m) {
  switch (m) {
    case LossMode::margin_rank_search: return "margin_rank_search";
    case LossMode::margin_rank: return "margin_rank";
    case LossMode::margin_only: return "margin_only";
    case LossMode::cross_entropy: return "cross_entropy";
  }
  return "unknown";
}

inline LossMode loss_mode_from_string(const std::string& s) {
  if (s == "margin_rank_search") return LossMode::margin_rank_search;
  if (s == "margin_rank") return LossMode::margin_rank;
  if (s == "margin_only") return LossMode::margin_only;
  if (s == "cross_entropy") return LossMode::cross_entropy;
  throw std::invalid_argument("unknown loss mode '" + s + "'");
}

struct TrainConfig {
  EncoderConfig encoder;
  int K = 3;         // retained proposals
  int C = 4;         // candidates per step
  int n_length = 8;  // clip length
  double alpha = 1.0;
  double rank_weight = 1.0;
  double learning_rate = 1e-2;
  double weight_decay = 5e-4;
  int batch_size = 16;
  int epochs = 60;
  int warmup_epochs = 1;
  LossMode loss_mode = LossMode::margin_rank_search;
  // Non-search modes: probability that an earlier frame of a sampled
  // negative's prefix is swapped for a same-frame candidate.
  double negative_corruption = 0.25;
  int clips_per_scenario = 15;
  std::uint64_t seed = 1;
  int jobs = 1;

  void validate() const {
    encoder.validate();
    if (K < 1 || C < 1) throw std::invalid_argument("TrainConfig: K and C must be >= 1");
    if (n_length < 2) throw std::invalid_argument("TrainConfig: n_length must be >= 2");
    if (!(alpha > 0.0)) throw std::invalid_argument("TrainConfig: alpha must be positive");
    if (!(learning_rate > 0.0) || weight_decay < 0.0) throw std::invalid_argument("TrainConfig: bad learning rate / weight decay");
    if (batch_size < 1 || epochs < 0 || warmup_epochs < 0) throw std::invalid_argument("TrainConfig: bad schedule");
    if (negative_corruption < 0.0 || negative_corruption > 1.0) throw std::invalid_argument("TrainConfig: negative_corruption outside [0,1]");
    if (clips_per_scenario < 1 || jobs < 1) throw std::invalid_argument("TrainConfig: bad counts");
    if (!encoder.uses_lstm() && n_length > encoder.max_len) {
      throw std::invalid_argument("TrainConfig: n_length exceeds the self-attention position table");
    }
  }
};

/// Every branch extended by every candidate, branch-major.
inline std::vector<Tracklet> expand(std::span<const Tracklet> branches, std::span<const DetectionPtr> candidates) {
  if (candidates.empty()) throw std::invalid_argument("expand: no candidates");
  std::vector<Tracklet> out;
  out.reserve(branches.size() * candidates.size());
  for (const auto& b : branches) {
    for (const auto& c : candidates) out.push_back(extend(b, c));
  }
  return out;
}

inline std::vector<Tracklet> expand(const HypothesisSet& h, std::span<const DetectionPtr> candidates) {
  return expand(std::span<const Tracklet>(h.branches), candidates);
}

/// Indices of the K largest scores, descending, ties to the smaller index.
inline std::vector<std::size_t> topk_indices(std::span<const double> scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  if (idx.size() > k) idx.resize(k);
  return idx;
}

inline std::vector<Tracklet> prune_topk(std::span<const Tracklet> scored, std::size_t k) {
  std::vector<double> s;
  s.reserve(scored.size());
  for (const auto& t : scored) s.push_back(t.score);
  std::vector<Tracklet> out;
  for (std::size_t i : topk_indices(s, k)) out.push_back(scored[i]);
  return out;
}

struct StepRecord {
  double gt_score = 0.0;
  std::vector<Tracklet> retained;        // negatives the loss was computed on
  std::vector<std::size_t> selection;    // retained indices into the expansion
  double loss = 0.0;
  double margin = 0.0;
  double rank = 0.0;
};

struct EpisodeRecord {
  std::vector<StepRecord> steps;
  double total = 0.0;
  double margin_total = 0.0;
  double rank_total = 0.0;
  GradientSet grad;
};

namespace detail {

inline ScoredBranch as_branch(const Tracklet& t, bool is_gt) { return {t.score, t.ids_count, is_gt}; }

}  // namespace detail

/// Runs one episode. With compute_grad = false the gradient is left empty.
inline EpisodeRecord sbto_episode(const TrainingClip& clip, const ModelParams& p, const TrainConfig& cfg,
                                  bool compute_grad = true, std::uint64_t episode_seed = 0) {
  const auto n = static_cast<std::size_t>(cfg.n_length);
  if (clip.gt.size() < n || clip.candidates.size() < n) {
    throw std::invalid_argument("sbto_episode: clip '" + clip.key + "' shorter than n_length " + std::to_string(n));
  }
  const bool search = cfg.loss_mode == LossMode::margin_rank_search;
  Rng rng = Rng(episode_seed).fork(0x5b70);

  EpisodeRecord rec;
  std::vector<EncoderCache> tapes;
  std::vector<double> upstream;

  Tracklet gt_branch(clip.gt[0]);
  std::vector<Tracklet> gt_prefixes;  // scored ground-truth prefixes, non-search modes
  gt_prefixes.push_back(score(gt_branch, p).second);
  std::vector<Tracklet> retained{gt_branch};

  for (std::size_t tau = 1; tau < n; ++tau) {
    StepRecord step;
    const DetectionPtr& gt_det = clip.gt[tau];
    gt_branch = score(extend(gt_branch, gt_det), p).second;
    step.gt_score = gt_branch.score;
    const ScoredBranch gt_sb = detail::as_branch(gt_branch, true);

    std::vector<Tracklet> negatives;
    if (search) {
      // A frame with fewer detections than C repeats candidates. Repeats
      // would only clone branches and crowd the top K, so search each once.
      std::vector<DetectionPtr> pool;
      for (const auto& d : clip.candidates[tau]) {
        if (std::find(pool.begin(), pool.end(), d) == pool.end()) pool.push_back(d);
      }
      pool.push_back(gt_det);
      std::vector<Tracklet> expanded = expand(retained, pool);
      std::vector<double> scores;
      std::vector<std::size_t> searched;
      for (std::size_t i = 0; i < expanded.size(); ++i) {
        if (expanded[i].ids_count == 0) continue;  // the ground-truth branch stays out of the search set
        expanded[i] = score(expanded[i], p).second;
        scores.push_back(expanded[i].score);
        searched.push_back(i);
      }
      for (std::size_t j : topk_indices(scores, static_cast<std::size_t>(cfg.K))) {
        step.selection.push_back(searched[j]);
        negatives.push_back(expanded[searched[j]]);
      }
      retained = negatives;
    } else {
      const Tracklet& prefix = gt_prefixes.back();
      for (const auto& cand : clip.candidates[tau]) {
        Tracklet base = prefix;
        if (cfg.negative_corruption > 0.0 && tau > 1) {
          // rebuild the prefix with random same-frame swaps after the root
          bool corrupted = false;
          Tracklet t(clip.gt[0]);
          for (std::size_t f = 1; f < tau; ++f) {
            const auto& cands = clip.candidates[f];
            if (!cands.empty() && rng.bernoulli(cfg.negative_corruption)) {
              t = extend(t, cands[rng.below(cands.size())]);
              corrupted = true;
            } else {
              t = extend(t, clip.gt[f]);
            }
          }
          if (corrupted) base = t;
        }
        negatives.push_back(score(extend(base, cand), p).second);
      }
      gt_prefixes.push_back(gt_branch);
    }

    std::vector<ScoredBranch> neg_sb;
    neg_sb.reserve(negatives.size());
    for (const auto& t : negatives) neg_sb.push_back(detail::as_branch(t, false));

    LossOutput lo;
    switch (cfg.loss_mode) {
      case LossMode::margin_rank_search:
      case LossMode::margin_rank: {
        const LossOutput m = margin_loss(gt_sb, neg_sb, cfg.alpha);
        const LossOutput r = rank_loss(neg_sb, cfg.rank_weight);
        lo = step_loss(gt_sb, neg_sb, cfg.alpha, cfg.rank_weight);
        step.margin = m.value;
        step.rank = r.value;
        break;
      }
      case LossMode::margin_only:
        lo = margin_loss(gt_sb, neg_sb, cfg.alpha);
        step.margin = lo.value;
        break;
      case LossMode::cross_entropy: {
        lo.score_grads.assign(neg_sb.size(), 0.0);
        const LossOutput pos = cross_entropy_baseline(gt_sb, true);
        lo.value += pos.value;
        lo.gt_grad = pos.score_grads[0];
        for (std::size_t i = 0; i < neg_sb.size(); ++i) {
          const LossOutput neg = cross_entropy_baseline(neg_sb[i], false);
          lo.value += neg.value;
          lo.score_grads[i] = neg.score_grads[0];
        }
        break;
      }
    }
    if (!std::isfinite(lo.value)) {
      throw NumericError("sbto_episode: non-finite loss at step " + std::to_string(tau) + " of clip '" + clip.key + "'");
    }
    step.loss = lo.value;
    rec.total += lo.value;
    rec.margin_total += step.margin;
    rec.rank_total += step.rank;
    if (compute_grad) {
      tapes.push_back(gt_branch.encoder_cache);
      upstream.push_back(lo.gt_grad);
      for (std::size_t i = 0; i < negatives.size(); ++i) {
        tapes.push_back(negatives[i].encoder_cache);
        upstream.push_back(lo.score_grads[i]);
      }
    }
    step.retained = std::move(negatives);
    rec.steps.push_back(std::move(step));
  }
  if (compute_grad) {
    rec.grad = backward(tapes, upstream, p);
    if (!rec.grad.all_finite()) throw NumericError("sbto_episode: non-finite gradient on clip '" + clip.key + "'");
  }
  return rec;
}

struct AdamState {
  Weights m;
  Weights v;
  long step = 0;

  static AdamState for_params(const ModelParams& p) {
    return {Weights::zeros(p.config), Weights::zeros(p.config), 0};
  }
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Decoupled weight decay (p -= lr*wd*p), then a bias-corrected Adam step.
inline void adam_update(ModelParams& p, const GradientSet& g, AdamState& s, double lr, double wd,
                        const AdamHyper& hp = {}) {
  if (!g.all_finite()) throw NumericError("adam_update: non-finite gradient");
  auto pv = p.w.views();
  auto gv = g.views();
  auto mv = s.m.views();
  auto vv = s.v.views();
  if (pv.size() != gv.size() || pv.size() != mv.size() || pv.size() != vv.size()) {
    throw std::invalid_argument("adam_update: shape mismatch");
  }
  ++s.step;
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(s.step));
  for (std::size_t t = 0; t < pv.size(); ++t) {
    if (pv[t].size() != gv[t].size()) throw std::invalid_argument("adam_update: shape mismatch in " + pv[t].name);
    for (Eigen::Index i = 0; i < pv[t].size(); ++i) {
      double& w = pv[t].data[i];
      const double gi = gv[t].data[i];
      double& m = mv[t].data[i];
      double& v = vv[t].data[i];
      w -= lr * wd * w;
      m = hp.beta1 * m + (1.0 - hp.beta1) * gi;
      v = hp.beta2 * v + (1.0 - hp.beta2) * gi * gi;
      w -= lr * (m / c1) / (std::sqrt(v / c2) + hp.eps);
    }
  }
}

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double margin = 0.0;
  double rank = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochStats> curve;
};

/// Evaluates f(i) for i in [0, n) on up to `jobs` threads. Results land in
/// their own slot, so reductions done afterwards see a fixed order.
template <class F>
void parallel_for(std::size_t n, int jobs, F&& f) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(jobs, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) f(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Mean episode loss of a parameter set over clips, no gradients.
inline EpochStats evaluate_loss(std::span<const TrainingClip> clips, const ModelParams& p, const TrainConfig& cfg) {
  EpochStats s;
  if (clips.empty()) return s;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const auto r = sbto_episode(clips[i], p, cfg, false, cfg.seed ^ mix64(i));
    s.mean_loss += r.total;
    s.margin += r.margin_total;
    s.rank += r.rank_total;
  }
  const double inv = 1.0 / static_cast<double>(clips.size());
  s.mean_loss *= inv;
  s.margin *= inv;
  s.rank *= inv;
  return s;
}

using EpochCallback = std::function<void(const EpochStats&, const ModelParams&)>;

/// Mini-batch Adam over seeded shuffles of the clips. The clips are put in
/// canonical key order first, so the result does not depend on the order the
/// caller supplies them in.
inline TrainResult train(std::vector<TrainingClip> clips, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (clips.empty()) throw DataError("train: empty dataset");
  std::stable_sort(clips.begin(), clips.end(), [](const TrainingClip& a, const TrainingClip& b) { return a.key < b.key; });
  for (std::size_t i = 1; i < clips.size(); ++i) {
    if (clips[i].key == clips[i - 1].key) throw DataError("train: duplicate clip key '" + clips[i].key + "'");
  }

  TrainResult res{ModelParams::init(cfg.encoder, mix64(cfg.seed ^ 0x1417)), {}};
  AdamState adam = AdamState::for_params(res.params);
  const Rng root(cfg.seed);
  const std::size_t batches_per_epoch = (clips.size() + static_cast<std::size_t>(cfg.batch_size) - 1) / static_cast<std::size_t>(cfg.batch_size);
  const double warmup_batches = static_cast<double>(cfg.warmup_epochs) * static_cast<double>(batches_per_epoch);
  long global_batch = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(clips.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng = root.fork(static_cast<std::uint64_t>(epoch) + 1);
    shuffle_rng.shuffle(order);

    EpochStats stats;
    stats.epoch = epoch + 1;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(cfg.batch_size));
      std::vector<EpisodeRecord> recs(b1 - b0);
      parallel_for(recs.size(), cfg.jobs, [&](std::size_t i) {
        const std::size_t ci = order[b0 + i];
        const std::uint64_t eseed = mix64(cfg.seed ^ mix64((static_cast<std::uint64_t>(epoch) << 32) ^ ci));
        recs[i] = sbto_episode(clips[ci], res.params, cfg, true, eseed);
      });
      GradientSet g = Weights::zeros(cfg.encoder);
      for (const auto& r : recs) {
        g.add_scaled(r.grad, 1.0 / static_cast<double>(recs.size()));
        stats.mean_loss += r.total;
        stats.margin += r.margin_total;
        stats.rank += r.rank_total;
      }
      double lr = cfg.learning_rate;
      if (warmup_batches > 0.0) lr *= std::min(1.0, static_cast<double>(global_batch + 1) / warmup_batches);
      adam_update(res.params, g, adam, lr, cfg.weight_decay);
      ++global_batch;
    }
    const double inv = 1.0 / static_cast<double>(clips.size());
    stats.mean_loss *= inv;
    stats.margin *= inv;
    stats.rank *= inv;
    res.curve.push_back(stats);
    if (on_epoch) on_epoch(stats, res.params);
  }
  return res;
}

}  // namespace sbtrack
