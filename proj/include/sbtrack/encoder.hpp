// Tracklet scoring function f_s(T).
//
// Each detection feature is embedded by an affine layer with tanh, then a
// sequence model runs over the tracklet and a linear head condenses the
// readout to a scalar. Three sequence models are supported:
//
//   recurrent            LSTM, readout = last hidden state
//   recurrent_attention  LSTM, readout = softmax(h_j . h_T)-weighted sum of
//                        all hidden states including the last one
//   self_attention       one causal scaled dot-product attention layer over
//                        embedded features plus learned position vectors
//                        (initialised sinusoidally), gated output
//                        out_t = tanh(x_t) * tanh(a_t) elementwise,
//                        readout = mean over steps
//
// Forward steps are stored as immutable EncoderNode objects linked to their
// parent. Tracklets that share a prefix share nodes, so backward() walks the
// union of all scored paths once and gradients from several tracklets
// accumulate on the common prefix.

#pragma once

#include "sbtrack/core.hpp"
#include "sbtrack/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace sbtrack {

enum class EncoderVariant { recurrent, recurrent_attention, self_attention };

inline std::string to_string(EncoderVariant v) {
  switch (v) {
    case EncoderVariant::recurrent: return "recurrent";
    case EncoderVariant::recurrent_attention: return "recurrent_attention";
    case EncoderVariant::self_attention: return "self_attention";
  }
  return "unknown";
}

inline EncoderVariant encoder_variant_from_string(const std::string& s) {
  if (s == "recurrent" || s == "lstm") return EncoderVariant::recurrent;
  if (s == "recurrent_attention" || s == "lstm_attention") return EncoderVariant::recurrent_attention;
  if (s == "self_attention" || s == "transformer") return EncoderVariant::self_attention;
  throw std::invalid_argument("unknown encoder variant '" + s + "'");
}

struct EncoderConfig {
  int input_dim = 16;  // D_in
  int hidden = 32;     // H
  int max_len = 8;     // N_max, scoring window and position table length
  EncoderVariant variant = EncoderVariant::recurrent_attention;

  bool uses_lstm() const { return variant != EncoderVariant::self_attention; }

  void validate() const {
    if (input_dim < 1 || hidden < 1 || max_len < 1) {
      throw std::invalid_argument("EncoderConfig: dimensions must be positive");
    }
  }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// Mutable view of one named tensor, row-major semantics via (rows, cols).
struct TensorView {
  std::string name;
  double* data;
  Eigen::Index rows;
  Eigen::Index cols;
  Eigen::Index size() const { return rows * cols; }
};

struct ConstTensorView {
  std::string name;
  const double* data;
  Eigen::Index rows;
  Eigen::Index cols;
  Eigen::Index size() const { return rows * cols; }
};

/// All learnable tensors. Also used as the gradient container, in which case
/// every tensor is shape-congruent with the parameters it belongs to.
struct Weights {
  Eigen::MatrixXd embed_w;  // H x D_in
  Eigen::VectorXd embed_b;  // H
  Eigen::MatrixXd lstm_wx;  // 4H x H, gate blocks i, f, g, o
  Eigen::MatrixXd lstm_wh;  // 4H x H
  Eigen::VectorXd lstm_b;   // 4H
  Eigen::MatrixXd attn_wq;  // H x H
  Eigen::MatrixXd attn_wk;  // H x H
  Eigen::MatrixXd attn_wv;  // H x H
  Eigen::MatrixXd pos;      // N_max x H
  Eigen::VectorXd head_w;   // H
  Eigen::VectorXd head_b;   // 1

  static Weights zeros(const EncoderConfig& c) {
    const Eigen::Index h = c.hidden;
    Weights w;
    w.embed_w = Eigen::MatrixXd::Zero(h, c.input_dim);
    w.embed_b = Eigen::VectorXd::Zero(h);
    if (c.uses_lstm()) {
      w.lstm_wx = Eigen::MatrixXd::Zero(4 * h, h);
      w.lstm_wh = Eigen::MatrixXd::Zero(4 * h, h);
      w.lstm_b = Eigen::VectorXd::Zero(4 * h);
    } else {
      w.attn_wq = Eigen::MatrixXd::Zero(h, h);
      w.attn_wk = Eigen::MatrixXd::Zero(h, h);
      w.attn_wv = Eigen::MatrixXd::Zero(h, h);
      w.pos = Eigen::MatrixXd::Zero(c.max_len, h);
    }
    w.head_w = Eigen::VectorXd::Zero(h);
    w.head_b = Eigen::VectorXd::Zero(1);
    return w;
  }

  /// Non-empty tensors in a fixed order (the checkpoint and optimizer order).
  std::vector<TensorView> views() {
    std::vector<TensorView> out;
    auto add = [&](const char* name, auto& m) {
      if (m.size() > 0) out.push_back({name, m.data(), m.rows(), m.cols()});
    };
    add("embed_w", embed_w);
    add("embed_b", embed_b);
    add("lstm_wx", lstm_wx);
    add("lstm_wh", lstm_wh);
    add("lstm_b", lstm_b);
    add("attn_wq", attn_wq);
    add("attn_wk", attn_wk);
    add("attn_wv", attn_wv);
    add("pos", pos);
    add("head_w", head_w);
    add("head_b", head_b);
    return out;
  }

  std::vector<ConstTensorView> views() const {
    std::vector<ConstTensorView> out;
    for (const auto& v : const_cast<Weights*>(this)->views()) {
      out.push_back({v.name, v.data, v.rows, v.cols});
    }
    return out;
  }

  Eigen::Index parameter_count() const {
    Eigen::Index n = 0;
    for (const auto& v : views()) n += v.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& v : views()) {
      for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v.data[i])) return false;
      }
    }
    return true;
  }

  void set_zero() {
    for (auto& v : views()) std::fill(v.data, v.data + v.size(), 0.0);
  }

  Weights& add_scaled(const Weights& other, double s) {
    auto a = views();
    auto b = other.views();
    if (a.size() != b.size()) throw std::invalid_argument("Weights::add_scaled: shape mismatch");
    for (std::size_t t = 0; t < a.size(); ++t) {
      if (a[t].size() != b[t].size()) throw std::invalid_argument("Weights::add_scaled: shape mismatch");
      for (Eigen::Index i = 0; i < a[t].size(); ++i) a[t].data[i] += s * b[t].data[i];
    }
    return *this;
  }

  Weights& scale(double s) {
    for (auto& v : views()) {
      for (Eigen::Index i = 0; i < v.size(); ++i) v.data[i] *= s;
    }
    return *this;
  }
};

using GradientSet = Weights;

struct ModelParams {
  EncoderConfig config;
  Weights w;

  bool shape_ok() const {
    const auto z = Weights::zeros(config);
    auto a = w.views();
    auto b = z.views();
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].name != b[i].name || a[i].rows != b[i].rows || a[i].cols != b[i].cols) return false;
    }
    return true;
  }

  /// Uniform(-1/sqrt(H), 1/sqrt(H)); forget-gate bias 1; sinusoidal positions.
  static ModelParams init(const EncoderConfig& c, std::uint64_t seed) {
    c.validate();
    ModelParams p{c, Weights::zeros(c)};
    Rng rng(seed);
    const double r = 1.0 / std::sqrt(static_cast<double>(c.hidden));
    for (auto& v : p.w.views()) {
      if (v.name == "pos") continue;
      for (Eigen::Index i = 0; i < v.size(); ++i) v.data[i] = rng.uniform(-r, r);
    }
    if (c.uses_lstm()) {
      p.w.lstm_b.segment(c.hidden, c.hidden).setOnes();
    } else {
      for (int t = 0; t < c.max_len; ++t) {
        for (int i = 0; i < c.hidden; ++i) {
          const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / c.hidden);
          p.w.pos(t, i) = (i % 2 == 0) ? std::sin(t * freq) : std::cos(t * freq);
        }
      }
    }
    return p;
  }
};

namespace detail {

inline double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Softmax with max subtraction.
inline Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
  const double m = z.maxCoeff();
  Eigen::VectorXd e = (z.array() - m).exp().matrix();
  return e / e.sum();
}

inline void require_dim(const Eigen::VectorXd& v, Eigen::Index n, const char* what) {
  if (v.size() != n) {
    throw std::invalid_argument(std::string(what) + ": expected dimension " + std::to_string(n) +
                                ", got " + std::to_string(v.size()));
  }
}

}  // namespace detail

inline double sigmoid(double x) { return detail::logistic(x); }

/// tanh(W raw + b).
inline Eigen::VectorXd embed(const Eigen::VectorXd& raw, const ModelParams& p) {
  detail::require_dim(raw, p.config.input_dim, "embed");
  return (p.w.embed_w * raw + p.w.embed_b).array().tanh().matrix();
}

struct LstmState {
  Eigen::VectorXd hidden;
  Eigen::VectorXd cell;
  std::vector<Eigen::VectorXd> history;  // hidden vector of every consumed step

  static LstmState zeros(int h) {
    return {Eigen::VectorXd::Zero(h), Eigen::VectorXd::Zero(h), {}};
  }
};

namespace detail {

/// Gate activations (i, f, g, o) for one LSTM step.
inline Eigen::VectorXd lstm_gates(const Eigen::VectorXd& phi, const Eigen::VectorXd& h_prev,
                                  const ModelParams& p) {
  const Eigen::Index h = p.config.hidden;
  Eigen::VectorXd a = p.w.lstm_wx * phi + p.w.lstm_wh * h_prev + p.w.lstm_b;
  for (Eigen::Index k = 0; k < h; ++k) {
    a(k) = logistic(a(k));
    a(h + k) = logistic(a(h + k));
    a(2 * h + k) = std::tanh(a(2 * h + k));
    a(3 * h + k) = logistic(a(3 * h + k));
  }
  return a;
}

}  // namespace detail

/// One LSTM step on an embedded input.
inline LstmState step(const Eigen::VectorXd& phi, const LstmState& s, const ModelParams& p) {
  if (!p.config.uses_lstm()) throw std::invalid_argument("step: model has no recurrent cell");
  const Eigen::Index h = p.config.hidden;
  detail::require_dim(phi, h, "step input");
  detail::require_dim(s.hidden, h, "step hidden");
  detail::require_dim(s.cell, h, "step cell");
  const Eigen::VectorXd g = detail::lstm_gates(phi, s.hidden, p);
  LstmState out;
  out.cell = g.segment(h, h).cwiseProduct(s.cell) + g.segment(0, h).cwiseProduct(g.segment(2 * h, h));
  out.hidden = g.segment(3 * h, h).cwiseProduct(out.cell.array().tanh().matrix());
  out.history = s.history;
  out.history.push_back(out.hidden);
  return out;
}

/// Context vector sum_j a_j h_j with a = softmax_j(h_j . current). The
/// current state must be the last history element.
inline Eigen::VectorXd attend(std::span<const Eigen::VectorXd> history, const Eigen::VectorXd& current) {
  if (history.empty()) throw std::invalid_argument("attend: empty history");
  Eigen::VectorXd logits(static_cast<Eigen::Index>(history.size()));
  for (std::size_t j = 0; j < history.size(); ++j) logits(static_cast<Eigen::Index>(j)) = history[j].dot(current);
  const Eigen::VectorXd a = detail::softmax(logits);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(current.size());
  for (std::size_t j = 0; j < history.size(); ++j) c += a(static_cast<Eigen::Index>(j)) * history[j];
  return c;
}

/// Attention weights used by attend(); exposed for property checks.
inline Eigen::VectorXd attention_weights(std::span<const Eigen::VectorXd> history,
                                         const Eigen::VectorXd& current) {
  if (history.empty()) throw std::invalid_argument("attention_weights: empty history");
  Eigen::VectorXd logits(static_cast<Eigen::Index>(history.size()));
  for (std::size_t j = 0; j < history.size(); ++j) logits(static_cast<Eigen::Index>(j)) = history[j].dot(current);
  return detail::softmax(logits);
}

/// One forward step, shared by every tracklet whose prefix ends here.
struct EncoderNode {
  EncoderCache parent;
  int depth = 1;
  DetectionPtr det;
  const Detection* root = nullptr;
  Eigen::VectorXd phi;  // embedded input
  // recurrent variants
  Eigen::VectorXd gates;
  Eigen::VectorXd cell;
  Eigen::VectorXd hidden;
  // self_attention
  Eigen::VectorXd x, q, k, v;
  Eigen::VectorXd attn;  // weights over the path, oldest first
  Eigen::VectorXd ux;    // tanh(x)
  Eigen::VectorXd ua;    // tanh(attended values)
  Eigen::VectorXd out;
};

namespace detail {

/// Path nodes ordered root first.
inline std::vector<const EncoderNode*> path_of(const EncoderNode* leaf) {
  std::vector<const EncoderNode*> path(static_cast<std::size_t>(leaf->depth));
  for (const EncoderNode* n = leaf; n; n = n->parent.get()) path[static_cast<std::size_t>(n->depth - 1)] = n;
  return path;
}

inline EncoderCache advance(const EncoderCache& parent, const DetectionPtr& det, const ModelParams& p) {
  if (det->feature.size() == 0) throw std::invalid_argument("score: detection has no feature");
  require_dim(det->feature, p.config.input_dim, "detection feature");
  const Eigen::Index h = p.config.hidden;
  auto node = std::make_shared<EncoderNode>();
  node->parent = parent;
  node->depth = parent ? parent->depth + 1 : 1;
  node->det = det;
  node->root = parent ? parent->root : det.get();
  node->phi = embed(det->feature, p);
  if (p.config.uses_lstm()) {
    const Eigen::VectorXd h_prev = parent ? parent->hidden : Eigen::VectorXd::Zero(h);
    const Eigen::VectorXd c_prev = parent ? parent->cell : Eigen::VectorXd::Zero(h);
    node->gates = lstm_gates(node->phi, h_prev, p);
    node->cell = node->gates.segment(h, h).cwiseProduct(c_prev) +
                 node->gates.segment(0, h).cwiseProduct(node->gates.segment(2 * h, h));
    node->hidden = node->gates.segment(3 * h, h).cwiseProduct(node->cell.array().tanh().matrix());
  } else {
    if (node->depth > p.config.max_len) throw std::invalid_argument("self-attention: sequence exceeds max_len");
    node->x = node->phi + p.w.pos.row(node->depth - 1).transpose();
    node->q = p.w.attn_wq * node->x;
    node->k = p.w.attn_wk * node->x;
    node->v = p.w.attn_wv * node->x;
    const auto path = path_of(node.get());
    const double scale = 1.0 / std::sqrt(static_cast<double>(h));
    Eigen::VectorXd logits(node->depth);
    for (int j = 0; j < node->depth; ++j) {
      const Eigen::VectorXd& kj = (j == node->depth - 1) ? node->k : path[static_cast<std::size_t>(j)]->k;
      logits(j) = node->q.dot(kj) * scale;
    }
    node->attn = softmax(logits);
    Eigen::VectorXd a = node->attn(node->depth - 1) * node->v;
    for (int j = 0; j + 1 < node->depth; ++j) a += node->attn(j) * path[static_cast<std::size_t>(j)]->v;
    // The product lets the linear head read a bilinear similarity between
    // the step and its attended prefix, which a sum inside tanh cannot.
    node->ux = node->x.array().tanh().matrix();
    node->ua = a.array().tanh().matrix();
    node->out = node->ux.cwiseProduct(node->ua);
  }
  return node;
}

/// Readout vector fed to the linear head.
inline Eigen::VectorXd readout(const EncoderNode& leaf, const ModelParams& p) {
  switch (p.config.variant) {
    case EncoderVariant::recurrent:
      return leaf.hidden;
    case EncoderVariant::recurrent_attention: {
      const auto path = path_of(&leaf);
      std::vector<Eigen::VectorXd> hist;
      hist.reserve(path.size());
      for (const auto* n : path) hist.push_back(n->hidden);
      return attend(hist, leaf.hidden);
    }
    case EncoderVariant::self_attention: {
      const auto path = path_of(&leaf);
      Eigen::VectorXd pooled = Eigen::VectorXd::Zero(p.config.hidden);
      for (const auto* n : path) pooled += n->out;
      return pooled / static_cast<double>(path.size());
    }
  }
  return {};
}

}  // namespace detail

/// Raw score of the leaf of an encoded path.
inline double score_cache(const EncoderCache& leaf, const ModelParams& p) {
  if (!leaf) throw std::invalid_argument("score_cache: empty cache");
  return p.w.head_w.dot(detail::readout(*leaf, p)) + p.w.head_b(0);
}

/// Encodes the last max_len detections of t (the whole tracklet when it is
/// short enough) and returns the raw pre-logistic score together with a copy
/// of t carrying the updated cache. When t extends a tracklet that was
/// already scored with the same window root, only the new steps run.
///
/// Caches are tied to the parameters that produced them; rescoring with
/// different parameters requires a tracklet with an empty cache.
inline std::pair<double, Tracklet> score(const Tracklet& t, const ModelParams& p) {
  if (t.empty()) throw std::invalid_argument("score: empty tracklet");
  const auto& dets = t.detections();
  const std::size_t n = dets.size();
  const std::size_t window = std::min<std::size_t>(n, static_cast<std::size_t>(p.config.max_len));
  const std::size_t start = n - window;

  EncoderCache cache;
  std::size_t done = 0;
  if (const auto& c = t.encoder_cache) {
    const auto d = static_cast<std::size_t>(c->depth);
    if (d <= window && c->root == dets[start].get() && c->det == dets[start + d - 1]) {
      cache = c;
      done = d;
    }
  }
  for (std::size_t i = start + done; i < n; ++i) cache = detail::advance(cache, dets[i], p);

  Tracklet out = t;
  out.encoder_cache = cache;
  out.score = score_cache(cache, p);
  return {out.score, std::move(out)};
}

/// Gradient of sum_i upstream[i] * score(leaves[i]) with respect to every
/// parameter, by backpropagation through the union of the scored paths.
inline GradientSet backward(std::span<const EncoderCache> leaves, std::span<const double> upstream,
                            const ModelParams& p) {
  if (leaves.size() != upstream.size()) {
    throw std::invalid_argument("backward: " + std::to_string(leaves.size()) + " tapes but " +
                                std::to_string(upstream.size()) + " upstream gradients");
  }
  const EncoderConfig& cfg = p.config;
  const Eigen::Index h = cfg.hidden;
  GradientSet g = Weights::zeros(cfg);

  // Collect every node reachable from a leaf that carries nonzero upstream.
  std::unordered_map<const EncoderNode*, std::size_t> index;
  std::vector<const EncoderNode*> nodes;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    if (!leaves[i]) throw std::invalid_argument("backward: empty tape");
    if (upstream[i] == 0.0) continue;
    for (const EncoderNode* n = leaves[i].get(); n; n = n->parent.get()) {
      if (!index.emplace(n, nodes.size()).second) break;
      nodes.push_back(n);
    }
  }
  if (nodes.empty()) return g;

  struct Acc {
    Eigen::VectorXd dh, dc;       // recurrent
    Eigen::VectorXd dout, dk, dv; // self_attention
  };
  std::vector<Acc> acc(nodes.size());
  for (auto& a : acc) {
    if (cfg.uses_lstm()) {
      a.dh = Eigen::VectorXd::Zero(h);
      a.dc = Eigen::VectorXd::Zero(h);
    } else {
      a.dout = Eigen::VectorXd::Zero(h);
      a.dk = Eigen::VectorXd::Zero(h);
      a.dv = Eigen::VectorXd::Zero(h);
    }
  }

  // Head and readout.
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const double up = upstream[i];
    if (up == 0.0) continue;
    const EncoderNode& leaf = *leaves[i];
    const Eigen::VectorXd r = detail::readout(leaf, p);
    g.head_w += up * r;
    g.head_b(0) += up;
    const Eigen::VectorXd dr = up * p.w.head_w;
    switch (cfg.variant) {
      case EncoderVariant::recurrent:
        acc[index.at(&leaf)].dh += dr;
        break;
      case EncoderVariant::recurrent_attention: {
        const auto path = detail::path_of(&leaf);
        const std::size_t len = path.size();
        Eigen::VectorXd logits(static_cast<Eigen::Index>(len));
        for (std::size_t j = 0; j < len; ++j) logits(static_cast<Eigen::Index>(j)) = path[j]->hidden.dot(leaf.hidden);
        const Eigen::VectorXd a = detail::softmax(logits);
        Eigen::VectorXd da(static_cast<Eigen::Index>(len));
        for (std::size_t j = 0; j < len; ++j) da(static_cast<Eigen::Index>(j)) = dr.dot(path[j]->hidden);
        const double mean_da = a.dot(da);
        Eigen::VectorXd& dh_last = acc[index.at(&leaf)].dh;
        for (std::size_t j = 0; j < len; ++j) {
          const auto jj = static_cast<Eigen::Index>(j);
          const double ds = a(jj) * (da(jj) - mean_da);
          Eigen::VectorXd& dh_j = acc[index.at(path[j])].dh;
          dh_j += a(jj) * dr + ds * leaf.hidden;
          dh_last += ds * path[j]->hidden;
        }
        break;
      }
      case EncoderVariant::self_attention: {
        const auto path = detail::path_of(&leaf);
        const double inv = 1.0 / static_cast<double>(path.size());
        for (const auto* n : path) acc[index.at(n)].dout += inv * dr;
        break;
      }
    }
  }

  // Deepest first; parents always come after all of their children.
  std::vector<std::size_t> order(nodes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return nodes[a]->depth > nodes[b]->depth; });

  const double att_scale = 1.0 / std::sqrt(static_cast<double>(h));
  for (std::size_t idx : order) {
    const EncoderNode& n = *nodes[idx];
    Acc& A = acc[idx];
    Eigen::VectorXd dphi;
    if (cfg.uses_lstm()) {
      const Eigen::VectorXd c_prev = n.parent ? n.parent->cell : Eigen::VectorXd::Zero(h);
      const Eigen::VectorXd h_prev = n.parent ? n.parent->hidden : Eigen::VectorXd::Zero(h);
      const auto gi = n.gates.segment(0, h);
      const auto gf = n.gates.segment(h, h);
      const auto gg = n.gates.segment(2 * h, h);
      const auto go = n.gates.segment(3 * h, h);
      const Eigen::ArrayXd tc = n.cell.array().tanh();
      Eigen::ArrayXd dc = A.dc.array() + A.dh.array() * go.array() * (1.0 - tc * tc);
      Eigen::VectorXd dpre(4 * h);
      dpre.segment(0, h) = (dc * gg.array() * gi.array() * (1.0 - gi.array())).matrix();
      dpre.segment(h, h) = (dc * c_prev.array() * gf.array() * (1.0 - gf.array())).matrix();
      dpre.segment(2 * h, h) = (dc * gi.array() * (1.0 - gg.array() * gg.array())).matrix();
      dpre.segment(3 * h, h) = (A.dh.array() * tc * go.array() * (1.0 - go.array())).matrix();
      g.lstm_wx.noalias() += dpre * n.phi.transpose();
      g.lstm_wh.noalias() += dpre * h_prev.transpose();
      g.lstm_b += dpre;
      dphi = p.w.lstm_wx.transpose() * dpre;
      if (n.parent) {
        Acc& P = acc[index.at(n.parent.get())];
        P.dh.noalias() += p.w.lstm_wh.transpose() * dpre;
        P.dc += (dc * gf.array()).matrix();
      }
    } else {
      const auto path = detail::path_of(&n);
      const Eigen::VectorXd dz = (A.dout.array() * n.ux.array() * (1.0 - n.ua.array() * n.ua.array())).matrix();
      Eigen::VectorXd dx = (A.dout.array() * n.ua.array() * (1.0 - n.ux.array() * n.ux.array())).matrix();
      const Eigen::Index len = n.depth;
      Eigen::VectorXd dalpha(len);
      for (Eigen::Index j = 0; j < len; ++j) dalpha(j) = dz.dot(path[static_cast<std::size_t>(j)]->v);
      const double mean_da = n.attn.dot(dalpha);
      Eigen::VectorXd dq = Eigen::VectorXd::Zero(h);
      for (Eigen::Index j = 0; j < len; ++j) {
        const EncoderNode* nj = path[static_cast<std::size_t>(j)];
        Acc& J = acc[index.at(nj)];
        J.dv += n.attn(j) * dz;
        const double dlogit = n.attn(j) * (dalpha(j) - mean_da) * att_scale;
        dq += dlogit * nj->k;
        J.dk += dlogit * n.q;
      }
      dx.noalias() += p.w.attn_wq.transpose() * dq;
      dx.noalias() += p.w.attn_wk.transpose() * A.dk;
      dx.noalias() += p.w.attn_wv.transpose() * A.dv;
      g.attn_wq.noalias() += dq * n.x.transpose();
      g.attn_wk.noalias() += A.dk * n.x.transpose();
      g.attn_wv.noalias() += A.dv * n.x.transpose();
      g.pos.row(n.depth - 1) += dx.transpose();
      dphi = dx;
    }
    const Eigen::VectorXd dpre_embed = (dphi.array() * (1.0 - n.phi.array() * n.phi.array())).matrix();
    g.embed_w.noalias() += dpre_embed * n.det->feature.transpose();
    g.embed_b += dpre_embed;
  }
  return g;
}

}  // namespace sbtrack
