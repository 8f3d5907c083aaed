// Maximum-weight independent set over a conflict graph of track hypotheses.
//
// Vertices with non-positive weight never improve a solution and are never
// selected. Among optimal sets the lexicographically smallest sorted vertex
// list wins. The exact solver runs per connected component: depth-first
// branch and bound in index order, include before exclude, bounded by a
// greedy clique cover of the remaining candidates.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace sbtrack {

class ConflictGraph {
 public:
  ConflictGraph() = default;
  explicit ConflictGraph(std::vector<double> weights)
      : weights_(std::move(weights)), adj_(weights_.size()), matrix_(weights_.size() * weights_.size(), 0) {}

  int add_vertex(double w) {
    const int n = size();
    std::vector<char> m(static_cast<std::size_t>((n + 1) * (n + 1)), 0);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) m[static_cast<std::size_t>(i * (n + 1) + j)] = adjacent(i, j);
    }
    matrix_ = std::move(m);
    weights_.push_back(w);
    adj_.emplace_back();
    return n;
  }

  void add_edge(int a, int b) {
    if (a == b) throw std::invalid_argument("ConflictGraph: self edge");
    if (a < 0 || b < 0 || a >= size() || b >= size()) throw std::out_of_range("ConflictGraph: vertex out of range");
    if (adjacent(a, b)) return;
    matrix_[idx(a, b)] = matrix_[idx(b, a)] = 1;
    adj_[static_cast<std::size_t>(a)].insert(std::upper_bound(adj_[static_cast<std::size_t>(a)].begin(), adj_[static_cast<std::size_t>(a)].end(), b), b);
    adj_[static_cast<std::size_t>(b)].insert(std::upper_bound(adj_[static_cast<std::size_t>(b)].begin(), adj_[static_cast<std::size_t>(b)].end(), a), a);
  }

  int size() const { return static_cast<int>(weights_.size()); }
  double weight(int v) const { return weights_[static_cast<std::size_t>(v)]; }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<int>& neighbors(int v) const { return adj_[static_cast<std::size_t>(v)]; }
  bool adjacent(int a, int b) const { return matrix_[idx(a, b)] != 0; }

  bool is_independent(const std::vector<int>& set) const {
    for (std::size_t i = 0; i < set.size(); ++i) {
      for (std::size_t j = i + 1; j < set.size(); ++j) {
        if (adjacent(set[i], set[j])) return false;
      }
    }
    return true;
  }

  double total_weight(const std::vector<int>& set) const {
    double s = 0.0;
    for (int v : set) s += weight(v);
    return s;
  }

  /// Connected components, each sorted, ordered by smallest vertex.
  std::vector<std::vector<int>> components() const {
    std::vector<int> comp(weights_.size(), -1);
    std::vector<std::vector<int>> out;
    for (int s = 0; s < size(); ++s) {
      if (comp[static_cast<std::size_t>(s)] >= 0) continue;
      std::vector<int> members{s};
      comp[static_cast<std::size_t>(s)] = static_cast<int>(out.size());
      for (std::size_t i = 0; i < members.size(); ++i) {
        for (int nb : neighbors(members[i])) {
          if (comp[static_cast<std::size_t>(nb)] < 0) {
            comp[static_cast<std::size_t>(nb)] = static_cast<int>(out.size());
            members.push_back(nb);
          }
        }
      }
      std::sort(members.begin(), members.end());
      out.push_back(std::move(members));
    }
    return out;
  }

 private:
  std::size_t idx(int a, int b) const { return static_cast<std::size_t>(a * size() + b); }

  std::vector<double> weights_;
  std::vector<std::vector<int>> adj_;
  std::vector<char> matrix_;
};

struct MwisOptions {
  int exact_limit = 64;             // largest component solved exactly
  long node_budget = 2'000'000;     // branch-and-bound nodes per component
};

struct MwisResult {
  std::vector<int> vertices;  // sorted
  double weight = 0.0;
  bool exact = true;
};

namespace detail {

inline bool lex_less(const std::vector<int>& a, const std::vector<int>& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

class MwisSearch {
 public:
  MwisSearch(const ConflictGraph& g, std::vector<int> verts, long budget)
      : g_(g), verts_(std::move(verts)), budget_(budget) {
    double scale = 0.0;
    for (int v : verts_) scale += std::abs(g_.weight(v));
    tol_ = 1e-12 * (1.0 + scale);
  }

  /// Returns false when the node budget ran out.
  bool run() {
    std::vector<int> cand;
    for (int v : verts_) {
      if (g_.weight(v) > 0.0) cand.push_back(v);
    }
    std::vector<int> cur;
    return dfs(cand, cur, 0.0);
  }

  std::vector<int> best;
  double best_weight = 0.0;

 private:
  double clique_cover_bound(const std::vector<int>& cand) const {
    std::vector<std::vector<int>> cliques;
    std::vector<double> top;
    for (int v : cand) {
      bool placed = false;
      for (std::size_t c = 0; c < cliques.size() && !placed; ++c) {
        bool ok = true;
        for (int u : cliques[c]) {
          if (!g_.adjacent(u, v)) {
            ok = false;
            break;
          }
        }
        if (ok) {
          cliques[c].push_back(v);
          top[c] = std::max(top[c], g_.weight(v));
          placed = true;
        }
      }
      if (!placed) {
        cliques.push_back({v});
        top.push_back(g_.weight(v));
      }
    }
    return std::accumulate(top.begin(), top.end(), 0.0);
  }

  bool dfs(const std::vector<int>& cand, std::vector<int>& cur, double w) {
    if (--budget_ < 0) return false;
    if (cand.empty()) {
      if (!best_set_ || w > best_weight + tol_ || (std::abs(w - best_weight) <= tol_ && lex_less(cur, best))) {
        best = cur;
        best_weight = w;
        best_set_ = true;
      }
      return true;
    }
    if (best_set_ && w + clique_cover_bound(cand) < best_weight - tol_) return true;
    const int v = cand.front();
    // include v
    std::vector<int> with;
    with.reserve(cand.size());
    for (std::size_t i = 1; i < cand.size(); ++i) {
      if (!g_.adjacent(v, cand[i])) with.push_back(cand[i]);
    }
    cur.push_back(v);
    if (!dfs(with, cur, w + g_.weight(v))) return false;
    cur.pop_back();
    // exclude v
    std::vector<int> without(cand.begin() + 1, cand.end());
    return dfs(without, cur, w);
  }

  const ConflictGraph& g_;
  std::vector<int> verts_;
  long budget_;
  double tol_ = 0.0;
  bool best_set_ = false;
};

}  // namespace detail

/// Greedy: repeatedly take the vertex maximizing w / (degree + 1) in the
/// remaining graph (ties to the lowest index), then drop its neighbours.
inline MwisResult mwis_greedy(const ConflictGraph& g, const std::vector<int>& verts) {
  std::vector<char> alive(static_cast<std::size_t>(g.size()), 0);
  for (int v : verts) {
    if (g.weight(v) > 0.0) alive[static_cast<std::size_t>(v)] = 1;
  }
  MwisResult r;
  r.exact = false;
  while (true) {
    int pick = -1;
    double best = 0.0;
    for (int v : verts) {
      if (!alive[static_cast<std::size_t>(v)]) continue;
      int deg = 0;
      for (int nb : g.neighbors(v)) deg += alive[static_cast<std::size_t>(nb)];
      const double score = g.weight(v) / (deg + 1);
      if (pick < 0 || score > best) {
        pick = v;
        best = score;
      }
    }
    if (pick < 0) break;
    r.vertices.push_back(pick);
    alive[static_cast<std::size_t>(pick)] = 0;
    for (int nb : g.neighbors(pick)) alive[static_cast<std::size_t>(nb)] = 0;
  }
  std::sort(r.vertices.begin(), r.vertices.end());
  r.weight = g.total_weight(r.vertices);
  return r;
}

inline MwisResult mwis_greedy(const ConflictGraph& g) {
  std::vector<int> all(static_cast<std::size_t>(g.size()));
  std::iota(all.begin(), all.end(), 0);
  return mwis_greedy(g, all);
}

inline MwisResult mwis(const ConflictGraph& g, const MwisOptions& opt = {}) {
  MwisResult out;
  for (const auto& comp : g.components()) {
    MwisResult part;
    bool solved = false;
    if (static_cast<int>(comp.size()) <= opt.exact_limit) {
      detail::MwisSearch s(g, comp, opt.node_budget);
      if (s.run()) {
        part.vertices = s.best;
        solved = true;
      }
    }
    if (!solved) {
      part = mwis_greedy(g, comp);
      out.exact = false;
    }
    out.vertices.insert(out.vertices.end(), part.vertices.begin(), part.vertices.end());
  }
  std::sort(out.vertices.begin(), out.vertices.end());
  out.weight = g.total_weight(out.vertices);
  if (!g.is_independent(out.vertices)) throw std::logic_error("mwis: selected set is not independent");
  return out;
}

}  // namespace sbtrack
