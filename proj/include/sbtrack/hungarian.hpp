// Minimum-cost assignment (Kuhn-Munkres with potentials).
//
// Rectangular problems are padded to square with zero-cost dummy cells.
// Infinite entries mark forbidden pairs: they are replaced by a cost larger
// than any finite assignment can reach, so the solver first maximizes the
// number of admissible pairs and then minimizes their cost; forbidden pairs
// are dropped from the result. Among equal-cost optima the lexicographically
// smallest list of (row, col) pairs is returned. It is found by walking the
// tight-edge graph of the optimal duals, which contains every optimal
// assignment.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

namespace sbtrack {

using Assignment = std::vector<std::pair<int, int>>;

constexpr double kForbidden = std::numeric_limits<double>::infinity();

inline double assignment_cost(const Eigen::MatrixXd& cost, const Assignment& a) {
  double s = 0.0;
  for (auto [r, c] : a) s += cost(r, c);
  return s;
}

namespace detail {

/// Rematches row r to column c using only tight edges. Rows above r keep
/// their column, except rows left unmatched (holding a forbidden or dummy
/// cell), which may move to another unmatched cell. Returns false (matching
/// untouched) when impossible.
inline bool rematch_tight(int r, int c, std::vector<int>& row_of_col, std::vector<int>& col_of_row,
                          const std::vector<std::vector<char>>& tight,
                          const std::vector<std::vector<char>>& admissible) {
  const int n = static_cast<int>(col_of_row.size());
  auto movable = [&](int row) { return row > r || !admissible[row][col_of_row[row]]; };
  auto may_take = [&](int row, int col) { return row > r || !admissible[row][col]; };
  const int displaced = row_of_col[c];
  if (!movable(displaced)) return false;
  const int freed = col_of_row[r];
  // BFS from `displaced`, looking for an alternating path to `freed`.
  std::vector<int> prev_row(n, -1);
  std::vector<char> seen_col(n, 0);
  seen_col[c] = 1;
  std::vector<int> queue{displaced};
  prev_row[displaced] = displaced;
  for (std::size_t qi = 0; qi < queue.size(); ++qi) {
    const int u = queue[qi];
    for (int col = 0; col < n; ++col) {
      if (seen_col[col] || !tight[u][col] || !may_take(u, col)) continue;
      seen_col[col] = 1;
      if (col == freed) {
        // unwind: u takes `freed`, then walk back.
        int row = u;
        int take = col;
        while (true) {
          const int old = col_of_row[row];
          col_of_row[row] = take;
          row_of_col[take] = row;
          if (row == displaced) break;
          take = old;
          row = prev_row[row];
        }
        col_of_row[r] = c;
        row_of_col[c] = r;
        return true;
      }
      const int next = row_of_col[col];
      if (next == r || !movable(next) || prev_row[next] != -1) continue;
      prev_row[next] = u;
      queue.push_back(next);
    }
  }
  return false;
}

}  // namespace detail

inline Assignment hungarian(const Eigen::MatrixXd& cost) {
  const int m = static_cast<int>(cost.rows());
  const int ncols = static_cast<int>(cost.cols());
  const int n = std::max(m, ncols);
  if (n == 0) return {};

  double max_abs = 0.0;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < ncols; ++j) {
      const double c = cost(i, j);
      if (std::isnan(c) || c == -kForbidden) throw std::invalid_argument("hungarian: NaN or -inf cost");
      if (!std::isinf(c)) max_abs = std::max(max_abs, std::abs(c));
    }
  }
  const double big = 4.0 * (max_abs + 1.0) * (n + 1);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < ncols; ++j) a(i, j) = std::isinf(cost(i, j)) ? big : cost(i, j);
  }

  // Shortest augmenting path with potentials, 1-based internal arrays.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }

  std::vector<int> col_of_row(n), row_of_col(n);
  for (int j = 1; j <= n; ++j) {
    row_of_col[j - 1] = p[j] - 1;
    col_of_row[p[j] - 1] = j - 1;
  }

  // Lexicographic refinement on the tight-edge graph.
  const double tol = 1e-11 * (1.0 + big) * n;
  std::vector<std::vector<char>> tight(n, std::vector<char>(n, 0));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) tight[i][j] = (a(i, j) - u[i + 1] - v[j + 1]) <= tol;
    tight[i][col_of_row[i]] = 1;
  }
  std::vector<std::vector<char>> admissible(n, std::vector<char>(n, 0));
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < ncols; ++j) admissible[i][j] = !std::isinf(cost(i, j));
  }
  // Row by row, take the smallest admissible column some optimal assignment
  // allows; an unmatched row ranks after every admissible column.
  for (int r = 0; r < m; ++r) {
    const int limit = admissible[r][col_of_row[r]] ? col_of_row[r] : n;
    for (int c = 0; c < limit; ++c) {
      if (!tight[r][c] || !admissible[r][c]) continue;
      if (detail::rematch_tight(r, c, row_of_col, col_of_row, tight, admissible)) break;
    }
  }

  Assignment out;
  for (int i = 0; i < m; ++i) {
    const int j = col_of_row[i];
    if (j < ncols && !std::isinf(cost(i, j))) out.emplace_back(i, j);
  }
  return out;
}

}  // namespace sbtrack
