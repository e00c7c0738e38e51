#pragma once

// Independent reference implementations used only to check library results.

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

namespace oracle {

// Full-table word-level Levenshtein.
inline int edit_distance(const std::vector<std::string>& a,
                         const std::vector<std::string>& b) {
  std::vector<std::vector<int>> dp(a.size() + 1, std::vector<int>(b.size() + 1, 0));
  for (size_t i = 0; i <= a.size(); ++i) dp[i][0] = static_cast<int>(i);
  for (size_t j = 0; j <= b.size(); ++j) dp[0][j] = static_cast<int>(j);
  for (size_t i = 1; i <= a.size(); ++i)
    for (size_t j = 1; j <= b.size(); ++j)
      dp[i][j] = std::min({dp[i - 1][j] + 1, dp[i][j - 1] + 1,
                           dp[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
  return dp[a.size()][b.size()];
}

// Union-find connected components of the eps-neighborhood graph.
class UnionFind {
 public:
  explicit UnionFind(int n) : parent_(n) {
    std::iota(parent_.begin(), parent_.end(), 0);
  }
  int find(int x) {
    while (parent_[x] != x) x = parent_[x] = parent_[parent_[x]];
    return x;
  }
  void unite(int a, int b) { parent_[find(a)] = find(b); }

 private:
  std::vector<int> parent_;
};

// Component labels (0-based, order of first appearance) for points whose
// pairwise distances are given; edges where dist <= eps.
inline std::vector<int> eps_graph_components(
    const std::vector<std::vector<double>>& dist, double eps) {
  int n = static_cast<int>(dist.size());
  UnionFind uf(n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (dist[i][j] <= eps) uf.unite(i, j);
  std::vector<int> labels(n, -1);
  std::vector<int> remap;
  for (int i = 0; i < n; ++i) {
    int root = uf.find(i);
    int found = -1;
    for (size_t r = 0; r < remap.size(); ++r)
      if (remap[r] == root) found = static_cast<int>(r);
    if (found == -1) {
      found = static_cast<int>(remap.size());
      remap.push_back(root);
    }
    labels[i] = found;
  }
  return labels;
}

// Longest common subsequence length over word sequences.
inline int lcs(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::vector<int>> dp(a.size() + 1, std::vector<int>(b.size() + 1, 0));
  for (size_t i = 1; i <= a.size(); ++i)
    for (size_t j = 1; j <= b.size(); ++j)
      dp[i][j] = a[i - 1] == b[j - 1] ? dp[i - 1][j - 1] + 1
                                      : std::max(dp[i - 1][j], dp[i][j - 1]);
  return dp[a.size()][b.size()];
}

// Best total pair score over injective assignments, by explicit recursion
// over every mapping of rows to distinct columns (or none).
inline int best_assignment(const std::vector<std::vector<int>>& score) {
  int n = static_cast<int>(score.size());
  if (n == 0) return 0;
  int m = static_cast<int>(score[0].size());
  std::vector<bool> used(m, false);
  int best = 0;
  auto rec = [&](auto&& self, int i, int acc) -> void {
    best = std::max(best, acc);
    if (i == n) return;
    self(self, i + 1, acc);
    for (int j = 0; j < m; ++j) {
      if (used[j]) continue;
      used[j] = true;
      self(self, i + 1, acc + score[i][j]);
      used[j] = false;
    }
  };
  rec(rec, 0, 0);
  return best;
}

}  // namespace oracle
