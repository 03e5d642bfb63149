#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "fedsim/core.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

// Uniform K-subset of {0..N-1}; independent across calls.
inline std::vector<int> select_uniform(int n_users, int k, Rng& rng) {
  check(k >= 1 && k <= n_users, "select_uniform: K out of range");
  return rng.sample_without_replacement(n_users, k);
}

// Contiguous rotation so every user participates at least once in any
// ceil(N/K) consecutive rounds.
inline std::vector<int> select_round_robin(int n_users, int k, long round) {
  check(k >= 1 && k <= n_users, "select_round_robin: K out of range");
  std::vector<int> out(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) {
    out[static_cast<std::size_t>(j)] =
        static_cast<int>((round * k + j) % n_users);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Participation probabilities balancing update contribution against access
// distance:
//   rho_i = alpha * ||u_i|| / sum_j ||u_j||
//         + (1-alpha) * (max_j d_j - d_i) / (N max_j d_j - sum_j d_j).
// Degenerate inputs (all-equal distances, all-zero norms) make the affected
// term uniform.
inline std::vector<double> participation_probabilities(
    const std::vector<double>& update_norms, const std::vector<double>& distances,
    double alpha) {
  const std::size_t n = update_norms.size();
  check(n >= 1 && distances.size() == n,
        "participation_probabilities: size mismatch");
  check(alpha >= 0.0 && alpha <= 1.0,
        "participation_probabilities: alpha must be in [0,1]");
  double norm_sum = 0.0;
  for (double v : update_norms) {
    check(v >= 0.0, "participation_probabilities: negative norm");
    norm_sum += v;
  }
  const double dmax = *std::max_element(distances.begin(), distances.end());
  const double dsum = std::accumulate(distances.begin(), distances.end(), 0.0);
  const double dist_denom = static_cast<double>(n) * dmax - dsum;

  std::vector<double> rho(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double contrib = (norm_sum > 0.0) ? update_norms[i] / norm_sum
                                            : 1.0 / static_cast<double>(n);
    const double proximity = (dist_denom > 0.0)
                                 ? (dmax - distances[i]) / dist_denom
                                 : 1.0 / static_cast<double>(n);
    rho[i] = alpha * contrib + (1.0 - alpha) * proximity;
  }
  return rho;
}

// Draw K distinct users by successive sampling without replacement
// proportional to rho, renormalizing after each draw.
inline std::vector<int> select_probabilistic(const std::vector<double>& update_norms,
                                             const std::vector<double>& distances,
                                             double alpha, int k, Rng& rng) {
  const int n = static_cast<int>(update_norms.size());
  check(k >= 1 && k <= n, "select_probabilistic: K out of range");
  std::vector<double> w = participation_probabilities(update_norms, distances, alpha);
  std::vector<int> ids(static_cast<std::size_t>(n));
  std::iota(ids.begin(), ids.end(), 0);
  std::vector<int> chosen;
  chosen.reserve(static_cast<std::size_t>(k));
  for (int draw = 0; draw < k; ++draw) {
    double total = std::accumulate(w.begin(), w.end(), 0.0);
    std::size_t pick = 0;
    if (total <= 0.0) {
      pick = static_cast<std::size_t>(rng.below(ids.size()));  // all mass removed
    } else {
      const double r = rng.uniform01() * total;
      double acc = 0.0;
      pick = ids.size() - 1;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        acc += w[i];
        if (r < acc) {
          pick = i;
          break;
        }
      }
    }
    chosen.push_back(ids[pick]);
    ids.erase(ids.begin() + static_cast<std::ptrdiff_t>(pick));
    w.erase(w.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

// Online selection state: observed per-user transmission behavior.
struct BanditState {
  std::vector<double> mean_delay;
  std::vector<long> pulls;

  explicit BanditState(int n_users = 0)
      : mean_delay(static_cast<std::size_t>(n_users), 0.0),
        pulls(static_cast<std::size_t>(n_users), 0) {}

  void record(int user, double delay_s) {
    auto& m = mean_delay[static_cast<std::size_t>(user)];
    auto& c = pulls[static_cast<std::size_t>(user)];
    ++c;
    m += (delay_s - m) / static_cast<double>(c);
  }
};

// UCB-style index: exploit low observed delay, explore rarely-selected
// users. Users never selected get an infinite index; ties break to the
// lowest id.
inline std::vector<int> select_bandit(const BanditState& state, int k, long round,
                                      double explore_c = M_SQRT2) {
  const int n = static_cast<int>(state.mean_delay.size());
  check(k >= 1 && k <= n, "select_bandit: K out of range");
  check(round >= 1, "select_bandit: rounds are 1-based");
  std::vector<double> index(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const long c = state.pulls[static_cast<std::size_t>(i)];
    if (c == 0) {
      index[static_cast<std::size_t>(i)] = std::numeric_limits<double>::infinity();
    } else {
      index[static_cast<std::size_t>(i)] =
          -state.mean_delay[static_cast<std::size_t>(i)] +
          explore_c * std::sqrt(std::log(static_cast<double>(round)) /
                                static_cast<double>(c));
    }
  }
  std::vector<int> ids(static_cast<std::size_t>(n));
  std::iota(ids.begin(), ids.end(), 0);
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
    return index[static_cast<std::size_t>(a)] > index[static_cast<std::size_t>(b)];
  });
  ids.resize(static_cast<std::size_t>(k));
  std::sort(ids.begin(), ids.end());
  return ids;
}

// Delay matrix D[i][k]: seconds for selected user i on resource block k.
struct DelayMatrix {
  std::vector<std::vector<double>> d;

  int users() const { return static_cast<int>(d.size()); }
  int blocks() const { return d.empty() ? 0 : static_cast<int>(d.front().size()); }

  void validate() const {
    check(!d.empty(), "delay matrix: empty");
    const std::size_t k = d.front().size();
    check(d.size() <= k, "delay matrix: more users than blocks");
    for (const auto& row : d) {
      check(row.size() == k, "delay matrix: ragged rows");
      for (double v : row) {
        check(std::isfinite(v) && v > 0.0, "delay matrix: entries must be positive finite");
      }
    }
  }
};

struct BlockAssignment {
  std::vector<int> block_of_user;
  double bottleneck = 0.0;
};

namespace detail {

// Kuhn's augmenting-path matching over edges with delay <= threshold.
inline bool bipartite_feasible(const DelayMatrix& dm, double threshold,
                               std::vector<int>& match_block_to_user) {
  const int n = dm.users();
  const int k = dm.blocks();
  match_block_to_user.assign(static_cast<std::size_t>(k), -1);
  std::vector<char> visited;
  std::function<bool(int)> augment = [&](int user) -> bool {
    for (int b = 0; b < k; ++b) {
      if (visited[static_cast<std::size_t>(b)]) continue;
      if (dm.d[static_cast<std::size_t>(user)][static_cast<std::size_t>(b)] > threshold) continue;
      visited[static_cast<std::size_t>(b)] = 1;
      int& owner = match_block_to_user[static_cast<std::size_t>(b)];
      if (owner < 0 || augment(owner)) {
        owner = user;
        return true;
      }
    }
    return false;
  };
  for (int u = 0; u < n; ++u) {
    visited.assign(static_cast<std::size_t>(k), 0);
    if (!augment(u)) return false;
  }
  return true;
}

}  // namespace detail

// Min-max (bottleneck) assignment of users to distinct resource blocks:
// binary search on the bottleneck value over the matrix entries, with a
// bipartite perfect-matching feasibility test at each candidate.
inline BlockAssignment assign_blocks(const DelayMatrix& dm) {
  dm.validate();
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(dm.users() * dm.blocks()));
  for (const auto& row : dm.d) values.insert(values.end(), row.begin(), row.end());
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());

  std::vector<int> match;
  std::size_t lo = 0, hi = values.size() - 1;
  check(detail::bipartite_feasible(dm, values[hi], match),
        "assign_blocks: infeasible instance");
  while (lo < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (detail::bipartite_feasible(dm, values[mid], match)) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  detail::bipartite_feasible(dm, values[lo], match);

  BlockAssignment out;
  out.block_of_user.assign(static_cast<std::size_t>(dm.users()), -1);
  for (int b = 0; b < dm.blocks(); ++b) {
    const int u = match[static_cast<std::size_t>(b)];
    if (u >= 0) out.block_of_user[static_cast<std::size_t>(u)] = b;
  }
  out.bottleneck = 0.0;
  for (int u = 0; u < dm.users(); ++u) {
    const int b = out.block_of_user[static_cast<std::size_t>(u)];
    check(b >= 0, "assign_blocks: user left unassigned");
    out.bottleneck = std::max(
        out.bottleneck, dm.d[static_cast<std::size_t>(u)][static_cast<std::size_t>(b)]);
  }
  return out;
}

}  // namespace fedsim
