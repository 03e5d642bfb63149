#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "fedsim/core.hpp"
#include "fedsim/encoding.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

// Decoded updates of one round's participants, aligned with their weights.
struct UpdateBatch {
  std::vector<ParamVector> rows;  // g_t^i, ascending user id
  std::vector<double> weights;    // p_i for the same users
  ParamVector reference;          // theta_{t-E}

  void validate() const {
    check(!rows.empty(), "update batch: empty");
    check(rows.size() == weights.size(), "update batch: weight count mismatch");
    const std::size_t d = reference.size();
    for (const auto& r : rows) check(r.size() == d, "update batch: row length mismatch");
    for (double w : weights) check(w >= 0.0, "update batch: negative weight");
  }
};

enum class AverageMode {
  Eq19Literal,  // theta = (N/|G|) sum_i p_i (g_i + theta_ref)
  DeltaOnly,    // theta = theta_ref + (N/|G|) sum_i p_i g_i
};

// Weighted FedAvg over the participating set. total_users is N; the batch
// rows are the members of G_t.
inline ParamVector fedavg_combine(const UpdateBatch& batch, int total_users,
                                  AverageMode mode = AverageMode::Eq19Literal) {
  batch.validate();
  check(total_users >= static_cast<int>(batch.rows.size()),
        "fedavg_combine: N smaller than |G_t|");
  const double prefactor =
      static_cast<double>(total_users) / static_cast<double>(batch.rows.size());
  ParamVector theta = zeros(batch.reference.size());
  for (std::size_t i = 0; i < batch.rows.size(); ++i) {
    axpy(prefactor * batch.weights[i], batch.rows[i], theta);
    if (mode == AverageMode::Eq19Literal) {
      axpy(prefactor * batch.weights[i], batch.reference, theta);
    }
  }
  if (mode == AverageMode::DeltaOnly) axpy(1.0, batch.reference, theta);
  return theta;
}

// Pre-scaling by N*p_i turns the unweighted robust aggregators into their
// weighted variants.
inline UpdateBatch weighted_rows(const UpdateBatch& batch, int total_users) {
  UpdateBatch out = batch;
  for (std::size_t i = 0; i < out.rows.size(); ++i) {
    const double s = static_cast<double>(total_users) * out.weights[i];
    for (double& v : out.rows[i]) v *= s;
  }
  return out;
}

// Coordinate-wise median of the deltas; even row counts take the midpoint of
// the two central order statistics.
inline ParamVector median_combine(const UpdateBatch& batch) {
  batch.validate();
  const std::size_t n = batch.rows.size();
  const std::size_t d = batch.reference.size();
  ParamVector out(d);
  std::vector<double> col(n);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < n; ++i) col[i] = batch.rows[i][j];
    std::sort(col.begin(), col.end());
    out[j] = (n % 2 == 1) ? col[n / 2] : 0.5 * (col[n / 2 - 1] + col[n / 2]);
  }
  return out;
}

// Coordinate-wise beta-trimmed mean: drop the floor(beta*N) largest and
// smallest values per coordinate, normalize by (1-2beta)N -- realized as the
// kept count when the floor makes them differ.
inline ParamVector trimmed_mean_combine(const UpdateBatch& batch, double beta) {
  batch.validate();
  check(beta >= 0.0 && beta < 0.5, "trimmed_mean: beta must be in [0, 0.5)");
  const std::size_t n = batch.rows.size();
  const std::size_t trim = static_cast<std::size_t>(
      std::floor(beta * static_cast<double>(n)));
  check(n > 2 * trim, "trimmed_mean: trimming removes every row");
  const std::size_t kept = n - 2 * trim;
  const std::size_t d = batch.reference.size();
  ParamVector out(d);
  std::vector<double> col(n);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < n; ++i) col[i] = batch.rows[i][j];
    std::sort(col.begin(), col.end());
    double s = 0.0;
    for (std::size_t i = trim; i < n - trim; ++i) s += col[i];
    out[j] = s / static_cast<double>(kept);
  }
  return out;
}

// Krum: score each row by the summed squared distances to its N-f-2 nearest
// neighbours and return the lowest-scoring row (ties to the lowest index).
inline ParamVector krum_combine(const UpdateBatch& batch, int byzantine_count) {
  batch.validate();
  const int n = static_cast<int>(batch.rows.size());
  check(byzantine_count >= 0, "krum: negative Byzantine count");
  check(n >= byzantine_count + 3, "krum: needs N >= f + 3");
  const int neighbours = n - byzantine_count - 2;

  std::vector<std::vector<double>> dist2(
      static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(n), 0.0));
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double d2 = sqnorm(sub(batch.rows[static_cast<std::size_t>(i)],
                                   batch.rows[static_cast<std::size_t>(j)]));
      dist2[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = d2;
      dist2[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = d2;
    }
  }
  int best = 0;
  double best_score = std::numeric_limits<double>::infinity();
  std::vector<double> others;
  for (int i = 0; i < n; ++i) {
    others.clear();
    for (int j = 0; j < n; ++j) {
      if (j != i) others.push_back(dist2[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
    }
    std::sort(others.begin(), others.end());
    double score = 0.0;
    for (int m = 0; m < neighbours; ++m) score += others[static_cast<std::size_t>(m)];
    if (score < best_score) {
      best_score = score;
      best = i;
    }
  }
  return batch.rows[static_cast<std::size_t>(best)];
}

// ----- attacker model -----

enum class AttackKind { None, SignFlip, Gaussian, Scale, ReportedSize };

struct AttackSpec {
  AttackKind kind = AttackKind::None;
  double noise_std = 1.0;          // gaussian
  double scale = 1.0;              // scale
  long reported_size = 1;          // reported-size

  void validate() const {
    check(std::isfinite(noise_std) && std::isfinite(scale),
          "attack: parameters must be finite");
    check(reported_size >= 1, "attack: reported size must be positive");
  }
};

inline ModelUpdate byzantine_perturb(const ModelUpdate& u, const AttackSpec& attack,
                                     Rng& rng) {
  attack.validate();
  ModelUpdate out = u;
  switch (attack.kind) {
    case AttackKind::None:
      break;
    case AttackKind::SignFlip:
      for (double& v : out.delta) v = -v;
      break;
    case AttackKind::Gaussian:
      for (double& v : out.delta) v = rng.normal(0.0, attack.noise_std);
      break;
    case AttackKind::Scale:
      for (double& v : out.delta) v *= attack.scale;
      break;
    case AttackKind::ReportedSize:
      out.n_samples = attack.reported_size;
      break;
  }
  return out;
}

}  // namespace fedsim
