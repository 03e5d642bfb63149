#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fedsim/core.hpp"
#include "fedsim/dataset.hpp"
#include "fedsim/loss.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

enum class LrRule { Constant, Diminishing };

struct TrainingSchedule {
  int local_steps = 1;    // E: SGD steps between synchronizations
  int batch_size = 1;     // B
  long total_steps = 1;   // T
  LrRule lr_rule = LrRule::Constant;
  double lr0 = 0.1;       // constant rule
  double mu = 1.0;        // diminishing rule: eta_t = 2 / (mu * (gamma + t))
  double gamma = 8.0;

  double learning_rate(long t) const {
    if (lr_rule == LrRule::Constant) return lr0;
    return 2.0 / (mu * (gamma + static_cast<double>(t)));
  }
};

// theta - eta * grad(theta; batch). Aborts with a diagnostic if the gradient
// is not finite (divergence is a config error, not a recoverable state).
inline ParamVector sgd_step(const ParamVector& theta, const LocalDataset& ds,
                            const std::vector<int>& batch, double eta,
                            const LossSpec& spec) {
  check(eta > 0.0, "sgd_step: learning rate must be positive");
  ParamVector grad = loss_gradient(theta, ds, batch, spec);
  if (!all_finite(grad)) {
    throw Error("sgd_step: non-finite gradient at eta=" + std::to_string(eta) +
                ", |theta|=" + std::to_string(norm(theta)));
  }
  ParamVector next = theta;
  axpy(-eta, grad, next);
  return next;
}

// Without-replacement mini-batch cursor: walks a shuffled permutation in
// B-sized chunks and reshuffles when fewer than B indices remain.
class BatchSampler {
 public:
  BatchSampler(int n, int batch_size, Rng& rng)
      : n_(n), batch_size_(batch_size), rng_(rng), perm_(static_cast<std::size_t>(n)) {
    check(batch_size >= 1 && batch_size <= n, "batch size must be in [1, n_i]");
    for (int i = 0; i < n; ++i) perm_[static_cast<std::size_t>(i)] = i;
    rng_.shuffle(perm_);
  }

  std::vector<int> next() {
    if (pos_ + batch_size_ > n_) {
      rng_.shuffle(perm_);
      pos_ = 0;
    }
    std::vector<int> batch(perm_.begin() + pos_, perm_.begin() + pos_ + batch_size_);
    pos_ += batch_size_;
    return batch;
  }

 private:
  int n_;
  int batch_size_;
  Rng& rng_;
  std::vector<int> perm_;
  int pos_ = 0;
};

// E local SGD steps from the distributed global model. step0 is the global
// step index at the start of the round (round * E), so the diminishing rule
// sees the same t as a monolithic run would. The rng must be the
// per-(round,user) batch substream.
inline ParamVector local_train(const ParamVector& theta_global,
                               const LocalDataset& ds,
                               const TrainingSchedule& schedule,
                               const LossSpec& spec, Rng& rng, long step0 = 0) {
  if (schedule.local_steps == 0) return theta_global;
  check(schedule.local_steps > 0, "local_train: E must be >= 0");
  BatchSampler sampler(ds.size(), schedule.batch_size, rng);
  ParamVector theta = theta_global;
  for (int e = 0; e < schedule.local_steps; ++e) {
    const double eta = schedule.learning_rate(step0 + e);
    theta = sgd_step(theta, ds, sampler.next(), eta, spec);
  }
  return theta;
}

// Weighted global objective: sum_i p_i * local_loss(theta, D_i).
inline double global_loss(const ParamVector& theta,
                          const std::vector<LocalDataset>& datasets,
                          const std::vector<double>& weights,
                          const LossSpec& spec) {
  check(datasets.size() == weights.size(), "global_loss: N mismatch");
  double wsum = 0.0;
  for (double p : weights) {
    check(p >= 0.0, "global_loss: weights must be non-negative");
    wsum += p;
  }
  check(std::abs(wsum - 1.0) <= 1e-9, "global_loss: weights must sum to 1");
  double f = 0.0;
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    f += weights[i] * local_loss(theta, datasets[i], spec);
  }
  return f;
}

inline std::vector<double> proportional_weights(const std::vector<long>& sizes) {
  double total = 0.0;
  for (long n : sizes) {
    check(n >= 1, "proportional_weights: dataset sizes must be positive");
    total += static_cast<double>(n);
  }
  std::vector<double> p(sizes.size());
  for (std::size_t i = 0; i < sizes.size(); ++i) p[i] = static_cast<double>(sizes[i]) / total;
  return p;
}

}  // namespace fedsim
