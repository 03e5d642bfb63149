#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "fedsim/core.hpp"
#include "fedsim/dataset.hpp"
#include "fedsim/loss.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/training.hpp"

namespace fedsim {

// Inputs of the local-SGD convergence bound and its quantized / over-the-air
// perturbations.
struct BoundParams {
  double smooth_L = 1.0;         // L
  double strong_mu = 1.0;        // mu
  int local_steps = 1;           // E
  long total_steps = 1;          // T
  double heterogeneity = 0.0;    // Gamma = F* - sum_i p_i f_i*
  double grad_bound_sq = 0.0;    // G^2
  std::vector<double> weights;   // p_i
  std::vector<double> grad_var;  // sigma_i^2
  double init_dist = 0.0;        // E||theta_0 - theta*||^2

  struct LatticeTerm {
    long subvectors = 1;     // M_bar
    double zeta = 1.0;
    double cell_moment = 1.0 / 12.0;  // sigma_bar_L^2
  };
  struct OtaTerm {
    long model_dim = 1;      // d
    double noise_var = 0.0;  // sigma_w^2
    double power = 1.0;      // P
    int n_users = 1;         // N
  };
  std::optional<LatticeTerm> lattice;
  std::optional<OtaTerm> ota;

  double gamma() const {
    return std::max(8.0 * smooth_L / strong_mu, static_cast<double>(local_steps));
  }

  double b_tilde() const {
    check(weights.size() == grad_var.size(), "bound params: p/sigma size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      s += weights[i] * weights[i] * grad_var[i];
    }
    const double e1 = static_cast<double>(local_steps) - 1.0;
    return s + 6.0 * smooth_L * heterogeneity + 8.0 * e1 * e1 * grad_bound_sq;
  }

  double weighted_var_sum() const {
    double s = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      s += weights[i] * weights[i] * grad_var[i];
    }
    return s;
  }
};

namespace detail {

inline double bound_from_btilde(const BoundParams& bp, double b_tilde) {
  check(bp.smooth_L >= bp.strong_mu && bp.strong_mu > 0.0,
        "bound: requires L >= mu > 0");
  check(bp.local_steps >= 1 && bp.total_steps >= 1, "bound: E, T must be >= 1");
  const double g = bp.gamma();
  return bp.smooth_L / (g + static_cast<double>(bp.total_steps) - 1.0) *
         (2.0 * b_tilde / (bp.strong_mu * bp.strong_mu) + 0.5 * g * bp.init_dist);
}

}  // namespace detail

// E[F(theta_T)] - F* <= L/(gamma+T-1) * (2*B_tilde/mu^2 + gamma/2 * init_dist)
// for full participation with the diminishing rate eta_t = 2/(mu(gamma+t)).
inline double fedavg_bound(const BoundParams& bp) {
  return detail::bound_from_btilde(bp, bp.b_tilde());
}

// Lattice-quantized variant: B_tilde grows by
// 4 * M_bar * zeta^2 * sigma_bar^2 * E^2 * sum_i p_i^2 sigma_i^2.
inline double uveqfed_bound(const BoundParams& bp) {
  check(bp.lattice.has_value(), "uveqfed_bound: lattice parameters missing");
  const auto& lt = *bp.lattice;
  const double e = static_cast<double>(bp.local_steps);
  const double extra = 4.0 * static_cast<double>(lt.subvectors) * lt.zeta * lt.zeta *
                       lt.cell_moment * e * e * bp.weighted_var_sum();
  return detail::bound_from_btilde(bp, bp.b_tilde() + extra);
}

// Over-the-air variant: B_tilde grows by 4*d*E^2*G^2*sigma_w^2 / (P*N^2).
inline double cotaf_bound(const BoundParams& bp) {
  check(bp.ota.has_value(), "cotaf_bound: OTA parameters missing");
  const auto& ot = *bp.ota;
  const double e = static_cast<double>(bp.local_steps);
  const double n = static_cast<double>(ot.n_users);
  const double extra = 4.0 * static_cast<double>(ot.model_dim) * e * e *
                       bp.grad_bound_sq * ot.noise_var / (ot.power * n * n);
  return detail::bound_from_btilde(bp, bp.b_tilde() + extra);
}

// ----- parameter estimation for conforming (convex) objectives -----

namespace detail {

inline Eigen::MatrixXd design_matrix(const LocalDataset& ds, const LossSpec& spec) {
  const bool bias = spec.kind == LossKind::Logistic;
  const int d = spec.input_dim + (bias ? 1 : 0);
  Eigen::MatrixXd a(ds.size(), d);
  for (int i = 0; i < ds.size(); ++i) {
    for (int j = 0; j < spec.input_dim; ++j) {
      a(i, j) = ds.samples[static_cast<std::size_t>(i)].input[static_cast<std::size_t>(j)];
    }
    if (bias) a(i, d - 1) = 1.0;
  }
  return a;
}

// Extreme eigenvalues of the local Hessian (exact for least squares, the
// standard smoothness bound for softmax objectives).
inline std::pair<double, double> hessian_extremes(const LocalDataset& ds,
                                                  const LossSpec& spec) {
  const Eigen::MatrixXd a = design_matrix(ds, spec);
  const Eigen::MatrixXd gram = (a.transpose() * a) / static_cast<double>(ds.size());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
  const double lmax = es.eigenvalues().maxCoeff();
  const double lmin = es.eigenvalues().minCoeff();
  if (spec.kind == LossKind::Logistic) {
    // Softmax curvature is at most 1/2 of the Gram spectrum; only the ridge
    // term is guaranteed strongly convex.
    return {0.5 * lmax + spec.lambda, spec.lambda};
  }
  return {2.0 * lmax + spec.lambda, 2.0 * lmin + spec.lambda};
}

inline ParamVector ridge_minimizer(const LocalDataset& ds, const LossSpec& spec) {
  const Eigen::MatrixXd a = design_matrix(ds, spec);
  Eigen::VectorXd b(ds.size());
  for (int i = 0; i < ds.size(); ++i) b(i) = ds.samples[static_cast<std::size_t>(i)].label;
  const double n = static_cast<double>(ds.size());
  Eigen::MatrixXd h = (2.0 / n) * (a.transpose() * a);
  h.diagonal().array() += spec.lambda;
  const Eigen::VectorXd rhs = (2.0 / n) * (a.transpose() * b);
  const Eigen::VectorXd x = h.ldlt().solve(rhs);
  return ParamVector(x.data(), x.data() + x.size());
}

inline ParamVector gd_minimizer(const LocalDataset& ds, const LossSpec& spec,
                                double smooth_L, int max_iters = 20000,
                                double tol = 1e-12) {
  ParamVector theta = zeros(static_cast<std::size_t>(spec.param_dim()));
  const double eta = 1.0 / smooth_L;
  for (int it = 0; it < max_iters; ++it) {
    ParamVector g = loss_gradient(theta, ds, spec);
    if (sqnorm(g) < tol) break;
    axpy(-eta, g, theta);
  }
  return theta;
}

inline LocalDataset pool(const std::vector<LocalDataset>& datasets) {
  LocalDataset all;
  for (const auto& ds : datasets) {
    all.samples.insert(all.samples.end(), ds.samples.begin(), ds.samples.end());
  }
  return all;
}

}  // namespace detail

// Minimizer of the weighted global objective with p_i = n_i / sum n_j, which
// coincides with the pooled-data minimizer.
inline ParamVector global_minimizer(const std::vector<LocalDataset>& datasets,
                                    const LossSpec& spec) {
  const LocalDataset pooled = detail::pool(datasets);
  if (spec.kind == LossKind::SquaredError || spec.kind == LossKind::QuadraticSynthetic) {
    return detail::ridge_minimizer(pooled, spec);
  }
  check(spec.kind == LossKind::Logistic && spec.lambda > 0.0,
        "global_minimizer: quadratic or logistic-with-ridge objectives only");
  const auto [lmax, lmin] = detail::hessian_extremes(pooled, spec);
  (void)lmin;
  return detail::gd_minimizer(pooled, spec, lmax);
}

// L, mu from the data-matrix spectrum; Gamma from per-user minima; G^2 and
// sigma_i^2 from stochastic gradients sampled along a short reference run.
// theta0 is the run's initial model (init_dist is exact, not estimated).
inline BoundParams estimate_bound_params(const std::vector<LocalDataset>& datasets,
                                         const LossSpec& spec,
                                         const TrainingSchedule& schedule,
                                         const ParamVector& theta0, Rng& rng) {
  check(!datasets.empty(), "estimate_bound_params: no datasets");
  const bool quadratic = spec.kind == LossKind::SquaredError ||
                         spec.kind == LossKind::QuadraticSynthetic;
  check(quadratic || (spec.kind == LossKind::Logistic && spec.lambda > 0.0),
        "estimate_bound_params: quadratic or logistic-with-ridge objectives only");

  BoundParams bp;
  bp.local_steps = schedule.local_steps;
  bp.total_steps = schedule.total_steps;

  double lmax = 0.0;
  double lmin = std::numeric_limits<double>::infinity();
  for (const auto& ds : datasets) {
    const auto [hi, lo] = detail::hessian_extremes(ds, spec);
    lmax = std::max(lmax, hi);
    lmin = std::min(lmin, lo);
  }
  bp.smooth_L = lmax;
  bp.strong_mu = lmin;
  check(bp.strong_mu > 0.0, "estimate_bound_params: objective is not strongly convex");

  std::vector<long> sizes;
  for (const auto& ds : datasets) sizes.push_back(ds.size());
  bp.weights = proportional_weights(sizes);

  // Gamma = F* - sum_i p_i f_i*.
  const ParamVector theta_star = global_minimizer(datasets, spec);
  double f_star = global_loss(theta_star, datasets, bp.weights, spec);
  double local_opt_sum = 0.0;
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    ParamVector ti = quadratic ? detail::ridge_minimizer(datasets[i], spec)
                               : detail::gd_minimizer(
                                     datasets[i], spec,
                                     detail::hessian_extremes(datasets[i], spec).first);
    local_opt_sum += bp.weights[i] * local_loss(ti, datasets[i], spec);
  }
  bp.heterogeneity = std::max(0.0, f_star - local_opt_sum);
  bp.init_dist = sqnorm(sub(theta0, theta_star));

  // Reference trajectory: the global model under exact averaging, sampled at
  // synchronization points; stochastic gradients are probed at each point.
  TrainingSchedule ref = schedule;
  ref.mu = bp.strong_mu;
  ref.gamma = bp.gamma();
  ref.lr_rule = LrRule::Diminishing;
  const int probes = 16;
  double g2 = 0.0;
  std::vector<double> var(datasets.size(), 0.0);
  ParamVector theta = theta0;
  const long rounds = std::max<long>(1, schedule.total_steps / std::max(1, schedule.local_steps));
  const long probe_rounds = std::min<long>(rounds, 24);
  for (long r = 0; r <= probe_rounds; ++r) {
    for (std::size_t i = 0; i < datasets.size(); ++i) {
      const ParamVector full = loss_gradient(theta, datasets[i], spec);
      double dev = 0.0;
      for (int s = 0; s < probes; ++s) {
        Rng probe_rng = make_stream(rng.next_u64());
        BatchSampler sampler(datasets[i].size(), schedule.batch_size, probe_rng);
        const ParamVector g = loss_gradient(theta, datasets[i], sampler.next(), spec);
        g2 = std::max(g2, sqnorm(g));
        dev += sqnorm(sub(g, full)) / probes;
      }
      var[i] = std::max(var[i], dev);
    }
    if (r == probe_rounds) break;
    // advance by one aggregation round of exact local SGD
    ParamVector next = zeros(theta.size());
    for (std::size_t i = 0; i < datasets.size(); ++i) {
      Rng user_rng = make_stream(rng.next_u64());
      const ParamVector local =
          local_train(theta, datasets[i], ref, spec, user_rng, r * ref.local_steps);
      axpy(bp.weights[i], local, next);
    }
    theta = std::move(next);
  }
  bp.grad_bound_sq = 1.2 * g2;
  bp.grad_var = std::move(var);
  return bp;
}

}  // namespace fedsim
