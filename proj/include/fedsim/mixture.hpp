#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "fedsim/core.hpp"
#include "fedsim/dataset.hpp"
#include "fedsim/loss.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

// Spherical Gaussian mixture used as a parametric estimate of a cluster's
// input marginal.
struct GaussianMixture {
  std::vector<ParamVector> means;
  std::vector<double> variances;  // isotropic, per component
  std::vector<double> weights;

  int components() const { return static_cast<int>(means.size()); }

  double log_density(const std::vector<double>& a) const {
    const double dim = static_cast<double>(a.size());
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> terms(means.size());
    for (std::size_t k = 0; k < means.size(); ++k) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < a.size(); ++j) {
        const double diff = a[j] - means[k][j];
        d2 += diff * diff;
      }
      terms[k] = std::log(weights[k]) - 0.5 * d2 / variances[k] -
                 0.5 * dim * std::log(2.0 * M_PI * variances[k]);
      best = std::max(best, terms[k]);
    }
    if (!std::isfinite(best)) return -std::numeric_limits<double>::infinity();
    double s = 0.0;
    for (double t : terms) s += std::exp(t - best);
    return best + std::log(s);
  }
};

// Expectation-maximization with a fixed iteration budget. Means start at
// randomly chosen distinct samples; variances are floored to keep the
// E-step responsibilities finite.
inline GaussianMixture fit_gmm(const std::vector<std::vector<double>>& inputs,
                               int components, int iterations, Rng& rng) {
  check(!inputs.empty(), "fit_gmm: no inputs");
  check(components >= 1, "fit_gmm: need at least one component");
  const std::size_t n = inputs.size();
  const std::size_t dim = inputs.front().size();
  const double var_floor = 1e-6;

  GaussianMixture g;
  auto pick = rng.sample_without_replacement(
      static_cast<int>(n), std::min<int>(components, static_cast<int>(n)));
  for (int k = 0; k < components; ++k) {
    g.means.push_back(inputs[static_cast<std::size_t>(pick[static_cast<std::size_t>(k) % pick.size()])]);
    g.weights.push_back(1.0 / components);
  }
  double total_var = 0.0;
  ParamVector grand = zeros(dim);
  for (const auto& a : inputs) axpy(1.0 / static_cast<double>(n), a, grand);
  for (const auto& a : inputs) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double diff = a[j] - grand[j];
      total_var += diff * diff;
    }
  }
  total_var = std::max(total_var / (static_cast<double>(n) * static_cast<double>(dim)), var_floor);
  g.variances.assign(static_cast<std::size_t>(components), total_var);

  std::vector<std::vector<double>> resp(n, std::vector<double>(static_cast<std::size_t>(components)));
  for (int it = 0; it < iterations; ++it) {
    // E-step
    for (std::size_t i = 0; i < n; ++i) {
      double best = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < components; ++k) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
          const double diff = inputs[i][j] - g.means[static_cast<std::size_t>(k)][j];
          d2 += diff * diff;
        }
        resp[i][static_cast<std::size_t>(k)] =
            std::log(g.weights[static_cast<std::size_t>(k)]) -
            0.5 * d2 / g.variances[static_cast<std::size_t>(k)] -
            0.5 * static_cast<double>(dim) * std::log(g.variances[static_cast<std::size_t>(k)]);
        best = std::max(best, resp[i][static_cast<std::size_t>(k)]);
      }
      double s = 0.0;
      for (int k = 0; k < components; ++k) {
        resp[i][static_cast<std::size_t>(k)] = std::exp(resp[i][static_cast<std::size_t>(k)] - best);
        s += resp[i][static_cast<std::size_t>(k)];
      }
      for (int k = 0; k < components; ++k) resp[i][static_cast<std::size_t>(k)] /= s;
    }
    // M-step
    for (int k = 0; k < components; ++k) {
      double nk = 0.0;
      ParamVector m = zeros(dim);
      for (std::size_t i = 0; i < n; ++i) {
        nk += resp[i][static_cast<std::size_t>(k)];
        axpy(resp[i][static_cast<std::size_t>(k)], inputs[i], m);
      }
      if (nk < 1e-12) continue;  // dead component keeps its parameters
      for (double& v : m) v /= nk;
      double v2 = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
          const double diff = inputs[i][j] - m[j];
          d2 += diff * diff;
        }
        v2 += resp[i][static_cast<std::size_t>(k)] * d2;
      }
      g.means[static_cast<std::size_t>(k)] = std::move(m);
      g.variances[static_cast<std::size_t>(k)] =
          std::max(v2 / (nk * static_cast<double>(dim)), var_floor);
      g.weights[static_cast<std::size_t>(k)] = nk / static_cast<double>(n);
    }
  }
  return g;
}

// One model per cluster plus the fitted marginal estimates used for gating.
struct ClusterModelSet {
  std::vector<ParamVector> models;
  std::vector<GaussianMixture> densities;
  LossSpec loss;

  int clusters() const { return static_cast<int>(models.size()); }
};

struct GateResult {
  std::vector<double> weights;
  bool underflow = false;  // every density underflowed; fell back to uniform
};

// alpha_c(a) = density_c(a) / sum_k density_k(a), evaluated in log space.
inline GateResult cluster_gate(const std::vector<double>& input,
                               const ClusterModelSet& set) {
  const int c = set.clusters();
  check(c >= 1 && static_cast<int>(set.densities.size()) == c,
        "cluster_gate: densities not fitted");
  GateResult out;
  out.weights.resize(static_cast<std::size_t>(c));
  std::vector<double> ld(static_cast<std::size_t>(c));
  double best = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < c; ++k) {
    ld[static_cast<std::size_t>(k)] = set.densities[static_cast<std::size_t>(k)].log_density(input);
    best = std::max(best, ld[static_cast<std::size_t>(k)]);
  }
  if (!std::isfinite(best)) {
    out.underflow = true;
    std::fill(out.weights.begin(), out.weights.end(), 1.0 / c);
    return out;
  }
  double s = 0.0;
  for (int k = 0; k < c; ++k) {
    out.weights[static_cast<std::size_t>(k)] = std::exp(ld[static_cast<std::size_t>(k)] - best);
    s += out.weights[static_cast<std::size_t>(k)];
  }
  for (double& w : out.weights) w /= s;
  return out;
}

// Combine the cluster models' predictions (not their parameters):
// sum_c alpha_c(a) q_{theta_c}(a).
inline std::vector<double> mixture_predict(const std::vector<double>& input,
                                           const ClusterModelSet& set) {
  const auto gate = cluster_gate(input, set);
  std::vector<double> out;
  for (int c = 0; c < set.clusters(); ++c) {
    auto pred = set.loss.is_classifier()
                    ? predict_proba(set.models[static_cast<std::size_t>(c)], input, set.loss)
                    : predict_scores(set.models[static_cast<std::size_t>(c)], input, set.loss);
    if (out.empty()) out = zeros(pred.size());
    for (std::size_t j = 0; j < pred.size(); ++j) {
      out[j] += gate.weights[static_cast<std::size_t>(c)] * pred[j];
    }
  }
  return out;
}

}  // namespace fedsim
