#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "fedsim/core.hpp"
#include "fedsim/dataset.hpp"

namespace fedsim {

// quadratic_synthetic is mathematically least squares; the separate kind
// marks objectives whose minimizer is available in closed form, which the
// bound calculator requires.
enum class LossKind { SquaredError, Logistic, QuadraticSynthetic, Mlp };

struct LossSpec {
  LossKind kind = LossKind::SquaredError;
  double lambda = 0.0;  // ridge weight on ||theta||^2 / 2
  int input_dim = 0;
  int num_classes = 2;   // logistic / mlp
  int hidden_units = 50; // mlp

  bool is_classifier() const {
    return kind == LossKind::Logistic || kind == LossKind::Mlp;
  }

  int param_dim() const {
    switch (kind) {
      case LossKind::SquaredError:
      case LossKind::QuadraticSynthetic:
        return input_dim;
      case LossKind::Logistic:
        return num_classes * (input_dim + 1);
      case LossKind::Mlp:
        return hidden_units * (input_dim + 1) + num_classes * (hidden_units + 1);
    }
    return 0;
  }
};

namespace detail {

inline double log_sum_exp(const std::vector<double>& z) {
  const double zmax = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - zmax);
  return zmax + std::log(s);
}

inline void softmax_inplace(std::vector<double>& z) {
  const double lse = log_sum_exp(z);
  for (double& v : z) v = std::exp(v - lse);
}

// Class scores for the linear softmax model; theta rows are [w_c; b_c].
inline std::vector<double> logistic_scores(const ParamVector& theta,
                                           const std::vector<double>& a,
                                           const LossSpec& spec) {
  const int d = spec.input_dim;
  std::vector<double> z(static_cast<std::size_t>(spec.num_classes));
  for (int c = 0; c < spec.num_classes; ++c) {
    const std::size_t base = static_cast<std::size_t>(c) * (d + 1);
    double s = theta[base + static_cast<std::size_t>(d)];
    for (int j = 0; j < d; ++j) s += theta[base + static_cast<std::size_t>(j)] * a[static_cast<std::size_t>(j)];
    z[static_cast<std::size_t>(c)] = s;
  }
  return z;
}

struct MlpLayout {
  int d, h, k;
  std::size_t w1(int unit, int in) const {  // in == d means bias
    return static_cast<std::size_t>(unit) * (d + 1) + static_cast<std::size_t>(in);
  }
  std::size_t w2(int cls, int unit) const {  // unit == h means bias
    return static_cast<std::size_t>(h) * (d + 1) +
           static_cast<std::size_t>(cls) * (h + 1) + static_cast<std::size_t>(unit);
  }
};

inline std::vector<double> mlp_scores(const ParamVector& theta,
                                      const std::vector<double>& a,
                                      const LossSpec& spec,
                                      std::vector<double>* hidden_out = nullptr) {
  const MlpLayout L{spec.input_dim, spec.hidden_units, spec.num_classes};
  std::vector<double> h(static_cast<std::size_t>(L.h));
  for (int u = 0; u < L.h; ++u) {
    double s = theta[L.w1(u, L.d)];
    for (int j = 0; j < L.d; ++j) s += theta[L.w1(u, j)] * a[static_cast<std::size_t>(j)];
    h[static_cast<std::size_t>(u)] = std::tanh(s);
  }
  std::vector<double> z(static_cast<std::size_t>(L.k));
  for (int c = 0; c < L.k; ++c) {
    double s = theta[L.w2(c, L.h)];
    for (int u = 0; u < L.h; ++u) s += theta[L.w2(c, u)] * h[static_cast<std::size_t>(u)];
    z[static_cast<std::size_t>(c)] = s;
  }
  if (hidden_out) *hidden_out = std::move(h);
  return z;
}

inline int class_of(const Sample& s, const LossSpec& spec) {
  const int c = static_cast<int>(std::lround(s.label));
  check(c >= 0 && c < spec.num_classes, "sample label outside class range");
  return c;
}

inline double sample_loss(const ParamVector& theta, const Sample& s,
                          const LossSpec& spec) {
  switch (spec.kind) {
    case LossKind::SquaredError:
    case LossKind::QuadraticSynthetic: {
      const double r = dot(theta, s.input) - s.label;
      return r * r;
    }
    case LossKind::Logistic: {
      auto z = logistic_scores(theta, s.input, spec);
      return log_sum_exp(z) - z[static_cast<std::size_t>(class_of(s, spec))];
    }
    case LossKind::Mlp: {
      auto z = mlp_scores(theta, s.input, spec);
      return log_sum_exp(z) - z[static_cast<std::size_t>(class_of(s, spec))];
    }
  }
  return 0.0;
}

inline void add_sample_gradient(const ParamVector& theta, const Sample& s,
                                const LossSpec& spec, double weight,
                                ParamVector& grad) {
  switch (spec.kind) {
    case LossKind::SquaredError:
    case LossKind::QuadraticSynthetic: {
      const double r = dot(theta, s.input) - s.label;
      axpy(weight * 2.0 * r, s.input, grad);
      return;
    }
    case LossKind::Logistic: {
      auto p = logistic_scores(theta, s.input, spec);
      softmax_inplace(p);
      p[static_cast<std::size_t>(class_of(s, spec))] -= 1.0;
      const int d = spec.input_dim;
      for (int c = 0; c < spec.num_classes; ++c) {
        const double g = weight * p[static_cast<std::size_t>(c)];
        const std::size_t base = static_cast<std::size_t>(c) * (d + 1);
        for (int j = 0; j < d; ++j) grad[base + static_cast<std::size_t>(j)] += g * s.input[static_cast<std::size_t>(j)];
        grad[base + static_cast<std::size_t>(d)] += g;
      }
      return;
    }
    case LossKind::Mlp: {
      const MlpLayout L{spec.input_dim, spec.hidden_units, spec.num_classes};
      std::vector<double> h;
      auto p = mlp_scores(theta, s.input, spec, &h);
      softmax_inplace(p);
      p[static_cast<std::size_t>(class_of(s, spec))] -= 1.0;
      std::vector<double> dh(static_cast<std::size_t>(L.h), 0.0);
      for (int c = 0; c < L.k; ++c) {
        const double g = weight * p[static_cast<std::size_t>(c)];
        for (int u = 0; u < L.h; ++u) {
          grad[L.w2(c, u)] += g * h[static_cast<std::size_t>(u)];
          dh[static_cast<std::size_t>(u)] += g * theta[L.w2(c, u)];
        }
        grad[L.w2(c, L.h)] += g;
      }
      for (int u = 0; u < L.h; ++u) {
        const double t = h[static_cast<std::size_t>(u)];
        const double du = dh[static_cast<std::size_t>(u)] * (1.0 - t * t);
        for (int j = 0; j < L.d; ++j) grad[L.w1(u, j)] += du * s.input[static_cast<std::size_t>(j)];
        grad[L.w1(u, L.d)] += du;
      }
      return;
    }
  }
}

inline void check_shapes(const ParamVector& theta, const LocalDataset& ds,
                         const LossSpec& spec) {
  check(!ds.empty(), "loss: empty dataset");
  check(static_cast<int>(theta.size()) == spec.param_dim(),
        "loss: parameter vector does not match model dimension");
  check(ds.input_dim() == spec.input_dim, "loss: input dimension mismatch");
}

}  // namespace detail

// Mean per-sample loss over the dataset plus lambda * ||theta||^2 / 2.
inline double local_loss(const ParamVector& theta, const LocalDataset& ds,
                         const LossSpec& spec) {
  detail::check_shapes(theta, ds, spec);
  double s = 0.0;
  for (const auto& sample : ds.samples) s += detail::sample_loss(theta, sample, spec);
  const double v = s / ds.size() + 0.5 * spec.lambda * sqnorm(theta);
  check(std::isfinite(v), "local_loss: non-finite value");
  return v;
}

// Gradient of local_loss restricted to the given batch indices.
inline ParamVector loss_gradient(const ParamVector& theta, const LocalDataset& ds,
                                 const std::vector<int>& batch,
                                 const LossSpec& spec) {
  detail::check_shapes(theta, ds, spec);
  check(!batch.empty(), "loss_gradient: empty batch");
  ParamVector grad = zeros(theta.size());
  const double w = 1.0 / static_cast<double>(batch.size());
  for (int idx : batch) {
    check(idx >= 0 && idx < ds.size(), "loss_gradient: batch index out of range");
    detail::add_sample_gradient(theta, ds.samples[static_cast<std::size_t>(idx)], spec, w, grad);
  }
  if (spec.lambda != 0.0) axpy(spec.lambda, theta, grad);
  return grad;
}

inline ParamVector loss_gradient(const ParamVector& theta, const LocalDataset& ds,
                                 const LossSpec& spec) {
  std::vector<int> all(static_cast<std::size_t>(ds.size()));
  for (int i = 0; i < ds.size(); ++i) all[static_cast<std::size_t>(i)] = i;
  return loss_gradient(theta, ds, all, spec);
}

inline std::vector<double> predict_scores(const ParamVector& theta,
                                          const std::vector<double>& input,
                                          const LossSpec& spec) {
  if (spec.kind == LossKind::Logistic) return detail::logistic_scores(theta, input, spec);
  if (spec.kind == LossKind::Mlp) return detail::mlp_scores(theta, input, spec);
  return {dot(theta, input)};
}

inline std::vector<double> predict_proba(const ParamVector& theta,
                                         const std::vector<double>& input,
                                         const LossSpec& spec) {
  auto z = predict_scores(theta, input, spec);
  if (spec.is_classifier()) detail::softmax_inplace(z);
  return z;
}

inline double accuracy(const ParamVector& theta, const LocalDataset& ds,
                       const LossSpec& spec) {
  check(spec.is_classifier(), "accuracy: classification models only");
  if (ds.empty()) return 0.0;
  int hits = 0;
  for (const auto& s : ds.samples) {
    auto z = predict_scores(theta, s.input, spec);
    const int pred = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
    if (pred == detail::class_of(s, spec)) ++hits;
  }
  return static_cast<double>(hits) / ds.size();
}

}  // namespace fedsim
