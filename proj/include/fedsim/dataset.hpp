#pragma once

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fedsim/core.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

struct Sample {
  std::vector<double> input;
  double label = 0.0;  // class index for classification, target for regression
};

struct LocalDataset {
  std::vector<Sample> samples;

  int size() const { return static_cast<int>(samples.size()); }
  bool empty() const { return samples.empty(); }

  int input_dim() const {
    return samples.empty() ? 0 : static_cast<int>(samples.front().input.size());
  }

  void validate() const {
    check(!samples.empty(), "dataset: must contain at least one sample");
    const std::size_t d = samples.front().input.size();
    for (const auto& s : samples) {
      check(s.input.size() == d, "dataset: inputs must share a dimension");
      check(std::isfinite(s.label), "dataset: non-finite label");
      for (double x : s.input) check(std::isfinite(x), "dataset: non-finite input");
    }
  }
};

// Columnar text format: one sample per line, comma-separated features,
// last field is the label.
inline LocalDataset load_columnar(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "load_columnar: cannot open " + path);
  LocalDataset ds;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Sample s;
    std::stringstream ss(line);
    std::string field;
    std::vector<double> vals;
    while (std::getline(ss, field, ',')) {
      try {
        vals.push_back(std::stod(field));
      } catch (const std::exception&) {
        throw Error("load_columnar: bad numeric field '" + field + "' in " + path);
      }
    }
    check(vals.size() >= 2, "load_columnar: each line needs >=1 feature and a label");
    s.label = vals.back();
    vals.pop_back();
    s.input = std::move(vals);
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

inline void save_columnar(const LocalDataset& ds, const std::string& path) {
  std::ofstream out(path);
  check(out.good(), "save_columnar: cannot open " + path);
  out.precision(17);
  for (const auto& s : ds.samples) {
    for (double x : s.input) out << x << ',';
    out << s.label << '\n';
  }
}

// ----- synthetic pools -----

// Linear-regression pool with a known generating parameter vector; the
// induced least-squares objective has a closed-form minimizer.
struct RegressionPool {
  LocalDataset data;
  ParamVector theta_true;
};

inline RegressionPool make_regression_pool(int n, int dim, double noise_std,
                                           double feature_spread, Rng& rng) {
  check(n >= 1 && dim >= 1, "make_regression_pool: bad sizes");
  RegressionPool pool;
  pool.theta_true.resize(static_cast<std::size_t>(dim));
  for (auto& w : pool.theta_true) w = rng.normal();
  // Mild per-coordinate scale spread keeps the Hessian condition number
  // small enough for the diminishing-rate runs to resolve the 1/T decay.
  std::vector<double> scale(static_cast<std::size_t>(dim));
  for (int j = 0; j < dim; ++j) {
    scale[static_cast<std::size_t>(j)] =
        1.0 + feature_spread * static_cast<double>(j) / std::max(1, dim - 1);
  }
  pool.data.samples.resize(static_cast<std::size_t>(n));
  for (auto& s : pool.data.samples) {
    s.input.resize(static_cast<std::size_t>(dim));
    for (int j = 0; j < dim; ++j) {
      s.input[static_cast<std::size_t>(j)] = scale[static_cast<std::size_t>(j)] * rng.normal();
    }
    s.label = dot(s.input, pool.theta_true) + noise_std * rng.normal();
  }
  return pool;
}

// Gaussian-blob classification pool; class means are centered so they sum
// to zero, with pairwise separation controlled by `separation`.
inline LocalDataset make_blobs_pool(int n, int dim, int classes,
                                    double separation, double within_std,
                                    Rng& rng) {
  check(n >= classes && dim >= 1 && classes >= 2, "make_blobs_pool: bad sizes");
  std::vector<ParamVector> means(static_cast<std::size_t>(classes));
  ParamVector centroid = zeros(static_cast<std::size_t>(dim));
  for (auto& m : means) {
    m.resize(static_cast<std::size_t>(dim));
    for (auto& x : m) x = rng.normal();
    const double len = norm(m);
    for (auto& x : m) x *= separation / std::max(len, 1e-12);
    axpy(1.0 / classes, m, centroid);
  }
  for (auto& m : means) axpy(-1.0, centroid, m);

  LocalDataset ds;
  ds.samples.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto& s = ds.samples[static_cast<std::size_t>(i)];
    const int c = i % classes;  // balanced classes
    s.label = c;
    s.input = means[static_cast<std::size_t>(c)];
    for (auto& x : s.input) x += within_std * rng.normal();
  }
  rng.shuffle(ds.samples);
  return ds;
}

// Per-cluster regression generator: inputs drawn from a uniform mixture of
// `components` identity-covariance Gaussians, labels from a cluster-specific
// linear rule.
struct ClusterGenerator {
  std::vector<ParamVector> component_means;
  ParamVector theta;
  double noise_std = 0.1;

  Sample draw(Rng& rng) const {
    Sample s;
    const auto& m = component_means[static_cast<std::size_t>(
        rng.below(component_means.size()))];
    s.input = m;
    for (auto& x : s.input) x += rng.normal();
    s.label = dot(s.input, theta) + noise_std * rng.normal();
    return s;
  }
};

inline std::vector<ClusterGenerator> make_cluster_generators(
    int clusters, int components, int dim, double spread, double theta_scale,
    double noise_std, Rng& rng) {
  std::vector<ClusterGenerator> gens(static_cast<std::size_t>(clusters));
  for (auto& g : gens) {
    g.noise_std = noise_std;
    g.component_means.resize(static_cast<std::size_t>(components));
    for (auto& m : g.component_means) {
      m.resize(static_cast<std::size_t>(dim));
      for (auto& x : m) x = spread * rng.normal();
    }
    g.theta.resize(static_cast<std::size_t>(dim));
    for (auto& x : g.theta) x = theta_scale * rng.normal();
  }
  return gens;
}

}  // namespace fedsim
