#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <utility>
#include <variant>
#include <vector>

#include "fedsim/core.hpp"
#include "fedsim/lattice.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

// A user's uploaded delta theta_t - theta_{t-E} plus metadata. n_samples is
// the dataset size as reported by the user (an attacker may lie about it).
struct ModelUpdate {
  ParamVector delta;
  int user_id = 0;
  long round = 0;
  long n_samples = 1;
};

inline ModelUpdate delta_encode(const ParamVector& theta_local,
                                const ParamVector& theta_ref, int user_id = 0,
                                long round = 0, long n_samples = 1) {
  check_same_dim(theta_local, theta_ref, "delta_encode");
  ModelUpdate u;
  u.delta = sub(theta_local, theta_ref);
  u.user_id = user_id;
  u.round = round;
  u.n_samples = n_samples;
  return u;
}

struct DensePayload {
  ParamVector values;
};

struct SparsePayload {
  std::vector<std::pair<int, double>> entries;  // strictly increasing indices
};

struct LatticePayload {
  double input_norm = 0.0;         // ||u||, conveyed as one fp scalar
  std::vector<long> coords;        // M_bar * L integer lattice coordinates
  std::uint64_t dither_key = 0;    // common-randomness stream id
  bool dithered = true;
  bool zero = false;               // explicit zero-update payload
};

struct NoisedPayload {
  ParamVector values;
  double sigma = 0.0;
};

struct EncodedUpdate {
  std::variant<DensePayload, SparsePayload, LatticePayload, NoisedPayload> payload;
  long long bit_cost = 0;
  int dim = 0;  // original d
  int user_id = 0;
  long round = 0;
  long n_samples = 1;
};

namespace detail {

inline int bits_per_index(int d) {
  int bits = 1;
  while ((1LL << bits) < d) ++bits;
  return bits;
}

constexpr int kValueBits = 32;

inline void copy_meta(const ModelUpdate& u, EncodedUpdate& e) {
  e.dim = static_cast<int>(u.delta.size());
  e.user_id = u.user_id;
  e.round = u.round;
  e.n_samples = u.n_samples;
}

// Empirical entropy (bits/symbol) of the emitted index tuples; this stands
// in for the rate of an ideal lossless entropy coder.
inline double index_entropy_bits(const std::vector<std::vector<long>>& symbols) {
  if (symbols.empty()) return 0.0;
  std::map<std::vector<long>, long> counts;
  for (const auto& s : symbols) ++counts[s];
  const double m = static_cast<double>(symbols.size());
  double h = 0.0;
  for (const auto& [sym, c] : counts) {
    const double p = static_cast<double>(c) / m;
    h -= p * std::log2(p);
  }
  return h;
}

}  // namespace detail

inline EncodedUpdate encode_dense(const ModelUpdate& u) {
  EncodedUpdate e;
  detail::copy_meta(u, e);
  e.payload = DensePayload{u.delta};
  e.bit_cost = static_cast<long long>(u.delta.size()) * detail::kValueBits;
  return e;
}

// Keeps the k largest-magnitude coordinates; ties keep the lowest index.
inline EncodedUpdate topk_sparsify(const ModelUpdate& u, int k) {
  const int d = static_cast<int>(u.delta.size());
  check(k >= 1 && k <= d, "topk_sparsify: k out of range");
  std::vector<int> order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return std::abs(u.delta[static_cast<std::size_t>(a)]) >
           std::abs(u.delta[static_cast<std::size_t>(b)]);
  });
  order.resize(static_cast<std::size_t>(k));
  std::sort(order.begin(), order.end());

  SparsePayload sp;
  sp.entries.reserve(static_cast<std::size_t>(k));
  for (int idx : order) sp.entries.emplace_back(idx, u.delta[static_cast<std::size_t>(idx)]);

  EncodedUpdate e;
  detail::copy_meta(u, e);
  e.payload = std::move(sp);
  e.bit_cost = static_cast<long long>(k) *
               (detail::bits_per_index(d) + detail::kValueBits);
  return e;
}

// Random sparsifying mask: each coordinate kept independently with
// probability keep_prob and scaled by 1/keep_prob, so the decoded update is
// an unbiased estimate of the input.
inline EncodedUpdate mask_sparsify(const ModelUpdate& u, double keep_prob,
                                   Rng& rng) {
  check(keep_prob > 0.0 && keep_prob <= 1.0,
        "mask_sparsify: keep_prob must be in (0,1]");
  const int d = static_cast<int>(u.delta.size());
  SparsePayload sp;
  for (int i = 0; i < d; ++i) {
    if (rng.bernoulli(keep_prob)) {
      sp.entries.emplace_back(i, u.delta[static_cast<std::size_t>(i)] / keep_prob);
    }
  }
  EncodedUpdate e;
  detail::copy_meta(u, e);
  e.bit_cost = static_cast<long long>(sp.entries.size()) *
               (detail::bits_per_index(std::max(d, 2)) + detail::kValueBits);
  e.payload = std::move(sp);
  return e;
}

enum class DitherMode { On, OffForTest };

// Scalar dithered quantization (QSGD-style): q = step * round((v + z)/step),
// z ~ U[-step/2, step/2). Non-subtractive: the server keeps q as is. The bit
// cost is the empirical entropy of the emitted integer indices.
inline EncodedUpdate qsgd_quantize(const ModelUpdate& u, double step, Rng& rng,
                                   DitherMode mode = DitherMode::On) {
  check(step > 0.0, "qsgd_quantize: step must be positive");
  const std::size_t d = u.delta.size();
  ParamVector q(d);
  std::vector<std::vector<long>> indices(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double z = (mode == DitherMode::On) ? rng.uniform(-step / 2.0, step / 2.0) : 0.0;
    const long k = static_cast<long>(std::llround((u.delta[i] + z) / step));
    indices[i] = {k};
    q[i] = step * static_cast<double>(k);
  }
  EncodedUpdate e;
  detail::copy_meta(u, e);
  e.payload = DensePayload{std::move(q)};
  e.bit_cost = static_cast<long long>(
      std::ceil(static_cast<double>(d) * detail::index_entropy_bits(indices)));
  return e;
}

// UVeQFed encoder: normalize by zeta*||u||, split into ceil(d/L) L-sized
// subvectors (zero-padded tail), add a dither uniform over the basic lattice
// cell, and project to the nearest lattice point. The dither stream is
// regenerated at the decoder from the shared key, which makes the dither
// subtractive. Charged bits: entropy-coded indices plus one 32-bit scalar
// for ||u||.
inline EncodedUpdate uveqfed_encode(const ModelUpdate& u,
                                    const LatticeSpec& spec,
                                    std::uint64_t shared_seed,
                                    DitherMode mode = DitherMode::On) {
  const long d = static_cast<long>(u.delta.size());
  EncodedUpdate e;
  detail::copy_meta(u, e);

  LatticePayload lp;
  lp.dither_key = shared_seed;
  lp.dithered = (mode == DitherMode::On);
  const double input_norm = norm(u.delta);
  if (input_norm == 0.0) {
    lp.zero = true;
    e.payload = std::move(lp);
    e.bit_cost = detail::kValueBits;  // the norm scalar alone
    return e;
  }
  lp.input_norm = input_norm;

  const int L = spec.dimension;
  const long m_bar = spec.subvectors(d);
  const double inv_scale = 1.0 / (spec.zeta * input_norm);
  Rng dither_rng = make_stream(shared_seed);
  lp.coords.resize(static_cast<std::size_t>(m_bar * L));
  std::vector<std::vector<long>> symbols(static_cast<std::size_t>(m_bar));
  for (long m = 0; m < m_bar; ++m) {
    std::array<double, 2> x{0.0, 0.0};
    for (int j = 0; j < L; ++j) {
      const long idx = m * L + j;
      x[static_cast<std::size_t>(j)] =
          (idx < d) ? u.delta[static_cast<std::size_t>(idx)] * inv_scale : 0.0;
    }
    const auto z = (mode == DitherMode::On)
                       ? spec.lattice.dither(dither_rng)
                       : std::array<double, 2>{0.0, 0.0};
    for (int j = 0; j < L; ++j) x[static_cast<std::size_t>(j)] += z[static_cast<std::size_t>(j)];
    const auto k = spec.lattice.nearest(x);
    std::vector<long> sym(static_cast<std::size_t>(L));
    for (int j = 0; j < L; ++j) {
      lp.coords[static_cast<std::size_t>(m * L + j)] = k[static_cast<std::size_t>(j)];
      sym[static_cast<std::size_t>(j)] = k[static_cast<std::size_t>(j)];
    }
    symbols[static_cast<std::size_t>(m)] = std::move(sym);
  }
  e.bit_cost = static_cast<long long>(std::ceil(
                   static_cast<double>(m_bar) * detail::index_entropy_bits(symbols))) +
               detail::kValueBits;
  e.payload = std::move(lp);
  return e;
}

// UVeQFed decoder: regenerate the dither from the shared key, subtract it
// from the reconstructed lattice points, and undo the normalization.
inline ModelUpdate uveqfed_decode(const EncodedUpdate& e,
                                  const LatticeSpec& spec,
                                  std::uint64_t shared_seed) {
  const auto* lp = std::get_if<LatticePayload>(&e.payload);
  check(lp != nullptr, "uveqfed_decode: payload is not lattice-coded");
  ModelUpdate u;
  u.user_id = e.user_id;
  u.round = e.round;
  u.n_samples = e.n_samples;
  u.delta = zeros(static_cast<std::size_t>(e.dim));
  if (lp->zero) return u;
  check(lp->dither_key == shared_seed,
        "uveqfed_decode: dither seed mismatch (common-randomness contract)");

  const int L = spec.dimension;
  const long d = e.dim;
  const long m_bar = spec.subvectors(d);
  check(static_cast<long>(lp->coords.size()) == m_bar * L,
        "uveqfed_decode: coordinate count mismatch");
  const double scale = spec.zeta * lp->input_norm;
  Rng dither_rng = make_stream(shared_seed);
  for (long m = 0; m < m_bar; ++m) {
    std::array<long, 2> k{0, 0};
    for (int j = 0; j < L; ++j) k[static_cast<std::size_t>(j)] = lp->coords[static_cast<std::size_t>(m * L + j)];
    auto x = spec.lattice.point(k);
    const auto z = lp->dithered ? spec.lattice.dither(dither_rng)
                                : std::array<double, 2>{0.0, 0.0};
    for (int j = 0; j < L; ++j) {
      const long idx = m * L + j;
      if (idx < d) {
        u.delta[static_cast<std::size_t>(idx)] =
            (x[static_cast<std::size_t>(j)] - z[static_cast<std::size_t>(j)]) * scale;
      }
    }
  }
  return u;
}

// Gaussian-mechanism differential privacy parameters. epsilon must be below
// 1 for the mechanism's guarantee to apply.
struct DPSpec {
  double epsilon = 0.5;
  double delta = 0.01;
  long exposures = 1;   // l: uplink exposures of each user's parameters
  double clip = 1.0;    // C: norm cap applied before noising
  long min_n = 1;       // smallest per-user dataset size

  void validate() const {
    check(epsilon > 0.0 && epsilon < 1.0,
          "dp: epsilon must be in (0,1) for the Gaussian mechanism");
    check(delta > 0.0 && delta < 1.0, "dp: delta must be in (0,1)");
    check(exposures >= 1, "dp: exposure count must be positive");
    check(clip > 0.0, "dp: clipping bound must be positive");
    check(min_n >= 1, "dp: min dataset size must be positive");
  }
};

// sigma_i = 4 c l C / (epsilon * min_n), c = sqrt(2 ln(1.25/delta)).
inline double dp_sigma(const DPSpec& dp) {
  dp.validate();
  const double c = std::sqrt(2.0 * std::log(1.25 / dp.delta));
  return 4.0 * c * static_cast<double>(dp.exposures) * dp.clip /
         (dp.epsilon * static_cast<double>(dp.min_n));
}

// Clip to norm <= C, then add i.i.d. Gaussian noise of std dev dp_sigma.
inline EncodedUpdate dp_gaussianize(const ModelUpdate& u, const DPSpec& dp,
                                    Rng& rng, bool noise_free_test_mode = false) {
  const double sigma = dp_sigma(dp);
  NoisedPayload np;
  np.values = u.delta;
  const double n = norm(np.values);
  if (n > dp.clip) {
    const double s = dp.clip / n;
    for (double& v : np.values) v *= s;
  }
  np.sigma = sigma;
  if (!noise_free_test_mode) {
    for (double& v : np.values) v += rng.normal(0.0, sigma);
  }
  EncodedUpdate e;
  detail::copy_meta(u, e);
  e.bit_cost = static_cast<long long>(u.delta.size()) * detail::kValueBits;
  e.payload = std::move(np);
  return e;
}

// Decode for the payload kinds that need no shared state (the lattice path
// goes through uveqfed_decode).
inline ModelUpdate decode_update(const EncodedUpdate& e) {
  ModelUpdate u;
  u.user_id = e.user_id;
  u.round = e.round;
  u.n_samples = e.n_samples;
  if (const auto* dp = std::get_if<DensePayload>(&e.payload)) {
    u.delta = dp->values;
  } else if (const auto* sp = std::get_if<SparsePayload>(&e.payload)) {
    u.delta = zeros(static_cast<std::size_t>(e.dim));
    for (const auto& [idx, val] : sp->entries) {
      check(idx >= 0 && idx < e.dim, "decode_update: sparse index out of range");
      u.delta[static_cast<std::size_t>(idx)] = val;
    }
  } else if (const auto* np = std::get_if<NoisedPayload>(&e.payload)) {
    u.delta = np->values;
  } else {
    throw Error("decode_update: lattice payloads require uveqfed_decode");
  }
  check(static_cast<int>(u.delta.size()) == e.dim, "decode_update: dim mismatch");
  return u;
}

}  // namespace fedsim
