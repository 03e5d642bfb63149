#pragma once

#include <cmath>
#include <vector>

#include "fedsim/core.hpp"
#include "fedsim/encoding.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

// One user's orthogonal uplink: flat fading with Gaussian noise plus
// per-block interference.
struct LinkSpec {
  double bandwidth_hz = 1.0;       // b
  double power = 1.0;              // P
  double gain = 1.0;               // h_i (dimensionless, ~ d_i^-2)
  double noise_psd = 1.0;          // sigma_w^2 per Hz
  std::vector<double> block_interference;  // sigma_{v,k}^2 per block

  void validate() const {
    check(bandwidth_hz > 0.0 && power > 0.0, "link: b and P must be positive");
    check(gain >= 0.0 && noise_psd >= 0.0, "link: negative gain or noise");
    for (double v : block_interference) check(v >= 0.0, "link: negative interference");
  }
};

// R_{i,k} = b log2(1 + h_i P / (sigma_{v,k}^2 + sigma_w^2 b)), bits/s.
inline double link_rate(const LinkSpec& link, int block) {
  link.validate();
  check(block >= 0 && block < static_cast<int>(link.block_interference.size()),
        "link_rate: block index out of range");
  const double denom = link.block_interference[static_cast<std::size_t>(block)] +
                       link.noise_psd * link.bandwidth_hz;
  check(denom > 0.0, "link_rate: zero noise-plus-interference gives infinite rate");
  return link.bandwidth_hz * std::log2(1.0 + link.gain * link.power / denom);
}

struct Delivery {
  EncodedUpdate payload;  // delivered losslessly (capacity-achieving code)
  double delay_s = 0.0;
};

inline Delivery orthogonal_transmit(const EncodedUpdate& e, double rate_bps) {
  check(rate_bps > 0.0, "orthogonal_transmit: rate must be positive");
  Delivery out;
  out.payload = e;
  out.delay_s = static_cast<double>(e.bit_cost) / rate_bps;
  return out;
}

// ----- over-the-air path -----

enum class PrecoderMode { Cotaf, Fixed };

struct OtaSpec {
  double noise_var = 0.0;            // sigma_w^2 per coordinate
  double power = 1.0;                // P
  std::vector<double> gains;         // h_i; empty means unfaded (all 1)
  double inversion_threshold = 0.0;  // truncated channel inversion cutoff
  PrecoderMode precoder = PrecoderMode::Cotaf;
  double pilot_sqnorm = 1.0;         // round-1 estimate of max E||delta||^2
  double slot_s = 1.0;               // wall-model duration of one OTA round

  void validate() const {
    check(noise_var >= 0.0, "ota: negative noise variance");
    check(power > 0.0, "ota: power must be positive");
    check(inversion_threshold >= 0.0, "ota: negative inversion threshold");
    check(pilot_sqnorm > 0.0, "ota: pilot norm estimate must be positive");
    check(slot_s >= 0.0, "ota: negative slot duration");
    for (double h : gains) check(h >= 0.0, "ota: negative gain");
  }
};

// alpha_t = P / max_i E{||theta_t^i - theta_{t-E}^i||^2}.
inline double cotaf_alpha(double power, double max_expected_sqnorm) {
  check(power > 0.0, "cotaf_alpha: power must be positive");
  check(max_expected_sqnorm > 0.0,
        "cotaf_alpha: update norm estimate must be positive");
  return power / max_expected_sqnorm;
}

struct PrecodedInput {
  ParamVector x;
  bool truncated = false;  // gain below the inversion threshold
};

// x = sqrt(alpha) * u / h_i under channel inversion (h_i of 1 means the
// unfaded mode); users in a deep fade send nothing and are flagged.
inline PrecodedInput ota_precode(const ModelUpdate& u, double alpha, double gain,
                                 const OtaSpec& spec) {
  check(alpha > 0.0, "ota_precode: alpha must be positive");
  PrecodedInput out;
  if (gain < spec.inversion_threshold) {
    out.x = zeros(u.delta.size());
    out.truncated = true;
    return out;
  }
  const double h = (gain == 0.0) ? 1.0 : gain;
  out.x = scaled(u.delta, std::sqrt(alpha) / h);
  return out;
}

// y = sum_i x_i + w, w i.i.d. Gaussian(0, sigma_w^2) per coordinate. The sum
// runs in the order given (ascending user id by contract).
inline ParamVector ota_mac(const std::vector<ParamVector>& inputs,
                           double noise_var, Rng& rng) {
  check(!inputs.empty(), "ota_mac: no inputs");
  const std::size_t d = inputs.front().size();
  ParamVector y = zeros(d);
  for (const auto& x : inputs) {
    check_same_dim(x, y, "ota_mac");
    axpy(1.0, x, y);
  }
  if (noise_var > 0.0) {
    const double sd = std::sqrt(noise_var);
    for (double& v : y) v += rng.normal(0.0, sd);
  }
  return y;
}

// theta = y / (N sqrt(alpha)) + theta_ref: the averaged model plus a noise
// term whose std dev per coordinate is sigma_w / (N sqrt(alpha)).
inline ParamVector ota_decode(const ParamVector& y, double alpha, int n_users,
                              const ParamVector& theta_ref) {
  check(alpha > 0.0, "ota_decode: alpha must be positive");
  check(n_users >= 1, "ota_decode: need at least one user");
  check_same_dim(y, theta_ref, "ota_decode");
  ParamVector theta = theta_ref;
  axpy(1.0 / (static_cast<double>(n_users) * std::sqrt(alpha)), y, theta);
  return theta;
}

}  // namespace fedsim
