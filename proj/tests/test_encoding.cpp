#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "fedsim/encoding.hpp"
#include "fedsim/lattice.hpp"
#include "fedsim/rng.hpp"

using namespace fedsim;

namespace {

ModelUpdate update_of(ParamVector v) {
  ModelUpdate u;
  u.delta = std::move(v);
  return u;
}

struct MeanTracker {
  double sum = 0.0, sumsq = 0.0;
  long n = 0;
  void add(double x) {
    sum += x;
    sumsq += x * x;
    ++n;
  }
  double mean() const { return sum / n; }
  double stderr_of_mean() const {
    const double var = sumsq / n - mean() * mean();
    return std::sqrt(std::max(var, 0.0) / n);
  }
};

double correlation(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST_CASE("delta_encode basics", "[encoding]") {
  CHECK(delta_encode({1.0, 2.0}, {1.0, 2.0}).delta == ParamVector{0.0, 0.0});
  CHECK(delta_encode({1.0, 2.0}, {0.5, 2.0}).delta == ParamVector{0.5, 0.0});
  // dyadic values: the reconstruction is exact in floating point
  const ParamVector local{0.25, -1.75, 2.5};
  const ParamVector ref{1.0, 0.5, -0.75};
  CHECK(add(ref, delta_encode(local, ref).delta) == local);
  CHECK_THROWS_AS(delta_encode({1.0}, {1.0, 2.0}), Error);
}

TEST_CASE("topk keeps largest magnitudes, ties to lowest index", "[encoding]") {
  const auto e = topk_sparsify(update_of({3.0, -5.0, 1.0}), 1);
  const auto& sp = std::get<SparsePayload>(e.payload);
  REQUIRE(sp.entries.size() == 1);
  CHECK(sp.entries[0] == std::make_pair(1, -5.0));

  const auto all = topk_sparsify(update_of({3.0, -5.0, 1.0}), 3);
  CHECK(decode_update(all).delta == ParamVector{3.0, -5.0, 1.0});

  CHECK_THROWS_AS(topk_sparsify(update_of({1.0}), 2), Error);
  CHECK_THROWS_AS(topk_sparsify(update_of({1.0}), 0), Error);
}

TEST_CASE("topk agrees with a full-sort oracle on 1000 random vectors", "[encoding]") {
  Rng rng(404);
  for (int trial = 0; trial < 1000; ++trial) {
    const int d = 2 + static_cast<int>(rng.below(12));
    ParamVector v(static_cast<std::size_t>(d));
    for (auto& x : v) {
      x = rng.normal();
      if (rng.bernoulli(0.3)) x = std::round(x);  // provoke magnitude ties
    }
    const int k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(d)));

    // oracle: stable sort of (magnitude desc) keeps lowest index on ties
    std::vector<int> order(static_cast<std::size_t>(d));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return std::abs(v[static_cast<std::size_t>(a)]) > std::abs(v[static_cast<std::size_t>(b)]);
    });
    std::vector<int> expect(order.begin(), order.begin() + k);
    std::sort(expect.begin(), expect.end());

    const auto e = topk_sparsify(update_of(v), k);
    const auto& sp = std::get<SparsePayload>(e.payload);
    std::vector<int> got;
    for (const auto& [idx, val] : sp.entries) got.push_back(idx);
    REQUIRE(got == expect);
  }
}

TEST_CASE("mask with keep_prob one is the identity", "[encoding]") {
  Rng rng(1);
  const auto e = mask_sparsify(update_of({0.5, -2.0, 0.0, 3.0}), 1.0, rng);
  CHECK(decode_update(e).delta == ParamVector{0.5, -2.0, 0.0, 3.0});
}

TEST_CASE("mask estimator is unbiased per coordinate", "[encoding]") {
  const ParamVector v{0.8, -1.5, 2.0};
  const double p = 0.3;
  std::vector<MeanTracker> acc(v.size());
  for (int trial = 0; trial < 100000; ++trial) {
    Rng rng = make_stream(88, static_cast<std::uint64_t>(trial));
    const auto decoded = decode_update(mask_sparsify(update_of(v), p, rng)).delta;
    for (std::size_t j = 0; j < v.size(); ++j) acc[j].add(decoded[j]);
  }
  for (std::size_t j = 0; j < v.size(); ++j) {
    CHECK(std::abs(acc[j].mean() - v[j]) <= 3.0 * acc[j].stderr_of_mean());
  }
}

TEST_CASE("mask is deterministic for a fixed seed", "[encoding]") {
  Rng a = make_stream(5), b = make_stream(5);
  const ParamVector v{1.0, 2.0, 3.0, 4.0, 5.0};
  const auto ea = mask_sparsify(update_of(v), 0.5, a);
  const auto eb = mask_sparsify(update_of(v), 0.5, b);
  CHECK(decode_update(ea).delta == decode_update(eb).delta);
}

TEST_CASE("qsgd lattice points are fixed without dither", "[encoding]") {
  const double step = 0.25;
  Rng rng(3);
  const auto e = qsgd_quantize(update_of({2 * step}), step, rng, DitherMode::OffForTest);
  CHECK(decode_update(e).delta[0] == 2 * step);
}

TEST_CASE("qsgd at half step is an unbiased coin", "[encoding]") {
  const double step = 0.4;
  MeanTracker acc;
  for (int trial = 0; trial < 100000; ++trial) {
    Rng rng = make_stream(17, static_cast<std::uint64_t>(trial));
    const double q = decode_update(qsgd_quantize(update_of({step / 2}), step, rng)).delta[0];
    REQUIRE((q == 0.0 || q == step));
    acc.add(q);
  }
  CHECK(std::abs(acc.mean() - step / 2) <= 3.0 * acc.stderr_of_mean());
}

TEST_CASE("qsgd error is uncorrelated with the input", "[encoding]") {
  const double step = 0.3;
  std::vector<double> inputs, errors;
  Rng vr(21);
  for (int trial = 0; trial < 100000; ++trial) {
    const double v = vr.uniform(-1.0, 1.0);
    Rng rng = make_stream(22, static_cast<std::uint64_t>(trial));
    const double q = decode_update(qsgd_quantize(update_of({v}), step, rng)).delta[0];
    inputs.push_back(v);
    errors.push_back(q - v);
  }
  CHECK(std::abs(correlation(errors, inputs)) < 0.01);
}

TEST_CASE("uveqfed zero update round-trips as explicit zero", "[encoding]") {
  const auto spec = make_lattice_spec(2, 2.0);
  const auto e = uveqfed_encode(update_of({0.0, 0.0, 0.0}), spec, 9);
  CHECK(std::get<LatticePayload>(e.payload).zero);
  CHECK(uveqfed_decode(e, spec, 9).delta == ParamVector{0.0, 0.0, 0.0});
}

TEST_CASE("uveqfed is exact on lattice points with dither disabled", "[encoding]") {
  // Choose zeta = 1/||x|| so the normalized update lands exactly on integer
  // lattice points x.
  const ParamVector x{2.0, -1.0, 3.0};
  const auto spec = make_lattice_spec(1, 1.0 / norm(x));
  const ParamVector u = scaled(x, 5.0);
  const auto e = uveqfed_encode(update_of(u), spec, 4, DitherMode::OffForTest);
  const auto back = uveqfed_decode(e, spec, 4);
  for (std::size_t j = 0; j < u.size(); ++j) {
    CHECK(back.delta[j] == Catch::Approx(u[j]).margin(1e-12));
  }
}

TEST_CASE("uveqfed L=1 matches a scalar subtractive-dither oracle bit-exactly",
          "[encoding]") {
  const auto spec = make_lattice_spec(1, 1.7);
  const ParamVector u{0.4, -0.9, 0.13, 2.4, -0.02};
  const std::uint64_t key = 1234;
  const auto decoded = uveqfed_decode(uveqfed_encode(update_of(u), spec, key), spec, key);

  const double scale = spec.zeta * norm(u);
  Rng dith = make_stream(key);
  ParamVector oracle(u.size());
  for (std::size_t j = 0; j < u.size(); ++j) {
    const double z = dith.uniform01() - 0.5;
    const double q = static_cast<double>(std::llround(u[j] / scale + z));
    oracle[j] = (q - z) * scale;
  }
  CHECK(decoded.delta == oracle);
}

TEST_CASE("uveqfed decode rejects a mismatched seed", "[encoding]") {
  const auto spec = make_lattice_spec(1, 2.0);
  const auto e = uveqfed_encode(update_of({1.0, 2.0}), spec, 10);
  CHECK_THROWS_AS(uveqfed_decode(e, spec, 11), Error);
}

TEST_CASE("uveqfed reconstruction is unbiased and input-independent", "[encoding]") {
  for (int ldim : {1, 2}) {
    const auto spec = make_lattice_spec(ldim, 1.3);
    std::vector<MeanTracker> acc(4);
    std::vector<double> inputs, errors;
    Rng vr(5000 + ldim);
    for (int trial = 0; trial < 100000; ++trial) {
      ParamVector u(4);
      for (auto& x : u) x = vr.normal();
      const std::uint64_t key = mix64(static_cast<std::uint64_t>(trial) * 31 + ldim);
      const auto decoded = uveqfed_decode(uveqfed_encode(update_of(u), spec, key), spec, key);
      for (std::size_t j = 0; j < u.size(); ++j) {
        acc[j].add(decoded.delta[j] - u[j]);
      }
      inputs.push_back(u[0]);
      errors.push_back(decoded.delta[0] - u[0]);
    }
    for (auto& a : acc) {
      INFO("L=" << ldim);
      CHECK(std::abs(a.mean()) <= 3.0 * a.stderr_of_mean());
    }
    CHECK(std::abs(correlation(errors, inputs)) < 0.01);
  }
}

TEST_CASE("uveqfed per-subvector error moment matches zeta^2 ||u||^2 sigma_bar^2",
          "[encoding]") {
  for (int ldim : {1, 2}) {
    const auto spec = make_lattice_spec(ldim, 0.9);
    ParamVector u{0.7, -0.4, 0.2, 0.5};
    const double expected = spec.zeta * spec.zeta * sqnorm(u) *
                            spec.lattice.cell_second_moment;
    double total = 0.0;
    long count = 0;
    for (int trial = 0; trial < 100000; ++trial) {
      const std::uint64_t key = mix64(777 + static_cast<std::uint64_t>(trial) * 13 + ldim);
      const auto decoded = uveqfed_decode(uveqfed_encode(update_of(u), spec, key), spec, key);
      const long m_bar = spec.subvectors(static_cast<long>(u.size()));
      for (long m = 0; m < m_bar; ++m) {
        double e2 = 0.0;
        for (int j = 0; j < ldim; ++j) {
          const long idx = m * ldim + j;
          if (idx < static_cast<long>(u.size())) {
            const double diff = decoded.delta[static_cast<std::size_t>(idx)] -
                                u[static_cast<std::size_t>(idx)];
            e2 += diff * diff;
          }
        }
        total += e2;
        ++count;
      }
    }
    const double measured = total / count;
    INFO("L=" << ldim << " measured=" << measured << " expected=" << expected);
    CHECK(std::abs(measured - expected) <= 0.05 * expected);
  }
}

TEST_CASE("dp sigma matches the closed form", "[encoding]") {
  DPSpec dp;
  dp.epsilon = 0.5;
  dp.delta = 0.01;
  dp.exposures = 1;
  dp.clip = 1.0;
  dp.min_n = 100;
  CHECK(dp_sigma(dp) == Catch::Approx(0.24860091680737917).epsilon(1e-12));
}

TEST_CASE("dp clipping and noise-free mode", "[encoding]") {
  DPSpec dp;
  dp.epsilon = 0.5;
  dp.delta = 0.01;
  dp.exposures = 1;
  dp.clip = 10.0;
  dp.min_n = 50;
  Rng rng(2);
  const ParamVector small{1.0, -2.0};
  const auto kept = dp_gaussianize(update_of(small), dp, rng, true);
  CHECK(std::get<NoisedPayload>(kept.payload).values == small);

  dp.clip = 1.0;
  Rng rng2(2);
  const ParamVector big{3.0, 4.0};  // norm 5 -> scaled to norm 1
  const auto clipped = dp_gaussianize(update_of(big), dp, rng2, true);
  const auto& vals = std::get<NoisedPayload>(clipped.payload).values;
  CHECK(norm(vals) == Catch::Approx(1.0));
  CHECK(vals[0] / vals[1] == Catch::Approx(3.0 / 4.0));
}

TEST_CASE("dp rejects epsilon outside the Gaussian-mechanism regime", "[encoding]") {
  DPSpec dp;
  dp.epsilon = 1.0;
  Rng rng(1);
  CHECK_THROWS_AS(dp_gaussianize(update_of({1.0}), dp, rng), Error);
}

TEST_CASE("bit costs are monotone", "[encoding]") {
  Rng rng(606);
  ParamVector v(64);
  for (auto& x : v) x = rng.normal();

  long long prev = -1;
  for (int k = 1; k <= 64; ++k) {
    const auto e = topk_sparsify(update_of(v), k);
    REQUIRE(e.bit_cost >= prev);
    prev = e.bit_cost;
  }

  ParamVector big(10000);
  for (auto& x : big) x = rng.normal();
  long long prev_q = -1;
  for (double step : {0.8, 0.4, 0.2, 0.1, 0.05}) {  // descending step later wins bits
    Rng qr = make_stream(9, static_cast<std::uint64_t>(step * 1000));
    const auto e = qsgd_quantize(update_of(big), step, qr);
    if (prev_q >= 0) REQUIRE(e.bit_cost >= prev_q);  // bits grow as step shrinks
    prev_q = e.bit_cost;
  }
}

TEST_CASE("encoders are deterministic given input and seed", "[encoding]") {
  const auto spec = make_lattice_spec(2, 1.1);
  ParamVector v{0.2, -0.8, 1.4, 0.05, -0.33};
  Rng a = make_stream(42), b = make_stream(42);
  CHECK(decode_update(qsgd_quantize(update_of(v), 0.2, a)).delta ==
        decode_update(qsgd_quantize(update_of(v), 0.2, b)).delta);
  const auto ea = uveqfed_encode(update_of(v), spec, 6);
  const auto eb = uveqfed_encode(update_of(v), spec, 6);
  CHECK(std::get<LatticePayload>(ea.payload).coords ==
        std::get<LatticePayload>(eb.payload).coords);
}
