#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fedsim/analysis.hpp"
#include "fedsim/dataset.hpp"
#include "fedsim/rng.hpp"

using namespace fedsim;

namespace {

BoundParams simple_params() {
  BoundParams bp;
  bp.smooth_L = 1.0;
  bp.strong_mu = 1.0;
  bp.local_steps = 1;
  bp.total_steps = 1;
  bp.heterogeneity = 0.0;
  bp.grad_bound_sq = 0.0;
  bp.weights = {1.0};
  bp.grad_var = {0.0};
  bp.init_dist = 1.0;
  return bp;
}

}  // namespace

TEST_CASE("fedavg bound spot value", "[analysis]") {
  // L=mu=1, E=1, sigma=0, Gamma=0, G=0, init=1, T=1: gamma=8, bound=0.5.
  CHECK(fedavg_bound(simple_params()) == Catch::Approx(0.5));
}

TEST_CASE("fedavg bound decays at the 1/T rate", "[analysis]") {
  BoundParams bp = simple_params();
  bp.grad_var = {0.3};
  bp.heterogeneity = 0.2;
  bp.grad_bound_sq = 1.0;
  bp.local_steps = 3;

  double prev = std::numeric_limits<double>::infinity();
  for (long t : {1L, 2L, 5L, 10L, 100L, 1000L}) {
    bp.total_steps = t;
    const double b = fedavg_bound(bp);
    REQUIRE(b < prev);
    prev = b;
  }

  // bound * T approaches a constant.
  const double limit = bp.smooth_L * (2.0 * bp.b_tilde() /
                                          (bp.strong_mu * bp.strong_mu) +
                                      0.5 * bp.gamma() * bp.init_dist);
  bp.total_steps = 1000000;
  CHECK(fedavg_bound(bp) * 1e6 == Catch::Approx(limit).epsilon(1e-3));
}

TEST_CASE("uveqfed bound reduces to fedavg and matches the spot extra term",
          "[analysis]") {
  BoundParams bp = simple_params();
  bp.local_steps = 2;
  bp.grad_var = {0.1};
  bp.lattice = BoundParams::LatticeTerm{10, 2.0, 1.0 / 12.0};

  BoundParams vanish = bp;
  vanish.lattice->zeta = 1e-12;
  CHECK(uveqfed_bound(vanish) == Catch::Approx(fedavg_bound(bp)).epsilon(1e-9));

  BoundParams noiseless = bp;
  noiseless.grad_var = {0.0};
  CHECK(uveqfed_bound(noiseless) == Catch::Approx(fedavg_bound(noiseless)));

  // extra B-tilde = 4 * 10 * 4 * (1/12) * 4 * 0.1 = 16/3
  const double diff = uveqfed_bound(bp) - fedavg_bound(bp);
  const double extra =
      diff * (bp.gamma() + bp.total_steps - 1.0) * bp.strong_mu * bp.strong_mu /
      (2.0 * bp.smooth_L);
  CHECK(extra == Catch::Approx(16.0 / 3.0).epsilon(1e-12));

  BoundParams missing = simple_params();
  CHECK_THROWS_AS(uveqfed_bound(missing), Error);
}

TEST_CASE("cotaf bound reduces to fedavg and matches the spot extra term",
          "[analysis]") {
  BoundParams bp = simple_params();
  bp.grad_bound_sq = 1.0;
  bp.ota = BoundParams::OtaTerm{10, 1.0, 1.0, 2};

  BoundParams clean = bp;
  clean.ota->noise_var = 0.0;
  CHECK(cotaf_bound(clean) == Catch::Approx(fedavg_bound(bp)));

  // extra = 4*10*1*1*1/(1*4) = 10
  const double diff = cotaf_bound(bp) - fedavg_bound(bp);
  const double extra =
      diff * (bp.gamma() + bp.total_steps - 1.0) * bp.strong_mu * bp.strong_mu /
      (2.0 * bp.smooth_L);
  CHECK(extra == Catch::Approx(10.0).epsilon(1e-12));

  // 1/N^2 scaling of the extra term.
  BoundParams wide = bp;
  wide.ota->n_users = 4;
  const double extra_wide = (cotaf_bound(wide) - fedavg_bound(bp)) *
                            (bp.gamma() + bp.total_steps - 1.0) *
                            bp.strong_mu * bp.strong_mu / (2.0 * bp.smooth_L);
  CHECK(extra_wide == Catch::Approx(10.0 / 4.0).epsilon(1e-12));

  BoundParams missing = simple_params();
  CHECK_THROWS_AS(cotaf_bound(missing), Error);
}

TEST_CASE("bounds are monotone in their noise inputs", "[analysis]") {
  BoundParams bp = simple_params();
  bp.local_steps = 2;
  bp.total_steps = 50;
  bp.grad_var = {0.1};
  bp.grad_bound_sq = 0.5;
  bp.heterogeneity = 0.1;
  bp.lattice = BoundParams::LatticeTerm{8, 1.0, 1.0 / 12.0};
  bp.ota = BoundParams::OtaTerm{16, 0.5, 1.0, 4};

  double prev = -1.0;
  for (double sigma : {0.0, 0.1, 0.5, 1.0}) {
    bp.grad_var = {sigma};
    REQUIRE(fedavg_bound(bp) >= prev);
    prev = fedavg_bound(bp);
  }
  prev = -1.0;
  for (double gamma_het : {0.0, 0.2, 0.8}) {
    bp.heterogeneity = gamma_het;
    REQUIRE(fedavg_bound(bp) >= prev);
    prev = fedavg_bound(bp);
  }
  prev = -1.0;
  for (double g2 : {0.0, 0.3, 0.9}) {
    bp.grad_bound_sq = g2;
    REQUIRE(fedavg_bound(bp) >= prev);
    prev = fedavg_bound(bp);
  }
  prev = -1.0;
  for (double zeta : {0.1, 0.5, 2.0}) {
    bp.lattice->zeta = zeta;
    REQUIRE(uveqfed_bound(bp) >= prev);
    prev = uveqfed_bound(bp);
  }
  prev = -1.0;
  for (double nv : {0.0, 0.2, 0.9}) {
    bp.ota->noise_var = nv;
    REQUIRE(cotaf_bound(bp) >= prev);
    prev = cotaf_bound(bp);
  }

  // Perturbed bounds dominate the clean one.
  CHECK(uveqfed_bound(bp) >= fedavg_bound(bp));
  CHECK(cotaf_bound(bp) >= fedavg_bound(bp));
}

TEST_CASE("estimate_bound_params on the identity data matrix", "[analysis]") {
  // One sample a=[1]: the 1x1 identity data matrix, L = mu = 2.
  LocalDataset ds;
  ds.samples.push_back({{1.0}, 0.5});
  LossSpec spec;
  spec.kind = LossKind::QuadraticSynthetic;
  spec.input_dim = 1;
  TrainingSchedule sched;
  sched.local_steps = 1;
  sched.batch_size = 1;
  sched.total_steps = 1;
  Rng rng(1);
  const BoundParams bp = estimate_bound_params({ds}, spec, sched, zeros(1), rng);
  CHECK(bp.smooth_L == Catch::Approx(2.0));
  CHECK(bp.strong_mu == Catch::Approx(2.0));

  // d=2 identity rows with n=2: Hessian (2/n) A^T A = I, so L = mu = 1.
  LocalDataset ds2;
  ds2.samples.push_back({{1.0, 0.0}, 1.0});
  ds2.samples.push_back({{0.0, 1.0}, -1.0});
  LossSpec spec2 = spec;
  spec2.input_dim = 2;
  TrainingSchedule sched2 = sched;
  sched2.batch_size = 2;
  Rng rng2(2);
  const BoundParams bp2 = estimate_bound_params({ds2}, spec2, sched2, zeros(2), rng2);
  CHECK(bp2.smooth_L == Catch::Approx(1.0));
  CHECK(bp2.strong_mu == Catch::Approx(1.0));
}

TEST_CASE("identical user datasets have zero heterogeneity", "[analysis]") {
  Rng rng(5);
  auto pool = make_regression_pool(30, 3, 0.3, 0.5, rng);
  LossSpec spec;
  spec.kind = LossKind::QuadraticSynthetic;
  spec.input_dim = 3;
  TrainingSchedule sched;
  sched.local_steps = 2;
  sched.batch_size = 5;
  sched.total_steps = 10;
  Rng est_rng(6);
  const BoundParams bp = estimate_bound_params({pool.data, pool.data, pool.data},
                                               spec, sched, zeros(3), est_rng);
  CHECK(bp.heterogeneity == Catch::Approx(0.0).margin(1e-10));
  CHECK(bp.weights == std::vector<double>{1.0 / 3, 1.0 / 3, 1.0 / 3});
}

TEST_CASE("estimated G^2 dominates observed gradient norms", "[analysis]") {
  Rng rng(7);
  auto pool = make_regression_pool(60, 4, 0.4, 1.0, rng);
  Rng part(8);
  LossSpec spec;
  spec.kind = LossKind::QuadraticSynthetic;
  spec.input_dim = 4;
  TrainingSchedule sched;
  sched.local_steps = 5;
  sched.batch_size = 8;
  sched.total_steps = 100;
  Rng est_rng(9);
  const ParamVector theta0 = zeros(4);
  const BoundParams bp = estimate_bound_params({pool.data}, spec, sched, theta0, est_rng);
  CHECK(bp.grad_bound_sq > 0.0);
  // The full-dataset gradient is an average of batch gradients, so it must
  // sit inside the estimated envelope.
  CHECK(sqnorm(loss_gradient(theta0, pool.data, spec)) <= bp.grad_bound_sq);
  CHECK(bp.init_dist > 0.0);
  (void)part;
}

TEST_CASE("estimate_bound_params rejects unsupported losses", "[analysis]") {
  LocalDataset ds;
  ds.samples.push_back({{1.0}, 0.0});
  LossSpec spec;
  spec.kind = LossKind::Mlp;
  spec.input_dim = 1;
  spec.num_classes = 2;
  TrainingSchedule sched;
  Rng rng(1);
  CHECK_THROWS_AS(estimate_bound_params({ds}, spec, sched, zeros(1), rng), Error);
}
