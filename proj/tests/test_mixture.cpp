#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fedsim/mixture.hpp"
#include "fedsim/rng.hpp"

using namespace fedsim;

namespace {

GaussianMixture point_density(ParamVector mean, double var) {
  GaussianMixture g;
  g.means.push_back(std::move(mean));
  g.variances.push_back(var);
  g.weights.push_back(1.0);
  return g;
}

ClusterModelSet regression_set(std::vector<ParamVector> models,
                               std::vector<GaussianMixture> densities) {
  ClusterModelSet set;
  set.models = std::move(models);
  set.densities = std::move(densities);
  set.loss.kind = LossKind::SquaredError;
  set.loss.input_dim = static_cast<int>(set.models.front().size());
  return set;
}

}  // namespace

TEST_CASE("gate degenerate cases", "[mixture]") {
  auto one = regression_set({{1.0, 0.0}}, {point_density({0.0, 0.0}, 1.0)});
  const auto g1 = cluster_gate({0.3, 0.4}, one);
  REQUIRE(g1.weights == std::vector<double>{1.0});
  CHECK_FALSE(g1.underflow);

  auto twin = regression_set({{1.0}, {2.0}},
                             {point_density({0.5}, 1.0), point_density({0.5}, 1.0)});
  const auto g2 = cluster_gate({1.7}, twin);
  CHECK(g2.weights[0] == Catch::Approx(0.5));
  CHECK(g2.weights[1] == Catch::Approx(0.5));
}

TEST_CASE("gate weight is dominant at a far-separated cluster mean", "[mixture]") {
  // Two unit-variance clusters 12 sigma apart; the query sits on the first mean.
  auto set = regression_set({{1.0}, {2.0}},
                            {point_density({0.0}, 1.0), point_density({12.0}, 1.0)});
  const auto g = cluster_gate({0.0}, set);
  CHECK(g.weights[0] > 0.999);
  CHECK(g.weights[0] + g.weights[1] == Catch::Approx(1.0));
}

TEST_CASE("gate handles total underflow with a uniform fallback", "[mixture]") {
  // Query so far out that every squared distance overflows: all
  // log-densities collapse to -inf and the gate falls back to uniform.
  auto set = regression_set({{1.0}, {2.0}},
                            {point_density({0.0}, 1.0), point_density({5.0}, 1.0)});
  const auto g = cluster_gate({1e200}, set);
  CHECK(g.underflow);
  CHECK(g.weights[0] == Catch::Approx(0.5));
  CHECK(g.weights[1] == Catch::Approx(0.5));
}

TEST_CASE("mixture prediction trivia", "[mixture]") {
  auto one = regression_set({{2.0, -1.0}}, {point_density({0.0, 0.0}, 1.0)});
  const auto p = mixture_predict({1.0, 1.0}, one);
  CHECK(p.front() == Catch::Approx(1.0));  // 2 - 1

  auto same = regression_set(
      {{2.0}, {2.0}, {2.0}},
      {point_density({0.0}, 1.0), point_density({3.0}, 1.0), point_density({-1.0}, 1.0)});
  CHECK(mixture_predict({1.5}, same).front() == Catch::Approx(3.0));
}

TEST_CASE("gmm EM recovers well-separated components", "[mixture]") {
  Rng rng(2025);
  std::vector<std::vector<double>> inputs;
  for (int i = 0; i < 400; ++i) {
    const double base = (i % 2 == 0) ? -6.0 : 6.0;
    inputs.push_back({base + rng.normal(), base + rng.normal()});
  }
  Rng fit_rng(3);
  const GaussianMixture g = fit_gmm(inputs, 2, 60, fit_rng);
  REQUIRE(g.components() == 2);
  const double m0 = g.means[0][0];
  const double m1 = g.means[1][0];
  CHECK(std::abs(std::abs(m0) - 6.0) < 0.5);
  CHECK(std::abs(std::abs(m1) - 6.0) < 0.5);
  CHECK(m0 * m1 < 0.0);  // one component per side
  CHECK(g.weights[0] == Catch::Approx(0.5).margin(0.1));

  // Densities integrate to one by construction; check the gate normalizes.
  auto set = regression_set({{1.0, 0.0}, {0.0, 1.0}}, {g, g});
  const auto gate = cluster_gate(inputs.front(), set);
  CHECK(gate.weights[0] + gate.weights[1] == Catch::Approx(1.0));
}
