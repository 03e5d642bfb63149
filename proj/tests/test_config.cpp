#include <catch2/catch_amalgamated.hpp>

#include <string>
#include <vector>

#include "fedsim/config.hpp"

using namespace fedsim;

TEST_CASE("empty config materializes all defaults", "[config]") {
  const ExperimentConfig c = load_config(json::object());
  CHECK(c.users == 2);
  CHECK(c.model_kind == LossKind::QuadraticSynthetic);
  CHECK(c.schedule.local_steps == 1);
  CHECK(c.selection.policy == SelectionKind::Full);
  CHECK(c.encoder.kind == EncoderKind::Identity);
  CHECK(c.channel.mode == ChannelMode::Orthogonal);
  CHECK(c.combiner.kind == CombinerKind::FedAvg);
  CHECK(c.attack.kind == AttackKind::None);
}

TEST_CASE("unknown keys are rejected at every level", "[config]") {
  std::vector<std::string> errors;
  json bad = {{"modle", json::object()}};
  parse_config(bad, errors);
  REQUIRE(errors.size() == 1);
  CHECK(errors[0].find("unknown key 'modle'") != std::string::npos);

  errors.clear();
  json nested = {{"encoder", {{"kind", "qsgd"}, {"stepp", 0.1}}}};
  parse_config(nested, errors);
  REQUIRE(errors.size() == 1);
  CHECK(errors[0].find("encoder") != std::string::npos);
  CHECK(errors[0].find("stepp") != std::string::npos);
}

TEST_CASE("violations are reported exhaustively", "[config]") {
  json bad = {
      {"users", 0},
      {"schedule", {{"local_steps", 3}, {"total_steps", 10}, {"lr0", -1.0}}},
      {"attack", {{"fraction", 0.7}}},
  };
  std::vector<std::string> errors;
  const ExperimentConfig c = parse_config(bad, errors);
  REQUIRE(errors.empty());
  const auto sem = validate_config(c);
  CHECK(sem.size() >= 4);  // users, divisibility, lr0, attack fraction
  CHECK_THROWS_AS(load_config(bad), Error);
}

TEST_CASE("empty selection K=0 is rejected", "[config]") {
  json bad = {{"selection", {{"policy", "uniform"}, {"k", 0}}}};
  std::vector<std::string> errors;
  auto sem = validate_config(parse_config(bad, errors));
  bool found = false;
  for (const auto& e : sem) found = found || e.find("selection.k") != std::string::npos;
  CHECK(found);
}

TEST_CASE("internal consistency rules", "[config]") {
  // OTA channel requires a dense encoder.
  json ota_sparse = {{"channel", {{"mode", "ota"}}},
                     {"encoder", {{"kind", "topk"}, {"top_k", 1}}}};
  std::vector<std::string> errors;
  auto sem = validate_config(parse_config(ota_sparse, errors));
  bool dense_rule = false;
  for (const auto& e : sem) dense_rule = dense_rule || e.find("dense analog") != std::string::npos;
  CHECK(dense_rule);

  // Mixture combining requires a clustered partition.
  json mix = {{"combiner", {{"kind", "mixture"}}}};
  errors.clear();
  sem = validate_config(parse_config(mix, errors));
  bool clustered_rule = false;
  for (const auto& e : sem) {
    clustered_rule = clustered_rule || e.find("clustered") != std::string::npos;
  }
  CHECK(clustered_rule);

  // T must be a multiple of E.
  json ragged = {{"schedule", {{"local_steps", 4}, {"total_steps", 10}}}};
  errors.clear();
  sem = validate_config(parse_config(ragged, errors));
  bool multiple_rule = false;
  for (const auto& e : sem) multiple_rule = multiple_rule || e.find("multiple") != std::string::npos;
  CHECK(multiple_rule);
}

TEST_CASE("resolved config serialization round-trips", "[config]") {
  json src = {{"users", 7},
              {"model", {{"kind", "logistic"}, {"input_dim", 5}, {"num_classes", 3}, {"lambda", 0.01}}},
              {"dataset", {{"source", "synthetic-blobs"}, {"samples", 300}}},
              {"partition", {{"mode", "sharded"}}},
              {"schedule", {{"local_steps", 2}, {"batch_size", 4}, {"total_steps", 20}}},
              {"encoder", {{"kind", "uveqfed"}, {"lattice_dim", 2}, {"zeta", 0.4}}},
              {"seeds", {{"master", 17}, {"attacks", 5}}}};
  const ExperimentConfig a = load_config(src);
  const ExperimentConfig b = load_config(config_to_json(a));
  CHECK(config_to_json(a) == config_to_json(b));
  CHECK(b.users == 7);
  CHECK(b.encoder.zeta == 0.4);
  REQUIRE(b.seeds.attacks.has_value());
  CHECK(*b.seeds.attacks == 5);
}
