#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "fedsim/orchestrator.hpp"

namespace {

fedsim::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw fedsim::Error("cannot open config file " + path);
  try {
    return fedsim::json::parse(in);
  } catch (const fedsim::json::exception& e) {
    throw fedsim::Error("config parse error in " + path + ": " + e.what());
  }
}

// Set a dotted-path key (e.g. encoder.dp.epsilon) to a JSON-parsed value.
void set_by_path(fedsim::json& root, const std::string& path, const std::string& raw) {
  fedsim::json* node = &root;
  std::stringstream ss(path);
  std::string key, prev;
  std::vector<std::string> keys;
  while (std::getline(ss, key, '.')) keys.push_back(key);
  if (keys.empty()) throw fedsim::Error("sweep: empty --param path");
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) node = &((*node)[keys[i]]);
  fedsim::json value;
  try {
    value = fedsim::json::parse(raw);
  } catch (const fedsim::json::exception&) {
    value = raw;  // plain string
  }
  (*node)[keys.back()] = value;
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-') ? c : '_';
  return out;
}

int run_one(const fedsim::ExperimentConfig& cfg, const std::string& resume) {
  const auto result = fedsim::run_experiment(cfg, resume);
  const auto& last = result.records.back();
  std::printf("rounds: %zu\n", result.records.size());
  std::printf("final train_loss: %.8g\n", last.train_loss);
  std::printf("final test_loss:  %.8g\n", last.test_loss);
  if (!std::isnan(last.test_acc)) std::printf("final test_acc:   %.4f\n", last.test_acc);
  std::printf("cumulative delay: %.6g s\n", result.final_state.cumulative_delay_s);
  std::printf("cumulative bits:  %lld\n", result.final_state.cumulative_bits);
  std::printf("metrics: %s\n", result.metrics_path.c_str());
  std::printf("model:   %s\n", result.model_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedsim: deterministic federated-learning uplink simulator"};
  app.require_subcommand(1);

  std::string config_path, resume_path, sweep_param, sweep_values;

  auto* run_cmd = app.add_subcommand("run", "execute an experiment");
  run_cmd->add_option("config", config_path, "experiment config (JSON)")->required();
  run_cmd->add_option("--resume", resume_path, "resume from a checkpoint file");

  auto* validate_cmd = app.add_subcommand("validate", "check a config without running");
  validate_cmd->add_option("config", config_path, "experiment config (JSON)")->required();

  auto* bound_cmd = app.add_subcommand("bound", "print the analytic convergence bounds");
  bound_cmd->add_option("config", config_path, "experiment config (JSON)")->required();

  auto* sweep_cmd = app.add_subcommand("sweep", "one-dimensional parameter sweep");
  sweep_cmd->add_option("config", config_path, "experiment config (JSON)")->required();
  sweep_cmd->add_option("--param", sweep_param, "dotted config path, e.g. encoder.dp.epsilon")
      ->required();
  sweep_cmd->add_option("--values", sweep_values, "comma-separated values")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) {
      return run_one(fedsim::load_config(read_json(config_path)), resume_path);
    }
    if (validate_cmd->parsed()) {
      fedsim::json root = read_json(config_path);
      std::vector<std::string> errors;
      fedsim::ExperimentConfig cfg = fedsim::parse_config(root, errors);
      if (errors.empty()) {
        auto sem = fedsim::validate_config(cfg);
        errors.insert(errors.end(), sem.begin(), sem.end());
      }
      if (errors.empty()) {
        std::printf("ok: %s\n", config_path.c_str());
        return 0;
      }
      std::fprintf(stderr, "%zu error(s) in %s:\n", errors.size(), config_path.c_str());
      for (const auto& e : errors) std::fprintf(stderr, "  - %s\n", e.c_str());
      return 1;
    }
    if (bound_cmd->parsed()) {
      fedsim::ExperimentConfig cfg = fedsim::load_config(read_json(config_path));
      cfg.output.emit_bounds = true;
      fedsim::Orchestrator orch(cfg);
      const auto& bp = orch.bound_params();
      if (!bp) throw fedsim::Error("bound: objective does not admit the convergence bound");
      fedsim::BoundParams params = *bp;
      params.total_steps = cfg.schedule.total_steps;
      std::printf("L = %.8g, mu = %.8g, gamma = %.8g\n", params.smooth_L,
                  params.strong_mu, params.gamma());
      std::printf("Gamma = %.8g, G^2 = %.8g, init_dist = %.8g\n", params.heterogeneity,
                  params.grad_bound_sq, params.init_dist);
      std::printf("fedavg_bound(T=%ld)  = %.8g\n", params.total_steps,
                  fedavg_bound(params));
      if (cfg.encoder.kind == fedsim::EncoderKind::Uveqfed) {
        auto spec = fedsim::make_lattice_spec(cfg.encoder.lattice_dim, cfg.encoder.zeta);
        params.lattice = fedsim::BoundParams::LatticeTerm{
            spec.subvectors(cfg.loss_spec().param_dim()), spec.zeta,
            spec.lattice.cell_second_moment};
        std::printf("uveqfed_bound(T=%ld) = %.8g\n", params.total_steps,
                    fedsim::uveqfed_bound(params));
      }
      if (cfg.channel.mode == fedsim::ChannelMode::Ota) {
        params.ota = fedsim::BoundParams::OtaTerm{cfg.loss_spec().param_dim(),
                                                  cfg.channel.ota.noise_var,
                                                  cfg.channel.ota.power, cfg.users};
        std::printf("cotaf_bound(T=%ld)   = %.8g\n", params.total_steps,
                    fedsim::cotaf_bound(params));
      }
      return 0;
    }
    if (sweep_cmd->parsed()) {
      fedsim::json base = read_json(config_path);
      std::stringstream ss(sweep_values);
      std::string value;
      int failures = 0;
      while (std::getline(ss, value, ',')) {
        fedsim::json variant = base;
        set_by_path(variant, sweep_param, value);
        fedsim::ExperimentConfig cfg = fedsim::load_config(variant);
        cfg.output.dir += "/" + sanitize(sweep_param) + "=" + sanitize(value);
        std::printf("--- %s = %s ---\n", sweep_param.c_str(), value.c_str());
        failures += run_one(cfg, "");
      }
      return failures == 0 ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
