#pragma once

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fedsim/combining.hpp"
#include "fedsim/core.hpp"
#include "fedsim/loss.hpp"
#include "fedsim/training.hpp"

namespace fedsim {

using nlohmann::json;

enum class DatasetSource { SyntheticQuadratic, SyntheticBlobs, SyntheticClustered, File };
enum class PartitionMode { Iid, Sharded, Clustered };
enum class SelectionKind { Full, Uniform, Probabilistic, RoundRobin, Bandit };
enum class EncoderKind { Identity, TopK, Mask, Qsgd, Uveqfed, DpGaussian };
enum class ChannelMode { Orthogonal, Ota };
enum class CombinerKind { FedAvg, Median, TrimmedMean, Krum, Mixture };

struct DatasetConfig {
  DatasetSource source = DatasetSource::SyntheticQuadratic;
  std::string path;
  int samples = 1000;
  int test_samples = 200;
  double noise_std = 0.5;
  double feature_spread = 1.0;   // quadratic: per-coordinate scale ramp
  double class_separation = 3.0; // blobs
  double within_std = 1.0;       // blobs
  double cluster_spread = 4.0;   // clustered: component mean scale
  int cluster_components = 3;    // clustered: Gaussians per cluster input mix
  double theta_scale = 1.0;      // clustered: per-cluster regressor scale
};

struct PartitionConfig {
  PartitionMode mode = PartitionMode::Iid;
  int shards_per_user = 2;
};

struct ScheduleConfig {
  int local_steps = 1;
  int batch_size = 1;
  long total_steps = 1;
  std::string lr_rule = "constant";  // constant | diminishing
  double lr0 = 0.1;
};

struct SelectionConfig {
  SelectionKind policy = SelectionKind::Full;
  int k = 0;  // 0 means N for the full policy
  double alpha = 0.5;
  double explore_c = M_SQRT2;
};

struct DpConfig {
  double epsilon = 0.5;
  double delta = 0.01;
  long exposures = 1;
  double clip = 1.0;
  bool noise_free_test_mode = false;
};

struct EncoderConfig {
  EncoderKind kind = EncoderKind::Identity;
  int top_k = 1;
  double keep_prob = 1.0;
  double qsgd_step = 0.0;           // absolute step
  double qsgd_step_relative = 0.0;  // step = rel * ||u||; charges 32 bits for the norm
  bool dither = true;
  int lattice_dim = 1;
  double zeta = 2.0;
  DpConfig dp;
};

struct OrthogonalConfig {
  double bandwidth_hz = 1.0e6;
  double power = 1.0;
  double noise_psd = 1.0e-7;
  std::vector<double> block_interference;  // per block; empty = all zero
};

struct OtaConfig {
  double noise_var = 0.0;
  double power = 1.0;
  double inversion_threshold = 0.0;
  std::string precoder = "cotaf";  // cotaf | fixed
  double pilot_sqnorm = 1.0;
  double slot_s = 1.0;
};

struct ChannelConfig {
  ChannelMode mode = ChannelMode::Orthogonal;
  OrthogonalConfig orthogonal;
  OtaConfig ota;
};

struct CombinerConfig {
  CombinerKind kind = CombinerKind::FedAvg;
  std::string average_mode = "eq19";  // eq19 | delta-only
  double beta = 0.2;
  int byzantine_count = 0;
  bool weighted = false;
  int clusters = 3;
  int gmm_components = 3;
  int gmm_iterations = 50;
};

struct AttackConfig {
  double fraction = 0.0;
  AttackKind kind = AttackKind::None;
  double noise_std = 1.0;
  double scale = 1.0;
  long reported_size = 1;
};

struct SeedConfig {
  std::uint64_t master = 1;
  std::optional<std::uint64_t> data, partition, init, batches, selection, dither,
      channel, attacks, reference;

  SeedTable table() const {
    SeedTable t;
    t.master = master;
    auto set = [&](Stream s, const std::optional<std::uint64_t>& v) {
      if (v) t.override_seed[static_cast<std::size_t>(s)] = *v;
    };
    set(Stream::Data, data);
    set(Stream::Partition, partition);
    set(Stream::Init, init);
    set(Stream::Batches, batches);
    set(Stream::Selection, selection);
    set(Stream::Dither, dither);
    set(Stream::Channel, channel);
    set(Stream::Attacks, attacks);
    set(Stream::Reference, reference);
    return t;
  }
};

struct OutputConfig {
  std::string dir = "out";
  std::string metrics = "metrics.csv";
  std::string model = "model.bin";
  std::string manifest = "manifest.json";
  bool emit_bounds = false;
  long checkpoint_round = -1;  // write a checkpoint after this round (<0: never)
  std::string checkpoint_path;
};

struct ExperimentConfig {
  int users = 2;
  LossKind model_kind = LossKind::QuadraticSynthetic;
  int input_dim = 4;
  int num_classes = 2;
  int hidden_units = 50;
  double lambda = 0.0;
  double init_scale = 0.0;  // 0: zeros (mlp falls back to 1/sqrt(input_dim))
  DatasetConfig dataset;
  PartitionConfig partition;
  ScheduleConfig schedule;
  SelectionConfig selection;
  EncoderConfig encoder;
  ChannelConfig channel;
  CombinerConfig combiner;
  AttackConfig attack;
  std::vector<double> distances;  // user-to-access-point geometry; empty = all 1
  SeedConfig seeds;
  OutputConfig output;

  LossSpec loss_spec() const {
    LossSpec s;
    s.kind = model_kind;
    s.lambda = lambda;
    s.input_dim = input_dim;
    s.num_classes = num_classes;
    s.hidden_units = hidden_units;
    return s;
  }

  int effective_k() const {
    return (selection.policy == SelectionKind::Full || selection.k == 0) ? users
                                                                         : selection.k;
  }
};

// ----- strict JSON parsing: every field defaulted, unknown keys rejected -----

namespace cfgdetail {

class Reader {
 public:
  Reader(const json& j, std::string path, std::vector<std::string>& errors)
      : j_(j), path_(std::move(path)), errors_(errors) {
    if (!j_.is_object()) {
      errors_.push_back(path_ + ": expected an object");
      ok_ = false;
    }
  }

  ~Reader() {
    if (!ok_) return;
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) {
        errors_.push_back(path_ + ": unknown key '" + it.key() + "'");
      }
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    if (!ok_) return;
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      errors_.push_back(path_ + "." + key + ": " + e.what());
    }
  }

  void get_opt_u64(const char* key, std::optional<std::uint64_t>& out) {
    if (!ok_) return;
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    try {
      out = j_.at(key).get<std::uint64_t>();
    } catch (const json::exception& e) {
      errors_.push_back(path_ + "." + key + ": " + e.what());
    }
  }

  bool sub(const char* key, json& out) {
    if (!ok_) return false;
    seen_.insert(key);
    if (!j_.contains(key)) return false;
    out = j_.at(key);
    return true;
  }

  template <typename T>
  void get_enum(const char* key, T& out,
                const std::vector<std::pair<std::string, T>>& table) {
    std::string s;
    bool present = j_.contains(key);
    get(key, s);
    if (!present || s.empty()) return;
    for (const auto& [name, value] : table) {
      if (name == s) {
        out = value;
        return;
      }
    }
    std::string allowed;
    for (const auto& [name, value] : table) allowed += name + " ";
    errors_.push_back(path_ + "." + key + ": unknown value '" + s +
                      "' (allowed: " + allowed + ")");
  }

 private:
  const json& j_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
  bool ok_ = true;
};

}  // namespace cfgdetail

inline ExperimentConfig parse_config(const json& root, std::vector<std::string>& errors) {
  using cfgdetail::Reader;
  ExperimentConfig c;
  json sub;
  Reader top(root, "config", errors);
  top.get("users", c.users);
  if (top.sub("model", sub)) {
    Reader r(sub, "model", errors);
    r.get_enum("kind", c.model_kind,
               {{"squared-error", LossKind::SquaredError},
                {"logistic", LossKind::Logistic},
                {"quadratic-synthetic", LossKind::QuadraticSynthetic},
                {"mlp", LossKind::Mlp}});
    r.get("input_dim", c.input_dim);
    r.get("num_classes", c.num_classes);
    r.get("hidden_units", c.hidden_units);
    r.get("lambda", c.lambda);
    r.get("init_scale", c.init_scale);
  }
  if (top.sub("dataset", sub)) {
    Reader r(sub, "dataset", errors);
    r.get_enum("source", c.dataset.source,
               {{"synthetic-quadratic", DatasetSource::SyntheticQuadratic},
                {"synthetic-blobs", DatasetSource::SyntheticBlobs},
                {"synthetic-clustered", DatasetSource::SyntheticClustered},
                {"file", DatasetSource::File}});
    r.get("path", c.dataset.path);
    r.get("samples", c.dataset.samples);
    r.get("test_samples", c.dataset.test_samples);
    r.get("noise_std", c.dataset.noise_std);
    r.get("feature_spread", c.dataset.feature_spread);
    r.get("class_separation", c.dataset.class_separation);
    r.get("within_std", c.dataset.within_std);
    r.get("cluster_spread", c.dataset.cluster_spread);
    r.get("cluster_components", c.dataset.cluster_components);
    r.get("theta_scale", c.dataset.theta_scale);
  }
  if (top.sub("partition", sub)) {
    Reader r(sub, "partition", errors);
    r.get_enum("mode", c.partition.mode,
               {{"iid", PartitionMode::Iid},
                {"sharded", PartitionMode::Sharded},
                {"clustered", PartitionMode::Clustered}});
    r.get("shards_per_user", c.partition.shards_per_user);
  }
  if (top.sub("schedule", sub)) {
    Reader r(sub, "schedule", errors);
    r.get("local_steps", c.schedule.local_steps);
    r.get("batch_size", c.schedule.batch_size);
    r.get("total_steps", c.schedule.total_steps);
    r.get("lr_rule", c.schedule.lr_rule);
    r.get("lr0", c.schedule.lr0);
  }
  if (top.sub("selection", sub)) {
    Reader r(sub, "selection", errors);
    r.get_enum("policy", c.selection.policy,
               {{"full", SelectionKind::Full},
                {"uniform", SelectionKind::Uniform},
                {"probabilistic", SelectionKind::Probabilistic},
                {"round-robin", SelectionKind::RoundRobin},
                {"bandit", SelectionKind::Bandit}});
    r.get("k", c.selection.k);
    r.get("alpha", c.selection.alpha);
    r.get("explore_c", c.selection.explore_c);
  }
  if (top.sub("encoder", sub)) {
    Reader r(sub, "encoder", errors);
    r.get_enum("kind", c.encoder.kind,
               {{"identity", EncoderKind::Identity},
                {"topk", EncoderKind::TopK},
                {"mask", EncoderKind::Mask},
                {"qsgd", EncoderKind::Qsgd},
                {"uveqfed", EncoderKind::Uveqfed},
                {"dp-gaussian", EncoderKind::DpGaussian}});
    r.get("top_k", c.encoder.top_k);
    r.get("keep_prob", c.encoder.keep_prob);
    r.get("qsgd_step", c.encoder.qsgd_step);
    r.get("qsgd_step_relative", c.encoder.qsgd_step_relative);
    r.get("dither", c.encoder.dither);
    r.get("lattice_dim", c.encoder.lattice_dim);
    r.get("zeta", c.encoder.zeta);
    json dp;
    if (r.sub("dp", dp)) {
      Reader rd(dp, "encoder.dp", errors);
      rd.get("epsilon", c.encoder.dp.epsilon);
      rd.get("delta", c.encoder.dp.delta);
      rd.get("exposures", c.encoder.dp.exposures);
      rd.get("clip", c.encoder.dp.clip);
      rd.get("noise_free_test_mode", c.encoder.dp.noise_free_test_mode);
    }
  }
  if (top.sub("channel", sub)) {
    Reader r(sub, "channel", errors);
    r.get_enum("mode", c.channel.mode,
               {{"orthogonal", ChannelMode::Orthogonal}, {"ota", ChannelMode::Ota}});
    json ch;
    if (r.sub("orthogonal", ch)) {
      Reader ro(ch, "channel.orthogonal", errors);
      ro.get("bandwidth_hz", c.channel.orthogonal.bandwidth_hz);
      ro.get("power", c.channel.orthogonal.power);
      ro.get("noise_psd", c.channel.orthogonal.noise_psd);
      ro.get("block_interference", c.channel.orthogonal.block_interference);
    }
    if (r.sub("ota", ch)) {
      Reader ro(ch, "channel.ota", errors);
      ro.get("noise_var", c.channel.ota.noise_var);
      ro.get("power", c.channel.ota.power);
      ro.get("inversion_threshold", c.channel.ota.inversion_threshold);
      ro.get("precoder", c.channel.ota.precoder);
      ro.get("pilot_sqnorm", c.channel.ota.pilot_sqnorm);
      ro.get("slot_s", c.channel.ota.slot_s);
    }
  }
  if (top.sub("combiner", sub)) {
    Reader r(sub, "combiner", errors);
    r.get_enum("kind", c.combiner.kind,
               {{"fedavg", CombinerKind::FedAvg},
                {"median", CombinerKind::Median},
                {"trimmed-mean", CombinerKind::TrimmedMean},
                {"krum", CombinerKind::Krum},
                {"mixture", CombinerKind::Mixture}});
    r.get("average_mode", c.combiner.average_mode);
    r.get("beta", c.combiner.beta);
    r.get("byzantine_count", c.combiner.byzantine_count);
    r.get("weighted", c.combiner.weighted);
    r.get("clusters", c.combiner.clusters);
    r.get("gmm_components", c.combiner.gmm_components);
    r.get("gmm_iterations", c.combiner.gmm_iterations);
  }
  if (top.sub("attack", sub)) {
    Reader r(sub, "attack", errors);
    r.get("fraction", c.attack.fraction);
    r.get_enum("kind", c.attack.kind,
               {{"none", AttackKind::None},
                {"sign-flip", AttackKind::SignFlip},
                {"gaussian", AttackKind::Gaussian},
                {"scale", AttackKind::Scale},
                {"reported-size", AttackKind::ReportedSize}});
    r.get("noise_std", c.attack.noise_std);
    r.get("scale", c.attack.scale);
    r.get("reported_size", c.attack.reported_size);
  }
  top.get("distances", c.distances);
  if (top.sub("seeds", sub)) {
    Reader r(sub, "seeds", errors);
    r.get("master", c.seeds.master);
    r.get_opt_u64("data", c.seeds.data);
    r.get_opt_u64("partition", c.seeds.partition);
    r.get_opt_u64("init", c.seeds.init);
    r.get_opt_u64("batches", c.seeds.batches);
    r.get_opt_u64("selection", c.seeds.selection);
    r.get_opt_u64("dither", c.seeds.dither);
    r.get_opt_u64("channel", c.seeds.channel);
    r.get_opt_u64("attacks", c.seeds.attacks);
    r.get_opt_u64("reference", c.seeds.reference);
  }
  if (top.sub("output", sub)) {
    Reader r(sub, "output", errors);
    r.get("dir", c.output.dir);
    r.get("metrics", c.output.metrics);
    r.get("model", c.output.model);
    r.get("manifest", c.output.manifest);
    r.get("emit_bounds", c.output.emit_bounds);
    r.get("checkpoint_round", c.output.checkpoint_round);
    r.get("checkpoint_path", c.output.checkpoint_path);
  }
  return c;
}

// Semantic validation; every violated rule is reported, not just the first.
inline std::vector<std::string> validate_config(const ExperimentConfig& c) {
  std::vector<std::string> errs;
  auto expect = [&](bool cond, const std::string& msg) {
    if (!cond) errs.push_back(msg);
  };
  const bool classifier = c.model_kind == LossKind::Logistic || c.model_kind == LossKind::Mlp;
  const int param_dim = c.loss_spec().param_dim();

  expect(c.users >= 1, "users: must be >= 1");
  expect(c.input_dim >= 1, "model.input_dim: must be >= 1");
  expect(c.lambda >= 0.0 && std::isfinite(c.lambda), "model.lambda: must be finite and >= 0");
  expect(c.init_scale >= 0.0 && std::isfinite(c.init_scale),
         "model.init_scale: must be finite and >= 0");
  if (classifier) expect(c.num_classes >= 2, "model.num_classes: must be >= 2");
  if (c.model_kind == LossKind::Mlp) expect(c.hidden_units >= 1, "model.hidden_units: must be >= 1");

  switch (c.dataset.source) {
    case DatasetSource::SyntheticQuadratic:
      expect(!classifier, "dataset: synthetic-quadratic pairs with regression models");
      break;
    case DatasetSource::SyntheticBlobs:
      expect(classifier, "dataset: synthetic-blobs pairs with classification models");
      break;
    case DatasetSource::SyntheticClustered:
      expect(!classifier, "dataset: synthetic-clustered pairs with regression models");
      expect(c.partition.mode == PartitionMode::Clustered,
             "dataset: synthetic-clustered requires partition.mode=clustered");
      break;
    case DatasetSource::File:
      expect(!c.dataset.path.empty(), "dataset.path: required for file source");
      break;
  }
  expect(c.dataset.samples >= c.users, "dataset.samples: need at least one sample per user");
  expect(c.dataset.test_samples >= 0, "dataset.test_samples: must be >= 0");
  expect(c.dataset.noise_std >= 0.0, "dataset.noise_std: must be >= 0");
  expect(c.dataset.cluster_components >= 1, "dataset.cluster_components: must be >= 1");

  if (c.partition.mode == PartitionMode::Sharded) {
    expect(classifier, "partition: sharded mode requires a classification model");
    expect(c.partition.shards_per_user >= 1, "partition.shards_per_user: must be >= 1");
  }
  if (c.partition.mode == PartitionMode::Clustered) {
    expect(c.dataset.source == DatasetSource::SyntheticClustered,
           "partition: clustered mode requires the synthetic-clustered source");
  }

  expect(c.schedule.local_steps >= 1, "schedule.local_steps: must be >= 1");
  expect(c.schedule.batch_size >= 1, "schedule.batch_size: must be >= 1");
  expect(c.schedule.total_steps >= 1, "schedule.total_steps: must be >= 1");
  expect(c.schedule.total_steps % c.schedule.local_steps == 0,
         "schedule: total_steps must be a multiple of local_steps");
  expect(c.schedule.lr_rule == "constant" || c.schedule.lr_rule == "diminishing",
         "schedule.lr_rule: must be constant or diminishing");
  expect(c.schedule.lr0 > 0.0, "schedule.lr0: must be positive");
  if (c.schedule.lr_rule == "diminishing") {
    expect(c.model_kind == LossKind::QuadraticSynthetic ||
               c.model_kind == LossKind::SquaredError ||
               (c.model_kind == LossKind::Logistic && c.lambda > 0.0),
           "schedule: the diminishing rule needs a strongly convex objective");
  }

  const int k = c.effective_k();
  expect(c.selection.k >= 0, "selection.k: must be >= 0");
  if (c.selection.policy != SelectionKind::Full) {
    expect(c.selection.k >= 1, "selection.k: must be >= 1 for partial participation");
  }
  expect(k >= 1 && k <= c.users, "selection: K must satisfy 1 <= K <= N");
  expect(c.selection.alpha >= 0.0 && c.selection.alpha <= 1.0,
         "selection.alpha: must be in [0,1]");
  if (c.selection.policy == SelectionKind::Probabilistic) {
    expect(c.distances.empty() || static_cast<int>(c.distances.size()) == c.users,
           "distances: must be empty or one entry per user");
  }

  switch (c.encoder.kind) {
    case EncoderKind::Identity:
      break;
    case EncoderKind::TopK:
      expect(c.encoder.top_k >= 1 && c.encoder.top_k <= param_dim,
             "encoder.top_k: must be in [1, model dimension]");
      break;
    case EncoderKind::Mask:
      expect(c.encoder.keep_prob > 0.0 && c.encoder.keep_prob <= 1.0,
             "encoder.keep_prob: must be in (0,1]");
      break;
    case EncoderKind::Qsgd:
      expect((c.encoder.qsgd_step > 0.0) != (c.encoder.qsgd_step_relative > 0.0),
             "encoder: exactly one of qsgd_step / qsgd_step_relative must be positive");
      break;
    case EncoderKind::Uveqfed:
      expect(c.encoder.lattice_dim == 1 || c.encoder.lattice_dim == 2,
             "encoder.lattice_dim: must be 1 or 2");
      expect(c.encoder.zeta > 0.0, "encoder.zeta: must be positive");
      break;
    case EncoderKind::DpGaussian: {
      const auto& dp = c.encoder.dp;
      expect(dp.epsilon > 0.0 && dp.epsilon < 1.0,
             "encoder.dp.epsilon: must be in (0,1) for the Gaussian mechanism");
      expect(dp.delta > 0.0 && dp.delta < 1.0, "encoder.dp.delta: must be in (0,1)");
      expect(dp.exposures >= 1, "encoder.dp.exposures: must be >= 1");
      expect(dp.clip > 0.0, "encoder.dp.clip: must be positive");
      break;
    }
  }

  if (c.channel.mode == ChannelMode::Ota) {
    expect(c.encoder.kind == EncoderKind::Identity || c.encoder.kind == EncoderKind::DpGaussian,
           "channel: the OTA channel carries dense analog updates only");
    expect(c.combiner.kind == CombinerKind::FedAvg,
           "channel: OTA aggregation supports the FedAvg combiner only");
    expect(c.channel.ota.power > 0.0, "channel.ota.power: must be positive");
    expect(c.channel.ota.noise_var >= 0.0, "channel.ota.noise_var: must be >= 0");
    expect(c.channel.ota.pilot_sqnorm > 0.0, "channel.ota.pilot_sqnorm: must be positive");
    expect(c.channel.ota.inversion_threshold >= 0.0,
           "channel.ota.inversion_threshold: must be >= 0");
    expect(c.channel.ota.precoder == "cotaf" || c.channel.ota.precoder == "fixed",
           "channel.ota.precoder: must be cotaf or fixed");
    expect(c.channel.ota.slot_s >= 0.0, "channel.ota.slot_s: must be >= 0");
  } else {
    const auto& o = c.channel.orthogonal;
    expect(o.bandwidth_hz > 0.0, "channel.orthogonal.bandwidth_hz: must be positive");
    expect(o.power > 0.0, "channel.orthogonal.power: must be positive");
    expect(o.noise_psd >= 0.0, "channel.orthogonal.noise_psd: must be >= 0");
    expect(o.block_interference.empty() ||
               static_cast<int>(o.block_interference.size()) == k,
           "channel.orthogonal.block_interference: must be empty or one entry per block");
    bool positive_noise = o.noise_psd > 0.0;
    for (double v : o.block_interference) {
      expect(v >= 0.0, "channel.orthogonal.block_interference: entries must be >= 0");
      positive_noise = positive_noise || v > 0.0;
    }
    expect(positive_noise,
           "channel.orthogonal: zero noise and interference gives infinite rates");
  }
  expect(c.distances.empty() || static_cast<int>(c.distances.size()) == c.users,
         "distances: must be empty or one entry per user");
  for (double d : c.distances) {
    expect(d > 0.0 && std::isfinite(d), "distances: entries must be positive finite");
  }

  switch (c.combiner.kind) {
    case CombinerKind::FedAvg:
      expect(c.combiner.average_mode == "eq19" || c.combiner.average_mode == "delta-only",
             "combiner.average_mode: must be eq19 or delta-only");
      break;
    case CombinerKind::TrimmedMean: {
      expect(c.combiner.beta >= 0.0 && c.combiner.beta < 0.5,
             "combiner.beta: must be in [0, 0.5)");
      const int trim = static_cast<int>(std::floor(c.combiner.beta * k));
      expect(k - 2 * trim >= 1, "combiner: trimming would remove every row");
      break;
    }
    case CombinerKind::Krum:
      expect(c.combiner.byzantine_count >= 0, "combiner.byzantine_count: must be >= 0");
      expect(k >= c.combiner.byzantine_count + 3, "combiner: Krum needs |G_t| >= f + 3");
      break;
    case CombinerKind::Mixture:
      expect(c.partition.mode == PartitionMode::Clustered,
             "combiner: mixture requires partition.mode=clustered");
      expect(c.channel.mode == ChannelMode::Orthogonal,
             "combiner: mixture requires the orthogonal channel");
      expect(c.combiner.clusters >= 1, "combiner.clusters: must be >= 1");
      expect(c.combiner.gmm_components >= 1, "combiner.gmm_components: must be >= 1");
      expect(c.combiner.gmm_iterations >= 1, "combiner.gmm_iterations: must be >= 1");
      expect(c.selection.policy == SelectionKind::Full,
             "combiner: mixture training uses full participation");
      break;
    case CombinerKind::Median:
      break;
  }
  if (c.partition.mode == PartitionMode::Clustered) {
    expect(c.combiner.clusters >= 1 && c.combiner.clusters <= c.users,
           "combiner.clusters: must be in [1, users]");
  }

  expect(c.attack.fraction >= 0.0 && c.attack.fraction < 0.5,
         "attack.fraction: must be in [0, 0.5)");
  expect(std::isfinite(c.attack.noise_std) && c.attack.noise_std >= 0.0,
         "attack.noise_std: must be finite and >= 0");
  expect(std::isfinite(c.attack.scale), "attack.scale: must be finite");
  expect(c.attack.reported_size >= 1, "attack.reported_size: must be >= 1");

  expect(!c.output.dir.empty(), "output.dir: must not be empty");
  if (c.output.checkpoint_round >= 0) {
    expect(!c.output.checkpoint_path.empty(),
           "output.checkpoint_path: required when checkpoint_round is set");
  }
  return errs;
}

inline ExperimentConfig load_config(const json& root) {
  std::vector<std::string> errors;
  ExperimentConfig c = parse_config(root, errors);
  if (errors.empty()) {
    auto sem = validate_config(c);
    errors.insert(errors.end(), sem.begin(), sem.end());
  }
  if (!errors.empty()) {
    std::ostringstream os;
    os << "invalid config (" << errors.size() << " error(s)):";
    for (const auto& e : errors) os << "\n  - " << e;
    throw Error(os.str());
  }
  return c;
}

inline ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open config file " + path);
  json root;
  try {
    root = json::parse(in);
  } catch (const json::exception& e) {
    throw Error("config parse error in " + path + ": " + e.what());
  }
  return load_config(root);
}

// Resolved config re-serialized with every default materialized (for the
// run manifest).
inline json config_to_json(const ExperimentConfig& c) {
  json j;
  j["users"] = c.users;
  const char* kind = "quadratic-synthetic";
  if (c.model_kind == LossKind::SquaredError) kind = "squared-error";
  if (c.model_kind == LossKind::Logistic) kind = "logistic";
  if (c.model_kind == LossKind::Mlp) kind = "mlp";
  j["model"] = {{"kind", kind},
                {"input_dim", c.input_dim},
                {"num_classes", c.num_classes},
                {"hidden_units", c.hidden_units},
                {"lambda", c.lambda},
                {"init_scale", c.init_scale}};
  const char* src = "synthetic-quadratic";
  if (c.dataset.source == DatasetSource::SyntheticBlobs) src = "synthetic-blobs";
  if (c.dataset.source == DatasetSource::SyntheticClustered) src = "synthetic-clustered";
  if (c.dataset.source == DatasetSource::File) src = "file";
  j["dataset"] = {{"source", src},
                  {"path", c.dataset.path},
                  {"samples", c.dataset.samples},
                  {"test_samples", c.dataset.test_samples},
                  {"noise_std", c.dataset.noise_std},
                  {"feature_spread", c.dataset.feature_spread},
                  {"class_separation", c.dataset.class_separation},
                  {"within_std", c.dataset.within_std},
                  {"cluster_spread", c.dataset.cluster_spread},
                  {"cluster_components", c.dataset.cluster_components},
                  {"theta_scale", c.dataset.theta_scale}};
  const char* pm = "iid";
  if (c.partition.mode == PartitionMode::Sharded) pm = "sharded";
  if (c.partition.mode == PartitionMode::Clustered) pm = "clustered";
  j["partition"] = {{"mode", pm}, {"shards_per_user", c.partition.shards_per_user}};
  j["schedule"] = {{"local_steps", c.schedule.local_steps},
                   {"batch_size", c.schedule.batch_size},
                   {"total_steps", c.schedule.total_steps},
                   {"lr_rule", c.schedule.lr_rule},
                   {"lr0", c.schedule.lr0}};
  const char* pol = "full";
  if (c.selection.policy == SelectionKind::Uniform) pol = "uniform";
  if (c.selection.policy == SelectionKind::Probabilistic) pol = "probabilistic";
  if (c.selection.policy == SelectionKind::RoundRobin) pol = "round-robin";
  if (c.selection.policy == SelectionKind::Bandit) pol = "bandit";
  j["selection"] = {{"policy", pol},
                    {"k", c.selection.k},
                    {"alpha", c.selection.alpha},
                    {"explore_c", c.selection.explore_c}};
  const char* enc = "identity";
  if (c.encoder.kind == EncoderKind::TopK) enc = "topk";
  if (c.encoder.kind == EncoderKind::Mask) enc = "mask";
  if (c.encoder.kind == EncoderKind::Qsgd) enc = "qsgd";
  if (c.encoder.kind == EncoderKind::Uveqfed) enc = "uveqfed";
  if (c.encoder.kind == EncoderKind::DpGaussian) enc = "dp-gaussian";
  j["encoder"] = {{"kind", enc},
                  {"top_k", c.encoder.top_k},
                  {"keep_prob", c.encoder.keep_prob},
                  {"qsgd_step", c.encoder.qsgd_step},
                  {"qsgd_step_relative", c.encoder.qsgd_step_relative},
                  {"dither", c.encoder.dither},
                  {"lattice_dim", c.encoder.lattice_dim},
                  {"zeta", c.encoder.zeta},
                  {"dp",
                   {{"epsilon", c.encoder.dp.epsilon},
                    {"delta", c.encoder.dp.delta},
                    {"exposures", c.encoder.dp.exposures},
                    {"clip", c.encoder.dp.clip},
                    {"noise_free_test_mode", c.encoder.dp.noise_free_test_mode}}}};
  j["channel"] = {
      {"mode", c.channel.mode == ChannelMode::Ota ? "ota" : "orthogonal"},
      {"orthogonal",
       {{"bandwidth_hz", c.channel.orthogonal.bandwidth_hz},
        {"power", c.channel.orthogonal.power},
        {"noise_psd", c.channel.orthogonal.noise_psd},
        {"block_interference", c.channel.orthogonal.block_interference}}},
      {"ota",
       {{"noise_var", c.channel.ota.noise_var},
        {"power", c.channel.ota.power},
        {"inversion_threshold", c.channel.ota.inversion_threshold},
        {"precoder", c.channel.ota.precoder},
        {"pilot_sqnorm", c.channel.ota.pilot_sqnorm},
        {"slot_s", c.channel.ota.slot_s}}}};
  const char* cmb = "fedavg";
  if (c.combiner.kind == CombinerKind::Median) cmb = "median";
  if (c.combiner.kind == CombinerKind::TrimmedMean) cmb = "trimmed-mean";
  if (c.combiner.kind == CombinerKind::Krum) cmb = "krum";
  if (c.combiner.kind == CombinerKind::Mixture) cmb = "mixture";
  j["combiner"] = {{"kind", cmb},
                   {"average_mode", c.combiner.average_mode},
                   {"beta", c.combiner.beta},
                   {"byzantine_count", c.combiner.byzantine_count},
                   {"weighted", c.combiner.weighted},
                   {"clusters", c.combiner.clusters},
                   {"gmm_components", c.combiner.gmm_components},
                   {"gmm_iterations", c.combiner.gmm_iterations}};
  const char* atk = "none";
  if (c.attack.kind == AttackKind::SignFlip) atk = "sign-flip";
  if (c.attack.kind == AttackKind::Gaussian) atk = "gaussian";
  if (c.attack.kind == AttackKind::Scale) atk = "scale";
  if (c.attack.kind == AttackKind::ReportedSize) atk = "reported-size";
  j["attack"] = {{"fraction", c.attack.fraction},
                 {"kind", atk},
                 {"noise_std", c.attack.noise_std},
                 {"scale", c.attack.scale},
                 {"reported_size", c.attack.reported_size}};
  j["distances"] = c.distances;
  json seeds = {{"master", c.seeds.master}};
  auto put = [&](const char* name, const std::optional<std::uint64_t>& v) {
    if (v) seeds[name] = *v;
  };
  put("data", c.seeds.data);
  put("partition", c.seeds.partition);
  put("init", c.seeds.init);
  put("batches", c.seeds.batches);
  put("selection", c.seeds.selection);
  put("dither", c.seeds.dither);
  put("channel", c.seeds.channel);
  put("attacks", c.seeds.attacks);
  put("reference", c.seeds.reference);
  j["seeds"] = seeds;
  j["output"] = {{"dir", c.output.dir},
                 {"metrics", c.output.metrics},
                 {"model", c.output.model},
                 {"manifest", c.output.manifest},
                 {"emit_bounds", c.output.emit_bounds},
                 {"checkpoint_round", c.output.checkpoint_round},
                 {"checkpoint_path", c.output.checkpoint_path}};
  return j;
}

}  // namespace fedsim
