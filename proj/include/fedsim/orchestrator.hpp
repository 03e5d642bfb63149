#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "fedsim/allocation.hpp"
#include "fedsim/analysis.hpp"
#include "fedsim/channel.hpp"
#include "fedsim/combining.hpp"
#include "fedsim/config.hpp"
#include "fedsim/dataset.hpp"
#include "fedsim/encoding.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/mixture.hpp"
#include "fedsim/serialize.hpp"
#include "fedsim/training.hpp"

namespace fedsim {

// ----- dataset partitioning -----

// Random equal split (first pool_size mod N users get one extra sample).
inline std::vector<LocalDataset> partition_iid(const LocalDataset& pool, int n_users,
                                               Rng& rng) {
  check(pool.size() >= n_users, "partition: pool smaller than user count");
  std::vector<int> order(static_cast<std::size_t>(pool.size()));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::vector<LocalDataset> parts(static_cast<std::size_t>(n_users));
  const int base = pool.size() / n_users;
  const int extra = pool.size() % n_users;
  int pos = 0;
  for (int u = 0; u < n_users; ++u) {
    const int take = base + (u < extra ? 1 : 0);
    for (int i = 0; i < take; ++i) {
      parts[static_cast<std::size_t>(u)].samples.push_back(
          pool.samples[static_cast<std::size_t>(order[static_cast<std::size_t>(pos++)])]);
    }
  }
  return parts;
}

// Label-sharded heterogeneous split: sort by label, cut into
// shards_per_user * N contiguous shards, hand each user shards_per_user of
// them at random.
inline std::vector<LocalDataset> partition_sharded(const LocalDataset& pool, int n_users,
                                                   int shards_per_user, Rng& rng) {
  const int n_shards = n_users * shards_per_user;
  check(pool.size() >= n_shards, "partition: pool smaller than the shard count");
  std::vector<int> order(static_cast<std::size_t>(pool.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return pool.samples[static_cast<std::size_t>(a)].label <
           pool.samples[static_cast<std::size_t>(b)].label;
  });
  std::vector<int> shard_ids(static_cast<std::size_t>(n_shards));
  std::iota(shard_ids.begin(), shard_ids.end(), 0);
  rng.shuffle(shard_ids);
  std::vector<LocalDataset> parts(static_cast<std::size_t>(n_users));
  for (int s = 0; s < n_shards; ++s) {
    const int user = s / shards_per_user;
    const int shard = shard_ids[static_cast<std::size_t>(s)];
    const int lo = static_cast<int>(static_cast<long>(shard) * pool.size() / n_shards);
    const int hi = static_cast<int>(static_cast<long>(shard + 1) * pool.size() / n_shards);
    for (int i = lo; i < hi; ++i) {
      parts[static_cast<std::size_t>(user)].samples.push_back(
          pool.samples[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
    }
  }
  return parts;
}

// ----- experiment materialization -----

struct ExperimentData {
  std::vector<LocalDataset> train;  // per user
  LocalDataset test;                // pooled held-out set
  std::vector<LocalDataset> cluster_test;  // clustered mode
  std::vector<int> user_cluster;    // clustered mode, else empty
  ParamVector theta_true;           // quadratic sources only
};

inline ExperimentData build_data(const ExperimentConfig& cfg, const SeedTable& seeds) {
  ExperimentData out;
  Rng data_rng = make_stream(seeds.stream_seed(Stream::Data));
  Rng part_rng = make_stream(seeds.stream_seed(Stream::Partition));
  const LossSpec spec = cfg.loss_spec();

  switch (cfg.dataset.source) {
    case DatasetSource::SyntheticQuadratic: {
      auto pool = make_regression_pool(cfg.dataset.samples + cfg.dataset.test_samples,
                                       cfg.input_dim, cfg.dataset.noise_std,
                                       cfg.dataset.feature_spread, data_rng);
      out.theta_true = pool.theta_true;
      out.test.samples.assign(pool.data.samples.end() - cfg.dataset.test_samples,
                              pool.data.samples.end());
      pool.data.samples.resize(static_cast<std::size_t>(cfg.dataset.samples));
      out.train = partition_iid(pool.data, cfg.users, part_rng);
      break;
    }
    case DatasetSource::SyntheticBlobs: {
      auto pool = make_blobs_pool(cfg.dataset.samples + cfg.dataset.test_samples,
                                  cfg.input_dim, cfg.num_classes,
                                  cfg.dataset.class_separation, cfg.dataset.within_std,
                                  data_rng);
      out.test.samples.assign(pool.samples.end() - cfg.dataset.test_samples,
                              pool.samples.end());
      pool.samples.resize(static_cast<std::size_t>(cfg.dataset.samples));
      out.train = (cfg.partition.mode == PartitionMode::Sharded)
                      ? partition_sharded(pool, cfg.users, cfg.partition.shards_per_user,
                                          part_rng)
                      : partition_iid(pool, cfg.users, part_rng);
      break;
    }
    case DatasetSource::SyntheticClustered: {
      const int c = cfg.combiner.clusters;
      auto gens = make_cluster_generators(c, cfg.dataset.cluster_components,
                                          cfg.input_dim, cfg.dataset.cluster_spread,
                                          cfg.dataset.theta_scale, cfg.dataset.noise_std,
                                          data_rng);
      out.user_cluster.resize(static_cast<std::size_t>(cfg.users));
      out.train.resize(static_cast<std::size_t>(cfg.users));
      const int per_user = cfg.dataset.samples / cfg.users;
      check(per_user >= 1, "dataset: fewer samples than users");
      for (int u = 0; u < cfg.users; ++u) {
        const int cl = u % c;  // users assigned to config-defined generators
        out.user_cluster[static_cast<std::size_t>(u)] = cl;
        for (int i = 0; i < per_user; ++i) {
          out.train[static_cast<std::size_t>(u)].samples.push_back(
              gens[static_cast<std::size_t>(cl)].draw(data_rng));
        }
      }
      out.cluster_test.resize(static_cast<std::size_t>(c));
      const int per_cluster_test = std::max(1, cfg.dataset.test_samples / c);
      for (int cl = 0; cl < c; ++cl) {
        for (int i = 0; i < per_cluster_test; ++i) {
          auto s = gens[static_cast<std::size_t>(cl)].draw(data_rng);
          out.cluster_test[static_cast<std::size_t>(cl)].samples.push_back(s);
          out.test.samples.push_back(std::move(s));
        }
      }
      break;
    }
    case DatasetSource::File: {
      auto pool = load_columnar(cfg.dataset.path);
      check(pool.input_dim() == cfg.input_dim,
            "dataset file: input dimension does not match model.input_dim");
      check(pool.size() > cfg.dataset.test_samples,
            "dataset file: not enough samples for the test split");
      std::vector<int> order(static_cast<std::size_t>(pool.size()));
      std::iota(order.begin(), order.end(), 0);
      data_rng.shuffle(order);
      LocalDataset train_pool;
      for (int i = 0; i < pool.size(); ++i) {
        auto& dst = (i < cfg.dataset.test_samples) ? out.test : train_pool;
        dst.samples.push_back(pool.samples[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
      }
      out.train = (cfg.partition.mode == PartitionMode::Sharded)
                      ? partition_sharded(train_pool, cfg.users,
                                          cfg.partition.shards_per_user, part_rng)
                      : partition_iid(train_pool, cfg.users, part_rng);
      break;
    }
  }
  for (auto& ds : out.train) {
    ds.validate();
    check(ds.size() >= cfg.schedule.batch_size,
          "schedule.batch_size exceeds the smallest local dataset");
  }
  (void)spec;
  return out;
}

// ----- round state -----

struct RoundState {
  long round = 0;  // aggregation round index; global step t = round * E
  std::vector<ParamVector> models;  // one entry, or one per cluster
  double cumulative_delay_s = 0.0;
  long long cumulative_bits = 0;
  BanditState bandit;
  double cotaf_prev_max_sqnorm = 0.0;     // 0 until a round has been observed
  std::vector<double> prev_update_norms;  // proxy inputs for Eq.(15) selection
  std::vector<long> reported_sizes;       // server-side dataset-size table
};

inline json round_state_to_json(const RoundState& s) {
  json j;
  j["round"] = s.round;
  j["models"] = s.models;
  j["cumulative_delay_s"] = s.cumulative_delay_s;
  j["cumulative_bits"] = s.cumulative_bits;
  j["bandit_mean"] = s.bandit.mean_delay;
  j["bandit_pulls"] = s.bandit.pulls;
  j["cotaf_prev_max_sqnorm"] = s.cotaf_prev_max_sqnorm;
  j["prev_update_norms"] = s.prev_update_norms;
  j["reported_sizes"] = s.reported_sizes;
  return j;
}

inline RoundState round_state_from_json(const json& j) {
  RoundState s;
  s.round = j.at("round").get<long>();
  s.models = j.at("models").get<std::vector<ParamVector>>();
  s.cumulative_delay_s = j.at("cumulative_delay_s").get<double>();
  s.cumulative_bits = j.at("cumulative_bits").get<long long>();
  s.bandit.mean_delay = j.at("bandit_mean").get<std::vector<double>>();
  s.bandit.pulls = j.at("bandit_pulls").get<std::vector<long>>();
  s.cotaf_prev_max_sqnorm = j.at("cotaf_prev_max_sqnorm").get<double>();
  s.prev_update_norms = j.at("prev_update_norms").get<std::vector<double>>();
  s.reported_sizes = j.at("reported_sizes").get<std::vector<long>>();
  return s;
}

// ----- orchestrator -----

class Orchestrator {
 public:
  explicit Orchestrator(ExperimentConfig cfg)
      : cfg_(std::move(cfg)), seeds_(cfg_.seeds.table()), spec_(cfg_.loss_spec()) {
    auto errs = validate_config(cfg_);
    if (!errs.empty()) {
      std::string msg = "invalid config:";
      for (const auto& e : errs) msg += "\n  - " + e;
      throw Error(msg);
    }
    data_ = build_data(cfg_, seeds_);
    std::vector<long> sizes;
    for (const auto& ds : data_.train) sizes.push_back(ds.size());
    true_weights_ = proportional_weights(sizes);

    // Fixed random attacker subset, chosen once per experiment.
    is_attacker_.assign(static_cast<std::size_t>(cfg_.users), 0);
    const int n_attackers =
        static_cast<int>(std::floor(cfg_.attack.fraction * cfg_.users));
    if (n_attackers > 0) {
      Rng atk_rng = make_stream(seeds_.stream_seed(Stream::Attacks));
      for (int u : atk_rng.sample_without_replacement(cfg_.users, n_attackers)) {
        is_attacker_[static_cast<std::size_t>(u)] = 1;
      }
    }

    gains_.assign(static_cast<std::size_t>(cfg_.users), 1.0);
    distances_.assign(static_cast<std::size_t>(cfg_.users), 1.0);
    if (!cfg_.distances.empty()) {
      distances_ = cfg_.distances;
      for (int u = 0; u < cfg_.users; ++u) {
        const double d = distances_[static_cast<std::size_t>(u)];
        gains_[static_cast<std::size_t>(u)] = 1.0 / (d * d);
      }
    }

    if (cfg_.encoder.kind == EncoderKind::Uveqfed) {
      lattice_ = make_lattice_spec(cfg_.encoder.lattice_dim, cfg_.encoder.zeta);
    }

    if (cfg_.schedule.lr_rule == "diminishing" || cfg_.output.emit_bounds) {
      Rng ref_rng = make_stream(seeds_.stream_seed(Stream::Reference));
      TrainingSchedule probe = schedule_template();
      bound_params_ = estimate_bound_params(data_.train, spec_, probe,
                                            initial_models().front(), ref_rng);
    }
    if (cfg_.combiner.kind == CombinerKind::Mixture) {
      fit_cluster_densities();
    }
  }

  const ExperimentConfig& config() const { return cfg_; }
  const ExperimentData& data() const { return data_; }
  const std::vector<double>& true_weights() const { return true_weights_; }
  const std::vector<char>& attackers() const { return is_attacker_; }
  const std::optional<BoundParams>& bound_params() const { return bound_params_; }
  const ClusterModelSet& cluster_models() const { return cluster_set_; }

  TrainingSchedule schedule() const {
    TrainingSchedule s = schedule_template();
    if (s.lr_rule == LrRule::Diminishing) {
      check(bound_params_.has_value(), "diminishing rule needs estimated mu");
      s.mu = bound_params_->strong_mu;
      s.gamma = bound_params_->gamma();
    }
    return s;
  }

  std::vector<ParamVector> initial_models() const {
    const int count = (cfg_.combiner.kind == CombinerKind::Mixture)
                          ? cfg_.combiner.clusters
                          : 1;
    const std::size_t d = static_cast<std::size_t>(spec_.param_dim());
    std::vector<ParamVector> models(static_cast<std::size_t>(count));
    for (auto& m : models) m = zeros(d);
    double scale = cfg_.init_scale;
    if (spec_.kind == LossKind::Mlp && scale == 0.0) {
      scale = 1.0 / std::sqrt(static_cast<double>(spec_.input_dim));
    }
    if (scale > 0.0) {
      Rng init_rng = make_stream(seeds_.stream_seed(Stream::Init));
      for (auto& m : models) {
        for (double& v : m) v = scale * init_rng.normal();
      }
    }
    return models;
  }

  RoundState initial_state() const {
    RoundState s;
    s.models = initial_models();
    s.bandit = BanditState(cfg_.users);
    s.prev_update_norms.assign(static_cast<std::size_t>(cfg_.users), 0.0);
    s.reported_sizes.clear();
    for (const auto& ds : data_.train) s.reported_sizes.push_back(ds.size());
    return s;
  }

  long total_rounds() const {
    return cfg_.schedule.total_steps / cfg_.schedule.local_steps;
  }

  // Executes one full round: select -> train -> attack -> encode ->
  // transmit -> decode -> combine -> measure.
  MetricsRecord run_round(RoundState& state) const {
    const long r = state.round;
    const TrainingSchedule sched = schedule();
    const std::vector<int> selected = select_users(state, r);

    // Local training, attack injection, and encoding, in ascending user id.
    std::vector<ModelUpdate> updates;
    std::vector<EncodedUpdate> encoded;
    double max_sqnorm = 0.0;
    for (int u : selected) {
      const ParamVector& ref = model_for_user(state, u);
      Rng batch_rng = make_stream(seeds_.stream_seed(Stream::Batches),
                                  static_cast<std::uint64_t>(r),
                                  static_cast<std::uint64_t>(u));
      const ParamVector local = local_train(ref, data_.train[static_cast<std::size_t>(u)],
                                            sched, spec_, batch_rng,
                                            r * sched.local_steps);
      ModelUpdate update = delta_encode(local, ref, u, r,
                                        data_.train[static_cast<std::size_t>(u)].size());
      if (is_attacker_[static_cast<std::size_t>(u)] &&
          cfg_.attack.kind != AttackKind::None) {
        Rng atk_rng = make_stream(seeds_.stream_seed(Stream::Attacks),
                                  static_cast<std::uint64_t>(r),
                                  static_cast<std::uint64_t>(u));
        AttackSpec atk;
        atk.kind = cfg_.attack.kind;
        atk.noise_std = cfg_.attack.noise_std;
        atk.scale = cfg_.attack.scale;
        atk.reported_size = cfg_.attack.reported_size;
        update = byzantine_perturb(update, atk, atk_rng);
      }
      const double sq = sqnorm(update.delta);
      max_sqnorm = std::max(max_sqnorm, sq);
      state.prev_update_norms[static_cast<std::size_t>(u)] = std::sqrt(sq);
      state.reported_sizes[static_cast<std::size_t>(u)] = update.n_samples;
      encoded.push_back(encode_update(update, r, u));
      updates.push_back(std::move(update));
    }

    double round_delay = 0.0;
    long long round_bits = 0;
    for (const auto& e : encoded) round_bits += e.bit_cost;

    if (cfg_.channel.mode == ChannelMode::Ota) {
      ota_round(state, selected, updates, round_delay);
    } else {
      orthogonal_round(state, selected, encoded, round_delay);
    }

    state.cumulative_delay_s += round_delay;
    state.cumulative_bits += round_bits;
    state.round = r + 1;
    state.cotaf_prev_max_sqnorm = max_sqnorm;

    MetricsRecord rec = measure(state, r + 1, round_delay, round_bits);
    rec.participants = selected;
    return rec;
  }

  MetricsRecord measure(const RoundState& state, long round, double delay_s,
                        long long bits) const {
    MetricsRecord rec;
    rec.round = round;
    rec.delay_s = delay_s;
    rec.bits = bits;
    if (cfg_.combiner.kind == CombinerKind::Mixture) {
      double f = 0.0;
      for (int u = 0; u < cfg_.users; ++u) {
        const int cl = data_.user_cluster[static_cast<std::size_t>(u)];
        f += true_weights_[static_cast<std::size_t>(u)] *
             local_loss(state.models[static_cast<std::size_t>(cl)],
                        data_.train[static_cast<std::size_t>(u)], spec_);
      }
      rec.train_loss = f;
      ClusterModelSet set = cluster_set_;
      set.models = state.models;
      rec.test_loss = mixture_test_loss(set, data_.test);
      rec.test_acc = std::nan("");
    } else {
      const ParamVector& theta = state.models.front();
      rec.train_loss = global_loss(theta, data_.train, true_weights_, spec_);
      if (!data_.test.empty()) {
        rec.test_loss = local_loss(theta, data_.test, spec_);
        rec.test_acc = spec_.is_classifier() ? accuracy(theta, data_.test, spec_)
                                             : std::nan("");
      } else {
        rec.test_loss = rec.train_loss;
        rec.test_acc = std::nan("");
      }
    }
    if (cfg_.output.emit_bounds && bound_params_) {
      BoundParams bp = *bound_params_;
      bp.total_steps = round * cfg_.schedule.local_steps;
      rec.bound_fedavg = fedavg_bound(bp);
      if (lattice_) {
        bp.lattice = BoundParams::LatticeTerm{
            lattice_->subvectors(spec_.param_dim()), lattice_->zeta,
            lattice_->lattice.cell_second_moment};
        rec.bound_uveqfed = uveqfed_bound(bp);
      }
      if (cfg_.channel.mode == ChannelMode::Ota) {
        bp.ota = BoundParams::OtaTerm{spec_.param_dim(), cfg_.channel.ota.noise_var,
                                      cfg_.channel.ota.power, cfg_.users};
        rec.bound_cotaf = cotaf_bound(bp);
      }
    }
    return rec;
  }

  // Per-(round,user) common-randomness key shared by encoder and server.
  std::uint64_t dither_key(long round, int user) const {
    return mix64(seeds_.stream_seed(Stream::Dither) ^
                 mix64((static_cast<std::uint64_t>(round) + 1) * 0x9E3779B97F4A7C15ULL) ^
                 mix64((static_cast<std::uint64_t>(user) + 1) * 0xC2B2AE3D27D4EB4FULL));
  }

  EncodedUpdate encode_update(const ModelUpdate& u, long round, int user) const {
    switch (cfg_.encoder.kind) {
      case EncoderKind::Identity:
        return encode_dense(u);
      case EncoderKind::TopK:
        return topk_sparsify(u, cfg_.encoder.top_k);
      case EncoderKind::Mask: {
        Rng rng = make_stream(dither_key(round, user));
        return mask_sparsify(u, cfg_.encoder.keep_prob, rng);
      }
      case EncoderKind::Qsgd: {
        Rng rng = make_stream(dither_key(round, user));
        double step = cfg_.encoder.qsgd_step;
        EncodedUpdate e;
        if (cfg_.encoder.qsgd_step_relative > 0.0) {
          const double n = norm(u.delta);
          if (n == 0.0) return encode_dense(u);
          step = cfg_.encoder.qsgd_step_relative * n;
          e = qsgd_quantize(u, step, rng,
                            cfg_.encoder.dither ? DitherMode::On : DitherMode::OffForTest);
          e.bit_cost += 32;  // the norm scalar that conveys the step
          return e;
        }
        return qsgd_quantize(u, step, rng,
                             cfg_.encoder.dither ? DitherMode::On : DitherMode::OffForTest);
      }
      case EncoderKind::Uveqfed:
        return uveqfed_encode(u, *lattice_, dither_key(round, user),
                              cfg_.encoder.dither ? DitherMode::On : DitherMode::OffForTest);
      case EncoderKind::DpGaussian: {
        Rng rng = make_stream(dither_key(round, user));
        DPSpec dp;
        dp.epsilon = cfg_.encoder.dp.epsilon;
        dp.delta = cfg_.encoder.dp.delta;
        dp.exposures = cfg_.encoder.dp.exposures;
        dp.clip = cfg_.encoder.dp.clip;
        dp.min_n = min_dataset_size();
        return dp_gaussianize(u, dp, rng, cfg_.encoder.dp.noise_free_test_mode);
      }
    }
    throw Error("encode_update: unreachable");
  }

  ModelUpdate decode_received(const EncodedUpdate& e) const {
    if (cfg_.encoder.kind == EncoderKind::Uveqfed) {
      return uveqfed_decode(e, *lattice_, dither_key(e.round, e.user_id));
    }
    return decode_update(e);
  }

  long min_dataset_size() const {
    long m = data_.train.front().size();
    for (const auto& ds : data_.train) m = std::min<long>(m, ds.size());
    return m;
  }

 private:
  TrainingSchedule schedule_template() const {
    TrainingSchedule s;
    s.local_steps = cfg_.schedule.local_steps;
    s.batch_size = cfg_.schedule.batch_size;
    s.total_steps = cfg_.schedule.total_steps;
    s.lr_rule = (cfg_.schedule.lr_rule == "diminishing") ? LrRule::Diminishing
                                                         : LrRule::Constant;
    s.lr0 = cfg_.schedule.lr0;
    return s;
  }

  std::vector<int> select_users(const RoundState& state, long round) const {
    const int n = cfg_.users;
    const int k = cfg_.effective_k();
    switch (cfg_.selection.policy) {
      case SelectionKind::Full: {
        std::vector<int> all(static_cast<std::size_t>(n));
        std::iota(all.begin(), all.end(), 0);
        return all;
      }
      case SelectionKind::Uniform: {
        Rng rng = make_stream(seeds_.stream_seed(Stream::Selection),
                              static_cast<std::uint64_t>(round));
        return select_uniform(n, k, rng);
      }
      case SelectionKind::RoundRobin:
        return select_round_robin(n, k, round);
      case SelectionKind::Probabilistic: {
        Rng rng = make_stream(seeds_.stream_seed(Stream::Selection),
                              static_cast<std::uint64_t>(round));
        return select_probabilistic(state.prev_update_norms, distances_,
                                    cfg_.selection.alpha, k, rng);
      }
      case SelectionKind::Bandit:
        return select_bandit(state.bandit, k, round + 1, cfg_.selection.explore_c);
    }
    throw Error("select_users: unreachable");
  }

  const ParamVector& model_for_user(const RoundState& state, int user) const {
    if (cfg_.combiner.kind == CombinerKind::Mixture) {
      return state.models[static_cast<std::size_t>(
          data_.user_cluster[static_cast<std::size_t>(user)])];
    }
    return state.models.front();
  }

  void orthogonal_round(RoundState& state, const std::vector<int>& selected,
                        const std::vector<EncodedUpdate>& encoded,
                        double& round_delay) const {
    const int k = cfg_.effective_k();
    const auto& och = cfg_.channel.orthogonal;
    std::vector<double> interference = och.block_interference;
    if (interference.empty()) interference.assign(static_cast<std::size_t>(k), 0.0);

    DelayMatrix dm;
    dm.d.resize(selected.size());
    for (std::size_t i = 0; i < selected.size(); ++i) {
      LinkSpec link;
      link.bandwidth_hz = och.bandwidth_hz;
      link.power = och.power;
      link.gain = gains_[static_cast<std::size_t>(selected[i])];
      link.noise_psd = och.noise_psd;
      link.block_interference = interference;
      dm.d[i].resize(static_cast<std::size_t>(k));
      for (int b = 0; b < k; ++b) {
        const double rate = link_rate(link, b);
        check(rate > 0.0, "orthogonal channel: a selected user has zero rate");
        dm.d[i][static_cast<std::size_t>(b)] =
            orthogonal_transmit(encoded[i], rate).delay_s;
      }
    }
    const BlockAssignment assignment = assign_blocks(dm);
    round_delay = assignment.bottleneck;

    std::vector<ModelUpdate> decoded;
    decoded.reserve(encoded.size());
    for (std::size_t i = 0; i < encoded.size(); ++i) {
      state.bandit.record(selected[i],
                          dm.d[i][static_cast<std::size_t>(
                              assignment.block_of_user[i])]);
      decoded.push_back(decode_received(encoded[i]));
    }
    combine(state, selected, decoded);
  }

  void ota_round(RoundState& state, const std::vector<int>& selected,
                 const std::vector<ModelUpdate>& updates, double& round_delay) const {
    const auto& ota = cfg_.channel.ota;
    double alpha;
    if (ota.precoder == "cotaf" && state.cotaf_prev_max_sqnorm > 0.0) {
      // Previous round's max squared norm, inflated by a safety factor.
      alpha = cotaf_alpha(ota.power, 1.1 * state.cotaf_prev_max_sqnorm);
    } else {
      alpha = cotaf_alpha(ota.power, ota.pilot_sqnorm);
    }
    OtaSpec spec;
    spec.noise_var = ota.noise_var;
    spec.power = ota.power;
    spec.inversion_threshold = ota.inversion_threshold;
    spec.pilot_sqnorm = ota.pilot_sqnorm;
    spec.slot_s = ota.slot_s;

    std::vector<ParamVector> inputs;
    inputs.reserve(updates.size());
    for (std::size_t i = 0; i < updates.size(); ++i) {
      const double h = gains_[static_cast<std::size_t>(selected[i])];
      PrecodedInput in = ota_precode(updates[i], alpha, h, spec);
      // The channel applies the fading gain the precoder inverted.
      if (!in.truncated && h != 1.0) {
        for (double& v : in.x) v *= h;
      }
      inputs.push_back(std::move(in.x));
    }
    Rng ch_rng = make_stream(seeds_.stream_seed(Stream::Channel),
                             static_cast<std::uint64_t>(state.round));
    const ParamVector y = ota_mac(inputs, ota.noise_var, ch_rng);
    state.models.front() = ota_decode(y, alpha, static_cast<int>(selected.size()),
                                      state.models.front());
    round_delay = ota.slot_s;
  }

  void combine(RoundState& state, const std::vector<int>& selected,
               const std::vector<ModelUpdate>& decoded) const {
    // Weights from the server's reported-size table over all N users.
    std::vector<double> p = proportional_weights(state.reported_sizes);

    if (cfg_.combiner.kind == CombinerKind::Mixture) {
      for (int cl = 0; cl < cfg_.combiner.clusters; ++cl) {
        UpdateBatch batch;
        batch.reference = state.models[static_cast<std::size_t>(cl)];
        long size_sum = 0;
        for (std::size_t i = 0; i < decoded.size(); ++i) {
          if (data_.user_cluster[static_cast<std::size_t>(selected[i])] != cl) continue;
          batch.rows.push_back(decoded[i].delta);
          size_sum += state.reported_sizes[static_cast<std::size_t>(selected[i])];
        }
        if (batch.rows.empty()) continue;  // cluster idle this round
        for (std::size_t i = 0; i < decoded.size(); ++i) {
          if (data_.user_cluster[static_cast<std::size_t>(selected[i])] != cl) continue;
          batch.weights.push_back(
              static_cast<double>(state.reported_sizes[static_cast<std::size_t>(selected[i])]) /
              static_cast<double>(size_sum));
        }
        state.models[static_cast<std::size_t>(cl)] =
            fedavg_combine(batch, static_cast<int>(batch.rows.size()));
      }
      return;
    }

    UpdateBatch batch;
    batch.reference = state.models.front();
    for (std::size_t i = 0; i < decoded.size(); ++i) {
      batch.rows.push_back(decoded[i].delta);
      batch.weights.push_back(p[static_cast<std::size_t>(selected[i])]);
    }
    switch (cfg_.combiner.kind) {
      case CombinerKind::FedAvg: {
        const AverageMode mode = (cfg_.combiner.average_mode == "delta-only")
                                     ? AverageMode::DeltaOnly
                                     : AverageMode::Eq19Literal;
        state.models.front() = fedavg_combine(batch, cfg_.users, mode);
        return;
      }
      case CombinerKind::Median:
      case CombinerKind::TrimmedMean:
      case CombinerKind::Krum: {
        const UpdateBatch rows =
            cfg_.combiner.weighted ? weighted_rows(batch, cfg_.users) : batch;
        ParamVector delta;
        if (cfg_.combiner.kind == CombinerKind::Median) {
          delta = median_combine(rows);
        } else if (cfg_.combiner.kind == CombinerKind::TrimmedMean) {
          delta = trimmed_mean_combine(rows, cfg_.combiner.beta);
        } else {
          delta = krum_combine(rows, cfg_.combiner.byzantine_count);
        }
        state.models.front() = add(batch.reference, delta);
        return;
      }
      case CombinerKind::Mixture:
        return;  // handled above
    }
  }

  void fit_cluster_densities() {
    cluster_set_.loss = spec_;
    cluster_set_.models.assign(static_cast<std::size_t>(cfg_.combiner.clusters),
                               zeros(static_cast<std::size_t>(spec_.param_dim())));
    cluster_set_.densities.resize(static_cast<std::size_t>(cfg_.combiner.clusters));
    Rng gmm_rng = make_stream(seeds_.stream_seed(Stream::Reference), 0xC1);
    for (int cl = 0; cl < cfg_.combiner.clusters; ++cl) {
      std::vector<std::vector<double>> inputs;
      for (int u = 0; u < cfg_.users; ++u) {
        if (data_.user_cluster[static_cast<std::size_t>(u)] != cl) continue;
        for (const auto& s : data_.train[static_cast<std::size_t>(u)].samples) {
          inputs.push_back(s.input);
        }
      }
      cluster_set_.densities[static_cast<std::size_t>(cl)] =
          fit_gmm(inputs, cfg_.combiner.gmm_components, cfg_.combiner.gmm_iterations,
                  gmm_rng);
    }
  }

 public:
  double mixture_test_loss(const ClusterModelSet& set, const LocalDataset& test) const {
    check(!set.loss.is_classifier(), "mixture test loss: regression only");
    double s = 0.0;
    for (const auto& sample : test.samples) {
      const double pred = mixture_predict(sample.input, set).front();
      const double r = pred - sample.label;
      s += r * r;
    }
    return s / test.size();
  }

 private:
  ExperimentConfig cfg_;
  SeedTable seeds_;
  LossSpec spec_;
  ExperimentData data_;
  std::vector<double> true_weights_;
  std::vector<char> is_attacker_;
  std::vector<double> gains_;
  std::vector<double> distances_;
  std::optional<LatticeSpec> lattice_;
  std::optional<BoundParams> bound_params_;
  ClusterModelSet cluster_set_;
};

// ----- experiment driver -----

struct ExperimentResult {
  RoundState final_state;
  std::vector<MetricsRecord> records;
  std::string metrics_path;
  std::string model_path;
  std::string manifest_path;
};

namespace rundetail {

inline void atomic_write(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    check(out.good(), "cannot open " + tmp);
    out << content;
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace rundetail

inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       const std::string& resume_checkpoint = "") {
  Orchestrator orch(cfg);
  RoundState state;
  std::vector<MetricsRecord> records;
  if (!resume_checkpoint.empty()) {
    std::ifstream in(resume_checkpoint);
    check(in.good(), "cannot open checkpoint " + resume_checkpoint);
    state = round_state_from_json(json::parse(in));
    check(state.round <= orch.total_rounds(), "checkpoint is beyond total_steps");
  } else {
    state = orch.initial_state();
  }

  while (state.round < orch.total_rounds()) {
    records.push_back(orch.run_round(state));
    if (cfg.output.checkpoint_round >= 0 && state.round == cfg.output.checkpoint_round) {
      rundetail::atomic_write(cfg.output.checkpoint_path,
                              round_state_to_json(state).dump(2));
    }
  }

  ExperimentResult result;
  std::filesystem::create_directories(cfg.output.dir);
  const auto join = [&](const std::string& name) {
    return (std::filesystem::path(cfg.output.dir) / name).string();
  };

  std::string csv = metrics_header(records.empty() ? false : records.front().bound_fedavg.has_value(),
                                   records.empty() ? false : records.front().bound_uveqfed.has_value(),
                                   records.empty() ? false : records.front().bound_cotaf.has_value());
  csv += '\n';
  for (const auto& r : records) {
    csv += metrics_row(r);
    csv += '\n';
  }
  result.metrics_path = join(cfg.output.metrics);
  rundetail::atomic_write(result.metrics_path, csv);

  {
    std::ostringstream os;
    write_model_file(os, state.models);
    result.model_path = join(cfg.output.model);
    rundetail::atomic_write(result.model_path, os.str());
  }

  json manifest;
  manifest["config"] = config_to_json(cfg);
  const SeedTable table = cfg.seeds.table();
  manifest["streams"] = {
      {"data", table.stream_seed(Stream::Data)},
      {"partition", table.stream_seed(Stream::Partition)},
      {"init", table.stream_seed(Stream::Init)},
      {"batches", table.stream_seed(Stream::Batches)},
      {"selection", table.stream_seed(Stream::Selection)},
      {"dither", table.stream_seed(Stream::Dither)},
      {"channel", table.stream_seed(Stream::Channel)},
      {"attacks", table.stream_seed(Stream::Attacks)},
      {"reference", table.stream_seed(Stream::Reference)},
  };
  result.manifest_path = join(cfg.output.manifest);
  rundetail::atomic_write(result.manifest_path, manifest.dump(2));

  result.final_state = std::move(state);
  result.records = std::move(records);
  return result;
}

}  // namespace fedsim
