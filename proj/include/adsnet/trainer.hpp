#pragma once

// Two-stage training: warm up the vanilla network on internal data, copy it
// into the gain network, then train both jointly with a periodic copy of the
// gain network back into the vanilla one.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "adsnet/backbone.hpp"
#include "adsnet/optim.hpp"
#include "adsnet/siamese.hpp"

namespace adsnet {

enum class Variant {
  adsnet,
  backbone_internal_only,
  joint_mix_baseline,
  ablate_no_gain_eval,
  ablate_no_domain_adapt,
  ablate_no_iter_align,
};

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::adsnet: return "adsnet";
    case Variant::backbone_internal_only: return "backbone_internal_only";
    case Variant::joint_mix_baseline: return "joint_mix_baseline";
    case Variant::ablate_no_gain_eval: return "ablate_no_gain_eval";
    case Variant::ablate_no_domain_adapt: return "ablate_no_domain_adapt";
    case Variant::ablate_no_iter_align: return "ablate_no_iter_align";
  }
  return "unknown";
}

inline Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::adsnet, Variant::backbone_internal_only, Variant::joint_mix_baseline,
                    Variant::ablate_no_gain_eval, Variant::ablate_no_domain_adapt, Variant::ablate_no_iter_align}) {
    if (name == variant_name(v)) return v;
  }
  throw Error("unknown variant '" + name + "'");
}

inline bool is_siamese(Variant v) {
  return v != Variant::backbone_internal_only && v != Variant::joint_mix_baseline;
}

struct TrainConfig {
  std::int64_t warmup_steps = 1000;
  std::int64_t total_steps = 3000;
  std::int64_t sync_frequency = 500;
  std::size_t batch_size = 512;
  std::size_t external_microbatch = 64;
  double beta = 0.1;
  double lr_dense = 5e-3;
  double lr_sparse = 1e-2;
  double ftrl_beta = 1.0;
  double ftrl_l1 = 0.0;
  double ftrl_l2 = 0.0;
  std::uint64_t seed = 1;
  std::size_t segments = 8;
  std::size_t experts = 4;
  std::size_t embedding_dim = 32;
  std::vector<std::size_t> expert_hidden{128, 64};
  std::size_t tower_hidden = 32;

  void validate() const {
    if (warmup_steps < 0 || total_steps < 0) throw Error("config: step counts must be >= 0");
    if (sync_frequency < 1) throw Error("config: sync_frequency must be >= 1");
    if (batch_size < 1 || external_microbatch < 1) throw Error("config: batch sizes must be >= 1");
    if (!(beta >= 0.0)) throw Error("config: beta must be >= 0");
    if (!(lr_dense > 0.0) || !(lr_sparse > 0.0)) throw Error("config: learning rates must be positive");
    if (ftrl_l1 < 0.0 || ftrl_l2 < 0.0 || ftrl_beta < 0.0) throw Error("config: ftrl terms must be >= 0");
    if (segments < 2) throw Error("config: segments must be >= 2");
    if (experts < 1 || embedding_dim < 1 || tower_hidden < 1 || expert_hidden.empty()) {
      throw Error("config: network sizes must be >= 1");
    }
  }

  bool operator==(const TrainConfig&) const = default;
};

inline AdamConfig adam_config(const TrainConfig& c) { return AdamConfig{c.lr_dense, 0.9, 0.999, 1e-8}; }

inline FtrlConfig ftrl_config(const TrainConfig& c) {
  return FtrlConfig{c.lr_sparse, c.ftrl_beta, c.ftrl_l1, c.ftrl_l2};
}

/// Endless minibatches over a dataset: seeded permutation per epoch, reshuffled
/// on wraparound.
class BatchStream {
 public:
  BatchStream(std::span<const Example> data, std::uint64_t seed) : data_(data), rng_(seed) {
    order_.resize(data_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    shuffle();
  }

  std::vector<const Example*> next(std::size_t n) {
    std::vector<const Example*> out;
    if (data_.empty()) return out;
    out.reserve(n);
    while (out.size() < n) {
      if (cursor_ == order_.size()) shuffle();
      out.push_back(&data_[order_[cursor_++]]);
    }
    return out;
  }

  bool empty() const { return data_.empty(); }

 private:
  void shuffle() {
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
  }

  std::span<const Example> data_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// Independent seed for one consumer of the run seed (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline Architecture make_architecture(const FieldSchema& schema, const TrainConfig& cfg, std::size_t thresholds) {
  Architecture a;
  a.schema = schema;
  a.schema.embedding_dim = cfg.embedding_dim;
  a.expert_hidden = cfg.expert_hidden;
  a.num_experts = cfg.experts;
  a.tower_hidden = cfg.tower_hidden;
  a.thresholds = thresholds;
  return a;
}

inline SegmentScheme fit_segments_from(std::span<const Example> internal_train, std::size_t segments) {
  std::vector<double> positives;
  for (const auto& e : internal_train) {
    if (e.ltv > 0.0) positives.push_back(e.ltv);
  }
  return fit_segments(std::move(positives), segments);
}

/// One optimizer step of a single network on internal data. Returns the batch loss.
inline double train_step(Network& net, NetworkOptimizer& opt, std::span<const Example* const> batch,
                         const SegmentScheme& scheme, std::int64_t step_index) {
  Tape tape;
  Var loss = batch_loss(tape, net.forward(tape, batch), batch, scheme);
  const double v = loss.value().item();
  tape.backward(loss);
  opt.step(net, step_index);
  return v;
}

/// Warmup stage: `steps` internal-only updates of the vanilla network.
inline void warmup(Network& vanilla, NetworkOptimizer& opt, BatchStream& internal, const SegmentScheme& scheme,
                   std::int64_t steps, std::size_t batch_size) {
  if (internal.empty()) throw Error("warmup: empty internal dataset");
  for (std::int64_t s = 0; s < steps; ++s) {
    const auto batch = internal.next(batch_size);
    train_step(vanilla, opt, batch, scheme, s);
  }
}

/// One joint step: gain evaluated on the internal batch with pre-update
/// parameters, L_total backpropagated once, both networks stepped.
inline GainReport joint_step(SiameseState& state, NetworkOptimizer& vanilla_opt, NetworkOptimizer& gain_opt,
                             std::span<const Example* const> internal, std::span<const Example* const> external,
                             const SegmentScheme& scheme, const StepOptions& options, std::int64_t step) {
  Tape tape;
  StepGraph g = build_step(tape, state, internal, external, scheme, options);
  g.report.step = step;
  tape.backward(g.total);
  gain_opt.step(state.gain, step);
  vanilla_opt.step(state.vanilla, step);
  return g.report;
}

/// theta_v <- theta_g; vanilla optimizer slots reset.
inline void sync_vanilla_from_gain(SiameseState& state, NetworkOptimizer& vanilla_opt) {
  state.vanilla.assign_values(state.gain);
  vanilla_opt.reset(state.vanilla);
}

/// True when the joint step `t` (1-based) ends with theta_v <- theta_g.
inline bool is_sync_step(std::int64_t t, std::int64_t sync_frequency, Variant v) {
  if (v == Variant::ablate_no_iter_align || !is_siamese(v)) return false;
  return t % sync_frequency == 0;
}

struct TrainData {
  FieldSchema schema;
  std::span<const Example> internal;
  std::span<const Example> external;
};

struct TrainResult {
  SiameseState state;  // `gain` is the deployed network
  SegmentScheme scheme;
  std::vector<GainReport> log;
  std::int64_t syncs = 0;
};

/// Called after every joint step with the step report, the post-step state
/// and whether the step ended with a sync.
using StepObserver = std::function<void(const GainReport&, SiameseState&, bool)>;

inline TrainResult train(const TrainData& data, const TrainConfig& config, Variant variant,
                         const StepObserver& observer = {}) {
  config.validate();
  if (data.internal.empty()) throw Error("train: empty internal dataset");

  TrainResult result;
  result.scheme = fit_segments_from(data.internal, config.segments);
  const Architecture arch = make_architecture(data.schema, config, result.scheme.thresholds());
  for (const auto& e : data.internal) validate_example(e, arch.schema);
  if (variant != Variant::backbone_internal_only) {
    for (const auto& e : data.external) validate_example(e, arch.schema);
  }

  SiameseState& state = result.state;
  state.vanilla = Network(arch, derive_seed(config.seed, 1));
  NetworkOptimizer vanilla_opt(state.vanilla, adam_config(config), ftrl_config(config));
  BatchStream internal(data.internal, derive_seed(config.seed, 2));
  BatchStream external(data.external, derive_seed(config.seed, 3));

  warmup(state.vanilla, vanilla_opt, internal, result.scheme, config.warmup_steps, config.batch_size);

  const bool use_external = variant != Variant::backbone_internal_only && !external.empty();

  if (!is_siamese(variant)) {
    // Single network; `vanilla` and `gain` hold the same parameters at the end.
    for (std::int64_t t = 1; t <= config.total_steps; ++t) {
      const auto ib = internal.next(config.batch_size);
      GainReport r;
      r.step = t;
      if (use_external) {
        const auto xb = external.next(config.external_microbatch);
        std::vector<const Example*> all(ib);
        all.insert(all.end(), xb.begin(), xb.end());
        Tape tape;
        Var per = per_example_loss(tape, state.vanilla.forward(tape, all), all, result.scheme);
        double li = 0.0, lx = 0.0;
        for (std::size_t i = 0; i < all.size(); ++i) (i < ib.size() ? li : lx) += per.value().data()[i];
        r.loss_van_t = r.loss_gain_t = li / static_cast<double>(ib.size());
        r.loss_gain_s = lx / static_cast<double>(xb.size());
        r.accepted = true;
        r.mean_w_s = 1.0;
        tape.backward(mean(per));
        vanilla_opt.step(state.vanilla, config.warmup_steps + t);
      } else {
        r.loss_van_t = r.loss_gain_t = train_step(state.vanilla, vanilla_opt, ib, result.scheme, t);
      }
      result.log.push_back(r);
      if (observer) observer(r, state, false);
    }
    state.gain = state.vanilla;
    return result;
  }

  state.gain = state.vanilla;  // theta_g <- theta_v
  NetworkOptimizer gain_opt(state.gain, adam_config(config), ftrl_config(config));

  StepOptions options;
  options.beta = variant == Variant::ablate_no_domain_adapt ? 0.0 : config.beta;
  options.gate = variant == Variant::ablate_no_gain_eval ? GatePolicy::always_accept : GatePolicy::evaluate;

  for (std::int64_t t = 1; t <= config.total_steps; ++t) {
    const auto ib = internal.next(config.batch_size);
    const auto xb = external.next(config.external_microbatch);
    GainReport r = joint_step(state, vanilla_opt, gain_opt, ib, xb, result.scheme, options, t);
    const bool synced = is_sync_step(t, config.sync_frequency, variant);
    if (synced) {
      sync_vanilla_from_gain(state, vanilla_opt);
      ++result.syncs;
    }
    result.log.push_back(r);
    if (observer) observer(r, state, synced);
  }
  return result;
}

}  // namespace adsnet
