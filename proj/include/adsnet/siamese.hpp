#pragma once

// Pseudo-siamese gain evaluation: a vanilla network trained on internal data
// only and a gain network that may also learn from external data. External
// loss enters the gain network's objective only when the gain network does
// better than the vanilla one on the current internal batch.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>

#include "adsnet/backbone.hpp"
#include "adsnet/diffcore.hpp"

namespace adsnet {

struct SiameseState {
  Network vanilla;
  Network gain;
};

struct GainReport {
  std::int64_t step = 0;
  double loss_van_t = 0.0;
  double loss_gain_t = 0.0;
  double loss_gain_s = 0.0;  // unweighted mean external loss under the gain network
  double w_gain = 0.0;       // loss_van_t - loss_gain_t
  bool accepted = false;     // w_gain > 0 (unless the gate is forced open)
  double mean_w_s = 0.0;
  double l_domain = 0.0;
};

enum class GatePolicy { evaluate, always_accept };

/// W_s = 1 / exp(sigmoid(z)), in (1/e, 1).
inline double external_weight(double significance_logit) {
  return 1.0 / std::exp(sigmoid(significance_logit));
}

inline Var external_weight(Var significance_logit) {
  return reciprocal(exp(sigmoid(significance_logit)));
}

/// Mean joint losses of both networks on the same internal batch, with the
/// current parameters. Value-only.
inline GainReport compute_gain(std::span<const Example* const> internal, SiameseState& state,
                               const SegmentScheme& scheme) {
  if (internal.empty()) throw Error("compute_gain: empty internal batch");
  Tape tape;
  GainReport r;
  r.loss_van_t = batch_loss(tape, state.vanilla.forward(tape, internal), internal, scheme).value().item();
  r.loss_gain_t = batch_loss(tape, state.gain.forward(tape, internal), internal, scheme).value().item();
  r.w_gain = r.loss_van_t - r.loss_gain_t;
  r.accepted = r.w_gain > 0.0;
  return r;
}

struct DomainLosses {
  Var embed;
  Var task_tower;
  Var total;
};

/// Distillation of the gain network toward the vanilla network's encoded
/// representation and adapter output. Targets are constants: no gradient
/// reaches the vanilla network.
inline DomainLosses domain_losses(Tape& tape, const Tensor& vanilla_encoded, const Tensor& vanilla_adapter,
                                  const NetworkOutputs& gain) {
  DomainLosses d;
  d.embed = mse(gain.encoded, tape.constant(vanilla_encoded));
  d.task_tower = mse(gain.adapter, tape.constant(vanilla_adapter));
  d.total = add(d.embed, d.task_tower);
  return d;
}

/// L_gain = [W_G > 0] * weighted external loss + L_gain,t.
inline Var gain_loss(Var internal_loss, std::optional<Var> weighted_external, bool accepted) {
  if (accepted && weighted_external) return add(*weighted_external, internal_loss);
  return internal_loss;
}

/// L_total = L_gain + L_van + beta * L_domain.
inline Var total_loss(Var gain, Var vanilla, Var domain, double beta) {
  if (!(beta >= 0.0)) throw Error("total_loss: beta must be >= 0");
  return add(add(gain, vanilla), scale(domain, beta));
}

struct StepOptions {
  double beta = 0.1;
  GatePolicy gate = GatePolicy::evaluate;
};

/// Overrides used when the step objective is re-evaluated at perturbed
/// parameters (gradient checks): the gate decision and the distillation
/// targets are held at their values from the unperturbed step.
struct FrozenStep {
  bool accepted = false;
  Tensor vanilla_encoded;
  Tensor vanilla_adapter;
};

struct StepGraph {
  Var total;
  Var loss_van_t;
  Var loss_gain_t;
  Var loss_gain;
  DomainLosses domain;
  std::optional<Var> external_term;
  GainReport report;
  FrozenStep frozen;
};

/// Records one joint training objective on `tape`.
inline StepGraph build_step(Tape& tape, SiameseState& state, std::span<const Example* const> internal,
                            std::span<const Example* const> external, const SegmentScheme& scheme,
                            const StepOptions& options, const FrozenStep* frozen = nullptr) {
  if (internal.empty()) throw Error("joint step: empty internal batch");
  StepGraph g;
  const NetworkOutputs van = state.vanilla.forward(tape, internal);
  g.loss_van_t = batch_loss(tape, van, internal, scheme);
  const NetworkOutputs gin = state.gain.forward(tape, internal);
  g.loss_gain_t = batch_loss(tape, gin, internal, scheme);

  GainReport& r = g.report;
  r.loss_van_t = g.loss_van_t.value().item();
  r.loss_gain_t = g.loss_gain_t.value().item();
  r.w_gain = r.loss_van_t - r.loss_gain_t;
  const bool open = options.gate == GatePolicy::always_accept || r.w_gain > 0.0;
  r.accepted = frozen ? frozen->accepted : open;

  g.frozen.accepted = r.accepted;
  g.frozen.vanilla_encoded = frozen ? frozen->vanilla_encoded : van.encoded.value();
  g.frozen.vanilla_adapter = frozen ? frozen->vanilla_adapter : van.adapter.value();
  g.domain = domain_losses(tape, g.frozen.vanilla_encoded, g.frozen.vanilla_adapter, gin);
  r.l_domain = g.domain.total.value().item();

  if (!external.empty()) {
    const NetworkOutputs gex = state.gain.forward(tape, external);
    const Var losses = per_example_loss(tape, gex, external, scheme);
    const Var weights = external_weight(gex.significance_logit);
    double wsum = 0.0, lsum = 0.0;
    for (double w : weights.value().data()) wsum += w;
    for (double l : losses.value().data()) lsum += l;
    const auto n = static_cast<double>(external.size());
    r.mean_w_s = wsum / n;
    r.loss_gain_s = lsum / n;
    // Only link the external term into the objective when it is used, so a
    // rejected batch contributes no gradient at all.
    if (r.accepted) g.external_term = mean(mul(weights, losses));
  }
  g.loss_gain = gain_loss(g.loss_gain_t, g.external_term, r.accepted);
  g.total = total_loss(g.loss_gain, g.loss_van_t, g.domain.total, options.beta);
  return g;
}

}  // namespace adsnet
