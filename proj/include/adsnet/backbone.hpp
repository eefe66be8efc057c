#pragma once

// Single-network LTV predictor: encoding -> gated mixture of experts -> tower
// with a purchase-probability head and K-1 ordinal threshold heads.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "adsnet/diffcore.hpp"
#include "adsnet/encoding.hpp"

namespace adsnet {

// ---------------------------------------------------------------------------
// Segments and ordinal labels
// ---------------------------------------------------------------------------

/// Ordinal rank boundaries r_1 < ... < r_{K-1} and segment means.
/// `means` holds K+1 entries: means[0] == 0 followed by the mean LTV of each
/// of the K equal-frequency buckets (0, r_1], (r_1, r_2], ..., (r_{K-1}, inf).
struct SegmentScheme {
  std::vector<double> boundaries;
  std::vector<double> means;
  std::size_t requested_segments = 0;

  std::size_t segments() const { return boundaries.size() + 1; }
  std::size_t thresholds() const { return boundaries.size(); }
  bool reduced() const { return requested_segments > segments(); }

  void validate() const {
    if (boundaries.empty()) throw Error("segments: need at least one boundary");
    if (means.size() != boundaries.size() + 2) throw Error("segments: means/boundaries size mismatch");
    if (boundaries.front() < 0.0) throw Error("segments: first boundary must be >= 0");
    for (std::size_t k = 1; k < boundaries.size(); ++k) {
      if (!(boundaries[k] > boundaries[k - 1])) throw Error("segments: boundaries not strictly increasing");
    }
    if (means.front() != 0.0) throw Error("segments: means[0] must be 0");
    for (std::size_t k = 1; k < means.size(); ++k) {
      if (means[k] < means[k - 1]) throw Error("segments: means must be non-decreasing");
    }
  }
};

/// Equal-frequency segmentation of the positive labels using nearest-rank
/// quantiles. Duplicate boundaries are merged (and a boundary equal to the
/// maximum is dropped), which reduces the segment count; `reduced()` reports it.
inline SegmentScheme fit_segments(std::vector<double> positive_ltvs, std::size_t k) {
  if (positive_ltvs.empty()) throw Error("fit_segments: no positive labels");
  if (k < 2) throw Error("fit_segments: need K >= 2");
  for (double v : positive_ltvs) {
    if (!(v > 0.0) || !std::isfinite(v)) throw Error("fit_segments: labels must be finite and > 0");
  }
  std::sort(positive_ltvs.begin(), positive_ltvs.end());
  const std::size_t n = positive_ltvs.size();
  const double top = positive_ltvs.back();

  SegmentScheme s;
  s.requested_segments = k;
  for (std::size_t q = 1; q < k; ++q) {
    // nearest rank: ceil(q/K * n), 1-based
    std::size_t rank = (q * n + k - 1) / k;
    rank = std::clamp<std::size_t>(rank, 1, n);
    const double b = positive_ltvs[rank - 1];
    if (b >= top) continue;
    if (!s.boundaries.empty() && b <= s.boundaries.back()) continue;
    s.boundaries.push_back(b);
  }
  if (s.boundaries.empty()) {
    // all labels identical: one boundary just below the common value
    s.boundaries.push_back(top - 1e-9 * std::max(1.0, std::abs(top)));
  }

  const std::size_t segs = s.boundaries.size() + 1;
  std::vector<double> sum(segs, 0.0);
  std::vector<std::size_t> cnt(segs, 0);
  for (double v : positive_ltvs) {
    const auto it = std::lower_bound(s.boundaries.begin(), s.boundaries.end(), v);
    const std::size_t b = static_cast<std::size_t>(it - s.boundaries.begin());
    sum[b] += v;
    ++cnt[b];
  }
  s.means.assign(1, 0.0);
  for (std::size_t b = 0; b < segs; ++b) {
    if (cnt[b] > 0) {
      s.means.push_back(sum[b] / static_cast<double>(cnt[b]));
    } else {
      const double lo = b == 0 ? 0.0 : s.boundaries[b - 1];
      const double hi = b < s.boundaries.size() ? s.boundaries[b] : top;
      s.means.push_back(0.5 * (lo + hi));
    }
  }
  s.validate();
  return s;
}

/// s^k = 1{y > r_k}.
inline std::vector<double> ordinal_labels(double y, const SegmentScheme& scheme) {
  std::vector<double> s(scheme.boundaries.size());
  for (std::size_t k = 0; k < s.size(); ++k) s[k] = y > scheme.boundaries[k] ? 1.0 : 0.0;
  return s;
}

/// pLTV = p * sum_{k=1}^{K-1} p^k (ltv_k - ltv_{k-1}) with ltv_0 = 0.
inline double predict_ltv(double p, std::span<const double> pk, const SegmentScheme& scheme) {
  if (pk.size() + 1 > scheme.means.size()) throw Error("predict_ltv: more thresholds than segment means");
  double acc = 0.0;
  for (std::size_t k = 1; k <= pk.size(); ++k) acc += pk[k - 1] * (scheme.means[k] - scheme.means[k - 1]);
  return p * acc;
}

inline double loss_prob(double p, double y) { return bce(p, y > 0.0 ? 1.0 : 0.0); }

/// Ordinal amount loss; zero for non-purchasers.
inline double loss_amount(std::span<const double> pk, std::span<const double> sk, double y) {
  if (pk.size() != sk.size()) throw Error("loss_amount: prediction/label length mismatch");
  if (!(y > 0.0)) return 0.0;
  double acc = 0.0;
  for (std::size_t k = 0; k < pk.size(); ++k) acc += bce(pk[k], sk[k]);
  return acc;
}

inline double loss_pltv(double p, std::span<const double> pk, double y, const SegmentScheme& scheme) {
  const auto sk = ordinal_labels(y, scheme);
  return loss_prob(p, y) + loss_amount(pk, sk, y);
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

struct Dense {
  Parameter weight;
  Parameter bias;

  Dense() = default;
  Dense(std::size_t in, std::size_t out, const std::string& name, std::mt19937_64& rng)
      : weight(name + ".w", uniform_tensor(in, out, -std::sqrt(6.0 / static_cast<double>(in + out)),
                                           std::sqrt(6.0 / static_cast<double>(in + out)), rng)),
        bias(name + ".b", Tensor(1, out)) {}

  Var forward(Tape& tape, Var x) {
    return add_row(matmul(x, tape.parameter(weight)), tape.parameter(bias));
  }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

/// Stack of Dense layers, each followed by relu.
struct Mlp {
  std::vector<Dense> layers;

  Mlp() = default;
  Mlp(std::size_t in, const std::vector<std::size_t>& hidden, const std::string& name, std::mt19937_64& rng) {
    std::size_t prev = in;
    for (std::size_t i = 0; i < hidden.size(); ++i) {
      layers.emplace_back(prev, hidden[i], name + "." + std::to_string(i), rng);
      prev = hidden[i];
    }
  }

  Var forward(Tape& tape, Var x) {
    for (auto& l : layers) x = relu(l.forward(tape, x));
    return x;
  }

  void collect(std::vector<Parameter*>& out) {
    for (auto& l : layers) l.collect(out);
  }
};

struct ExpertOutput {
  Var hidden;  // h = sum_j g_j v^j
  Var gates;   // (B x K) softmax weights
};

struct ExpertLayer {
  std::vector<Mlp> experts;
  Dense gate;

  ExpertLayer() = default;
  ExpertLayer(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t count, std::mt19937_64& rng) {
    if (count < 1) throw Error("expert layer: need at least one expert");
    if (hidden.empty()) throw Error("expert layer: experts need at least one hidden layer");
    for (std::size_t j = 0; j < count; ++j) experts.emplace_back(in, hidden, "expert" + std::to_string(j), rng);
    gate = Dense(in, count, "gate", rng);
  }

  ExpertOutput forward(Tape& tape, Var e) {
    Var g = softmax_rows(gate.forward(tape, e));
    Var h = mul_col(experts[0].forward(tape, e), column(g, 0));
    for (std::size_t j = 1; j < experts.size(); ++j) {
      h = add(h, mul_col(experts[j].forward(tape, e), column(g, j)));
    }
    return {h, g};
  }

  void collect(std::vector<Parameter*>& out) {
    for (auto& e : experts) e.collect(out);
    gate.collect(out);
  }
};

/// Adapter layer at the bottom of the tower feeding three heads: purchase
/// probability, K-1 ordinal thresholds and the external-sample significance.
struct Tower {
  Dense adapter;
  Dense purchase;
  Dense ordinal;
  Dense significance;

  Tower() = default;
  Tower(std::size_t in, std::size_t hidden, std::size_t thresholds, std::mt19937_64& rng)
      : adapter(in, hidden, "tower.adapter", rng),
        purchase(hidden, 1, "tower.purchase", rng),
        ordinal(hidden, thresholds, "tower.ordinal", rng),
        significance(hidden, 1, "tower.significance", rng) {}

  void collect(std::vector<Parameter*>& out) {
    adapter.collect(out);
    purchase.collect(out);
    ordinal.collect(out);
    significance.collect(out);
  }
};

struct Architecture {
  FieldSchema schema;
  std::vector<std::size_t> expert_hidden{128, 64};
  std::size_t num_experts = 4;
  std::size_t tower_hidden = 32;
  std::size_t thresholds = 7;

  void validate() const {
    schema.validate();
    if (expert_hidden.empty()) throw Error("architecture: expert_hidden is empty");
    for (auto h : expert_hidden) {
      if (h == 0) throw Error("architecture: zero-width expert layer");
    }
    if (num_experts == 0 || tower_hidden == 0 || thresholds == 0) {
      throw Error("architecture: sizes must be positive");
    }
  }
};

struct NetworkOutputs {
  Var encoded;             // E, (B x encoded_width)
  Var hidden;              // h, expert mixture
  Var gates;               // g
  Var adapter;             // H_adapter
  Var purchase;            // p, (B x 1)
  Var ordinal;             // p^1..p^{K-1}, (B x K-1)
  Var significance_logit;  // MLP(e) of the external weight, (B x 1)
};

class Network {
 public:
  Network() = default;

  Network(Architecture arch, std::uint64_t seed) : arch_(std::move(arch)) {
    arch_.validate();
    std::mt19937_64 rng(seed);
    embedding_ = EmbeddingTable(arch_.schema, rng);
    experts_ = ExpertLayer(arch_.schema.encoded_width(), arch_.expert_hidden, arch_.num_experts, rng);
    tower_ = Tower(arch_.expert_hidden.back(), arch_.tower_hidden, arch_.thresholds, rng);
  }

  const Architecture& architecture() const { return arch_; }
  EmbeddingTable& embedding() { return embedding_; }
  ExpertLayer& experts() { return experts_; }
  Tower& tower() { return tower_; }

  NetworkOutputs forward(Tape& tape, std::span<const Example* const> batch) {
    NetworkOutputs o;
    o.encoded = encode(tape, batch, embedding_);
    const ExpertOutput ex = experts_.forward(tape, o.encoded);
    o.hidden = ex.hidden;
    o.gates = ex.gates;
    o.adapter = relu(tower_.adapter.forward(tape, o.hidden));
    o.purchase = sigmoid(tower_.purchase.forward(tape, o.adapter));
    o.ordinal = sigmoid(tower_.ordinal.forward(tape, o.adapter));
    o.significance_logit = tower_.significance.forward(tape, o.adapter);
    return o;
  }

  /// Every learnable tensor in a fixed order (embeddings first).
  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    embedding_.collect(out);
    experts_.collect(out);
    tower_.collect(out);
    return out;
  }

  /// Copies parameter values (not gradients) from a same-shaped network.
  void assign_values(Network& other) {
    auto dst = parameters();
    auto src = other.parameters();
    if (dst.size() != src.size()) throw Error("network: parameter count mismatch on copy");
    for (std::size_t i = 0; i < dst.size(); ++i) {
      if (dst[i]->value.shape() != src[i]->value.shape()) {
        throw Error("network: shape mismatch on copy of '" + dst[i]->name + "'");
      }
      dst[i]->value = src[i]->value;
    }
  }

  /// Bitwise equality of all parameter values.
  bool same_values(Network& other) {
    auto a = parameters();
    auto b = other.parameters();
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (!(a[i]->value == b[i]->value)) return false;
    }
    return true;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

 private:
  Architecture arch_;
  EmbeddingTable embedding_;
  ExpertLayer experts_;
  Tower tower_;
};

/// Per-example joint loss (purchase bce + masked ordinal bce), (B x 1).
inline Var per_example_loss(Tape& tape, const NetworkOutputs& out, std::span<const Example* const> batch,
                            const SegmentScheme& scheme) {
  const std::size_t b = batch.size();
  const std::size_t k = scheme.thresholds();
  if (out.ordinal.shape().cols != k) {
    throw Error("loss: network has " + std::to_string(out.ordinal.shape().cols) + " thresholds, scheme has " +
                std::to_string(k));
  }
  Tensor purchased(b, 1);
  Tensor ordinal_targets(b, k);
  Tensor mask(b, k);
  for (std::size_t i = 0; i < b; ++i) {
    const double y = batch[i]->ltv;
    const bool pos = y > 0.0;
    purchased.data()[i] = pos ? 1.0 : 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      ordinal_targets(i, j) = y > scheme.boundaries[j] ? 1.0 : 0.0;
      mask(i, j) = pos ? 1.0 : 0.0;
    }
  }
  Var prob = bce(out.purchase, tape.constant(std::move(purchased)));
  Var amount = sum_rows(mul(bce(out.ordinal, tape.constant(std::move(ordinal_targets))),
                            tape.constant(std::move(mask))));
  return add(prob, amount);
}

/// Mean joint loss over a batch.
inline Var batch_loss(Tape& tape, const NetworkOutputs& out, std::span<const Example* const> batch,
                      const SegmentScheme& scheme) {
  return mean(per_example_loss(tape, out, batch, scheme));
}

struct Prediction {
  double purchase = 0.0;
  double pltv = 0.0;
};

/// Inference over a dataset in fixed-size chunks.
inline std::vector<Prediction> predict(Network& net, const SegmentScheme& scheme,
                                       std::span<const Example> data, std::size_t chunk = 1024) {
  std::vector<Prediction> out;
  out.reserve(data.size());
  std::vector<const Example*> ptrs;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const std::size_t end = std::min(data.size(), start + chunk);
    ptrs.clear();
    for (std::size_t i = start; i < end; ++i) ptrs.push_back(&data[i]);
    Tape tape;
    const NetworkOutputs o = net.forward(tape, ptrs);
    const Tensor& p = o.purchase.value();
    const Tensor& pk = o.ordinal.value();
    for (std::size_t i = 0; i < ptrs.size(); ++i) {
      out.push_back({p.data()[i], predict_ltv(p.data()[i], pk.row_span(i), scheme)});
    }
  }
  return out;
}

}  // namespace adsnet
