#pragma once

// Optimizers: bias-corrected adaptive moments for dense parameters and
// per-coordinate FTRL-proximal for sparse embedding rows.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "adsnet/backbone.hpp"
#include "adsnet/diffcore.hpp"

namespace adsnet {

struct AdamConfig {
  double lr = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamSlot {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;

  explicit AdamSlot(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// One adaptive-moment step. Throws if any gradient entry is non-finite.
inline void dense_update(std::span<double> param, std::span<const double> grad, AdamSlot& slot,
                         const AdamConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw Error("dense_update: lr must be positive");
  if (grad.size() != param.size() || slot.m.size() != param.size()) {
    throw Error("dense_update: size mismatch");
  }
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) {
      throw Error("dense_update: non-finite gradient at index " + std::to_string(i) + " (slot step " +
                  std::to_string(slot.step) + ")");
    }
  }
  ++slot.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(slot.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(slot.step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * grad[i];
    slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double mhat = slot.m[i] / c1;
    const double vhat = slot.v[i] / c2;
    param[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

struct FtrlConfig {
  double alpha = 1e-2;  // learning rate
  double beta = 1.0;
  double l1 = 0.0;
  double l2 = 0.0;
};

/// Closed-form FTRL weight for one coordinate.
inline double ftrl_weight(double z, double n, const FtrlConfig& cfg) {
  if (std::abs(z) <= cfg.l1) return 0.0;
  const double sign = z < 0.0 ? -1.0 : 1.0;
  return -(z - sign * cfg.l1) / ((cfg.beta + std::sqrt(n)) / cfg.alpha + cfg.l2);
}

/// z accumulator that reproduces weight w through ftrl_weight at n = 0, so a
/// randomly initialized table keeps its values until gradients arrive.
inline double ftrl_initial_z(double w, const FtrlConfig& cfg) {
  if (w == 0.0) return 0.0;
  const double sign = w < 0.0 ? -1.0 : 1.0;
  return -w * (cfg.beta / cfg.alpha + cfg.l2) - sign * cfg.l1;
}

/// FTRL-proximal update of one embedding row. Coordinates with |z| <= l1
/// become exactly zero.
inline void sparse_update(std::span<double> row, std::span<const double> grad_row, std::span<double> z,
                          std::span<double> n, const FtrlConfig& cfg) {
  if (cfg.l1 < 0.0 || cfg.l2 < 0.0) throw Error("sparse_update: l1 and l2 must be >= 0");
  if (!(cfg.alpha > 0.0)) throw Error("sparse_update: alpha must be positive");
  if (grad_row.size() != row.size() || z.size() != row.size() || n.size() != row.size()) {
    throw Error("sparse_update: size mismatch");
  }
  for (std::size_t i = 0; i < row.size(); ++i) {
    const double g = grad_row[i];
    if (!std::isfinite(g)) throw Error("sparse_update: non-finite gradient at coordinate " + std::to_string(i));
    const double n_next = n[i] + g * g;
    const double sigma = (std::sqrt(n_next) - std::sqrt(n[i])) / cfg.alpha;
    z[i] += g - sigma * row[i];
    n[i] = n_next;
    row[i] = ftrl_weight(z[i], n[i], cfg);
  }
}

struct FtrlSlot {
  Tensor z;
  Tensor n;
};

inline FtrlSlot ftrl_slot_for(const Tensor& value, const FtrlConfig& cfg) {
  FtrlSlot s{Tensor(value.rows(), value.cols()), Tensor(value.rows(), value.cols())};
  for (std::size_t i = 0; i < value.size(); ++i) s.z.data()[i] = ftrl_initial_z(value.data()[i], cfg);
  return s;
}

/// Optimizer state for all parameters of one Network: dense parameters use
/// adaptive moments, sparse embedding tables use FTRL on touched rows only.
class NetworkOptimizer {
 public:
  NetworkOptimizer() = default;

  NetworkOptimizer(Network& net, AdamConfig dense, FtrlConfig sparse) : dense_(dense), sparse_(sparse) {
    reset(net);
  }

  /// Fresh slots matching the network's current values.
  void reset(Network& net) {
    adam_.clear();
    ftrl_.clear();
    for (auto* p : net.parameters()) {
      if (p->sparse) {
        ftrl_.push_back(ftrl_slot_for(p->value, sparse_));
        adam_.emplace_back(0);
      } else {
        ftrl_.push_back({});
        adam_.emplace_back(p->value.size());
      }
    }
  }

  /// Applies accumulated gradients, then zeroes them.
  void step(Network& net, std::int64_t step_index) {
    auto params = net.parameters();
    if (params.size() != adam_.size()) throw Error("optimizer: parameter count changed");
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter& p = *params[i];
      try {
        if (p.sparse) {
          FtrlSlot& s = ftrl_[i];
          for (const auto& [r, g] : p.row_grads) {
            sparse_update(p.value.row_span(r), g, s.z.row_span(r), s.n.row_span(r), sparse_);
          }
        } else {
          dense_update(p.value.data(), p.grad.data(), adam_[i], dense_);
        }
      } catch (const Error& e) {
        throw Error("optimizer step " + std::to_string(step_index) + ", parameter '" + p.name + "': " + e.what());
      }
      if (!p.value.all_finite()) {
        throw Error("optimizer step " + std::to_string(step_index) + ": parameter '" + p.name +
                    "' became non-finite");
      }
      p.zero_grad();
    }
  }

  const std::vector<AdamSlot>& adam_slots() const { return adam_; }
  const std::vector<FtrlSlot>& ftrl_slots() const { return ftrl_; }

 private:
  AdamConfig dense_;
  FtrlConfig sparse_;
  std::vector<AdamSlot> adam_;
  std::vector<FtrlSlot> ftrl_;
};

}  // namespace adsnet
