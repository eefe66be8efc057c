#pragma once

// Runs of one variant and seed, evaluation on the internal test split, and
// the cross-variant comparison table.

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "adsnet/datagen.hpp"
#include "adsnet/metrics.hpp"
#include "adsnet/trainer.hpp"

namespace adsnet {

inline std::vector<EvalRecord> evaluate(Network& net, const SegmentScheme& scheme, std::span<const Example> data) {
  const auto preds = predict(net, scheme, data);
  std::vector<EvalRecord> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    out.push_back({preds[i].pltv, data[i].ltv, preds[i].purchase, data[i].domain_id, data[i].ad_id});
  }
  return out;
}

/// Per-ad record counts over the internal training examples.
inline std::map<int, std::size_t> internal_ad_counts(std::span<const Example> train) {
  std::map<int, std::size_t> counts;
  for (const auto& e : train) {
    if (e.domain == Domain::internal) ++counts[e.ad_id];
  }
  return counts;
}

inline std::string format_gain_log(std::span<const GainReport> log) {
  std::ostringstream os;
  os << "step,loss_van_t,loss_gain_t,loss_gain_s,w_gain,accepted,mean_w_s,l_domain\n";
  char buf[256];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g,%.9g,%d,%.9g,%.9g\n", static_cast<long long>(r.step),
                  r.loss_van_t, r.loss_gain_t, r.loss_gain_s, r.w_gain, r.accepted ? 1 : 0, r.mean_w_s, r.l_domain);
    os << buf;
  }
  return os.str();
}

struct EvalReport {
  std::vector<DomainMetrics> domains;
  std::vector<SliceRow> slices;

  std::optional<double> average_gini() const { return find("average", &DomainMetrics::gini); }
  std::optional<double> average_auc() const { return find("average", &DomainMetrics::auc); }
  std::optional<double> pooled_gini() const { return find("pooled", &DomainMetrics::gini); }

  std::string format() const {
    return format_domain_report(domains) + "\n" + format_slice_report(slices);
  }

 private:
  std::optional<double> find(const char* scope, std::optional<double> DomainMetrics::*field) const {
    for (const auto& d : domains) {
      if (d.scope == scope) return d.*field;
    }
    return std::nullopt;
  }
};

inline EvalReport make_report(std::span<const EvalRecord> records, std::span<const std::size_t> edges,
                              const std::map<int, std::size_t>& ad_counts) {
  return {domain_report(records), sliced_report(records, edges, &ad_counts)};
}

struct RunOutcome {
  Variant variant = Variant::adsnet;
  std::uint64_t seed = 0;
  TrainResult result;
  EvalReport report;
};

inline RunOutcome run_variant(const DatasetSplit& data, const FieldSchema& schema, TrainConfig config,
                              Variant variant, std::uint64_t seed, std::span<const std::size_t> edges,
                              const StepObserver& observer = {}) {
  config.seed = seed;
  const auto internal = data.internal_train();
  const auto external = data.external_train();
  RunOutcome out;
  out.variant = variant;
  out.seed = seed;
  out.result = train({schema, internal, external}, config, variant, observer);
  const auto records = evaluate(out.result.state.gain, out.result.scheme, data.test);
  out.report = make_report(records, edges, internal_ad_counts(data.train));
  return out;
}

struct BenchRow {
  Variant variant = Variant::adsnet;
  std::uint64_t seed = 0;
  std::optional<double> auc;
  std::optional<double> gini;
  std::optional<double> pooled_gini;
  std::vector<std::optional<double>> slice_gini;
  std::optional<double> rejection_first;
  std::optional<double> rejection_last;
};

/// Rejection means over the first and last `window` joint steps.
inline std::pair<std::optional<double>, std::optional<double>> rejection_ends(std::span<const GainReport> log,
                                                                              std::size_t window) {
  if (log.size() < window || window == 0) return {std::nullopt, std::nullopt};
  return {rejection_mean(log, 0, window), rejection_mean(log, log.size() - window, log.size())};
}

inline BenchRow bench_row(const RunOutcome& run, std::size_t rejection_window) {
  BenchRow r;
  r.variant = run.variant;
  r.seed = run.seed;
  r.auc = run.report.average_auc();
  r.gini = run.report.average_gini();
  r.pooled_gini = run.report.pooled_gini();
  for (const auto& s : run.report.slices) r.slice_gini.push_back(s.gini);
  if (is_siamese(run.variant)) {
    std::tie(r.rejection_first, r.rejection_last) = rejection_ends(run.result.log, rejection_window);
  }
  return r;
}

/// Median of the present values; absent when none are.
inline std::optional<double> median(std::vector<std::optional<double>> values) {
  std::vector<double> v;
  for (const auto& x : values) {
    if (x) v.push_back(*x);
  }
  if (v.empty()) return std::nullopt;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

struct BenchSummary {
  Variant variant = Variant::adsnet;
  std::size_t runs = 0;
  std::optional<double> auc;
  std::optional<double> gini;
  std::optional<double> pooled_gini;
  std::vector<std::optional<double>> slice_gini;
  std::optional<double> rejection_first;
  std::optional<double> rejection_last;
};

inline std::vector<BenchSummary> summarize(std::span<const BenchRow> rows, std::span<const Variant> order) {
  std::vector<BenchSummary> out;
  for (Variant v : order) {
    BenchSummary s;
    s.variant = v;
    std::vector<std::optional<double>> auc, gini, pooled, rf, rl;
    std::vector<std::vector<std::optional<double>>> slices;
    for (const auto& r : rows) {
      if (r.variant != v) continue;
      ++s.runs;
      auc.push_back(r.auc);
      gini.push_back(r.gini);
      pooled.push_back(r.pooled_gini);
      rf.push_back(r.rejection_first);
      rl.push_back(r.rejection_last);
      slices.resize(std::max(slices.size(), r.slice_gini.size()));
      for (std::size_t b = 0; b < r.slice_gini.size(); ++b) slices[b].push_back(r.slice_gini[b]);
    }
    s.auc = median(auc);
    s.gini = median(gini);
    s.pooled_gini = median(pooled);
    s.rejection_first = median(rf);
    s.rejection_last = median(rl);
    for (auto& b : slices) s.slice_gini.push_back(median(b));
    out.push_back(s);
  }
  return out;
}

/// Median of per-seed differences a - b over seeds present in both variants.
inline std::optional<double> paired_median_delta(std::span<const BenchRow> rows, Variant a, Variant b,
                                                 std::optional<double> BenchRow::*field) {
  std::vector<std::optional<double>> deltas;
  for (const auto& ra : rows) {
    if (ra.variant != a || !(ra.*field)) continue;
    for (const auto& rb : rows) {
      if (rb.variant == b && rb.seed == ra.seed && rb.*field) deltas.push_back(*(ra.*field) - *(rb.*field));
    }
  }
  return median(deltas);
}

inline std::string format_bench(std::span<const BenchRow> rows, std::span<const BenchSummary> summary,
                                std::span<const SliceRow> slice_layout) {
  std::ostringstream os;
  os << "kind,variant,seed,runs,auc,gini,pooled_gini";
  for (const auto& s : slice_layout) os << ",gini" << s.label();
  os << ",rejection_first,rejection_last\n";
  auto tail = [&](const auto& x) {
    os << ',' << format_metric(x.auc) << ',' << format_metric(x.gini) << ',' << format_metric(x.pooled_gini);
    for (std::size_t b = 0; b < slice_layout.size(); ++b) {
      os << ',' << format_metric(b < x.slice_gini.size() ? x.slice_gini[b] : std::nullopt);
    }
    os << ',' << format_metric(x.rejection_first) << ',' << format_metric(x.rejection_last) << '\n';
  };
  for (const auto& r : rows) {
    os << "run," << variant_name(r.variant) << ',' << r.seed << ",1";
    tail(r);
  }
  for (const auto& s : summary) {
    os << "median," << variant_name(s.variant) << ",all," << s.runs;
    tail(s);
  }
  const auto delta = paired_median_delta(rows, Variant::joint_mix_baseline, Variant::backbone_internal_only,
                                         &BenchRow::gini);
  const auto median_of = [&](Variant v) -> std::optional<double> {
    for (const auto& s : summary) {
      if (s.variant == v) return s.gini;
    }
    return std::nullopt;
  };
  const auto jm = median_of(Variant::joint_mix_baseline);
  const auto bb = median_of(Variant::backbone_internal_only);
  os << "\nnegative_transfer_delta_gini,"
     << format_metric(jm && bb ? std::optional<double>(*jm - *bb) : std::nullopt) << '\n';
  os << "negative_transfer_delta_gini_paired," << format_metric(delta) << '\n';
  return os.str();
}

}  // namespace adsnet
