#pragma once

// Evaluation metrics: AUC on the purchase head, normalized Gini on predicted
// LTV, rejection-rate series over gain reports and long-tail slicing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "adsnet/siamese.hpp"

namespace adsnet {

struct EvalRecord {
  double pltv = 0.0;
  double ltv = 0.0;
  double p_purchase = 0.0;
  int domain_id = 0;
  int ad_id = 0;
};

/// Mann-Whitney AUC of p_purchase for purchasers (ltv > 0) against
/// non-purchasers; ties count one half. Absent when either class is empty.
inline std::optional<double> auc(std::span<const EvalRecord> records) {
  std::vector<std::size_t> idx(records.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return records[a].p_purchase < records[b].p_purchase; });
  double pos = 0.0, neg = 0.0, pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && records[idx[j]].p_purchase == records[idx[i]].p_purchase) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (records[idx[k]].ltv > 0.0) {
        pos += 1.0;
        pos_rank_sum += avg_rank;
      } else {
        neg += 1.0;
      }
    }
    i = j;
  }
  if (pos == 0.0 || neg == 0.0) return std::nullopt;
  return (pos_rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

namespace detail {

// Lorenz-curve Gini of `actual` visited in descending order of `key`. Within a
// block of tied keys each actual value is replaced by the block mean, which
// equals the average over every ordering of the block.
inline double lorenz_gini(std::span<const double> key, std::span<const double> actual) {
  const std::size_t n = key.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return key[a] > key[b]; });
  double total = 0.0;
  for (double v : actual) total += v;
  double cum = 0.0, acc = 0.0;
  const double dn = static_cast<double>(n);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    double block = 0.0;
    while (j < n && key[idx[j]] == key[idx[i]]) block += actual[idx[j++]];
    const double per = block / static_cast<double>(j - i);
    for (std::size_t k = i; k < j; ++k) {
      cum += per;
      ++pos;
      acc += cum / total - static_cast<double>(pos) / dn;
    }
    i = j;
  }
  return acc / dn;
}

}  // namespace detail

/// Gini of actual LTV ordered by predicted LTV, normalized by the Gini of the
/// ideal ordering. Absent when all labels are zero or the ideal Gini is zero.
inline std::optional<double> normalized_gini(std::span<const EvalRecord> records) {
  std::vector<double> pred, actual;
  pred.reserve(records.size());
  actual.reserve(records.size());
  double total = 0.0;
  for (const auto& r : records) {
    pred.push_back(r.pltv);
    actual.push_back(r.ltv);
    total += r.ltv;
  }
  if (!(total > 0.0)) return std::nullopt;
  const double ideal = detail::lorenz_gini(actual, actual);
  if (!(ideal > 0.0)) return std::nullopt;
  return detail::lorenz_gini(pred, actual) / ideal;
}

/// Fraction of rejected steps over each full trailing window; series length
/// is max(0, n - window + 1).
inline std::vector<double> rejection_rate(std::span<const GainReport> reports, std::size_t window) {
  if (window < 1) throw Error("rejection_rate: window must be >= 1");
  std::vector<double> out;
  if (reports.size() < window) return out;
  std::size_t rejected = 0;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    if (!reports[i].accepted) ++rejected;
    if (i >= window && !reports[i - window].accepted) --rejected;
    if (i + 1 >= window) out.push_back(static_cast<double>(rejected) / static_cast<double>(window));
  }
  return out;
}

/// Mean rejection over reports[begin, end).
inline double rejection_mean(std::span<const GainReport> reports, std::size_t begin, std::size_t end) {
  end = std::min(end, reports.size());
  if (begin >= end) throw Error("rejection_mean: empty range");
  std::size_t rejected = 0;
  for (std::size_t i = begin; i < end; ++i) rejected += reports[i].accepted ? 0 : 1;
  return static_cast<double>(rejected) / static_cast<double>(end - begin);
}

struct SliceRow {
  std::size_t lower = 0;  // exclusive, except the first bucket which starts at 0 inclusive
  std::optional<std::size_t> upper;  // inclusive; nullopt = unbounded
  std::size_t ads = 0;
  std::size_t records = 0;
  std::optional<double> gini;
  std::optional<double> auc;

  std::string label() const {
    const std::string lo = lower == 0 ? "[0" : "(" + std::to_string(lower);
    return lo + ";" + (upper ? std::to_string(*upper) + "]" : std::string("inf)"));
  }
};

/// Groups records by their ad's sample count into the intervals
/// [0, e_0], (e_0, e_1], ..., (e_last, inf) and reports metrics per interval.
/// Counts default to the number of records per ad in `records`.
inline std::vector<SliceRow> sliced_report(std::span<const EvalRecord> records, std::span<const std::size_t> edges,
                                           const std::map<int, std::size_t>* ad_counts = nullptr) {
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (edges[i] <= edges[i - 1]) throw Error("sliced_report: bucket edges must be increasing");
  }
  std::map<int, std::size_t> own;
  if (!ad_counts) {
    for (const auto& r : records) ++own[r.ad_id];
    ad_counts = &own;
  }
  auto bucket_of = [&](std::size_t c) {
    return static_cast<std::size_t>(std::lower_bound(edges.begin(), edges.end(), c) - edges.begin());
  };
  std::vector<SliceRow> rows(edges.size() + 1);
  for (std::size_t b = 0; b < rows.size(); ++b) {
    rows[b].lower = b == 0 ? 0 : edges[b - 1];
    if (b < edges.size()) rows[b].upper = edges[b];
  }
  std::vector<std::vector<EvalRecord>> members(rows.size());
  std::vector<std::map<int, bool>> ads(rows.size());
  for (const auto& r : records) {
    const auto it = ad_counts->find(r.ad_id);
    const std::size_t c = it == ad_counts->end() ? 0 : it->second;
    const std::size_t b = bucket_of(c);
    members[b].push_back(r);
    ads[b][r.ad_id] = true;
  }
  for (std::size_t b = 0; b < rows.size(); ++b) {
    rows[b].records = members[b].size();
    rows[b].ads = ads[b].size();
    if (!members[b].empty()) {
      rows[b].gini = normalized_gini(members[b]);
      rows[b].auc = auc(members[b]);
    }
  }
  return rows;
}

inline std::string format_metric(std::optional<double> v) {
  if (!v) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

struct DomainMetrics {
  std::string scope;  // "domain", "average" or "pooled"
  std::string name;
  std::size_t records = 0;
  std::optional<double> auc;
  std::optional<double> gini;
};

/// Per-domain AUC/Gini rows, their unweighted average and the pooled metrics.
inline std::vector<DomainMetrics> domain_report(std::span<const EvalRecord> records) {
  std::map<int, std::vector<EvalRecord>> by_domain;
  for (const auto& r : records) by_domain[r.domain_id].push_back(r);
  std::vector<DomainMetrics> rows;
  double auc_sum = 0.0, gini_sum = 0.0;
  std::size_t auc_n = 0, gini_n = 0;
  for (const auto& [d, rs] : by_domain) {
    DomainMetrics m{"domain", std::to_string(d), rs.size(), auc(rs), normalized_gini(rs)};
    if (m.auc) auc_sum += *m.auc, ++auc_n;
    if (m.gini) gini_sum += *m.gini, ++gini_n;
    rows.push_back(m);
  }
  DomainMetrics avg{"average", "all", records.size(), std::nullopt, std::nullopt};
  if (auc_n) avg.auc = auc_sum / static_cast<double>(auc_n);
  if (gini_n) avg.gini = gini_sum / static_cast<double>(gini_n);
  rows.push_back(avg);
  rows.push_back({"pooled", "all", records.size(), auc(records), normalized_gini(records)});
  return rows;
}

/// Comma-separated report: header `scope,name,records,auc,gini`.
inline std::string format_domain_report(std::span<const DomainMetrics> rows) {
  std::ostringstream os;
  os << "scope,name,records,auc,gini\n";
  for (const auto& r : rows) {
    os << r.scope << ',' << r.name << ',' << r.records << ',' << format_metric(r.auc) << ','
       << format_metric(r.gini) << '\n';
  }
  return os.str();
}

/// Comma-separated slice table: header `bucket,ads,records,auc,gini`.
inline std::string format_slice_report(std::span<const SliceRow> rows) {
  std::ostringstream os;
  os << "bucket,ads,records,auc,gini\n";
  for (const auto& r : rows) {
    os << r.label() << ',' << r.ads << ',' << r.records << ',' << format_metric(r.auc) << ','
       << format_metric(r.gini) << '\n';
  }
  return os.str();
}

}  // namespace adsnet
