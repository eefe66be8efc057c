#pragma once

// Synthetic two-domain LTV data.
//
// Users carry a low-rank latent vector; categorical user fields are noisy
// quantizations of projections of it. Ads carry a latent vector and a bias and
// are drawn with power-law popularity. A purchase is Bernoulli in the
// user/ad affinity; amounts follow a lognormal snapped to standard tiers and
// are rescaled so each domain's average LTV hits its target. External users
// are drawn from a shifted latent distribution and a fixed fraction of
// external labels is shuffled among themselves, decorrelating them from
// the features.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "adsnet/encoding.hpp"

namespace adsnet {

struct SyntheticSpec {
  std::size_t n_internal = 20000;
  std::size_t n_external = 76000;
  double purchase_rate_internal = 0.15;
  double purchase_rate_external = 0.25;
  double mean_ltv_internal = 2.98;
  double mean_ltv_external = 8.02;
  double shift = 0.0;
  double noise_fraction = 0.0;
  std::size_t n_fields = 8;                 // ad + domain + user fields
  std::vector<std::size_t> vocab_sizes{32};  // per user field; one value is broadcast
  std::size_t n_ads = 1000;
  double ad_popularity_exponent = 1.2;
  double external_ad_exponent = 0.6;
  std::vector<double> domain_weights{9136, 15706, 34129};
  std::vector<double> domain_ltv_scale{0.34, 0.53, 4.82};
  std::size_t latent_rank = 4;
  double signal = 1.5;
  double ad_bias_scale = 1.0;
  double feature_noise = 0.3;
  std::uint64_t seed = 7;

  std::size_t internal_domains() const { return domain_weights.size(); }
  std::size_t user_fields() const { return n_fields - 2; }
  std::size_t user_vocab(std::size_t f) const { return vocab_sizes.size() == 1 ? vocab_sizes[0] : vocab_sizes[f]; }

  void validate() const {
    auto prob = [](double p, const char* name) {
      if (!(p >= 0.0 && p <= 1.0)) throw Error(std::string("spec: ") + name + " must be in [0,1]");
    };
    prob(purchase_rate_internal, "purchase_rate_internal");
    prob(purchase_rate_external, "purchase_rate_external");
    prob(noise_fraction, "noise_fraction");
    if (!(shift >= 0.0)) throw Error("spec: shift must be >= 0");
    if (!(mean_ltv_internal >= 0.0) || !(mean_ltv_external >= 0.0)) throw Error("spec: mean LTVs must be >= 0");
    if (n_fields < 3) throw Error("spec: n_fields must be >= 3 (ad, domain, one user field)");
    if (vocab_sizes.empty() || (vocab_sizes.size() != 1 && vocab_sizes.size() != user_fields())) {
      throw Error("spec: vocab_sizes needs one entry or one per user field");
    }
    for (auto v : vocab_sizes) {
      if (v < 1) throw Error("spec: vocab sizes must be >= 1");
    }
    if (n_ads < 1) throw Error("spec: n_ads must be >= 1");
    if (domain_weights.empty() || domain_weights.size() != domain_ltv_scale.size()) {
      throw Error("spec: domain_weights and domain_ltv_scale must be non-empty and equal length");
    }
    for (std::size_t d = 0; d < domain_weights.size(); ++d) {
      if (!(domain_weights[d] > 0.0) || !(domain_ltv_scale[d] >= 0.0)) {
        throw Error("spec: domain weights must be > 0 and LTV scales >= 0");
      }
    }
    if (latent_rank < 1) throw Error("spec: latent_rank must be >= 1");
  }

  bool operator==(const SyntheticSpec&) const = default;
};

/// Feature schema implied by a spec: `ad`, `domain`, then `u0..`.
inline FieldSchema schema_for(const SyntheticSpec& spec, std::size_t embedding_dim = 32) {
  spec.validate();
  FieldSchema s;
  s.embedding_dim = embedding_dim;
  s.fields.push_back({"ad", spec.n_ads});
  s.fields.push_back({"domain", spec.internal_domains() + 1});
  for (std::size_t f = 0; f < spec.user_fields(); ++f) s.fields.push_back({"u" + std::to_string(f), spec.user_vocab(f)});
  return s;
}

struct DatasetSplit {
  std::vector<Example> train;  // internal and external
  std::vector<Example> validation;  // internal only
  std::vector<Example> test;  // internal only

  std::vector<Example> internal_train() const {
    std::vector<Example> out;
    for (const auto& e : train) {
      if (e.domain == Domain::internal) out.push_back(e);
    }
    return out;
  }
  std::vector<Example> external_train() const {
    std::vector<Example> out;
    for (const auto& e : train) {
      if (e.domain == Domain::external) out.push_back(e);
    }
    return out;
  }
};

inline constexpr int kTrainDays = 70;
inline constexpr int kValidationDays = 10;
inline constexpr int kTotalDays = 90;
inline constexpr double kPurchaseTiers[] = {6.0, 30.0, 98.0, 198.0};

inline double round6(double v) { return std::round(v * 1e6) / 1e6; }

namespace detail {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Offset c such that mean(sigmoid(score + c)) == rate.
inline double calibrate_offset(const std::vector<double>& scores, double rate) {
  if (scores.empty() || rate <= 0.0) return -50.0;
  if (rate >= 1.0) return 50.0;
  double lo = -50.0, hi = 50.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    double m = 0.0;
    for (double s : scores) m += 1.0 / (1.0 + std::exp(-(s + mid)));
    m /= static_cast<double>(scores.size());
    (m < rate ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

inline double snap_to_tier(double amount) {
  double best = kPurchaseTiers[0];
  double best_d = std::abs(std::log(amount / best));
  for (double t : kPurchaseTiers) {
    const double d = std::abs(std::log(amount / t));
    if (d < best_d) best = t, best_d = d;
  }
  return best;
}

struct Draft {
  Example ex;
  double score = 0.0;
  int group = 0;  // internal domain id, or internal_domains() for external
};

}  // namespace detail

inline DatasetSplit generate(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t rank = spec.latent_rank;
  const double inv_sqrt_rank = 1.0 / std::sqrt(static_cast<double>(rank));

  std::vector<std::vector<double>> ad_vec(spec.n_ads, std::vector<double>(rank));
  std::vector<double> ad_bias(spec.n_ads);
  for (std::size_t k = 0; k < spec.n_ads; ++k) {
    for (auto& v : ad_vec[k]) v = normal(rng);
    ad_bias[k] = spec.ad_bias_scale * normal(rng);
  }
  const std::size_t uf = spec.user_fields();
  std::vector<std::vector<double>> proj(uf, std::vector<double>(rank));
  for (auto& p : proj) {
    double norm = 0.0;
    for (auto& v : p) {
      v = normal(rng);
      norm += v * v;
    }
    for (auto& v : p) v /= std::sqrt(norm);
  }
  std::vector<double> shift_dir(rank, inv_sqrt_rank);

  auto popularity = [&](double exponent) {
    std::vector<double> w(spec.n_ads);
    for (std::size_t k = 0; k < spec.n_ads; ++k) w[k] = std::pow(static_cast<double>(k + 1), -exponent);
    return std::discrete_distribution<std::size_t>(w.begin(), w.end());
  };
  auto pop_internal = popularity(spec.ad_popularity_exponent);
  auto pop_external = popularity(spec.external_ad_exponent);
  std::discrete_distribution<int> domain_pick(spec.domain_weights.begin(), spec.domain_weights.end());
  std::uniform_int_distribution<int> day_internal(0, kTotalDays - 1);
  std::uniform_int_distribution<int> day_external(0, kTrainDays - 1);
  const double feat_scale = std::sqrt(1.0 + spec.feature_noise * spec.feature_noise);
  const int external_group = static_cast<int>(spec.internal_domains());

  auto draft = [&](bool external) {
    detail::Draft d;
    std::vector<double> u(rank);
    for (std::size_t r = 0; r < rank; ++r) u[r] = normal(rng) + (external ? spec.shift * shift_dir[r] : 0.0);
    const std::size_t ad = external ? pop_external(rng) : pop_internal(rng);
    d.group = external ? external_group : domain_pick(rng);
    d.ex.domain = external ? Domain::external : Domain::internal;
    d.ex.domain_id = d.group;
    d.ex.day = external ? day_external(rng) : day_internal(rng);
    d.ex.ad_id = static_cast<int>(ad);
    d.ex.feature_ids.push_back(static_cast<std::uint32_t>(ad));
    d.ex.feature_ids.push_back(static_cast<std::uint32_t>(d.group));
    for (std::size_t f = 0; f < uf; ++f) {
      double x = 0.0;
      for (std::size_t r = 0; r < rank; ++r) x += proj[f][r] * u[r];
      x = (x + spec.feature_noise * normal(rng)) / feat_scale;
      const std::size_t vocab = spec.user_vocab(f);
      const auto id = std::min(vocab - 1, static_cast<std::size_t>(detail::normal_cdf(x) * static_cast<double>(vocab)));
      d.ex.feature_ids.push_back(static_cast<std::uint32_t>(id));
    }
    double dot = 0.0;
    for (std::size_t r = 0; r < rank; ++r) dot += u[r] * ad_vec[ad][r];
    d.score = spec.signal * dot * inv_sqrt_rank + ad_bias[ad];
    return d;
  };

  std::vector<detail::Draft> drafts;
  drafts.reserve(spec.n_internal + spec.n_external);
  for (std::size_t i = 0; i < spec.n_internal; ++i) drafts.push_back(draft(false));
  for (std::size_t i = 0; i < spec.n_external; ++i) drafts.push_back(draft(true));

  // purchases, calibrated per side
  std::vector<double> scores_int, scores_ext;
  for (const auto& d : drafts) (d.group == external_group ? scores_ext : scores_int).push_back(d.score);
  const double off_int = detail::calibrate_offset(scores_int, spec.purchase_rate_internal);
  const double off_ext = detail::calibrate_offset(scores_ext, spec.purchase_rate_external);
  for (auto& d : drafts) {
    const double off = d.group == external_group ? off_ext : off_int;
    if (unit(rng) < sigmoid(d.score + off)) {
      const double raw = std::exp(2.5 + 0.8 * d.score + 0.5 * normal(rng));
      d.ex.ltv = detail::snap_to_tier(raw) * (1.0 + 0.1 * (unit(rng) - 0.5));
    }
  }

  // rescale amounts so each group's mean LTV hits its target
  const std::size_t groups = spec.internal_domains() + 1;
  std::vector<double> target(groups), count(groups, 0.0), sum(groups, 0.0);
  for (const auto& d : drafts) {
    count[d.group] += 1.0;
    sum[d.group] += d.ex.ltv;
  }
  double weighted_scale = 0.0, internal_count = 0.0;
  for (std::size_t g = 0; g + 1 < groups; ++g) {
    weighted_scale += count[g] * spec.domain_ltv_scale[g];
    internal_count += count[g];
  }
  for (std::size_t g = 0; g + 1 < groups; ++g) {
    target[g] = weighted_scale > 0.0 ? spec.mean_ltv_internal * spec.domain_ltv_scale[g] * internal_count / weighted_scale
                                     : 0.0;
  }
  target[groups - 1] = spec.mean_ltv_external;
  for (auto& d : drafts) {
    const std::size_t g = static_cast<std::size_t>(d.group);
    if (sum[g] > 0.0) d.ex.ltv = round6(d.ex.ltv * target[g] * count[g] / sum[g]);
  }

  // shuffle labels among a random noise_fraction of the external examples
  std::vector<std::size_t> ext_idx;
  for (std::size_t i = spec.n_internal; i < drafts.size(); ++i) ext_idx.push_back(i);
  std::shuffle(ext_idx.begin(), ext_idx.end(), rng);
  const auto n_noise = static_cast<std::size_t>(std::llround(spec.noise_fraction * static_cast<double>(ext_idx.size())));
  std::vector<double> noisy;
  for (std::size_t i = 0; i < n_noise; ++i) noisy.push_back(drafts[ext_idx[i]].ex.ltv);
  std::shuffle(noisy.begin(), noisy.end(), rng);
  for (std::size_t i = 0; i < n_noise; ++i) drafts[ext_idx[i]].ex.ltv = noisy[i];

  DatasetSplit split;
  for (auto& d : drafts) {
    if (d.ex.day < kTrainDays) {
      split.train.push_back(std::move(d.ex));
    } else if (d.ex.day < kTrainDays + kValidationDays) {
      split.validation.push_back(std::move(d.ex));
    } else {
      split.test.push_back(std::move(d.ex));
    }
  }
  return split;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline std::string csv_header(std::size_t n_fields) {
  std::string h = "domain,domain_id,day,ad_id";
  for (std::size_t f = 0; f < n_fields; ++f) h += ",f_" + std::to_string(f);
  return h + ",ltv";
}

inline void write_csv(std::ostream& os, std::span<const Example> rows, std::size_t n_fields) {
  os << csv_header(n_fields) << '\n';
  char buf[64];
  for (const auto& e : rows) {
    os << domain_name(e.domain) << ',' << e.domain_id << ',' << e.day << ',' << e.ad_id;
    for (auto id : e.feature_ids) os << ',' << id;
    std::snprintf(buf, sizeof buf, "%.6f", e.ltv);
    os << ',' << buf << '\n';
  }
}

inline void write_csv(const std::string& path, std::span<const Example> rows, std::size_t n_fields) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  write_csv(os, rows, n_fields);
  if (!os) throw Error("write failed for '" + path + "'");
}

namespace detail {

inline long long parse_int(const std::string& s, std::size_t line, std::size_t col) {
  if (s.empty() || !std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw Error("csv line " + std::to_string(line) + ", column " + std::to_string(col) +
                ": expected a non-negative integer, got '" + s + "'");
  }
  try {
    return std::stoll(s);
  } catch (const std::exception&) {
    throw Error("csv line " + std::to_string(line) + ", column " + std::to_string(col) + ": integer out of range");
  }
}

inline double parse_ltv(const std::string& s, std::size_t line, std::size_t col) {
  const auto dot = s.find('.');
  const bool digits_ok = !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return (c >= '0' && c <= '9') || c == '.';
  });
  const bool shape_ok = digits_ok && std::count(s.begin(), s.end(), '.') <= 1 && s.front() != '.' &&
                        (dot == std::string::npos || (dot + 1 < s.size() && s.size() - dot - 1 <= 6));
  if (!shape_ok) {
    throw Error("csv line " + std::to_string(line) + ", column " + std::to_string(col) +
                ": ltv must be a non-negative decimal with at most 6 fractional digits, got '" + s + "'");
  }
  return std::strtod(s.c_str(), nullptr);
}

}  // namespace detail

inline std::vector<Example> load_csv(std::istream& is, const FieldSchema& schema) {
  std::string line;
  if (!std::getline(is, line)) throw Error("csv: missing header");
  if (line != csv_header(schema.num_fields())) {
    throw Error("csv line 1: header does not match schema (expected '" + csv_header(schema.num_fields()) + "')");
  }
  std::vector<Example> out;
  const std::size_t expected = schema.num_fields() + 5;
  std::size_t lineno = 1;
  std::vector<std::string> cells;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    cells.clear();
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      cells.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (cells.size() != expected) {
      throw Error("csv line " + std::to_string(lineno) + ": expected " + std::to_string(expected) + " columns, got " +
                  std::to_string(cells.size()));
    }
    Example e;
    if (cells[0] == "internal") {
      e.domain = Domain::internal;
    } else if (cells[0] == "external") {
      e.domain = Domain::external;
    } else {
      throw Error("csv line " + std::to_string(lineno) + ", column 1: unknown domain '" + cells[0] + "'");
    }
    e.domain_id = static_cast<int>(detail::parse_int(cells[1], lineno, 2));
    e.day = static_cast<int>(detail::parse_int(cells[2], lineno, 3));
    e.ad_id = static_cast<int>(detail::parse_int(cells[3], lineno, 4));
    for (std::size_t f = 0; f < schema.num_fields(); ++f) {
      const long long id = detail::parse_int(cells[4 + f], lineno, 5 + f);
      if (static_cast<unsigned long long>(id) >= schema.fields[f].vocab) {
        throw Error("csv line " + std::to_string(lineno) + ": id " + std::to_string(id) + " out of range for field '" +
                    schema.fields[f].name + "' (vocab " + std::to_string(schema.fields[f].vocab) + ")");
      }
      e.feature_ids.push_back(static_cast<std::uint32_t>(id));
    }
    e.ltv = detail::parse_ltv(cells.back(), lineno, expected);
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<Example> load_csv(const std::string& path, const FieldSchema& schema) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open '" + path + "'");
  return load_csv(is, schema);
}

// ---------------------------------------------------------------------------
// Long-tail profile
// ---------------------------------------------------------------------------

struct LongTailProfile {
  std::map<int, std::size_t> ad_counts;
  std::vector<std::size_t> edges;
  std::vector<std::size_t> ads_per_bucket;     // edges.size() + 1 buckets
  std::vector<std::size_t> records_per_bucket;
};

/// Records per ad and their histogram over [0,e_0], (e_0,e_1], ..., (e_last,inf).
inline LongTailProfile long_tail_profile(std::span<const Example> data, std::vector<std::size_t> edges) {
  LongTailProfile p;
  p.edges = std::move(edges);
  for (const auto& e : data) ++p.ad_counts[e.ad_id];
  p.ads_per_bucket.assign(p.edges.size() + 1, 0);
  p.records_per_bucket.assign(p.edges.size() + 1, 0);
  for (const auto& [ad, c] : p.ad_counts) {
    const auto b = static_cast<std::size_t>(std::lower_bound(p.edges.begin(), p.edges.end(), c) - p.edges.begin());
    ++p.ads_per_bucket[b];
    p.records_per_bucket[b] += c;
  }
  return p;
}

}  // namespace adsnet
