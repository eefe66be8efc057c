#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "adsnet/datagen.hpp"
#include "adsnet/metrics.hpp"

using namespace adsnet;

namespace {

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.n_internal = 1000;
  s.n_external = 4000;
  s.n_ads = 100;
  return s;
}

std::vector<Example> all_of(const DatasetSplit& d) {
  std::vector<Example> out = d.train;
  out.insert(out.end(), d.validation.begin(), d.validation.end());
  out.insert(out.end(), d.test.begin(), d.test.end());
  return out;
}

// Naive-Bayes style probe: fit per-(field, value) purchase log-odds on even
// rows, score odd rows.
double probe_auc(const std::vector<Example>& rows) {
  std::map<std::pair<std::size_t, std::uint32_t>, std::pair<double, double>> counts;
  for (std::size_t i = 0; i < rows.size(); i += 2) {
    for (std::size_t f = 0; f < rows[i].feature_ids.size(); ++f) {
      auto& c = counts[{f, rows[i].feature_ids[f]}];
      (rows[i].ltv > 0 ? c.first : c.second) += 1;
    }
  }
  std::vector<EvalRecord> rs;
  for (std::size_t i = 1; i < rows.size(); i += 2) {
    double s = 0;
    for (std::size_t f = 0; f < rows[i].feature_ids.size(); ++f) {
      const auto it = counts.find({f, rows[i].feature_ids[f]});
      const double pos = it == counts.end() ? 0 : it->second.first;
      const double neg = it == counts.end() ? 0 : it->second.second;
      s += std::log((pos + 1) / (neg + 1));
    }
    rs.push_back({s, rows[i].ltv, s, 0, 0});
  }
  return *auc(rs);
}

double user_field_tv(const std::vector<Example>& a, const std::vector<Example>& b, std::size_t field) {
  std::map<std::uint32_t, double> pa, pb;
  for (const auto& e : a) pa[e.feature_ids[field]] += 1.0 / static_cast<double>(a.size());
  for (const auto& e : b) pb[e.feature_ids[field]] += 1.0 / static_cast<double>(b.size());
  double tv = 0;
  for (const auto& [k, v] : pa) tv += std::abs(v - (pb.count(k) ? pb[k] : 0.0));
  for (const auto& [k, v] : pb) {
    if (!pa.count(k)) tv += v;
  }
  return tv / 2;
}

double mean_gap_in_standard_errors(const std::vector<Example>& a, const std::vector<Example>& b, std::size_t field) {
  auto moments = [&](const std::vector<Example>& v) {
    double m = 0, q = 0;
    for (const auto& e : v) m += e.feature_ids[field];
    m /= static_cast<double>(v.size());
    for (const auto& e : v) q += (e.feature_ids[field] - m) * (e.feature_ids[field] - m);
    return std::pair{m, q / static_cast<double>(v.size() - 1) / static_cast<double>(v.size())};
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  return std::abs(ma - mb) / std::sqrt(va + vb);
}

std::pair<std::vector<Example>, std::vector<Example>> by_domain(const std::vector<Example>& rows) {
  std::vector<Example> in, ex;
  for (const auto& e : rows) (e.domain == Domain::internal ? in : ex).push_back(e);
  return {in, ex};
}

}  // namespace

TEST(Generate, ExactCounts) {
  const auto rows = all_of(generate(small_spec()));
  const auto [in, ex] = by_domain(rows);
  EXPECT_EQ(in.size(), 1000u);
  EXPECT_EQ(ex.size(), 4000u);
}

TEST(Generate, Deterministic) {
  EXPECT_EQ(all_of(generate(small_spec())), all_of(generate(small_spec())));
  auto other = small_spec();
  other.seed = 8;
  EXPECT_NE(all_of(generate(small_spec())), all_of(generate(other)));
}

TEST(Generate, RatesAndMeansNearTargets) {
  auto spec = small_spec();
  spec.n_internal = 20000;
  spec.n_external = 20000;
  const auto [in, ex] = by_domain(all_of(generate(spec)));
  auto stats = [](const std::vector<Example>& v) {
    double buyers = 0, sum = 0;
    for (const auto& e : v) {
      buyers += e.ltv > 0;
      sum += e.ltv;
    }
    return std::pair{buyers / static_cast<double>(v.size()), sum / static_cast<double>(v.size())};
  };
  const auto [ri, mi] = stats(in);
  const auto [re, me] = stats(ex);
  EXPECT_NEAR(ri, 0.15, 0.015);
  EXPECT_NEAR(re, 0.25, 0.025);
  EXPECT_NEAR(mi, 2.98, 0.298);
  EXPECT_NEAR(me, 8.02, 0.802);
}

TEST(Generate, SplitsByDayAndTestIsInternal) {
  const auto d = generate(small_spec());
  for (const auto& e : d.train) EXPECT_LT(e.day, kTrainDays);
  for (const auto& e : d.validation) {
    EXPECT_EQ(e.domain, Domain::internal);
    EXPECT_GE(e.day, kTrainDays);
    EXPECT_LT(e.day, kTrainDays + kValidationDays);
  }
  for (const auto& e : d.test) {
    EXPECT_EQ(e.domain, Domain::internal);
    EXPECT_GE(e.day, kTrainDays + kValidationDays);
  }
  EXPECT_FALSE(d.test.empty());
}

TEST(Generate, ValuesFitSchemaAndRounding) {
  const auto spec = small_spec();
  const auto schema = schema_for(spec, 4);
  for (const auto& e : all_of(generate(spec))) {
    EXPECT_NO_THROW(validate_example(e, schema));
    EXPECT_GE(e.ltv, 0.0);
    EXPECT_EQ(e.ltv, round6(e.ltv));
    EXPECT_EQ(static_cast<int>(e.feature_ids[0]), e.ad_id);
  }
}

TEST(Generate, ZeroShiftMatchesUserMarginals) {
  auto spec = small_spec();
  spec.n_internal = 20000;
  spec.n_external = 20000;
  const auto [in, ex] = by_domain(all_of(generate(spec)));
  spec.shift = 2.0;
  const auto [in2, ex2] = by_domain(all_of(generate(spec)));
  double widest = 0;
  for (std::size_t f = 2; f < spec.n_fields; ++f) {
    EXPECT_LT(user_field_tv(in, ex, f), 0.05) << "field " << f;
    EXPECT_LT(mean_gap_in_standard_errors(in, ex, f), 3.0) << "field " << f;
    widest = std::max(widest, user_field_tv(in2, ex2, f));
  }
  EXPECT_GT(widest, 0.1);
}

TEST(Generate, NoiseRemovesExternalSignal) {
  auto spec = small_spec();
  spec.n_internal = 100;
  spec.n_external = 40000;
  EXPECT_GT(probe_auc(by_domain(all_of(generate(spec))).second), 0.6);
  spec.noise_fraction = 1.0;
  EXPECT_NEAR(probe_auc(by_domain(all_of(generate(spec))).second), 0.5, 0.03);
}

TEST(Generate, NoiseKeepsLabelMultiset) {
  auto spec = small_spec();
  const auto [in0, ex0] = by_domain(all_of(generate(spec)));
  spec.noise_fraction = 0.5;
  const auto [in1, ex1] = by_domain(all_of(generate(spec)));
  std::vector<double> a, b;
  for (const auto& e : ex0) a.push_back(e.ltv);
  for (const auto& e : ex1) b.push_back(e.ltv);
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
}

TEST(Generate, InvalidSpecRejected) {
  auto spec = small_spec();
  spec.noise_fraction = 1.5;
  EXPECT_THROW(generate(spec), Error);
  spec = small_spec();
  spec.n_fields = 2;
  EXPECT_THROW(generate(spec), Error);
}

TEST(Csv, RoundTrip) {
  const auto spec = small_spec();
  const auto schema = schema_for(spec, 4);
  const auto rows = all_of(generate(spec));
  std::stringstream ss;
  write_csv(ss, rows, schema.num_fields());
  EXPECT_EQ(load_csv(ss, schema), rows);
}

TEST(Csv, EmptyBody) {
  const auto schema = schema_for(small_spec(), 4);
  std::stringstream ss(csv_header(schema.num_fields()) + "\n");
  EXPECT_TRUE(load_csv(ss, schema).empty());
}

TEST(Csv, NegativeLtvNamesLine) {
  const auto schema = schema_for(small_spec(), 4);
  std::string body = csv_header(schema.num_fields()) + "\ninternal,0,1,3,3,0,1,1,1,1,1,1,2.5\n";
  body += "internal,0,1,3,3,0,1,1,1,1,1,1,-1\n";
  std::stringstream ss(body);
  try {
    load_csv(ss, schema);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(Csv, MalformedRowsRejected) {
  const auto schema = schema_for(small_spec(), 4);
  const std::string h = csv_header(schema.num_fields()) + "\n";
  for (const std::string row : {"internal,0,1,3,3,0,1,1,1,1,1,1\n", "moon,0,1,3,3,0,1,1,1,1,1,1,1\n",
                                "internal,0,1,3,3,0,1,1,1,1,1,999,1\n", "internal,0,1,3,3,0,1,1,1,1,1,1,1.1234567\n"}) {
    std::stringstream ss(h + row);
    EXPECT_THROW(load_csv(ss, schema), Error) << row;
  }
  std::stringstream bad_header("nope\n");
  EXPECT_THROW(load_csv(bad_header, schema), Error);
}

TEST(LongTail, HeavyHeadLeavesManySparseAds) {
  const auto d = generate(small_spec());
  const auto in = d.internal_train();
  const auto p = long_tail_profile(in, {15, 60});
  ASSERT_EQ(p.ads_per_bucket.size(), 3u);
  std::size_t ads = 0, recs = 0;
  for (auto v : p.ads_per_bucket) ads += v;
  for (auto v : p.records_per_bucket) recs += v;
  EXPECT_EQ(ads, p.ad_counts.size());
  EXPECT_EQ(recs, in.size());
  EXPECT_GE(static_cast<double>(p.ads_per_bucket[0]), 0.3 * static_cast<double>(ads));
}
