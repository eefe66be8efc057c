// Acceptance suite: one PASS/FAIL line per criterion. Exit status is nonzero
// when any criterion fails.
//
//   adsnet_acceptance [--plan configs/benchmark.conf] [criterion numbers...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "adsnet/checkpoint.hpp"
#include "adsnet/commands.hpp"

using namespace adsnet;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string fmt_opt(std::optional<double> v) { return format_metric(v); }

// ---------------------------------------------------------------------------
// Tiny fixtures for the gradient and property criteria
// ---------------------------------------------------------------------------

Architecture tiny_arch() {
  Architecture a;
  a.schema.embedding_dim = 3;
  a.schema.fields = {{"ad", 6}, {"domain", 3}, {"u0", 4}, {"u1", 3}};
  a.expert_hidden = {5, 4};
  a.num_experts = 2;
  a.tower_hidden = 4;
  a.thresholds = 3;
  return a;
}

SegmentScheme tiny_scheme() {
  SegmentScheme s;
  s.boundaries = {2, 8, 30};
  s.means = {0, 1, 5, 15, 60};
  s.requested_segments = 4;
  return s;
}

std::vector<Example> random_examples(std::size_t n, Domain d, std::mt19937_64& rng) {
  std::vector<Example> xs(n);
  const double ys[] = {0.0, 0.0, 1.5, 6.0, 20.0, 98.0};
  for (auto& x : xs) {
    x.domain = d;
    x.domain_id = d == Domain::internal ? static_cast<int>(rng() % 2) : 2;
    x.feature_ids = {static_cast<std::uint32_t>(rng() % 6), static_cast<std::uint32_t>(x.domain_id),
                     static_cast<std::uint32_t>(rng() % 4), static_cast<std::uint32_t>(rng() % 3)};
    x.ltv = ys[rng() % 6];
  }
  return xs;
}

std::vector<const Example*> ptrs(const std::vector<Example>& xs) {
  std::vector<const Example*> out;
  for (const auto& x : xs) out.push_back(&x);
  return out;
}

void perturb(Network& net, double scale, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto* p : net.parameters()) {
    for (auto& v : p->value.data()) v += u(rng);
  }
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness of L_total
// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SiameseState s{Network(tiny_arch(), seed), Network(tiny_arch(), seed)};
    perturb(s.vanilla, 0.05, rng);
    perturb(s.gain, 0.2, rng);
    const auto in = random_examples(4, Domain::internal, rng);
    const auto ex = random_examples(4, Domain::external, rng);
    const auto ib = ptrs(in), xb = ptrs(ex);
    const StepOptions opts{0.1, GatePolicy::always_accept};
    FrozenStep frozen;
    {
      Tape tape;
      frozen = build_step(tape, s, ib, xb, tiny_scheme(), opts).frozen;
    }
    std::vector<Parameter*> params = s.vanilla.parameters();
    for (auto* p : s.gain.parameters()) params.push_back(p);
    auto f = [&](Tape& t) { return build_step(t, s, ib, xb, tiny_scheme(), opts, &frozen).total; };
    worst = std::max(worst, finite_difference_check(f, params, 1e-6));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-5 && secs < 60.0,
          "max relative error " + fmt("%.3g", worst) + " (< 1e-5), " + fmt("%.1f", secs) + " s (< 60 s)"};
}

// ---------------------------------------------------------------------------
// 2. Metric oracles
// ---------------------------------------------------------------------------

double oracle_auc(const std::vector<EvalRecord>& rs) {
  double num = 0, den = 0;
  for (const auto& a : rs) {
    if (!(a.ltv > 0)) continue;
    for (const auto& b : rs) {
      if (b.ltv > 0) continue;
      den += 1;
      num += a.p_purchase > b.p_purchase ? 1.0 : a.p_purchase == b.p_purchase ? 0.5 : 0.0;
    }
  }
  return num / den;
}

// Expected Lorenz-curve Gini over all orderings consistent with the key, via
// each item's mean position inside its tie block.
double oracle_lorenz(const std::vector<double>& key, const std::vector<double>& actual) {
  const double n = static_cast<double>(key.size());
  const double total = std::accumulate(actual.begin(), actual.end(), 0.0);
  double s = 0;
  for (std::size_t i = 0; i < key.size(); ++i) {
    double above = 0, tied = 0;
    for (std::size_t j = 0; j < key.size(); ++j) {
      above += key[j] > key[i];
      tied += key[j] == key[i];
    }
    s += actual[i] * (n + 1 - (above + (tied + 1) / 2)) / total;
  }
  return (s - (n + 1) / 2) / n;
}

// Literal enumeration of every consistent ordering (small n only).
double enumerated_lorenz(const std::vector<double>& key, const std::vector<double>& actual) {
  std::vector<std::size_t> perm(key.size());
  std::iota(perm.begin(), perm.end(), 0);
  const double n = static_cast<double>(key.size());
  const double total = std::accumulate(actual.begin(), actual.end(), 0.0);
  double acc = 0;
  int count = 0;
  do {
    bool ok = true;
    for (std::size_t i = 1; i < perm.size() && ok; ++i) ok = key[perm[i - 1]] >= key[perm[i]];
    if (!ok) continue;
    double cum = 0, g = 0;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      cum += actual[perm[i]];
      g += cum / total - static_cast<double>(i + 1) / n;
    }
    acc += g / n;
    ++count;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return acc / count;
}

Outcome metric_oracles() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(77);
  double worst = 0.0;
  int checked = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng() % 199;
    std::vector<double> p(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = static_cast<double>(rng() % 50) / 50.0;
      y[i] = rng() % 3 == 0 ? static_cast<double>(1 + rng() % 400) / 4.0 : 0.0;
    }
    y[0] = 2.5;
    y[1] = 0.0;
    std::vector<EvalRecord> rs;
    for (std::size_t i = 0; i < n; ++i) rs.push_back({p[i], y[i], p[i], 0, 0});
    worst = std::max(worst, std::abs(*auc(rs) - oracle_auc(rs)));
    worst = std::max(worst, std::abs(*normalized_gini(rs) - oracle_lorenz(p, y) / oracle_lorenz(y, y)));
    ++checked;
  }
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 3 + rng() % 5;
    std::vector<double> p(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = static_cast<double>(rng() % 3);
      y[i] = static_cast<double>(rng() % 5);
    }
    y[0] = 4.0;
    y[1] = 1.0;
    std::vector<EvalRecord> rs;
    for (std::size_t i = 0; i < n; ++i) rs.push_back({p[i], y[i], p[i], 0, 0});
    worst = std::max(worst,
                     std::abs(*normalized_gini(rs) - enumerated_lorenz(p, y) / enumerated_lorenz(y, y)));
    ++checked;
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-12 && secs < 10.0, std::to_string(checked) + " instances, max |diff| " + fmt("%.3g", worst) +
                                             " (<= 1e-12), " + fmt("%.2f", secs) + " s (< 10 s)"};
}

// ---------------------------------------------------------------------------
// 3. Rejection zeroing
// ---------------------------------------------------------------------------

std::vector<Tensor> gain_gradients(SiameseState& s, const std::vector<Example>& in, const std::vector<Example>& ex) {
  s.vanilla.zero_grad();
  s.gain.zero_grad();
  Tape tape;
  const auto ib = ptrs(in), xb = ptrs(ex);
  StepGraph g = build_step(tape, s, ib, xb, tiny_scheme(), {0.1, GatePolicy::evaluate});
  tape.backward(g.total);
  std::vector<Tensor> out;
  for (auto* p : s.gain.parameters()) out.push_back(p->dense_grad());
  return out;
}

Outcome rejection_zeroing() {
  std::mt19937_64 rng(303);
  int states = 0, violations = 0;
  for (int trial = 0; states < 50 && trial < 10000; ++trial) {
    SiameseState s{Network(tiny_arch(), 500 + trial), Network(tiny_arch(), 500 + trial)};
    perturb(s.vanilla, 0.05, rng);
    s.gain = s.vanilla;
    if (trial % 4 != 0) perturb(s.gain, 0.3, rng);  // every fourth state has W_G == 0 exactly
    const auto in = random_examples(6, Domain::internal, rng);
    const auto ex = random_examples(5, Domain::external, rng);
    if (compute_gain(ptrs(in), s, tiny_scheme()).w_gain > 0.0) continue;
    ++states;
    const auto with = gain_gradients(s, in, ex);
    const auto without = gain_gradients(s, in, {});
    for (std::size_t i = 0; i < with.size(); ++i) {
      if (!(with[i] == without[i])) {
        ++violations;
        break;
      }
    }
  }
  return {states == 50 && violations == 0,
          std::to_string(states) + " rejected states, " + std::to_string(violations) + " with differing gradients"};
}

// ---------------------------------------------------------------------------
// 4-7. Benchmark experiments
// ---------------------------------------------------------------------------

struct Benchmark {
  ExperimentPlan plan;
  DatasetSplit split;
  FieldSchema schema;
  std::map<Variant, std::vector<RunOutcome>> runs;
  double transfer_seconds = 0.0;  // backbone, joint_mix and adsnet runs

  const std::vector<RunOutcome>& ensure(Variant v) {
    auto& list = runs[v];
    if (list.empty()) {
      const auto t0 = Clock::now();
      for (std::uint64_t seed : plan.seeds) {
        list.push_back(run_variant(split, schema, plan.train, v, seed, plan.slice_edges));
        std::fprintf(stderr, "  %s seed %llu: average gini %s\n", variant_name(v),
                     static_cast<unsigned long long>(seed), fmt_opt(list.back().report.average_gini()).c_str());
      }
      if (v == Variant::backbone_internal_only || v == Variant::joint_mix_baseline || v == Variant::adsnet) {
        transfer_seconds += seconds_since(t0);
      }
    }
    return list;
  }

  std::optional<double> median_gini(Variant v) {
    std::vector<std::optional<double>> g;
    for (const auto& r : ensure(v)) g.push_back(r.report.average_gini());
    return median(g);
  }

  std::optional<double> median_slice(Variant v, std::size_t bucket) {
    std::vector<std::optional<double>> g;
    for (const auto& r : ensure(v)) g.push_back(r.report.slices.at(bucket).gini);
    return median(g);
  }
};

Outcome negative_transfer(Benchmark& b) {
  const auto bb = b.median_gini(Variant::backbone_internal_only);
  const auto jm = b.median_gini(Variant::joint_mix_baseline);
  const auto ad = b.median_gini(Variant::adsnet);
  if (!bb || !jm || !ad) return {false, "missing Gini values"};
  const bool negative = *jm < *bb;
  const bool recovered = *ad >= *bb + 0.01;
  const bool fast = b.transfer_seconds < 15 * 60;
  return {negative && recovered && fast,
          "median gini backbone " + fmt("%.4f", *bb) + ", joint_mix " + fmt("%.4f", *jm) + " (< backbone), adsnet " +
              fmt("%.4f", *ad) + " (>= backbone + 0.01, delta " + fmt("%+.4f", *ad - *bb) + "), " +
              fmt("%.0f", b.transfer_seconds) + " s (< 900 s)"};
}

Outcome rejection_dynamics(Benchmark& b) {
  std::vector<std::optional<double>> first, last;
  for (const auto& r : b.ensure(Variant::adsnet)) {
    const auto [f, l] = rejection_ends(r.result.log, b.plan.rejection_window);
    first.push_back(f);
    last.push_back(l);
  }
  const auto f = median(first), l = median(last);
  if (!f || !l) return {false, "log shorter than the rejection window"};
  return {*l >= 0.4 && *l <= 0.8 && *l > *f,
          "median rejection rate first window " + fmt("%.3f", *f) + ", last window " + fmt("%.3f", *l) +
              " (in [0.4, 0.8] and > first)"};
}

Outcome ablation_ordering(Benchmark& b) {
  const auto ad = b.median_gini(Variant::adsnet);
  const auto da = b.median_gini(Variant::ablate_no_domain_adapt);
  const auto ge = b.median_gini(Variant::ablate_no_gain_eval);
  const auto ia = b.median_gini(Variant::ablate_no_iter_align);
  if (!ad || !da || !ge || !ia) return {false, "missing Gini values"};
  const bool ok = *ad >= *da && *da >= *ge && *ad >= *ia && *ad - *ge >= 0.005;
  return {ok, "median gini adsnet " + fmt("%.4f", *ad) + " >= no_domain_adapt " + fmt("%.4f", *da) +
                  " >= no_gain_eval " + fmt("%.4f", *ge) + "; adsnet >= no_iter_align " + fmt("%.4f", *ia) +
                  "; adsnet - no_gain_eval " + fmt("%+.4f", *ad - *ge) + " (>= 0.005)"};
}

Outcome long_tail(Benchmark& b) {
  const std::size_t last = b.plan.slice_edges.size();
  const auto ad0 = b.median_slice(Variant::adsnet, 0), bb0 = b.median_slice(Variant::backbone_internal_only, 0);
  const auto adn = b.median_slice(Variant::adsnet, last), bbn = b.median_slice(Variant::backbone_internal_only, last);
  if (!ad0 || !bb0 || !adn || !bbn) return {false, "missing slice Gini values"};
  const double tail = *ad0 - *bb0, head = *adn - *bbn;
  const std::string head_label = b.ensure(Variant::adsnet).front().report.slices.at(last).label();
  return {tail > head, "adsnet gain over backbone: [0;15] " + fmt("%+.4f", tail) + " > " + head_label + " " +
                           fmt("%+.4f", head)};
}

// ---------------------------------------------------------------------------
// 8. Algorithm-1 conformance and 9. determinism
// ---------------------------------------------------------------------------

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.n_internal = 3000;
  s.n_external = 6000;
  s.n_ads = 60;
  s.shift = 1.0;
  s.noise_fraction = 0.7;
  return s;
}

TrainConfig small_config() {
  TrainConfig c;
  c.warmup_steps = 10;
  c.batch_size = 16;
  c.external_microbatch = 8;
  c.segments = 4;
  c.experts = 2;
  c.embedding_dim = 4;
  c.expert_hidden = {8};
  c.tower_hidden = 4;
  return c;
}

Outcome algorithm_conformance() {
  const auto spec = small_spec();
  const DatasetSplit split = generate(spec);
  const auto internal = split.internal_train(), external = split.external_train();
  std::mt19937_64 rng(88);
  int failures = 0;
  std::string first_failure;
  for (int trial = 0; trial < 10; ++trial) {
    TrainConfig c = small_config();
    c.total_steps = 5 + static_cast<std::int64_t>(rng() % 56);
    c.sync_frequency = 1 + static_cast<std::int64_t>(rng() % 15);
    c.seed = 1000 + static_cast<std::uint64_t>(trial);
    bool equal_after_sync = true, zero_after_sync = true;
    std::int64_t observed_syncs = 0;
    bool previous_synced = false;
    auto observer = [&](const GainReport& r, SiameseState& s, bool synced) {
      if (previous_synced && r.w_gain != 0.0) zero_after_sync = false;
      if (synced) {
        ++observed_syncs;
        if (!s.vanilla.same_values(s.gain)) equal_after_sync = false;
        if (r.step % c.sync_frequency != 0) equal_after_sync = false;
      }
      previous_synced = synced;
    };
    const TrainResult res = train({schema_for(spec, c.embedding_dim), internal, external}, c, Variant::adsnet, observer);
    const std::int64_t expected = c.total_steps / c.sync_frequency;
    const bool ok = equal_after_sync && zero_after_sync && observed_syncs == expected && res.syncs == expected &&
                    static_cast<std::int64_t>(res.log.size()) == c.total_steps;
    if (!ok) {
      ++failures;
      if (first_failure.empty()) {
        first_failure = " (first: T=" + std::to_string(c.total_steps) + " freq=" + std::to_string(c.sync_frequency) +
                        " syncs=" + std::to_string(res.syncs) + ")";
      }
    }
  }
  return {failures == 0, "10 (T, sync_frequency) pairs, " + std::to_string(failures) + " failing" + first_failure};
}

std::string checkpoint_bytes(const FieldSchema& schema, const TrainConfig& c, RunOutcome& run) {
  Checkpoint ck{make_architecture(schema, c, run.result.scheme.thresholds()), run.result.scheme, run.result.state};
  std::ostringstream os;
  write_checkpoint(os, ck);
  return os.str();
}

Outcome determinism() {
  const auto spec = small_spec();
  const std::vector<std::size_t> edges{15, 60};
  TrainConfig c = small_config();
  c.total_steps = 60;
  c.sync_frequency = 20;
  std::vector<std::string> fingerprints;
  for (int rep = 0; rep < 2; ++rep) {
    const DatasetSplit split = generate(spec);
    const FieldSchema schema = schema_for(spec, c.embedding_dim);
    std::string fp;
    for (Variant v : {Variant::adsnet, Variant::joint_mix_baseline, Variant::ablate_no_iter_align}) {
      RunOutcome run = run_variant(split, schema, c, v, 5, edges);
      fp += format_gain_log(run.result.log) + run.report.format() + checkpoint_bytes(schema, c, run);
    }
    fingerprints.push_back(fp);
  }
  const bool same = fingerprints[0] == fingerprints[1];
  return {same, same ? "logs, reports and checkpoints byte-identical across 2 repeats of 3 variants"
                     : "outputs differ between repeats"};
}

}  // namespace

int main(int argc, char** argv) {
  std::string plan_path = ADSNET_BENCHMARK_PLAN;
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--plan") == 0 && i + 1 < argc) {
      plan_path = argv[++i];
    } else {
      selected.insert(std::atoi(argv[i]));
    }
  }
  auto wanted = [&](int k) { return selected.empty() || selected.count(k) > 0; };

  Benchmark bench;
  bool bench_ready = false;
  auto benchmark = [&]() -> Benchmark& {
    if (!bench_ready) {
      bench.plan = load_plan(plan_path);
      bench.split = generate(bench.plan.data);
      bench.schema = schema_for(bench.plan.data, bench.plan.train.embedding_dim);
      bench_ready = true;
    }
    return bench;
  };

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"metric oracles", metric_oracles},
      {"rejection zeroing", rejection_zeroing},
      {"negative transfer and recovery", [&] { return negative_transfer(benchmark()); }},
      {"rejection-rate dynamics", [&] { return rejection_dynamics(benchmark()); }},
      {"ablation ordering", [&] { return ablation_ordering(benchmark()); }},
      {"long-tail improvement", [&] { return long_tail(benchmark()); }},
      {"iterative alignment conformance", algorithm_conformance},
      {"determinism", determinism},
  };

  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k + 1);
    if (!wanted(id)) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[k].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
