#pragma once

// The four command bodies behind the `adsnet` executable. Each takes resolved
// options and a logging sink, writes its outputs under `out_dir` and returns
// the main text output.

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "adsnet/checkpoint.hpp"
#include "adsnet/config.hpp"
#include "adsnet/datagen.hpp"
#include "adsnet/experiment.hpp"

namespace adsnet {

struct CommandOptions {
  std::string config;
  std::string data_dir;
  std::string out_dir;
  std::string checkpoint;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
};

enum class LogLevel { error, info, debug };

using LogSink = std::function<void(LogLevel, const std::string&)>;

inline const char* kSchemaFile = "schema.conf";
inline const char* kTrainFile = "train.csv";
inline const char* kValidationFile = "val.csv";
inline const char* kTestFile = "test.csv";

namespace detail {

inline void log_to(const LogSink& sink, LogLevel level, const std::string& msg) {
  if (sink) sink(level, msg);
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path.string() + "' for writing");
  os << text;
  if (!os) throw Error("write failed for '" + path.string() + "'");
}

inline std::filesystem::path prepare_out_dir(const std::string& dir) {
  if (dir.empty()) throw Error("--out-dir is required");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create '" + dir + "': " + ec.message());
  return dir;
}

inline std::string format_fields(const FieldSchema& s) {
  std::string out;
  for (std::size_t f = 0; f < s.fields.size(); ++f) {
    out += (f ? "," : "") + s.fields[f].name + ":" + std::to_string(s.fields[f].vocab);
  }
  return out;
}

inline ExperimentPlan plan_from(const CommandOptions& o) {
  ExperimentPlan plan = o.config.empty() ? ExperimentPlan{} : load_plan(o.config);
  if (!o.data_dir.empty()) plan.data_dir = o.data_dir;
  return plan;
}

}  // namespace detail

/// Reads `schema.conf` (a single `fields = name:vocab,...` line).
inline FieldSchema load_schema(const std::filesystem::path& dir, std::size_t embedding_dim) {
  const auto path = dir / kSchemaFile;
  std::ifstream is(path);
  if (!is) throw Error("cannot open '" + path.string() + "'");
  FieldSchema s;
  s.embedding_dim = embedding_dim;
  std::string line;
  bool found = false;
  while (std::getline(is, line)) {
    line = cfg::trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || cfg::trim(line.substr(0, eq)) != "fields") {
      throw Error(path.string() + ": expected 'fields = name:vocab,...'");
    }
    for (const auto& item : cfg::split_list(line.substr(eq + 1))) {
      const auto colon = item.rfind(':');
      if (colon == std::string::npos) throw Error(path.string() + ": bad field entry '" + item + "'");
      s.fields.push_back({item.substr(0, colon), cfg::parse_number<std::size_t>(item.substr(colon + 1))});
    }
    found = true;
  }
  if (!found) throw Error(path.string() + ": no fields line");
  s.validate();
  return s;
}

inline DatasetSplit load_split(const std::filesystem::path& dir, const FieldSchema& schema) {
  DatasetSplit d;
  d.train = load_csv((dir / kTrainFile).string(), schema);
  d.validation = load_csv((dir / kValidationFile).string(), schema);
  d.test = load_csv((dir / kTestFile).string(), schema);
  return d;
}

/// The plan's dataset: loaded from `data_dir` when set, generated otherwise.
inline std::pair<DatasetSplit, FieldSchema> resolve_data(const ExperimentPlan& plan, const LogSink& log = {}) {
  if (!plan.data_dir.empty()) {
    detail::log_to(log, LogLevel::info, "loading dataset from " + plan.data_dir);
    FieldSchema schema = load_schema(plan.data_dir, plan.train.embedding_dim);
    return {load_split(plan.data_dir, schema), schema};
  }
  detail::log_to(log, LogLevel::info, "generating dataset (seed " + std::to_string(plan.data.seed) + ")");
  return {generate(plan.data), schema_for(plan.data, plan.train.embedding_dim)};
}

inline std::string cmd_datagen(const CommandOptions& o, const LogSink& log = {}) {
  ExperimentPlan plan = detail::plan_from(o);
  if (o.seed) plan.data.seed = *o.seed;
  const auto dir = detail::prepare_out_dir(o.out_dir);
  const auto split = generate(plan.data);
  const auto schema = schema_for(plan.data, plan.train.embedding_dim);
  detail::write_text(dir / kSchemaFile, "fields = " + detail::format_fields(schema) + "\n");
  write_csv((dir / kTrainFile).string(), split.train, schema.num_fields());
  write_csv((dir / kValidationFile).string(), split.validation, schema.num_fields());
  write_csv((dir / kTestFile).string(), split.test, schema.num_fields());
  std::ostringstream os;
  os << "train," << split.train.size() << "\nval," << split.validation.size() << "\ntest," << split.test.size()
     << '\n';
  detail::log_to(log, LogLevel::info, "wrote dataset to " + dir.string());
  return os.str();
}

inline StepObserver progress_observer(const LogSink& log, std::int64_t every) {
  if (!log) return {};
  return [log, every](const GainReport& r, SiameseState&, bool synced) {
    if (synced) log(LogLevel::debug, "step " + std::to_string(r.step) + ": sync");
    if (every > 0 && r.step % every == 0) {
      log(LogLevel::debug, "step " + std::to_string(r.step) + ": loss_van_t " + cfg::fmt(r.loss_van_t) + " w_gain " +
                               cfg::fmt(r.w_gain) + (r.accepted ? " accepted" : " rejected"));
    }
  };
}

/// Writes metrics_log.csv, checkpoint.bin, report.csv and the resolved plan.
inline std::string cmd_train(const CommandOptions& o, const LogSink& log = {}) {
  ExperimentPlan plan = detail::plan_from(o);
  const Variant variant = o.variant ? parse_variant(*o.variant) : plan.variants.front();
  const std::uint64_t seed = o.seed ? *o.seed : plan.seeds.front();
  const auto dir = detail::prepare_out_dir(o.out_dir);
  const auto [split, schema] = resolve_data(plan, log);
  detail::log_to(log, LogLevel::info, std::string("training ") + variant_name(variant) + " seed " + std::to_string(seed));
  RunOutcome run = run_variant(split, schema, plan.train, variant, seed, plan.slice_edges, progress_observer(log, 100));
  detail::log_to(log, LogLevel::info, "syncs " + std::to_string(run.result.syncs) + ", average gini " +
                                          format_metric(run.report.average_gini()));
  plan.variants = {variant};
  plan.seeds = {seed};
  detail::write_text(dir / "plan.conf", serialize_plan(plan));
  detail::write_text(dir / "metrics_log.csv", format_gain_log(run.result.log));
  Checkpoint ck{make_architecture(schema, plan.train, run.result.scheme.thresholds()), run.result.scheme,
                std::move(run.result.state)};
  save_checkpoint((dir / "checkpoint.bin").string(), ck);
  const std::string report = run.report.format();
  detail::write_text(dir / "report.csv", report);
  return report;
}

/// Scores the checkpoint's deployed network on the internal test split.
inline std::string cmd_eval(const CommandOptions& o, const LogSink& log = {}) {
  if (o.checkpoint.empty()) throw Error("a checkpoint path is required");
  Checkpoint ck = load_checkpoint(o.checkpoint);
  const ExperimentPlan plan = detail::plan_from(o);
  DatasetSplit split;
  if (!plan.data_dir.empty()) {
    detail::log_to(log, LogLevel::info, "loading dataset from " + plan.data_dir);
    split = load_split(plan.data_dir, ck.architecture.schema);
  } else {
    const auto generated = schema_for(plan.data, ck.architecture.schema.embedding_dim);
    if (detail::format_fields(generated) != detail::format_fields(ck.architecture.schema)) {
      throw Error("checkpoint schema does not match the configured dataset");
    }
    split = generate(plan.data);
  }
  const auto records = evaluate(ck.state.gain, ck.scheme, split.test);
  const std::string report = make_report(records, plan.slice_edges, internal_ad_counts(split.train)).format();
  if (!o.out_dir.empty()) detail::write_text(detail::prepare_out_dir(o.out_dir) / "report.csv", report);
  return report;
}

/// Every plan variant for every seed; writes bench.csv and per-run logs.
inline std::string cmd_bench(const CommandOptions& o, const LogSink& log = {}) {
  ExperimentPlan plan = detail::plan_from(o);
  if (o.variant) plan.variants = {parse_variant(*o.variant)};
  if (o.seed) plan.seeds = {*o.seed};
  const auto dir = detail::prepare_out_dir(o.out_dir);
  const auto [split, schema] = resolve_data(plan, log);
  std::filesystem::create_directories(dir / "logs");
  std::vector<BenchRow> rows;
  std::vector<SliceRow> layout;
  for (std::uint64_t seed : plan.seeds) {
    for (Variant v : plan.variants) {
      detail::log_to(log, LogLevel::info, std::string("bench ") + variant_name(v) + " seed " + std::to_string(seed));
      const RunOutcome run = run_variant(split, schema, plan.train, v, seed, plan.slice_edges);
      layout = run.report.slices;
      rows.push_back(bench_row(run, plan.rejection_window));
      detail::write_text(dir / "logs" / (std::string(variant_name(v)) + "_" + std::to_string(seed) + ".csv"),
                         format_gain_log(run.result.log));
    }
  }
  const auto summary = summarize(rows, plan.variants);
  const std::string table = format_bench(rows, summary, layout);
  detail::write_text(dir / "bench.csv", table);
  return table;
}

}  // namespace adsnet
