#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "adsnet/commands.hpp"

using namespace adsnet;
namespace fs = std::filesystem;

namespace {

const char* kTinyPlan = R"(# tiny plan
plan.variants = joint_mix_baseline, backbone_internal_only
plan.seeds = 1, 2, 3
plan.rejection_window = 5
data.n_internal = 1500
data.n_external = 3000
data.n_ads = 40
train.warmup_steps = 10
train.total_steps = 20
train.sync_frequency = 10
train.batch_size = 16
train.external_microbatch = 8
train.segments = 4
train.experts = 2
train.embedding_dim = 4
train.expert_hidden = 8
train.tower_hidden = 4
)";

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("adsnet_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

fs::path write_plan(const fs::path& dir, const std::string& text = kTinyPlan) {
  const auto p = dir / "plan.conf";
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST(Config, DefaultRoundTrip) {
  const ExperimentPlan p;
  EXPECT_EQ(parse_plan(serialize_plan(p)), p);
}

TEST(Config, EditedRoundTripIsIdentity) {
  const ExperimentPlan p = parse_plan(std::string(kTinyPlan) + "train.beta = 0.123456789012345\ndata.shift = 1.1\n");
  EXPECT_EQ(p.train.beta, 0.123456789012345);
  EXPECT_EQ(p.seeds.size(), 3u);
  const ExperimentPlan q = parse_plan(serialize_plan(p));
  EXPECT_EQ(q, p);
  EXPECT_EQ(serialize_plan(q), serialize_plan(p));
}

TEST(Config, SpecAndTrainSubsetsRoundTrip) {
  SyntheticSpec s;
  s.noise_fraction = 0.7;
  s.vocab_sizes = {3, 4, 5, 6, 7, 8};
  std::istringstream ss(serialize_spec(s));
  EXPECT_EQ(parse_spec(ss), s);
  TrainConfig c;
  c.expert_hidden = {5, 3};
  std::istringstream cs(serialize_train_config(c));
  EXPECT_EQ(parse_train_config(cs), c);
  std::istringstream wrong("train.beta = 1\n");
  EXPECT_THROW(parse_spec(wrong), Error);
}

TEST(Config, UnknownKeyNamedWithLine) {
  try {
    parse_plan("# comment\ntrain.beta = 0.2\ntrain.betta = 0.2\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(std::string(e.what()), "config line 3: unknown key 'train.betta'");
  }
}

TEST(Config, MalformedValuesRejected) {
  for (const std::string text : {"train.total_steps = ten\n", "train.beta = -1\n", "plan.variants = fancy\n",
                                 "plan.seeds =\n", "data.noise_fraction = 2\n", "just words\n"}) {
    EXPECT_THROW(parse_plan(text), Error) << text;
  }
  try {
    parse_plan("train.total_steps = 1.5\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("train.total_steps"), std::string::npos);
  }
}

TEST(Checkpoint, RoundTripPreservesBothNetworks) {
  const fs::path dir = scratch("ckpt");
  CommandOptions o;
  o.config = write_plan(dir).string();
  o.out_dir = (dir / "run").string();
  o.variant = "adsnet";
  cmd_train(o);
  Checkpoint a = load_checkpoint((dir / "run" / "checkpoint.bin").string());
  std::stringstream ss;
  write_checkpoint(ss, a);
  const std::string bytes = ss.str();
  Checkpoint b = read_checkpoint(ss);
  EXPECT_EQ(b.architecture.schema.fields.size(), a.architecture.schema.fields.size());
  EXPECT_EQ(b.scheme.boundaries, a.scheme.boundaries);
  EXPECT_EQ(b.scheme.means, a.scheme.means);
  EXPECT_TRUE(b.state.vanilla.same_values(a.state.vanilla));
  EXPECT_TRUE(b.state.gain.same_values(a.state.gain));
  EXPECT_EQ(bytes, slurp(dir / "run" / "checkpoint.bin"));

  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_checkpoint(truncated), Error);
  std::stringstream trailing(bytes + "x");
  EXPECT_THROW(read_checkpoint(trailing), Error);
  std::stringstream magic("adsnet-checkpoint 9\n" + bytes.substr(bytes.find('\n') + 1));
  EXPECT_THROW(read_checkpoint(magic), Error);
}

TEST(Commands, DatagenIsByteIdentical) {
  const fs::path dir = scratch("datagen");
  CommandOptions o;
  o.config = write_plan(dir).string();
  o.out_dir = (dir / "a").string();
  cmd_datagen(o);
  o.out_dir = (dir / "b").string();
  cmd_datagen(o);
  for (const char* f : {kSchemaFile, kTrainFile, kValidationFile, kTestFile}) {
    EXPECT_TRUE(fs::exists(dir / "a" / f)) << f;
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
  o.out_dir = (dir / "c").string();
  o.seed = 99;
  cmd_datagen(o);
  EXPECT_NE(slurp(dir / "a" / kTrainFile), slurp(dir / "c" / kTrainFile));
}

TEST(Commands, TrainOutputsAndEvalDeterminism) {
  const fs::path dir = scratch("train");
  CommandOptions o;
  o.config = write_plan(dir).string();
  o.out_dir = (dir / "data").string();
  cmd_datagen(o);
  o.data_dir = (dir / "data").string();
  o.out_dir = (dir / "run").string();
  o.variant = "adsnet";
  const std::string report = cmd_train(o);
  std::istringstream log(slurp(dir / "run" / "metrics_log.csv"));
  std::string line;
  std::getline(log, line);
  EXPECT_EQ(line, "step,loss_van_t,loss_gain_t,loss_gain_s,w_gain,accepted,mean_w_s,l_domain");
  int steps = 0;
  while (std::getline(log, line)) ++steps;
  EXPECT_EQ(steps, 20);
  EXPECT_NE(report.find("average,all,"), std::string::npos);

  CommandOptions e;
  e.config = o.config;
  e.data_dir = o.data_dir;
  e.checkpoint = (dir / "run" / "checkpoint.bin").string();
  const std::string r1 = cmd_eval(e);
  const std::string r2 = cmd_eval(e);
  EXPECT_EQ(r1, r2);
  EXPECT_EQ(r1, report);

  e.checkpoint = (dir / "missing.bin").string();
  EXPECT_THROW(cmd_eval(e), Error);
}

TEST(Commands, BackboneLogHasNoExternalTerms) {
  const fs::path dir = scratch("backbone");
  CommandOptions o;
  o.config = write_plan(dir).string();
  o.out_dir = (dir / "run").string();
  o.variant = "backbone_internal_only";
  cmd_train(o);
  std::istringstream log(slurp(dir / "run" / "metrics_log.csv"));
  std::string line;
  std::getline(log, line);
  int steps = 0;
  while (std::getline(log, line)) {
    ++steps;
    EXPECT_TRUE(line.ends_with(",0,0,0,0,0")) << line;
  }
  EXPECT_EQ(steps, 20);
}

TEST(Commands, BenchTableCountContract) {
  const fs::path dir = scratch("bench");
  CommandOptions o;
  o.config = write_plan(dir).string();
  o.out_dir = (dir / "bench").string();
  const std::string table = cmd_bench(o);
  EXPECT_EQ(table, slurp(dir / "bench" / "bench.csv"));
  int runs = 0, medians = 0, deltas = 0;
  std::istringstream is(table);
  std::string line;
  while (std::getline(is, line)) {
    runs += line.rfind("run,", 0) == 0;
    medians += line.rfind("median,", 0) == 0;
    deltas += line.rfind("negative_transfer_delta_gini", 0) == 0 && line.find("NA") == std::string::npos;
  }
  EXPECT_EQ(runs, 6);
  EXPECT_EQ(medians, 2);
  EXPECT_EQ(deltas, 2);
  EXPECT_EQ(std::distance(fs::directory_iterator(dir / "bench" / "logs"), fs::directory_iterator{}), 6);

  o.out_dir = (dir / "again").string();
  EXPECT_EQ(cmd_bench(o), table);
}

TEST(Commands, MissingOutDirRejected) {
  CommandOptions o;
  EXPECT_THROW(cmd_datagen(o), Error);
}
