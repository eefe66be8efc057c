#include <cstdlib>
#include <iostream>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "adsnet/commands.hpp"

namespace {

spdlog::level::level_enum level_from_env() {
  const char* raw = std::getenv("ADSNET_LOG_LEVEL");
  const std::string v = raw ? raw : "info";
  if (v == "error") return spdlog::level::err;
  if (v == "debug") return spdlog::level::debug;
  if (v != "info") throw adsnet::Error("ADSNET_LOG_LEVEL must be error, info or debug, got '" + v + "'");
  return spdlog::level::info;
}

void log_sink(adsnet::LogLevel level, const std::string& msg) {
  switch (level) {
    case adsnet::LogLevel::error: spdlog::error(msg); break;
    case adsnet::LogLevel::info: spdlog::info(msg); break;
    case adsnet::LogLevel::debug: spdlog::debug(msg); break;
  }
}

void add_common(CLI::App* cmd, adsnet::CommandOptions& o, bool variant_flag) {
  cmd->add_option("--config", o.config, "plan file (data.*, train.*, plan.* keys)");
  cmd->add_option("--data-dir", o.data_dir, "dataset directory written by datagen");
  cmd->add_option("--out-dir", o.out_dir, "output directory");
  cmd->add_option("--seed", o.seed, "seed override");
  if (variant_flag) cmd->add_option("--variant", o.variant, "variant override");
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("adsnet");
  spdlog::set_default_logger(logger);
  try {
    spdlog::set_level(level_from_env());
  } catch (const std::exception& e) {
    spdlog::error(e.what());
    return 2;
  }

  CLI::App app{"Cross-domain LTV prediction with gain-evaluated transfer"};
  app.require_subcommand(1);
  adsnet::CommandOptions opts;

  auto* datagen = app.add_subcommand("datagen", "generate the synthetic benchmark as CSV");
  add_common(datagen, opts, false);
  auto* train = app.add_subcommand("train", "train one variant, write checkpoint, metrics log and report");
  add_common(train, opts, true);
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the internal test split");
  add_common(eval, opts, false);
  eval->add_option("checkpoint", opts.checkpoint, "checkpoint file")->required();
  auto* bench = app.add_subcommand("bench", "run every plan variant and seed, write a comparison table");
  add_common(bench, opts, true);

  CLI11_PARSE(app, argc, argv);

  try {
    std::string out;
    if (datagen->parsed()) {
      out = adsnet::cmd_datagen(opts, log_sink);
    } else if (train->parsed()) {
      out = adsnet::cmd_train(opts, log_sink);
    } else if (eval->parsed()) {
      out = adsnet::cmd_eval(opts, log_sink);
    } else {
      out = adsnet::cmd_bench(opts, log_sink);
    }
    std::cout << out;
  } catch (const std::exception& e) {
    spdlog::error(e.what());
    return 1;
  }
  return 0;
}
