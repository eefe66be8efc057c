#pragma once

// Flat `section.key = value` configuration files. `#` starts a comment; lists
// are comma-separated. Unknown keys and malformed values are errors naming the
// key and line.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "adsnet/datagen.hpp"
#include "adsnet/trainer.hpp"

namespace adsnet {

struct ExperimentPlan {
  std::vector<Variant> variants{Variant::adsnet};
  std::vector<std::uint64_t> seeds{1};
  std::string data_dir;  // empty: generate from `data`
  SyntheticSpec data;
  TrainConfig train;
  std::vector<std::size_t> slice_edges{15, 60};
  std::size_t rejection_window = 1000;

  bool operator==(const ExperimentPlan&) const = default;
};

namespace cfg {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
T parse_number(const std::string& s) {
  T v{};
  const char* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty()) throw Error("invalid number '" + s + "'");
  return v;
}

struct Binding {
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

template <class T>
Binding number(T& ref) {
  return {[&ref](const std::string& s) { ref = parse_number<T>(s); },
          [&ref] {
            if constexpr (std::is_floating_point_v<T>) {
              return fmt(ref);
            } else {
              return std::to_string(ref);
            }
          }};
}

template <class T>
Binding number_list(std::vector<T>& ref) {
  return {[&ref](const std::string& s) {
            ref.clear();
            for (const auto& item : split_list(s)) ref.push_back(parse_number<T>(item));
          },
          [&ref] {
            std::string out;
            for (std::size_t i = 0; i < ref.size(); ++i) {
              if (i) out += ',';
              if constexpr (std::is_floating_point_v<T>) {
                out += fmt(ref[i]);
              } else {
                out += std::to_string(ref[i]);
              }
            }
            return out;
          }};
}

inline Binding text(std::string& ref) {
  return {[&ref](const std::string& s) { ref = s; }, [&ref] { return ref; }};
}

inline Binding variant_list(std::vector<Variant>& ref) {
  return {[&ref](const std::string& s) {
            ref.clear();
            for (const auto& item : split_list(s)) ref.push_back(parse_variant(item));
          },
          [&ref] {
            std::string out;
            for (std::size_t i = 0; i < ref.size(); ++i) out += (i ? "," : "") + std::string(variant_name(ref[i]));
            return out;
          }};
}

using Bindings = std::vector<std::pair<std::string, Binding>>;

inline void bind_train(Bindings& b, TrainConfig& c) {
  b.emplace_back("train.warmup_steps", number(c.warmup_steps));
  b.emplace_back("train.total_steps", number(c.total_steps));
  b.emplace_back("train.sync_frequency", number(c.sync_frequency));
  b.emplace_back("train.batch_size", number(c.batch_size));
  b.emplace_back("train.external_microbatch", number(c.external_microbatch));
  b.emplace_back("train.beta", number(c.beta));
  b.emplace_back("train.lr_dense", number(c.lr_dense));
  b.emplace_back("train.lr_sparse", number(c.lr_sparse));
  b.emplace_back("train.ftrl_beta", number(c.ftrl_beta));
  b.emplace_back("train.ftrl_l1", number(c.ftrl_l1));
  b.emplace_back("train.ftrl_l2", number(c.ftrl_l2));
  b.emplace_back("train.seed", number(c.seed));
  b.emplace_back("train.segments", number(c.segments));
  b.emplace_back("train.experts", number(c.experts));
  b.emplace_back("train.embedding_dim", number(c.embedding_dim));
  b.emplace_back("train.expert_hidden", number_list(c.expert_hidden));
  b.emplace_back("train.tower_hidden", number(c.tower_hidden));
}

inline void bind_data(Bindings& b, SyntheticSpec& s) {
  b.emplace_back("data.n_internal", number(s.n_internal));
  b.emplace_back("data.n_external", number(s.n_external));
  b.emplace_back("data.purchase_rate_internal", number(s.purchase_rate_internal));
  b.emplace_back("data.purchase_rate_external", number(s.purchase_rate_external));
  b.emplace_back("data.mean_ltv_internal", number(s.mean_ltv_internal));
  b.emplace_back("data.mean_ltv_external", number(s.mean_ltv_external));
  b.emplace_back("data.shift", number(s.shift));
  b.emplace_back("data.noise_fraction", number(s.noise_fraction));
  b.emplace_back("data.n_fields", number(s.n_fields));
  b.emplace_back("data.vocab_sizes", number_list(s.vocab_sizes));
  b.emplace_back("data.n_ads", number(s.n_ads));
  b.emplace_back("data.ad_popularity_exponent", number(s.ad_popularity_exponent));
  b.emplace_back("data.external_ad_exponent", number(s.external_ad_exponent));
  b.emplace_back("data.domain_weights", number_list(s.domain_weights));
  b.emplace_back("data.domain_ltv_scale", number_list(s.domain_ltv_scale));
  b.emplace_back("data.latent_rank", number(s.latent_rank));
  b.emplace_back("data.signal", number(s.signal));
  b.emplace_back("data.ad_bias_scale", number(s.ad_bias_scale));
  b.emplace_back("data.feature_noise", number(s.feature_noise));
  b.emplace_back("data.seed", number(s.seed));
}

inline void bind_plan(Bindings& b, ExperimentPlan& p) {
  b.emplace_back("plan.variants", variant_list(p.variants));
  b.emplace_back("plan.seeds", number_list(p.seeds));
  b.emplace_back("plan.data_dir", text(p.data_dir));
  b.emplace_back("plan.slice_edges", number_list(p.slice_edges));
  b.emplace_back("plan.rejection_window", number(p.rejection_window));
  bind_data(b, p.data);
  bind_train(b, p.train);
}

inline void apply(const Bindings& bindings, std::istream& is) {
  std::map<std::string, const Binding*> index;
  for (const auto& [k, b] : bindings) index[k] = &b;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const auto it = index.find(key);
    if (it == index.end()) throw Error("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    try {
      it->second->set(trim(line.substr(eq + 1)));
    } catch (const Error& e) {
      throw Error("config line " + std::to_string(lineno) + ", key '" + key + "': " + e.what());
    }
  }
}

inline std::string dump(const Bindings& bindings) {
  std::string out;
  for (const auto& [k, b] : bindings) out += k + " = " + b.get() + "\n";
  return out;
}

}  // namespace cfg

inline ExperimentPlan parse_plan(std::istream& is) {
  ExperimentPlan p;
  cfg::Bindings b;
  cfg::bind_plan(b, p);
  cfg::apply(b, is);
  p.data.validate();
  p.train.validate();
  if (p.variants.empty()) throw Error("config: plan.variants is empty");
  if (p.seeds.empty()) throw Error("config: plan.seeds is empty");
  if (p.rejection_window < 1) throw Error("config: plan.rejection_window must be >= 1");
  return p;
}

inline ExperimentPlan parse_plan(const std::string& text) {
  std::istringstream is(text);
  return parse_plan(is);
}

inline ExperimentPlan load_plan(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open config '" + path + "'");
  return parse_plan(is);
}

inline std::string serialize_plan(const ExperimentPlan& plan) {
  ExperimentPlan copy = plan;
  cfg::Bindings b;
  cfg::bind_plan(b, copy);
  return cfg::dump(b);
}

/// Only the `data.*` keys; any other key is rejected.
inline SyntheticSpec parse_spec(std::istream& is) {
  SyntheticSpec s;
  cfg::Bindings b;
  cfg::bind_data(b, s);
  cfg::apply(b, is);
  s.validate();
  return s;
}

inline std::string serialize_spec(const SyntheticSpec& spec) {
  SyntheticSpec copy = spec;
  cfg::Bindings b;
  cfg::bind_data(b, copy);
  return cfg::dump(b);
}

/// Only the `train.*` keys.
inline TrainConfig parse_train_config(std::istream& is) {
  TrainConfig c;
  cfg::Bindings b;
  cfg::bind_train(b, c);
  cfg::apply(b, is);
  c.validate();
  return c;
}

inline std::string serialize_train_config(const TrainConfig& config) {
  TrainConfig copy = config;
  cfg::Bindings b;
  cfg::bind_train(b, copy);
  return cfg::dump(b);
}

}  // namespace adsnet
