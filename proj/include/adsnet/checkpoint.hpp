#pragma once

// Checkpoint files: a plain-text header (architecture, segments, tensor
// table) terminated by a line `end`, followed by every tensor's values as
// 64-bit little-endian IEEE doubles in header order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "adsnet/config.hpp"
#include "adsnet/siamese.hpp"

namespace adsnet {

inline constexpr const char* kCheckpointMagic = "adsnet-checkpoint 1";

struct Checkpoint {
  Architecture architecture;
  SegmentScheme scheme;
  SiameseState state;
};

namespace detail {

inline void write_f64(std::ostream& os, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline double read_f64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw Error("checkpoint: truncated tensor data");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

inline std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

inline std::string join_reals(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + cfg::fmt(v[i]);
  return out;
}

inline std::vector<std::pair<std::string, Parameter*>> named_tensors(SiameseState& s) {
  std::vector<std::pair<std::string, Parameter*>> out;
  for (auto* p : s.vanilla.parameters()) out.emplace_back("vanilla/" + p->name, p);
  for (auto* p : s.gain.parameters()) out.emplace_back("gain/" + p->name, p);
  return out;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, Checkpoint& ck) {
  const Architecture& a = ck.architecture;
  os << kCheckpointMagic << '\n';
  os << "schema.embedding_dim = " << a.schema.embedding_dim << '\n';
  os << "schema.fields = ";
  for (std::size_t f = 0; f < a.schema.fields.size(); ++f) {
    os << (f ? "," : "") << a.schema.fields[f].name << ':' << a.schema.fields[f].vocab;
  }
  os << '\n';
  os << "arch.expert_hidden = " << detail::join_sizes(a.expert_hidden) << '\n';
  os << "arch.num_experts = " << a.num_experts << '\n';
  os << "arch.tower_hidden = " << a.tower_hidden << '\n';
  os << "arch.thresholds = " << a.thresholds << '\n';
  os << "segments.requested = " << ck.scheme.requested_segments << '\n';
  os << "segments.boundaries = " << detail::join_reals(ck.scheme.boundaries) << '\n';
  os << "segments.means = " << detail::join_reals(ck.scheme.means) << '\n';
  const auto tensors = detail::named_tensors(ck.state);
  for (const auto& [name, p] : tensors) {
    os << "tensor " << name << ' ' << p->value.rows() << ' ' << p->value.cols() << '\n';
  }
  os << "end\n";
  for (const auto& [name, p] : tensors) {
    for (double v : p->value.data()) detail::write_f64(os, v);
  }
}

inline void save_checkpoint(const std::string& path, Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  write_checkpoint(os, ck);
  if (!os) throw Error("write failed for '" + path + "'");
}

inline Checkpoint read_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kCheckpointMagic) throw Error("checkpoint: bad magic line");
  std::map<std::string, std::string> kv;
  std::vector<std::tuple<std::string, std::size_t, std::size_t>> table;
  while (true) {
    if (!std::getline(is, line)) throw Error("checkpoint: header not terminated");
    if (line == "end") break;
    if (line.rfind("tensor ", 0) == 0) {
      std::istringstream ls(line.substr(7));
      std::string name;
      std::size_t r = 0, c = 0;
      if (!(ls >> name >> r >> c)) throw Error("checkpoint: malformed tensor line '" + line + "'");
      table.emplace_back(name, r, c);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("checkpoint: malformed header line '" + line + "'");
    kv[cfg::trim(line.substr(0, eq))] = cfg::trim(line.substr(eq + 1));
  }
  auto get = [&](const std::string& k) {
    const auto it = kv.find(k);
    if (it == kv.end()) throw Error("checkpoint: missing header key '" + k + "'");
    return it->second;
  };
  Checkpoint ck;
  Architecture& a = ck.architecture;
  try {
    a.schema.embedding_dim = cfg::parse_number<std::size_t>(get("schema.embedding_dim"));
    for (const auto& item : cfg::split_list(get("schema.fields"))) {
      const auto colon = item.rfind(':');
      if (colon == std::string::npos) throw Error("bad field entry '" + item + "'");
      a.schema.fields.push_back({item.substr(0, colon), cfg::parse_number<std::size_t>(item.substr(colon + 1))});
    }
    a.expert_hidden.clear();
    for (const auto& s : cfg::split_list(get("arch.expert_hidden"))) {
      a.expert_hidden.push_back(cfg::parse_number<std::size_t>(s));
    }
    a.num_experts = cfg::parse_number<std::size_t>(get("arch.num_experts"));
    a.tower_hidden = cfg::parse_number<std::size_t>(get("arch.tower_hidden"));
    a.thresholds = cfg::parse_number<std::size_t>(get("arch.thresholds"));
    ck.scheme.requested_segments = cfg::parse_number<std::size_t>(get("segments.requested"));
    for (const auto& s : cfg::split_list(get("segments.boundaries"))) {
      ck.scheme.boundaries.push_back(cfg::parse_number<double>(s));
    }
    for (const auto& s : cfg::split_list(get("segments.means"))) ck.scheme.means.push_back(cfg::parse_number<double>(s));
  } catch (const Error& e) {
    throw Error(std::string("checkpoint: ") + e.what());
  }
  a.validate();
  ck.scheme.validate();
  if (ck.scheme.thresholds() != a.thresholds) throw Error("checkpoint: segment count does not match architecture");

  ck.state.vanilla = Network(a, 0);
  ck.state.gain = Network(a, 0);
  const auto tensors = detail::named_tensors(ck.state);
  if (tensors.size() != table.size()) throw Error("checkpoint: tensor count mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& [name, r, c] = table[i];
    const auto& [want, p] = tensors[i];
    if (name != want || r != p->value.rows() || c != p->value.cols()) {
      throw Error("checkpoint: tensor '" + name + "' does not match expected '" + want + "' " +
                  to_string(p->value.shape()));
    }
  }
  for (const auto& [name, p] : tensors) {
    for (double& v : p->value.data()) v = detail::read_f64(is);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw Error("checkpoint: trailing bytes after tensor data");
  return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint '" + path + "'");
  return read_checkpoint(is);
}

}  // namespace adsnet
