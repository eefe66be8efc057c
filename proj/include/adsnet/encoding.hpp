#pragma once

// Field-wise categorical embeddings plus field-weighted pairwise interactions
// (FwFM). The encoded representation of an example is the concatenation of
// its field embeddings followed by one scalar interaction per field pair.

#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "adsnet/diffcore.hpp"

namespace adsnet {

struct Field {
  std::string name;
  std::size_t vocab = 1;
};

struct FieldSchema {
  std::vector<Field> fields;
  std::size_t embedding_dim = 32;

  std::size_t num_fields() const { return fields.size(); }
  std::size_t num_pairs() const { return fields.size() * (fields.size() - 1) / 2; }
  std::size_t encoded_width() const { return num_fields() * embedding_dim + num_pairs(); }

  void validate() const {
    if (fields.empty()) throw Error("schema: no fields");
    if (embedding_dim == 0) throw Error("schema: embedding_dim must be positive");
    std::set<std::string> seen;
    for (const auto& f : fields) {
      if (!seen.insert(f.name).second) throw Error("schema: duplicate field '" + f.name + "'");
      if (f.vocab < 1) throw Error("schema: field '" + f.name + "' has empty vocabulary");
    }
  }
};

enum class Domain { internal, external };

inline const char* domain_name(Domain d) { return d == Domain::internal ? "internal" : "external"; }

struct Example {
  std::vector<std::uint32_t> feature_ids;
  Domain domain = Domain::internal;
  int domain_id = 0;
  int day = 0;
  int ad_id = 0;
  double ltv = 0.0;

  bool operator==(const Example&) const = default;
};

/// Throws naming the offending field when an example does not fit the schema.
inline void validate_example(const Example& ex, const FieldSchema& schema) {
  if (ex.feature_ids.size() != schema.num_fields()) {
    throw Error("example: expected " + std::to_string(schema.num_fields()) + " feature ids, got " +
                std::to_string(ex.feature_ids.size()));
  }
  for (std::size_t f = 0; f < schema.num_fields(); ++f) {
    if (ex.feature_ids[f] >= schema.fields[f].vocab) {
      throw Error("example: id " + std::to_string(ex.feature_ids[f]) + " out of range for field '" +
                  schema.fields[f].name + "' (vocab " + std::to_string(schema.fields[f].vocab) + ")");
    }
  }
  if (!(ex.ltv >= 0.0) || !std::isfinite(ex.ltv)) throw Error("example: ltv must be finite and >= 0");
}

struct EmbeddingTable {
  std::vector<Parameter> tables;  // one (vocab x dim) sparse table per field
  Parameter field_weights;        // (fields x fields); entry [i][j], i < j, is used

  EmbeddingTable() = default;

  EmbeddingTable(const FieldSchema& schema, std::mt19937_64& rng) {
    schema.validate();
    const double bound = 1.0 / std::sqrt(static_cast<double>(schema.embedding_dim));
    tables.reserve(schema.num_fields());
    for (const auto& f : schema.fields) {
      tables.emplace_back("embed." + f.name, uniform_tensor(f.vocab, schema.embedding_dim, -bound, bound, rng),
                          true);
    }
    const std::size_t n = schema.num_fields();
    field_weights = Parameter("fwfm.r", uniform_tensor(n, n, -bound, bound, rng));
  }

  void collect(std::vector<Parameter*>& out) {
    for (auto& t : tables) out.push_back(&t);
    out.push_back(&field_weights);
  }
};

/// Per-field embeddings of a batch: one (B x dim) matrix per field.
inline std::vector<Var> embed(Tape& tape, std::span<const Example* const> batch, EmbeddingTable& emb) {
  if (batch.empty()) throw Error("embed: empty batch");
  std::vector<Var> out;
  out.reserve(emb.tables.size());
  std::vector<std::uint32_t> ids(batch.size());
  for (std::size_t f = 0; f < emb.tables.size(); ++f) {
    for (std::size_t b = 0; b < batch.size(); ++b) {
      if (batch[b]->feature_ids.size() != emb.tables.size()) {
        throw Error("embed: example has " + std::to_string(batch[b]->feature_ids.size()) +
                    " fields, schema has " + std::to_string(emb.tables.size()));
      }
      ids[b] = batch[b]->feature_ids[f];
    }
    out.push_back(gather_rows(tape, emb.tables[f], ids));
  }
  return out;
}

/// Interaction features: column p for pair (i, j), i < j in lexicographic
/// order, equals r[i][j] * <e_i, e_j>.
inline Var fwfm_interactions(const std::vector<Var>& field_embeddings, Var field_weights) {
  const std::size_t n = field_embeddings.size();
  if (n < 2) throw Error("fwfm: need at least 2 fields, got " + std::to_string(n));
  const Tensor& r = field_weights.value();
  if (r.rows() != n || r.cols() != n) {
    throw Error("fwfm: weight shape " + to_string(r.shape()) + " does not match " + std::to_string(n) +
                " fields");
  }
  std::vector<Var> dots;
  std::vector<std::size_t> flat;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      dots.push_back(row_dot(field_embeddings[i], field_embeddings[j]));
      flat.push_back(i * n + j);
    }
  }
  return mul_row(concat_cols(dots), pick(field_weights, std::move(flat)));
}

/// E = concat(field embeddings, interactions); shape (B x encoded_width).
inline Var encode(Tape& tape, std::span<const Example* const> batch, EmbeddingTable& emb) {
  std::vector<Var> fields = embed(tape, batch, emb);
  std::vector<Var> parts = fields;
  if (fields.size() >= 2) parts.push_back(fwfm_interactions(fields, tape.parameter(emb.field_weights)));
  return concat_cols(parts);
}

}  // namespace adsnet
