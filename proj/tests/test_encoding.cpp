#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "adsnet/encoding.hpp"

using namespace adsnet;

namespace {

FieldSchema schema_of(std::vector<std::size_t> vocabs, std::size_t dim) {
  FieldSchema s;
  s.embedding_dim = dim;
  for (std::size_t i = 0; i < vocabs.size(); ++i) s.fields.push_back({"f" + std::to_string(i), vocabs[i]});
  return s;
}

Example example_of(std::vector<std::uint32_t> ids) {
  Example e;
  e.feature_ids = std::move(ids);
  return e;
}

std::vector<const Example*> ptrs(const std::vector<Example>& xs) {
  std::vector<const Example*> out;
  for (const auto& x : xs) out.push_back(&x);
  return out;
}

}  // namespace

TEST(Schema, RejectsDuplicatesAndEmptyVocab) {
  FieldSchema s = schema_of({3, 4}, 2);
  EXPECT_NO_THROW(s.validate());
  s.fields[1].name = "f0";
  EXPECT_THROW(s.validate(), Error);
  EXPECT_THROW(schema_of({0}, 2).validate(), Error);
}

TEST(Embed, SingleFieldLookup) {
  std::mt19937_64 rng(1);
  EmbeddingTable emb(schema_of({2}, 2), rng);
  emb.tables[0].value.row_span(0)[0] = 0.1;
  emb.tables[0].value.row_span(0)[1] = 0.2;
  std::vector<Example> xs{example_of({0})};
  Tape tape;
  const auto out = embed(tape, ptrs(xs), emb);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].value().data(), (std::vector<double>{0.1, 0.2}));
}

TEST(Embed, ZeroTablesGiveZeroVectors) {
  std::mt19937_64 rng(1);
  EmbeddingTable emb(schema_of({3, 3}, 4), rng);
  for (auto& t : emb.tables) t.value.fill(0.0);
  std::vector<Example> xs{example_of({1, 2})};
  Tape tape;
  for (const auto& v : embed(tape, ptrs(xs), emb)) {
    for (double x : v.value().data()) EXPECT_EQ(x, 0.0);
  }
}

TEST(Embed, ShapeContract) {
  std::mt19937_64 rng(1);
  EmbeddingTable emb(schema_of({5, 5, 5}, 4), rng);
  std::vector<Example> xs{example_of({0, 1, 2})};
  Tape tape;
  const auto out = embed(tape, ptrs(xs), emb);
  ASSERT_EQ(out.size(), 3u);
  for (const auto& v : out) EXPECT_EQ(v.shape(), (Shape{1, 4}));
}

TEST(Embed, OutOfRangeNamesFieldAndId) {
  const FieldSchema s = schema_of({3, 2}, 2);
  try {
    validate_example(example_of({1, 9}), s);
    FAIL();
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("'f1'"), std::string::npos) << msg;
    EXPECT_NE(msg.find("9"), std::string::npos) << msg;
  }
  std::mt19937_64 rng(1);
  EmbeddingTable emb(s, rng);
  std::vector<Example> xs{example_of({1, 9})};
  Tape tape;
  EXPECT_THROW(embed(tape, ptrs(xs), emb), Error);
}

TEST(Embed, InitializationBound) {
  std::mt19937_64 rng(4);
  EmbeddingTable emb(schema_of({50, 50}, 16), rng);
  for (const auto& t : emb.tables) {
    for (double v : t.value.data()) EXPECT_LE(std::abs(v), 0.25);
  }
}

TEST(Fwfm, OrthogonalEmbeddingsGiveZero) {
  Tape tape;
  Var e1 = tape.constant(Tensor::row({1, 0}));
  Var e2 = tape.constant(Tensor::row({0, 3}));
  Var r = tape.constant(Tensor(2, 2, 7.0));
  EXPECT_EQ(fwfm_interactions({e1, e2}, r).value().item(), 0.0);
}

TEST(Fwfm, HandInnerProduct) {
  Tape tape;
  Var e = tape.constant(Tensor::row({1, 1}));
  Tensor r(2, 2);
  r(0, 1) = 0.5;
  EXPECT_DOUBLE_EQ(fwfm_interactions({e, e}, tape.constant(r)).value().item(), 1.0);
}

TEST(Fwfm, ZeroWeightsGiveZero) {
  std::mt19937_64 rng(2);
  Tape tape;
  std::vector<Var> es;
  for (int i = 0; i < 4; ++i) es.push_back(tape.constant(uniform_tensor(3, 5, -1, 1, rng)));
  const Tensor out = fwfm_interactions(es, tape.constant(Tensor(4, 4))).value();
  EXPECT_EQ(out.shape(), (Shape{3, 6}));
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Fwfm, PairOrderAndBilinearity) {
  std::mt19937_64 rng(8);
  const Tensor a = uniform_tensor(1, 3, -1, 1, rng), b = uniform_tensor(1, 3, -1, 1, rng),
               c = uniform_tensor(1, 3, -1, 1, rng), r = uniform_tensor(3, 3, -1, 1, rng);
  auto dot = [](const Tensor& x, const Tensor& y) {
    double s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x.data()[i] * y.data()[i];
    return s;
  };
  Tape tape;
  const Tensor out = fwfm_interactions({tape.constant(a), tape.constant(b), tape.constant(c)}, tape.constant(r)).value();
  EXPECT_NEAR(out.data()[0], r(0, 1) * dot(a, b), 1e-15);
  EXPECT_NEAR(out.data()[1], r(0, 2) * dot(a, c), 1e-15);
  EXPECT_NEAR(out.data()[2], r(1, 2) * dot(b, c), 1e-15);

  Tensor a3 = a;
  for (auto& v : a3.data()) v *= 3.0;
  const Tensor scaled =
      fwfm_interactions({tape.constant(a3), tape.constant(b), tape.constant(c)}, tape.constant(r)).value();
  EXPECT_NEAR(scaled.data()[0], 3.0 * out.data()[0], 1e-14);
  EXPECT_NEAR(scaled.data()[2], out.data()[2], 1e-15);
}

TEST(Fwfm, NeedsTwoFields) {
  Tape tape;
  EXPECT_THROW(fwfm_interactions({tape.constant(Tensor::row({1}))}, tape.constant(Tensor(1, 1))), Error);
}

TEST(Encode, WidthTwoFieldsDimTwo) {
  std::mt19937_64 rng(1);
  const FieldSchema s = schema_of({3, 3}, 2);
  EXPECT_EQ(s.encoded_width(), 5u);
  EmbeddingTable emb(s, rng);
  for (auto& t : emb.tables) t.value.fill(0.0);
  std::vector<Example> xs{example_of({0, 2})};
  Tape tape;
  const Tensor e = encode(tape, ptrs(xs), emb).value();
  EXPECT_EQ(e.shape(), (Shape{1, 5}));
  for (double v : e.data()) EXPECT_EQ(v, 0.0);
}

TEST(Encode, BatchRowsMatchSingleEncodesAndPermute) {
  std::mt19937_64 rng(3);
  EmbeddingTable emb(schema_of({4, 5, 6}, 3), rng);
  std::vector<Example> xs{example_of({0, 1, 2}), example_of({3, 4, 5}), example_of({1, 0, 0}), example_of({2, 2, 2})};
  Tape tape;
  const Tensor batch = encode(tape, ptrs(xs), emb).value();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::vector<const Example*> one{&xs[i]};
    const Tensor single = encode(tape, one, emb).value();
    for (std::size_t c = 0; c < single.cols(); ++c) EXPECT_EQ(single(0, c), batch(i, c));
  }
  std::vector<const Example*> perm{&xs[2], &xs[0], &xs[3], &xs[1]};
  const std::size_t map[] = {2, 0, 3, 1};
  const Tensor permuted = encode(tape, perm, emb).value();
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t c = 0; c < batch.cols(); ++c) EXPECT_EQ(permuted(i, c), batch(map[i], c));
  }
}

TEST(Encode, GradientOnlyOnLookedUpRows) {
  std::mt19937_64 rng(3);
  EmbeddingTable emb(schema_of({6, 6}, 3), rng);
  std::vector<Example> xs{example_of({1, 4}), example_of({1, 2})};
  Tape tape;
  tape.backward(mean(encode(tape, ptrs(xs), emb)));
  std::vector<std::size_t> rows0, rows1;
  for (const auto& [r, g] : emb.tables[0].row_grads) rows0.push_back(r);
  for (const auto& [r, g] : emb.tables[1].row_grads) rows1.push_back(r);
  EXPECT_EQ(rows0, (std::vector<std::size_t>{1}));
  EXPECT_EQ(rows1, (std::vector<std::size_t>{2, 4}));
  const Tensor dense = emb.tables[0].dense_grad();
  for (std::size_t r = 0; r < 6; ++r) {
    if (r == 1) continue;
    for (double v : dense.row_span(r)) EXPECT_EQ(v, 0.0);
  }
}

TEST(Encode, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  EmbeddingTable emb(schema_of({3, 4, 2}, 3), rng);
  std::vector<Example> xs{example_of({0, 3, 1}), example_of({2, 1, 0}), example_of({0, 0, 1})};
  const Tensor w = uniform_tensor(3, emb.tables.size() * 3 + 3, -1, 1, rng);
  std::vector<Parameter*> params;
  emb.collect(params);
  auto f = [&](Tape& t) { return mean(mul(encode(t, ptrs(xs), emb), t.constant(w))); };
  EXPECT_LT(finite_difference_check(f, params, 1e-6), 1e-5);
}
