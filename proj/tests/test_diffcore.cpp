#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "adsnet/diffcore.hpp"

using namespace adsnet;

namespace {

Parameter random_param(const std::string& name, std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -2.0,
                       double hi = 2.0) {
  return Parameter(name, uniform_tensor(r, c, lo, hi, rng));
}

// Keeps every entry at least `gap` away from zero (relu's kink).
void push_off_kink(Parameter& p, double gap) {
  for (auto& v : p.value.data()) {
    if (std::abs(v) < gap) v = v < 0.0 ? -gap : gap;
  }
}

// Scalar probe: mean(out * C) with a fixed random C.
Var probe(Tape& tape, Var out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return mean(mul(out, tape.constant(uniform_tensor(out.value().rows(), out.value().cols(), -1.0, 1.0, rng))));
}

}  // namespace

TEST(Tensor, ShapeContract) {
  Tensor t(2, 3, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t(1, 2), 1.5);
  EXPECT_THROW(Tensor(2, 2, std::vector<double>{1, 2, 3}), Error);
  EXPECT_THROW(Tensor(0, 2), Error);
}

TEST(Forward, SigmoidAtZero) {
  Tape tape;
  EXPECT_EQ(sigmoid(tape.constant(Tensor::scalar(0.0))).value().item(), 0.5);
}

TEST(Forward, SoftmaxOfConstantRowIsUniform) {
  for (double c : {-30.0, 0.0, 2.5, 700.0}) {
    Tape tape;
    const Tensor y = softmax_rows(tape.constant(Tensor::row({c, c, c}))).value();
    for (double v : y.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  }
}

TEST(Forward, BceAtHalf) {
  Tape tape;
  const double v = bce(tape.constant(Tensor::scalar(0.5)), tape.constant(Tensor::scalar(1.0))).value().item();
  EXPECT_NEAR(v, 0.693147180559945, 1e-12);
}

TEST(Forward, BceClampsAtBoundaries) {
  EXPECT_TRUE(std::isfinite(bce(0.0, 1.0)));
  EXPECT_TRUE(std::isfinite(bce(1.0, 0.0)));
  EXPECT_NEAR(bce(0.0, 1.0), -std::log(kProbClamp), 1e-9);
}

TEST(Forward, ShapeMismatchNamesPrimitiveAndShapes) {
  Tape tape;
  Var a = tape.constant(Tensor(2, 3));
  Var b = tape.constant(Tensor(2, 2));
  try {
    matmul(a, b);
    FAIL() << "expected a shape error";
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos) << msg;
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("2x2"), std::string::npos) << msg;
  }
  EXPECT_THROW(add(a, b), Error);
  EXPECT_THROW(mse(a, b), Error);
}

TEST(Forward, ApplyChecksArity) {
  Tape tape;
  std::vector<Var> one{tape.constant(Tensor(1, 1))};
  EXPECT_THROW(apply(Primitive::matmul, std::span<const Var>(one)), Error);
  EXPECT_NO_THROW(apply(Primitive::relu, std::span<const Var>(one)));
}

TEST(Softmax, RowsArePositiveAndSumToOne) {
  std::mt19937_64 rng(3);
  Tape tape;
  const Tensor y = softmax_rows(tape.constant(uniform_tensor(20, 7, -40.0, 40.0, rng))).value();
  for (std::size_t r = 0; r < y.rows(); ++r) {
    double s = 0.0;
    for (double v : y.row_span(r)) {
      EXPECT_GT(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Backward, IdentityGradientIsOne) {
  Parameter x("x", Tensor::scalar(4.2));
  Tape tape;
  tape.backward(tape.parameter(x));
  EXPECT_EQ(x.grad.item(), 1.0);
}

TEST(Backward, SumOfSquares) {
  Parameter x("x", Tensor::row({1, 2, 3}));
  Tape tape;
  Var v = tape.parameter(x);
  tape.backward(scale(mean(mul(v, v)), 3.0));
  EXPECT_EQ(x.grad.data(), (std::vector<double>{2, 4, 6}));
}

TEST(Backward, NonScalarLossRejected) {
  Parameter x("x", Tensor::row({1, 2}));
  Tape tape;
  EXPECT_THROW(tape.backward(tape.parameter(x)), Error);
}

TEST(Backward, AccumulationIsAdditive) {
  std::mt19937_64 rng(11);
  Parameter w = random_param("w", 3, 2, rng);
  Parameter x = random_param("x", 4, 3, rng);
  auto loss_a = [&](Tape& t) { return mean(sigmoid(matmul(t.parameter(x), t.parameter(w)))); };
  auto loss_b = [&](Tape& t) { return mse(matmul(t.parameter(x), t.parameter(w)), t.constant(Tensor(4, 2, 0.3))); };
  {
    Tape t;
    t.backward(loss_a(t));
  }
  {
    Tape t;
    t.backward(loss_b(t));
  }
  const Tensor separate = w.grad;
  w.zero_grad();
  x.zero_grad();
  {
    Tape t;
    t.backward(add(loss_a(t), loss_b(t)));
  }
  for (std::size_t i = 0; i < separate.size(); ++i) EXPECT_NEAR(separate.data()[i], w.grad.data()[i], 1e-15);
}

TEST(Backward, ZeroGradClears) {
  Parameter x("x", Tensor::row({1, 2}));
  Tape tape;
  tape.backward(mean(tape.parameter(x)));
  x.zero_grad();
  for (double g : x.grad.data()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, ReplayIsBitIdentical) {
  auto run = [] {
    std::mt19937_64 rng(5);
    Parameter w = random_param("w", 5, 4, rng);
    Parameter x = random_param("x", 6, 5, rng);
    Tape t;
    t.backward(mean(softmax_rows(matmul(t.parameter(x), t.parameter(w)))));
    return w.grad;
  };
  EXPECT_TRUE(run() == run());
}

TEST(Backward, SparseRowsOnlyTouched) {
  Parameter table("emb", Tensor(5, 2, 0.5), true);
  Tape tape;
  std::vector<std::uint32_t> ids{1, 3, 1};
  tape.backward(mean(gather_rows(tape, table, ids)));
  ASSERT_EQ(table.row_grads.size(), 2u);
  EXPECT_NEAR(table.row_grads.at(1)[0], 2.0 / 6.0, 1e-15);
  EXPECT_NEAR(table.row_grads.at(3)[1], 1.0 / 6.0, 1e-15);
  std::vector<std::uint32_t> bad{7};
  Tape t2;
  EXPECT_THROW(gather_rows(t2, table, bad), Error);
}

TEST(FiniteDifference, Quadratic) {
  Parameter x("x", Tensor::scalar(3.0));
  const double err = finite_difference_check([&](Tape& t) {
    Var v = t.parameter(x);
    return mul(v, v);
  }, std::vector<Parameter*>{&x}, 1e-6);
  EXPECT_LT(err, 1e-8);
  EXPECT_EQ(x.value.item(), 3.0);
}

TEST(FiniteDifference, ConstantFunction) {
  Parameter x("x", Tensor::row({1.0, -2.0}));
  const double err =
      finite_difference_check([&](Tape& t) { return t.constant(Tensor::scalar(7.0)); }, std::vector<Parameter*>{&x}, 1e-6);
  EXPECT_EQ(err, 0.0);
}

TEST(FiniteDifference, RejectsBadInput) {
  Parameter x("x", Tensor::scalar(1.0));
  std::vector<Parameter*> ps{&x};
  EXPECT_THROW(finite_difference_check([&](Tape& t) { return t.parameter(x); }, ps, 0.0), Error);
  EXPECT_THROW(finite_difference_check([&](Tape& t) { return t.constant(Tensor::scalar(NAN)); }, ps, 1e-6), Error);
}

TEST(FiniteDifference, TwoLayerMlp) {
  std::mt19937_64 rng(17);
  Parameter w1 = random_param("w1", 4, 6, rng, -1, 1), b1 = random_param("b1", 1, 6, rng, -1, 1);
  Parameter w2 = random_param("w2", 6, 1, rng, -1, 1), b2 = random_param("b2", 1, 1, rng, -1, 1);
  const Tensor x = uniform_tensor(5, 4, -2, 2, rng);
  const Tensor y(5, 1, std::vector<double>{1, 0, 1, 1, 0});
  auto f = [&](Tape& t) {
    Var h = relu(add_row(matmul(t.constant(x), t.parameter(w1)), t.parameter(b1)));
    Var p = sigmoid(add_row(matmul(h, t.parameter(w2)), t.parameter(b2)));
    return mean(bce(p, t.constant(y)));
  };
  EXPECT_LT(finite_difference_check(f, std::vector<Parameter*>{&w1, &b1, &w2, &b2}, 1e-6), 1e-5);
}

// Every primitive against central differences on random inputs in [-2, 2].
class PrimitiveGradient : public ::testing::TestWithParam<Primitive> {};

TEST_P(PrimitiveGradient, MatchesCentralDifferences) {
  const Primitive kind = GetParam();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed * 7919 + static_cast<std::uint64_t>(kind));
    std::vector<Parameter> ps;
    switch (kind) {
      case Primitive::matmul:
        ps.push_back(random_param("a", 3, 4, rng));
        ps.push_back(random_param("b", 4, 2, rng));
        break;
      case Primitive::add_row:
      case Primitive::mul_row:
        ps.push_back(random_param("a", 3, 4, rng));
        ps.push_back(random_param("b", 1, 4, rng));
        break;
      case Primitive::mul_col:
        ps.push_back(random_param("a", 3, 4, rng));
        ps.push_back(random_param("b", 3, 1, rng));
        break;
      case Primitive::concat:
        ps.push_back(random_param("a", 3, 2, rng));
        ps.push_back(random_param("b", 3, 3, rng));
        break;
      case Primitive::relu:
      case Primitive::sigmoid:
      case Primitive::softmax:
      case Primitive::exp:
      case Primitive::sum_rows:
      case Primitive::mean:
        ps.push_back(random_param("a", 3, 4, rng));
        break;
      case Primitive::reciprocal:
        ps.push_back(random_param("a", 3, 4, rng, 0.5, 2.0));
        break;
      case Primitive::bce:
        ps.push_back(random_param("p", 3, 4, rng, 0.05, 0.95));
        ps.push_back(random_param("y", 3, 4, rng, 0.0, 1.0));
        break;
      default:
        ps.push_back(random_param("a", 3, 4, rng));
        ps.push_back(random_param("b", 3, 4, rng));
    }
    if (kind == Primitive::relu) push_off_kink(ps[0], 1e-4);
    std::vector<Parameter*> ptrs;
    for (auto& p : ps) ptrs.push_back(&p);
    auto f = [&](Tape& t) {
      std::vector<Var> in;
      for (auto& p : ps) in.push_back(t.parameter(p));
      return probe(t, apply(kind, std::span<const Var>(in)), seed);
    };
    EXPECT_LT(finite_difference_check(f, ptrs, 1e-6), 1e-5) << primitive_name(kind) << " seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(All, PrimitiveGradient,
                         ::testing::Values(Primitive::matmul, Primitive::add, Primitive::add_row, Primitive::sub,
                                           Primitive::mul, Primitive::mul_col, Primitive::mul_row, Primitive::concat,
                                           Primitive::relu, Primitive::sigmoid, Primitive::softmax, Primitive::exp,
                                           Primitive::reciprocal, Primitive::sum_rows, Primitive::mean,
                                           Primitive::row_dot, Primitive::mse, Primitive::bce),
                         [](const auto& info) { return std::string(primitive_name(info.param)); });

TEST(Relu, DerivativeAtZeroIsZero) {
  Parameter x("x", Tensor::row({0.0, 1.0, -1.0}));
  Tape tape;
  tape.backward(scale(mean(relu(tape.parameter(x))), 3.0));
  EXPECT_EQ(x.grad.data(), (std::vector<double>{0.0, 1.0, 0.0}));
}
