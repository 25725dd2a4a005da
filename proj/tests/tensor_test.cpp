#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "fixtures.hpp"

using namespace panelcast;
using panelcast::testing::random_tensor;

namespace {

Tensor leaf(Shape s, std::vector<double> v) { return Tensor(std::move(s), std::move(v), true); }

void expect_values(const Tensor& t, const std::vector<double>& want, double tol = 1e-12) {
  ASSERT_EQ(t.numel(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(t.data()[i], want[i], tol) << "index " << i;
}

}  // namespace

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  const Tensor t({2, 3}, std::vector<double>(6, 1.0));
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.at({1, 2}), 1.0);
}

TEST(Tensor, GradHasDataShape) {
  Tensor x = leaf({2, 2}, {1, 2, 3, 4});
  backward(sum(square(x)));
  ASSERT_TRUE(x.has_grad());
  EXPECT_EQ(x.grad().size(), x.numel());
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Rng rng(1);
  const Tensor a = random_tensor({3, 3}, rng);
  const Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  expect_values(matmul(eye, a), a.to_vector());
}

TEST(Matmul, HandMultiplication) {
  const Tensor a({2, 2}, {1, 2, 3, 4});
  const Tensor b({2, 1}, {1, 1});
  const Tensor c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  expect_values(c, {3, 7});
}

TEST(Matmul, InnerDimensionMismatchThrows) {
  const Tensor a({2, 3}, std::vector<double>(6));
  EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(Matmul, BatchedAndSharedRightOperandGradients) {
  Rng rng(2);
  const Tensor b = random_tensor({3, 2}, rng);
  EXPECT_LT(finite_diff_check([&](const Tensor& a) { return sum(square(matmul(a, b))); }, random_tensor({2, 4, 3}, rng), 1e-5),
            1e-6);
  const Tensor a = random_tensor({2, 4, 3}, rng);
  EXPECT_LT(finite_diff_check([&](const Tensor& w) { return sum(square(matmul(a, w))); }, b, 1e-5), 1e-6);
  const Tensor c = random_tensor({2, 3, 5}, rng);
  EXPECT_LT(finite_diff_check([&](const Tensor& x) { return sum(square(matmul(x, c))); }, a, 1e-5), 1e-6);
}

TEST(Softmax, ConstantLogitsGiveUniform) {
  for (double c : {-3.0, 0.0, 7.5}) expect_values(softmax(Tensor({4}, {c, c, c, c}), 0), {0.25, 0.25, 0.25, 0.25});
}

TEST(Softmax, DirectExponentiation) {
  expect_values(softmax(Tensor({2}, {0.0, std::log(3.0)}), 0), {0.25, 0.75});
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  // exp(-1000) underflows to exactly 0 in double precision.
  const Tensor s = softmax(Tensor({2}, {1000.0, 0.0}), 0);
  EXPECT_EQ(s.data()[0], 1.0);
  EXPECT_EQ(s.data()[1], 0.0);
  EXPECT_TRUE(std::isfinite(s.data()[1]));
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  Rng rng(3);
  const Tensor x = random_tensor({3, 5}, rng, -4, 4);
  const Tensor s = softmax(x, 1);
  const Tensor shifted = softmax(add_scalar(x, 12.25), 1);
  for (std::size_t r = 0; r < 3; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < 5; ++c) {
      total += s.at({r, c});
      EXPECT_NEAR(s.at({r, c}), shifted.at({r, c}), 1e-12);
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Softmax, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  const Tensor w = random_tensor({3, 4}, rng);
  EXPECT_LT(finite_diff_check([&](const Tensor& x) { return sum(mul(softmax(x, 1), w)); }, random_tensor({3, 4}, rng), 1e-5),
            1e-6);
  EXPECT_LT(finite_diff_check([&](const Tensor& x) { return sum(mul(softmax(x, 0), w)); }, random_tensor({3, 4}, rng), 1e-5),
            1e-6);
}

TEST(LogTransforms, ZeroAndInverse) {
  expect_values(log1p(Tensor::scalar(0.0)), {0.0});
  expect_values(expm1(Tensor::scalar(0.0)), {0.0});
  for (double v : {0.0, 1e-9, 0.5, 3.0, 1234.5, 1e6}) {
    const double back = expm1(log1p(Tensor::scalar(v))).item();
    EXPECT_LE(std::abs(back - v), 1e-12 * std::max(1.0, v)) << v;
  }
  EXPECT_NEAR(log1p(Tensor::scalar(std::numbers::e - 1.0)).item(), 1.0, 1e-15);
}

TEST(LogTransforms, DomainError) { EXPECT_THROW(log1p(Tensor::scalar(-1.0)), DomainError); }

TEST(Reduce, HandValues) {
  EXPECT_EQ(mean(Tensor({3}, {2, 2, 2})).item(), 2.0);
  EXPECT_EQ(sum(Tensor::zeros({4, 2})).item(), 0.0);
  EXPECT_EQ(mean(Tensor({4}, {1, 2, 3, 4})).item(), 2.5);
  const Tensor m({2, 3}, {1, 2, 3, 4, 5, 6});
  expect_values(reduce(m, Reduction::sum, 0), {5, 7, 9});
  expect_values(reduce(m, Reduction::mean, 1), {2, 5});
  expect_values(reduce(m, Reduction::sum, -1), {6, 15});
}

TEST(Reduce, AxisGradients) {
  Rng rng(5);
  const Tensor w = random_tensor({2, 4}, rng);
  EXPECT_LT(finite_diff_check([&](const Tensor& x) { return sum(mul(reduce(x, Reduction::mean, 1), w)); },
                              random_tensor({2, 3, 4}, rng), 1e-5),
            1e-6);
}

TEST(Backward, LeafIdentity) {
  Tensor x = leaf({}, {3.0});
  backward(x);
  EXPECT_EQ(x.grad()[0], 1.0);
}

TEST(Backward, SquareSum) {
  Tensor x = leaf({3}, {1, 2, 3});
  backward(sum(mul(x, x)));
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{2, 4, 6}));
}

TEST(Backward, FanOutAccumulates) {
  Tensor y = leaf({3}, {5, -1, 2});
  backward(add(sum(y), sum(y)));
  for (double g : y.grad()) EXPECT_EQ(g, 2.0);
}

TEST(Backward, LeafGradientsAccumulateAcrossCalls) {
  Tensor x = leaf({2}, {1, 2});
  backward(sum(x));
  backward(sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 2.0);
  x.zero_grad();
  for (double g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, RejectsNonScalarAndDetached) {
  Tensor x = leaf({2}, {1, 2});
  EXPECT_THROW(backward(square(x)), ShapeError);
  EXPECT_THROW(backward(sum(Tensor({2}, {1, 2}))), std::logic_error);
}

TEST(Tape, TopologicalOrderAndRootGradient) {
  Tensor x = leaf({2}, {0.5, -0.25});
  const Tensor a = tanh(x);
  const Tensor b = mul(a, x);
  const Tensor loss = sum(add(b, a));
  const auto tape = ComputationTape::record(loss);
  const auto entries = tape.entries();
  ASSERT_EQ(tape.size(), 5u);
  for (std::size_t i = 0; i < entries.size(); ++i)
    for (const auto& in : entries[i]->inputs) {
      if (!in->requires_grad) continue;
      const auto pos = std::find(entries.begin(), entries.end(), in.get()) - entries.begin();
      EXPECT_LT(static_cast<std::size_t>(pos), i);
    }
  tape.replay_reverse();
  EXPECT_EQ(loss.grad()[0], 1.0);
  // d/dx [tanh(x) x + tanh(x)] = sech^2(x)(x + 1) + tanh(x)
  for (std::size_t i = 0; i < 2; ++i) {
    const double v = x.data()[i];
    const double s = 1.0 / std::cosh(v);
    EXPECT_NEAR(x.grad()[i], s * s * (v + 1.0) + std::tanh(v), 1e-14);
  }
}

TEST(Tape, BranchOrderDoesNotChangeGradients) {
  Rng rng(6);
  const Tensor base = random_tensor({4}, rng);
  Tensor x1(base.shape(), base.to_vector(), true);
  Tensor x2(base.shape(), base.to_vector(), true);
  backward(add(add(sum(tanh(x1)), sum(square(x1))), sum(sigmoid(x1))));
  backward(add(add(sum(sigmoid(x2)), sum(square(x2))), sum(tanh(x2))));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(x1.grad()[i], x2.grad()[i], 1e-12);
}

TEST(Broadcasting, BiasAndScalar) {
  const Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  expect_values(add(x, Tensor({3}, {10, 20, 30})), {11, 22, 33, 14, 25, 36});
  expect_values(mul(x, Tensor::scalar(2.0)), {2, 4, 6, 8, 10, 12});
  EXPECT_THROW(add(x, Tensor({2}, {1, 1})), ShapeError);
  Rng rng(7);
  const Tensor b = random_tensor({3}, rng);
  EXPECT_LT(finite_diff_check([&](const Tensor& v) { return sum(square(add(x, v))); }, b, 1e-5), 1e-6);
}

TEST(ShapeOps, ValuesAndGradients) {
  Rng rng(8);
  const Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  expect_values(transpose_last(a), {1, 4, 2, 5, 3, 6});
  expect_values(slice(a, 1, 1, 2), {2, 3, 5, 6});
  expect_values(concat({a, Tensor({2, 1}, {7, 8})}, 1), {1, 2, 3, 7, 4, 5, 6, 8});
  expect_values(repeat_new_axis(Tensor({2}, {1, 2}), 0, 2), {1, 2, 1, 2});
  const Tensor table({3, 2}, {0, 1, 10, 11, 20, 21});
  const std::vector<std::size_t> ids{2, 0};
  expect_values(gather_rows(table, ids), {20, 21, 0, 1});
  EXPECT_THROW(reshape(a, {4}), ShapeError);

  const Tensor w = random_tensor({2, 3, 5}, rng);
  EXPECT_LT(finite_diff_check(
                [&](const Tensor& x) {
                  const Tensor parts = concat({slice(x, 2, 0, 2), slice(x, 2, 2, 3)}, 2);
                  return sum(mul(parts, w));
                },
                random_tensor({2, 3, 5}, rng), 1e-5),
            1e-6);
  const Tensor w2 = random_tensor({2, 4, 3}, rng);
  EXPECT_LT(finite_diff_check([&](const Tensor& x) { return sum(mul(repeat_new_axis(x, 1, 4), w2)); },
                              random_tensor({2, 3}, rng), 1e-5),
            1e-6);
  const Tensor w3 = random_tensor({2, 4, 3}, rng);
  EXPECT_LT(finite_diff_check([&](const Tensor& x) { return sum(mul(transpose_last(x), w3)); }, random_tensor({2, 3, 4}, rng),
                              1e-5),
            1e-6);
}

TEST(GatherRows, RepeatedIdsAccumulate) {
  Tensor table = leaf({4, 2}, std::vector<double>(8, 0.5));
  const std::vector<std::size_t> ids{3, 3};
  backward(sum(gather_rows(table, ids)));
  EXPECT_EQ(table.grad()[6], 2.0);
  EXPECT_EQ(table.grad()[7], 2.0);
  EXPECT_EQ(table.grad()[0], 0.0);
}

TEST(Elementwise, SmoothOpsMatchFiniteDifferences) {
  Rng rng(9);
  const Tensor x = random_tensor({10}, rng);
  const auto check = [&](auto f) { return finite_diff_check([&](const Tensor& v) { return sum(f(v)); }, x, 1e-5); };
  EXPECT_LT(check([](const Tensor& v) { return tanh(v); }), 1e-6);
  EXPECT_LT(check([](const Tensor& v) { return sigmoid(v); }), 1e-6);
  EXPECT_LT(check([](const Tensor& v) { return one_minus(v); }), 1e-6);
  EXPECT_LT(check([](const Tensor& v) { return expm1(v); }), 1e-6);
  EXPECT_LT(check([](const Tensor& v) { return log1p(add_scalar(v, 1.5)); }), 1e-6);
  EXPECT_LT(check([](const Tensor& v) { return scale(sub(v, square(v)), 3.0); }), 1e-6);
  EXPECT_LT(check([](const Tensor& v) { return mul(relu(v), v); }), 1e-6);
}

TEST(Standardize, GradientMatchesFiniteDifferences) {
  Rng rng(10);
  const Tensor w = random_tensor({3, 4}, rng);
  EXPECT_LT(finite_diff_check([&](const Tensor& x) { return sum(mul(standardize_last(x, 1e-5), w)); },
                              random_tensor({3, 4}, rng), 1e-5),
            1e-6);
}

TEST(FiniteDiff, LinearAndQuadratic) {
  Rng rng(11);
  EXPECT_LT(finite_diff_check([](const Tensor& x) { return sum(x); }, random_tensor({6}, rng), 1e-5), 1e-10);
  EXPECT_LT(finite_diff_check([](const Tensor& x) { return sum(mul(x, x)); }, random_tensor({10}, rng), 1e-5), 1e-6);
}

TEST(FiniteDiff, DetectsWrongGradient) {
  // A node whose recorded rule doubles the true derivative.
  const auto broken = [](const Tensor& x) {
    auto out = make_result(x.shape(), x.to_vector(), {x}, [](detail::Node& self) {
      auto& g = self.inputs[0]->grad;
      self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * self.grad[i];
    });
    return sum(out);
  };
  Rng rng(12);
  EXPECT_GT(finite_diff_check(broken, random_tensor({3}, rng), 1e-5), 0.4);
}

TEST(FiniteDiff, ParameterOverloadRestoresValues) {
  Rng rng(13);
  Tensor p = random_tensor({4}, rng, -1, 1, true);
  const auto before = p.to_vector();
  std::vector<Tensor> params{p};
  EXPECT_LT(finite_diff_check([&] { return sum(tanh(p)); }, params, 1e-5), 1e-6);
  EXPECT_EQ(p.to_vector(), before);
}

TEST(FiniteDiff, ErrorMeasureFloorsNearZeroDerivatives) {
  EXPECT_DOUBLE_EQ(gradient_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(gradient_error(-1.0, 1.0), 2.0);
  // A structurally zero derivative against central-difference noise.
  EXPECT_LT(gradient_error(1e-17, 2e-10), 1e-4);
  EXPECT_GT(gradient_error(0.0, 1e-8), 1e-4);
}
