#include <gtest/gtest.h>

#include <sstream>

#include "stan/ops.hpp"
#include "stan/serialize.hpp"
#include "stan/tensor.hpp"
#include "test_util.hpp"

using namespace stan;

TEST(Tensor, CopiesAliasCloneDetaches) {
  Tensor<float> a(Shape{2, 3}, 1.0f);
  Tensor<float> b = a;
  b[4] = 7.0f;
  EXPECT_EQ(a[4], 7.0f);
  auto c = a.clone();
  c[4] = 0.0f;
  EXPECT_EQ(a[4], 7.0f);
  EXPECT_FALSE(c.same_storage(a));
  EXPECT_EQ(numel(Shape{2, 3, 4}), 24u);
  EXPECT_EQ(to_string(Shape{2, 3}), "[2,3]");
}

TEST(Tensor, ValueCountMustMatchShape) {
  EXPECT_THROW(Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3}), std::invalid_argument);
}

TEST(Autograd, SharedInputAccumulates) {
  Tensor<double> x(Shape{1}, std::vector<double>{3.0}, true);
  auto y = add(mul(x, x), x);  // x^2 + x
  backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(Autograd, IntermediateGradIsKept) {
  Tensor<double> x(Shape{2}, std::vector<double>{1.0, 2.0}, true);
  auto h = scale(x, 3.0);
  auto loss = sum(mul(h, h));
  backward(loss);
  ASSERT_TRUE(h.has_grad());
  EXPECT_DOUBLE_EQ(h.grad()[1], 12.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 36.0);
}

TEST(Autograd, NoGradGuardSkipsRecording) {
  Tensor<double> x(Shape{2}, 1.0, true);
  {
    NoGradGuard g;
    EXPECT_FALSE(grad_enabled());
    auto y = sum(x);
    EXPECT_FALSE(y.node());
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_TRUE(sum(x).node());
}

TEST(Autograd, TopologicalOrderPutsInputsFirst) {
  Tensor<double> x(Shape{2}, 1.0, true);
  auto a = scale(x, 2.0);
  auto b = mul(a, x);
  auto c = sum(b);
  auto order = topological_order(c);
  auto pos = [&](const Tensor<double>& t) {
    for (std::size_t i = 0; i < order.size(); ++i)
      if (order[i].same_storage(t)) return i;
    return order.size();
  };
  EXPECT_LT(pos(a), pos(b));
  EXPECT_LT(pos(b), pos(c));
  EXPECT_EQ(pos(c), order.size() - 1);
}

TEST(Autograd, ExplicitSeed) {
  Tensor<double> x(Shape{3}, std::vector<double>{1, 2, 3}, true);
  auto y = scale(x, 2.0);
  std::vector<double> seed{1.0, 0.0, -1.0};
  backward(y, std::span<const double>(seed));
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 0.0);
  EXPECT_DOUBLE_EQ(x.grad()[2], -2.0);
}

TEST(Serialize, RoundTripIsExact) {
  std::mt19937_64 rng(1);
  auto t = stan::testing::random_tensor<float>(Shape{2, 3, 4}, rng);
  const auto bytes = encode_tensor(t);
  auto back = decode_tensor<float>(bytes);
  EXPECT_EQ(back.shape(), t.shape());
  EXPECT_EQ(back.values(), t.values());
  EXPECT_EQ(encode_tensor(back), bytes);
}

TEST(Serialize, RejectsTruncatedData) {
  Tensor<float> t(Shape{4}, 1.5f);
  auto bytes = encode_tensor(t);
  bytes.resize(bytes.size() - 2);
  EXPECT_ANY_THROW(decode_tensor<float>(bytes));
  EXPECT_ANY_THROW(decode_tensor<float>(std::string("XXXX")));
}
