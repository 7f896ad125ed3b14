#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fhnet/autodiff.hpp"
#include "fhnet/optim.hpp"

using namespace fhnet;
namespace ad = fhnet::ad;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

Shape random_shape(std::mt19937_64& rng, std::size_t rank, std::size_t max_extent = 4) {
  std::uniform_int_distribution<std::size_t> e(1, max_extent);
  Shape s(rank);
  for (auto& d : s) d = e(rng);
  return s;
}

// Contract a result with fixed random weights so every output coordinate feeds the loss.
ad::Var weighted_sum(const ad::Var& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ad::sum(ad::mul(y, ad::constant(random_tensor(y.shape(), rng))));
}

}  // namespace

TEST(Matmul, Examples) {
  auto a = ad::constant(Tensor::from({2, 2}, {1, 2, 3, 4}));
  auto id = ad::constant(Tensor::eye(2));
  EXPECT_EQ(ad::matmul(a, id).value(), a.value());

  auto b = ad::constant(Tensor::from({2, 1}, {5, 6}));
  auto c = ad::matmul(a, b).value();
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_DOUBLE_EQ(c[0], 17.0);
  EXPECT_DOUBLE_EQ(c[1], 39.0);

  std::mt19937_64 rng(1);
  auto z = ad::matmul(ad::constant(Tensor::zeros({3, 4})), ad::constant(random_tensor({4, 2}, rng))).value();
  EXPECT_EQ(z, Tensor::zeros({3, 2}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    ad::matmul(ad::constant(Tensor::zeros({2, 3})), ad::constant(Tensor::zeros({4, 2})));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("(2, 3)"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("(4, 2)"), std::string::npos);
  }
}

TEST(Matmul, AssociativeOnRandomMatrices) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto s = random_shape(rng, 4, 5);
    auto a = ad::constant(random_tensor({s[0], s[1]}, rng));
    auto b = ad::constant(random_tensor({s[1], s[2]}, rng));
    auto c = ad::constant(random_tensor({s[2], s[3]}, rng));
    auto left = ad::matmul(ad::matmul(a, b), c).value();
    auto right = ad::matmul(a, ad::matmul(b, c)).value();
    EXPECT_LT(max_abs_diff(left, right), 1e-10);
  }
}

TEST(Matmul, BroadcastsBatchExtents) {
  std::mt19937_64 rng(2);
  auto a = random_tensor({3, 1, 2, 4}, rng);
  auto b = random_tensor({5, 4, 3}, rng);
  auto c = ad::matmul(ad::constant(a), ad::constant(b)).value();
  ASSERT_EQ(c.shape(), (Shape{3, 5, 2, 3}));
  // spot-check one batch entry against a direct contraction
  double s = 0.0;
  for (std::size_t p = 0; p < 4; ++p) s += a.at({2, 0, 1, p}) * b.at({4, p, 2});
  EXPECT_NEAR(c.at({2, 4, 1, 2}), s, 1e-14);
}

TEST(Softmax, Examples) {
  auto u = ad::softmax_last(ad::constant(Tensor::zeros({3}))).value();
  for (double v : u.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  auto p = ad::softmax_last(ad::constant(Tensor::from({2}, {0.0, std::log(3.0)}))).value();
  EXPECT_NEAR(p[0], 0.25, 1e-15);
  EXPECT_NEAR(p[1], 0.75, 1e-15);
}

TEST(Softmax, RowsAreStochastic) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    auto s = random_shape(rng, 3, 6);
    auto y = ad::softmax_last(ad::constant(random_tensor(s, rng, -30.0, 30.0))).value();
    for (std::size_t r = 0; r < y.size() / s.back(); ++r) {
      double total = 0.0;
      for (std::size_t j = 0; j < s.back(); ++j) {
        const double v = y[r * s.back() + j];
        EXPECT_GT(v, 0.0);
        EXPECT_LE(v, 1.0);
        total += v;
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Softmax, CausalMaskGivesExactZeros) {
  std::mt19937_64 rng(4);
  auto y = ad::softmax_last(ad::constant(random_tensor({2, 4, 4}, rng)), true).value();
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 4; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < 4; ++j) {
        if (j > i) EXPECT_EQ(y.at({b, i, j}), 0.0);
        total += y.at({b, i, j});
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
}

TEST(LayerNorm, Examples) {
  auto g3 = ad::constant(Tensor::ones({3}));
  auto b3 = ad::constant(Tensor::zeros({3}));
  auto flat = ad::layer_norm(ad::constant(Tensor::from({3}, {5, 5, 5})), g3, b3).value();
  EXPECT_EQ(flat, Tensor::zeros({3}));

  // direct formula: mean 2, biased variance 2/3, output (x-2)/sqrt(2/3 + 1e-5)
  auto y = ad::layer_norm(ad::constant(Tensor::from({3}, {1, 2, 3})), g3, b3).value();
  const double denom = std::sqrt(2.0 / 3.0 + 1e-5);
  EXPECT_NEAR(y[0], -1.0 / denom, 1e-14);
  EXPECT_NEAR(y[1], 0.0, 1e-14);
  EXPECT_NEAR(y[2], 1.0 / denom, 1e-14);

  auto biased = ad::layer_norm(ad::constant(Tensor::zeros({2})), ad::constant(Tensor::ones({2})),
                               ad::constant(Tensor::from({2}, {7, 7})))
                    .value();
  EXPECT_EQ(biased, Tensor::from({2}, {7, 7}));
}

TEST(LayerNorm, OutputStatistics) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 4 + trial % 20;
    auto x = random_tensor({3, n}, rng, -50.0, 50.0);
    auto y = ad::layer_norm(ad::constant(x), ad::constant(Tensor::ones({n})), ad::constant(Tensor::zeros({n}))).value();
    for (std::size_t r = 0; r < 3; ++r) {
      double mu = 0.0, var = 0.0;
      for (std::size_t j = 0; j < n; ++j) mu += y[r * n + j];
      mu /= static_cast<double>(n);
      for (std::size_t j = 0; j < n; ++j) var += (y[r * n + j] - mu) * (y[r * n + j] - mu);
      var /= static_cast<double>(n);
      EXPECT_LT(std::abs(mu), 1e-9);
      EXPECT_LT(std::abs(var - 1.0), 1e-6);
    }
  }
}

TEST(Conv1d, Examples) {
  auto x = ad::constant(Tensor::from({1, 3}, {1, 2, 3}));
  auto ident = ad::conv1d_same(x, ad::constant(Tensor::from({1, 1, 1}, {1})), ad::constant(Tensor::zeros({1})));
  EXPECT_EQ(ident.value(), x.value());
  auto delta = ad::conv1d_same(x, ad::constant(Tensor::from({1, 1, 3}, {0, 1, 0})), ad::Var());
  EXPECT_EQ(delta.value(), x.value());

  // oracle: zero-padded sliding sum
  const std::vector<double> in{1, 2, 3};
  std::vector<double> expect(3, 0.0);
  for (int t = 0; t < 3; ++t)
    for (int j = -1; j <= 1; ++j)
      if (t + j >= 0 && t + j < 3) expect[static_cast<std::size_t>(t)] += in[static_cast<std::size_t>(t + j)];
  auto box = ad::conv1d_same(x, ad::constant(Tensor::from({1, 1, 3}, {1, 1, 1})), ad::constant(Tensor::zeros({1})));
  EXPECT_EQ(box.value(), Tensor({1, 3}, expect));
  EXPECT_EQ(box.value(), Tensor::from({1, 3}, {3, 6, 5}));
}

TEST(Conv1d, EvenKernelRejected) {
  EXPECT_THROW(ad::conv1d_same(ad::constant(Tensor::zeros({1, 4})), ad::constant(Tensor::zeros({1, 1, 2})), ad::Var()),
               ShapeError);
}

TEST(Elementwise, Examples) {
  auto z = ad::constant(Tensor::scalar(0.0));
  EXPECT_EQ(ad::mul(ad::tanh(z), ad::sigmoid(z)).value().item(), 0.0);
  std::vector<ad::Var> one{ad::constant(Tensor::from({2}, {-1, 2}))};
  EXPECT_EQ(ad::elementwise(ad::ElementwiseOp::kRelu, one).value(), Tensor::from({2}, {0, 2}));
  std::vector<ad::Var> two{ad::constant(Tensor::from({2}, {1, 2})), ad::constant(Tensor::from({2}, {3, 4}))};
  EXPECT_EQ(ad::elementwise(ad::ElementwiseOp::kAdd, two).value(), Tensor::from({2}, {4, 6}));
  EXPECT_THROW(ad::add(ad::constant(Tensor::zeros({2, 3})), ad::constant(Tensor::zeros({4}))), ShapeError);
}

TEST(Backward, Examples) {
  auto x = ad::leaf(Tensor::from({3}, {0.3, -1.0, 2.0}));
  auto loss = ad::sum(x);
  ad::backward(loss);
  EXPECT_EQ(x.grad(), Tensor::ones({3}));

  auto y = ad::leaf(Tensor::from({2}, {1, 2}));
  auto sq = ad::sum(ad::mul(y, y));
  ad::backward(sq);
  EXPECT_EQ(y.grad(), Tensor::from({2}, {2, 4}));
}

TEST(Backward, RejectsNonScalarAndRepeatedCalls) {
  auto x = ad::leaf(Tensor::from({2}, {1, 2}));
  EXPECT_THROW(ad::backward(ad::scale(x, 2.0)), ShapeError);
  auto loss = ad::sum(x);
  ad::backward(loss);
  EXPECT_THROW(ad::backward(loss), std::logic_error);
  ad::reset(loss);
  ad::backward(loss);
  EXPECT_EQ(x.grad(), Tensor::ones({2}));
}

TEST(Backward, DetectsCycle) {
  auto x = ad::leaf(Tensor::from({1}, {1}));
  auto y = ad::scale(x, 2.0);
  auto z = ad::sum(y);
  y.node()->parents.push_back(z.node());  // corrupt the record on purpose
  EXPECT_THROW(ad::backward(z), std::logic_error);
  y.node()->parents.pop_back();
}

// Every differentiable op against central differences on randomized shapes.
class OpGradient : public ::testing::TestWithParam<int> {};

TEST_P(OpGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(100 + static_cast<std::uint64_t>(GetParam()));
  const std::uint64_t wseed = rng();
  auto check = [&](const MultiScalarFn& fn, const std::vector<Tensor>& pts, const char* what) {
    GradCheckOptions opt;
    auto r = grad_check(fn, pts, opt);
    EXPECT_LT(r.max_rel_error, 1e-4) << what;
    EXPECT_GT(r.checked, 0u) << what;
  };
  const auto s = random_shape(rng, 3);
  const std::size_t m = s[0], k = s[1], n = s[2];
  check([&](const auto& v) { return weighted_sum(ad::matmul(v[0], v[1]), wseed); },
        {random_tensor({2, m, k}, rng), random_tensor({k, n}, rng)}, "matmul");
  check([&](const auto& v) { return weighted_sum(ad::add(v[0], v[1]), wseed); },
        {random_tensor({m, k}, rng), random_tensor({k}, rng)}, "add-broadcast");
  check([&](const auto& v) { return weighted_sum(ad::sub(v[0], v[1]), wseed); },
        {random_tensor({m, 1}, rng), random_tensor({1, n}, rng)}, "sub-broadcast");
  check([&](const auto& v) { return weighted_sum(ad::mul(v[0], v[1]), wseed); },
        {random_tensor({m, n}, rng), random_tensor({m, 1}, rng)}, "mul-broadcast");
  check([&](const auto& v) { return weighted_sum(ad::mul(ad::tanh(v[0]), ad::sigmoid(v[0])), wseed); },
        {random_tensor({m, n}, rng, -2, 2)}, "gtu");
  check([&](const auto& v) { return weighted_sum(ad::relu(v[0]), wseed); }, {random_tensor({m, n + 8}, rng)}, "relu");
  check([&](const auto& v) { return weighted_sum(ad::softmax_last(v[0]), wseed); },
        {random_tensor({m, k, n + 1}, rng, -3, 3)}, "softmax");
  check([&](const auto& v) { return weighted_sum(ad::softmax_last(v[0], true), wseed); },
        {random_tensor({2, n + 1, n + 1}, rng, -3, 3)}, "softmax-causal");
  check([&](const auto& v) { return weighted_sum(ad::layer_norm(v[0], v[1], v[2]), wseed); },
        {random_tensor({m, n + 2}, rng), random_tensor({n + 2}, rng), random_tensor({n + 2}, rng)}, "layer_norm");
  const std::size_t kw = 1 + 2 * (k % 3);
  check([&](const auto& v) { return weighted_sum(ad::conv1d(v[0], v[1], v[2]), wseed); },
        {random_tensor({2, m, n + 3}, rng), random_tensor({k, m, kw}, rng), random_tensor({k}, rng)}, "conv1d");
  check([&](const auto& v) { return weighted_sum(ad::conv1d(v[0], v[1], v[2], ad::Padding::kCausal), wseed); },
        {random_tensor({m, n + 3}, rng), random_tensor({k, m, kw + 1}, rng), random_tensor({k}, rng)}, "conv1d-causal");
  check([&](const auto& v) { return weighted_sum(ad::permute(v[0], {2, 0, 1}), wseed); },
        {random_tensor({m, k, n}, rng)}, "permute");
  check([&](const auto& v) { return weighted_sum(ad::reshape(v[0], {m * k, n}), wseed); },
        {random_tensor({m, k, n}, rng)}, "reshape");
  check([&](const auto& v) { return weighted_sum(ad::concat({v[0], v[1]}, 1), wseed); },
        {random_tensor({m, k, n}, rng), random_tensor({m, 2, n}, rng)}, "concat");
  check([&](const auto& v) { return weighted_sum(ad::slice(v[0], -1, 1, n + 1), wseed); },
        {random_tensor({m, n + 2}, rng)}, "slice");
  check([&](const auto& v) { return weighted_sum(ad::mean_axis(v[0], 1), wseed); },
        {random_tensor({m, k, n}, rng)}, "mean_axis");
  check([&](const auto& v) { return ad::mse(v[0], v[1]); }, {random_tensor({m, n}, rng), random_tensor({m, n}, rng)},
        "mse");
}

INSTANTIATE_TEST_SUITE_P(RandomShapes, OpGradient, ::testing::Range(0, 8));

TEST(Tensor, InvariantsEnforced) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor(Shape{0, 3}), ShapeError);
  Tensor t({2});
  t[1] = std::nan("");
  EXPECT_FALSE(t.all_finite());
  EXPECT_THROW(t.check_finite("test"), NonFiniteError);
}
