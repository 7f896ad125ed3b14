#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "fhnet/kernels.hpp"

namespace k = fhnet::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Gemm, MatchesReferenceAcrossTransposeModes) {
  std::mt19937_64 rng(7);
  for (std::size_t m : {1u, 3u, 17u, 64u})
    for (std::size_t n : {1u, 5u, 33u})
      for (std::size_t kk : {1u, 8u, 70u})
        for (int mode = 0; mode < 4; ++mode) {
          k::GemmDims d{m, n, kk, (mode & 1) != 0, (mode & 2) != 0};
          auto a = random_vec(m * kk, rng);
          auto b = random_vec(kk * n, rng);
          auto c0 = random_vec(m * n, rng);
          auto c1 = c0;
          k::gemm(d, a.data(), b.data(), c0.data(), mode % 3 == 0);
          k::reference::gemm(d, a.data(), b.data(), c1.data(), mode % 3 == 0);
          ASSERT_LT(max_diff(c0, c1), 1e-12) << m << "x" << n << "x" << kk << " mode " << mode;
        }
}

TEST(Gemm, HandComputedProduct) {
  const double a[] = {1, 2, 3, 4};
  const double b[] = {5, 6};
  double c[2];
  k::gemm({2, 1, 2}, a, b, c, false);
  EXPECT_DOUBLE_EQ(c[0], 17.0);
  EXPECT_DOUBLE_EQ(c[1], 39.0);
}

TEST(Conv1d, ForwardAndBackwardMatchReference) {
  std::mt19937_64 rng(11);
  for (std::size_t kernel : {1u, 3u, 5u, 7u})
    for (bool causal : {false, true})
      for (std::size_t len : {1u, 4u, 50u}) {
        k::Conv1dDims d{2, 3, 4, len, kernel, causal ? kernel - 1 : (kernel - 1) / 2};
        auto x = random_vec(d.batch * d.c_in * len, rng);
        auto w = random_vec(d.c_out * d.c_in * kernel, rng);
        auto bias = random_vec(d.c_out, rng);
        auto dy = random_vec(d.batch * d.c_out * len, rng);
        std::vector<double> y0(dy.size()), y1(dy.size());
        k::conv1d_forward(d, x.data(), w.data(), bias.data(), y0.data());
        k::reference::conv1d_forward(d, x.data(), w.data(), bias.data(), y1.data());
        ASSERT_LT(max_diff(y0, y1), 1e-12);

        std::vector<double> dx0(x.size()), dx1(x.size()), dw0(w.size()), dw1(w.size()), db0(4), db1(4);
        k::conv1d_backward(d, x.data(), w.data(), dy.data(), dx0.data(), dw0.data(), db0.data());
        k::reference::conv1d_backward(d, x.data(), w.data(), dy.data(), dx1.data(), dw1.data(), db1.data());
        ASSERT_LT(max_diff(dx0, dx1), 1e-12);
        ASSERT_LT(max_diff(dw0, dw1), 1e-12);
        ASSERT_LT(max_diff(db0, db1), 1e-12);
      }
}

TEST(Conv1d, ResultIndependentOfRepeatedRuns) {
  std::mt19937_64 rng(3);
  k::Conv1dDims d{4, 16, 32, 256, 7, 3};
  auto x = random_vec(d.batch * d.c_in * d.length, rng);
  auto w = random_vec(d.c_out * d.c_in * d.kernel, rng);
  std::vector<double> y0(d.batch * d.c_out * d.length), y1(y0.size());
  k::conv1d_forward(d, x.data(), w.data(), nullptr, y0.data());
  k::conv1d_forward(d, x.data(), w.data(), nullptr, y1.data());
  EXPECT_EQ(y0, y1);
}
