#include "fhnet/kernels.hpp"

#include <algorithm>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fhnet::kernels {

namespace {

// Below this many multiply-adds the thread fork costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 14;

inline double a_at(const GemmDims& d, const double* a, std::size_t i, std::size_t p) {
  return d.trans_a ? a[p * d.m + i] : a[i * d.k + p];
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void gemm(const GemmDims& d, const double* a, const double* b, double* c, bool accumulate) {
  const auto m = static_cast<std::int64_t>(d.m);
  const std::size_t n = d.n;
  const std::size_t k = d.k;
  const bool par = d.m * d.n * d.k >= kParallelWork;
  if (!d.trans_b) {
#pragma omp parallel for schedule(static) if (par)
    for (std::int64_t ii = 0; ii < m; ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      double* crow = c + i * n;
      if (!accumulate) std::fill(crow, crow + n, 0.0);
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = a_at(d, a, i, p);
        if (aip == 0.0) continue;
        const double* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
  } else {
#pragma omp parallel for schedule(static) if (par)
    for (std::int64_t ii = 0; ii < m; ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double* brow = b + j * k;
        double s = 0.0;
        if (!d.trans_a) {
          const double* arow = a + i * k;
          for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
        } else {
          for (std::size_t p = 0; p < k; ++p) s += a[p * d.m + i] * brow[p];
        }
        crow[j] = accumulate ? crow[j] + s : s;
      }
    }
  }
}

void conv1d_forward(const Conv1dDims& d, const double* x, const double* w, const double* bias, double* y) {
  const std::size_t T = d.length;
  const auto rows = static_cast<std::int64_t>(d.batch * d.c_out);
  const bool par = d.batch * d.c_out * d.c_in * d.kernel * T >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::size_t bi = static_cast<std::size_t>(r) / d.c_out;
    const std::size_t o = static_cast<std::size_t>(r) % d.c_out;
    double* yrow = y + static_cast<std::size_t>(r) * T;
    std::fill(yrow, yrow + T, bias ? bias[o] : 0.0);
    for (std::size_t c = 0; c < d.c_in; ++c) {
      const double* xrow = x + (bi * d.c_in + c) * T;
      const double* wrow = w + (o * d.c_in + c) * d.kernel;
      for (std::size_t j = 0; j < d.kernel; ++j) {
        const double wj = wrow[j];
        // t + j - pad in [0, T)
        const std::int64_t shift = static_cast<std::int64_t>(j) - static_cast<std::int64_t>(d.pad_left);
        const std::size_t t0 = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
        const std::size_t t1 =
            shift > 0 ? (T > static_cast<std::size_t>(shift) ? T - static_cast<std::size_t>(shift) : 0) : T;
        for (std::size_t t = t0; t < t1; ++t) yrow[t] += wj * xrow[static_cast<std::int64_t>(t) + shift];
      }
    }
  }
}

void conv1d_backward(const Conv1dDims& d, const double* x, const double* w, const double* dy, double* dx,
                     double* dw, double* dbias) {
  const std::size_t T = d.length;
  const bool par = d.batch * d.c_out * d.c_in * d.kernel * T >= kParallelWork;
  if (dx) {
    const auto rows = static_cast<std::int64_t>(d.batch * d.c_in);
#pragma omp parallel for schedule(static) if (par)
    for (std::int64_t r = 0; r < rows; ++r) {
      const std::size_t bi = static_cast<std::size_t>(r) / d.c_in;
      const std::size_t c = static_cast<std::size_t>(r) % d.c_in;
      double* dxrow = dx + static_cast<std::size_t>(r) * T;
      for (std::size_t o = 0; o < d.c_out; ++o) {
        const double* dyrow = dy + (bi * d.c_out + o) * T;
        const double* wrow = w + (o * d.c_in + c) * d.kernel;
        for (std::size_t j = 0; j < d.kernel; ++j) {
          const double wj = wrow[j];
          const std::int64_t shift = static_cast<std::int64_t>(j) - static_cast<std::int64_t>(d.pad_left);
          const std::size_t t0 = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
          const std::size_t t1 =
              shift > 0 ? (T > static_cast<std::size_t>(shift) ? T - static_cast<std::size_t>(shift) : 0) : T;
          for (std::size_t t = t0; t < t1; ++t) dxrow[static_cast<std::int64_t>(t) + shift] += wj * dyrow[t];
        }
      }
    }
  }
  if (dw || dbias) {
    const auto outs = static_cast<std::int64_t>(d.c_out);
#pragma omp parallel for schedule(static) if (par)
    for (std::int64_t oo = 0; oo < outs; ++oo) {
      const auto o = static_cast<std::size_t>(oo);
      for (std::size_t bi = 0; bi < d.batch; ++bi) {
        const double* dyrow = dy + (bi * d.c_out + o) * T;
        if (dbias) {
          double s = 0.0;
          for (std::size_t t = 0; t < T; ++t) s += dyrow[t];
          dbias[o] += s;
        }
        if (!dw) continue;
        for (std::size_t c = 0; c < d.c_in; ++c) {
          const double* xrow = x + (bi * d.c_in + c) * T;
          double* dwrow = dw + (o * d.c_in + c) * d.kernel;
          for (std::size_t j = 0; j < d.kernel; ++j) {
            const std::int64_t shift = static_cast<std::int64_t>(j) - static_cast<std::int64_t>(d.pad_left);
            const std::size_t t0 = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
            const std::size_t t1 =
                shift > 0 ? (T > static_cast<std::size_t>(shift) ? T - static_cast<std::size_t>(shift) : 0) : T;
            double s = 0.0;
            for (std::size_t t = t0; t < t1; ++t) s += dyrow[t] * xrow[static_cast<std::int64_t>(t) + shift];
            dwrow[j] += s;
          }
        }
      }
    }
  }
}

namespace reference {

void gemm(const GemmDims& d, const double* a, const double* b, double* c, bool accumulate) {
  for (std::size_t i = 0; i < d.m; ++i)
    for (std::size_t j = 0; j < d.n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < d.k; ++p) {
        const double av = d.trans_a ? a[p * d.m + i] : a[i * d.k + p];
        const double bv = d.trans_b ? b[j * d.k + p] : b[p * d.n + j];
        s += av * bv;
      }
      c[i * d.n + j] = accumulate ? c[i * d.n + j] + s : s;
    }
}

void conv1d_forward(const Conv1dDims& d, const double* x, const double* w, const double* bias, double* y) {
  const auto T = static_cast<std::int64_t>(d.length);
  for (std::size_t bi = 0; bi < d.batch; ++bi)
    for (std::size_t o = 0; o < d.c_out; ++o)
      for (std::int64_t t = 0; t < T; ++t) {
        double s = bias ? bias[o] : 0.0;
        for (std::size_t c = 0; c < d.c_in; ++c)
          for (std::size_t j = 0; j < d.kernel; ++j) {
            const std::int64_t src = t + static_cast<std::int64_t>(j) - static_cast<std::int64_t>(d.pad_left);
            if (src < 0 || src >= T) continue;
            s += w[(o * d.c_in + c) * d.kernel + j] * x[(bi * d.c_in + c) * d.length + static_cast<std::size_t>(src)];
          }
        y[(bi * d.c_out + o) * d.length + static_cast<std::size_t>(t)] = s;
      }
}

void conv1d_backward(const Conv1dDims& d, const double* x, const double* w, const double* dy, double* dx,
                     double* dw, double* dbias) {
  const auto T = static_cast<std::int64_t>(d.length);
  for (std::size_t bi = 0; bi < d.batch; ++bi)
    for (std::size_t o = 0; o < d.c_out; ++o)
      for (std::int64_t t = 0; t < T; ++t) {
        const double g = dy[(bi * d.c_out + o) * d.length + static_cast<std::size_t>(t)];
        if (dbias) dbias[o] += g;
        for (std::size_t c = 0; c < d.c_in; ++c)
          for (std::size_t j = 0; j < d.kernel; ++j) {
            const std::int64_t src = t + static_cast<std::int64_t>(j) - static_cast<std::int64_t>(d.pad_left);
            if (src < 0 || src >= T) continue;
            const std::size_t xi = (bi * d.c_in + c) * d.length + static_cast<std::size_t>(src);
            const std::size_t wi = (o * d.c_in + c) * d.kernel + j;
            if (dx) dx[xi] += w[wi] * g;
            if (dw) dw[wi] += x[xi] * g;
          }
      }
}

}  // namespace reference

}  // namespace fhnet::kernels
