#pragma once

// Inner loops of the tensor engine. Each kernel exists twice: an OpenMP
// version used by the autodiff ops, and a plain serial version under
// `reference` that the kernel tests and the benchmark compare against.
//
// All buffers are row-major. Results never depend on the thread count: every
// output element is reduced by exactly one thread in a fixed order.

#include <cstddef>
#include <span>

namespace fhnet::kernels {

struct GemmDims {
  std::size_t m = 0;  // rows of op(A) and C
  std::size_t n = 0;  // cols of op(B) and C
  std::size_t k = 0;  // shared extent
  bool trans_a = false;  // A stored as [k, m]
  bool trans_b = false;  // B stored as [n, k]
};

// C (+)= op(A) * op(B)
void gemm(const GemmDims& d, const double* a, const double* b, double* c, bool accumulate);

struct Conv1dDims {
  std::size_t batch = 1;
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::size_t length = 0;
  std::size_t kernel = 1;
  std::size_t pad_left = 0;  // (k-1)/2 for same padding, k-1 for causal
};

// y[b,o,t] = bias[o] + sum_{c,j} w[o,c,j] * x[b,c,t+j-pad_left], zero outside [0,T).
void conv1d_forward(const Conv1dDims& d, const double* x, const double* w, const double* bias, double* y);
// Accumulates into dx, dw, dbias; any of them may be null.
void conv1d_backward(const Conv1dDims& d, const double* x, const double* w, const double* dy, double* dx,
                     double* dw, double* dbias);

namespace reference {

void gemm(const GemmDims& d, const double* a, const double* b, double* c, bool accumulate);
void conv1d_forward(const Conv1dDims& d, const double* x, const double* w, const double* bias, double* y);
void conv1d_backward(const Conv1dDims& d, const double* x, const double* w, const double* dy, double* dx,
                     double* dw, double* dbias);

}  // namespace reference

int max_threads();

}  // namespace fhnet::kernels
