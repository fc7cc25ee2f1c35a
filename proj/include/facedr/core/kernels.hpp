#pragma once

#include <cstdint>

#include "facedr/core/tensor.hpp"

// Data-parallel kernels behind the autodiff ops. Every kernel has two
// implementations with identical signatures:
//
//   facedr::kern::         OpenMP-parallel versions used in production
//   facedr::kern::serial:: straight-loop reference versions kept for testing
//
// Parallel versions assign every output element to exactly one thread, and
// reductions use a fixed chunk decomposition independent of the thread
// count, so results are reproducible run to run for any thread count.
// tests/test_kernels.cpp pins the agreement between the two namespaces.

namespace facedr::kern {

// ---- GEMM (row-major) ----
// C[M,N] = A[M,K] * B[K,N]       (+C if accumulate)
template <typename T>
void gemm_nn(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C, bool accumulate);
// C[M,N] = A[M,K] * B[N,K]^T
template <typename T>
void gemm_nt(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C, bool accumulate);
// C[M,N] = A[K,M]^T * B[K,N]
template <typename T>
void gemm_tn(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C, bool accumulate);

// ---- convolution (NCHW, square kernels kh=kw) ----
template <typename T>
void im2col(const T* x, int64_t C, int64_t H, int64_t W, int64_t k, int64_t stride, int64_t pad,
            T* col);  // col[C*k*k, Ho*Wo]
template <typename T>
void col2im(const T* col, int64_t C, int64_t H, int64_t W, int64_t k, int64_t stride, int64_t pad,
            T* x);  // accumulates into x

inline int64_t conv_out_dim(int64_t in, int64_t k, int64_t stride, int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

template <typename T>
void conv2d_forward(const TensorT<T>& x, const TensorT<T>& w, int64_t stride, int64_t pad,
                    TensorT<T>& y);
template <typename T>
void conv2d_input_grad(const TensorT<T>& gy, const TensorT<T>& w, int64_t stride, int64_t pad,
                       int64_t H, int64_t W, TensorT<T>& dx);
template <typename T>
void conv2d_weight_grad(const TensorT<T>& x, const TensorT<T>& gy, int64_t stride, int64_t pad,
                        int64_t k, TensorT<T>& dw);

// ---- elementwise ----
template <typename T> void fill(T* y, int64_t n, T v);
template <typename T> void copy(const T* x, T* y, int64_t n);
template <typename T> void add(const T* a, const T* b, T* y, int64_t n);
template <typename T> void sub(const T* a, const T* b, T* y, int64_t n);
template <typename T> void mul(const T* a, const T* b, T* y, int64_t n);
template <typename T> void div(const T* a, const T* b, T* y, int64_t n);
template <typename T> void axpy(T alpha, const T* x, T* y, int64_t n);  // y += alpha*x
template <typename T> void scale(const T* x, T alpha, T* y, int64_t n);
template <typename T> void add_scalar(const T* x, T c, T* y, int64_t n);
template <typename T> void neg(const T* x, T* y, int64_t n);
template <typename T> void relu(const T* x, T* y, int64_t n);
template <typename T> void lrelu(const T* x, T slope, T* y, int64_t n);
// mask of derivative values: 1 where x > 0, slope elsewhere
template <typename T> void lrelu_mask(const T* x, T slope, T* y, int64_t n);
template <typename T> void sigmoid(const T* x, T* y, int64_t n);
template <typename T> void tanh_(const T* x, T* y, int64_t n);
template <typename T> void exp_(const T* x, T* y, int64_t n);
template <typename T> void log_(const T* x, T* y, int64_t n);
template <typename T> void sqrt_(const T* x, T* y, int64_t n);
template <typename T> void abs_(const T* x, T* y, int64_t n);
template <typename T> void sign(const T* x, T* y, int64_t n);
template <typename T> void square(const T* x, T* y, int64_t n);

// ---- reductions / broadcasts ----
// Chunked deterministic total: fixed chunk size, partials summed in chunk order.
template <typename T> T reduce_sum(const T* x, int64_t n);
template <typename T> void sum_rows(const T* x, int64_t n_rows, int64_t row_len, T* out);
template <typename T> void broadcast_rows(const T* rows, int64_t n_rows, int64_t row_len, T* out);
template <typename T> void sum_channels(const T* x, int64_t N, int64_t C, int64_t HW, T* out);
template <typename T> void broadcast_channels(const T* x, int64_t N, int64_t C, int64_t HW, T* out);
template <typename T> void sum_hw(const T* x, int64_t NC, int64_t HW, T* out);
template <typename T> void broadcast_hw(const T* x, int64_t NC, int64_t HW, T* out);
template <typename T> void sum_nhw(const T* x, int64_t N, int64_t C, int64_t HW, T* out);
template <typename T> void bias_broadcast(const T* b, int64_t N, int64_t C, int64_t HW, T* out);
template <typename T> void softmax_channels(const T* x, int64_t N, int64_t C, int64_t HW, T* y);

// ---- resampling ----
template <typename T> void upsample2(const T* x, int64_t NC, int64_t H, int64_t W, T* y);
template <typename T> void downsum2(const T* x, int64_t NC, int64_t H, int64_t W, T* y);

// ---- bilinear warp on absolute coordinates ----
// out[n,c,i,j] = sum over the 4 integer neighbors (h,w) of (cy,cx):
//   src[n,c,h,w] * max(0,1-|cy-h|) * max(0,1-|cx-w|); outside the image
// contributes zero.  coords[n,0,..] are x coordinates, coords[n,1,..] are y.
template <typename T>
void warp_forward(const TensorT<T>& src, const TensorT<T>& coords, TensorT<T>& out);
template <typename T>
void warp_backward(const TensorT<T>& src, const TensorT<T>& coords, const TensorT<T>& gout,
                   TensorT<T>& dsrc, TensorT<T>& dcoords);

// ---- pairwise squared distances (for kernel bandwidth selection) ----
template <typename T>
void pairwise_sqdist(const T* a, int64_t n, const T* b, int64_t m, int64_t d, T* out);

// ---- optimizer ----
template <typename T>
void adam_step(T* p, const T* g, T* m, T* v, int64_t n, T lr, T beta1, T beta2, T eps,
               int64_t t);

namespace serial {

template <typename T>
void gemm_nn(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C, bool accumulate);
template <typename T>
void gemm_nt(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C, bool accumulate);
template <typename T>
void gemm_tn(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C, bool accumulate);

template <typename T>
void conv2d_forward(const TensorT<T>& x, const TensorT<T>& w, int64_t stride, int64_t pad,
                    TensorT<T>& y);
template <typename T>
void conv2d_input_grad(const TensorT<T>& gy, const TensorT<T>& w, int64_t stride, int64_t pad,
                       int64_t H, int64_t W, TensorT<T>& dx);
template <typename T>
void conv2d_weight_grad(const TensorT<T>& x, const TensorT<T>& gy, int64_t stride, int64_t pad,
                        int64_t k, TensorT<T>& dw);

template <typename T> T reduce_sum(const T* x, int64_t n);
template <typename T> void softmax_channels(const T* x, int64_t N, int64_t C, int64_t HW, T* y);
template <typename T> void upsample2(const T* x, int64_t NC, int64_t H, int64_t W, T* y);
template <typename T> void downsum2(const T* x, int64_t NC, int64_t H, int64_t W, T* y);

template <typename T>
void warp_forward(const TensorT<T>& src, const TensorT<T>& coords, TensorT<T>& out);
template <typename T>
void warp_backward(const TensorT<T>& src, const TensorT<T>& coords, const TensorT<T>& gout,
                   TensorT<T>& dsrc, TensorT<T>& dcoords);

template <typename T>
void pairwise_sqdist(const T* a, int64_t n, const T* b, int64_t m, int64_t d, T* out);

}  // namespace serial

}  // namespace facedr::kern
