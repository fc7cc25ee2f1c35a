#include "facedr/core/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace facedr::kern {

namespace {
constexpr int64_t kReduceChunk = 4096;
}

// ---------------------------------------------------------------------------
// GEMM
// ---------------------------------------------------------------------------

// 4-row register blocking over a j-panel; every output row is produced by a
// single thread with k-ascending accumulation, so results match the serial
// reference bit for bit.
template <typename T>
static void gemm_nn_rows(int64_t i0, int64_t i1, int64_t N, int64_t K, const T* A, const T* B,
                         T* C) {
  constexpr int64_t JB = 1024;
  for (int64_t j0 = 0; j0 < N; j0 += JB) {
    const int64_t j1 = std::min(j0 + JB, N);
    int64_t i = i0;
    for (; i + 4 <= i1; i += 4) {
      T* __restrict c0 = C + (i + 0) * N;
      T* __restrict c1 = C + (i + 1) * N;
      T* __restrict c2 = C + (i + 2) * N;
      T* __restrict c3 = C + (i + 3) * N;
      for (int64_t k = 0; k < K; ++k) {
        const T a0 = A[(i + 0) * K + k], a1 = A[(i + 1) * K + k];
        const T a2 = A[(i + 2) * K + k], a3 = A[(i + 3) * K + k];
        const T* __restrict b = B + k * N;
        for (int64_t j = j0; j < j1; ++j) {
          const T bj = b[j];
          c0[j] += a0 * bj;
          c1[j] += a1 * bj;
          c2[j] += a2 * bj;
          c3[j] += a3 * bj;
        }
      }
    }
    for (; i < i1; ++i) {
      T* __restrict c = C + i * N;
      for (int64_t k = 0; k < K; ++k) {
        const T a = A[i * K + k];
        const T* __restrict b = B + k * N;
        for (int64_t j = j0; j < j1; ++j) c[j] += a * b[j];
      }
    }
  }
}

template <typename T>
void gemm_nn(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C, bool accumulate) {
  if (!accumulate) fill(C, M * N, T(0));
#pragma omp parallel
  {
#ifdef _OPENMP
    const int nt = omp_get_num_threads();
    const int tid = omp_get_thread_num();
#else
    const int nt = 1, tid = 0;
#endif
    const int64_t rows4 = (M + 3) / 4;
    const int64_t per = (rows4 + nt - 1) / nt;
    const int64_t i0 = std::min<int64_t>(tid * per * 4, M);
    const int64_t i1 = std::min<int64_t>((tid + 1) * per * 4, M);
    if (i0 < i1) gemm_nn_rows(i0, i1, N, K, A, B, C);
  }
}

template <typename T>
void gemm_nt(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C, bool accumulate) {
  // C[i,j] = sum_k A[i,k] * B[j,k]; both operands stream along k.
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < M; ++i) {
    const T* __restrict a = A + i * K;
    T* __restrict c = C + i * N;
    for (int64_t j = 0; j < N; ++j) {
      const T* __restrict b = B + j * K;
      T acc = 0;
      for (int64_t k = 0; k < K; ++k) acc += a[k] * b[k];
      c[j] = accumulate ? c[j] + acc : acc;
    }
  }
}

template <typename T>
void gemm_tn(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C, bool accumulate) {
  // C[i,j] = sum_k A[k,i] * B[k,j]; accumulate k-ascending like the reference.
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < M; ++i) {
    T* __restrict c = C + i * N;
    if (!accumulate)
      for (int64_t j = 0; j < N; ++j) c[j] = 0;
    for (int64_t k = 0; k < K; ++k) {
      const T a = A[k * M + i];
      const T* __restrict b = B + k * N;
      for (int64_t j = 0; j < N; ++j) c[j] += a * b[j];
    }
  }
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

template <typename T>
void im2col(const T* x, int64_t C, int64_t H, int64_t W, int64_t k, int64_t stride, int64_t pad,
            T* col) {
  const int64_t Ho = conv_out_dim(H, k, stride, pad);
  const int64_t Wo = conv_out_dim(W, k, stride, pad);
  const int64_t HoWo = Ho * Wo;
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t ki = 0; ki < k; ++ki) {
      for (int64_t kj = 0; kj < k; ++kj) {
        T* __restrict dst = col + ((c * k + ki) * k + kj) * HoWo;
        for (int64_t i = 0; i < Ho; ++i) {
          const int64_t h = i * stride - pad + ki;
          if (h < 0 || h >= H) {
            for (int64_t j = 0; j < Wo; ++j) dst[i * Wo + j] = 0;
            continue;
          }
          const T* __restrict src = x + (c * H + h) * W;
          for (int64_t j = 0; j < Wo; ++j) {
            const int64_t w = j * stride - pad + kj;
            dst[i * Wo + j] = (w >= 0 && w < W) ? src[w] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int64_t C, int64_t H, int64_t W, int64_t k, int64_t stride, int64_t pad,
            T* x) {
  const int64_t Ho = conv_out_dim(H, k, stride, pad);
  const int64_t Wo = conv_out_dim(W, k, stride, pad);
  const int64_t HoWo = Ho * Wo;
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t ki = 0; ki < k; ++ki) {
      for (int64_t kj = 0; kj < k; ++kj) {
        const T* __restrict src = col + ((c * k + ki) * k + kj) * HoWo;
        for (int64_t i = 0; i < Ho; ++i) {
          const int64_t h = i * stride - pad + ki;
          if (h < 0 || h >= H) continue;
          T* __restrict dst = x + (c * H + h) * W;
          for (int64_t j = 0; j < Wo; ++j) {
            const int64_t w = j * stride - pad + kj;
            if (w >= 0 && w < W) dst[w] += src[i * Wo + j];
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_forward(const TensorT<T>& x, const TensorT<T>& w, int64_t stride, int64_t pad,
                    TensorT<T>& y) {
  const int64_t N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Co = w.dim(0), k = w.dim(2);
  const int64_t Ho = conv_out_dim(H, k, stride, pad), Wo = conv_out_dim(W, k, stride, pad);
  const int64_t Kdim = Ci * k * k, HoWo = Ho * Wo;
#pragma omp parallel for schedule(static)
  for (int64_t n = 0; n < N; ++n) {
    std::vector<T> col(static_cast<size_t>(Kdim * HoWo));
    im2col(x.data() + n * Ci * H * W, Ci, H, W, k, stride, pad, col.data());
    T* out = y.data() + n * Co * HoWo;
    std::fill(out, out + Co * HoWo, T(0));
    gemm_nn_rows(int64_t(0), Co, HoWo, Kdim, w.data(), col.data(), out);
  }
}

template <typename T>
void conv2d_input_grad(const TensorT<T>& gy, const TensorT<T>& w, int64_t stride, int64_t pad,
                       int64_t H, int64_t W, TensorT<T>& dx) {
  const int64_t N = gy.dim(0), Co = gy.dim(1), Ho = gy.dim(2), Wo = gy.dim(3);
  const int64_t Ci = w.dim(1), k = w.dim(2);
  const int64_t Kdim = Ci * k * k, HoWo = Ho * Wo;
#pragma omp parallel for schedule(static)
  for (int64_t n = 0; n < N; ++n) {
    std::vector<T> col(static_cast<size_t>(Kdim * HoWo));
    // col = w^T [Kdim, Co] * gy_n [Co, HoWo]
    for (int64_t i = 0; i < Kdim; ++i) {
      T* __restrict c = col.data() + i * HoWo;
      std::fill(c, c + HoWo, T(0));
      for (int64_t co = 0; co < Co; ++co) {
        const T a = w.data()[co * Kdim + i];
        const T* __restrict b = gy.data() + (n * Co + co) * HoWo;
        for (int64_t j = 0; j < HoWo; ++j) c[j] += a * b[j];
      }
    }
    T* out = dx.data() + n * Ci * H * W;
    std::fill(out, out + Ci * H * W, T(0));
    col2im(col.data(), Ci, H, W, k, stride, pad, out);
  }
}

template <typename T>
void conv2d_weight_grad(const TensorT<T>& x, const TensorT<T>& gy, int64_t stride, int64_t pad,
                        int64_t k, TensorT<T>& dw) {
  const int64_t N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Co = gy.dim(1), Ho = gy.dim(2), Wo = gy.dim(3);
  const int64_t Kdim = Ci * k * k, HoWo = Ho * Wo;
  fill(dw.data(), dw.numel(), T(0));
  std::vector<T> col(static_cast<size_t>(Kdim * HoWo));
  // Batch items accumulate in index order so the result is deterministic;
  // the inner gemm is the parallel part.
  for (int64_t n = 0; n < N; ++n) {
    im2col(x.data() + n * Ci * H * W, Ci, H, W, k, stride, pad, col.data());
    gemm_nt(Co, Kdim, HoWo, gy.data() + n * Co * HoWo, col.data(), dw.data(), true);
  }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

#define FACEDR_EW_LOOP(expr)                         \
  _Pragma("omp parallel for schedule(static)")       \
  for (int64_t i = 0; i < n; ++i) { expr; }

template <typename T> void fill(T* y, int64_t n, T v) { FACEDR_EW_LOOP(y[i] = v) }
template <typename T> void copy(const T* x, T* y, int64_t n) { FACEDR_EW_LOOP(y[i] = x[i]) }
template <typename T> void add(const T* a, const T* b, T* y, int64_t n) { FACEDR_EW_LOOP(y[i] = a[i] + b[i]) }
template <typename T> void sub(const T* a, const T* b, T* y, int64_t n) { FACEDR_EW_LOOP(y[i] = a[i] - b[i]) }
template <typename T> void mul(const T* a, const T* b, T* y, int64_t n) { FACEDR_EW_LOOP(y[i] = a[i] * b[i]) }
template <typename T> void div(const T* a, const T* b, T* y, int64_t n) { FACEDR_EW_LOOP(y[i] = a[i] / b[i]) }
template <typename T> void axpy(T alpha, const T* x, T* y, int64_t n) { FACEDR_EW_LOOP(y[i] += alpha * x[i]) }
template <typename T> void scale(const T* x, T alpha, T* y, int64_t n) { FACEDR_EW_LOOP(y[i] = alpha * x[i]) }
template <typename T> void add_scalar(const T* x, T c, T* y, int64_t n) { FACEDR_EW_LOOP(y[i] = x[i] + c) }
template <typename T> void neg(const T* x, T* y, int64_t n) { FACEDR_EW_LOOP(y[i] = -x[i]) }
template <typename T> void relu(const T* x, T* y, int64_t n) { FACEDR_EW_LOOP(y[i] = x[i] > T(0) ? x[i] : T(0)) }
template <typename T> void lrelu(const T* x, T slope, T* y, int64_t n) { FACEDR_EW_LOOP(y[i] = x[i] > T(0) ? x[i] : slope * x[i]) }
template <typename T> void lrelu_mask(const T* x, T slope, T* y, int64_t n) { FACEDR_EW_LOOP(y[i] = x[i] > T(0) ? T(1) : slope) }
template <typename T> void sigmoid(const T* x, T* y, int64_t n) { FACEDR_EW_LOOP(y[i] = T(1) / (T(1) + std::exp(-x[i]))) }
template <typename T> void tanh_(const T* x, T* y, int64_t n) { FACEDR_EW_LOOP(y[i] = std::tanh(x[i])) }
template <typename T> void exp_(const T* x, T* y, int64_t n) { FACEDR_EW_LOOP(y[i] = std::exp(x[i])) }
template <typename T> void log_(const T* x, T* y, int64_t n) { FACEDR_EW_LOOP(y[i] = std::log(x[i])) }
template <typename T> void sqrt_(const T* x, T* y, int64_t n) { FACEDR_EW_LOOP(y[i] = std::sqrt(x[i])) }
template <typename T> void abs_(const T* x, T* y, int64_t n) { FACEDR_EW_LOOP(y[i] = std::abs(x[i])) }
template <typename T> void sign(const T* x, T* y, int64_t n) { FACEDR_EW_LOOP(y[i] = x[i] > T(0) ? T(1) : (x[i] < T(0) ? T(-1) : T(0))) }
template <typename T> void square(const T* x, T* y, int64_t n) { FACEDR_EW_LOOP(y[i] = x[i] * x[i]) }

#undef FACEDR_EW_LOOP

// ---------------------------------------------------------------------------
// reductions / broadcasts
// ---------------------------------------------------------------------------

template <typename T>
T reduce_sum(const T* x, int64_t n) {
  const int64_t nchunks = (n + kReduceChunk - 1) / kReduceChunk;
  std::vector<T> partial(static_cast<size_t>(std::max<int64_t>(nchunks, 1)), T(0));
#pragma omp parallel for schedule(static)
  for (int64_t c = 0; c < nchunks; ++c) {
    const int64_t lo = c * kReduceChunk, hi = std::min(lo + kReduceChunk, n);
    T acc = 0;
    for (int64_t i = lo; i < hi; ++i) acc += x[i];
    partial[static_cast<size_t>(c)] = acc;
  }
  T total = 0;
  for (int64_t c = 0; c < nchunks; ++c) total += partial[static_cast<size_t>(c)];
  return total;
}

template <typename T>
void sum_rows(const T* x, int64_t n_rows, int64_t row_len, T* out) {
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < n_rows; ++r) {
    const T* __restrict p = x + r * row_len;
    T acc = 0;
    for (int64_t i = 0; i < row_len; ++i) acc += p[i];
    out[r] = acc;
  }
}

template <typename T>
void broadcast_rows(const T* rows, int64_t n_rows, int64_t row_len, T* out) {
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < n_rows; ++r) {
    T* __restrict p = out + r * row_len;
    const T v = rows[r];
    for (int64_t i = 0; i < row_len; ++i) p[i] = v;
  }
}

template <typename T>
void sum_channels(const T* x, int64_t N, int64_t C, int64_t HW, T* out) {
#pragma omp parallel for schedule(static)
  for (int64_t n = 0; n < N; ++n) {
    T* __restrict o = out + n * HW;
    std::fill(o, o + HW, T(0));
    for (int64_t c = 0; c < C; ++c) {
      const T* __restrict p = x + (n * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i) o[i] += p[i];
    }
  }
}

template <typename T>
void broadcast_channels(const T* x, int64_t N, int64_t C, int64_t HW, T* out) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* __restrict p = x + n * HW;
      T* __restrict o = out + (n * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i) o[i] = p[i];
    }
}

template <typename T>
void sum_hw(const T* x, int64_t NC, int64_t HW, T* out) {
  sum_rows(x, NC, HW, out);
}

template <typename T>
void broadcast_hw(const T* x, int64_t NC, int64_t HW, T* out) {
  broadcast_rows(x, NC, HW, out);
}

template <typename T>
void sum_nhw(const T* x, int64_t N, int64_t C, int64_t HW, T* out) {
#pragma omp parallel for schedule(static)
  for (int64_t c = 0; c < C; ++c) {
    T acc = 0;
    for (int64_t n = 0; n < N; ++n) {
      const T* __restrict p = x + (n * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i) acc += p[i];
    }
    out[c] = acc;
  }
}

template <typename T>
void bias_broadcast(const T* b, int64_t N, int64_t C, int64_t HW, T* out) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      T* __restrict o = out + (n * C + c) * HW;
      const T v = b[c];
      for (int64_t i = 0; i < HW; ++i) o[i] = v;
    }
}

template <typename T>
void softmax_channels(const T* x, int64_t N, int64_t C, int64_t HW, T* y) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < N; ++n)
    for (int64_t i = 0; i < HW; ++i) {
      const T* __restrict p = x + n * C * HW + i;
      T* __restrict o = y + n * C * HW + i;
      T mx = p[0];
      for (int64_t c = 1; c < C; ++c) mx = std::max(mx, p[c * HW]);
      T denom = 0;
      for (int64_t c = 0; c < C; ++c) {
        const T e = std::exp(p[c * HW] - mx);
        o[c * HW] = e;
        denom += e;
      }
      for (int64_t c = 0; c < C; ++c) o[c * HW] /= denom;
    }
}

// ---------------------------------------------------------------------------
// resampling
// ---------------------------------------------------------------------------

template <typename T>
void upsample2(const T* x, int64_t NC, int64_t H, int64_t W, T* y) {
#pragma omp parallel for schedule(static)
  for (int64_t nc = 0; nc < NC; ++nc) {
    const T* __restrict src = x + nc * H * W;
    T* __restrict dst = y + nc * 4 * H * W;
    for (int64_t i = 0; i < H; ++i)
      for (int64_t j = 0; j < W; ++j) {
        const T v = src[i * W + j];
        T* row0 = dst + (2 * i) * 2 * W + 2 * j;
        T* row1 = dst + (2 * i + 1) * 2 * W + 2 * j;
        row0[0] = v;
        row0[1] = v;
        row1[0] = v;
        row1[1] = v;
      }
  }
}

template <typename T>
void downsum2(const T* x, int64_t NC, int64_t H, int64_t W, T* y) {
  const int64_t Ho = H / 2, Wo = W / 2;
#pragma omp parallel for schedule(static)
  for (int64_t nc = 0; nc < NC; ++nc) {
    const T* __restrict src = x + nc * H * W;
    T* __restrict dst = y + nc * Ho * Wo;
    for (int64_t i = 0; i < Ho; ++i)
      for (int64_t j = 0; j < Wo; ++j)
        dst[i * Wo + j] = src[(2 * i) * W + 2 * j] + src[(2 * i) * W + 2 * j + 1] +
                          src[(2 * i + 1) * W + 2 * j] + src[(2 * i + 1) * W + 2 * j + 1];
  }
}

// ---------------------------------------------------------------------------
// bilinear warp
// ---------------------------------------------------------------------------

template <typename T>
void warp_forward(const TensorT<T>& src, const TensorT<T>& coords, TensorT<T>& out) {
  const int64_t N = src.dim(0), C = src.dim(1), H = src.dim(2), W = src.dim(3);
  const int64_t HW = H * W;
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* __restrict s = src.data() + (n * C + c) * HW;
      const T* __restrict cx = coords.data() + (n * 2 + 0) * HW;
      const T* __restrict cy = coords.data() + (n * 2 + 1) * HW;
      T* __restrict o = out.data() + (n * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i) {
        const T x = cx[i], y = cy[i];
        const int64_t x0 = static_cast<int64_t>(std::floor(x));
        const int64_t y0 = static_cast<int64_t>(std::floor(y));
        const T fx = x - static_cast<T>(x0), fy = y - static_cast<T>(y0);
        T acc = 0;
        if (y0 >= 0 && y0 < H) {
          if (x0 >= 0 && x0 < W) acc += s[y0 * W + x0] * (1 - fy) * (1 - fx);
          if (x0 + 1 >= 0 && x0 + 1 < W) acc += s[y0 * W + x0 + 1] * (1 - fy) * fx;
        }
        if (y0 + 1 >= 0 && y0 + 1 < H) {
          if (x0 >= 0 && x0 < W) acc += s[(y0 + 1) * W + x0] * fy * (1 - fx);
          if (x0 + 1 >= 0 && x0 + 1 < W) acc += s[(y0 + 1) * W + x0 + 1] * fy * fx;
        }
        o[i] = acc;
      }
    }
}

// Sub-gradient convention at integer coordinates: weights come from the
// floor decomposition fx = x - floor(x), so d(weight)/dx is the right-hand
// derivative (-1 for the floor neighbor, +1 for floor+1).
template <typename T>
void warp_backward(const TensorT<T>& src, const TensorT<T>& coords, const TensorT<T>& gout,
                   TensorT<T>& dsrc, TensorT<T>& dcoords) {
  const int64_t N = src.dim(0), C = src.dim(1), H = src.dim(2), W = src.dim(3);
  const int64_t HW = H * W;
  fill(dsrc.data(), dsrc.numel(), T(0));
  // scatter pass: one thread owns one (n, c) slice of dsrc
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* __restrict cx = coords.data() + (n * 2 + 0) * HW;
      const T* __restrict cy = coords.data() + (n * 2 + 1) * HW;
      const T* __restrict g = gout.data() + (n * C + c) * HW;
      T* __restrict ds = dsrc.data() + (n * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i) {
        const T x = cx[i], y = cy[i];
        const int64_t x0 = static_cast<int64_t>(std::floor(x));
        const int64_t y0 = static_cast<int64_t>(std::floor(y));
        const T fx = x - static_cast<T>(x0), fy = y - static_cast<T>(y0);
        const T gi = g[i];
        if (y0 >= 0 && y0 < H) {
          if (x0 >= 0 && x0 < W) ds[y0 * W + x0] += gi * (1 - fy) * (1 - fx);
          if (x0 + 1 >= 0 && x0 + 1 < W) ds[y0 * W + x0 + 1] += gi * (1 - fy) * fx;
        }
        if (y0 + 1 >= 0 && y0 + 1 < H) {
          if (x0 >= 0 && x0 < W) ds[(y0 + 1) * W + x0] += gi * fy * (1 - fx);
          if (x0 + 1 >= 0 && x0 + 1 < W) ds[(y0 + 1) * W + x0 + 1] += gi * fy * fx;
        }
      }
    }
  // gather pass: each coordinate gradient sums over channels in order
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < N; ++n)
    for (int64_t i = 0; i < HW; ++i) {
      const T x = coords.data()[(n * 2 + 0) * HW + i];
      const T y = coords.data()[(n * 2 + 1) * HW + i];
      const int64_t x0 = static_cast<int64_t>(std::floor(x));
      const int64_t y0 = static_cast<int64_t>(std::floor(y));
      const T fx = x - static_cast<T>(x0), fy = y - static_cast<T>(y0);
      T gx = 0, gy = 0;
      for (int64_t c = 0; c < C; ++c) {
        const T* __restrict s = src.data() + (n * C + c) * HW;
        const T gi = gout.data()[(n * C + c) * HW + i];
        if (y0 >= 0 && y0 < H) {
          if (x0 >= 0 && x0 < W) {
            gx += gi * s[y0 * W + x0] * (1 - fy) * T(-1);
            gy += gi * s[y0 * W + x0] * (1 - fx) * T(-1);
          }
          if (x0 + 1 >= 0 && x0 + 1 < W) {
            gx += gi * s[y0 * W + x0 + 1] * (1 - fy) * T(+1);
            gy += gi * s[y0 * W + x0 + 1] * fx * T(-1);
          }
        }
        if (y0 + 1 >= 0 && y0 + 1 < H) {
          if (x0 >= 0 && x0 < W) {
            gx += gi * s[(y0 + 1) * W + x0] * fy * T(-1);
            gy += gi * s[(y0 + 1) * W + x0] * (1 - fx) * T(+1);
          }
          if (x0 + 1 >= 0 && x0 + 1 < W) {
            gx += gi * s[(y0 + 1) * W + x0 + 1] * fy * T(+1);
            gy += gi * s[(y0 + 1) * W + x0 + 1] * fx * T(+1);
          }
        }
      }
      dcoords.data()[(n * 2 + 0) * HW + i] = gx;
      dcoords.data()[(n * 2 + 1) * HW + i] = gy;
    }
}

// ---------------------------------------------------------------------------
// pairwise squared distances
// ---------------------------------------------------------------------------

template <typename T>
void pairwise_sqdist(const T* a, int64_t n, const T* b, int64_t m, int64_t d, T* out) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    const T* __restrict ai = a + i * d;
    for (int64_t j = 0; j < m; ++j) {
      const T* __restrict bj = b + j * d;
      T acc = 0;
      for (int64_t k = 0; k < d; ++k) {
        const T diff = ai[k] - bj[k];
        acc += diff * diff;
      }
      out[i * m + j] = acc;
    }
  }
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

template <typename T>
void adam_step(T* p, const T* g, T* m, T* v, int64_t n, T lr, T beta1, T beta2, T eps,
               int64_t t) {
  const T bc1 = T(1) - std::pow(beta1, static_cast<T>(t));
  const T bc2 = T(1) - std::pow(beta2, static_cast<T>(t));
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
    v[i] = beta2 * v[i] + (T(1) - beta2) * g[i] * g[i];
    const T mhat = m[i] / bc1;
    const T vhat = v[i] / bc2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

// ---------------------------------------------------------------------------
// explicit instantiations
// ---------------------------------------------------------------------------

#define FACEDR_INSTANTIATE(T)                                                                     \
  template void gemm_nn<T>(int64_t, int64_t, int64_t, const T*, const T*, T*, bool);              \
  template void gemm_nt<T>(int64_t, int64_t, int64_t, const T*, const T*, T*, bool);              \
  template void gemm_tn<T>(int64_t, int64_t, int64_t, const T*, const T*, T*, bool);              \
  template void im2col<T>(const T*, int64_t, int64_t, int64_t, int64_t, int64_t, int64_t, T*);    \
  template void col2im<T>(const T*, int64_t, int64_t, int64_t, int64_t, int64_t, int64_t, T*);    \
  template void conv2d_forward<T>(const TensorT<T>&, const TensorT<T>&, int64_t, int64_t,         \
                                  TensorT<T>&);                                                   \
  template void conv2d_input_grad<T>(const TensorT<T>&, const TensorT<T>&, int64_t, int64_t,      \
                                     int64_t, int64_t, TensorT<T>&);                              \
  template void conv2d_weight_grad<T>(const TensorT<T>&, const TensorT<T>&, int64_t, int64_t,     \
                                      int64_t, TensorT<T>&);                                      \
  template void fill<T>(T*, int64_t, T);                                                          \
  template void copy<T>(const T*, T*, int64_t);                                                   \
  template void add<T>(const T*, const T*, T*, int64_t);                                          \
  template void sub<T>(const T*, const T*, T*, int64_t);                                          \
  template void mul<T>(const T*, const T*, T*, int64_t);                                          \
  template void div<T>(const T*, const T*, T*, int64_t);                                          \
  template void axpy<T>(T, const T*, T*, int64_t);                                                \
  template void scale<T>(const T*, T, T*, int64_t);                                               \
  template void add_scalar<T>(const T*, T, T*, int64_t);                                          \
  template void neg<T>(const T*, T*, int64_t);                                                    \
  template void relu<T>(const T*, T*, int64_t);                                                   \
  template void lrelu<T>(const T*, T, T*, int64_t);                                               \
  template void lrelu_mask<T>(const T*, T, T*, int64_t);                                          \
  template void sigmoid<T>(const T*, T*, int64_t);                                                \
  template void tanh_<T>(const T*, T*, int64_t);                                                  \
  template void exp_<T>(const T*, T*, int64_t);                                                   \
  template void log_<T>(const T*, T*, int64_t);                                                   \
  template void sqrt_<T>(const T*, T*, int64_t);                                                  \
  template void abs_<T>(const T*, T*, int64_t);                                                   \
  template void sign<T>(const T*, T*, int64_t);                                                   \
  template void square<T>(const T*, T*, int64_t);                                                 \
  template T reduce_sum<T>(const T*, int64_t);                                                    \
  template void sum_rows<T>(const T*, int64_t, int64_t, T*);                                      \
  template void broadcast_rows<T>(const T*, int64_t, int64_t, T*);                                \
  template void sum_channels<T>(const T*, int64_t, int64_t, int64_t, T*);                         \
  template void broadcast_channels<T>(const T*, int64_t, int64_t, int64_t, T*);                   \
  template void sum_hw<T>(const T*, int64_t, int64_t, T*);                                        \
  template void broadcast_hw<T>(const T*, int64_t, int64_t, T*);                                  \
  template void sum_nhw<T>(const T*, int64_t, int64_t, int64_t, T*);                              \
  template void bias_broadcast<T>(const T*, int64_t, int64_t, int64_t, T*);                       \
  template void softmax_channels<T>(const T*, int64_t, int64_t, int64_t, T*);                     \
  template void upsample2<T>(const T*, int64_t, int64_t, int64_t, T*);                            \
  template void downsum2<T>(const T*, int64_t, int64_t, int64_t, T*);                             \
  template void warp_forward<T>(const TensorT<T>&, const TensorT<T>&, TensorT<T>&);               \
  template void warp_backward<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,         \
                                 TensorT<T>&, TensorT<T>&);                                       \
  template void pairwise_sqdist<T>(const T*, int64_t, const T*, int64_t, int64_t, T*);            \
  template void adam_step<T>(T*, const T*, T*, T*, int64_t, T, T, T, T, int64_t);

FACEDR_INSTANTIATE(float)
FACEDR_INSTANTIATE(double)

#undef FACEDR_INSTANTIATE

}  // namespace facedr::kern
