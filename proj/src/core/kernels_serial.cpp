#include <algorithm>
#include <cmath>
#include <vector>

#include "facedr/core/kernels.hpp"

// Straight-loop reference implementations. Kept deliberately naive so they
// can be read against the definitions; the parallel versions in kernels.cpp
// must agree with these bit for bit (see tests/test_kernels.cpp and the
// bench target).

namespace facedr::kern::serial {

template <typename T>
void gemm_nn(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C, bool accumulate) {
  for (int64_t i = 0; i < M; ++i)
    for (int64_t j = 0; j < N; ++j) {
      T acc = accumulate ? C[i * N + j] : T(0);
      for (int64_t k = 0; k < K; ++k) acc += A[i * K + k] * B[k * N + j];
      C[i * N + j] = acc;
    }
}

template <typename T>
void gemm_nt(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C, bool accumulate) {
  for (int64_t i = 0; i < M; ++i)
    for (int64_t j = 0; j < N; ++j) {
      T acc = accumulate ? C[i * N + j] : T(0);
      for (int64_t k = 0; k < K; ++k) acc += A[i * K + k] * B[j * K + k];
      C[i * N + j] = acc;
    }
}

template <typename T>
void gemm_tn(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C, bool accumulate) {
  for (int64_t i = 0; i < M; ++i)
    for (int64_t j = 0; j < N; ++j) {
      T acc = accumulate ? C[i * N + j] : T(0);
      for (int64_t k = 0; k < K; ++k) acc += A[k * M + i] * B[k * N + j];
      C[i * N + j] = acc;
    }
}

template <typename T>
void conv2d_forward(const TensorT<T>& x, const TensorT<T>& w, int64_t stride, int64_t pad,
                    TensorT<T>& y) {
  const int64_t N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Co = w.dim(0), k = w.dim(2);
  const int64_t Ho = conv_out_dim(H, k, stride, pad), Wo = conv_out_dim(W, k, stride, pad);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t co = 0; co < Co; ++co)
      for (int64_t i = 0; i < Ho; ++i)
        for (int64_t j = 0; j < Wo; ++j) {
          T acc = 0;
          for (int64_t ci = 0; ci < Ci; ++ci)
            for (int64_t ki = 0; ki < k; ++ki)
              for (int64_t kj = 0; kj < k; ++kj) {
                const int64_t h = i * stride - pad + ki;
                const int64_t ww = j * stride - pad + kj;
                if (h < 0 || h >= H || ww < 0 || ww >= W) continue;
                acc += x.at4(n, ci, h, ww) * w.at4(co, ci, ki, kj);
              }
          y.at4(n, co, i, j) = acc;
        }
}

template <typename T>
void conv2d_input_grad(const TensorT<T>& gy, const TensorT<T>& w, int64_t stride, int64_t pad,
                       int64_t H, int64_t W, TensorT<T>& dx) {
  const int64_t N = gy.dim(0), Co = gy.dim(1), Ho = gy.dim(2), Wo = gy.dim(3);
  const int64_t Ci = w.dim(1), k = w.dim(2);
  std::fill(dx.vec().begin(), dx.vec().end(), T(0));
  for (int64_t n = 0; n < N; ++n)
    for (int64_t co = 0; co < Co; ++co)
      for (int64_t i = 0; i < Ho; ++i)
        for (int64_t j = 0; j < Wo; ++j) {
          const T g = gy.at4(n, co, i, j);
          for (int64_t ci = 0; ci < Ci; ++ci)
            for (int64_t ki = 0; ki < k; ++ki)
              for (int64_t kj = 0; kj < k; ++kj) {
                const int64_t h = i * stride - pad + ki;
                const int64_t ww = j * stride - pad + kj;
                if (h < 0 || h >= H || ww < 0 || ww >= W) continue;
                dx.at4(n, ci, h, ww) += g * w.at4(co, ci, ki, kj);
              }
        }
}

template <typename T>
void conv2d_weight_grad(const TensorT<T>& x, const TensorT<T>& gy, int64_t stride, int64_t pad,
                        int64_t k, TensorT<T>& dw) {
  const int64_t N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Co = gy.dim(1), Ho = gy.dim(2), Wo = gy.dim(3);
  std::fill(dw.vec().begin(), dw.vec().end(), T(0));
  for (int64_t n = 0; n < N; ++n)
    for (int64_t co = 0; co < Co; ++co)
      for (int64_t ci = 0; ci < Ci; ++ci)
        for (int64_t ki = 0; ki < k; ++ki)
          for (int64_t kj = 0; kj < k; ++kj) {
            T acc = 0;
            for (int64_t i = 0; i < Ho; ++i)
              for (int64_t j = 0; j < Wo; ++j) {
                const int64_t h = i * stride - pad + ki;
                const int64_t ww = j * stride - pad + kj;
                if (h < 0 || h >= H || ww < 0 || ww >= W) continue;
                acc += x.at4(n, ci, h, ww) * gy.at4(n, co, i, j);
              }
            dw.at4(co, ci, ki, kj) += acc;
          }
}

template <typename T>
T reduce_sum(const T* x, int64_t n) {
  // Same fixed chunk decomposition as the parallel version.
  constexpr int64_t chunk = 4096;
  T total = 0;
  for (int64_t lo = 0; lo < n; lo += chunk) {
    const int64_t hi = std::min(lo + chunk, n);
    T acc = 0;
    for (int64_t i = lo; i < hi; ++i) acc += x[i];
    total += acc;
  }
  return total;
}

template <typename T>
void softmax_channels(const T* x, int64_t N, int64_t C, int64_t HW, T* y) {
  for (int64_t n = 0; n < N; ++n)
    for (int64_t i = 0; i < HW; ++i) {
      const T* p = x + n * C * HW + i;
      T* o = y + n * C * HW + i;
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

template <typename T>
void upsample2(const T* x, int64_t NC, int64_t H, int64_t W, T* y) {
  for (int64_t nc = 0; nc < NC; ++nc)
    for (int64_t i = 0; i < 2 * H; ++i)
      for (int64_t j = 0; j < 2 * W; ++j)
        y[nc * 4 * H * W + i * 2 * W + j] = x[nc * H * W + (i / 2) * W + j / 2];
}

template <typename T>
void downsum2(const T* x, int64_t NC, int64_t H, int64_t W, T* y) {
  const int64_t Ho = H / 2, Wo = W / 2;
  for (int64_t nc = 0; nc < NC; ++nc)
    for (int64_t i = 0; i < Ho; ++i)
      for (int64_t j = 0; j < Wo; ++j)
        y[nc * Ho * Wo + i * Wo + j] =
            x[nc * H * W + 2 * i * W + 2 * j] + x[nc * H * W + 2 * i * W + 2 * j + 1] +
            x[nc * H * W + (2 * i + 1) * W + 2 * j] + x[nc * H * W + (2 * i + 1) * W + 2 * j + 1];
}

template <typename T>
void warp_forward(const TensorT<T>& src, const TensorT<T>& coords, TensorT<T>& out) {
  const int64_t N = src.dim(0), C = src.dim(1), H = src.dim(2), W = src.dim(3);
  const int64_t HW = H * W;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t i = 0; i < HW; ++i) {
        const T x = coords.data()[(n * 2 + 0) * HW + i];
        const T y = coords.data()[(n * 2 + 1) * HW + i];
        const int64_t x0 = static_cast<int64_t>(std::floor(x));
        const int64_t y0 = static_cast<int64_t>(std::floor(y));
        const T fx = x - static_cast<T>(x0), fy = y - static_cast<T>(y0);
        const T* s = src.data() + (n * C + c) * HW;
        T acc = 0;
        if (y0 >= 0 && y0 < H) {
          if (x0 >= 0 && x0 < W) acc += s[y0 * W + x0] * (1 - fy) * (1 - fx);
          if (x0 + 1 >= 0 && x0 + 1 < W) acc += s[y0 * W + x0 + 1] * (1 - fy) * fx;
        }
        if (y0 + 1 >= 0 && y0 + 1 < H) {
          if (x0 >= 0 && x0 < W) acc += s[(y0 + 1) * W + x0] * fy * (1 - fx);
          if (x0 + 1 >= 0 && x0 + 1 < W) acc += s[(y0 + 1) * W + x0 + 1] * fy * fx;
        }
        out.data()[(n * C + c) * HW + i] = acc;
      }
}

template <typename T>
void warp_backward(const TensorT<T>& src, const TensorT<T>& coords, const TensorT<T>& gout,
                   TensorT<T>& dsrc, TensorT<T>& dcoords) {
  const int64_t N = src.dim(0), C = src.dim(1), H = src.dim(2), W = src.dim(3);
  const int64_t HW = H * W;
  std::fill(dsrc.vec().begin(), dsrc.vec().end(), T(0));
  std::fill(dcoords.vec().begin(), dcoords.vec().end(), T(0));
  for (int64_t n = 0; n < N; ++n)
    for (int64_t i = 0; i < HW; ++i) {
      const T x = coords.data()[(n * 2 + 0) * HW + i];
      const T y = coords.data()[(n * 2 + 1) * HW + i];
      const int64_t x0 = static_cast<int64_t>(std::floor(x));
      const int64_t y0 = static_cast<int64_t>(std::floor(y));
      const T fx = x - static_cast<T>(x0), fy = y - static_cast<T>(y0);
      T gx = 0, gy = 0;
      for (int64_t c = 0; c < C; ++c) {
        const T* s = src.data() + (n * C + c) * HW;
        T* ds = dsrc.data() + (n * C + c) * HW;
        const T gi = gout.data()[(n * C + c) * HW + i];
        if (y0 >= 0 && y0 < H) {
          if (x0 >= 0 && x0 < W) {
            ds[y0 * W + x0] += gi * (1 - fy) * (1 - fx);
            gx -= gi * s[y0 * W + x0] * (1 - fy);
            gy -= gi * s[y0 * W + x0] * (1 - fx);
          }
          if (x0 + 1 >= 0 && x0 + 1 < W) {
            ds[y0 * W + x0 + 1] += gi * (1 - fy) * fx;
            gx += gi * s[y0 * W + x0 + 1] * (1 - fy);
            gy -= gi * s[y0 * W + x0 + 1] * fx;
          }
        }
        if (y0 + 1 >= 0 && y0 + 1 < H) {
          if (x0 >= 0 && x0 < W) {
            ds[(y0 + 1) * W + x0] += gi * fy * (1 - fx);
            gx -= gi * s[(y0 + 1) * W + x0] * fy;
            gy += gi * s[(y0 + 1) * W + x0] * (1 - fx);
          }
          if (x0 + 1 >= 0 && x0 + 1 < W) {
            ds[(y0 + 1) * W + x0 + 1] += gi * fy * fx;
            gx += gi * s[(y0 + 1) * W + x0 + 1] * fy;
            gy += gi * s[(y0 + 1) * W + x0 + 1] * fx;
          }
        }
      }
      dcoords.data()[(n * 2 + 0) * HW + i] = gx;
      dcoords.data()[(n * 2 + 1) * HW + i] = gy;
    }
}

template <typename T>
void pairwise_sqdist(const T* a, int64_t n, const T* b, int64_t m, int64_t d, T* out) {
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) {
      T acc = 0;
      for (int64_t k = 0; k < d; ++k) {
        const T diff = a[i * d + k] - b[j * d + k];
        acc += diff * diff;
      }
      out[i * m + j] = acc;
    }
}

#define FACEDR_INSTANTIATE_SERIAL(T)                                                              \
  template void gemm_nn<T>(int64_t, int64_t, int64_t, const T*, const T*, T*, bool);              \
  template void gemm_nt<T>(int64_t, int64_t, int64_t, const T*, const T*, T*, bool);              \
  template void gemm_tn<T>(int64_t, int64_t, int64_t, const T*, const T*, T*, bool);              \
  template void conv2d_forward<T>(const TensorT<T>&, const TensorT<T>&, int64_t, int64_t,         \
                                  TensorT<T>&);                                                   \
  template void conv2d_input_grad<T>(const TensorT<T>&, const TensorT<T>&, int64_t, int64_t,      \
                                     int64_t, int64_t, TensorT<T>&);                              \
  template void conv2d_weight_grad<T>(const TensorT<T>&, const TensorT<T>&, int64_t, int64_t,     \
                                      int64_t, TensorT<T>&);                                      \
  template T reduce_sum<T>(const T*, int64_t);                                                    \
  template void softmax_channels<T>(const T*, int64_t, int64_t, int64_t, T*);                     \
  template void upsample2<T>(const T*, int64_t, int64_t, int64_t, T*);                            \
  template void downsum2<T>(const T*, int64_t, int64_t, int64_t, T*);                             \
  template void warp_forward<T>(const TensorT<T>&, const TensorT<T>&, TensorT<T>&);               \
  template void warp_backward<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,         \
                                 TensorT<T>&, TensorT<T>&);                                       \
  template void pairwise_sqdist<T>(const T*, int64_t, const T*, int64_t, int64_t, T*);

FACEDR_INSTANTIATE_SERIAL(float)
FACEDR_INSTANTIATE_SERIAL(double)

#undef FACEDR_INSTANTIATE_SERIAL

}  // namespace facedr::kern::serial
