#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "facedr/core/kernels.hpp"
#include "facedr/core/rng.hpp"
#include "facedr/core/tensor.hpp"

// The OpenMP kernels and their serial reference twins must agree. Where the
// parallel version preserves per-element accumulation order the comparison
// is exact; conv2d_input_grad reassociates across output positions, so it
// gets a tight tolerance instead.

using namespace facedr;

namespace {

template <typename T>
TensorT<T> random_tensor(std::vector<int64_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  TensorT<T> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
double max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

template <typename T>
double max_abs_diff(const std::vector<T>& a, const std::vector<T>& b) {
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

}  // namespace

TEST_CASE_TEMPLATE("gemm variants match serial reference", T, float, double) {
  Rng rng(42);
  const int64_t M = 17, N = 23, K = 31;
  auto A = random_tensor<T>({M, K}, rng);
  auto B = random_tensor<T>({K, N}, rng);
  auto Bt = random_tensor<T>({N, K}, rng);
  auto At = random_tensor<T>({K, M}, rng);

  TensorT<T> C1({M, N}), C2({M, N});
  kern::gemm_nn(M, N, K, A.data(), B.data(), C1.data(), false);
  kern::serial::gemm_nn(M, N, K, A.data(), B.data(), C2.data(), false);
  CHECK(max_abs_diff(C1, C2) == 0.0);

  // accumulate path
  kern::gemm_nn(M, N, K, A.data(), B.data(), C1.data(), true);
  kern::serial::gemm_nn(M, N, K, A.data(), B.data(), C2.data(), true);
  CHECK(max_abs_diff(C1, C2) == 0.0);

  kern::gemm_nt(M, N, K, A.data(), Bt.data(), C1.data(), false);
  kern::serial::gemm_nt(M, N, K, A.data(), Bt.data(), C2.data(), false);
  CHECK(max_abs_diff(C1, C2) == 0.0);

  kern::gemm_tn(M, N, K, At.data(), B.data(), C1.data(), false);
  kern::serial::gemm_tn(M, N, K, At.data(), B.data(), C2.data(), false);
  CHECK(max_abs_diff(C1, C2) == 0.0);
}

TEST_CASE_TEMPLATE("conv2d forward matches serial reference", T, float, double) {
  Rng rng(7);
  for (int64_t stride : {1, 2}) {
    auto x = random_tensor<T>({2, 3, 12, 12}, rng);
    auto w = random_tensor<T>({5, 3, 3, 3}, rng);
    const int64_t Ho = kern::conv_out_dim(12, 3, stride, 1);
    TensorT<T> y1({2, 5, Ho, Ho}), y2({2, 5, Ho, Ho});
    kern::conv2d_forward(x, w, stride, 1, y1);
    kern::serial::conv2d_forward(x, w, stride, 1, y2);
    CHECK(max_abs_diff(y1, y2) < (sizeof(T) == 4 ? 1e-5 : 1e-13));
  }
}

TEST_CASE_TEMPLATE("conv2d gradients match serial reference", T, float, double) {
  Rng rng(11);
  for (int64_t stride : {1, 2}) {
    auto x = random_tensor<T>({2, 4, 10, 10}, rng);
    auto w = random_tensor<T>({6, 4, 3, 3}, rng);
    const int64_t Ho = kern::conv_out_dim(10, 3, stride, 1);
    auto gy = random_tensor<T>({2, 6, Ho, Ho}, rng);

    TensorT<T> dx1({2, 4, 10, 10}), dx2({2, 4, 10, 10});
    kern::conv2d_input_grad(gy, w, stride, 1, 10, 10, dx1);
    kern::serial::conv2d_input_grad(gy, w, stride, 1, 10, 10, dx2);
    CHECK(max_abs_diff(dx1, dx2) < (sizeof(T) == 4 ? 1e-5 : 1e-13));

    TensorT<T> dw1({6, 4, 3, 3}), dw2({6, 4, 3, 3});
    kern::conv2d_weight_grad(x, gy, stride, 1, 3, dw1);
    kern::serial::conv2d_weight_grad(x, gy, stride, 1, 3, dw2);
    CHECK(max_abs_diff(dw1, dw2) < (sizeof(T) == 4 ? 1e-4 : 1e-12));
  }
}

TEST_CASE("reduce_sum matches serial reference exactly (same chunking)") {
  Rng rng(3);
  auto x = random_tensor<double>({3, 7, 33, 19}, rng);
  CHECK(kern::reduce_sum(x.data(), x.numel()) == kern::serial::reduce_sum(x.data(), x.numel()));
  auto xf = x.cast<float>();
  CHECK(kern::reduce_sum(xf.data(), xf.numel()) ==
        kern::serial::reduce_sum(xf.data(), xf.numel()));
}

TEST_CASE("softmax_channels matches serial reference") {
  Rng rng(5);
  auto x = random_tensor<float>({2, 11, 6, 6}, rng, -4.0, 4.0);
  TensorT<float> y1(x.shape()), y2(x.shape());
  kern::softmax_channels(x.data(), 2, 11, 36, y1.data());
  kern::serial::softmax_channels(x.data(), 2, 11, 36, y2.data());
  CHECK(max_abs_diff(y1, y2) == 0.0);
  // rows sum to one
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t i = 0; i < 36; ++i) {
      double s = 0;
      for (int64_t c = 0; c < 11; ++c) s += y1[n * 11 * 36 + c * 36 + i];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("upsample2/downsum2 match serial reference and are adjoint") {
  Rng rng(9);
  auto x = random_tensor<float>({2, 3, 8, 8}, rng);
  TensorT<float> y1({2, 3, 16, 16}), y2({2, 3, 16, 16});
  kern::upsample2(x.data(), 6, 8, 8, y1.data());
  kern::serial::upsample2(x.data(), 6, 8, 8, y2.data());
  CHECK(max_abs_diff(y1, y2) == 0.0);

  TensorT<float> d1({2, 3, 8, 8}), d2({2, 3, 8, 8});
  kern::downsum2(y1.data(), 6, 16, 16, d1.data());
  kern::serial::downsum2(y1.data(), 6, 16, 16, d2.data());
  CHECK(max_abs_diff(d1, d2) == 0.0);

  // <up(x), u> == <x, down(u)>
  auto u = random_tensor<double>({1, 1, 6, 6}, rng);
  auto xs = random_tensor<double>({1, 1, 3, 3}, rng);
  TensorT<double> up({1, 1, 6, 6}), dn({1, 1, 3, 3});
  kern::upsample2(xs.data(), 1, 3, 3, up.data());
  kern::downsum2(u.data(), 1, 6, 6, dn.data());
  double lhs = 0, rhs = 0;
  for (int64_t i = 0; i < up.numel(); ++i) lhs += up[i] * u[i];
  for (int64_t i = 0; i < dn.numel(); ++i) rhs += dn[i] * xs[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE_TEMPLATE("warp kernels match serial reference", T, float, double) {
  Rng rng(13);
  auto src = random_tensor<T>({2, 3, 8, 8}, rng, 0.0, 1.0);
  auto coords = random_tensor<T>({2, 2, 8, 8}, rng, -2.0, 9.0);
  TensorT<T> o1(src.shape()), o2(src.shape());
  kern::warp_forward(src, coords, o1);
  kern::serial::warp_forward(src, coords, o2);
  CHECK(max_abs_diff(o1, o2) == 0.0);

  auto g = random_tensor<T>({2, 3, 8, 8}, rng);
  TensorT<T> ds1(src.shape()), ds2(src.shape()), dc1(coords.shape()), dc2(coords.shape());
  kern::warp_backward(src, coords, g, ds1, dc1);
  kern::serial::warp_backward(src, coords, g, ds2, dc2);
  CHECK(max_abs_diff(ds1, ds2) < (sizeof(T) == 4 ? 1e-6 : 1e-14));
  CHECK(max_abs_diff(dc1, dc2) < (sizeof(T) == 4 ? 1e-5 : 1e-13));
}

TEST_CASE("pairwise_sqdist matches serial reference") {
  Rng rng(17);
  auto a = random_tensor<float>({9, 5}, rng);
  auto b = random_tensor<float>({7, 5}, rng);
  TensorT<float> d1({9, 7}), d2({9, 7});
  kern::pairwise_sqdist(a.data(), 9, b.data(), 7, 5, d1.data());
  kern::serial::pairwise_sqdist(a.data(), 9, b.data(), 7, 5, d2.data());
  CHECK(max_abs_diff(d1, d2) == 0.0);
}

TEST_CASE("kernels are deterministic across repeated calls") {
  Rng rng(23);
  auto x = random_tensor<float>({3, 8, 16, 16}, rng);
  auto w = random_tensor<float>({8, 8, 3, 3}, rng);
  TensorT<float> y1({3, 8, 16, 16}), y2({3, 8, 16, 16});
  kern::conv2d_forward(x, w, 1, 1, y1);
  kern::conv2d_forward(x, w, 1, 1, y2);
  CHECK(max_abs_diff(y1, y2) == 0.0);
  float s1 = kern::reduce_sum(x.data(), x.numel());
  float s2 = kern::reduce_sum(x.data(), x.numel());
  CHECK(s1 == s2);
}

TEST_CASE("adam_step applies the bias-corrected update") {
  // single parameter, one step: p -= lr * g/ (|g| + eps) independent of moments scale
  std::vector<float> p{1.0f}, g{0.5f}, m{0.0f}, v{0.0f};
  kern::adam_step<float>(p.data(), g.data(), m.data(), v.data(), 1, 0.1f, 0.9f, 0.999f, 1e-8f, 1);
  // mhat = g, vhat = g^2 -> update = lr * g / (|g| + eps) = lr * sign(g) approx
  CHECK(p[0] == doctest::Approx(1.0f - 0.1f).epsilon(1e-4));
}
