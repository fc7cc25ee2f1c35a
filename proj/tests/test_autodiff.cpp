#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "facedr/core/autodiff.hpp"
#include "facedr/core/rng.hpp"

// Central finite-difference checks for every autodiff op, in double
// precision. The double-backward path (gradients of gradients, used by the
// gradient penalty) is checked against finite differences of a function
// that itself contains a grad() call.

using namespace facedr;
using VarD = ad::Var<double>;

namespace {

TensorD random_tensor(std::vector<int64_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  TensorD t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// build(xs) must return a scalar Var built from fresh leaves xs.
void fd_check(std::vector<TensorD> init,
              const std::function<VarD(std::vector<VarD>&)>& build, double tol = 1e-6,
              double eps = 1e-5) {
  std::vector<VarD> xs;
  for (auto& t : init) xs.push_back(VarD::leaf(t));
  VarD loss = build(xs);
  REQUIRE(loss.numel() == 1);
  ad::backward(loss);

  auto eval = [&](const std::vector<TensorD>& vals) {
    ad::NoGradGuard ng;
    std::vector<VarD> ys;
    for (const auto& t : vals) ys.push_back(VarD::leaf(t));
    return build(ys).value()[0];
  };

  for (size_t i = 0; i < init.size(); ++i) {
    for (int64_t j = 0; j < init[i].numel(); ++j) {
      auto pert = init;
      pert[i][j] += eps;
      const double lp = eval(pert);
      pert[i][j] -= 2 * eps;
      const double lm = eval(pert);
      const double fd = (lp - lm) / (2 * eps);
      const double an = xs[i].grad_acc()[j];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-4});
      CHECK_MESSAGE(std::abs(fd - an) / denom < tol,
                    "input ", i, " elem ", j, " fd=", fd, " analytic=", an);
    }
  }
}

}  // namespace

TEST_CASE("elementwise op gradients") {
  Rng rng(1);
  auto a = random_tensor({2, 3}, rng, 0.2, 1.5);
  auto b = random_tensor({2, 3}, rng, 0.3, 1.4);

  fd_check({a, b}, [](std::vector<VarD>& xs) { return ad::sum_all(ad::add(xs[0], xs[1])); });
  fd_check({a, b}, [](std::vector<VarD>& xs) { return ad::sum_all(ad::sub(xs[0], xs[1])); });
  fd_check({a, b}, [](std::vector<VarD>& xs) { return ad::sum_all(ad::mul(xs[0], xs[1])); });
  fd_check({a, b}, [](std::vector<VarD>& xs) { return ad::sum_all(ad::div(xs[0], xs[1])); });
  fd_check({a}, [](std::vector<VarD>& xs) { return ad::sum_all(ad::neg(xs[0])); });
  fd_check({a}, [](std::vector<VarD>& xs) { return ad::sum_all(ad::mul_scalar(xs[0], 2.5)); });
  fd_check({a}, [](std::vector<VarD>& xs) { return ad::sum_all(ad::square(xs[0])); });
  fd_check({a}, [](std::vector<VarD>& xs) { return ad::sum_all(ad::sqrt_(xs[0])); });
  fd_check({a}, [](std::vector<VarD>& xs) { return ad::sum_all(ad::log_(xs[0])); });
  fd_check({a}, [](std::vector<VarD>& xs) { return ad::sum_all(ad::exp_(xs[0])); });
  fd_check({a}, [](std::vector<VarD>& xs) { return ad::sum_all(ad::sigmoid(xs[0])); });
  fd_check({a}, [](std::vector<VarD>& xs) { return ad::sum_all(ad::tanh_(xs[0])); });
  fd_check({a}, [](std::vector<VarD>& xs) { return ad::mean_all(ad::abs_(xs[0])); });
  fd_check({a}, [](std::vector<VarD>& xs) { return ad::sum_all(ad::relu(xs[0])); });
  fd_check({a}, [](std::vector<VarD>& xs) { return ad::sum_all(ad::leaky_relu(xs[0], 0.1)); });
}

TEST_CASE("reduction and broadcast gradients") {
  Rng rng(2);
  auto a = random_tensor({2, 3, 4, 4}, rng);
  auto v = random_tensor({2}, rng);
  auto c = random_tensor({3}, rng);

  fd_check({a}, [](std::vector<VarD>& xs) { return ad::mean_all(xs[0]); });
  fd_check({a}, [](std::vector<VarD>& xs) { return ad::sum_all(ad::square(ad::sum_rows(xs[0]))); });
  fd_check({a}, [](std::vector<VarD>& xs) {
    return ad::sum_all(ad::square(ad::sum_channels(xs[0])));
  });
  fd_check({a}, [](std::vector<VarD>& xs) { return ad::sum_all(ad::square(ad::sum_hw(xs[0]))); });
  fd_check({a}, [](std::vector<VarD>& xs) { return ad::sum_all(ad::square(ad::sum_nhw(xs[0]))); });
  fd_check({v}, [](std::vector<VarD>& xs) {
    return ad::sum_all(ad::square(ad::broadcast_rows(xs[0], {2, 5})));
  });
  fd_check({c}, [](std::vector<VarD>& xs) {
    return ad::sum_all(ad::square(ad::bias_broadcast(xs[0], 2, 3, 3)));
  });
}

TEST_CASE("structural op gradients") {
  Rng rng(3);
  auto a = random_tensor({2, 2, 3, 3}, rng);
  auto b = random_tensor({2, 3, 3, 3}, rng);

  fd_check({a, b}, [](std::vector<VarD>& xs) {
    auto cat = ad::concat_ch(std::vector<VarD>{xs[0], xs[1]});
    return ad::sum_all(ad::square(cat));
  });
  fd_check({b}, [](std::vector<VarD>& xs) {
    return ad::sum_all(ad::square(ad::slice_ch(xs[0], 1, 2)));
  });
  fd_check({a}, [](std::vector<VarD>& xs) {
    return ad::sum_all(ad::square(ad::pad_ch(xs[0], 1, 5)));
  });
  fd_check({a}, [](std::vector<VarD>& xs) { return ad::sum_all(ad::square(ad::upsample2(xs[0]))); });
  fd_check({a}, [](std::vector<VarD>& xs) {
    auto up = ad::upsample2(xs[0]);
    return ad::sum_all(ad::square(ad::downsum2(up)));
  });
}

TEST_CASE("matmul gradients") {
  Rng rng(4);
  auto A = random_tensor({3, 4}, rng);
  auto B = random_tensor({4, 2}, rng);
  auto Bt = random_tensor({2, 4}, rng);
  auto At = random_tensor({4, 3}, rng);

  fd_check({A, B}, [](std::vector<VarD>& xs) {
    return ad::sum_all(ad::square(ad::matmul_nn(xs[0], xs[1])));
  });
  fd_check({A, Bt}, [](std::vector<VarD>& xs) {
    return ad::sum_all(ad::square(ad::matmul_nt(xs[0], xs[1])));
  });
  fd_check({At, B}, [](std::vector<VarD>& xs) {
    return ad::sum_all(ad::square(ad::matmul_tn(xs[0], xs[1])));
  });
}

TEST_CASE("conv2d family gradients") {
  Rng rng(5);
  auto x = random_tensor({2, 2, 6, 6}, rng);
  auto w = random_tensor({3, 2, 3, 3}, rng);

  for (int64_t stride : {1, 2}) {
    fd_check({x, w}, [stride](std::vector<VarD>& xs) {
      return ad::sum_all(ad::square(ad::conv2d(xs[0], xs[1], stride, 1)));
    });
  }

  // the grad ops themselves
  auto gy = random_tensor({2, 3, 6, 6}, rng);
  fd_check({gy, w}, [](std::vector<VarD>& xs) {
    return ad::sum_all(ad::square(ad::conv2d_input_grad_op(xs[0], xs[1], 1, 1, 6, 6)));
  });
  fd_check({x, gy}, [](std::vector<VarD>& xs) {
    return ad::sum_all(ad::square(ad::conv2d_weight_grad_op(xs[0], xs[1], 1, 1, 3)));
  });
}

TEST_CASE("softmax and bias gradients") {
  Rng rng(6);
  auto x = random_tensor({2, 4, 3, 3}, rng, -2.0, 2.0);
  auto b = random_tensor({4}, rng);
  fd_check({x}, [](std::vector<VarD>& xs) {
    return ad::sum_all(ad::square(ad::softmax_ch(xs[0])));
  });
  fd_check({x, b}, [](std::vector<VarD>& xs) {
    return ad::sum_all(ad::square(ad::bias_add(xs[0], xs[1])));
  });
}

TEST_CASE("gradient accumulates when a var is used twice") {
  auto x = VarD::leaf(TensorD({2}, 3.0));
  auto y = ad::sum_all(ad::mul(x, x));  // d/dx sum(x*x) = 2x
  ad::backward(y);
  CHECK(x.grad_acc()[0] == doctest::Approx(6.0));
  CHECK(x.grad_acc()[1] == doctest::Approx(6.0));
  // second backward accumulates
  auto y2 = ad::sum_all(x);
  ad::backward(y2);
  CHECK(x.grad_acc()[0] == doctest::Approx(7.0));
  x.zero_grad();
  CHECK(x.grad_acc()[0] == 0.0);
}

TEST_CASE("detach cuts the graph") {
  auto x = VarD::leaf(TensorD({2}, 2.0));
  auto y = ad::sum_all(ad::mul(x.detach(), x));
  ad::backward(y);
  CHECK(x.grad_acc()[0] == doctest::Approx(2.0));  // only the attached factor
}

TEST_CASE("double backward: gradient penalty pattern matches finite differences") {
  Rng rng(7);
  auto x0 = random_tensor({1, 2, 4, 4}, rng);
  auto w0 = random_tensor({2, 2, 3, 3}, rng, -0.5, 0.5);

  // gp(w) = (||d/dx sum(sigmoid(conv(x, w)))|| - 1)^2 evaluated at fixed x
  auto gp_value = [&](const TensorD& wt) {
    VarD x = VarD::leaf(x0);
    VarD w = VarD::leaf(wt);
    VarD s = ad::sum_all(ad::sigmoid(ad::conv2d(x, w, 1, 1)));
    VarD g = ad::grad(s, std::vector<VarD>{x}, /*create_graph=*/true)[0];
    VarD norm = ad::sqrt_(ad::add_scalar(ad::sum_all(ad::square(g)), 1e-12));
    return ad::square(ad::add_scalar(norm, -1.0));
  };

  VarD w = VarD::leaf(w0);
  {
    VarD x = VarD::leaf(x0);
    VarD s = ad::sum_all(ad::sigmoid(ad::conv2d(x, w, 1, 1)));
    VarD g = ad::grad(s, std::vector<VarD>{x}, true)[0];
    VarD norm = ad::sqrt_(ad::add_scalar(ad::sum_all(ad::square(g)), 1e-12));
    VarD gp = ad::square(ad::add_scalar(norm, -1.0));
    ad::backward(gp);
  }

  const double eps = 1e-5;
  for (int64_t j = 0; j < w0.numel(); ++j) {
    auto wp = w0;
    wp[j] += eps;
    const double lp = gp_value(wp).value()[0];
    wp[j] -= 2 * eps;
    const double lm = gp_value(wp).value()[0];
    const double fd = (lp - lm) / (2 * eps);
    const double an = w.grad_acc()[j];
    const double denom = std::max({std::abs(fd), std::abs(an), 1e-4});
    CHECK_MESSAGE(std::abs(fd - an) / denom < 1e-5, "w elem ", j, " fd=", fd, " an=", an);
  }
}

TEST_CASE("warp op first-order gradients match finite differences") {
  Rng rng(8);
  auto src = random_tensor({1, 2, 5, 5}, rng, 0.0, 1.0);
  // keep coordinates away from integers so the tent weights are smooth
  TensorD coords({1, 2, 5, 5});
  for (int64_t i = 0; i < coords.numel(); ++i) coords[i] = rng.uniform(0.3, 3.7) + 0.013;

  fd_check({src, coords}, [](std::vector<VarD>& xs) {
    return ad::sum_all(ad::square(ad::warp_bilinear_op(xs[0], xs[1])));
  }, 1e-5);
}
