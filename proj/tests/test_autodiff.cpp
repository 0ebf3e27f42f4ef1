#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "test_support.hpp"

using namespace trifuse;
using ad::Var;

namespace {

Var param(const Tensor& t) { return Var::leaf(t, true); }

// Scalarize an arbitrary op output with fixed random weights so every output
// element influences the loss.
Var weighted_sum(const Var& v, unsigned seed = 7) {
  rng_t rng(seed);
  Tensor w(v.shape());
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (std::int64_t i = 0; i < w.size(); ++i) w[i] = d(rng);
  return ad::sum(ad::mul(v, Var::leaf(w)));
}

}  // namespace

TEST_CASE("elementwise op gradients") {
  rng_t rng(1);
  const Var a = param(testsup::randn({3, 2, 2, 2}, rng));
  const Var b = param(testsup::randn({3, 2, 2, 2}, rng));
  CHECK(testsup::gradcheck([&] { return weighted_sum(ad::add(a, b)); }, {a, b}) < 1e-6);
  CHECK(testsup::gradcheck([&] { return weighted_sum(ad::sub(a, b)); }, {a, b}) < 1e-6);
  CHECK(testsup::gradcheck([&] { return weighted_sum(ad::mul(a, b)); }, {a, b}) < 1e-5);
  CHECK(testsup::gradcheck([&] { return weighted_sum(ad::sigmoid(a)); }, {a}) < 1e-5);
  CHECK(testsup::gradcheck([&] { return weighted_sum(ad::tanh(a)); }, {a}) < 1e-5);
  CHECK(testsup::gradcheck([&] { return weighted_sum(ad::scale(a, -2.5)); }, {a}) < 1e-6);
  CHECK(testsup::gradcheck([&] { return ad::mean(ad::mul(a, a)); }, {a}) < 1e-5);
}

TEST_CASE("relu gradient away from the kink") {
  Tensor t({2, 2, 2, 2});
  rng_t rng(2);
  std::uniform_real_distribution<double> d(0.2, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = (sign(rng) ? 1 : -1) * d(rng);
  const Var a = param(t);
  CHECK(testsup::gradcheck([&] { return weighted_sum(ad::relu(a)); }, {a}) < 1e-5);
}

TEST_CASE("division gradient") {
  rng_t rng(3);
  Tensor bt = testsup::randn({4}, rng);
  for (std::int64_t i = 0; i < bt.size(); ++i) bt[i] = 2.0 + std::abs(bt[i]);
  const Var a = param(testsup::randn({4}, rng));
  const Var b = param(bt);
  CHECK(testsup::gradcheck([&] { return ad::sum(ad::div(a, b)); }, {a, b}) < 1e-5);
}

TEST_CASE("matmul, transpose, linear, softmax gradients") {
  rng_t rng(4);
  const Var A = param(testsup::randn({3, 4}, rng));
  const Var B = param(testsup::randn({4, 2}, rng));
  CHECK(testsup::gradcheck([&] { return weighted_sum(ad::matmul(A, B)); }, {A, B}) < 1e-5);
  CHECK(testsup::gradcheck([&] { return weighted_sum(ad::transpose(A)); }, {A}) < 1e-6);

  const Var x = param(testsup::randn({5}, rng));
  const Var w = param(testsup::randn({3, 5}, rng));
  const Var b = param(testsup::randn({3}, rng));
  CHECK(testsup::gradcheck([&] { return weighted_sum(ad::linear(x, w, b)); }, {x, w, b}) < 1e-5);

  const Var X = param(testsup::randn({2, 5}, rng));
  CHECK(testsup::gradcheck([&] { return weighted_sum(ad::linear_rows(X, w, b)); }, {X, w, b}) <
        1e-5);
  CHECK(testsup::gradcheck([&] { return weighted_sum(ad::softmax_rows(X)); }, {X}) < 1e-5);
  CHECK(testsup::gradcheck([&] { return weighted_sum(ad::slice_cols(X, 1, 3)); }, {X}) < 1e-6);
  CHECK(testsup::gradcheck([&] { return weighted_sum(ad::concat_cols({X, X})); }, {X}) < 1e-6);
}

TEST_CASE("l2_normalize gradient and unit norm") {
  rng_t rng(5);
  const Var x = param(testsup::randn({7}, rng));
  const Var y = ad::l2_normalize(x);
  CHECK(std::sqrt(y.value().array().square().sum()) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(testsup::gradcheck([&] { return weighted_sum(ad::l2_normalize(x)); }, {x}) < 1e-5);
}

TEST_CASE("channel/spatial broadcast product gradients") {
  rng_t rng(6);
  const Var x = param(testsup::randn({3, 2, 2, 2}, rng));
  const Var g = param(testsup::randn({3}, rng));
  const Var a = param(testsup::randn({1, 2, 2, 2}, rng));
  const Var s = param(testsup::randn({3}, rng));
  const Var t = param(testsup::randn({3}, rng));
  CHECK(testsup::gradcheck([&] { return weighted_sum(ad::mul_channels(x, g)); }, {x, g}) < 1e-5);
  CHECK(testsup::gradcheck([&] { return weighted_sum(ad::mul_spatial(x, a)); }, {x, a}) < 1e-5);
  CHECK(testsup::gradcheck([&] { return weighted_sum(ad::affine_channels(x, s, t)); }, {x, s, t}) <
        1e-5);
  const Var v = param(testsup::randn({4}, rng));
  CHECK(testsup::gradcheck([&] { return weighted_sum(ad::broadcast_to_volume(v, 2, 2, 2)); }, {v}) <
        1e-5);
}

TEST_CASE("concat/slice channel gradients") {
  rng_t rng(7);
  const Var x = param(testsup::randn({2, 2, 2, 2}, rng));
  const Var y = param(testsup::randn({3, 2, 2, 2}, rng));
  CHECK(testsup::gradcheck([&] { return weighted_sum(ad::concat_channels({x, y})); }, {x, y}) <
        1e-5);
  CHECK(testsup::gradcheck([&] { return weighted_sum(ad::slice_channels(y, 1, 2)); }, {y}) < 1e-6);
}

TEST_CASE("conv3d gradients: stride 1, stride 2, kernel 1, anisotropic kernel") {
  rng_t rng(8);
  const Var x = param(testsup::randn({2, 4, 4, 4}, rng));
  SUBCASE("3x3x3 stride 1") {
    const Var w = param(testsup::randn({3, 2, 3, 3, 3}, rng, 0.4));
    const Var b = param(testsup::randn({3}, rng));
    CHECK(testsup::gradcheck([&] { return weighted_sum(ad::conv3d(x, w, b)); }, {x, w, b}) < 1e-4);
  }
  SUBCASE("3x3x3 stride 2") {
    const Var w = param(testsup::randn({3, 2, 3, 3, 3}, rng, 0.4));
    const Var b = param(testsup::randn({3}, rng));
    CHECK(testsup::gradcheck(
              [&] { return weighted_sum(ad::conv3d(x, w, b, {2, 2, 2}, {1, 1, 1})); },
              {x, w, b}) < 1e-4);
  }
  SUBCASE("1x1x1") {
    const Var w = param(testsup::randn({4, 2, 1, 1, 1}, rng, 0.6));
    const Var b = param(testsup::randn({4}, rng));
    CHECK(testsup::gradcheck(
              [&] { return weighted_sum(ad::conv3d(x, w, b, {1, 1, 1}, {0, 0, 0})); },
              {x, w, b}) < 1e-4);
  }
  SUBCASE("1x3x3 (slicewise)") {
    const Var w = param(testsup::randn({3, 2, 1, 3, 3}, rng, 0.4));
    const Var b = param(testsup::randn({3}, rng));
    CHECK(testsup::gradcheck(
              [&] { return weighted_sum(ad::conv3d(x, w, b, {1, 1, 1}, {0, 1, 1})); },
              {x, w, b}) < 1e-4);
  }
}

TEST_CASE("conv3d matches a direct dense reference on a small case") {
  rng_t rng(9);
  const Tensor xt = testsup::randn({2, 3, 3, 3}, rng);
  const Tensor wt = testsup::randn({2, 2, 3, 3, 3}, rng);
  const Tensor bt = testsup::randn({2}, rng);
  const Var y = ad::conv3d(Var::leaf(xt), Var::leaf(wt), Var::leaf(bt));
  for (int co = 0; co < 2; ++co)
    for (int z = 0; z < 3; ++z)
      for (int yy = 0; yy < 3; ++yy)
        for (int xx = 0; xx < 3; ++xx) {
          double acc = bt[co];
          for (int ci = 0; ci < 2; ++ci)
            for (int kz = 0; kz < 3; ++kz)
              for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                  const int zi = z + kz - 1, yi = yy + ky - 1, xi = xx + kx - 1;
                  if (zi < 0 || zi >= 3 || yi < 0 || yi >= 3 || xi < 0 || xi >= 3) continue;
                  acc += xt(ci, zi, yi, xi) * wt.data()[(((co * 2 + ci) * 3 + kz) * 3 + ky) * 3 + kx];
                }
          CHECK(y.value()(co, z, yy, xx) == doctest::Approx(acc).epsilon(1e-10));
        }
}

TEST_CASE("norm layer gradients") {
  rng_t rng(10);
  const Var x = param(testsup::randn({3, 2, 2, 2}, rng));
  const Var g = param(testsup::randn({3}, rng, 0.3));
  const Var b = param(testsup::randn({3}, rng));
  CHECK(testsup::gradcheck([&] { return weighted_sum(ad::instance_norm(x, g, b)); }, {x, g, b}) <
        1e-4);

  // degenerate 1-voxel spatial extent: affine passthrough
  const Var x1 = param(testsup::randn({3, 1, 1, 1}, rng));
  const Var y1 = ad::instance_norm(x1, g, b);
  for (int c = 0; c < 3; ++c)
    CHECK(y1.value()[c] ==
          doctest::Approx(x1.value()[c] * g.value()[c] + b.value()[c]).epsilon(1e-12));
  CHECK(testsup::gradcheck([&] { return weighted_sum(ad::instance_norm(x1, g, b)); }, {x1, g, b}) <
        1e-5);

  const Var xr = param(testsup::randn({2, 6}, rng));
  const Var gr = param(testsup::randn({6}, rng, 0.3));
  const Var br = param(testsup::randn({6}, rng));
  CHECK(testsup::gradcheck([&] { return weighted_sum(ad::layer_norm_rows(xr, gr, br)); },
                           {xr, gr, br}) < 1e-4);
}

TEST_CASE("layer_norm_rows standardizes each row") {
  rng_t rng(11);
  const Var x = param(testsup::randn({1, 32}, rng, 3.0));
  const Var g = Var::leaf(Tensor({32}, 1.0));
  const Var b = Var::leaf(Tensor({32}));
  const Var y = ad::layer_norm_rows(x, g, b);
  double sum = 0, sum2 = 0;
  for (int i = 0; i < 32; ++i) {
    sum += y.value()[i];
    sum2 += y.value()[i] * y.value()[i];
  }
  CHECK(std::abs(sum / 32) < 1e-5);
  CHECK(std::abs(sum2 / 32 - 1.0) < 1e-5);
}

TEST_CASE("pooling gradients") {
  rng_t rng(12);
  const Var x = param(testsup::randn({3, 2, 3, 2}, rng));
  CHECK(testsup::gradcheck([&] { return weighted_sum(ad::global_avg_pool(x)); }, {x}) < 1e-5);
  CHECK(testsup::gradcheck([&] { return weighted_sum(ad::global_max_pool(x)); }, {x}) < 1e-5);
  CHECK(testsup::gradcheck([&] { return weighted_sum(ad::channel_mean(x)); }, {x}) < 1e-5);
  CHECK(testsup::gradcheck([&] { return weighted_sum(ad::channel_max(x)); }, {x}) < 1e-5);
  const Var img = param(testsup::randn({3, 8, 8}, rng));
  CHECK(testsup::gradcheck([&] { return weighted_sum(ad::avg_pool2d(img, 2)); }, {img}) < 1e-5);
}

TEST_CASE("resampling gradients and shapes") {
  rng_t rng(13);
  const Var x = param(testsup::randn({2, 2, 2, 2}, rng));
  const Var up = ad::upsample_trilinear2x(x);
  CHECK(up.shape() == std::vector<int>{2, 4, 4, 4});
  CHECK(testsup::gradcheck([&] { return weighted_sum(ad::upsample_trilinear2x(x)); }, {x}) < 1e-5);

  const Var img = param(testsup::randn({3, 5, 7}, rng));
  const Var rs = ad::resize_bilinear2d(img, 9, 4);
  CHECK(rs.shape() == std::vector<int>{3, 9, 4});
  CHECK(testsup::gradcheck([&] { return weighted_sum(ad::resize_bilinear2d(img, 9, 4)); }, {img}) <
        1e-5);
}

TEST_CASE("upsample_trilinear2x reproduces constant and linear ramps") {
  Tensor t({1, 1, 1, 4});
  for (int i = 0; i < 4; ++i) t[i] = i;
  const Var up = ad::upsample_trilinear2x(Var::leaf(t));
  // align_corners=false: borders clamp, interior interpolates at quarter offsets
  CHECK(up.value()[0] == doctest::Approx(0.0));
  CHECK(up.value()[1] == doctest::Approx(0.25));
  CHECK(up.value()[2] == doctest::Approx(0.75));
  CHECK(up.value()[7] == doctest::Approx(3.0));
}

TEST_CASE("loss op gradients and values") {
  rng_t rng(14);
  SUBCASE("bce value at uniform half") {
    const Var p = Var::leaf(Tensor({1, 2, 2, 2}, 0.5), true);
    Tensor t({1, 2, 2, 2});
    t[0] = t[3] = 1.0;
    const Var l = ad::bce_mean(p, t);
    CHECK(l.scalar() == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  }
  SUBCASE("bce gradient") {
    Tensor pt({1, 2, 2, 2});
    rng_t r2(15);
    std::uniform_real_distribution<double> d(0.1, 0.9);
    for (std::int64_t i = 0; i < pt.size(); ++i) pt[i] = d(r2);
    const Var p = param(pt);
    Tensor t({1, 2, 2, 2});
    t[1] = t[4] = 1.0;
    CHECK(testsup::gradcheck([&] { return ad::bce_mean(p, t); }, {p}) < 1e-5);
  }
  SUBCASE("cross entropy gradient and value") {
    const Var z = param(testsup::randn({4}, rng));
    CHECK(testsup::gradcheck([&] { return ad::cross_entropy_logits(z, 2); }, {z}) < 1e-5);
    const Var uniform = Var::leaf(Tensor({4}), true);
    CHECK(ad::cross_entropy_logits(uniform, 1).scalar() ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
}

TEST_CASE("dropout: off in inference, inverted scaling in training, grad matches mask") {
  rng_t rng(16);
  const Var x = param(testsup::randn({64}, rng));
  rng_t drop_rng(5);
  const Var kept = ad::dropout(x, 0.4, drop_rng, false);
  CHECK(&kept.value() == &x.value());  // pass-through

  rng_t drop_rng2(5);
  const Var y = ad::dropout(x, 0.4, drop_rng2, true);
  int zeros = 0;
  for (std::int64_t i = 0; i < y.value().size(); ++i) {
    if (y.value()[i] == 0.0)
      ++zeros;
    else
      CHECK(y.value()[i] == doctest::Approx(x.value()[i] / 0.6).epsilon(1e-12));
  }
  CHECK(zeros > 5);
  CHECK(zeros < 60);
}

TEST_CASE("no-grad mode builds value-only graphs") {
  rng_t rng(17);
  const Var x = param(testsup::randn({4}, rng));
  ad::NoGradGuard ng;
  const Var y = ad::sigmoid(x);
  CHECK_FALSE(y.requires_grad());
  CHECK_FALSE(y.node()->backward_fn);
}

TEST_CASE("backward accumulates through shared subexpressions") {
  Var x = param(Tensor({1}, 3.0));
  const Var y = ad::mul(x, x);  // x^2, dx = 2x = 6
  y.backward();
  CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-12));
}
