// Layer-level checks: the im2col convolution against a direct nested-loop
// reference, finite-difference gradients for every primitive, and the exact
// semantics of pooling, concatenation and resizing.

#include <catch2/catch_amalgamated.hpp>

#include <vector>

#include "support/oracles.hpp"
#include "triplab/layers.hpp"
#include "triplab/rng.hpp"

using namespace triplab;

namespace {

Tensor<double> random_tensor(const std::vector<int>& shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(shape);
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * scale;
  return t;
}

}  // namespace

TEST_CASE("conv2d_forward matches the direct nested-loop convolution") {
  Rng rng(901);
  struct Case {
    int h, w, cin, kh, kw, cout, stride, pad;
  };
  const std::vector<Case> cases = {
      {7, 9, 3, 3, 3, 4, 1, 1},  // same-pad unit stride
      {8, 10, 2, 3, 3, 5, 2, 1}, // downsampling block
      {6, 6, 4, 1, 1, 3, 1, 0},  // pointwise
      {5, 7, 1, 3, 5, 2, 1, 2},  // anisotropic kernel, wide padding
  };
  for (const auto& c : cases) {
    ConvLayer<double> layer(c.kh, c.kw, c.cin, c.cout, c.stride, c.pad);
    he_init(layer, rng);
    for (std::int64_t i = 0; i < layer.b.size(); ++i) layer.b[i] = rng.normal();
    const Tensor<double> x = random_tensor({c.h, c.w, c.cin}, rng);

    ConvCache<double> cache;
    Tensor<double> y;
    conv2d_forward(layer, x, cache, y);

    const std::vector<double> expected = testing::oracle_conv2d(
        std::vector<double>(x.data(), x.data() + x.size()), c.h, c.w, c.cin,
        std::vector<double>(layer.w.data(), layer.w.data() + layer.w.size()), c.kh, c.kw, c.cout,
        std::vector<double>(layer.b.data(), layer.b.data() + layer.b.size()), c.stride, c.pad);

    REQUIRE(y.dim(0) == layer.out_h(c.h));
    REQUIRE(y.dim(1) == layer.out_w(c.w));
    REQUIRE(y.dim(2) == c.cout);
    REQUIRE(static_cast<std::size_t>(y.size()) == expected.size());
    for (std::int64_t i = 0; i < y.size(); ++i)
      REQUIRE_THAT(y[i], Catch::Matchers::WithinAbs(expected[static_cast<std::size_t>(i)], 1e-10));
  }
}

TEST_CASE("conv2d_forward rejects mismatched input channels") {
  ConvLayer<double> layer(3, 3, 4, 2);
  Tensor<double> x({5, 5, 3});
  ConvCache<double> cache;
  Tensor<double> y;
  REQUIRE_THROWS_AS(conv2d_forward(layer, x, cache, y), ShapeError);
}

TEST_CASE("conv2d_backward matches central finite differences") {
  Rng rng(902);
  ConvLayer<double> layer(3, 3, 2, 3, 2, 1);
  he_init(layer, rng);
  Tensor<double> x = random_tensor({6, 8, 2}, rng);

  ConvCache<double> cache;
  Tensor<double> y;
  conv2d_forward(layer, x, cache, y);
  // Scalar objective L = <y, r> with a fixed random direction r, so dL/dy = r.
  const Tensor<double> r = random_tensor({y.dim(0), y.dim(1), y.dim(2)}, rng);
  auto loss = [&]() {
    ConvCache<double> c2;
    Tensor<double> y2;
    conv2d_forward(layer, x, c2, y2);
    double L = 0;
    for (std::int64_t i = 0; i < y2.size(); ++i) L += y2[i] * r[i];
    return L;
  };

  ConvLayer<double> grads(3, 3, 2, 3, 2, 1);
  grads.w.zero();
  grads.b.zero();
  Tensor<double> dx;
  conv2d_backward(layer, cache, r, grads, &dx);

  const double step = 1e-6;
  Rng pick(903);
  for (int trial = 0; trial < 20; ++trial) {
    const std::int64_t wi = pick.uniform_int(layer.w.size());
    const double fd = testing::central_difference(
        [&](double v) {
          const double keep = layer.w[wi];
          layer.w[wi] = v;
          const double L = loss();
          layer.w[wi] = keep;
          return L;
        },
        layer.w[wi], step);
    REQUIRE_THAT(grads.w[wi], Catch::Matchers::WithinAbs(fd, 1e-6));
  }
  for (std::int64_t bi = 0; bi < layer.b.size(); ++bi) {
    const double fd = testing::central_difference(
        [&](double v) {
          const double keep = layer.b[bi];
          layer.b[bi] = v;
          const double L = loss();
          layer.b[bi] = keep;
          return L;
        },
        layer.b[bi], step);
    REQUIRE_THAT(grads.b[bi], Catch::Matchers::WithinAbs(fd, 1e-6));
  }
  for (int trial = 0; trial < 20; ++trial) {
    const std::int64_t xi = pick.uniform_int(x.size());
    const double fd = testing::central_difference(
        [&](double v) {
          const double keep = x[xi];
          x[xi] = v;
          const double L = loss();
          x[xi] = keep;
          return L;
        },
        x[xi], step);
    REQUIRE_THAT(dx[xi], Catch::Matchers::WithinAbs(fd, 1e-6));
  }
}

TEST_CASE("conv2d_backward accumulates into existing gradients") {
  Rng rng(904);
  ConvLayer<double> layer(3, 3, 1, 2);
  he_init(layer, rng);
  const Tensor<double> x = random_tensor({4, 4, 1}, rng);
  ConvCache<double> cache;
  Tensor<double> y;
  conv2d_forward(layer, x, cache, y);
  const Tensor<double> dy = random_tensor({y.dim(0), y.dim(1), y.dim(2)}, rng);

  ConvLayer<double> once(3, 3, 1, 2), twice(3, 3, 1, 2);
  once.w.zero();
  once.b.zero();
  twice.w.zero();
  twice.b.zero();
  conv2d_backward(layer, cache, dy, once, static_cast<Tensor<double>*>(nullptr));
  conv2d_backward(layer, cache, dy, twice, static_cast<Tensor<double>*>(nullptr));
  conv2d_backward(layer, cache, dy, twice, static_cast<Tensor<double>*>(nullptr));
  for (std::int64_t i = 0; i < once.w.size(); ++i)
    REQUIRE_THAT(twice.w[i], Catch::Matchers::WithinRel(2.0 * once.w[i], 1e-12));
}

TEST_CASE("im2col and col2im are adjoint") {
  // <im2col(x), C> == <x, col2im(C)> for any C: the pair implements a linear
  // map and its exact transpose, which is what the backward pass relies on.
  Rng rng(905);
  const int h = 6, w = 7, c = 3, kh = 3, kw = 3, stride = 2, pad = 1;
  const Tensor<double> x = random_tensor({h, w, c}, rng);
  Tensor<double> cols;
  nn::im2col(x, kh, kw, stride, pad, cols);

  const Tensor<double> cdir = random_tensor({cols.dim(0), cols.dim(1)}, rng);
  Tensor<double> back({h, w, c});
  nn::col2im(cdir, kh, kw, stride, pad, back);

  double lhs = 0, rhs = 0;
  for (std::int64_t i = 0; i < cols.size(); ++i) lhs += cols[i] * cdir[i];
  for (std::int64_t i = 0; i < x.size(); ++i) rhs += x[i] * back[i];
  REQUIRE_THAT(lhs, Catch::Matchers::WithinRel(rhs, 1e-12));
}

TEST_CASE("relu forward and backward follow the sign of the activation") {
  Tensor<double> x({5});
  x(0) = -2.0;
  x(1) = -0.0;
  x(2) = 0.5;
  x(3) = 3.0;
  x(4) = -1e-9;
  Tensor<double> y;
  relu_forward(x, y);
  REQUIRE(y(0) == 0.0);
  REQUIRE(y(1) == 0.0);
  REQUIRE(y(2) == 0.5);
  REQUIRE(y(3) == 3.0);
  REQUIRE(y(4) == 0.0);

  Tensor<double> dy({5});
  dy.fill(1.5);
  Tensor<double> dx;
  relu_backward(y, dy, dx);
  REQUIRE(dx(0) == 0.0);
  REQUIRE(dx(1) == 0.0);
  REQUIRE(dx(2) == 1.5);
  REQUIRE(dx(3) == 1.5);
  REQUIRE(dx(4) == 0.0);
}

TEST_CASE("global max pool returns per-channel spatial maxima") {
  Rng rng(906);
  const Tensor<double> x = random_tensor({5, 9, 4}, rng);
  Tensor<double> logits;
  std::vector<int> argmax;
  global_max_pool(x, logits, argmax);

  REQUIRE(logits.dim(0) == 4);
  for (int k = 0; k < 4; ++k) {
    double best = x(0, 0, k);
    for (int y = 0; y < 5; ++y)
      for (int xx = 0; xx < 9; ++xx) best = std::max(best, x(y, xx, k));
    REQUIRE(logits(k) == best);
    REQUIRE(x(argmax[static_cast<std::size_t>(k)] / 9, argmax[static_cast<std::size_t>(k)] % 9, k) == best);
  }
}

TEST_CASE("global max pool resolves ties to the first scan position") {
  Tensor<double> x({2, 2, 1});
  x.fill(7.0);
  Tensor<double> logits;
  std::vector<int> argmax;
  global_max_pool(x, logits, argmax);
  REQUIRE(logits(0) == 7.0);
  REQUIRE(argmax[0] == 0);
}

TEST_CASE("global max pool backward routes gradient only to the argmax cell") {
  Rng rng(907);
  Tensor<double> x = random_tensor({4, 6, 3}, rng);
  Tensor<double> logits;
  std::vector<int> argmax;
  global_max_pool(x, logits, argmax);

  Tensor<double> dlogits({3});
  dlogits(0) = 1.0;
  dlogits(1) = -2.0;
  dlogits(2) = 0.25;
  Tensor<double> dx({4, 6, 3});
  global_max_pool_backward(dlogits, argmax, dx);

  double total = 0;
  for (std::int64_t i = 0; i < dx.size(); ++i) total += std::abs(dx[i]);
  REQUIRE_THAT(total, Catch::Matchers::WithinAbs(3.25, 1e-12));
  for (int k = 0; k < 3; ++k)
    REQUIRE(dx(argmax[static_cast<std::size_t>(k)] / 6, argmax[static_cast<std::size_t>(k)] % 6, k) ==
            dlogits(k));
}

TEST_CASE("dense layer matches finite differences") {
  Rng rng(908);
  DenseLayer<double> layer(6, 4);
  he_init(layer, rng);
  for (std::int64_t i = 0; i < layer.b.size(); ++i) layer.b[i] = rng.normal();
  Tensor<double> x = random_tensor({6}, rng);
  Tensor<double> y;
  dense_forward(layer, x, y);
  const Tensor<double> r = random_tensor({4}, rng);
  auto loss = [&]() {
    Tensor<double> y2;
    dense_forward(layer, x, y2);
    double L = 0;
    for (std::int64_t i = 0; i < y2.size(); ++i) L += y2[i] * r[i];
    return L;
  };

  DenseLayer<double> grads(6, 4);
  grads.w.zero();
  grads.b.zero();
  Tensor<double> dx;
  dense_backward(layer, x, r, grads, &dx);

  const double step = 1e-6;
  for (std::int64_t wi = 0; wi < layer.w.size(); ++wi) {
    const double fd = testing::central_difference(
        [&](double v) {
          const double keep = layer.w[wi];
          layer.w[wi] = v;
          const double L = loss();
          layer.w[wi] = keep;
          return L;
        },
        layer.w[wi], step);
    REQUIRE_THAT(grads.w[wi], Catch::Matchers::WithinAbs(fd, 1e-7));
  }
  for (std::int64_t xi = 0; xi < x.size(); ++xi) {
    const double fd = testing::central_difference(
        [&](double v) {
          const double keep = x[xi];
          x[xi] = v;
          const double L = loss();
          x[xi] = keep;
          return L;
        },
        x[xi], step);
    REQUIRE_THAT(dx[xi], Catch::Matchers::WithinAbs(fd, 1e-7));
  }
}

TEST_CASE("dense_forward rejects a mis-sized input") {
  DenseLayer<double> layer(8, 2);
  Tensor<double> x({7});
  Tensor<double> y;
  REQUIRE_THROWS_AS(dense_forward(layer, x, y), ShapeError);
}

TEST_CASE("channel concat and split are inverse and adjoint") {
  Rng rng(909);
  const Tensor<double> a = random_tensor({4, 5, 3}, rng);
  const Tensor<double> b = random_tensor({4, 5, 2}, rng);
  Tensor<double> y;
  concat_channels(a, b, y);
  REQUIRE(y.dim(2) == 5);
  for (int yy = 0; yy < 4; ++yy)
    for (int xx = 0; xx < 5; ++xx) {
      for (int c = 0; c < 3; ++c) REQUIRE(y(yy, xx, c) == a(yy, xx, c));
      for (int c = 0; c < 2; ++c) REQUIRE(y(yy, xx, 3 + c) == b(yy, xx, c));
    }

  Tensor<double> da, db;
  split_channels_backward(y, 3, da, db);
  for (std::int64_t i = 0; i < a.size(); ++i) REQUIRE(da[i] == a[i]);
  for (std::int64_t i = 0; i < b.size(); ++i) REQUIRE(db[i] == b[i]);

  Tensor<double> mis({3, 5, 2});
  Tensor<double> out;
  REQUIRE_THROWS_AS(concat_channels(a, mis, out), ShapeError);
}

TEST_CASE("bilinear resize is identity at the same grid and adjoint to its backward") {
  Rng rng(910);
  const Tensor<double> x = random_tensor({5, 7, 2}, rng);
  Tensor<double> same;
  bilinear_resize(x, 5, 7, same);
  for (std::int64_t i = 0; i < x.size(); ++i)
    REQUIRE_THAT(same[i], Catch::Matchers::WithinAbs(x[i], 1e-12));

  Tensor<double> up;
  bilinear_resize(x, 9, 11, up);
  const Tensor<double> dy = random_tensor({9, 11, 2}, rng);
  Tensor<double> dx;
  bilinear_resize_backward(dy, 5, 7, dx);
  double lhs = 0, rhs = 0;
  for (std::int64_t i = 0; i < up.size(); ++i) lhs += up[i] * dy[i];
  for (std::int64_t i = 0; i < x.size(); ++i) rhs += x[i] * dx[i];
  REQUIRE_THAT(lhs, Catch::Matchers::WithinRel(rhs, 1e-10));
}

TEST_CASE("he_init is deterministic in the generator state") {
  ConvLayer<double> a(3, 3, 4, 8), b(3, 3, 4, 8);
  Rng r1(77), r2(77);
  he_init(a, r1);
  he_init(b, r2);
  for (std::int64_t i = 0; i < a.w.size(); ++i) REQUIRE(a.w[i] == b.w[i]);
  for (std::int64_t i = 0; i < a.b.size(); ++i) REQUIRE(a.b[i] == 0.0);
}
