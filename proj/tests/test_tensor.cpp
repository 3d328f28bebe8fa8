#include <doctest.h>

#include <cmath>

#include "fmpi/ops.hpp"
#include "support.hpp"

using namespace fmpi;
using test::random_tensor;

namespace {

// Direct six-loop convolution.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, int stride,
                          int pad) {
  const Index cin = x.dim(0), h = x.dim(1), wd = x.dim(2), cout = w.dim(0), k = w.dim(2);
  const Index ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(cout * ho * wo));
  for (Index co = 0; co < cout; ++co)
    for (Index oy = 0; oy < ho; ++oy)
      for (Index ox = 0; ox < wo; ++ox) {
        double acc = b.at({co});
        for (Index ci = 0; ci < cin; ++ci)
          for (Index ky = 0; ky < k; ++ky)
            for (Index kx = 0; kx < k; ++kx) {
              const Index iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
              if (iy >= 0 && iy < h && ix >= 0 && ix < wd) acc += x.at({ci, iy, ix}) * w.at({co, ci, ky, kx});
            }
        out[static_cast<std::size_t>((co * ho + oy) * wo + ox)] = acc;
      }
  return Tensor<double>({cout, ho, wo}, out);
}

}  // namespace

TEST_CASE("conv2d: all-ones centre and identity kernel") {
  const auto out = conv2d(Tensor<double>::full({1, 3, 3}, 1.0), Tensor<double>::full({1, 1, 3, 3}, 1.0),
                          Tensor<double>::zeros({1}), 1, 1);
  CHECK(out.at({0, 1, 1}) == 9.0);
  CHECK(out.at({0, 0, 0}) == 4.0);

  std::mt19937_64 rng(1);
  const auto x = random_tensor({2, 5, 6}, rng);
  std::vector<double> k(2 * 2 * 9, 0.0);
  k[4] = 1.0;
  k[(1 * 2 + 1) * 9 + 4] = 1.0;
  CHECK(test::bit_equal(conv2d(x, Tensor<double>({2, 2, 3, 3}, k), Tensor<double>::zeros({2}), 1, 1), x));
}

TEST_CASE("conv2d matches a direct loop") {
  std::mt19937_64 rng(2);
  for (int stride : {1, 2}) {
    const auto x = random_tensor({4, 5, 5}, rng);
    const auto w = random_tensor({2, 4, 3, 3}, rng);
    const auto b = random_tensor({2}, rng);
    CHECK(test::max_abs_diff(conv2d(x, w, b, stride, 1), naive_conv(x, w, b, stride, 1)) < 1e-12);
    const auto xf = x.cast<float>();
    const auto of = conv2d(xf, w.cast<float>(), b.cast<float>(), stride, 1).cast<double>();
    CHECK(test::max_abs_diff(of, naive_conv(x, w, b, stride, 1)) < 1e-5);
  }
}

TEST_CASE("conv2d rejects channel mismatch and counts MACs") {
  CHECK_THROWS_AS(conv2d(Tensor<float>::zeros({3, 4, 4}), Tensor<float>::zeros({2, 2, 3, 3}),
                         Tensor<float>::zeros({2}), 1, 1),
                  Error);
  reset_conv_mac_count();
  conv2d(Tensor<float>::zeros({3, 8, 8}), Tensor<float>::zeros({5, 3, 3, 3}), Tensor<float>::zeros({5}), 2, 1);
  CHECK(conv_mac_count() == 5u * 3 * 9 * 4 * 4);
}

TEST_CASE("conv2d tiled inference path equals the recorded path") {
  std::mt19937_64 rng(3);
  const auto x = random_tensor<float>({300, 40, 40}, rng);
  const auto w = random_tensor<float>({8, 300, 3, 3}, rng);
  const auto b = random_tensor<float>({8}, rng);
  const auto plain = conv2d(x, w, b, 1, 1);
  GradTape<float> tape;
  typename GradTape<float>::Scope scope(tape);
  Tensor<float> wl = w.detach();
  wl.set_requires_grad(true);
  const auto taped = conv2d(x, wl, b, 1, 1);
  CHECK(test::max_abs_diff(plain, taped) < 1e-4);
}

TEST_CASE("relu values and gradient") {
  const Tensor<double> x({3}, {-1.0, 0.0, 2.0});
  const auto y = relu(x);
  CHECK(y.data()[0] == 0.0);
  CHECK(y.data()[1] == 0.0);
  CHECK(y.data()[2] == 2.0);

  Tensor<double> leaf({2}, {-1.0, 2.0});
  leaf.set_requires_grad(true);
  GradTape<double> tape;
  typename GradTape<double>::Scope scope(tape);
  tape.backward(sum(relu(leaf)));
  CHECK(leaf.grad()[0] == 0.0);
  CHECK(leaf.grad()[1] == 1.0);
}

TEST_CASE("upsample2x") {
  const auto up = upsample2x(Tensor<float>::full({1, 1, 1}, 5.0f), UpsampleMode::kBilinear);
  CHECK(up.shape() == Shape{1, 2, 2});
  for (float v : up.data()) CHECK(v == 5.0f);

  const Tensor<float> x({1, 2, 2}, {1, 2, 3, 4});
  const auto n = upsample2x(x, UpsampleMode::kNearest);
  const std::vector<float> expect{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  CHECK(std::equal(n.data().begin(), n.data().end(), expect.begin()));

  for (auto mode : {UpsampleMode::kBilinear, UpsampleMode::kNearest}) {
    const auto c = upsample2x(Tensor<float>::full({2, 3, 5}, 0.25f), mode);
    for (float v : c.data()) CHECK(v == 0.25f);
  }
  // Half-pixel bilinear: output (0,1) sits at input x = 0.25.
  const auto b = upsample2x(Tensor<double>({1, 1, 2}, {0.0, 4.0}), UpsampleMode::kBilinear);
  CHECK(b.at({0, 0, 0}) == doctest::Approx(0.0));
  CHECK(b.at({0, 0, 1}) == doctest::Approx(1.0));
  CHECK(b.at({0, 0, 2}) == doctest::Approx(3.0));
  CHECK(b.at({0, 0, 3}) == doctest::Approx(4.0));
}

TEST_CASE("softmax") {
  const auto a = softmax(Tensor<double>({2}, {0.0, 0.0}), 0);
  CHECK(a.data()[0] == doctest::Approx(0.5));
  const auto b = softmax(Tensor<double>({2}, {std::log(2.0), 0.0}), 0);
  CHECK(b.data()[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(b.data()[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));

  std::mt19937_64 rng(4);
  const auto x = random_tensor({4, 3}, rng, -5, 5);
  const auto shifted = softmax(add_scalar(x, 123.0), 0);
  CHECK(test::max_abs_diff(softmax(x, 0), shifted) < 1e-12);
  CHECK_THROWS_AS(softmax(Tensor<double>({2}, {NAN, 0.0}), 0), Error);
}

TEST_CASE("backward basics") {
  Tensor<double> x({2}, {1.0, 2.0});
  x.set_requires_grad(true);
  {
    GradTape<double> tape;
    typename GradTape<double>::Scope scope(tape);
    tape.backward(sum(x));
    CHECK(x.grad()[0] == 1.0);
    CHECK(x.grad()[1] == 1.0);
  }
  x.zero_grad();
  {
    GradTape<double> tape;
    typename GradTape<double>::Scope scope(tape);
    tape.backward(sum(square(x)));
    CHECK(x.grad()[0] == 2.0);
    CHECK(x.grad()[1] == 4.0);
    CHECK_THROWS_AS(tape.backward(square(x)), Error);
  }
}

TEST_CASE("elementwise and structural op gradients") {
  std::mt19937_64 rng(5);
  const auto w = random_tensor({2, 3, 4}, rng);
  const auto r = test::check_gradients(
      {random_tensor({2, 3, 4}, rng, 0.5, 1.5), random_tensor({2, 3, 4}, rng, 0.5, 1.5)},
      [&](const auto& in) {
        const auto a = div(exp(in[0]), add_scalar(abs(in[1]), 0.5)) - mul_scalar(in[0], 0.3);
        const auto p = permute(a, {2, 0, 1});
        const std::vector<Tensor<double>> parts{slice(p, 0, 0, 2), slice(p, 0, 2, 2)};
        return sum(mul(permute(concat<double>(parts, 0), {1, 2, 0}), w)) + mean(neg(in[1]));
      });
  CHECK(r.rel_error < 1e-7);
}

TEST_CASE("separable filter is a valid-region 2-D filter") {
  std::mt19937_64 rng(6);
  const auto x = random_tensor({2, 7, 9}, rng);
  const std::vector<double> taps{0.25, 0.5, 0.25};
  const auto y = separable_filter_valid<double>(x, taps);
  REQUIRE(y.shape() == Shape{2, 5, 7});
  double worst = 0.0;
  for (Index c = 0; c < 2; ++c)
    for (Index i = 0; i < 5; ++i)
      for (Index j = 0; j < 7; ++j) {
        double acc = 0.0;
        for (int a = 0; a < 3; ++a)
          for (int b = 0; b < 3; ++b) acc += taps[a] * taps[b] * x.at({c, i + a, j + b});
        worst = std::max(worst, std::abs(acc - y.at({c, i, j})));
      }
  CHECK(worst < 1e-14);
  const auto r = test::check_gradients({x}, [&](const auto& in) {
    return sum(square(separable_filter_valid<double>(in[0], taps)));
  });
  CHECK(r.rel_error < 1e-7);
}

TEST_CASE("tape ownership rules") {
  Tensor<float> leaf = Tensor<float>::zeros({2});
  leaf.set_requires_grad(true);
  GradTape<float> tape;
  typename GradTape<float>::Scope scope(tape);
  Tensor<float> y = add_scalar(leaf, 1.0f);
  CHECK_THROWS_AS(y.mutable_data(), Error);
  CHECK_THROWS_AS(y.set_requires_grad(true), Error);
  CHECK(tape.size() == 1);
  tape.clear();
  CHECK(tape.size() == 0);
}
