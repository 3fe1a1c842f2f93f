#include <doctest.h>

#include <cmath>

#include "icl/tensor.hpp"

using namespace icl;

namespace {

Tensor t2x2(real a, real b, real c, real d) {
  return Tensor::from_data({2, 2}, {a, b, c, d});
}

bool approx(real a, real b, real eps = real(1e-6)) { return std::fabs(a - b) <= eps; }

} // namespace

TEST_CASE("matmul identity, hand case, annihilator") {
  Tensor m = t2x2(1, 2, 3, 4);
  Tensor id = t2x2(1, 0, 0, 1);
  Tensor r = matmul(m, id);
  CHECK(r.value()[0] == 1);
  CHECK(r.value()[1] == 2);
  CHECK(r.value()[2] == 3);
  CHECK(r.value()[3] == 4);

  Tensor v = Tensor::from_data({2, 1}, {5, 6});
  Tensor mv = matmul(m, v);
  CHECK(mv.value()[0] == 17);
  CHECK(mv.value()[1] == 39);

  Tensor z = Tensor::zeros({2, 2});
  Tensor zr = matmul(z, m);
  for (real x : zr.value()) CHECK(x == 0);

  CHECK_THROWS_AS(matmul(m, Tensor::zeros({3, 2})), InvalidArgument);
}

TEST_CASE("softmax symmetry, shift invariance, closed form") {
  Tensor a = Tensor::from_data({1, 2}, {0, 0});
  Tensor sa = softmax(a);
  CHECK(approx(sa.value()[0], real(0.5)));
  CHECK(approx(sa.value()[1], real(0.5)));

  Tensor big = Tensor::from_data({1, 2}, {1000, 1000});
  Tensor sb = softmax(big);
  CHECK(approx(sb.value()[0], real(0.5)));
  CHECK(std::isfinite(sb.value()[1]));

  Tensor c = Tensor::from_data({1, 2}, {0, real(std::log(3.0))});
  Tensor sc = softmax(c);
  CHECK(approx(sc.value()[0], real(0.25), real(1e-6)));
  CHECK(approx(sc.value()[1], real(0.75), real(1e-6)));

  CHECK_THROWS_AS(softmax(a, 5), InvalidArgument);
}

TEST_CASE("softmax rows sum to 1 on random input, any axis") {
  Rng rng(7);
  Tensor x = rng_normal(rng, {4, 3, 5});
  for (int axis : {0, 1, 2}) {
    Tensor y = softmax(x, axis);
    // sum over the softmax axis must be 1 for every slice
    const auto& shape = y.shape();
    int64_t inner = 1, outer = 1, n = shape[size_t(axis)];
    for (size_t i = size_t(axis) + 1; i < shape.size(); ++i) inner *= shape[i];
    for (size_t i = 0; i < size_t(axis); ++i) outer *= shape[i];
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t in = 0; in < inner; ++in) {
        real s = 0;
        for (int64_t j = 0; j < n; ++j) s += y.value()[size_t(o * n * inner + j * inner + in)];
        CHECK(approx(s, 1, real(1e-6)));
      }
  }
}

TEST_CASE("layer_norm edge rows and statistics") {
  Tensor gain = Tensor::full({4}, 1);
  Tensor bias = Tensor::zeros({4});

  Tensor constant = Tensor::full({1, 4}, real(3.7));
  Tensor yc = layer_norm(constant, gain, bias);
  for (real v : yc.value()) CHECK(approx(v, 0, real(1e-3)));

  Tensor pm = Tensor::from_data({1, 2}, {1, -1});
  Tensor ypm = layer_norm(pm, Tensor::full({2}, 1), Tensor::zeros({2}));
  CHECK(approx(ypm.value()[0], 1, real(1e-2)));
  CHECK(approx(ypm.value()[1], -1, real(1e-2)));

  Tensor b = Tensor::full({4}, real(2.5));
  Tensor yb = layer_norm(constant, Tensor::zeros({4}), b);
  for (real v : yb.value()) CHECK(v == real(2.5));

  // non-degenerate rows: |mean| < 1e-5, |var - 1| < 1e-3
  Rng rng(3);
  Tensor x = rng_normal(rng, {8, 32});
  Tensor y = layer_norm(x, Tensor::full({32}, 1), Tensor::zeros({32}));
  for (int64_t r = 0; r < 8; ++r) {
    real mean = 0, var = 0;
    for (int64_t c = 0; c < 32; ++c) mean += y.value()[size_t(r * 32 + c)];
    mean /= 32;
    for (int64_t c = 0; c < 32; ++c) {
      real d = y.value()[size_t(r * 32 + c)] - mean;
      var += d * d;
    }
    var /= 32;
    CHECK(std::fabs(mean) < real(1e-5));
    CHECK(std::fabs(var - 1) < real(1e-3));
  }
}

TEST_CASE("gelu asymptotes") {
  Tensor x = Tensor::from_data({3}, {0, 10, -10});
  Tensor y = gelu(x);
  CHECK(y.value()[0] == 0);
  CHECK(approx(y.value()[1], 10, real(1e-4)));
  CHECK(approx(y.value()[2], 0, real(1e-4)));
}

TEST_CASE("embedding lookup gather, doubled grad, empty ids") {
  Tensor table = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6}, true);

  std::vector<int> first = {0};
  Tensor r = embedding_lookup(table, first);
  CHECK(r.value()[0] == 1);
  CHECK(r.value()[1] == 2);

  std::vector<int> repeated = {1, 1};
  Tensor y = embedding_lookup(table, repeated);
  Tensor loss = mse_loss(y, Tensor::zeros({2, 2}));
  backward(loss);
  // scatter-add: row 1 grad = 2 * (2/4) * value = value accumulated twice
  auto g = table.grad();
  CHECK(approx(g[2], real(2 * 0.5 * 3)));
  CHECK(g[0] == 0);

  std::vector<int> empty;
  Tensor e = embedding_lookup(table, empty);
  CHECK(e.shape() == Shape{0, 2});
  CHECK(e.numel() == 0);

  std::vector<int> bad = {3};
  CHECK_THROWS_AS(embedding_lookup(table, bad), InvalidArgument);
}

TEST_CASE("mse_loss values and errors") {
  Tensor a = Tensor::from_data({2}, {1, 3});
  CHECK(mse_loss(a, a).item() == 0);
  CHECK(mse_loss(Tensor::from_data({1}, {2}), Tensor::from_data({1}, {0})).item() == 4);
  CHECK(mse_loss(a, Tensor::zeros({2})).item() == 5);
  CHECK_THROWS_AS(mse_loss(a, Tensor::zeros({3})), InvalidArgument);
}

TEST_CASE("backward: analytic square, accumulation, detach, non-scalar root") {
  Tensor x = Tensor::from_data({1}, {3}, true);
  Tensor loss = mul(x, x);
  backward(loss);
  CHECK(approx(x.grad()[0], 6));

  backward(loss); // repeated backward accumulates
  CHECK(approx(x.grad()[0], 12));

  x.zero_grad();
  Tensor d = x.detach();
  Tensor loss2 = mul(d, d);
  CHECK_FALSE(loss2.requires_grad());
  backward(loss2); // no grad anywhere; x untouched
  CHECK(x.grad()[0] == 0);

  Tensor vec = Tensor::from_data({2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(vec), InvalidArgument);
}

TEST_CASE("no-grad mode skips graph construction") {
  Tensor x = Tensor::from_data({1}, {2}, true);
  {
    NoGradGuard ng;
    Tensor y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
  }
  Tensor y = mul(x, x);
  CHECK(y.requires_grad());
}

TEST_CASE("rng determinism and moments") {
  Rng a(42), b(42);
  Tensor ta = rng_normal(a, {64});
  Tensor tb = rng_normal(b, {64});
  for (int64_t i = 0; i < 64; ++i) CHECK(ta.value()[size_t(i)] == tb.value()[size_t(i)]);

  // CLT bounds at n = 1e5
  Rng big(123);
  Tensor n = rng_normal(big, {100000});
  double mean = 0, var = 0;
  for (real v : n.value()) mean += double(v);
  mean /= 100000;
  for (real v : n.value()) var += (double(v) - mean) * (double(v) - mean);
  var /= 100000;
  CHECK(std::fabs(mean) < 0.02);
  CHECK(std::fabs(var - 1) < 0.05);

  // sequential calls advance the stream
  Rng c(42);
  Tensor first = rng_normal(c, {64});
  Tensor second = rng_normal(c, {64});
  bool any_diff = false;
  for (int64_t i = 0; i < 64; ++i) any_diff |= first.value()[size_t(i)] != second.value()[size_t(i)];
  CHECK(any_diff);
}

TEST_CASE("uniform stream is platform-stable (frozen values)") {
  // splitmix64 golden values: document the constants by pinning outputs.
  Rng rng(0);
  CHECK(rng.next_u64() == 0xE220A8397B1DCDAFULL);
  CHECK(rng.next_u64() == 0x6E789E6AA1B965F4ULL);
  CHECK(rng.next_u64() == 0x06C45D188009454FULL);
}

TEST_CASE("fixed seed and op sequence give bitwise-identical results") {
  auto run = [] {
    Rng rng(9);
    Tensor x = rng_normal(rng, {8, 8}, 1, true);
    Tensor w = rng_normal(rng, {8, 8}, real(0.5), true);
    Tensor y = gelu(matmul(x, softmax(w)));
    Tensor loss = mse_loss(y, Tensor::zeros({8, 8}));
    backward(loss);
    std::vector<real> out(loss.value().begin(), loss.value().end());
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    return out;
  };
  auto r1 = run(), r2 = run();
  REQUIRE(r1.size() == r2.size());
  for (size_t i = 0; i < r1.size(); ++i) CHECK(r1[i] == r2[i]);
}

TEST_CASE("finite checks trap non-finite outputs when enabled") {
  Tensor huge = Tensor::full({4}, real(1e38));
  set_finite_checks(true);
  CHECK_THROWS_AS(scale(huge, real(1e10)), NumericError);
  set_finite_checks(false);
  Tensor ok = scale(huge, real(1e10)); // silent in the default mode
  CHECK(!std::isfinite(ok.value()[0]));
}

TEST_CASE("slice and concat round trips") {
  Rng rng(5);
  Tensor x = rng_normal(rng, {6, 8});
  Tensor top = slice_rows(x, 0, 2);
  Tensor rest = slice_rows(x, 2, 4);
  Tensor back = concat_rows(top, rest);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(back.value()[size_t(i)] == x.value()[size_t(i)]);

  Tensor left = slice_cols(x, 0, 3);
  Tensor right = slice_cols(x, 3, 5);
  Tensor cols = concat_cols({left, right});
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(cols.value()[size_t(i)] == x.value()[size_t(i)]);

  CHECK_THROWS_AS(slice_rows(x, 5, 3), InvalidArgument);
  CHECK_THROWS_AS(slice_cols(x, 0, 9), InvalidArgument);
}

TEST_CASE("broadcast ops match hand arithmetic") {
  Tensor x = t2x2(1, 2, 3, 4);
  Tensor v = Tensor::from_data({2}, {10, 20});
  Tensor a = add_rows(x, v);
  CHECK(a.value()[0] == 11);
  CHECK(a.value()[1] == 22);
  CHECK(a.value()[2] == 13);
  CHECK(a.value()[3] == 24);
  Tensor m = mul_rows(x, v);
  CHECK(m.value()[0] == 10);
  CHECK(m.value()[1] == 40);
  CHECK(m.value()[2] == 30);
  CHECK(m.value()[3] == 80);
  CHECK_THROWS_AS(add_rows(x, Tensor::zeros({3})), InvalidArgument);
}
