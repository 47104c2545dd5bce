#include <cmath>
#include <vector>

#include "doctest.h"
#include "wmf/ops.hpp"
#include "wmf/rng.hpp"

using namespace wmf;

namespace {
void check_values(const Tensor& t, const std::vector<double>& want, double tol = 1e-6) {
  REQUIRE(t.numel() == static_cast<std::int64_t>(want.size()));
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(t.at(i) - want[i]) <= tol);
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && a.values() == b.values();
}
}  // namespace

TEST_CASE("tensor construction keeps shape and length consistent") {
  Tensor t = Tensor::zeros({2, 3, 4, 5});
  CHECK(t.numel() == 120);
  CHECK(t.dtype() == DType::F32);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0, 2.0, 3.0}), Error);
  DTypeScope f64(DType::F64);
  CHECK(Tensor::zeros({1}).dtype() == DType::F64);
}

TEST_CASE("matmul identity and dot product") {
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::from({2, 2}, {3, 4, 5, 6});
  check_values(ops::matmul(eye, b), {3, 4, 5, 6});
  check_values(ops::matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4})), {11});
  CHECK_THROWS_AS(ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), Error);
}

TEST_CASE("conv1x1 identity and channel sum") {
  Rng rng(1);
  Tensor x = random_uniform({1, 3, 4, 4}, rng, -1, 1);
  Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(bit_equal(ops::conv1x1(x, eye), x));
  Tensor px = Tensor::from({1, 2, 1, 1}, {0.25, 0.75});
  check_values(ops::conv1x1(px, Tensor::from({1, 2}, {1, 1})), {1.0});
  CHECK_THROWS_AS(ops::conv1x1(x, Tensor::zeros({2, 2})), Error);
}

TEST_CASE("dconv3x3 delta kernel and constant image") {
  Rng rng(2);
  Tensor x = random_uniform({1, 2, 5, 5}, rng, -1, 1);
  Tensor delta = Tensor::zeros({2, 3, 3});
  delta.set(4, 1.0);
  delta.set(9 + 4, 1.0);
  CHECK(bit_equal(ops::dconv3x3(x, delta), x));

  const double v = 0.5;
  Tensor c = Tensor::full({1, 1, 5, 5}, v);
  Tensor y = ops::dconv3x3(c, Tensor::full({1, 3, 3}, 1.0));
  CHECK(y.at(2 * 5 + 2) == doctest::Approx(9 * v));
  CHECK_THROWS_AS(ops::dconv3x3(c, Tensor::full({1, 5, 5}, 1.0)), Error);
  try {
    ops::dconv3x3(c, Tensor::full({1, 5, 5}, 1.0));
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
  }
}

TEST_CASE("softmax examples") {
  check_values(ops::softmax(Tensor::from({2}, {0, 0}), 0), {0.5, 0.5});
  check_values(ops::softmax(Tensor::from({1}, {7.5}), 0), {1.0});
  DTypeScope f64(DType::F64);
  Tensor y = ops::softmax(Tensor::from({3}, {1, 2, 3}), 0);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(y.at(i) - std::exp(i + 1.0) / z) <= 1e-6);
}

TEST_CASE("softmax slices sum to one and stay in [0,1]") {
  Rng rng(3);
  for (int axis = 0; axis < 3; ++axis) {
    Tensor x = random_uniform({3, 4, 5}, rng, -1e3, 1e3);
    Tensor y = ops::softmax(x, axis);
    const Shape& s = x.shape();
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    for (int i = axis + 1; i < 3; ++i) inner *= s[i];
    for (std::int64_t a = 0; a < outer; ++a)
      for (std::int64_t c = 0; c < inner; ++c) {
        double total = 0;
        for (std::int64_t k = 0; k < s[axis]; ++k) {
          const double v = y.at((a * s[axis] + k) * inner + c);
          CHECK(v >= 0.0);
          CHECK(v <= 1.0);
          total += v;
        }
        CHECK(std::abs(total - 1.0) <= 1e-6);
      }
  }
}

// x*Phi(x) - (-x)*Phi(-x) = x*(Phi(x) + 1 - Phi(x)) = x
TEST_CASE("gelu values and odd-part identity") {
  CHECK(ops::gelu(Tensor::from({1}, {0.0})).at(0) == 0.0);
  DTypeScope f64(DType::F64);
  Rng rng(4);
  Tensor x = random_uniform({64}, rng, -6, 6);
  Tensor neg = ops::scale(x, -1.0);
  Tensor s = ops::sub(ops::gelu(x), ops::gelu(neg));
  for (std::size_t i = 0; i < 64; ++i) CHECK(std::abs(s.at(i) - x.at(i)) <= 1e-12);
}

TEST_CASE("layer_norm examples") {
  Tensor gamma = Tensor::full({2}, 1.0), beta = Tensor::zeros({2});
  Tensor constant = Tensor::full({1, 2, 1, 1}, 3.0);
  check_values(ops::layer_norm(constant, gamma, beta), {0.0, 0.0});
  Tensor y = ops::layer_norm(Tensor::from({1, 2, 1, 1}, {1, 3}), gamma, beta);
  CHECK(std::abs(y.at(0) + 1.0) <= 1e-5);
  CHECK(std::abs(y.at(1) - 1.0) <= 1e-5);
}

TEST_CASE("space_to_depth layout and round trip") {
  Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor y = ops::space_to_depth(x, 2);
  CHECK(y.shape() == Shape{1, 4, 1, 1});
  check_values(y, {1, 2, 3, 4});
  Rng rng(5);
  for (const Shape& s : {Shape{1, 3, 4, 6}, Shape{2, 2, 8, 8}, Shape{1, 1, 2, 10}}) {
    Tensor r = random_uniform(s, rng, -1, 1);
    CHECK(bit_equal(ops::depth_to_space(ops::space_to_depth(r, 2), 2), r));
  }
  CHECK_THROWS_AS(ops::space_to_depth(Tensor::zeros({1, 1, 3, 4}), 2), Error);
}

TEST_CASE("split_half and concat are exact inverses") {
  Rng rng(6);
  Tensor a = random_uniform({2, 3, 4, 4}, rng, -1, 1);
  Tensor b = random_uniform({2, 3, 4, 4}, rng, -1, 1);
  std::vector<Tensor> parts{a, b};
  auto [a2, b2] = ops::split_half_channels(ops::concat_channels(parts));
  CHECK(bit_equal(a, a2));
  CHECK(bit_equal(b, b2));
  CHECK_THROWS_AS(ops::split_half_channels(Tensor::zeros({1, 3, 2, 2})), Error);
  std::vector<Tensor> bad{a, Tensor::zeros({2, 3, 2, 2})};
  CHECK_THROWS_AS(ops::concat_channels(bad), Error);
}

TEST_CASE("sigmoid at zero") { CHECK(ops::sigmoid(Tensor::from({1}, {0.0})).at(0) == 0.5); }

TEST_CASE("no op produces non-finite values for |x| <= 1e3") {
  Rng rng(7);
  Tensor x = random_uniform({1, 4, 4, 4}, rng, -1e3, 1e3);
  Tensor w = random_uniform({4, 4}, rng, -1, 1);
  Tensor g = Tensor::full({4}, 1.0), b = Tensor::zeros({4});
  CHECK_NOTHROW(ops::sigmoid(x));
  CHECK_NOTHROW(ops::gelu(x));
  CHECK_NOTHROW(ops::softmax(x, 1));
  CHECK_NOTHROW(ops::layer_norm(x, g, b));
  CHECK_NOTHROW(ops::conv1x1(x, w));
  CHECK_NOTHROW(ops::l2_normalize(x));
  CHECK_NOTHROW(ops::bce_with_logits_mean(x, Tensor::zeros(x.shape())));
}

TEST_CASE("backward: sum and sum of squares") {
  Rng rng(8);
  Tensor x = random_uniform({3, 4}, rng, -1, 1).set_requires_grad(true);
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(ops::sum(x));
  }
  for (double g : x.grad().values()) CHECK(g == 1.0);

  x.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(ops::sum(ops::mul(x, x)));
  }
  auto g = x.grad().values();
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == doctest::Approx(2 * x.at(i)));
}

TEST_CASE("backward: accumulation, errors, and single visit per op") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}).set_requires_grad(true);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor y = ops::mul(x, x);
    Tensor root = ops::sum(ops::add(y, y));
    CHECK(tape.size() == 3);
    CHECK_THROWS_AS(tape.backward(y), Error);  // non-scalar
    tape.backward(root);
    CHECK(tape.last_backward_visits() == 3);
    CHECK_THROWS_AS(tape.backward(root), Error);  // repeated without reset
  }
  CHECK(x.grad().values() == std::vector<double>{4.0, 8.0});

  // second pass accumulates into the same leaf
  tape.reset();
  {
    TapeScope scope(tape);
    tape.backward(ops::sum(x));
  }
  CHECK(x.grad().values() == std::vector<double>{5.0, 9.0});

  // root computed outside the tape is detached
  Tensor detached = ops::sum(x);
  Tape other;
  CHECK_THROWS_AS(other.backward(detached), Error);
}

TEST_CASE("ops without an active tape do not record") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}).set_requires_grad(true);
  Tensor y = ops::sum(x);
  CHECK_FALSE(y.requires_grad());
  Tape tape;
  TapeScope scope(tape);
  {
    NoGradScope ng;
    CHECK_FALSE(ops::sum(x).requires_grad());
  }
  CHECK(ops::sum(x).requires_grad());
}
