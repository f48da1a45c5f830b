#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "apslstm/errors.hpp"
#include "apslstm/tensor.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace apslstm;
using testsupport::gradcheck;
using testsupport::random_param;
using testsupport::random_tensor;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

void check_close(const Tensor& t, const std::vector<double>& expected, double tol = 1e-12) {
  REQUIRE(t.numel() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) CHECK(t[i] == doctest::Approx(expected[i]).epsilon(tol));
}

}  // namespace

TEST_CASE("construction rejects zero dims and size mismatch") {
  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  Tensor t({2, 3}, 1.5);
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK_FALSE(t.has_grad());
}

TEST_CASE("elementwise examples") {
  check_close(mul(Tensor::from({1, 2, 3}), Tensor::from({0, 0, 0})), {0, 0, 0});
  Tensor x = Tensor::matrix({{1.5, -2}, {3, 4}});
  check_close(add(x, Tensor({2, 2}, 0.0)), values(x));
  check_close(mul(Tensor::from({0.5, 0.5}), Tensor::from({2, 4})), {1, 2});
  check_close(scale(Tensor::from({1, -2}), 3.0), {3, -6});
  check_close(add_scalar(Tensor::from({1, -2}), 0.5), {1.5, -1.5});
  check_close(sub(Tensor::from({1, 2}), Tensor::from({3, 5})), {-2, -3});
}

TEST_CASE("broadcasting over missing leading and size-1 axes") {
  Tensor a = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  check_close(add(a, Tensor::from({10, 20, 30})), {11, 22, 33, 14, 25, 36});
  check_close(add(a, Tensor({2, 1}, std::vector<double>{100, 200})), {101, 102, 103, 204, 205, 206});
  check_close(mul(a, Tensor::scalar(2.0)), {2, 4, 6, 8, 10, 12});
}

TEST_CASE("unbroadcastable shapes name both shapes") {
  Tensor a({2, 3}, 1.0), b({2}, 1.0);
  try {
    (void)add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[2]") != std::string::npos);
  }
}

TEST_CASE("activations") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  CHECK(apslstm::tanh(Tensor::scalar(0.0)).item() == 0.0);
  Tensor x = Tensor::scalar(0.0).set_requires_grad();
  backward(sigmoid(x));
  CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(sigmoid(Tensor::scalar(-800.0)).item() == 0.0);
  CHECK(sigmoid(Tensor::scalar(800.0)).item() == 1.0);
}

TEST_CASE("sqrt rejects negatives and has zero slope at zero") {
  CHECK_THROWS_AS(apslstm::sqrt(Tensor::from({1, -1})), NumericalError);
  Tensor x = Tensor::from({0.0, 4.0}).set_requires_grad();
  backward(sum_all(apslstm::sqrt(x)));
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == doctest::Approx(0.25));
}

TEST_CASE("matmul examples") {
  std::mt19937_64 rng(1);
  Tensor m = random_tensor({3, 3}, rng);
  Tensor eye = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  check_close(matmul(eye, m), values(m));
  check_close(matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{1}, {1}})), {3, 7});
  Tensor z = matmul(Tensor({2, 3}, 0.0), random_tensor({3, 4}, rng));
  CHECK(z.shape() == Shape{2, 4});
  for (double v : z.data()) CHECK(v == 0.0);
  CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({2, 3})), ShapeError);
  Tensor batched = matmul(random_tensor({4, 2, 3}, rng), random_tensor({4, 3, 5}, rng));
  CHECK(batched.shape() == Shape{4, 2, 5});
  CHECK_THROWS_AS(matmul(Tensor({4, 2, 3}), Tensor({3, 3, 5})), ShapeError);
}

TEST_CASE("conv2d_same examples") {
  std::mt19937_64 rng(2);
  Tensor x = random_tensor({1, 4, 5}, rng);
  check_close(conv2d_same(x, Tensor({1, 1, 1, 1}, 1.0), Tensor({1}, 0.0)), values(x));

  Tensor c({1, 5, 5}, 2.5);
  Tensor y = conv2d_same(c, Tensor({1, 1, 3, 3}, 1.0), Tensor({1}, 0.0));
  CHECK(y[2 * 5 + 2] == doctest::Approx(9 * 2.5));
  CHECK(y[0] == doctest::Approx(4 * 2.5));  // corner sees 4 taps

  Tensor b = conv2d_same(x, Tensor({1, 1, 3, 3}, 0.0), Tensor::from({-1.25}));
  for (double v : b.data()) CHECK(v == -1.25);

  CHECK_THROWS_AS(conv2d_same(x, Tensor({1, 1, 2, 3}), Tensor({1})), ConfigError);
}

TEST_CASE("conv1d_same examples") {
  Tensor x = Tensor({1, 3}, std::vector<double>{1, 1, 1});
  check_close(conv1d_same(x, Tensor({1, 1, 1}, 1.0), Tensor({1}, 0.0)), {1, 1, 1});
  check_close(conv1d_same(x, Tensor({1, 1, 3}, 1.0), Tensor({1}, 0.0)), {2, 3, 2});
  check_close(conv1d_same(x, Tensor({1, 1, 3}, 0.0), Tensor::from({5})), {5, 5, 5});
  CHECK_THROWS_AS(conv1d_same(x, Tensor({1, 1, 4}), Tensor({1})), ConfigError);
}

TEST_CASE("convolutions agree with nested-loop references on random 5x7 inputs") {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 5; ++rep) {
    Tensor x = random_tensor({3, 5, 7}, rng), k = random_tensor({2, 3, 3, 5}, rng), b = random_tensor({2}, rng);
    const auto ref = oracle::conv2d(values(x), 3, 5, 7, values(k), 2, 3, 5, values(b));
    check_close(conv2d_same(x, k, b), ref);

    Tensor x1 = random_tensor({5, 7}, rng), k1 = random_tensor({4, 5, 3}, rng), b1 = random_tensor({4}, rng);
    check_close(conv1d_same(x1, k1, b1), oracle::conv1d(values(x1), 5, 7, values(k1), 4, 3, values(b1)));
  }
}

TEST_CASE("softmax examples and normalization") {
  check_close(softmax(Tensor::from({2, 2, 2, 2}), 0), {0.25, 0.25, 0.25, 0.25});
  check_close(softmax(Tensor::from({0, std::log(3.0)}), 0), {0.25, 0.75}, 1e-15);
  std::mt19937_64 rng(4);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    Tensor x = random_tensor({3, 4, 5}, rng, -20, 20);
    Tensor s = softmax(x, axis);
    Tensor sums = sum(s, axis);
    for (double v : sums.data()) CHECK(std::abs(v - 1.0) < 1e-12);
    for (double v : s.data()) CHECK(v >= 0.0);
  }
  CHECK_THROWS_AS(softmax(Tensor({2, 2}), 2), ShapeError);
}

TEST_CASE("reductions") {
  Tensor m = Tensor::matrix({{1, 3}, {5, 7}});
  check_close(mean(m, 0), {3, 5});
  check_close(mean(m, 1), {2, 6});
  CHECK(sum_all(Tensor({3, 2}, 0.0)).item() == 0.0);
  Tensor single = Tensor({1, 3}, std::vector<double>{4, 5, 6});
  check_close(mean(single, 0), {4, 5, 6});
  CHECK(mean_all(m).item() == 4.0);
}

TEST_CASE("backward basics") {
  Tensor x = Tensor::scalar(3.0).set_requires_grad();
  backward(mul(x, x));
  CHECK(x.grad()[0] == 6.0);
  CHECK_THROWS_AS(backward(Tensor::from({1, 2})), ContractError);
}

TEST_CASE("second backward without zeroing doubles the grads") {
  std::mt19937_64 rng(5);
  Tensor w = random_param({3, 4}, rng), x = random_tensor({2, 3}, rng);
  Tensor loss = sum_all(apslstm::tanh(matmul(x, w)));
  backward(loss);
  const auto once = w.grad();
  backward(loss);
  const auto twice = w.grad();
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(twice[i] == 2.0 * once[i]);
  current_graph().clear();
  w.zero_grad();
  for (double g : w.grad()) CHECK(g == 0.0);
}

TEST_CASE("no-grad guard records nothing") {
  current_graph().clear();
  Tensor w = Tensor::from({1, 2}).set_requires_grad();
  {
    NoGradGuard guard;
    (void)mul(w, w);
    CHECK(current_graph().size() == 0);
  }
  (void)mul(w, w);
  CHECK(current_graph().size() == 1);
  current_graph().clear();
}

TEST_CASE("shape algebra on random shapes") {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<std::size_t> d(1, 5);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t a = d(rng), b = d(rng), c = d(rng);
    CHECK(matmul(Tensor({a, b}), Tensor({b, c})).shape() == Shape{a, c});
    CHECK(transpose(Tensor({a, b, c})).shape() == Shape{a, c, b});
    CHECK(permute(Tensor({a, b, c}), {2, 0, 1}).shape() == Shape{c, a, b});
    CHECK(sum(Tensor({a, b, c}), 1).shape() == Shape{a, c});
    CHECK(concat({Tensor({a, b}), Tensor({c, b})}, 0).shape() == Shape{a + c, b});
    CHECK(pad_rows(Tensor({a, b}), c).shape() == Shape{a + c, b});
    CHECK(conv2d_same(Tensor({a, b, c}), Tensor({2, a, 1, 3}), Tensor({2})).shape() == Shape{2, b, c});
    CHECK(add(Tensor({a, b, c}), Tensor({b, 1})).shape() == Shape{a, b, c});
  }
}

TEST_CASE("permute, reshape, rows and concat move values") {
  Tensor x({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  check_close(transpose(x), {1, 4, 2, 5, 3, 6});
  check_close(permute(x, {1, 0}), {1, 4, 2, 5, 3, 6});
  CHECK(reshape(x, {3, 2}).shape() == Shape{3, 2});
  CHECK_THROWS_AS(reshape(x, {4, 2}), ShapeError);
  check_close(pad_rows(x, 1), {1, 2, 3, 4, 5, 6, 0, 0, 0});
  check_close(slice_rows(x, 1, 1), {4, 5, 6});
  CHECK_THROWS_AS(slice_rows(x, 1, 2), ShapeError);
  check_close(concat({x, x}, 1), {1, 2, 3, 1, 2, 3, 4, 5, 6, 4, 5, 6});
}

TEST_CASE("gradients match central differences") {
  std::mt19937_64 rng(7);
  auto expect_ok = [](const testsupport::GradReport& r) {
    INFO(r.where);
    CHECK(r.ok);
  };
  for (std::uint64_t rep = 0; rep < 3; ++rep) {
    expect_ok(gradcheck([](const auto& in) { return add(in[0], in[1]); },
                        {random_tensor({3, 4}, rng), random_tensor({4}, rng)}, rep));
    expect_ok(gradcheck([](const auto& in) { return sub(in[0], in[1]); },
                        {random_tensor({2, 3}, rng), random_tensor({2, 1}, rng)}, rep));
    expect_ok(gradcheck([](const auto& in) { return mul(in[0], in[1]); },
                        {random_tensor({2, 3, 2}, rng), random_tensor({3, 2}, rng)}, rep));
    expect_ok(gradcheck([](const auto& in) { return scale(in[0], -1.7); }, {random_tensor({5}, rng)}, rep));
    expect_ok(gradcheck([](const auto& in) { return sigmoid(in[0]); }, {random_tensor({6}, rng)}, rep));
    expect_ok(gradcheck([](const auto& in) { return apslstm::tanh(in[0]); }, {random_tensor({6}, rng)}, rep));
    expect_ok(gradcheck([](const auto& in) { return apslstm::sqrt(in[0]); }, {random_tensor({6}, rng, 0.2, 2)}, rep));
    expect_ok(gradcheck([](const auto& in) { return matmul(in[0], in[1]); },
                        {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)}, rep));
    expect_ok(gradcheck([](const auto& in) { return matmul(in[0], in[1]); },
                        {random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 2}, rng)}, rep));
    expect_ok(gradcheck([](const auto& in) { return conv2d_same(in[0], in[1], in[2]); },
                        {random_tensor({2, 3, 4}, rng), random_tensor({2, 2, 3, 3}, rng), random_tensor({2}, rng)}, rep));
    expect_ok(gradcheck([](const auto& in) { return conv1d_same(in[0], in[1], in[2]); },
                        {random_tensor({3, 5}, rng), random_tensor({3, 3, 3}, rng), random_tensor({3}, rng)}, rep));
    expect_ok(gradcheck([](const auto& in) { return softmax(in[0], 1); }, {random_tensor({3, 4}, rng)}, rep));
    expect_ok(gradcheck([](const auto& in) { return mean(in[0], 0); }, {random_tensor({3, 4}, rng)}, rep));
    expect_ok(gradcheck([](const auto& in) { return sum(in[0], 2); }, {random_tensor({2, 3, 4}, rng)}, rep));
    expect_ok(gradcheck([](const auto& in) { return permute(in[0], {2, 0, 1}); }, {random_tensor({2, 3, 4}, rng)}, rep));
    expect_ok(gradcheck([](const auto& in) { return transpose(in[0]); }, {random_tensor({2, 3, 4}, rng)}, rep));
    expect_ok(gradcheck([](const auto& in) { return slice_rows(pad_rows(in[0], 2), 1, 3); },
                        {random_tensor({3, 2}, rng)}, rep));
    expect_ok(gradcheck([](const auto& in) { return concat({in[0], in[1]}, 1); },
                        {random_tensor({2, 3}, rng), random_tensor({2, 2}, rng)}, rep));
  }
}
