#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "apslstm/errors.hpp"
#include "apslstm/spectral.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace apslstm;
using testsupport::random_tensor;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Tensor sine(std::size_t T, double f, std::size_t N = 1, double amp = 1.0, double phase = 0.0) {
  std::vector<double> v(T * N);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t n = 0; n < N; ++n)
      v[t * N + n] = amp * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(t) / static_cast<double>(T) + phase);
  return Tensor({T, N}, std::move(v));
}

}  // namespace

TEST_CASE("fft matches the direct transform for every length up to 64") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g;
  for (std::size_t T = 1; T <= 64; ++T) {
    std::vector<std::complex<double>> x(T);
    for (auto& v : x) v = {g(rng), g(rng)};
    const auto X = fft(x);
    REQUIRE(X.size() == T);
    for (std::size_t f = 0; f < T; ++f) {
      std::complex<double> acc = 0.0;
      for (std::size_t t = 0; t < T; ++t)
        acc += x[t] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(f * t) / static_cast<double>(T));
      CHECK(std::abs(X[f] - acc) < 1e-9);
    }
  }
}

TEST_CASE("amplitudes match the O(T^2) oracle for T in 2..64") {
  std::mt19937_64 rng(12);
  for (std::size_t T = 2; T <= 64; ++T) {
    Tensor x = random_tensor({T, 3}, rng);
    const auto fast = dft_amplitudes(x).values;
    const auto slow = oracle::dft_amplitudes(values(x), T, 3);
    REQUIRE(fast.size() == T);
    for (std::size_t f = 0; f < T; ++f) CHECK(std::abs(fast[f] - slow[f]) < 1e-9);
  }
}

TEST_CASE("spectrum examples") {
  const auto s = dft_amplitudes(sine(12, 3)).values;
  for (std::size_t f = 0; f < 12; ++f) {
    if (f == 3 || f == 9)
      CHECK(s[f] == doctest::Approx(6.0));
    else
      CHECK(std::abs(s[f]) < 1e-9);
  }
  const auto c = dft_amplitudes(Tensor({8, 2}, 1.5)).values;
  CHECK(c[0] == doctest::Approx(12.0));
  for (std::size_t f = 1; f < 8; ++f) CHECK(std::abs(c[f]) < 1e-12);
  for (double v : dft_amplitudes(Tensor({5, 2}, 0.0)).values) CHECK(v == 0.0);
  CHECK_THROWS_AS(dft_amplitudes(Tensor({1, 2})), ContractError);
}

TEST_CASE("Parseval holds per station") {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> g;
  for (std::size_t T : {2u, 7u, 12u, 17u, 31u, 48u, 64u}) {
    std::vector<std::complex<double>> x(T);
    double energy = 0.0;
    for (auto& v : x) {
      v = g(rng);
      energy += std::norm(v);
    }
    double spectral = 0.0;
    for (const auto& X : fft(x)) spectral += std::norm(X);
    CHECK(std::abs(energy - spectral / static_cast<double>(T)) < 1e-9);
  }
}

TEST_CASE("select_top_k examples") {
  auto d = select_top_k(dft_amplitudes(sine(12, 3)), 1);
  REQUIRE(d.size() == 1);
  CHECK(d[0].frequency == 3);
  CHECK(d[0].period_len == 4);
  CHECK(d[0].num_periods == 3);

  const auto five = make_division(12, 5, 1.0);
  CHECK(five.period_len == 3);
  CHECK(five.num_periods == 4);

  Tensor two = add(sine(12, 3), sine(12, 2, 1, 1.0, 0.4));
  auto both = select_top_k(dft_amplitudes(two), 2);
  REQUIRE(both.size() == 2);
  CHECK(((both[0].frequency == 3 && both[1].frequency == 2) || (both[0].frequency == 2 && both[1].frequency == 3)));
}

TEST_CASE("planted frequency is recovered exactly") {
  for (std::size_t T : {8u, 12u, 24u, 13u, 30u})
    for (std::size_t f = 1; f <= T / 2; ++f) {
      auto d = select_top_k(dft_amplitudes(sine(T, static_cast<double>(f), 2, 1.0, 0.3)), 1);
      CHECK(d.at(0).frequency == f);
    }
}

TEST_CASE("ties prefer the lower frequency and padding keeps k entries") {
  AmplitudeSpectrum flat{std::vector<double>(12, 1.0)};
  auto d = select_top_k(flat, 3);
  REQUIRE(d.size() == 3);
  CHECK(d[0].frequency == 1);
  CHECK(d[1].frequency == 2);
  CHECK(d[2].frequency == 3);

  AmplitudeSpectrum one{std::vector<double>(12, 0.0)};
  one.values[4] = 2.0;
  d = select_top_k(one, 3);
  REQUIRE(d.size() == 3);
  CHECK(d[0].frequency == 4);
  CHECK(d[1].frequency == 1);
  CHECK(d[2].frequency == 2);

  auto constant = select_top_k(dft_amplitudes(Tensor({12, 1}, 3.0)), 2);
  REQUIRE(constant.size() == 2);
  CHECK(constant[0].frequency == 1);
  CHECK(constant[1].frequency == 2);

  CHECK(select_top_k(flat, 10).size() == 6);
  CHECK(select_top_k(AmplitudeSpectrum{std::vector<double>(5, 1.0)}, 4).size() == 2);
}

TEST_CASE("division invariants hold for every frequency") {
  for (std::size_t T = 2; T <= 48; ++T)
    for (std::size_t f = 1; f <= T / 2; ++f) {
      const auto d = make_division(T, f, 0.5);
      CHECK(d.period_len == (T + f - 1) / f);
      CHECK(d.num_periods == (T + d.period_len - 1) / d.period_len);
      CHECK(d.num_periods * d.period_len >= T);
    }
  CHECK_THROWS_AS(make_division(12, 0, 1.0), ContractError);
  CHECK_THROWS_AS(make_division(12, 7, 1.0), ContractError);
}

TEST_CASE("fold layout and padding") {
  std::mt19937_64 rng(14);
  Tensor x = random_tensor({10, 2}, rng);
  const auto d = make_division(10, 3, 1.0);  // pl = 4, pn = 3
  Tensor y = fold_to_periods(x, d);
  CHECK(y.shape() == Shape{3, 4, 2});
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t n = 0; n < 2; ++n) {
        const std::size_t t = r * 4 + c;
        CHECK(y[(r * 4 + c) * 2 + n] == (t < 10 ? x[t * 2 + n] : 0.0));
      }

  Tensor x12 = random_tensor({12, 3}, rng);
  Tensor y12 = fold_to_periods(x12, make_division(12, 3, 1.0));
  CHECK(y12.shape() == Shape{3, 4, 3});
  CHECK(values(y12) == values(x12));

  Tensor ones = unfold_from_periods(Tensor({3, 4, 2}, 1.0), 10);
  CHECK(ones.shape() == Shape{10, 2});
  for (double v : ones.data()) CHECK(v == 1.0);
  CHECK_THROWS_AS(unfold_from_periods(Tensor({2, 4, 2}, 1.0), 10), ContractError);
}

TEST_CASE("fold then unfold is the identity for random divisions") {
  std::mt19937_64 rng(15);
  std::uniform_int_distribution<std::size_t> len(2, 40);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t T = len(rng);
    const std::size_t f = std::uniform_int_distribution<std::size_t>(1, T / 2)(rng);
    Tensor x = random_tensor({T, 2}, rng);
    CHECK(values(unfold_from_periods(fold_to_periods(x, make_division(T, f, 0.0)), T)) == values(x));
  }
}

TEST_CASE("unfold of fold passes gradients through unchanged") {
  std::mt19937_64 rng(16);
  Tensor x = random_tensor({10, 2}, rng).set_requires_grad();
  Tensor w = random_tensor({10, 2}, rng);
  backward(sum_all(mul(unfold_from_periods(fold_to_periods(x, make_division(10, 3, 0.0)), 10), w)));
  current_graph().clear();
  CHECK(x.grad() == values(w));

  auto report = testsupport::gradcheck(
      [](const auto& in) { return unfold_from_periods(fold_to_periods(in[0], make_division(11, 4, 0.0)), 11); },
      {random_tensor({11, 3}, rng)}, 1);
  CHECK(report.ok);
}

TEST_CASE("aggregation examples") {
  std::mt19937_64 rng(17);
  Tensor a = random_tensor({6, 2}, rng), b = random_tensor({6, 2}, rng);
  CHECK(values(adaptive_aggregate({a}, {make_division(6, 1, 3.0)})) == values(a));

  Tensor m = adaptive_aggregate({a, b}, {make_division(6, 1, 2.0), make_division(6, 2, 2.0)});
  for (std::size_t i = 0; i < m.numel(); ++i) CHECK(m[i] == doctest::Approx(0.5 * (a[i] + b[i])).epsilon(1e-14));

  const auto w = aggregation_weights({make_division(6, 1, 0.7), make_division(6, 2, 0.7 + std::log(3.0))});
  CHECK(w[0] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(w[1] == doctest::Approx(0.75).epsilon(1e-14));

  CHECK_THROWS_AS(adaptive_aggregate(std::vector<Tensor>{}, std::vector<PeriodDivision>{}), ContractError);
}

TEST_CASE("aggregation weights form a probability vector") {
  std::mt19937_64 rng(18);
  std::uniform_real_distribution<double> amp(0.0, 50.0);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<PeriodDivision> d;
    for (std::size_t i = 0; i < 1 + rep % 5; ++i) d.push_back(make_division(12, 1 + i, amp(rng)));
    double total = 0.0;
    for (double w : aggregation_weights(d)) {
      CHECK(w >= 0.0);
      total += w;
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
}

TEST_CASE("aggregation gradient scales each output by its weight") {
  std::mt19937_64 rng(19);
  Tensor a = random_tensor({4, 2}, rng).set_requires_grad();
  Tensor b = random_tensor({4, 2}, rng).set_requires_grad();
  const std::vector<PeriodDivision> d{make_division(4, 1, 0.0), make_division(4, 2, std::log(3.0))};
  backward(sum_all(adaptive_aggregate({a, b}, d)));
  current_graph().clear();
  for (double g : a.grad()) CHECK(g == doctest::Approx(0.25));
  for (double g : b.grad()) CHECK(g == doctest::Approx(0.75));
}

TEST_CASE("differentiable amplitudes agree with the detached spectrum") {
  std::mt19937_64 rng(20);
  Tensor x = random_tensor({12, 3}, rng);
  const std::vector<std::size_t> freqs{1, 3, 6};
  Tensor a = spectral_amplitudes(x, freqs);
  const auto s = dft_amplitudes(x).values;
  for (std::size_t i = 0; i < freqs.size(); ++i) CHECK(a[i] == doctest::Approx(s[freqs[i]]).epsilon(1e-12));
  auto report = testsupport::gradcheck(
      [&](const auto& in) { return spectral_amplitudes(in[0], freqs); }, {random_tensor({12, 3}, rng)}, 2);
  CHECK(report.ok);
}
