#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "apslstm/checkpoint.hpp"
#include "apslstm/errors.hpp"
#include "support/gradcheck.hpp"
#include "support/tempdir.hpp"

using namespace apslstm;

namespace {

std::vector<double> vec(std::span<const double> s) { return {s.begin(), s.end()}; }

struct Setup {
  ModelConfig config;
  ModelState model;
  MinMaxScaler scaler;
};

Setup make(std::size_t blocks = 1, std::size_t embed_dim = 2) {
  auto [raw, g] = generate_synthetic({.n_stations = 4, .rows = 200, .periods = {4}, .seed = 7});
  ModelConfig c{.n_stations = 4, .input_len = 8, .horizon = 3, .blocks = blocks, .top_k = 2, .hidden = 6,
                .embed_dim = embed_dim, .flow_station = 3};
  Setup s{c, init_parameters(c, g, 42), {}};
  s.scaler.fit(raw, 0, 150);
  return s;
}

std::string data_error(const std::vector<std::uint8_t>& bytes) {
  try {
    deserialize_checkpoint(bytes);
  } catch (const DataError& e) {
    return e.what();
  }
  return "no error";
}

}  // namespace

TEST_CASE("round trip is bit exact") {
  for (std::size_t L : {0u, 1u, 2u})
    for (std::size_t m : {0u, 2u}) {
      const auto s = make(L, m);
      const auto bytes = serialize_checkpoint(s.model, &s.scaler);
      const auto back = deserialize_checkpoint(bytes, &s.config);
      CHECK(back.model.config == s.config);
      CHECK(back.model.seed == 42);
      const auto a = s.model.named_parameters(), b = back.model.named_parameters();
      REQUIRE(a.size() == b.size());
      for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].first == b[i].first);
        CHECK(a[i].second.shape() == b[i].second.shape());
        CHECK(vec(a[i].second.data()) == vec(b[i].second.data()));
      }
      CHECK(back.model.embedding.eigvals == s.model.embedding.eigvals);
      if (m > 0) CHECK(vec(back.model.embedding.eigvecs.data()) == vec(s.model.embedding.eigvecs.data()));
      REQUIRE(back.scaler.has_value());
      CHECK(back.scaler->mins() == s.scaler.mins());
      CHECK(back.scaler->maxs() == s.scaler.maxs());
      CHECK(serialize_checkpoint(back.model, &*back.scaler) == bytes);

      std::mt19937_64 rng(L * 10 + m);
      Tensor x = testsupport::random_tensor({8, 4}, rng);
      NoGradGuard guard;
      CHECK(vec(model_forward(x, back.model).data()) == vec(model_forward(x, s.model).data()));
    }
}

TEST_CASE("files round trip and the scaler is optional") {
  testsupport::TempDir dir("apslstm-ckpt");
  const auto s = make();
  save_checkpoint(dir / "m.apsl", s.model);
  const auto back = load_checkpoint(dir / "m.apsl");
  CHECK_FALSE(back.scaler.has_value());
  CHECK(serialize_checkpoint(back.model) == serialize_checkpoint(s.model));
  CHECK(testsupport::read_file(dir / "m.apsl").substr(0, 4) == "APSL");
  CHECK_THROWS_AS(load_checkpoint(dir / "absent.apsl"), DataError);
}

TEST_CASE("a config mismatch names the field") {
  const auto s = make();
  const auto bytes = serialize_checkpoint(s.model, &s.scaler);
  auto other = s.config;
  other.hidden = 9;
  try {
    deserialize_checkpoint(bytes, &other);
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("'hidden'") != std::string::npos);
    CHECK(msg.find("6") != std::string::npos);
    CHECK(msg.find("9") != std::string::npos);
  }
  other = s.config;
  other.disable_ssa = true;
  CHECK(first_config_mismatch(s.config, other) == "disable_ssa");
  CHECK(first_config_mismatch(s.config, s.config).empty());
}

TEST_CASE("corrupt files are data errors") {
  const auto s = make();
  auto bytes = serialize_checkpoint(s.model, &s.scaler);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK(data_error(bad).find("magic") != std::string::npos);

  bad = bytes;
  bad[4] = 99;
  CHECK(data_error(bad).find("version") != std::string::npos);

  for (std::size_t len = 0; len < bytes.size(); len += 1 + len / 16) {
    std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(len));
    CHECK(data_error(cut).find("checkpoint") != std::string::npos);
  }

  // A trailing record with an unknown name.
  bad = bytes;
  const std::string name = "extra";
  auto put32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bad.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  put32(static_cast<std::uint32_t>(name.size()));
  bad.insert(bad.end(), name.begin(), name.end());
  put32(1);
  put32(1);
  bad.insert(bad.end(), 8, 0);
  CHECK(data_error(bad).find("'extra'") != std::string::npos);
}
