#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dfinger/error.hpp"
#include "dfinger/nn/adam.hpp"
#include "dfinger/nn/checkpoint.hpp"

using namespace dfinger;
using namespace dfinger::nn;

TEST_CASE("adam leaves parameters alone for zero gradients") {
  ParamStore s;
  s.Add("a", Tensor({3}, {0.5, -1.0, 2.0}));
  Adam opt;
  GradMap g{{"a", Tensor({3})}};
  for (int i = 0; i < 5; ++i) opt.Step(s, g, {"a"});
  CHECK(s.at("a").storage() == std::vector<double>{0.5, -1.0, 2.0});
}

TEST_CASE("adam first step moves by the learning rate") {
  ParamStore s;
  s.Add("w", Tensor({1}));
  Adam opt(AdamConfig{.lr = 0.01});
  opt.Step(s, {{"w", Tensor({1}, {1.0})}}, {"w"});
  CHECK(s.at("w")[0] == doctest::Approx(-0.01 / (1.0 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("adam on w^2 follows the reference trajectory") {
  // From tests/oracles/adam_quadratic.py (also matches torch.optim.Adam).
  const double expected[10] = {0.9000000005,        0.8004122286917928,  0.7015862729460303,
                               0.603939060573746,   0.507963659264342,   0.4142364559936619,
                               0.3234207049391021,  0.23626372452104188, 0.1535845600703636,
                               0.07624915560691221};
  ParamStore s;
  s.Add("w", Tensor({1}, {1.0}));
  Adam opt(AdamConfig{.lr = 0.1});
  double prev = 1.0;
  for (int k = 0; k < 10; ++k) {
    opt.Step(s, {{"w", Tensor({1}, {2.0 * s.at("w")[0]})}}, {"w"});
    const double w = s.at("w")[0];
    CHECK(std::abs(w) < std::abs(prev));
    CHECK(w == doctest::Approx(expected[k]).epsilon(1e-12));
    prev = w;
  }
  CHECK(opt.step_count("w") == 10);
}

TEST_CASE("adam errors and clipping") {
  ParamStore s;
  s.Add("a", Tensor({2}));
  s.Add("b", Tensor({1}));
  Adam opt;
  try {
    opt.Step(s, {{"a", Tensor({2})}}, {"a", "b"});
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInvalidConfig);
  }
  CHECK_THROWS_AS(opt.Step(s, {{"a", Tensor({3})}}, {"a"}), Error);
  auto info = opt.Step(s, {{"a", Tensor({2}, {30.0, 40.0})}}, {"a"});
  CHECK(info.grad_norm == doctest::Approx(50.0));
  CHECK(info.clipped);
  // b sat out: its own step count stays at zero.
  CHECK(opt.step_count("b") == 0);
  CHECK(WarmupScale(0, 4) == doctest::Approx(0.25));
  CHECK(WarmupScale(4, 4) == 1.0);
}

namespace {

Checkpoint Sample() {
  Checkpoint c{ParamStore(42), {{"variant", "dfin-add"}, {"train_steps", 17}}};
  c.params.AddXavier("enc.w", {4, 3});
  c.params.Add("enc.b", Tensor({3}, {0.1, -0.2, 1.0 / 3.0}));
  c.params.Add("empty", Tensor({0}));
  return c;
}

}  // namespace

TEST_CASE("checkpoint round trip is byte-identical") {
  const auto path = std::filesystem::temp_directory_path() / "dfinger_ckpt_test.bin";
  const Checkpoint c = Sample();
  SaveCheckpoint(path.string(), c);
  const Checkpoint back = LoadCheckpoint(path.string());
  CHECK(back.meta == c.meta);
  CHECK(back.params.at("enc.w").storage() == c.params.at("enc.w").storage());
  CHECK(back.params.at("enc.b").shape() == Shape{3});
  CHECK(SerializeCheckpoint(back) == SerializeCheckpoint(c));
  CHECK(ParameterHash(back.params) == ParameterHash(c.params));
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint corruption is reported, not crashed on") {
  const auto bytes = SerializeCheckpoint(Sample());
  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{20}, bytes.size() - 1}) {
    std::vector<std::uint8_t> trunc(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    try {
      DeserializeCheckpoint(trunc);
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kCorruptCheckpoint);
    }
  }
  auto bumped = bytes;
  const std::string from = "dfinger-ckpt-v1";
  auto it = std::search(bumped.begin(), bumped.end(), from.begin(), from.end());
  REQUIRE(it != bumped.end());
  *(it + static_cast<std::ptrdiff_t>(from.size()) - 1) = '2';
  try {
    DeserializeCheckpoint(bumped);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kVersionMismatch);
  }
  CHECK_THROWS_AS(LoadCheckpoint("/nonexistent/ckpt.bin"), Error);
}

TEST_CASE("parameter hash tracks values") {
  Checkpoint a = Sample();
  Checkpoint b = Sample();
  CHECK(ParameterHash(a.params) == ParameterHash(b.params));
  b.params.at("enc.b")[0] += 1e-12;
  CHECK(ParameterHash(a.params) != ParameterHash(b.params));
}
