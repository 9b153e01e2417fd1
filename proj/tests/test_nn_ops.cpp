#include <doctest.h>

#include <cmath>
#include <random>

#include "dfinger/error.hpp"
#include "dfinger/nn/ops.hpp"
#include "grad_check.hpp"

using namespace dfinger;
using namespace dfinger::nn;
using dfinger::testing::MaxGradError;
using dfinger::testing::RandomTensor;

namespace {

constexpr double kGradTol = 1e-4;

struct Dims {
  std::size_t b, t, i, o;
};

const Dims kShapes[] = {{1, 1, 1, 1}, {1, 4, 3, 2}, {2, 3, 5, 4}, {3, 6, 2, 7}, {2, 9, 8, 3}};

GruParams GruFrom(const std::vector<Var>& v, std::size_t first) {
  return GruParams{v[first], v[first + 1], v[first + 2], v[first + 3]};
}

std::vector<Tensor> GruTensors(std::size_t in, std::size_t hid, std::mt19937_64& rng) {
  return {RandomTensor({in, 3 * hid}, rng, 0.6), RandomTensor({hid, 3 * hid}, rng, 0.6),
          RandomTensor({3 * hid}, rng, 0.3), RandomTensor({3 * hid}, rng, 0.3)};
}

AttentionParams AttFrom(const std::vector<Var>& v, std::size_t f) {
  return AttentionParams{v[f], v[f + 1], v[f + 2], v[f + 3], v[f + 4], v[f + 5], v[f + 6], v[f + 7]};
}

std::vector<Tensor> AttTensors(std::size_t d, std::mt19937_64& rng) {
  std::vector<Tensor> out;
  for (int k = 0; k < 4; ++k) {
    out.push_back(RandomTensor({d, d}, rng, 0.5));
    out.push_back(RandomTensor({d}, rng, 0.2));
  }
  return out;
}

}  // namespace

TEST_CASE("linear gradients") {
  std::mt19937_64 rng(1);
  for (const auto& s : kShapes) {
    std::vector<Tensor> in{RandomTensor({s.b, s.t, s.i}, rng), RandomTensor({s.i, s.o}, rng),
                           RandomTensor({s.o}, rng)};
    CHECK(MaxGradError([](Tape& t, const std::vector<Var>& v) { return Linear(t, v[0], v[1], v[2]); },
                       in, 11) < kGradTol);
    in.pop_back();
    CHECK(MaxGradError([](Tape& t, const std::vector<Var>& v) { return Linear(t, v[0], v[1]); }, in,
                       12) < kGradTol);
  }
}

TEST_CASE("causal conv gradients") {
  std::mt19937_64 rng(2);
  const std::size_t taps[] = {1, 3, 2, 3, 5};
  std::size_t k = 0;
  for (const auto& s : kShapes) {
    std::vector<Tensor> in{RandomTensor({s.b, s.t, s.i}, rng), RandomTensor({taps[k++], s.i, s.o}, rng),
                           RandomTensor({s.o}, rng)};
    CHECK(MaxGradError(
              [](Tape& t, const std::vector<Var>& v) { return CausalConv1d(t, v[0], v[1], v[2]); }, in,
              21) < kGradTol);
  }
}

TEST_CASE("elementwise and reduction gradients") {
  std::mt19937_64 rng(3);
  for (const auto& s : kShapes) {
    const Shape sh{s.b, s.t, s.i};
    auto x = RandomTensor(sh, rng, 1.0, 0.05);
    auto y = RandomTensor(sh, rng);
    auto one = [&](auto op) { return MaxGradError(op, {x}, 31); };
    auto two = [&](auto op) { return MaxGradError(op, {x, y}, 32); };
    CHECK(one([](Tape& t, const std::vector<Var>& v) { return Relu(t, v[0]); }) < kGradTol);
    CHECK(one([](Tape& t, const std::vector<Var>& v) { return Sigmoid(t, v[0]); }) < kGradTol);
    CHECK(one([](Tape& t, const std::vector<Var>& v) { return Tanh(t, v[0]); }) < kGradTol);
    CHECK(one([](Tape& t, const std::vector<Var>& v) { return Scale(t, v[0], -1.7); }) < kGradTol);
    CHECK(one([](Tape& t, const std::vector<Var>& v) { return MeanOverTime(t, v[0]); }) < kGradTol);
    CHECK(one([](Tape& t, const std::vector<Var>& v) { return SoftmaxLast(t, v[0]); }) < kGradTol);
    CHECK(two([](Tape& t, const std::vector<Var>& v) { return Add(t, v[0], v[1]); }) < kGradTol);
    CHECK(two([](Tape& t, const std::vector<Var>& v) { return Mul(t, v[0], v[1]); }) < kGradTol);
    CHECK(two([](Tape& t, const std::vector<Var>& v) { return ConcatLast(t, {v[0], v[1], v[0]}); }) <
          kGradTol);
    auto bias = RandomTensor({s.b, s.i}, rng);
    CHECK(MaxGradError([](Tape& t, const std::vector<Var>& v) { return AddOverTime(t, v[0], v[1]); },
                       {x, bias}, 33) < kGradTol);
  }
}

TEST_CASE("batched matmul and head reshaping gradients") {
  std::mt19937_64 rng(4);
  for (const auto& s : kShapes) {
    auto a = RandomTensor({s.b, s.t, s.i}, rng);
    auto b = RandomTensor({s.b, s.o, s.i}, rng);
    auto c = RandomTensor({s.b, s.i, s.o}, rng);
    CHECK(MaxGradError([](Tape& t, const std::vector<Var>& v) { return BatchedMatMulNT(t, v[0], v[1]); },
                       {a, b}, 41) < kGradTol);
    CHECK(MaxGradError([](Tape& t, const std::vector<Var>& v) { return BatchedMatMul(t, v[0], v[1]); },
                       {a, c}, 42) < kGradTol);
    auto wide = RandomTensor({s.b, s.t, 2 * s.i}, rng);
    CHECK(MaxGradError([](Tape& t, const std::vector<Var>& v) { return SplitHeads(t, v[0], 2); },
                       {wide}, 43) < kGradTol);
    CHECK(MaxGradError(
              [](Tape& t, const std::vector<Var>& v) { return MergeHeads(t, SplitHeads(t, v[0], 2), 2); },
              {wide}, 44) < kGradTol);
  }
}

TEST_CASE("split and merge heads are inverse permutations") {
  std::mt19937_64 rng(5);
  Tape t;
  Var x = t.Constant(RandomTensor({2, 3, 8}, rng));
  Var s = SplitHeads(t, x, 4);
  CHECK(t.value(s).shape() == Shape{8, 3, 2});
  // head 1 of batch 1 at time 2 holds columns 2..3
  CHECK(t.value(s)[((1 * 4 + 1) * 3 + 2) * 2 + 1] == t.value(x)[(1 * 3 + 2) * 8 + 3]);
  Var m = MergeHeads(t, s, 4);
  CHECK(t.value(m).storage() == t.value(x).storage());
}

TEST_CASE("gru step and sequence gradients") {
  std::mt19937_64 rng(6);
  for (const auto& s : kShapes) {
    const std::size_t hid = s.o;
    std::vector<Tensor> seq{RandomTensor({s.b, s.t, s.i}, rng)};
    for (auto& p : GruTensors(s.i, hid, rng)) seq.push_back(p);
    CHECK(MaxGradError([](Tape& t, const std::vector<Var>& v) { return GruSequence(t, v[0], GruFrom(v, 1)); },
                       seq, 61) < kGradTol);
    seq.push_back(RandomTensor({s.b, hid}, rng));
    CHECK(MaxGradError(
              [](Tape& t, const std::vector<Var>& v) { return GruSequence(t, v[0], GruFrom(v, 1), v[5]); },
              seq, 62) < kGradTol);

    std::vector<Tensor> step{RandomTensor({s.b, s.i}, rng), RandomTensor({s.b, hid}, rng)};
    for (auto& p : GruTensors(s.i, hid, rng)) step.push_back(p);
    CHECK(MaxGradError([](Tape& t, const std::vector<Var>& v) { return GruStep(t, v[0], v[1], GruFrom(v, 2)); },
                       step, 63) < kGradTol);
  }
}

TEST_CASE("two-step gru unroll through GruStep matches the fused sequence") {
  std::mt19937_64 rng(7);
  auto x = RandomTensor({2, 2, 3}, rng);
  auto ps = GruTensors(3, 4, rng);
  Tape t;
  GruParams p{t.Constant(ps[0]), t.Constant(ps[1]), t.Constant(ps[2]), t.Constant(ps[3])};
  Var seq = GruSequence(t, t.Constant(x), p);
  Var h = t.Constant(Tensor({2, 4}));
  for (std::size_t s = 0; s < 2; ++s) {
    Tensor xs({2, 3});
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t i = 0; i < 3; ++i) xs[b * 3 + i] = x[(b * 2 + s) * 3 + i];
    h = GruStep(t, t.Constant(xs), h, p);
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t i = 0; i < 4; ++i)
        CHECK(t.value(h)[b * 4 + i] == doctest::Approx(t.value(seq)[(b * 2 + s) * 4 + i]).epsilon(1e-14));
  }
}

TEST_CASE("gru closed forms with zero parameters") {
  Tape t;
  GruParams p{t.Constant(Tensor({2, 9})), t.Constant(Tensor({3, 9})), t.Constant(Tensor({9})),
              t.Constant(Tensor({9}))};
  Var h0 = t.Constant(Tensor({1, 3}, {0.8, -0.4, 2.0}));
  Var h1 = GruStep(t, t.Constant(Tensor({1, 2}, {0.3, -1.0})), h0, p);
  CHECK(t.value(h1)[0] == doctest::Approx(0.4));
  CHECK(t.value(h1)[1] == doctest::Approx(-0.2));
  CHECK(t.value(h1)[2] == doctest::Approx(1.0));
  Var z = GruStep(t, t.Constant(Tensor({1, 2})), t.Constant(Tensor({1, 3})), p);
  for (double v : t.value(z).values()) CHECK(v == 0.0);
}

TEST_CASE("multihead attention gradients") {
  std::mt19937_64 rng(8);
  struct A {
    std::size_t b, tq, tk, d, heads;
  };
  const A cases[] = {{1, 2, 3, 8, 4}, {2, 1, 1, 4, 2}, {1, 3, 5, 6, 3}, {2, 4, 2, 8, 2}, {1, 2, 4, 4, 1}};
  for (const auto& c : cases) {
    std::vector<Tensor> in{RandomTensor({c.b, c.tq, c.d}, rng), RandomTensor({c.b, c.tk, c.d}, rng),
                           RandomTensor({c.b, c.tk, c.d}, rng)};
    for (auto& p : AttTensors(c.d, rng)) in.push_back(p);
    const std::size_t heads = c.heads;
    CHECK(MaxGradError(
              [heads](Tape& t, const std::vector<Var>& v) {
                return MultiheadAttention(t, v[0], v[1], v[2], heads, AttFrom(v, 3));
              },
              in, 81) < kGradTol);
  }
}

TEST_CASE("attention rows sum to one and degenerate cases") {
  std::mt19937_64 rng(9);
  auto ps = AttTensors(8, rng);
  Tape t;
  std::vector<Var> pv;
  for (auto& p : ps) pv.push_back(t.Constant(p));
  const AttentionParams p = AttFrom(pv, 0);

  Tensor w;
  Var q = t.Constant(RandomTensor({2, 5, 8}, rng, 3.0));
  Var kv = t.Constant(RandomTensor({2, 7, 8}, rng, 3.0));
  MultiheadAttention(t, q, kv, kv, 4, p, &w);
  CHECK(w.shape() == Shape{8, 5, 7});
  for (std::size_t r = 0; r < w.leading(); ++r) {
    double sum = 0.0;
    for (std::size_t i = 0; i < 7; ++i) sum += w[r * 7 + i];
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }

  // One key: output is the projected value for every query.
  Var v1 = t.Constant(RandomTensor({1, 1, 8}, rng));
  Var out = MultiheadAttention(t, t.Constant(RandomTensor({1, 3, 8}, rng)), v1, v1, 4, p);
  Var proj = Linear(t, Linear(t, v1, p.wv, p.bv), p.wo, p.bo);
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t i = 0; i < 8; ++i)
      CHECK(t.value(out)[s * 8 + i] == doctest::Approx(t.value(proj)[i]).epsilon(1e-12));

  // Identical keys: uniform weights.
  Tensor same({1, 4, 8});
  for (std::size_t s = 0; s < 4; ++s)
    for (std::size_t i = 0; i < 8; ++i) same[s * 8 + i] = 0.1 * static_cast<double>(i);
  MultiheadAttention(t, t.Constant(RandomTensor({1, 2, 8}, rng)), t.Constant(same),
                     t.Constant(RandomTensor({1, 4, 8}, rng)), 4, p, &w);
  for (double v : w.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

  CHECK_THROWS_AS(MultiheadAttention(t, q, kv, kv, 3, p), Error);
}

TEST_CASE("causality of conv and gru") {
  std::mt19937_64 rng(10);
  auto x = RandomTensor({1, 8, 3}, rng);
  auto kern = RandomTensor({3, 3, 2}, rng);
  auto gp = GruTensors(3, 4, rng);
  auto run = [&](const Tensor& in, bool gru) {
    Tape t;
    if (gru) {
      GruParams p{t.Constant(gp[0]), t.Constant(gp[1]), t.Constant(gp[2]), t.Constant(gp[3])};
      return t.value(GruSequence(t, t.Constant(in), p));
    }
    return t.value(CausalConv1d(t, t.Constant(in), t.Constant(kern)));
  };
  for (bool gru : {false, true}) {
    const Tensor base = run(x, gru);
    const std::size_t width = base.last_dim();
    for (std::size_t s = 0; s < 8; ++s) {
      Tensor y = x;
      for (std::size_t i = 0; i < 3; ++i) y[s * 3 + i] += 5.0;
      const Tensor out = run(y, gru);
      for (std::size_t k = 0; k < s * width; ++k) CHECK(out[k] == base[k]);
      bool changed = false;
      for (std::size_t k = s * width; k < (s + 1) * width; ++k) changed = changed || out[k] != base[k];
      CHECK(changed);
    }
  }
}

TEST_CASE("shape and value errors") {
  Tape t;
  Var x = t.Constant(Tensor({2, 3}));
  CHECK_THROWS_AS(Linear(t, x, t.Constant(Tensor({4, 2}))), Error);
  try {
    MeanOverTime(t, t.Constant(Tensor({1, 0, 4})));
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kEmptyFingerprint);
  }
  try {
    Scale(t, t.Constant(Tensor({1}, {1e308})), 1e10);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kNumeric);
  }
}

TEST_CASE("a parameter used twice receives the summed gradient") {
  ParamStore store(1);
  store.Add("w", Tensor({1}, {3.0}));
  Tape t;
  Var a = t.Param(store, "w");
  Var b = t.Param(store, "w");
  CHECK(a.id == b.id);
  Var y = Mul(t, a, b);  // w^2
  t.Backward(WeightedSum(t, y, Tensor({1}, {1.0})));
  CHECK(t.ParamGrads().at("w")[0] == doctest::Approx(6.0));
}
