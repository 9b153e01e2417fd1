#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dfinger/data/corpus.hpp"
#include "dfinger/error.hpp"
#include "dfinger/train/trainer.hpp"
#include "grad_check.hpp"
#include "model_util.hpp"

using namespace dfinger;
using dfinger::testing::MaxGradError;
using dfinger::testing::TinyConfig;
using nn::Shape;
using nn::Tensor;
using nn::Var;

namespace {

std::vector<double> Lcg(std::uint64_t seed, std::size_t n) {
  std::vector<double> out(n);
  std::uint64_t s = seed;
  for (double& v : out) {
    s = s * 6364136223846793005ULL + 1442695040888963407ULL;
    v = static_cast<double>(s >> 11) * 0x1p-53 - 0.5;
  }
  return out;
}

Tensor Scaled(const std::vector<double>& v, Shape shape, double k) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = k * v[i];
  return t;
}

// 0.5 s speech mixed at 0 dB with the tail of a 1.5 s noise recording whose
// head serves as the fingerprint.
SampleTriple TinySample(int k) {
  const int sr = 8000;
  const auto& fams = NoiseFamilies();
  const AudioBuffer speech = SynthesizeSpeech(0.5, sr, 100 + k);
  const AudioBuffer noise = SynthesizeNoise(fams[k % fams.size()], 1.5, sr, 200 + k);
  const std::size_t n = speech.size();
  SampleTriple s;
  s.id = "tiny" + std::to_string(k);
  s.category = fams[k % fams.size()];
  s.fingerprint.sample_rate = s.noise.sample_rate = sr;
  s.fingerprint.samples.assign(noise.samples.begin(), noise.samples.begin() + n);
  s.noise.samples.assign(noise.samples.end() - n, noise.samples.end());
  const MixResult m = MixAtSnr(speech, s.noise, 0.0);
  s.clean = m.clean;
  s.mixture = m.mixture;
  s.gain = m.gain;
  return s;
}

std::vector<SampleTriple> TinySamples(int n) {
  std::vector<SampleTriple> v;
  for (int k = 0; k < n; ++k) v.push_back(TinySample(k));
  return v;
}

nn::Checkpoint TinyBaseline(int epochs = 2) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch = 4;
  cfg.seed = 3;
  return PretrainBaseline(TinyConfig({}), FromSamples(TinySamples(4)), cfg).checkpoint;
}

bool SameParams(const nn::ParamStore& a, const nn::ParamStore& b, const std::vector<std::string>& names) {
  for (const auto& n : names)
    if (!std::ranges::equal(a.at(n).values(), b.at(n).values())) return false;
  return true;
}

}  // namespace

TEST_CASE("spectral loss matches the definitional evaluation") {
  // Reference values from tests/oracles/spectral_loss.py.
  nn::Tape tape;
  const Var e = tape.Leaf(Scaled(Lcg(21, 48), {1, 1, 24, 2}, 2.0));
  const Tensor s = Scaled(Lcg(22, 48), {1, 1, 24, 2}, 2.0);
  LossBreakdown b;
  const Var l = SpectralLoss(tape, e, s, LossConfig{}, &b);
  CHECK(b.magnitude == doctest::Approx(0.05692661217913564).epsilon(1e-12));
  CHECK(b.complex == doctest::Approx(2.1476350285555674).epsilon(1e-12));
  CHECK(tape.value(l)[0] == doctest::Approx(2.204561640734703).epsilon(1e-12));
  CHECK(b.total == tape.value(l)[0]);

  LossConfig w;
  w.lambda_mag = 0.25;
  w.lambda_complex = 3.0;
  nn::Tape t2;
  LossBreakdown b2;
  const double total = t2.value(SpectralLoss(t2, t2.Leaf(tape.value(e)), s, w, &b2))[0];
  CHECK(total == doctest::Approx(0.25 * b2.magnitude + 3.0 * b2.complex).epsilon(1e-14));
}

TEST_CASE("spectral loss is zero on identical spectra and closed-form against silence") {
  const Tensor x = Scaled(Lcg(5, 2 * 3 * 7 * 2), {2, 3, 7, 2}, 1.0);
  nn::Tape tape;
  // Zero up to fused multiply-add rounding.
  CHECK(tape.value(SpectralLoss(tape, tape.Leaf(x), x, LossConfig{}))[0] < 1e-28);

  // Against a silent target the clamp leaves eps^c in the magnitude term;
  // the complex term is mean |X|^(2c).
  const Tensor zero(x.shape());
  nn::Tape t2;
  LossBreakdown b;
  SpectralLoss(t2, t2.Leaf(x), zero, LossConfig{}, &b);
  const double floor = std::pow(1e-12, 0.6);
  double mag = 0.0, cplx = 0.0;
  for (std::size_t i = 0; i < x.size(); i += 2) {
    const double a = std::hypot(x[i], x[i + 1]);
    mag += (std::pow(a, 0.6) - floor) * (std::pow(a, 0.6) - floor);
    cplx += std::pow(a, 1.2);
  }
  const double cells = static_cast<double>(x.size() / 2);
  CHECK(b.magnitude == doctest::Approx(mag / cells).epsilon(1e-12));
  CHECK(b.complex == doctest::Approx(cplx / cells).epsilon(1e-12));
}

TEST_CASE("spectral loss gradient matches finite differences") {
  for (const Shape& shape : {Shape{1, 1, 3, 2}, Shape{1, 2, 5, 2}, Shape{2, 3, 4, 2}, Shape{3, 1, 2, 2},
                             Shape{1, 4, 6, 2}}) {
    const std::size_t n = nn::NumElements(shape);
    const Tensor s = Scaled(Lcg(40 + n, n), shape, 2.0);
    Tensor e = Scaled(Lcg(80 + n, n), shape, 2.0);
    const double err = MaxGradError(
        [&](nn::Tape& t, const std::vector<Var>& in) { return SpectralLoss(t, in[0], s, LossConfig{}); }, {e},
        n);
    INFO(nn::ShapeString(shape));
    CHECK(err < 1e-4);
  }
}

TEST_CASE("spectral loss rejects mismatched shapes") {
  nn::Tape tape;
  const Var e = tape.Leaf(Tensor({1, 2, 3, 2}));
  CHECK_THROWS_AS(SpectralLoss(tape, e, Tensor({1, 2, 4, 2}), LossConfig{}), Error);
  CHECK_THROWS_AS(SpectralLoss(tape, tape.Leaf(Tensor({1, 2, 3})), Tensor({1, 2, 3}), LossConfig{}), Error);
}

TEST_CASE("train config validation and presets") {
  TrainConfig c;
  CHECK_NOTHROW(c.Validate());
  c.fingerprint_prob = 1.5;
  CHECK_THROWS_AS(c.Validate(), Error);
  c = TrainConfig{};
  c.epochs = 0;
  CHECK_THROWS_AS(c.Validate(), Error);

  const TrainConfig opt = TrainConfigForVariant("dfin-opt", 3);
  CHECK(opt.fingerprint_prob == 0.5);
  CHECK(opt.epochs == 6);
  CHECK(opt.variant.fusion == FusionMode::kAdditive);
  const TrainConfig dfin = TrainConfigForVariant("dfin", 3);
  CHECK(dfin.fingerprint_prob == 1.0);
  CHECK(dfin.epochs == 3);
  CHECK(TrainConfigForVariant("baseline", 3).fingerprint_prob == 0.0);
}

TEST_CASE("baseline pretraining refuses a fingerprint path") {
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.variant = VariantByName("dfin");
  CHECK_THROWS_AS(PretrainBaseline(TinyConfig({}), FromSamples(TinySamples(2)), cfg), Error);
}

TEST_CASE("training on a small fixed set reduces the loss fivefold") {
  const auto samples = TinySamples(8);
  const auto data = FromSamples(samples);
  TrainConfig pre;
  pre.epochs = 200;
  pre.batch = 8;
  pre.lr = 1e-2;
  pre.seed = 9;
  const TrainResult base = PretrainBaseline(TinyConfig({}), data, pre);
  REQUIRE(base.step_losses.size() == 200);
  const double base_ratio = base.step_losses.front() / base.step_losses.back();
  MESSAGE("baseline loss ratio " << base_ratio);
  CHECK(base_ratio >= 5.0);

  // Fingerprint variants start from the same untrained weights, so the branch
  // is learned together with the rest.
  const nn::Checkpoint fresh = Model::Create(TinyConfig({}), 9).ToCheckpoint();
  for (const std::string v : {"dfin", "dfin-att", "dfin-sameinit", "dfin-sharedenc", "dfin-opt"}) {
    TrainConfig cfg = TrainConfigForVariant(v, 200);
    cfg.epochs = 200;
    cfg.batch = 8;
    cfg.lr = 1e-2;
    cfg.seed = 1;
    const TrainResult r = TrainVariant(fresh, data, cfg);
    const double ratio = r.step_losses.front() / r.step_losses.back();
    MESSAGE(v << " loss ratio " << ratio);
    CHECK(ratio >= 5.0);
  }
}

TEST_CASE("training is bit-reproducible") {
  const nn::Checkpoint a = TinyBaseline(), b = TinyBaseline();
  CHECK(nn::SerializeCheckpoint(a) == nn::SerializeCheckpoint(b));

  TrainConfig cfg = TrainConfigForVariant("dfin-opt", 2);
  cfg.batch = 2;
  cfg.seed = 4;
  const auto data = FromSamples(TinySamples(4));
  const TrainResult r1 = TrainVariant(a, data, cfg), r2 = TrainVariant(a, data, cfg);
  CHECK(nn::SerializeCheckpoint(r1.checkpoint) == nn::SerializeCheckpoint(r2.checkpoint));
  CHECK(r1.step_losses == r2.step_losses);
}

TEST_CASE("fingerprint dropout probability controls the active fraction") {
  const nn::Checkpoint base = TinyBaseline(1);
  const auto data = FromSamples(TinySamples(4));

  SUBCASE("p = 0 leaves the fingerprint branch untouched") {
    TrainConfig cfg = TrainConfigForVariant("dfin", 2);
    cfg.fingerprint_prob = 0.0;
    cfg.batch = 2;
    cfg.seed = 6;
    const TrainResult r = TrainVariant(base, data, cfg);
    CHECK(r.fp_active_fraction == 0.0);
    const Model start = Model::FromPretrained(Model::FromCheckpoint(base), cfg.variant, cfg.seed);
    const Model end = Model::FromCheckpoint(r.checkpoint);
    CHECK(SameParams(start.params(), end.params(), start.FingerprintBranchNames()));
    CHECK_FALSE(SameParams(start.params(), end.params(), start.params().NamesWithPrefix("enc.")));
  }
  SUBCASE("p = 1 activates every batch") {
    TrainConfig cfg = TrainConfigForVariant("dfin", 2);
    cfg.batch = 2;
    const TrainResult r = TrainVariant(base, data, cfg);
    CHECK(r.fp_active_fraction == 1.0);
    for (const auto& e : r.epochs) CHECK(e.fp_active_batches == e.batches);
    CHECK(r.checkpoint.meta.at("fingerprint_prob").get<double>() == 1.0);
  }
  SUBCASE("p = 0.5 activates about half of 400 batches") {
    TrainConfig cfg = TrainConfigForVariant("dfin-opt", 100);
    cfg.batch = 1;
    cfg.seed = 12;
    const auto one = FromSamples(TinySamples(4));
    const TrainResult r = TrainVariant(base, one, cfg);
    REQUIRE(r.steps == 800);
    std::size_t first400 = 0;
    for (std::size_t e = 0; e < 100; ++e) first400 += r.epochs[e].fp_active_batches;
    const double frac = static_cast<double>(first400) / 400.0;
    MESSAGE("active fraction " << frac);
    CHECK(frac >= 0.42);
    CHECK(frac <= 0.58);
  }
}

TEST_CASE("gradients reach the fingerprint encoder") {
  const nn::Checkpoint base = TinyBaseline(1);
  const auto batch = TinySamples(2);
  auto norm_of = [](const BatchGrad& g, const std::vector<std::string>& names) {
    double n = 0.0;
    for (const auto& name : names) {
      REQUIRE(g.grads.count(name));
      for (double x : g.grads.at(name).values()) n += x * x;
    }
    return n;
  };
  for (const std::string v : {"dfin", "dfin-att", "dfin-sameinit"}) {
    INFO(v);
    const VariantConfig vc = VariantByName(v);
    // At attachment only the zero-initialised entry layer sees a gradient.
    const Model fresh = Model::FromPretrained(Model::FromCheckpoint(base), vc, 5);
    const std::string entry = vc.fusion == FusionMode::kAttention ? "ffn.w" : "fproj.w";
    CHECK(norm_of(ComputeBatchGrad(fresh, batch, true, LossConfig{}), {entry}) > 0.0);

    // One update later the encoder is reached.
    TrainConfig cfg = TrainConfigForVariant(v, 1);
    cfg.batch = 2;
    cfg.seed = 5;
    const Model m = Model::FromCheckpoint(TrainVariant(base, FromSamples(batch), cfg).checkpoint);
    CHECK(norm_of(ComputeBatchGrad(m, batch, true, LossConfig{}), m.params().NamesWithPrefix("fenc.")) > 0.0);
    // Inactive batches leave the branch without gradients.
    const BatchGrad off = ComputeBatchGrad(m, batch, false, LossConfig{});
    for (const auto& name : m.FingerprintBranchNames()) CHECK(off.grads.count(name) == 0);
  }
}

TEST_CASE("shared encoder adds only the projection") {
  const Model base = Model::FromCheckpoint(TinyBaseline(1));
  const Model shared = Model::FromPretrained(base, VariantByName("dfin-sharedenc"), 5);
  std::size_t proj = 0;
  for (const auto& n : shared.params().NamesWithPrefix("fproj.")) proj += shared.params().at(n).size();
  CHECK(proj > 0);
  CHECK(shared.params().NumScalars() == base.params().NumScalars() + proj);
  CHECK(shared.params().NamesWithPrefix("fenc.").empty());
}

TEST_CASE("fine-tuning rejects an incompatible checkpoint") {
  const Model base = Model::FromCheckpoint(TinyBaseline(1));
  const nn::Checkpoint att = Model::FromPretrained(base, VariantByName("dfin-att"), 5).ToCheckpoint();
  TrainConfig cfg = TrainConfigForVariant("dfin", 1);
  CHECK_THROWS_AS(TrainVariant(att, FromSamples(TinySamples(2)), cfg), Error);
}

TEST_CASE("divergence stops training and keeps the last good checkpoint") {
  const auto dir = std::filesystem::temp_directory_path() / "dfinger_trainer_test";
  std::filesystem::create_directories(dir);
  const std::string ckpt = (dir / "last_good.ckpt").string();
  std::filesystem::remove(ckpt);

  Model m = Model::FromCheckpoint(TinyBaseline(1));
  m.params().at(m.params().Names().front())[0] = std::nan("");
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch = 2;
  cfg.checkpoint_path = ckpt;
  try {
    TrainVariant(m.ToCheckpoint(), FromSamples(TinySamples(2)), cfg);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kNumeric);
  }
  CHECK(std::filesystem::exists(ckpt));
}

TEST_CASE("training log has one JSON line per step") {
  const auto dir = std::filesystem::temp_directory_path() / "dfinger_trainer_test";
  std::filesystem::create_directories(dir);
  const std::string log = (dir / "train.jsonl").string();
  std::filesystem::remove(log);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch = 2;
  cfg.log_path = log;
  const TrainResult r = PretrainBaseline(TinyConfig({}), FromSamples(TinySamples(3)), cfg);
  CHECK(r.steps == 6);
  std::ifstream in(log);
  std::string line;
  std::int64_t n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("step").get<std::int64_t>() == n);
    CHECK(j.at("loss").get<double>() == r.step_losses[static_cast<std::size_t>(n)]);
    CHECK(j.contains("grad_norm"));
    ++n;
  }
  CHECK(n == 6);
}
