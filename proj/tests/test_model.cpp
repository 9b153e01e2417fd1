#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "dfinger/error.hpp"
#include "dfinger/model/model.hpp"
#include "dfinger/model/stream.hpp"
#include "grad_check.hpp"
#include "model_util.hpp"
#include "test_util.hpp"

using namespace dfinger;
using dfinger::testing::MaxGradError;
using dfinger::testing::RandomTensor;
using dfinger::testing::TinyConfig;
using dfinger::testing::WhiteNoise;
using nn::Tensor;
using nn::Var;

namespace {

FeaturePair RandomFeatures(const Model& m, std::size_t frames, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 0.5);
  FeaturePair f{frames, m.filterbank().num_bands, m.num_df_bins(), {}, {}};
  f.erb_feat.resize(frames * f.num_bands);
  f.df_feat.resize(frames * f.num_df_bins);
  for (double& v : f.erb_feat) v = d(rng);
  for (auto& v : f.df_feat) v = {d(rng), d(rng)};
  return f;
}

AudioBuffer Noise(const Model& m, std::size_t n, std::uint64_t seed, double scale = 0.3) {
  AudioBuffer a = WhiteNoise(n, seed, scale);
  a.sample_rate = m.config().analysis.sample_rate;
  return a;
}

double MaxAbsDiff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

const VariantConfig kAdd = VariantByName("dfin");
const VariantConfig kAtt = VariantByName("dfin-att");
const VariantConfig kBase = VariantByName("baseline");

}  // namespace

TEST_CASE("main encoder: zero fixpoint, shape and causality") {
  Model m = Model::Create(TinyConfig(kBase), 3);
  const FeaturePair f = RandomFeatures(m, 20, 1);
  const Tensor e = MainEmbedding(m, f);
  CHECK(e.shape() == nn::Shape{20, 8});

  FeaturePair head = f;
  head.num_frames = 10;
  head.erb_feat.resize(10 * f.num_bands);
  head.df_feat.resize(10 * f.num_df_bins);
  const Tensor eh = MainEmbedding(m, head);
  for (std::size_t i = 0; i < eh.size(); ++i) CHECK(eh[i] == doctest::Approx(e[i]).epsilon(1e-12));

  dfinger::testing::ZeroParams(m);
  FeaturePair zero = f;
  std::fill(zero.erb_feat.begin(), zero.erb_feat.end(), 0.0);
  std::fill(zero.df_feat.begin(), zero.df_feat.end(), 0.0);
  for (double v : MainEmbedding(m, zero).values()) CHECK(v == 0.0);
}

TEST_CASE("fingerprint encoder initialisation and coupling") {
  const AudioBuffer fp = Noise(Model::Create(TinyConfig(kAdd), 1), 4000, 5);
  auto same_as_main = [&](const VariantConfig& v) {
    Model m = Model::Create(TinyConfig(v), 7);
    const PreparedInput p = Prepare(m, fp);
    return std::make_pair(MainEmbedding(m, p.features), FingerprintEmbedding(m, fp));
  };
  {
    auto [main, fing] = same_as_main(VariantByName("dfin-sharedenc"));
    CHECK(main.storage() == fing.storage());
  }
  {
    auto [main, fing] = same_as_main(VariantByName("dfin-sameinit"));
    CHECK(main.storage() == fing.storage());
  }
  {
    auto [main, fing] = same_as_main(kAdd);
    CHECK(MaxAbsDiff(main.storage(), fing.storage()) > 1e-6);
  }
  Model shared = Model::Create(TinyConfig(VariantByName("dfin-sharedenc")), 1);
  Model base = Model::Create(TinyConfig(kBase), 1);
  CHECK(shared.params().NumScalars() == base.params().NumScalars() + 8 * 8 + 8);
  CHECK(shared.fingerprint_encoder_prefix() == "enc.");
  CHECK(shared.params().NamesWithPrefix("fenc.").empty());
}

TEST_CASE("fingerprint summary is the time mean") {
  Tensor c({3, 4});
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < 4; ++i) c[k * 4 + i] = 0.5 * static_cast<double>(i) - 1.0;
  CHECK(SummarizeFingerprint(c) == std::vector<double>{-1.0, -0.5, 0.0, 0.5});
  CHECK(SummarizeFingerprint(Tensor({2, 2}, {1.0, 4.0, 3.0, -2.0})) == std::vector<double>{2.0, 1.0});
  std::mt19937_64 rng(3);
  const Tensor r = RandomTensor({7, 8}, rng);
  const auto s = SummarizeFingerprint(r);
  for (std::size_t i = 0; i < 8; ++i) {
    long double acc = 0.0L;
    for (std::size_t k = 0; k < 7; ++k) acc += r[k * 8 + i];
    CHECK(s[i] == doctest::Approx(static_cast<double>(acc / 7.0L)).epsilon(1e-14));
  }
  CHECK_THROWS_AS(SummarizeFingerprint(Tensor({0, 8})), Error);
  Model m = Model::Create(TinyConfig(kAdd), 1);
  try {
    FingerprintEmbedding(m, AudioBuffer{{}, 8000});
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kEmptyFingerprint);
  }
}

TEST_CASE("fusion contracts") {
  std::mt19937_64 rng(4);
  Model m = Model::Create(TinyConfig(kAtt), 11);
  nn::Tape t;
  Network net = Network::Frozen(m, t);
  Var main = t.Constant(RandomTensor({1, 6, 8}, rng));
  const Tensor main_v = t.value(main);

  Var zero_fp = t.Constant(Tensor({1, 4, 8}));
  Var any_fp = t.Constant(RandomTensor({1, 4, 8}, rng));
  CHECK(t.value(net.Fuse(main, zero_fp, FusionMode::kAdditive)).storage() == main_v.storage());
  CHECK(t.value(net.Fuse(main, any_fp, FusionMode::kBypass)).storage() == main_v.storage());
  try {
    net.Fuse(main, std::nullopt, FusionMode::kAdditive);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kEmptyFingerprint);
  }

  // One fingerprint frame: every query sees softmax weight 1 on it, so the
  // result is main + ffn(wo (wv v + bv) + bo), unrolled by hand here.
  const Tensor v1 = RandomTensor({1, 1, 8}, rng);
  const Tensor fused = t.value(net.Fuse(main, t.Constant(v1), FusionMode::kAttention));
  const auto& p = m.params();
  auto affine = [](const std::vector<double>& x, const Tensor& w, const Tensor& b) {
    std::vector<double> y(b.storage());
    for (std::size_t o = 0; o < y.size(); ++o)
      for (std::size_t i = 0; i < x.size(); ++i) y[o] += x[i] * w[i * y.size() + o];
    return y;
  };
  const auto val = affine(v1.storage(), p.at("att.wv"), p.at("att.bv"));
  const auto out = affine(val, p.at("att.wo"), p.at("att.bo"));
  const auto ffn = affine(out, p.at("ffn.w"), p.at("ffn.b"));
  for (std::size_t k = 0; k < 6; ++k)
    for (std::size_t i = 0; i < 8; ++i)
      CHECK(fused[k * 8 + i] == doctest::Approx(main_v[k * 8 + i] + ffn[i]).epsilon(1e-12));
}

TEST_CASE("decoders") {
  Model m = Model::Create(TinyConfig(kBase), 2);
  std::mt19937_64 rng(5);
  {
    nn::Tape t;
    Network net = Network::Frozen(m, t);
    const Tensor g = t.value(net.ErbGains(t.Constant(RandomTensor({2, 9, 8}, rng, 4.0))));
    CHECK(g.shape() == nn::Shape{2, 9, 6});
    for (double v : g.values()) CHECK((v >= 0.0 && v <= 1.0));
    CHECK(t.value(net.DfCoefs(t.Constant(Tensor({1, 2, 8})))).shape() == nn::Shape{1, 2, 9 * 3 * 2});
  }
  dfinger::testing::ZeroParams(m);
  {
    nn::Tape t;
    Network net = Network::Frozen(m, t);
    for (double v : t.value(net.ErbGains(t.Constant(Tensor({1, 3, 8})))).values()) CHECK(v == 0.5);
  }
  m.params().at("dec.erb_out.b").Fill(-20.0);
  {
    nn::Tape t;
    Network net = Network::Frozen(m, t);
    for (double v : t.value(net.ErbGains(t.Constant(Tensor({1, 3, 8})))).values()) CHECK(v < 1e-8);
  }
}

TEST_CASE("apply gains") {
  const AnalysisConfig cfg;
  const ErbFilterbank fb = BuildErbMatrix(cfg, 32);
  const ComplexSpectrogram s = StftAnalyze(WhiteNoise(4800, 1), cfg);
  const std::size_t frames = s.num_frames;
  CHECK(ApplyGains(s, std::vector<double>(frames * 32, 1.0), fb).data == s.data);
  for (const auto& v : ApplyGains(s, std::vector<double>(frames * 32, 0.0), fb).data) CHECK(v == 0.0);
  std::vector<double> g(frames * 32, 1.0);
  for (std::size_t k = 0; k < frames; ++k) g[k * 32 + 20] = 0.5;
  const ComplexSpectrogram h = ApplyGains(s, g, fb);
  for (std::size_t k = 0; k < frames; ++k)
    for (std::size_t f = 0; f < s.num_bins; ++f)
      CHECK(h.at(k, f) == (fb.band_of_bin[f] == 20 ? 0.5 * s.at(k, f) : s.at(k, f)));
  CHECK_THROWS_AS(ApplyGains(s, std::vector<double>(3), fb), Error);
}

TEST_CASE("apply deep filter") {
  const AnalysisConfig cfg;
  const ComplexSpectrogram s = StftAnalyze(WhiteNoise(2400, 2), cfg);
  const std::size_t df = 81;
  DfCoefficients c{s.num_frames, df, 5, std::vector<std::complex<double>>(s.num_frames * df * 5)};
  for (std::size_t k = 0; k < s.num_frames; ++k)
    for (std::size_t f = 0; f < df; ++f) c.at(k, f, 0) = 1.0;
  CHECK(ApplyDeepFilter(s, c).data == s.data);

  std::fill(c.taps.begin(), c.taps.end(), 0.0);
  for (std::size_t k = 0; k < s.num_frames; ++k)
    for (std::size_t f = 0; f < df; ++f) c.at(k, f, 1) = 1.0;
  const ComplexSpectrogram d = ApplyDeepFilter(s, c);
  for (std::size_t f = 0; f < s.num_bins; ++f) {
    CHECK(d.at(0, f) == (f < df ? std::complex<double>(0.0) : s.at(0, f)));
    for (std::size_t k = 1; k < s.num_frames; ++k) CHECK(d.at(k, f) == (f < df ? s.at(k - 1, f) : s.at(k, f)));
  }

  // Order 3 on 5 frames against a per-bin time-varying convolution written
  // as a sum over input frames j (each contributes to outputs j..j+2).
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 1.0);
  ComplexSpectrogram x(5, 12);
  for (auto& v : x.data) v = {n(rng), n(rng)};
  DfCoefficients r{5, 7, 3, std::vector<std::complex<double>>(5 * 7 * 3)};
  for (auto& v : r.taps) v = {n(rng), n(rng)};
  const ComplexSpectrogram y = ApplyDeepFilter(x, r);
  for (std::size_t f = 0; f < 12; ++f) {
    std::vector<std::complex<double>> expect(5, 0.0);
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t k = j; k < std::min<std::size_t>(5, j + 3); ++k)
        expect[k] += f < 7 ? r.at(k, f, k - j) * x.at(j, f) : (k == j ? x.at(j, f) : 0.0);
    for (std::size_t k = 0; k < 5; ++k) {
      CHECK(std::abs(y.at(k, f) - expect[k]) < 1e-12);
    }
  }
}

TEST_CASE("differentiable spectral ops match the plain versions and pass grad checks") {
  std::mt19937_64 rng(12);
  const AnalysisConfig cfg{64, 32, 8000, 0};
  const ErbFilterbank fb = BuildErbMatrix(cfg, 6);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t b = 1 + trial % 2, frames = 2 + static_cast<std::size_t>(trial), order = 1 + trial % 3;
    const std::size_t df = 4 + static_cast<std::size_t>(trial);
    const Tensor spec = RandomTensor({b, frames, 33, 2}, rng);
    const Tensor coefs = RandomTensor({b, frames, df * order * 2}, rng);
    const Tensor gains = RandomTensor({b, frames, 6}, rng);
    CHECK(MaxGradError(
              [df, order](nn::Tape& t, const std::vector<Var>& v) { return DeepFilterOp(t, v[0], v[1], df, order); },
              {spec, coefs}, 100 + trial) < 1e-4);
    CHECK(MaxGradError([&fb](nn::Tape& t, const std::vector<Var>& v) { return GainsOp(t, v[0], v[1], fb); },
                       {spec, gains}, 200 + trial) < 1e-4);

    nn::Tape t;
    const Tensor y = t.value(DeepFilterOp(t, t.Constant(spec), t.Constant(coefs), df, order));
    const ComplexSpectrogram x0 = TensorToSpectrum(spec, 0);
    DfCoefficients c{frames, df, order, {}};
    for (std::size_t i = 0; i < frames * df * order; ++i) c.taps.emplace_back(coefs[2 * i], coefs[2 * i + 1]);
    const ComplexSpectrogram ref = ApplyDeepFilter(x0, c);
    const ComplexSpectrogram got = TensorToSpectrum(y, 0);
    for (std::size_t i = 0; i < ref.data.size(); ++i) CHECK(std::abs(ref.data[i] - got.data[i]) < 1e-12);
  }
}

TEST_CASE("end-to-end forward gradients for every fusion mode") {
  std::mt19937_64 rng(13);
  for (const char* name : {"baseline", "dfin", "dfin-att", "dfin-sharedenc"}) {
    const Model m = Model::Create(TinyConfig(VariantByName(name)), 21);
    // Check a handful of parameters from every stage as free inputs.
    std::vector<std::string> names = {"enc.df_conv1.w", "enc.gru.wh", "dec.erb_out.w", "dec.df_out.b"};
    if (m.variant().has_fingerprint_branch()) names.push_back("fproj.w");
    if (m.variant().fusion == FusionMode::kAttention) names.push_back("att.wk");
    if (m.params().Has("fenc.bottleneck.w")) names.push_back("fenc.bottleneck.w");
    std::vector<Tensor> inputs;
    for (const auto& n : names) inputs.push_back(m.params().at(n));
    const Tensor spec = RandomTensor({2, 4, 33, 2}, rng);
    const Tensor erb = RandomTensor({2, 4, 6}, rng);
    const Tensor df = RandomTensor({2, 4, 18}, rng);
    const Tensor ferb = RandomTensor({2, 3, 6}, rng);
    const Tensor fdf = RandomTensor({2, 3, 18}, rng);
    const FusionMode mode = m.variant().fusion;
    auto graph = [&](nn::Tape& t, const std::vector<Var>& leaves) {
      Network net(m, t, [&](const std::string& n) {
        auto it = std::find(names.begin(), names.end(), n);
        return it != names.end() ? leaves[static_cast<std::size_t>(it - names.begin())] : t.Constant(m.params().at(n));
      });
      return net.Forward(t.Constant(spec), t.Constant(erb), t.Constant(df), t.Constant(ferb), t.Constant(fdf), mode);
    };
    CHECK_MESSAGE(MaxGradError(graph, inputs, 300) < 1e-4, name);
  }
}

TEST_CASE("enhance basics") {
  Model m = Model::Create(TinyConfig(kAdd), 31);
  const AudioBuffer fp = Noise(m, 8000, 1);
  AudioBuffer zero{std::vector<double>(8000, 0.0), 8000};
  const AudioBuffer z = Enhance(m, zero, &fp);
  CHECK(z.size() == 8000);
  CHECK(Rms(z.samples) < 1e-4);  // -80 dBFS

  const AudioBuffer x = Noise(m, 6000, 2);
  const AudioBuffer fp2 = Noise(m, 8000, 3, 0.05);
  EnhanceOptions bypass{FusionMode::kBypass};
  const AudioBuffer b1 = Enhance(m, x, &fp, bypass);
  const AudioBuffer b2 = Enhance(m, x, &fp2, bypass);
  CHECK(b1.samples == b2.samples);
  CHECK(Enhance(m, x, nullptr, bypass).samples == b1.samples);
  CHECK(Enhance(m, x, &fp).samples != Enhance(m, x, &fp2).samples);

  // Additive with a zero-mean embedding is Bypass, bit for bit.
  const Tensor zero_emb({5, 8});
  CHECK(EnhanceWithEmbedding(m, x, &zero_emb).samples == b1.samples);

  CHECK_THROWS_AS(Enhance(m, x, nullptr), Error);
  CHECK_THROWS_AS(Enhance(m, x, &fp, {FusionMode::kAttention}), Error);
  AudioBuffer wrong_rate = x;
  wrong_rate.sample_rate = 16000;
  CHECK_THROWS_AS(Enhance(m, wrong_rate, &fp), Error);
}

TEST_CASE("enhanced band energy never exceeds input with identity taps") {
  Model m = Model::Create(TinyConfig(kBase), 41);
  const std::size_t taps = m.num_df_bins() * 3 * 2;
  m.params().at("dec.df_out.w").Fill(0.0);
  m.params().at("dec.df_out.b").Fill(0.0);
  for (std::size_t f = 0; f < m.num_df_bins(); ++f) m.params().at("dec.df_out.b")[f * 6] = 1.0;
  CHECK(m.params().at("dec.df_out.b").size() == taps);
  const AudioBuffer x = Noise(m, 8000, 4);
  const PreparedInput in = Prepare(m, x);
  const PreparedInput out = Prepare(m, Enhance(m, x, nullptr));
  for (std::size_t k = 0; k + 2 < in.spec.num_frames; ++k) {
    std::vector<double> ein(6, 0.0), eout(6, 0.0);
    for (std::size_t f = 0; f < in.spec.num_bins; ++f) {
      ein[m.filterbank().band_of_bin[f]] += std::norm(in.spec.at(k, f));
      eout[m.filterbank().band_of_bin[f]] += std::norm(out.spec.at(k, f));
    }
    // Resynthesis leaks a little energy across frames; allow 1e-9 slack.
    for (std::size_t b = 0; b < 6; ++b) CHECK(eout[b] <= ein[b] * (1.0 + 1e-9) + 1e-12);
  }
}

TEST_CASE("output depends on input at most one frame ahead") {
  Model m = Model::Create(TinyConfig(kBase), 51);
  const AudioBuffer x = Noise(m, 3200, 6);
  const AudioBuffer y = Enhance(m, x, nullptr);
  for (std::size_t s : {200u, 1000u, 2500u}) {
    AudioBuffer p = x;
    p.samples[s] += 0.5;
    const AudioBuffer yp = Enhance(m, p, nullptr);
    const std::size_t safe = s - 64;
    for (std::size_t n = 0; n < safe; ++n) CHECK(yp.samples[n] == y.samples[n]);
    bool changed = false;
    for (std::size_t n = safe; n < y.size(); ++n) changed = changed || yp.samples[n] != y.samples[n];
    CHECK(changed);
  }
}

TEST_CASE("streaming matches whole-utterance enhancement") {
  for (const char* name : {"baseline", "dfin", "dfin-att"}) {
    Model m = Model::Create(TinyConfig(VariantByName(name)), 61);
    for (std::uint64_t seed : {1u, 2u}) {
      const AudioBuffer x = Noise(m, 5000 + 37 * seed, seed);
      const FusionMode mode = m.variant().fusion;
      StreamEnhancer s(m, mode);
      AudioBuffer batch;
      if (mode == FusionMode::kBypass) {
        batch = Enhance(m, x, nullptr);
      } else {
        const Tensor emb = FingerprintEmbedding(m, Noise(m, 4000, seed + 10));
        s.SetFingerprintEmbedding(emb);
        batch = EnhanceWithEmbedding(m, x, &emb);
      }
      CHECK_MESSAGE(MaxAbsDiff(s.ProcessAll(x).samples, batch.samples) < 1e-10, name);
    }
  }
}

TEST_CASE("stream summary replacement and absence") {
  Model m = Model::Create(TinyConfig(kAdd), 71);
  const AudioBuffer x = Noise(m, 6400, 8);
  StreamEnhancer s(m, FusionMode::kAdditive);
  s.SetFingerprintEmbedding(FingerprintEmbedding(m, Noise(m, 4000, 9)));
  CHECK(s.fingerprint_active());
  const std::size_t hop = s.hop_size();
  std::vector<double> out(hop);
  for (std::size_t k = 0; k < 100; ++k) s.Process(std::span<const double>(x.samples).subspan(k * hop, hop), out);

  StreamEnhancer zeroed = s;
  zeroed.SetFingerprintSummary(std::vector<double>(8, 0.0));
  StreamEnhancer absent = s;
  absent.SetFingerprintSummary(std::nullopt);
  CHECK_FALSE(absent.fingerprint_active());
  std::vector<double> a(hop), b(hop), c(hop);
  for (std::size_t k = 100; k < 200; ++k) {
    auto hop_in = std::span<const double>(x.samples).subspan(k * hop, hop);
    zeroed.Process(hop_in, a);
    absent.Process(hop_in, b);
    s.Process(hop_in, c);
    CHECK(a == b);
  }
  CHECK(a != c);
  CHECK_THROWS_AS(s.SetFingerprintSummary(std::vector<double>(3, 0.0)), Error);
}

TEST_CASE("checkpoint round trip and variant checks") {
  Model m = Model::Create(TinyConfig(kAdd), 81);
  const nn::Checkpoint c = m.ToCheckpoint(12);
  CHECK(c.meta.at("train_steps") == 12);
  const Model back = Model::FromCheckpoint(nn::DeserializeCheckpoint(nn::SerializeCheckpoint(c)));
  const AudioBuffer x = Noise(m, 3000, 1);
  const AudioBuffer fp = Noise(m, 3000, 2);
  CHECK(Enhance(back, x, &fp).samples == Enhance(m, x, &fp).samples);
  CHECK(back.variant() == kAdd);

  nn::Checkpoint bad = c;
  bad.meta["model_config"]["variant"] = ToJson(kAtt);
  try {
    Model::FromCheckpoint(bad);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInvalidConfig);
  }
  nn::Checkpoint wide = c;
  wide.meta["model_config"]["hidden"] = 16;
  CHECK_THROWS_AS(Model::FromCheckpoint(wide), Error);

  const Model pre = Model::Create(TinyConfig(kBase), 5);
  const Model same = Model::FromPretrained(pre, VariantByName("dfin-sameinit"), 9);
  for (const auto& n : pre.params().NamesWithPrefix("enc."))
    CHECK(same.params().at("f" + n).storage() == pre.params().at(n).storage());
  CHECK(same.params().at("dec.df_out.w").storage() == pre.params().at("dec.df_out.w").storage());
}
