#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "doctest.h"
#include "dfinger/data/corpus.hpp"
#include "dfinger/error.hpp"
#include "dfinger/metrics/metrics.hpp"

using namespace dfinger;
namespace fs = std::filesystem;

namespace {

// Same generator as tests/oracles/stoi_ref.py.
std::vector<double> Lcg(std::uint64_t seed, std::size_t n) {
  std::vector<double> out(n);
  std::uint64_t s = seed;
  for (auto& v : out) {
    s = s * 6364136223846793005ULL + 1442695040888963407ULL;
    v = static_cast<double>(s >> 11) * 0x1.0p-53 - 0.5;
  }
  return out;
}

std::pair<AudioBuffer, AudioBuffer> OraclePair() {
  const std::size_t n = 72000;
  const auto q = Lcg(7, n), w = Lcg(11, n);
  AudioBuffer x{std::vector<double>(n), 24000}, y{std::vector<double>(n), 24000};
  const double tp = 2.0 * std::numbers::pi;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / 24000.0;
    double v = 0.3 * std::sin(tp * 180 * t) * (0.6 + 0.4 * std::sin(tp * 4 * t)) +
               0.15 * std::sin(tp * 900 * t + 0.5) * (0.5 + 0.5 * std::sin(tp * 2.5 * t)) +
               0.1 * std::sin(tp * 2400 * t) * (0.5 + 0.5 * std::cos(tp * 3 * t));
    if (t >= 1.2 && t < 1.6) v = 1e-5 * q[i];
    x.samples[i] = v;
    y.samples[i] = v + 0.1 * w[i];
  }
  return {x, y};
}

AudioBuffer AddNoiseAtSnr(const AudioBuffer& clean, const std::vector<double>& noise, double snr) {
  AudioBuffer y = clean;
  const double g = Rms(clean.samples) / Rms(noise) * std::pow(10.0, -snr / 20.0);
  for (std::size_t i = 0; i < y.size(); ++i) y.samples[i] += g * noise[i];
  return y;
}

template <typename F>
ErrorKind KindOf(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return static_cast<ErrorKind>(-1);
}

MetricRow Row(std::string cat, double snr, double noisy, double enh) {
  MetricRow r;
  r.id = cat + std::to_string(snr) + std::to_string(noisy);
  r.category = cat;
  r.snr_db = snr;
  r.si_sdr_noisy = noisy;
  r.si_sdr_enhanced = enh;
  r.delta_si_sdr = enh - noisy;
  r.stoi_noisy = 0.5;
  r.stoi_enhanced = 0.7;
  r.delta_stoi = 0.2;
  return r;
}

}  // namespace

TEST_CASE("si_sdr examples") {
  const std::vector<double> r{1, 2, 3, 4};
  const auto twice = SiSdr(r, {2, 4, 6, 8});
  CHECK(twice.db == 60.0);
  CHECK(twice.capped);
  const auto ortho = SiSdr({1, 0}, {0, 1});
  CHECK(ortho.db == -60.0);
  CHECK(ortho.capped);
  // Exact rational evaluation: tests/oracles/si_sdr_example.py.
  const auto ex = SiSdr(r, {1.1, 1.9, 3.1, 3.9});
  CHECK(ex.db == doctest::Approx(28.83974538925592).epsilon(1e-12));
  CHECK_FALSE(ex.capped);
  CHECK(KindOf([] { SiSdr({0, 0, 0}, {1, 2, 3}); }) == ErrorKind::kUndefinedReference);
  CHECK(KindOf([] { SiSdr({1, 2}, {1, 2, 3}); }) == ErrorKind::kInvalidShape);
  CHECK(KindOf([] { SiSdr({}, {}); }) == ErrorKind::kInvalidShape);
}

TEST_CASE("si_sdr scale invariance") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  for (int t = 0; t < 50; ++t) {
    std::vector<double> r(1000), e(1000);
    for (std::size_t i = 0; i < r.size(); ++i) {
      r[i] = g(rng);
      e[i] = r[i] + 0.5 * g(rng);
    }
    const double base = SiSdr(r, e).db;
    for (double c : {1e-3, 0.5, 3.0, 1e4}) {
      auto es = e, rs = r;
      for (auto& v : es) v *= c;
      for (auto& v : rs) v *= c;
      CHECK(std::abs(SiSdr(r, es).db - base) < 1e-9);
      CHECK(std::abs(SiSdr(rs, es).db - base) < 1e-9);
    }
  }
}

TEST_CASE("stoi matches the shared-resampler reference") {
  auto [x, y] = OraclePair();
  const auto r10 = ResampleTo10k(x.samples);
  CHECK(r10.size() == 30000);
  CHECK(r10[100] == doctest::Approx(-0.1579894637056206).epsilon(1e-12));
  CHECK(r10[101] == doctest::Approx(-0.016350630600692938).epsilon(1e-10));
  CHECK(r10[102] == doctest::Approx(-0.0812208807479295).epsilon(1e-12));
  CHECK(Stoi(x, y) == doctest::Approx(0.49563623976813526).epsilon(1e-9));
}

TEST_CASE("stoi identities") {
  auto [x, y] = OraclePair();
  CHECK(std::abs(Stoi(x, x) - 1.0) < 1e-9);
  const auto speech = SynthesizeSpeech(3.0, 24000, 2);
  CHECK(std::abs(Stoi(speech, speech) - 1.0) < 1e-9);

  auto xs = x, ys = y;
  for (auto& v : xs.samples) v *= 3.7;
  for (auto& v : ys.samples) v *= 3.7;
  CHECK(std::abs(Stoi(xs, ys) - Stoi(x, y)) < 1e-6);

  // Envelopes are magnitudes, so a polarity flip is invisible.
  auto neg = x;
  for (auto& v : neg.samples) v = -v;
  CHECK(std::abs(Stoi(x, neg) - 1.0) < 1e-9);

  AudioBuffer at10k{std::vector<double>(y.samples.begin(), y.samples.begin() + 30000), 10000};
  AudioBuffer ref10k{std::vector<double>(x.samples.begin(), x.samples.begin() + 30000), 10000};
  CHECK(Stoi(ref10k, at10k) > 0.0);

  AudioBuffer short_x{std::vector<double>(x.samples.begin(), x.samples.begin() + 8000), 24000};
  AudioBuffer short_y{std::vector<double>(y.samples.begin(), y.samples.begin() + 8000), 24000};
  CHECK(KindOf([&] { Stoi(short_x, short_y); }) == ErrorKind::kInvalidLength);
  AudioBuffer odd{x.samples, 16000};
  CHECK(KindOf([&] { Stoi(odd, odd); }) == ErrorKind::kInvalidConfig);
  CHECK(KindOf([&] { Stoi(x, short_y); }) == ErrorKind::kInvalidShape);
}

TEST_CASE("stoi is monotone in SNR on the speech surrogate") {
  const auto clean = SynthesizeSpeech(3.0, 24000, 1);
  const auto noise = Lcg(5, clean.size());
  const double low = Stoi(clean, AddNoiseAtSnr(clean, noise, -10.0));
  const double high = Stoi(clean, AddNoiseAtSnr(clean, noise, 10.0));
  // Reference run on float32 copies of the same signals.
  CHECK(low == doctest::Approx(0.5941172382702117).epsilon(1e-4));
  CHECK(high == doctest::Approx(0.9253852749452893).epsilon(1e-4));
  CHECK(low < high);
  double prev = -1.0;
  for (double snr : {-15.0, -5.0, 0.0, 5.0, 15.0, 25.0}) {
    const double s = Stoi(clean, AddNoiseAtSnr(clean, noise, snr));
    CHECK(s > prev);
    prev = s;
  }
}

TEST_CASE("delta bookkeeping") {
  CHECK(MakeDelta(3.0, 3.0).value == 0.0);
  const auto d = MakeDelta(-4.70, 6.14);
  CHECK(d.value == doctest::Approx(10.84).epsilon(1e-12));
  CHECK_FALSE(d.unreliable);
  CHECK(MakeDelta(-60.0, 5.0, true, false).unreliable);
  CHECK(MakeDelta(1.0, 60.0, false, true).unreliable);

  const auto clean = SynthesizeSpeech(3.0, 24000, 3);
  const auto noisy = AddNoiseAtSnr(clean, Lcg(9, clean.size()), 0.0);
  const auto row = ScoreSample(clean, noisy, clean);
  CHECK(row.unreliable);
  CHECK(row.si_sdr_enhanced == 60.0);
  CHECK(row.delta_si_sdr == row.si_sdr_enhanced - row.si_sdr_noisy);
  CHECK(row.delta_stoi == row.stoi_enhanced - row.stoi_noisy);
  const auto same = ScoreSample(clean, noisy, noisy);
  CHECK(same.delta_si_sdr == 0.0);
  CHECK(same.delta_stoi == 0.0);
}

TEST_CASE("aggregation") {
  std::vector<MetricRow> one{Row("hum", 0, -2, 5)};
  const auto a = Aggregate(one, AggregateKey::kCategory);
  REQUIRE(a.size() == 1);
  CHECK(a[0].delta_si_sdr == 7.0);
  CHECK(a[0].count == 1);

  std::vector<MetricRow> rows{Row("hum", 10, -2, 5), Row("hum", 10, -4, 5), Row("band", -5, 1, 2),
                              Row("band", 0, 3, 6), Row("band", -5, 0, 8)};
  const auto by_cat = Aggregate(rows, AggregateKey::kCategory);
  REQUIRE(by_cat.size() == 2);
  CHECK(by_cat[0].key == "band");
  CHECK(by_cat[0].delta_si_sdr == doctest::Approx((1.0 + 3.0 + 8.0) / 3.0));
  CHECK(by_cat[1].delta_si_sdr == doctest::Approx(8.0));
  const auto by_snr = Aggregate(rows, AggregateKey::kSnr);
  REQUIRE(by_snr.size() == 3);
  CHECK(by_snr[0].key == "-5");
  CHECK(by_snr[1].key == "0");
  CHECK(by_snr[2].key == "10");

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-10, 20);
  std::vector<MetricRow> many;
  for (int i = 0; i < 300; ++i) many.push_back(Row(i % 3 ? "a" : "b", i % 7, u(rng), u(rng)));
  double weighted = 0.0;
  for (const auto& g : Aggregate(many, AggregateKey::kSnr)) weighted += g.delta_si_sdr * g.count;
  CHECK(std::abs(weighted / 300.0 - Aggregate(many, AggregateKey::kAll)[0].delta_si_sdr) < 1e-9);

  std::vector<MetricRow> sweep;
  for (double off : {120.0, 3.0, 30.0, 10.0, 60.0}) {
    auto r = Row("pink", 0, 0, off / 10);
    r.offset_s = off;
    sweep.push_back(r);
  }
  const auto curve = Aggregate(sweep, AggregateKey::kOffset);
  REQUIRE(curve.size() == 5);
  CHECK(curve.front().key == "3");
  CHECK(curve.back().key == "120");
}

TEST_CASE("report files") {
  const fs::path dir = fs::temp_directory_path() / "dfinger_report_test";
  fs::create_directories(dir);
  std::vector<MetricRow> rows{Row("hum", 0, -2, 5), Row("band, wide", 5, 1.0 / 3.0, 2)};
  rows[1].model = "dfin";
  rows[1].condition = "fp";
  rows[1].unreliable = true;
  WriteReportCsv((dir / "r.csv").string(), rows);
  const auto back = ReadReportCsv((dir / "r.csv").string());
  REQUIRE(back.size() == 2);
  CHECK(back[1].category == "band, wide");
  CHECK(back[1].si_sdr_noisy == rows[1].si_sdr_noisy);
  CHECK(back[1].unreliable);
  CHECK(back[0].delta_si_sdr == rows[0].delta_si_sdr);

  const auto j = ReportJson(rows, {AggregateKey::kCategory, AggregateKey::kSnr});
  CHECK(j.at("schema") == "dfinger-report-v1");
  CHECK(j.at("count") == 2);
  CHECK(j.at("by_category").size() == 2);

  {
    std::ofstream f(dir / "old.csv");
    f << "# dfinger-report-v0\n";
  }
  CHECK(KindOf([&] { ReadReportCsv((dir / "old.csv").string()); }) == ErrorKind::kVersionMismatch);
  CHECK(ParseAggregateKey("snr") == AggregateKey::kSnr);
  CHECK(KindOf([] { ParseAggregateKey("nope"); }) == ErrorKind::kInvalidConfig);
}
