#include "dfinger/data/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <filesystem>
#include <functional>
#include <numbers>
#include <random>

#include "dfinger/data/mix.hpp"
#include "dfinger/dsp/fft.hpp"
#include "dfinger/dsp/wav.hpp"
#include "dfinger/error.hpp"

namespace dfinger {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double Uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Second-order high-pass (RBJ cookbook), Q = 1/sqrt(2).
void HighPassInPlace(std::vector<double>& x, double fc, int sr) {
  const double w0 = kTwoPi * fc / sr;
  const double alpha = std::sin(w0) / std::sqrt(2.0);
  const double c = std::cos(w0);
  const double a0 = 1.0 + alpha;
  const double b0 = (1.0 + c) / 2.0 / a0, b1 = -(1.0 + c) / a0, b2 = b0;
  const double a1 = -2.0 * c / a0, a2 = (1.0 - alpha) / a0;
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
  for (double& v : x) {
    const double y = b0 * v + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
    x2 = x1;
    x1 = v;
    y2 = y1;
    y1 = y;
    v = y;
  }
}

// Applies a zero-phase magnitude response over the whole signal (circular).
void ShapeInPlace(std::vector<double>& x, int sr, const std::function<double(double)>& mag) {
  const RealFft fft(static_cast<int>(x.size()));
  std::vector<std::complex<double>> spec(fft.num_bins());
  fft.Forward(x, spec);
  const double df = static_cast<double>(sr) / static_cast<double>(x.size());
  for (std::size_t k = 0; k < spec.size(); ++k) spec[k] *= mag(k * df);
  fft.Inverse(spec, x);
}

std::vector<double> WhiteNoise(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> x(n);
  for (double& v : x) v = g(rng);
  return x;
}

void AddScaled(std::vector<double>& dst, const std::vector<double>& src, double gain) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gain * src[i];
}

double PinkMag(double f) { return 1.0 / std::sqrt(std::max(f, 20.0) / 1000.0); }

void NormalizeLevel(std::vector<double>& x, double rms_db) {
  const double r = Rms(x);
  if (r <= 0.0) return;
  double g = std::pow(10.0, rms_db / 20.0) / r;
  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  if (peak * g > 0.99) g = 0.99 / peak;
  for (double& v : x) v *= g;
}

// Sum of harmonics of a (slowly varying) fundamental. amps[k - 1] is the
// amplitude of harmonic k at block granularity; rows are blocks.
struct HarmonicBank {
  std::vector<double> phase_inc;  // per sample, radians
  int block = 0;
  std::vector<std::vector<double>> amps;  // [block][harmonic]
};

void RenderHarmonics(const HarmonicBank& bank, std::vector<double>& out) {
  double theta = 0.0;
  const std::size_t n = out.size();
  std::vector<double> a;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t b = i / bank.block;
    const double frac = static_cast<double>(i % bank.block) / bank.block;
    const auto& a0 = bank.amps[b];
    const auto& a1 = bank.amps[std::min(b + 1, bank.amps.size() - 1)];
    theta += bank.phase_inc[i];
    if (theta > kTwoPi) theta -= kTwoPi;
    const double s1 = std::sin(theta), c2 = 2.0 * std::cos(theta);
    double sk_1 = 0.0, sk = s1, acc = 0.0;
    const std::size_t kmax = std::min(a0.size(), a1.size());
    for (std::size_t k = 0; k < kmax; ++k) {
      const double amp = a0[k] + (a1[k] - a0[k]) * frac;
      acc += amp * sk;
      const double next = c2 * sk - sk_1;
      sk_1 = sk;
      sk = next;
    }
    out[i] += acc;
  }
}

struct Syllable {
  double begin, end;
  bool fricative;
  std::array<double, 3> f_start, f_end;
};

constexpr std::array<std::array<double, 3>, 6> kVowels{{{730, 1090, 2440},
                                                         {270, 2290, 3010},
                                                         {300, 870, 2240},
                                                         {530, 1840, 2480},
                                                         {570, 840, 2410},
                                                         {660, 1720, 2410}}};
constexpr std::array<double, 3> kFormantBw{90, 110, 160};
constexpr std::array<double, 3> kFormantGain{1.0, 0.6, 0.3};

double SyllableEnvelope(const Syllable& s, double t) {
  if (t < s.begin || t >= s.end) return 0.0;
  const double attack = 0.02, release = 0.03;
  double e = 1.0;
  if (t - s.begin < attack) e = 0.5 - 0.5 * std::cos(std::numbers::pi * (t - s.begin) / attack);
  if (s.end - t < release) e = std::min(e, 0.5 - 0.5 * std::cos(std::numbers::pi * (s.end - t) / release));
  return e;
}

AudioBuffer Hum(std::size_t n, int sr, std::mt19937_64& rng) {
  const double f0 = Uniform(rng, 48.0, 56.0);
  const int kmax = static_cast<int>(4000.0 / f0);
  std::vector<double> base(kmax), rate(kmax), phase(kmax);
  for (int k = 0; k < kmax; ++k) {
    base[k] = std::pow(k + 1.0, -0.8) * (1.0 + Uniform(rng, -0.15, 0.15));
    rate[k] = Uniform(rng, 0.05, 0.2);
    phase[k] = Uniform(rng, 0.0, kTwoPi);
  }
  HarmonicBank bank;
  bank.block = sr / 100;
  bank.phase_inc.assign(n, kTwoPi * f0 / sr);
  const std::size_t blocks = (n + bank.block - 1) / bank.block;
  bank.amps.assign(blocks, std::vector<double>(kmax));
  for (std::size_t b = 0; b < blocks; ++b) {
    const double t = static_cast<double>(b * bank.block) / sr;
    for (int k = 0; k < kmax; ++k) bank.amps[b][k] = base[k] * (1.0 + 0.1 * std::sin(kTwoPi * rate[k] * t + phase[k]));
  }
  std::vector<double> x(n, 0.0);
  RenderHarmonics(bank, x);
  auto floor = WhiteNoise(n, rng);
  ShapeInPlace(floor, sr, PinkMag);
  AddScaled(x, floor, Rms(x) / Rms(floor) * std::pow(10.0, -30.0 / 20.0));
  return {std::move(x), sr};
}

AudioBuffer Pink(std::size_t n, int sr, std::mt19937_64& rng) {
  const double alpha = Uniform(rng, 0.95, 1.05);
  auto x = WhiteNoise(n, rng);
  ShapeInPlace(x, sr, [alpha](double f) {
    const double hp = f / std::sqrt(f * f + 30.0 * 30.0);
    return hp * std::pow(std::max(f, 20.0) / 1000.0, -alpha / 2.0);
  });
  return {std::move(x), sr};
}

AudioBuffer Rumble(std::size_t n, int sr, std::mt19937_64& rng) {
  const double fc = Uniform(rng, 150.0, 170.0);
  const double am_rate = Uniform(rng, 0.2, 0.4), am_phase = Uniform(rng, 0.0, kTwoPi);
  auto x = WhiteNoise(n, rng);
  ShapeInPlace(x, sr, [fc](double f) {
    const double hp = f / std::sqrt(f * f + 20.0 * 20.0);
    return hp / std::sqrt(1.0 + std::pow(f / fc, 4.0));
  });
  for (std::size_t i = 0; i < n; ++i) {
    x[i] *= 1.0 + 0.2 * std::sin(kTwoPi * am_rate * static_cast<double>(i) / sr + am_phase);
  }
  auto floor = WhiteNoise(n, rng);
  AddScaled(x, floor, Rms(x) / Rms(floor) * std::pow(10.0, -40.0 / 20.0));
  return {std::move(x), sr};
}

AudioBuffer Crackle(std::size_t n, int sr, std::mt19937_64& rng) {
  const double rate = Uniform(rng, 40.0, 60.0);
  const double am_rate = Uniform(rng, 0.2, 0.4), am_phase = Uniform(rng, 0.0, kTwoPi);
  const double fh = Uniform(rng, 1600.0, 1900.0);
  std::vector<double> x(n, 0.0);
  std::exponential_distribution<double> gap(1.0);
  std::lognormal_distribution<double> amp(0.0, 0.5);
  std::bernoulli_distribution sign(0.5);
  double t = 0.0;
  while (true) {
    // Thinning against the peak rate gives the modulated Poisson process.
    t += gap(rng) / (1.6 * rate);
    const auto i = static_cast<std::size_t>(t * sr);
    if (i >= n) break;
    const double accept = (1.0 + 0.6 * std::sin(kTwoPi * am_rate * t + am_phase)) / 1.6;
    const double u = Uniform(rng, 0.0, 1.0);
    const double a = amp(rng) * (sign(rng) ? 1.0 : -1.0);
    if (u < accept) x[i] += a;
  }
  ShapeInPlace(x, sr, [fh](double f) {
    const double r = (f / fh) * (f / fh);
    return r / (1.0 + r) / (1.0 + std::pow(f / 8000.0, 4.0));
  });
  auto floor = WhiteNoise(n, rng);
  AddScaled(x, floor, Rms(x) / Rms(floor) * std::pow(10.0, -25.0 / 20.0));
  return {std::move(x), sr};
}

AudioBuffer Band(std::size_t n, int sr, std::mt19937_64& rng) {
  const double fc = Uniform(rng, 1925.0, 2025.0);
  const double width = 0.35;
  auto x = WhiteNoise(n, rng);
  ShapeInPlace(x, sr, [fc, width](double f) {
    if (f <= 0.0) return 0.0;
    const double o = std::log2(f / fc) / width;
    return std::exp(-0.5 * o * o);
  });
  auto floor = WhiteNoise(n, rng);
  ShapeInPlace(floor, sr, PinkMag);
  AddScaled(x, floor, Rms(x) / Rms(floor) * std::pow(10.0, -20.0 / 20.0));
  return {std::move(x), sr};
}

std::string Padded(int v, int width) {
  std::string s = std::to_string(v);
  return std::string(std::max<int>(0, width - static_cast<int>(s.size())), '0') + s;
}

}  // namespace

const std::vector<std::string>& NoiseFamilies() {
  static const std::vector<std::string> kFamilies{"hum", "pink", "rumble", "crackle", "band"};
  return kFamilies;
}

void CorpusConfig::Validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) Fail(ErrorKind::kInvalidConfig, std::string("corpus: ") + what);
  };
  need(sample_rate >= 8000, "sample_rate must be >= 8000");
  need(n_train_speech > 0 && n_eval_speech > 0, "speech counts must be > 0");
  need(speech_duration_s > 0.5, "speech_duration_s must be > 0.5");
  need(n_noise_profiles > 0 && n_noise_profiles <= static_cast<int>(NoiseFamilies().size()),
       "n_noise_profiles must be in [1, 5]");
  need(train_files_per_profile > 0 && eval_files_per_profile > 0, "files per profile must be > 0");
  need(noise_duration_s > speech_duration_s + 2.0, "noise_duration_s too short");
  need(n_train_records > 0 && n_eval_records > 0, "record counts must be > 0");
  need(train_snr_min_db <= train_snr_max_db && eval_snr_min_db <= eval_snr_max_db, "empty SNR range");
}

AudioBuffer SynthesizeSpeech(double duration_s, int sample_rate, std::uint64_t seed) {
  auto rng = MakeRng({seed, 0x5be3c4});
  const std::size_t n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  const double sr = sample_rate;
  const double f0_base = Uniform(rng, 90.0, 220.0);
  const double level_db = Uniform(rng, -30.0, -20.0);
  const double v1 = Uniform(rng, 0.3, 0.8), v2 = Uniform(rng, 1.5, 3.0);
  const double p1 = Uniform(rng, 0.0, kTwoPi), p2 = Uniform(rng, 0.0, kTwoPi);

  std::vector<Syllable> syl;
  std::uniform_int_distribution<int> vowel(0, static_cast<int>(kVowels.size()) - 1);
  double t = Uniform(rng, 0.05, 0.2);
  while (t < duration_s - 0.15) {
    Syllable s;
    s.begin = t;
    s.end = std::min(t + Uniform(rng, 0.12, 0.32), duration_s - 0.02);
    s.fricative = Uniform(rng, 0.0, 1.0) < 0.2;
    s.f_start = kVowels[vowel(rng)];
    s.f_end = kVowels[vowel(rng)];
    syl.push_back(s);
    t = s.end + Uniform(rng, 0.03, 0.12);
    if (Uniform(rng, 0.0, 1.0) < 0.15) t += Uniform(rng, 0.2, 0.4);
  }

  auto f0_at = [&](double tt) {
    return f0_base * (1.0 + 0.08 * std::sin(kTwoPi * v1 * tt + p1) + 0.04 * std::sin(kTwoPi * v2 * tt + p2)) *
           (1.0 - 0.12 * tt / duration_s);
  };

  HarmonicBank bank;
  bank.block = std::max(1, sample_rate / 200);
  bank.phase_inc.resize(n);
  for (std::size_t i = 0; i < n; ++i) bank.phase_inc[i] = kTwoPi * f0_at(i / sr) / sr;
  const std::size_t blocks = (n + bank.block - 1) / bank.block;
  bank.amps.resize(blocks);
  std::size_t cur = 0;
  const double nyq_limit = std::min(7500.0, 0.45 * sr);
  for (std::size_t b = 0; b < blocks; ++b) {
    const double tb = static_cast<double>(b * bank.block) / sr;
    while (cur < syl.size() && syl[cur].end <= tb) ++cur;
    const double f0 = f0_at(tb);
    const int kmax = static_cast<int>(nyq_limit / f0);
    auto& amps = bank.amps[b];
    amps.assign(kmax, 0.0);
    if (cur >= syl.size() || syl[cur].fricative) continue;
    const Syllable& s = syl[cur];
    const double env = SyllableEnvelope(s, tb);
    if (env <= 0.0) continue;
    const double u = std::clamp((tb - s.begin) / (s.end - s.begin), 0.0, 1.0);
    for (int k = 0; k < kmax; ++k) {
      const double f = (k + 1) * f0;
      double g = 0.0;
      for (int j = 0; j < 3; ++j) {
        const double fj = s.f_start[j] + (s.f_end[j] - s.f_start[j]) * u;
        const double d = (f - fj) / kFormantBw[j];
        g += kFormantGain[j] / (1.0 + d * d);
      }
      amps[k] = env * g / std::sqrt(k + 1.0);
    }
  }
  std::vector<double> x(n, 0.0);
  RenderHarmonics(bank, x);

  const double voiced_rms = std::max(Rms(x), 1e-9);
  auto hiss = WhiteNoise(n, rng);
  HighPassInPlace(hiss, std::min(3500.0, 0.3 * sr), sample_rate);
  HighPassInPlace(hiss, std::min(3500.0, 0.3 * sr), sample_rate);
  const double hiss_gain = 0.5 * voiced_rms / std::max(Rms(hiss), 1e-12);
  for (const Syllable& s : syl) {
    if (!s.fricative) continue;
    const auto b = static_cast<std::size_t>(s.begin * sr);
    const auto e = std::min(n, static_cast<std::size_t>(s.end * sr));
    for (std::size_t i = b; i < e; ++i) x[i] += hiss_gain * SyllableEnvelope(s, i / sr) * hiss[i];
  }
  NormalizeLevel(x, level_db);
  return {std::move(x), sample_rate};
}

AudioBuffer SynthesizeNoise(const std::string& family, double duration_s, int sample_rate, std::uint64_t seed) {
  auto rng = MakeRng({seed, 0x9015e});
  const std::size_t n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  if (n < 16) Fail(ErrorKind::kInvalidConfig, "noise duration too short");
  AudioBuffer out;
  if (family == "hum") {
    out = Hum(n, sample_rate, rng);
  } else if (family == "pink") {
    out = Pink(n, sample_rate, rng);
  } else if (family == "rumble") {
    out = Rumble(n, sample_rate, rng);
  } else if (family == "crackle") {
    out = Crackle(n, sample_rate, rng);
  } else if (family == "band") {
    out = Band(n, sample_rate, rng);
  } else {
    Fail(ErrorKind::kInvalidConfig, "unknown noise family '" + family + "'");
  }
  NormalizeLevel(out.samples, -26.0 + Uniform(rng, -3.0, 3.0));
  return out;
}

Manifest GenerateSyntheticCorpus(const std::string& out_dir, const CorpusConfig& cfg) {
  cfg.Validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "speech", ec);
  fs::create_directories(fs::path(out_dir) / "noise", ec);
  if (ec) Fail(ErrorKind::kIo, "cannot create corpus directory " + out_dir + ": " + ec.message());

  std::vector<std::string> train_speech, eval_speech;
  for (int i = 0; i < cfg.n_train_speech + cfg.n_eval_speech; ++i) {
    const bool train = i < cfg.n_train_speech;
    const int j = train ? i : i - cfg.n_train_speech;
    const std::string rel = std::string("speech/") + (train ? "train_" : "eval_") + Padded(j, 4) + ".wav";
    const auto audio = SynthesizeSpeech(cfg.speech_duration_s, cfg.sample_rate,
                                        cfg.seed * 1000003ULL + static_cast<std::uint64_t>(i));
    WriteWav((fs::path(out_dir) / rel).string(), audio);
    (train ? train_speech : eval_speech).push_back(rel);
  }

  struct NoiseFile {
    std::string rel, family;
  };
  std::vector<NoiseFile> train_noise, eval_noise;
  for (int p = 0; p < cfg.n_noise_profiles; ++p) {
    const std::string& fam = NoiseFamilies()[p];
    const int files = cfg.train_files_per_profile + cfg.eval_files_per_profile;
    for (int j = 0; j < files; ++j) {
      const bool train = j < cfg.train_files_per_profile;
      const int idx = train ? j : j - cfg.train_files_per_profile;
      const std::string rel = "noise/" + fam + (train ? "_train_" : "_eval_") + std::to_string(idx) + ".wav";
      const auto audio = SynthesizeNoise(fam, cfg.noise_duration_s, cfg.sample_rate,
                                         MakeRng({cfg.seed, 0x2015e, static_cast<std::uint64_t>(p),
                                                  static_cast<std::uint64_t>(j)})());
      WriteWav((fs::path(out_dir) / rel).string(), audio);
      (train ? train_noise : eval_noise).push_back({rel, fam});
    }
  }

  Manifest m;
  m.base_dir = out_dir;
  auto rng = MakeRng({cfg.seed, 0x3a11f});
  for (int i = 0; i < cfg.n_train_records; ++i) {
    ManifestRecord r;
    r.id = "train_" + Padded(i, 5);
    r.clean_path = train_speech[i % train_speech.size()];
    const auto& nf = train_noise[std::uniform_int_distribution<std::size_t>(0, train_noise.size() - 1)(rng)];
    r.noise_path = nf.rel;
    r.category = nf.family;
    r.snr_db = Uniform(rng, cfg.train_snr_min_db, cfg.train_snr_max_db);
    r.split = "train";
    m.records.push_back(std::move(r));
  }
  const double latest_start = cfg.noise_duration_s - cfg.speech_duration_s - 1.0;
  const double earliest_start = std::min(cfg.eval_mix_start_min_s, latest_start);
  for (int i = 0; i < cfg.n_eval_records; ++i) {
    ManifestRecord r;
    r.id = "eval_" + Padded(i, 5);
    r.clean_path = eval_speech[i % eval_speech.size()];
    const auto& nf = eval_noise[i % eval_noise.size()];
    r.noise_path = nf.rel;
    r.category = nf.family;
    r.snr_db = Uniform(rng, cfg.eval_snr_min_db, cfg.eval_snr_max_db);
    r.split = "eval";
    r.mix_start_s = std::round(Uniform(rng, earliest_start, latest_start) * 1000.0) / 1000.0;
    m.records.push_back(std::move(r));
  }
  WriteManifest((fs::path(out_dir) / "manifest.jsonl").string(), m);
  return m;
}

std::vector<double> OctaveBandEnvelopeDb(const AudioBuffer& audio) {
  if (audio.size() < 16) Fail(ErrorKind::kInvalidShape, "octave envelope needs at least 16 samples");
  const RealFft fft(static_cast<int>(audio.size()));
  std::vector<std::complex<double>> spec(fft.num_bins());
  fft.Forward(audio.samples, spec);
  const double df = static_cast<double>(audio.sample_rate) / static_cast<double>(audio.size());
  std::vector<double> bands(8, 0.0);
  for (std::size_t k = 1; k < spec.size(); ++k) {
    const double f = k * df;
    for (int b = 0; b < 8; ++b) {
      const double c = 62.5 * std::pow(2.0, b);
      if (f >= c / std::numbers::sqrt2 && f < c * std::numbers::sqrt2) bands[b] += std::norm(spec[k]);
    }
  }
  double total = 0.0;
  for (double v : bands) total += v;
  for (double& v : bands) v = 10.0 * std::log10(std::max(v, 1e-300) / total);
  return bands;
}

}  // namespace dfinger
