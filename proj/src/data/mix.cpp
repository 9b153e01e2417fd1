#include "dfinger/data/mix.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "dfinger/error.hpp"

namespace dfinger {

std::mt19937_64 MakeRng(std::initializer_list<std::uint64_t> parts) {
  std::vector<std::uint32_t> words;
  for (std::uint64_t p : parts) {
    words.push_back(static_cast<std::uint32_t>(p));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

std::string ToString(StressMode m) {
  switch (m) {
    case StressMode::kNone: return "none";
    case StressMode::kCleanAsFingerprint: return "clean-as-fingerprint";
    case StressMode::kNoiseAsFingerprint: return "noise-as-fingerprint";
  }
  return "?";
}

StressMode ParseStressMode(const std::string& s) {
  if (s == "none") return StressMode::kNone;
  if (s == "clean-as-fingerprint") return StressMode::kCleanAsFingerprint;
  if (s == "noise-as-fingerprint") return StressMode::kNoiseAsFingerprint;
  Fail(ErrorKind::kInvalidConfig, "unknown stress mode '" + s + "'");
}

void MixSpec::Validate() const {
  if (!(fingerprint_len_s > 0.0)) Fail(ErrorKind::kInvalidConfig, "fingerprint_len_s must be > 0");
  if (!(fingerprint_offset_s >= 0.0)) Fail(ErrorKind::kInvalidConfig, "fingerprint_offset_s must be >= 0");
}

FingerprintWindow ComputeFingerprintWindow(std::size_t total, int sample_rate, const MixSpec& spec,
                                           std::optional<double> mix_start_s) {
  spec.Validate();
  const double sr = sample_rate;
  const auto len = static_cast<std::size_t>(std::llround(spec.fingerprint_len_s * sr));
  const auto offset = static_cast<std::size_t>(std::llround(spec.fingerprint_offset_s * sr));
  const auto margin = static_cast<std::size_t>(std::llround(0.1 * sr));
  if (total <= len + offset + margin) {
    Fail(ErrorKind::kSkipSample, "noise of " + std::to_string(total / sr) + " s is too short for a " +
                                     std::to_string(spec.fingerprint_len_s) + " s fingerprint at offset " +
                                     std::to_string(spec.fingerprint_offset_s) + " s");
  }
  const std::size_t mix_begin =
      mix_start_s ? static_cast<std::size_t>(std::llround(*mix_start_s * sr)) : len + offset;
  if (mix_begin < len + offset || mix_begin >= total) {
    Fail(ErrorKind::kSkipSample, "mix start " + std::to_string(mix_begin) + " leaves no room for the fingerprint");
  }
  return {mix_begin - offset - len, len, mix_begin};
}

FingerprintSplit SplitFingerprint(const AudioBuffer& noise, const MixSpec& spec,
                                  std::optional<double> mix_start_s) {
  const FingerprintWindow w = ComputeFingerprintWindow(noise.size(), noise.sample_rate, spec, mix_start_s);
  FingerprintSplit out;
  out.fingerprint_begin = w.fingerprint_begin;
  out.mix_begin = w.mix_begin;
  out.fingerprint = Slice(noise, w.fingerprint_begin, w.fingerprint_len);
  out.mix_noise = Slice(noise, w.mix_begin, noise.size() - w.mix_begin);
  return out;
}

double MeasuredSnrDb(const AudioBuffer& clean, const AudioBuffer& mixture) {
  std::vector<double> residual(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) residual[i] = mixture.samples[i] - clean.samples[i];
  return 20.0 * std::log10(Rms(clean.samples) / Rms(residual));
}

MixResult MixAtSnr(const AudioBuffer& clean, const AudioBuffer& noise, double snr_db) {
  if (clean.size() != noise.size()) {
    Fail(ErrorKind::kInvalidShape, "mix: clean has " + std::to_string(clean.size()) + " samples, noise " +
                                       std::to_string(noise.size()));
  }
  if (clean.sample_rate != noise.sample_rate) Fail(ErrorKind::kInvalidConfig, "mix: sample rates differ");
  const double rc = Rms(clean.samples), rn = Rms(noise.samples);
  if (rc <= 0.0) Fail(ErrorKind::kSkipSample, "mix: clean signal is silent");
  if (rn <= 0.0) Fail(ErrorKind::kSkipSample, "mix: noise signal is silent");
  const double exact_gain = rc / rn * std::pow(10.0, -snr_db / 20.0);
  int exp = 0;
  const double mant = std::frexp(exact_gain, &exp);
  double gain = std::ldexp(std::round(std::ldexp(mant, 24)), exp - 24);

  MixResult r;
  r.clean = clean;
  r.mixture = AudioBuffer{std::vector<double>(clean.size()), clean.sample_rate};
  double peak = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    r.mixture.samples[i] = clean.samples[i] + gain * noise.samples[i];
    peak = std::max(peak, std::abs(r.mixture.samples[i]));
  }
  if (peak > 1.0) {
    int shift = 0;
    while (std::ldexp(peak, -shift) > 1.0) ++shift;
    r.rescale = std::ldexp(1.0, -shift);
    r.clip_rescued = true;
    gain *= r.rescale;
    for (std::size_t i = 0; i < clean.size(); ++i) {
      r.clean.samples[i] *= r.rescale;
      r.mixture.samples[i] = r.clean.samples[i] + gain * noise.samples[i];
    }
  }
  r.gain = gain;
  r.achieved_snr_db = MeasuredSnrDb(r.clean, r.mixture);
  return r;
}

AudioBuffer CropOrLoop(const AudioBuffer& noise, std::size_t count, std::mt19937_64& rng, std::size_t* seam) {
  if (noise.empty()) Fail(ErrorKind::kSkipSample, "cannot crop an empty noise recording");
  AudioBuffer out{std::vector<double>(count), noise.sample_rate};
  const std::size_t n = noise.size();
  if (n >= count) {
    const std::size_t start = std::uniform_int_distribution<std::size_t>(0, n - count)(rng);
    std::copy_n(noise.samples.begin() + static_cast<std::ptrdiff_t>(start), count, out.samples.begin());
    if (seam) *seam = count;
    return out;
  }
  const std::size_t rot = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  for (std::size_t i = 0; i < count; ++i) out.samples[i] = noise.samples[(rot + i) % n];
  if (seam) *seam = n - rot;
  return out;
}

nlohmann::json SidecarJson(const SampleTriple& s) {
  return {{"id", s.id},
          {"category", s.category},
          {"gain", s.gain},
          {"target_snr_db", s.spec.snr_db},
          {"achieved_snr_db", s.achieved_snr_db},
          {"clip_rescale", s.rescale},
          {"fingerprint_len_s", s.spec.fingerprint_len_s},
          {"fingerprint_offset_s", s.spec.fingerprint_offset_s},
          {"mix_start_s", s.mix_start_s},
          {"stress", ToString(s.spec.stress)},
          {"seed", s.spec.seed},
          {"loop_seam", s.loop_seam ? nlohmann::json(*s.loop_seam) : nlohmann::json(nullptr)}};
}

}  // namespace dfinger
