#pragma once

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <random>
#include <string>

#include <nlohmann/json.hpp>

#include "dfinger/dsp/audio.hpp"

namespace dfinger {

// Generator seeded from all parts (each split into two 32-bit words).
std::mt19937_64 MakeRng(std::initializer_list<std::uint64_t> parts);

enum class StressMode { kNone, kCleanAsFingerprint, kNoiseAsFingerprint };

std::string ToString(StressMode m);
StressMode ParseStressMode(const std::string& s);

struct MixSpec {
  double snr_db = 0.0;
  double fingerprint_len_s = 1.0;
  // Gap between the fingerprint's end and the start of the mixed segment.
  double fingerprint_offset_s = 0.0;
  StressMode stress = StressMode::kNone;
  std::uint64_t seed = 0;

  void Validate() const;  // kInvalidConfig on len <= 0 or offset < 0
};

struct FingerprintWindow {
  std::size_t fingerprint_begin = 0;
  std::size_t fingerprint_len = 0;
  std::size_t mix_begin = 0;
};

// Sample indices used by SplitFingerprint for a recording of `total` samples.
FingerprintWindow ComputeFingerprintWindow(std::size_t total, int sample_rate, const MixSpec& spec,
                                           std::optional<double> mix_start_s = std::nullopt);

struct FingerprintSplit {
  AudioBuffer fingerprint;
  AudioBuffer mix_noise;  // from mix_begin to the end of the recording
  std::size_t fingerprint_begin = 0;
  std::size_t mix_begin = 0;
};

// Fingerprint = [mix_start - offset - len, mix_start - offset) of the same
// recording; mix_noise = [mix_start, end). mix_start defaults to
// len + offset, so offset 0 gives the leading `len` seconds. Throws
// kSkipSample if the recording is not longer than len + offset + 0.1 s or
// the requested window does not fit.
FingerprintSplit SplitFingerprint(const AudioBuffer& noise, const MixSpec& spec,
                                  std::optional<double> mix_start_s = std::nullopt);

struct MixResult {
  AudioBuffer mixture;
  AudioBuffer clean;  // after any clip rescue
  double gain = 0.0;  // applied to the noise: mixture = clean + gain * noise
  double achieved_snr_db = 0.0;
  double rescale = 1.0;  // power-of-two factor applied by clip rescue
  bool clip_rescued = false;
};

// gain = rms(clean)/rms(noise) * 10^(-snr/20), rounded to a 24-bit mantissa
// so that gain * noise is exact for 16-bit PCM sources; mixture = clean +
// gain * noise. If |mixture| would exceed 1 the clean signal and gain are
// both scaled by the same power of two, which keeps every product and sum
// exact. Throws kSkipSample if either input is silent, kInvalidShape on a
// length mismatch.
MixResult MixAtSnr(const AudioBuffer& clean, const AudioBuffer& noise, double snr_db);

// 20 log10(rms(clean) / rms(mixture - clean)).
double MeasuredSnrDb(const AudioBuffer& clean, const AudioBuffer& mixture);

// A `count`-sample excerpt starting at a seeded random position; shorter
// recordings are looped after a seeded rotation. `seam` receives the output
// index of the first loop seam (or count when none).
AudioBuffer CropOrLoop(const AudioBuffer& noise, std::size_t count, std::mt19937_64& rng,
                       std::size_t* seam = nullptr);

struct SampleTriple {
  std::string id;
  std::string category;
  AudioBuffer clean;
  AudioBuffer noise;  // unscaled noise segment that was mixed in
  AudioBuffer fingerprint;
  AudioBuffer mixture;
  double gain = 0.0;
  double achieved_snr_db = 0.0;
  double rescale = 1.0;
  double mix_start_s = 0.0;
  std::optional<std::size_t> loop_seam;  // sample index of the loop seam in `noise`
  MixSpec spec;
};

// Sidecar metadata (gain, SNRs, offsets, stress mode, rescale).
nlohmann::json SidecarJson(const SampleTriple& s);

}  // namespace dfinger
