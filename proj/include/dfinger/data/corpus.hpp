#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dfinger/data/manifest.hpp"
#include "dfinger/dsp/audio.hpp"

namespace dfinger {

// Noise families of the synthetic corpus, in category order.
const std::vector<std::string>& NoiseFamilies();

struct CorpusConfig {
  int sample_rate = kDefaultSampleRate;
  int n_train_speech = 500;
  int n_eval_speech = 100;
  double speech_duration_s = 3.0;
  int n_noise_profiles = 5;  // at most NoiseFamilies().size()
  int train_files_per_profile = 4;
  int eval_files_per_profile = 2;
  double noise_duration_s = 180.0;
  int n_train_records = 2000;
  int n_eval_records = 200;
  double train_snr_min_db = -5.0;
  double train_snr_max_db = 20.0;
  double eval_snr_min_db = -5.0;
  double eval_snr_max_db = 5.0;
  // Eval mixtures start inside [min, noise_duration - speech_duration - 1 s]
  // so that fingerprints up to ~2 minutes earlier still fit.
  double eval_mix_start_min_s = 125.0;
  std::uint64_t seed = 0;

  void Validate() const;
};

// Speech surrogate: voiced harmonic syllables with a drifting pitch contour,
// vowel formants, syllable-rate amplitude envelope, pauses and occasional
// fricative bursts. Deterministic in `seed`.
AudioBuffer SynthesizeSpeech(double duration_s, int sample_rate, std::uint64_t seed);

// One recording of a noise family with small per-file parameter variation.
// Throws kInvalidConfig for an unknown family.
AudioBuffer SynthesizeNoise(const std::string& family, double duration_s, int sample_rate,
                            std::uint64_t seed);

// Writes speech/, noise/ and manifest.jsonl under out_dir and returns the
// manifest (base_dir = out_dir). Audio is 16-bit PCM.
Manifest GenerateSyntheticCorpus(const std::string& out_dir, const CorpusConfig& cfg);

// Long-term power per octave band (centres 62.5 Hz * 2^k, k = 0..7) in dB,
// relative to the total over those bands.
std::vector<double> OctaveBandEnvelopeDb(const AudioBuffer& audio);

}  // namespace dfinger
