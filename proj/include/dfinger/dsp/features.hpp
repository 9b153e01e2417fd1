#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "dfinger/dsp/erb.hpp"
#include "dfinger/dsp/stft.hpp"

namespace dfinger {

inline constexpr double kDefaultDfCutoffHz = 4000.0;
inline constexpr double kNormAlpha = 0.99;
inline constexpr double kFeatureEps = 1e-10;
// Log-energies are divided by this after mean subtraction.
inline constexpr double kErbFeatureScale = 40.0;

struct FeaturePair {
  std::size_t num_frames = 0;
  std::size_t num_bands = 0;
  std::size_t num_df_bins = 0;
  std::vector<double> erb_feat;                 // num_frames x num_bands
  std::vector<std::complex<double>> df_feat;    // num_frames x num_df_bins
};

struct FeatureResult {
  FeaturePair features;
  bool cutoff_clamped = false;  // requested cutoff exceeded Nyquist
};

// Number of bins whose centre frequency is at or below cutoff_hz (clamped to
// Nyquist).
std::size_t DfBinCount(const AnalysisConfig& cfg, double cutoff_hz);

// Unnormalised 10*log10(sum_f fb[f][b] |X(k,f)|^2 + eps) for one frame.
void ErbLogEnergies(std::span<const std::complex<double>> frame,
                    const ErbFilterbank& fb, std::span<double> out);

// Causal per-frame normaliser; the batch extractor runs the same object over
// every frame, so streaming and batch features are identical.
class FeatureNormalizer {
 public:
  FeatureNormalizer(const ErbFilterbank& fb, std::size_t num_df_bins);

  void Process(std::span<const std::complex<double>> frame,
               std::span<double> erb_out,
               std::span<std::complex<double>> df_out);
  void Reset();

  std::size_t num_bands() const { return fb_->num_bands; }
  std::size_t num_df_bins() const { return df_power_.size(); }

 private:
  const ErbFilterbank* fb_;
  std::vector<double> erb_mean_;
  std::vector<double> df_power_;
};

// Throws kInvalidShape if fb was built for a different bin count.
FeatureResult ExtractFeatures(const ComplexSpectrogram& spec,
                              const ErbFilterbank& fb,
                              const AnalysisConfig& cfg,
                              double df_cutoff_hz = kDefaultDfCutoffHz);

}  // namespace dfinger
