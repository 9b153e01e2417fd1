#include "dfinger/dsp/features.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <spdlog/spdlog.h>

#include "dfinger/error.hpp"

namespace dfinger {

std::size_t DfBinCount(const AnalysisConfig& cfg, double cutoff_hz) {
  const double nyquist = cfg.sample_rate / 2.0;
  const double cutoff = std::clamp(cutoff_hz, 0.0, nyquist);
  const auto count = static_cast<std::size_t>(std::floor(cutoff / cfg.bin_hz() + 1e-9)) + 1;
  return std::min(count, static_cast<std::size_t>(cfg.num_bins()));
}

void ErbLogEnergies(std::span<const std::complex<double>> frame,
                    const ErbFilterbank& fb, std::span<double> out) {
  for (std::size_t b = 0; b < fb.num_bands; ++b) {
    double acc = 0.0;
    for (std::size_t f = fb.band_start[b]; f < fb.band_start[b + 1]; ++f) {
      acc += std::norm(frame[f]);
    }
    out[b] = 10.0 * std::log10(acc + kFeatureEps);
  }
}

FeatureNormalizer::FeatureNormalizer(const ErbFilterbank& fb,
                                     std::size_t num_df_bins)
    : fb_(&fb), erb_mean_(fb.num_bands), df_power_(num_df_bins) {
  Reset();
}

void FeatureNormalizer::Reset() {
  // Mean state starts on a -60 .. -90 dB ramp across bands.
  const std::size_t bands = erb_mean_.size();
  for (std::size_t b = 0; b < bands; ++b) {
    erb_mean_[b] = -60.0 - 30.0 * static_cast<double>(b) / static_cast<double>(bands - 1);
  }
  std::fill(df_power_.begin(), df_power_.end(), 0.0);
}

void FeatureNormalizer::Process(std::span<const std::complex<double>> frame,
                                std::span<double> erb_out,
                                std::span<std::complex<double>> df_out) {
  ErbLogEnergies(frame, *fb_, erb_out);
  for (std::size_t b = 0; b < erb_mean_.size(); ++b) {
    erb_mean_[b] = kNormAlpha * erb_mean_[b] + (1.0 - kNormAlpha) * erb_out[b];
    erb_out[b] = (erb_out[b] - erb_mean_[b]) / kErbFeatureScale;
  }
  for (std::size_t f = 0; f < df_power_.size(); ++f) {
    const double mag2 = std::norm(frame[f]);
    df_power_[f] = kNormAlpha * df_power_[f] + (1.0 - kNormAlpha) * mag2;
    // The instantaneous magnitude floors the running RMS so |out| <= 1.
    const double denom = std::max(std::sqrt(df_power_[f]), std::sqrt(mag2)) + kFeatureEps;
    df_out[f] = frame[f] / denom;
  }
}

FeatureResult ExtractFeatures(const ComplexSpectrogram& spec,
                              const ErbFilterbank& fb,
                              const AnalysisConfig& cfg, double df_cutoff_hz) {
  if (fb.num_bins != spec.num_bins && spec.num_frames > 0) {
    Fail(ErrorKind::kInvalidShape,
         "filterbank built for " + std::to_string(fb.num_bins) +
             " bins, spectrogram has " + std::to_string(spec.num_bins));
  }
  if (fb.num_bins != static_cast<std::size_t>(cfg.num_bins())) {
    Fail(ErrorKind::kInvalidShape, "filterbank does not match analysis config");
  }
  FeatureResult result;
  const double nyquist = cfg.sample_rate / 2.0;
  if (df_cutoff_hz > nyquist) {
    result.cutoff_clamped = true;
    spdlog::warn("df cutoff {} Hz above Nyquist, clamped to {} Hz", df_cutoff_hz, nyquist);
  }
  FeaturePair& out = result.features;
  out.num_frames = spec.num_frames;
  out.num_bands = fb.num_bands;
  out.num_df_bins = DfBinCount(cfg, df_cutoff_hz);
  out.erb_feat.resize(out.num_frames * out.num_bands);
  out.df_feat.resize(out.num_frames * out.num_df_bins);

  FeatureNormalizer norm(fb, out.num_df_bins);
  for (std::size_t k = 0; k < spec.num_frames; ++k) {
    norm.Process(spec.frame(k),
                 {out.erb_feat.data() + k * out.num_bands, out.num_bands},
                 {out.df_feat.data() + k * out.num_df_bins, out.num_df_bins});
  }
  return result;
}

}  // namespace dfinger
