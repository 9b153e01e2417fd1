#include "dfinger/dsp/erb.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dfinger/error.hpp"

namespace dfinger {
namespace {

constexpr double kEarQ = 9.265;
constexpr double kMinBw = 24.7;

}  // namespace

double HzToErb(double hz) { return kEarQ * std::log1p(hz / (kMinBw * kEarQ)); }

double ErbToHz(double erb) { return kMinBw * kEarQ * std::expm1(erb / kEarQ); }

std::vector<double> ErbFilterbank::Matrix() const {
  std::vector<double> m(num_bins * num_bands, 0.0);
  for (std::size_t f = 0; f < num_bins; ++f) m[f * num_bands + band_of_bin[f]] = 1.0;
  return m;
}

ErbFilterbank BuildErbMatrix(const AnalysisConfig& cfg, std::size_t bands) {
  const auto bins = static_cast<std::size_t>(cfg.num_bins());
  if (bands < 2 || bands > bins) {
    Fail(ErrorKind::kInvalidConfig,
         "ERB band count must lie in [2, " + std::to_string(bins) + "], got " +
             std::to_string(bands));
  }
  const double nyquist = cfg.sample_rate / 2.0;
  const double bin_hz = cfg.bin_hz();
  const double erb_max = HzToErb(nyquist);

  ErbFilterbank fb;
  fb.num_bins = bins;
  fb.num_bands = bands;
  fb.band_start.assign(bands + 1, 0);
  for (std::size_t b = 0; b + 1 < bands; ++b) {
    const double upper_hz = ErbToHz(erb_max * static_cast<double>(b + 1) / bands);
    auto edge = static_cast<std::size_t>(std::floor(upper_hz / bin_hz + 1e-9)) + 1;
    const std::size_t lo = fb.band_start[b] + 1;
    const std::size_t hi = bins - (bands - 1 - b);
    fb.band_start[b + 1] = std::clamp(edge, lo, hi);
  }
  fb.band_start[bands] = bins;

  fb.band_of_bin.resize(bins);
  for (std::size_t b = 0; b < bands; ++b) {
    for (std::size_t f = fb.band_start[b]; f < fb.band_start[b + 1]; ++f) {
      fb.band_of_bin[f] = b;
    }
  }
  fb.band_edges_hz.resize(bands + 1);
  // Edges sit half a bin below each band's first bin centre.
  for (std::size_t b = 0; b < bands; ++b) {
    const double lower = (static_cast<double>(fb.band_start[b]) - 0.5) * bin_hz;
    fb.band_edges_hz[b] = std::clamp(lower, 0.0, nyquist);
  }
  fb.band_edges_hz[bands] = nyquist;
  return fb;
}

}  // namespace dfinger
