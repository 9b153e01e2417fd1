#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "dfinger/dsp/audio.hpp"

namespace dfinger::testing {

inline AudioBuffer WhiteNoise(std::size_t n, std::uint64_t seed, double scale = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, scale);
  AudioBuffer a;
  a.samples.resize(n);
  for (double& v : a.samples) v = dist(rng);
  return a;
}

inline AudioBuffer Tone(std::size_t n, double hz, double amp = 0.5,
                        int sr = kDefaultSampleRate) {
  AudioBuffer a;
  a.sample_rate = sr;
  a.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    a.samples[i] = amp * std::cos(2.0 * std::numbers::pi * hz * static_cast<double>(i) / sr);
  }
  return a;
}

// 10*log10(|a-b|^2 / |a|^2) over the first n samples.
inline double RelativeErrorDb(const std::vector<double>& ref,
                              const std::vector<double>& est, std::size_t n) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    num += (ref[i] - est[i]) * (ref[i] - est[i]);
    den += ref[i] * ref[i];
  }
  if (num == 0.0) return -400.0;
  return 10.0 * std::log10(num / den);
}

// O(N^2) DFT, independent of the FFT backend.
inline std::vector<std::complex<double>> DirectDft(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n / 2 + 1);
  for (std::size_t k = 0; k < out.size(); ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double ang = -2.0 * std::numbers::pi * static_cast<double>(k * t % n) / n;
      acc += x[t] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[k] = acc;
  }
  return out;
}

}  // namespace dfinger::testing
