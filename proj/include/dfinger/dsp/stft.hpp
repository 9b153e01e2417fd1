#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "dfinger/dsp/audio.hpp"
#include "dfinger/dsp/fft.hpp"

namespace dfinger {

struct AnalysisConfig {
  int fft_size = 480;
  int hop_size = 240;
  int sample_rate = kDefaultSampleRate;
  int lookahead_frames = 0;

  int num_bins() const { return fft_size / 2 + 1; }
  int overlap() const { return fft_size / hop_size; }
  double bin_hz() const { return static_cast<double>(sample_rate) / fft_size; }

  // Throws kInvalidConfig unless hop divides fft into >= 2 overlaps and the
  // periodic Hann window is constant-overlap-add at this hop.
  void Validate() const;
};

bool operator==(const AnalysisConfig& a, const AnalysisConfig& b);

struct ComplexSpectrogram {
  std::size_t num_frames = 0;
  std::size_t num_bins = 0;
  std::vector<std::complex<double>> data;  // frame-major

  ComplexSpectrogram() = default;
  ComplexSpectrogram(std::size_t frames, std::size_t bins)
      : num_frames(frames), num_bins(bins), data(frames * bins) {}

  std::complex<double>& at(std::size_t k, std::size_t f) {
    return data[k * num_bins + f];
  }
  const std::complex<double>& at(std::size_t k, std::size_t f) const {
    return data[k * num_bins + f];
  }
  std::span<std::complex<double>> frame(std::size_t k) {
    return {data.data() + k * num_bins, num_bins};
  }
  std::span<const std::complex<double>> frame(std::size_t k) const {
    return {data.data() + k * num_bins, num_bins};
  }
};

std::vector<double> PeriodicHann(int size);

// Frame layout: the signal is preceded by fft_size - hop_size zeros, so frame
// k spans input samples [k*hop - (fft - hop), k*hop + hop). A signal of n
// samples yields ceil(n / hop) + fft/hop - 1 frames; every sample in
// [0, ceil(n / hop) * hop) is then covered by fft/hop windows.
std::size_t NumFrames(std::size_t num_samples, const AnalysisConfig& cfg);

ComplexSpectrogram StftAnalyze(const AudioBuffer& audio,
                               const AnalysisConfig& cfg);

// Weighted overlap-add with the analysis window reused for synthesis and
// normalisation by the summed squared window. Output has
// (num_frames - fft/hop + 1) * hop samples.
AudioBuffer IstftSynthesize(const ComplexSpectrogram& spec,
                            const AnalysisConfig& cfg);

// Hop-in, frame-out analysis with the same layout as StftAnalyze.
class StreamingAnalyzer {
 public:
  explicit StreamingAnalyzer(const AnalysisConfig& cfg);
  // Consumes exactly hop_size samples and writes one frame of num_bins values.
  void Push(std::span<const double> hop, std::span<std::complex<double>> frame);
  void Reset();

 private:
  AnalysisConfig cfg_;
  RealFft fft_;
  std::vector<double> window_;
  std::vector<double> history_;  // last fft_size samples
  std::vector<double> scratch_;
};

// Frame-in, hop-out synthesis. The hop returned for frame k is output hop
// k - (fft/hop - 1), i.e. the stream lags the batch output by fft - hop
// samples.
class StreamingSynthesizer {
 public:
  explicit StreamingSynthesizer(const AnalysisConfig& cfg);
  void Push(std::span<const std::complex<double>> frame, std::span<double> hop);
  void Reset();

 private:
  AnalysisConfig cfg_;
  RealFft fft_;
  std::vector<double> window_;
  std::vector<double> norm_;     // 1 / sum of squared windows, per hop position
  std::vector<double> overlap_;  // pending overlap-add tail, fft_size samples
  std::vector<double> scratch_;
};

}  // namespace dfinger
