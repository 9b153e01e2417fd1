#include "dfinger/dsp/stft.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "dfinger/error.hpp"

namespace dfinger {
namespace {

// 1 / sum_j w(m + j*hop)^2 for m in [0, hop).
std::vector<double> SynthesisNorm(const std::vector<double>& window, int hop) {
  std::vector<double> norm(static_cast<std::size_t>(hop), 0.0);
  for (std::size_t i = 0; i < window.size(); ++i) {
    norm[i % static_cast<std::size_t>(hop)] += window[i] * window[i];
  }
  for (double& v : norm) v = 1.0 / v;
  return norm;
}

}  // namespace

void AnalysisConfig::Validate() const {
  if (sample_rate <= 0) {
    Fail(ErrorKind::kInvalidConfig, "sample_rate must be positive");
  }
  if (fft_size < 4 || hop_size < 1 || fft_size % hop_size != 0 ||
      fft_size / hop_size < 2) {
    Fail(ErrorKind::kInvalidConfig,
         "hop_size must divide fft_size into >= 2 overlaps (fft " +
             std::to_string(fft_size) + ", hop " + std::to_string(hop_size) + ")");
  }
  if (lookahead_frames < 0) {
    Fail(ErrorKind::kInvalidConfig, "lookahead_frames must be >= 0");
  }
  const std::vector<double> w = PeriodicHann(fft_size);
  std::vector<double> sums(static_cast<std::size_t>(hop_size), 0.0);
  for (std::size_t i = 0; i < w.size(); ++i) sums[i % sums.size()] += w[i];
  auto [lo, hi] = std::minmax_element(sums.begin(), sums.end());
  if (*hi - *lo > 1e-10) {
    Fail(ErrorKind::kInvalidConfig, "window is not constant-overlap-add at hop " +
                                        std::to_string(hop_size));
  }
}

bool operator==(const AnalysisConfig& a, const AnalysisConfig& b) {
  return a.fft_size == b.fft_size && a.hop_size == b.hop_size &&
         a.sample_rate == b.sample_rate &&
         a.lookahead_frames == b.lookahead_frames;
}

std::vector<double> PeriodicHann(int size) {
  std::vector<double> w(static_cast<std::size_t>(size));
  for (int n = 0; n < size; ++n) {
    w[static_cast<std::size_t>(n)] =
        0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / size);
  }
  return w;
}

std::size_t NumFrames(std::size_t num_samples, const AnalysisConfig& cfg) {
  if (num_samples == 0) return 0;
  const auto hop = static_cast<std::size_t>(cfg.hop_size);
  return (num_samples + hop - 1) / hop + static_cast<std::size_t>(cfg.overlap()) - 1;
}

ComplexSpectrogram StftAnalyze(const AudioBuffer& audio,
                               const AnalysisConfig& cfg) {
  cfg.Validate();
  if (audio.sample_rate != cfg.sample_rate) {
    Fail(ErrorKind::kInvalidConfig,
         "sample rate mismatch: audio " + std::to_string(audio.sample_rate) +
             " Hz, analysis " + std::to_string(cfg.sample_rate) + " Hz");
  }
  const std::size_t frames = NumFrames(audio.size(), cfg);
  const auto fft_size = static_cast<std::size_t>(cfg.fft_size);
  const auto hop = static_cast<std::size_t>(cfg.hop_size);
  ComplexSpectrogram spec(frames, static_cast<std::size_t>(cfg.num_bins()));
  if (frames == 0) return spec;

  RealFft fft(cfg.fft_size);
  const std::vector<double> window = PeriodicHann(cfg.fft_size);
  std::vector<double> buf(fft_size);
  const std::ptrdiff_t lead = static_cast<std::ptrdiff_t>(fft_size - hop);
  const auto n = static_cast<std::ptrdiff_t>(audio.size());
  for (std::size_t k = 0; k < frames; ++k) {
    const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(k * hop) - lead;
    for (std::size_t i = 0; i < fft_size; ++i) {
      const std::ptrdiff_t t = start + static_cast<std::ptrdiff_t>(i);
      const double x = (t >= 0 && t < n) ? audio.samples[static_cast<std::size_t>(t)] : 0.0;
      buf[i] = x * window[i];
    }
    fft.Forward(buf, spec.frame(k));
  }
  return spec;
}

AudioBuffer IstftSynthesize(const ComplexSpectrogram& spec,
                            const AnalysisConfig& cfg) {
  cfg.Validate();
  AudioBuffer out;
  out.sample_rate = cfg.sample_rate;
  if (spec.num_frames == 0) return out;
  if (spec.num_bins != static_cast<std::size_t>(cfg.num_bins())) {
    Fail(ErrorKind::kInvalidShape,
         "spectrogram has " + std::to_string(spec.num_bins) +
             " bins, analysis config expects " + std::to_string(cfg.num_bins()));
  }
  const auto overlap = static_cast<std::size_t>(cfg.overlap());
  if (spec.num_frames < overlap) {
    Fail(ErrorKind::kInvalidShape, "spectrogram shorter than one window overlap");
  }
  const auto fft_size = static_cast<std::size_t>(cfg.fft_size);
  const auto hop = static_cast<std::size_t>(cfg.hop_size);
  const std::vector<double> window = PeriodicHann(cfg.fft_size);
  const std::vector<double> norm = SynthesisNorm(window, cfg.hop_size);

  RealFft fft(cfg.fft_size);
  std::vector<double> ola((spec.num_frames - 1) * hop + fft_size, 0.0);
  std::vector<double> buf(fft_size);
  for (std::size_t k = 0; k < spec.num_frames; ++k) {
    fft.Inverse(spec.frame(k), buf);
    double* dst = ola.data() + k * hop;
    for (std::size_t i = 0; i < fft_size; ++i) dst[i] += buf[i] * window[i];
  }
  const std::size_t out_len = (spec.num_frames - overlap + 1) * hop;
  const std::size_t lead = fft_size - hop;
  out.samples.resize(out_len);
  for (std::size_t n = 0; n < out_len; ++n) {
    out.samples[n] = ola[n + lead] * norm[n % hop];
  }
  return out;
}

StreamingAnalyzer::StreamingAnalyzer(const AnalysisConfig& cfg)
    : cfg_(cfg), fft_(cfg.fft_size), window_(PeriodicHann(cfg.fft_size)) {
  cfg_.Validate();
  history_.assign(static_cast<std::size_t>(cfg.fft_size), 0.0);
  scratch_.resize(history_.size());
}

void StreamingAnalyzer::Push(std::span<const double> hop,
                             std::span<std::complex<double>> frame) {
  const auto h = static_cast<std::size_t>(cfg_.hop_size);
  if (hop.size() != h) {
    Fail(ErrorKind::kInvalidShape, "streaming analyzer expects hops of " +
                                       std::to_string(h) + " samples");
  }
  std::move(history_.begin() + static_cast<std::ptrdiff_t>(h), history_.end(),
            history_.begin());
  std::copy(hop.begin(), hop.end(), history_.end() - static_cast<std::ptrdiff_t>(h));
  for (std::size_t i = 0; i < history_.size(); ++i) {
    scratch_[i] = history_[i] * window_[i];
  }
  fft_.Forward(scratch_, frame);
}

void StreamingAnalyzer::Reset() {
  std::fill(history_.begin(), history_.end(), 0.0);
}

StreamingSynthesizer::StreamingSynthesizer(const AnalysisConfig& cfg)
    : cfg_(cfg),
      fft_(cfg.fft_size),
      window_(PeriodicHann(cfg.fft_size)),
      norm_(SynthesisNorm(window_, cfg.hop_size)) {
  cfg_.Validate();
  overlap_.assign(static_cast<std::size_t>(cfg.fft_size), 0.0);
  scratch_.resize(overlap_.size());
}

void StreamingSynthesizer::Push(std::span<const std::complex<double>> frame,
                                std::span<double> hop) {
  const auto h = static_cast<std::size_t>(cfg_.hop_size);
  if (hop.size() != h) {
    Fail(ErrorKind::kInvalidShape, "streaming synthesizer emits hops of " +
                                       std::to_string(h) + " samples");
  }
  fft_.Inverse(frame, scratch_);
  for (std::size_t i = 0; i < overlap_.size(); ++i) {
    overlap_[i] += scratch_[i] * window_[i];
  }
  for (std::size_t i = 0; i < h; ++i) hop[i] = overlap_[i] * norm_[i];
  std::move(overlap_.begin() + static_cast<std::ptrdiff_t>(h), overlap_.end(),
            overlap_.begin());
  std::fill(overlap_.end() - static_cast<std::ptrdiff_t>(h), overlap_.end(), 0.0);
}

void StreamingSynthesizer::Reset() {
  std::fill(overlap_.begin(), overlap_.end(), 0.0);
}

}  // namespace dfinger
