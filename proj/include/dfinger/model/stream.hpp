#pragma once

#include <complex>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "dfinger/dsp/features.hpp"
#include "dfinger/dsp/stft.hpp"
#include "dfinger/model/model.hpp"

namespace dfinger {

struct FrameWeights;  // per-layer matrices, shared read-only across streams

// Frame-by-frame enhancer: one hop in, one hop out, constant work per hop.
// The output lags the input by fft_size - hop_size samples. Copying a
// StreamEnhancer copies its full state (buffers, recurrent state, cached
// fingerprint).
class StreamEnhancer {
 public:
  StreamEnhancer(const Model& model, FusionMode mode);

  // Additive mode: the [H] summary. Attention mode: use SetFingerprintEmbedding.
  // Takes effect from the next Process call; nullopt clears it, after which
  // the stream runs as Bypass.
  void SetFingerprintSummary(std::optional<std::vector<double>> summary);
  // Projected fingerprint embedding [Tf, H]. Additive mode stores its mean;
  // Attention mode stores the keys and values of every frame.
  void SetFingerprintEmbedding(const nn::Tensor& embedding);
  bool fingerprint_active() const;

  void Process(std::span<const double> in, std::span<double> out);
  // Runs a whole buffer through the stream (plus flush hops) and returns the
  // output realigned to the input, cropped to its length.
  AudioBuffer ProcessAll(const AudioBuffer& x);

  std::size_t hop_size() const;
  std::size_t latency_samples() const;
  void Reset();

 private:
  struct ConvState {
    std::vector<std::vector<double>> taps;  // last K inputs, oldest first
  };

  std::shared_ptr<const FrameWeights> w_;
  FusionMode mode_;
  AnalysisConfig analysis_;
  StreamingAnalyzer analyzer_;
  StreamingSynthesizer synth_;
  FeatureNormalizer normalizer_;
  std::vector<ConvState> conv_;  // erb1, erb2, df1, df2
  std::vector<double> h_;        // GRU state
  std::vector<std::vector<std::complex<double>>> ring_;  // last N spectra, newest first
  std::optional<std::vector<double>> summary_;
  std::optional<std::vector<double>> keys_, values_;  // attention cache, [Tf, H]
  std::size_t fp_frames_ = 0;
  bool warned_absent_ = false;
};

}  // namespace dfinger
