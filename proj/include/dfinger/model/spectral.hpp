#pragma once

#include <complex>
#include <cstddef>
#include <vector>

#include "dfinger/dsp/erb.hpp"
#include "dfinger/dsp/stft.hpp"
#include "dfinger/nn/tape.hpp"

namespace dfinger {

// Per-frame complex deep-filter taps, laid out [frame][df_bin][tap].
struct DfCoefficients {
  std::size_t num_frames = 0;
  std::size_t num_df_bins = 0;
  std::size_t order = 0;
  std::vector<std::complex<double>> taps;

  std::complex<double>& at(std::size_t k, std::size_t f, std::size_t tau) {
    return taps[(k * num_df_bins + f) * order + tau];
  }
  const std::complex<double>& at(std::size_t k, std::size_t f, std::size_t tau) const {
    return taps[(k * num_df_bins + f) * order + tau];
  }
};

// Multiplies every bin by the gain of its ERB band. gains: frames x bands.
ComplexSpectrogram ApplyGains(const ComplexSpectrogram& spec, const std::vector<double>& gains,
                              const ErbFilterbank& fb);

// out(k, f) = sum_tau c_tau(k, f) X(k - tau, f) for f < num_df_bins, with
// X = 0 before the first frame; higher bins pass through.
ComplexSpectrogram ApplyDeepFilter(const ComplexSpectrogram& spec, const DfCoefficients& coefs);

// Real tensor views of spectra: [B, T, F, 2] with (re, im) last.
nn::Tensor SpectraToTensor(const std::vector<const ComplexSpectrogram*>& specs);
ComplexSpectrogram TensorToSpectrum(const nn::Tensor& t, std::size_t batch_index);

// Differentiable counterparts. noisy: [B, T, F, 2];
// coefs: [B, T, Fdf * order * 2] in (bin, tap, re/im) order.
nn::Var DeepFilterOp(nn::Tape& tape, nn::Var noisy, nn::Var coefs, std::size_t num_df_bins,
                     std::size_t order);
// spec: [B, T, F, 2], gains: [B, T, bands].
nn::Var GainsOp(nn::Tape& tape, nn::Var spec, nn::Var gains, const ErbFilterbank& fb);

}  // namespace dfinger
