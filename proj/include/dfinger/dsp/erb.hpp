#pragma once

#include <cstddef>
#include <vector>

#include "dfinger/dsp/stft.hpp"

namespace dfinger {

// Rectangular (hard-assignment) ERB banding of the num_bins() FFT bins.
struct ErbFilterbank {
  std::size_t num_bins = 0;
  std::size_t num_bands = 0;
  // band_start[b] .. band_start[b + 1] - 1 are the bins owned by band b;
  // band_start has num_bands + 1 entries, the last equal to num_bins.
  std::vector<std::size_t> band_start;
  std::vector<double> band_edges_hz;  // num_bands + 1 edges, ascending
  std::vector<std::size_t> band_of_bin;

  std::size_t band_width(std::size_t b) const {
    return band_start[b + 1] - band_start[b];
  }
  // Dense num_bins x num_bands weight matrix, row-major.
  std::vector<double> Matrix() const;
};

double HzToErb(double hz);
double ErbToHz(double erb);

// Splits [0, Nyquist] into `bands` equal steps on the ERB-rate scale; a band's
// upper bin edge is the count of bins whose centre lies at or below the step
// boundary, forced to keep every band at least one bin wide.
ErbFilterbank BuildErbMatrix(const AnalysisConfig& cfg, std::size_t bands);

}  // namespace dfinger
