#pragma once

#include <complex>
#include <span>

namespace dfinger {

// Real-input DFT of a fixed length backed by FFTW. Plans are created once per
// size under a global lock; Forward/Inverse are safe to call concurrently.
class RealFft {
 public:
  explicit RealFft(int size);

  int size() const { return size_; }
  int num_bins() const { return size_ / 2 + 1; }

  // in: size() reals, out: num_bins() complex values.
  void Forward(std::span<const double> in,
               std::span<std::complex<double>> out) const;
  // in: num_bins() complex values, out: size() reals, scaled by 1/size().
  void Inverse(std::span<const std::complex<double>> in,
               std::span<double> out) const;

 private:
  int size_;
  void* forward_plan_;
  void* inverse_plan_;
};

}  // namespace dfinger
