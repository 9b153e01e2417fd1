#include "dfinger/dsp/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <utility>
#include <vector>

#include "dfinger/error.hpp"

namespace dfinger {
namespace {

struct PlanPair {
  fftw_plan forward;
  fftw_plan inverse;
};

std::mutex& PlanMutex() {
  static std::mutex m;
  return m;
}

// Plans live for the process lifetime.
PlanPair GetPlans(int n) {
  static std::map<int, PlanPair> cache;
  std::lock_guard<std::mutex> lock(PlanMutex());
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  std::vector<double> real(static_cast<std::size_t>(n));
  std::vector<fftw_complex> cplx(static_cast<std::size_t>(n / 2 + 1));
  const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  PlanPair plans{
      fftw_plan_dft_r2c_1d(n, real.data(), cplx.data(), flags),
      fftw_plan_dft_c2r_1d(n, cplx.data(), real.data(),
                           flags | FFTW_PRESERVE_INPUT)};
  if (plans.forward == nullptr || plans.inverse == nullptr) {
    Fail(ErrorKind::kInvalidConfig, "fftw could not plan size " + std::to_string(n));
  }
  cache.emplace(n, plans);
  return plans;
}

}  // namespace

RealFft::RealFft(int size) : size_(size) {
  if (size < 2) Fail(ErrorKind::kInvalidConfig, "fft size must be >= 2");
  PlanPair plans = GetPlans(size);
  forward_plan_ = plans.forward;
  inverse_plan_ = plans.inverse;
}

void RealFft::Forward(std::span<const double> in,
                      std::span<std::complex<double>> out) const {
  if (in.size() != static_cast<std::size_t>(size_) ||
      out.size() != static_cast<std::size_t>(num_bins())) {
    Fail(ErrorKind::kInvalidShape, "RealFft::Forward buffer size mismatch");
  }
  // FFTW_PRESERVE_INPUT is implied for r2c; the cast only satisfies the API.
  fftw_execute_dft_r2c(static_cast<fftw_plan>(forward_plan_),
                       const_cast<double*>(in.data()),
                       reinterpret_cast<fftw_complex*>(out.data()));
}

void RealFft::Inverse(std::span<const std::complex<double>> in,
                      std::span<double> out) const {
  if (in.size() != static_cast<std::size_t>(num_bins()) ||
      out.size() != static_cast<std::size_t>(size_)) {
    Fail(ErrorKind::kInvalidShape, "RealFft::Inverse buffer size mismatch");
  }
  fftw_execute_dft_c2r(
      static_cast<fftw_plan>(inverse_plan_),
      reinterpret_cast<fftw_complex*>(const_cast<std::complex<double>*>(in.data())),
      out.data());
  const double scale = 1.0 / size_;
  for (double& v : out) v *= scale;
}

}  // namespace dfinger
