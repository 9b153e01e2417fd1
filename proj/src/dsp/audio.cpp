#include "dfinger/dsp/audio.hpp"

#include <cmath>
#include <string>

#include "dfinger/error.hpp"

namespace dfinger {

void ValidateAudio(const AudioBuffer& audio) {
  if (audio.sample_rate <= 0) {
    Fail(ErrorKind::kInvalidConfig,
         "sample rate must be positive, got " +
             std::to_string(audio.sample_rate));
  }
  for (std::size_t i = 0; i < audio.samples.size(); ++i) {
    if (!std::isfinite(audio.samples[i])) {
      Fail(ErrorKind::kNumeric,
           "non-finite audio sample at index " + std::to_string(i));
    }
  }
}

double Rms(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return std::sqrt(acc / static_cast<double>(x.size()));
}

AudioBuffer Slice(const AudioBuffer& audio, std::size_t begin,
                  std::size_t count) {
  if (begin + count > audio.samples.size()) {
    Fail(ErrorKind::kInvalidShape,
         "slice [" + std::to_string(begin) + ", " +
             std::to_string(begin + count) + ") exceeds buffer of " +
             std::to_string(audio.samples.size()) + " samples");
  }
  AudioBuffer out;
  out.sample_rate = audio.sample_rate;
  out.samples.assign(audio.samples.begin() + static_cast<std::ptrdiff_t>(begin),
                     audio.samples.begin() +
                         static_cast<std::ptrdiff_t>(begin + count));
  return out;
}

}  // namespace dfinger
