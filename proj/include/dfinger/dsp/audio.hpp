#pragma once

#include <cstddef>
#include <vector>

namespace dfinger {

inline constexpr int kDefaultSampleRate = 24000;

struct AudioBuffer {
  std::vector<double> samples;
  int sample_rate = kDefaultSampleRate;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

// Throws kNumeric on non-finite samples and kInvalidConfig on a bad rate.
void ValidateAudio(const AudioBuffer& audio);

double Rms(const std::vector<double>& x);

// Copy of samples [begin, begin + count); the range must lie inside the buffer.
AudioBuffer Slice(const AudioBuffer& audio, std::size_t begin,
                  std::size_t count);

}  // namespace dfinger
