#pragma once

#include <string>

#include "dfinger/dsp/audio.hpp"

namespace dfinger {

enum class WavFormat { kPcm16, kFloat32 };

// Mono only. Multichannel files are rejected with kIo.
AudioBuffer ReadWav(const std::string& path);

// Samples outside [-1, 1] are clipped for kPcm16.
void WriteWav(const std::string& path, const AudioBuffer& audio,
              WavFormat format = WavFormat::kPcm16);

}  // namespace dfinger
