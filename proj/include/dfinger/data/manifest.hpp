#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "dfinger/dsp/audio.hpp"

namespace dfinger {

struct ManifestRecord {
  std::string id;
  std::string clean_path;  // relative to the manifest directory unless absolute
  std::string noise_path;
  double snr_db = 0.0;
  double fingerprint_offset_s = 0.0;
  std::string split;     // "train" or "eval"
  std::string category;  // noise profile label
  std::optional<double> mix_start_s;  // fixed mix position (eval records)
};

struct Manifest {
  std::vector<ManifestRecord> records;
  std::string base_dir;

  std::string Resolve(const std::string& path) const;
  std::vector<const ManifestRecord*> Split(const std::string& split) const;
  std::vector<std::string> Categories() const;  // sorted, unique
};

// JSON lines, one record per line. Throws kData on duplicate ids or
// malformed lines (with line numbers), kIo if the file cannot be opened.
Manifest ReadManifest(const std::string& path);
void WriteManifest(const std::string& path, const Manifest& m);
// Throws kData listing every record whose audio files do not exist.
void CheckManifestPaths(const Manifest& m);

// Read-through cache of decoded WAV files, stored as 32-bit floats (lossless
// for 16-bit PCM and float WAV sources). Safe for concurrent use.
class AudioCache {
 public:
  AudioBuffer Load(const std::string& path);
  // Samples [begin, begin + count); throws kInvalidShape past the end.
  AudioBuffer LoadRange(const std::string& path, std::size_t begin, std::size_t count);
  std::size_t Length(const std::string& path);
  int SampleRate(const std::string& path);
  void Clear();

 private:
  struct Entry {
    std::vector<float> samples;
    int sample_rate = 0;
  };
  std::shared_ptr<const Entry> Get(const std::string& path);

  std::mutex mu_;
  std::map<std::string, std::shared_ptr<const Entry>> entries_;
};

}  // namespace dfinger
