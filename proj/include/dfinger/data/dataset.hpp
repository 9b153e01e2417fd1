#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dfinger/data/manifest.hpp"
#include "dfinger/data/mix.hpp"

namespace dfinger {

struct TrainingSetOptions {
  double snr_min_db = -5.0;
  double snr_max_db = 20.0;
  double fingerprint_len_s = 1.0;
  double fingerprint_offset_s = 0.0;
  StressMode stress = StressMode::kNone;
  std::uint64_t seed = 0;
  std::string split = "train";
};

// Training mixtures drawn from one manifest split. Each (index, epoch) pair
// gets its own SNR and noise position, seeded by (seed, epoch, index); the
// fingerprint comes from the same recording just before the mixed segment.
class TrainingSet {
 public:
  // Throws kData listing unresolvable paths, kInvalidConfig on an empty split.
  TrainingSet(const Manifest& manifest, AudioCache& cache, TrainingSetOptions opts);

  std::size_t size() const { return records_.size(); }
  const TrainingSetOptions& options() const { return opts_; }
  SampleTriple Get(std::size_t index, std::size_t epoch = 0) const;
  // Seeded permutation of [0, size()).
  std::vector<std::size_t> EpochOrder(std::size_t epoch) const;

 private:
  const Manifest& manifest_;
  AudioCache& cache_;
  TrainingSetOptions opts_;
  std::vector<const ManifestRecord*> records_;
};

struct EvalSetOptions {
  std::vector<double> snr_list;  // empty: use each record's snr_db
  double fingerprint_len_s = 1.0;
  std::vector<double> offsets_s{0.0};
  StressMode stress = StressMode::kNone;
  std::uint64_t seed = 0;
  std::string split = "eval";
};

struct EvalItem {
  std::size_t record = 0;  // index into the split
  double snr_db = 0.0;
  double offset_s = 0.0;
};

// Cartesian product (record x SNR x offset), materialised lazily. Items
// differing only in offset share the identical mixture: the mixed segment
// starts at the record's mix_start_s, or at len + max(offset) when unset.
class EvalSet {
 public:
  EvalSet(const Manifest& manifest, AudioCache& cache, EvalSetOptions opts);

  std::size_t size() const { return items_.size(); }
  const EvalItem& item(std::size_t i) const { return items_.at(i); }
  const ManifestRecord& record(std::size_t i) const { return *records_.at(items_.at(i).record); }
  const EvalSetOptions& options() const { return opts_; }
  SampleTriple Get(std::size_t i) const;

 private:
  const Manifest& manifest_;
  AudioCache& cache_;
  EvalSetOptions opts_;
  std::vector<const ManifestRecord*> records_;
  std::vector<EvalItem> items_;
};

std::vector<SampleTriple> BuildEvalSet(const Manifest& manifest, AudioCache& cache, const EvalSetOptions& opts);

// Writes <id>_mix.wav, _clean.wav, _noise.wav, _fp.wav (32-bit float, so
// the additive identity survives) and <id>.json under dir.
void WriteSampleTriple(const std::string& dir, const SampleTriple& s);

}  // namespace dfinger
