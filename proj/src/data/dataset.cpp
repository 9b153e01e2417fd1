#include "dfinger/data/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dfinger/dsp/wav.hpp"
#include "dfinger/error.hpp"

namespace dfinger {
namespace {

std::vector<const ManifestRecord*> SplitRecords(const Manifest& m, const std::string& split) {
  CheckManifestPaths(m);
  auto recs = m.Split(split);
  if (recs.empty()) Fail(ErrorKind::kInvalidConfig, "manifest has no '" + split + "' records");
  return recs;
}

// Mixes `clean` with noise starting at `mix_begin` of the recording; loops
// with a seeded rotation when the recording ends early.
SampleTriple Assemble(const ManifestRecord& rec, const Manifest& m, AudioCache& cache, const MixSpec& spec,
                      std::size_t mix_begin_hint, bool use_hint, std::mt19937_64& rng) {
  const std::string clean_path = m.Resolve(rec.clean_path);
  const std::string noise_path = m.Resolve(rec.noise_path);
  AudioBuffer clean = cache.Load(clean_path);
  const std::size_t total = cache.Length(noise_path);
  const int sr = cache.SampleRate(noise_path);
  if (sr != clean.sample_rate) {
    Fail(ErrorKind::kData, rec.id + ": sample rates differ (" + std::to_string(clean.sample_rate) + " vs " +
                               std::to_string(sr) + ")");
  }
  const std::size_t count = clean.size();
  const double srd = sr;

  std::optional<double> start;
  if (use_hint) {
    start = mix_begin_hint / srd;
  } else {
    // Uniform over positions that fit both the fingerprint and the segment.
    const FingerprintWindow lead = ComputeFingerprintWindow(total, sr, spec);
    if (total >= lead.mix_begin + count) {
      const std::size_t pos =
          std::uniform_int_distribution<std::size_t>(lead.mix_begin, total - count)(rng);
      start = pos / srd;
    }
  }
  const FingerprintWindow w = ComputeFingerprintWindow(total, sr, spec, start);

  AudioBuffer noise;
  std::optional<std::size_t> seam;
  if (total - w.mix_begin >= count) {
    noise = cache.LoadRange(noise_path, w.mix_begin, count);
  } else {
    const AudioBuffer tail = cache.LoadRange(noise_path, w.mix_begin, total - w.mix_begin);
    std::size_t at = count;
    noise = CropOrLoop(tail, count, rng, &at);
    seam = at;
  }
  MixResult mix = MixAtSnr(clean, noise, spec.snr_db);

  SampleTriple s;
  s.id = rec.id;
  s.category = rec.category;
  s.spec = spec;
  s.mix_start_s = w.mix_begin / srd;
  s.gain = mix.gain;
  s.achieved_snr_db = mix.achieved_snr_db;
  s.rescale = mix.rescale;
  s.loop_seam = seam;
  switch (spec.stress) {
    case StressMode::kNone: s.fingerprint = cache.LoadRange(noise_path, w.fingerprint_begin, w.fingerprint_len); break;
    case StressMode::kCleanAsFingerprint: s.fingerprint = mix.clean; break;
    case StressMode::kNoiseAsFingerprint: s.fingerprint = noise; break;
  }
  s.clean = std::move(mix.clean);
  s.mixture = std::move(mix.mixture);
  s.noise = std::move(noise);
  return s;
}

std::string FormatTag(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

TrainingSet::TrainingSet(const Manifest& manifest, AudioCache& cache, TrainingSetOptions opts)
    : manifest_(manifest), cache_(cache), opts_(std::move(opts)), records_(SplitRecords(manifest, opts_.split)) {
  if (!(opts_.snr_min_db <= opts_.snr_max_db)) Fail(ErrorKind::kInvalidConfig, "training SNR range is empty");
  MixSpec probe;
  probe.fingerprint_len_s = opts_.fingerprint_len_s;
  probe.fingerprint_offset_s = opts_.fingerprint_offset_s;
  probe.Validate();
}

SampleTriple TrainingSet::Get(std::size_t index, std::size_t epoch) const {
  const ManifestRecord& rec = *records_.at(index);
  auto rng = MakeRng({opts_.seed, 0x7a1, epoch, index});
  MixSpec spec;
  spec.snr_db = std::uniform_real_distribution<double>(opts_.snr_min_db, opts_.snr_max_db)(rng);
  spec.fingerprint_len_s = opts_.fingerprint_len_s;
  spec.fingerprint_offset_s = opts_.fingerprint_offset_s;
  spec.stress = opts_.stress;
  spec.seed = opts_.seed;
  return Assemble(rec, manifest_, cache_, spec, 0, false, rng);
}

std::vector<std::size_t> TrainingSet::EpochOrder(std::size_t epoch) const {
  std::vector<std::size_t> order(records_.size());
  std::iota(order.begin(), order.end(), 0);
  auto rng = MakeRng({opts_.seed, 0x5f, epoch});
  // Fisher-Yates with explicit draws keeps the order library-independent.
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

EvalSet::EvalSet(const Manifest& manifest, AudioCache& cache, EvalSetOptions opts)
    : manifest_(manifest), cache_(cache), opts_(std::move(opts)), records_(SplitRecords(manifest, opts_.split)) {
  if (opts_.offsets_s.empty()) Fail(ErrorKind::kInvalidConfig, "eval offsets list is empty");
  for (double off : opts_.offsets_s) {
    MixSpec probe;
    probe.fingerprint_len_s = opts_.fingerprint_len_s;
    probe.fingerprint_offset_s = off;
    probe.Validate();
  }
  for (std::size_t r = 0; r < records_.size(); ++r) {
    std::vector<double> snrs = opts_.snr_list;
    if (snrs.empty()) snrs.push_back(records_[r]->snr_db);
    for (double snr : snrs) {
      for (double off : opts_.offsets_s) items_.push_back({r, snr, off});
    }
  }
}

SampleTriple EvalSet::Get(std::size_t i) const {
  const EvalItem& it = items_.at(i);
  const ManifestRecord& rec = *records_[it.record];
  const std::string noise_path = manifest_.Resolve(rec.noise_path);
  const int sr = cache_.SampleRate(noise_path);
  const double max_off = *std::max_element(opts_.offsets_s.begin(), opts_.offsets_s.end());
  const double start_s = rec.mix_start_s.value_or(opts_.fingerprint_len_s + max_off);

  MixSpec spec;
  spec.snr_db = it.snr_db;
  spec.fingerprint_len_s = opts_.fingerprint_len_s;
  spec.fingerprint_offset_s = it.offset_s;
  spec.stress = opts_.stress;
  spec.seed = opts_.seed;
  // Loop rotation depends on the record only, so offsets share the mixture.
  auto rng = MakeRng({opts_.seed, 0xe7a1, it.record});
  const auto begin = static_cast<std::size_t>(std::llround(start_s * sr));
  SampleTriple s = Assemble(rec, manifest_, cache_, spec, begin, true, rng);
  s.id = rec.id + "_snr" + FormatTag(it.snr_db) + "_off" + FormatTag(it.offset_s);
  return s;
}

std::vector<SampleTriple> BuildEvalSet(const Manifest& manifest, AudioCache& cache, const EvalSetOptions& opts) {
  EvalSet set(manifest, cache, opts);
  std::vector<SampleTriple> out;
  out.reserve(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) out.push_back(set.Get(i));
  return out;
}

void WriteSampleTriple(const std::string& dir, const SampleTriple& s) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) Fail(ErrorKind::kIo, "cannot create " + dir + ": " + ec.message());
  const fs::path base = fs::path(dir) / s.id;
  WriteWav(base.string() + "_mix.wav", s.mixture, WavFormat::kFloat32);
  WriteWav(base.string() + "_clean.wav", s.clean, WavFormat::kFloat32);
  WriteWav(base.string() + "_noise.wav", s.noise, WavFormat::kFloat32);
  WriteWav(base.string() + "_fp.wav", s.fingerprint, WavFormat::kFloat32);
  std::ofstream out(base.string() + ".json");
  if (!out) Fail(ErrorKind::kIo, "cannot write sidecar for " + s.id);
  out << SidecarJson(s).dump(2) << "\n";
}

}  // namespace dfinger
