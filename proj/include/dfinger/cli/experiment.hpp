#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dfinger/data/dataset.hpp"
#include "dfinger/metrics/metrics.hpp"
#include "dfinger/model/model.hpp"

namespace dfinger {

// Enhances every item of `set` and scores it. With use_fingerprint the
// model's own fusion runs on the item's fingerprint; otherwise Bypass.
// Rows keep the set order; work is split over `threads` workers.
std::vector<MetricRow> EvaluateSet(const Model& model, const std::string& model_name, const EvalSet& set,
                                   bool use_fingerprint, const std::string& condition, bool with_stoi,
                                   int threads = 1);

double MeanDeltaSiSdr(const std::vector<MetricRow>& rows);

struct StalenessPoint {
  double offset_s = 0.0;
  double delta_si_sdr_mean = 0.0;
  std::size_t n = 0;
};

// Mean delta SI-SDR per fingerprint offset. Offsets share each record's
// mixture, so only the fingerprint changes along the curve.
std::vector<StalenessPoint> StalenessCurve(const std::vector<MetricRow>& rows);
void WriteStalenessCsv(const std::string& path, const std::vector<StalenessPoint>& points);

// Normal, CleanAsFingerprint and NoiseAsFingerprint on one eval set.
struct StressReport {
  double normal = 0.0;
  double clean_as_fp = 0.0;
  double noise_as_fp = 0.0;
  bool ordering_holds = false;  // clean <= normal <= noise
  std::vector<MetricRow> rows;
};
StressReport RunStress(const Model& model, const std::string& model_name, const Manifest& manifest,
                       AudioCache& cache, const EvalSetOptions& base, bool with_stoi, int threads);
nlohmann::json ToJson(const StressReport& r);

// Mixture row plus one row per (model, condition) with mean deltas.
struct ComparisonRow {
  std::string label;
  double si_sdr = 0.0;  // absolute for the mixture row, delta otherwise
  double stoi = 0.0;
  std::size_t n = 0;
};
std::vector<ComparisonRow> ComparisonTable(const std::vector<MetricRow>& rows);
std::string FormatComparisonTable(const std::vector<ComparisonRow>& table);

struct BenchReport {
  double audio_s = 0.0;
  double processing_s = 0.0;
  double rtf = 0.0;  // processing time / audio time
  double p50_ms = 0.0, p95_ms = 0.0, p99_ms = 0.0;  // per hop
  std::size_t hops = 0;
  std::vector<double> output;  // enhanced audio, for determinism checks
};
// Streams `seconds` of seeded noisy input hop by hop. Throws kInvalidLength
// when seconds gives no full hop.
BenchReport RunBench(const Model& model, double seconds, std::uint64_t seed);
nlohmann::json ToJson(const BenchReport& r);

}  // namespace dfinger
