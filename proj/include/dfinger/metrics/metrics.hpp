#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dfinger/dsp/audio.hpp"

namespace dfinger {

inline constexpr double kSiSdrCapDb = 60.0;

struct SiSdrResult {
  double db = 0.0;
  bool capped = false;  // clamped to +/-kSiSdrCapDb or degenerate
};

// alpha = <e, r> / |r|^2; 10 log10(|alpha r|^2 / |alpha r - e|^2), clamped
// to [-60, 60]. Throws kUndefinedReference for a zero reference and
// kInvalidShape for empty or mismatched inputs.
SiSdrResult SiSdr(const std::vector<double>& reference, const std::vector<double>& estimate);

// Classic STOI with silent-frame removal. Inputs at 24 kHz are decimated to
// 10 kHz with a fixed polyphase FIR; 10 kHz inputs are used directly; other
// rates throw kInvalidConfig. Throws kInvalidLength when fewer than 30
// analysis frames remain.
double Stoi(const AudioBuffer& reference, const AudioBuffer& estimate);

// 24 kHz -> 10 kHz (up 5, down 12), output length ceil(n * 5 / 12).
std::vector<double> ResampleTo10k(const std::vector<double>& x);

struct Delta {
  double value = 0.0;
  bool unreliable = false;  // either input was capped
};

Delta MakeDelta(double noisy, double enhanced, bool noisy_capped = false, bool enhanced_capped = false);

struct MetricRow {
  std::string id;
  std::string category;
  std::string model;
  std::string condition;  // e.g. "fp", "no-fp", "stress-clean"
  double snr_db = 0.0;
  double offset_s = 0.0;
  double si_sdr_noisy = 0.0;
  double si_sdr_enhanced = 0.0;
  double delta_si_sdr = 0.0;
  double stoi_noisy = 0.0;
  double stoi_enhanced = 0.0;
  double delta_stoi = 0.0;
  bool unreliable = false;
};

// Scores one (clean, noisy, enhanced) triple.
MetricRow ScoreSample(const AudioBuffer& clean, const AudioBuffer& noisy, const AudioBuffer& enhanced,
                      bool with_stoi = true);

enum class AggregateKey { kCategory, kSnr, kModel, kCondition, kOffset, kAll };

std::string ToString(AggregateKey k);
AggregateKey ParseAggregateKey(const std::string& s);

struct AggregateRow {
  std::string key;
  std::size_t count = 0;
  std::size_t unreliable = 0;
  double si_sdr_noisy = 0.0;
  double si_sdr_enhanced = 0.0;
  double delta_si_sdr = 0.0;
  double stoi_noisy = 0.0;
  double stoi_enhanced = 0.0;
  double delta_stoi = 0.0;
};

// Group means. Rows come out sorted by key (numerically for snr/offset).
std::vector<AggregateRow> Aggregate(const std::vector<MetricRow>& rows, AggregateKey key);

inline constexpr const char* kReportSchema = "dfinger-report-v1";

// Per-sample CSV with a fixed column order; pesq and dnsmos columns are
// reserved and left empty.
void WriteReportCsv(const std::string& path, const std::vector<MetricRow>& rows);
std::vector<MetricRow> ReadReportCsv(const std::string& path);
nlohmann::json ReportJson(const std::vector<MetricRow>& rows, const std::vector<AggregateKey>& keys);
void WriteReportJson(const std::string& path, const std::vector<MetricRow>& rows,
                     const std::vector<AggregateKey>& keys);

}  // namespace dfinger
