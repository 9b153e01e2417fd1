#include "dfinger/metrics/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

#include "dfinger/dsp/fft.hpp"
#include "dfinger/error.hpp"

namespace dfinger {
namespace {

#include "stoi_fir.inc"

constexpr int kStoiRate = 10000;
constexpr int kStoiFrame = 256;
constexpr int kStoiHop = 128;
constexpr int kStoiFft = 512;
constexpr int kStoiBands = 15;
constexpr double kStoiMinFreq = 150.0;
constexpr int kStoiSegment = 30;
constexpr double kStoiBeta = -15.0;
constexpr double kStoiDynRange = 40.0;
constexpr double kEps = std::numeric_limits<double>::epsilon();

// Hann of length N + 2 with the zero endpoints dropped.
const std::array<double, kStoiFrame>& StoiWindow() {
  static const auto w = [] {
    std::array<double, kStoiFrame> a{};
    for (int i = 0; i < kStoiFrame; ++i) a[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (i + 1) / (kStoiFrame + 1));
    return a;
  }();
  return w;
}

// Inclusive-exclusive FFT bin ranges of the one-third octave bands.
const std::array<std::pair<int, int>, kStoiBands>& ThirdOctaveBins() {
  static const auto bins = [] {
    std::array<std::pair<int, int>, kStoiBands> out{};
    const int nbins = kStoiFft / 2 + 1;
    auto nearest = [&](double f) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int k = 0; k < nbins; ++k) {
        const double d = k * static_cast<double>(kStoiRate) / kStoiFft - f;
        if (d * d < bd) {
          bd = d * d;
          best = k;
        }
      }
      return best;
    };
    for (int b = 0; b < kStoiBands; ++b) {
      const double lo = kStoiMinFreq * std::pow(2.0, (2.0 * b - 1.0) / 6.0);
      const double hi = kStoiMinFreq * std::pow(2.0, (2.0 * b + 1.0) / 6.0);
      out[b] = {nearest(lo), nearest(hi)};
    }
    return out;
  }();
  return bins;
}

std::size_t NumStoiFrames(std::size_t n) {
  return n > kStoiFrame ? (n - kStoiFrame - 1) / kStoiHop + 1 : 0;
}

// Drops frames of x more than 40 dB below its loudest frame, applying the
// same selection to y, and overlap-adds the windowed survivors.
void RemoveSilentFrames(const std::vector<double>& x, const std::vector<double>& y, std::vector<double>& xs,
                        std::vector<double>& ys) {
  const auto& w = StoiWindow();
  const std::size_t frames = NumStoiFrames(x.size());
  std::vector<double> energy(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    double e = 0.0;
    for (int t = 0; t < kStoiFrame; ++t) {
      const double v = w[t] * x[f * kStoiHop + t];
      e += v * v;
    }
    energy[f] = 20.0 * std::log10(std::sqrt(e) + kEps);
  }
  const double top = frames ? *std::max_element(energy.begin(), energy.end()) : 0.0;
  std::vector<std::size_t> keep;
  for (std::size_t f = 0; f < frames; ++f)
    if (top - kStoiDynRange - energy[f] < 0.0) keep.push_back(f);
  if (keep.empty()) Fail(ErrorKind::kInvalidLength, "stoi: no active frames in the reference");
  const std::size_t len = (keep.size() - 1) * kStoiHop + kStoiFrame;
  xs.assign(len, 0.0);
  ys.assign(len, 0.0);
  for (std::size_t j = 0; j < keep.size(); ++j) {
    const std::size_t src = keep[j] * kStoiHop, dst = j * kStoiHop;
    for (int t = 0; t < kStoiFrame; ++t) {
      xs[dst + t] += w[t] * x[src + t];
      ys[dst + t] += w[t] * y[src + t];
    }
  }
}

// [band][frame] one-third octave magnitudes.
std::vector<std::vector<double>> ThirdOctaveEnvelope(const std::vector<double>& x) {
  static const RealFft fft(kStoiFft);
  const auto& w = StoiWindow();
  const auto& bins = ThirdOctaveBins();
  const std::size_t frames = NumStoiFrames(x.size());
  std::vector<std::vector<double>> out(kStoiBands, std::vector<double>(frames));
  std::vector<double> buf(kStoiFft);
  std::vector<std::complex<double>> spec(fft.num_bins());
  for (std::size_t f = 0; f < frames; ++f) {
    std::fill(buf.begin(), buf.end(), 0.0);
    for (int t = 0; t < kStoiFrame; ++t) buf[t] = w[t] * x[f * kStoiHop + t];
    fft.Forward(buf, spec);
    for (int b = 0; b < kStoiBands; ++b) {
      double p = 0.0;
      for (int k = bins[b].first; k < bins[b].second; ++k) p += std::norm(spec[k]);
      out[b][f] = std::sqrt(p);
    }
  }
  return out;
}

double Norm(const double* v, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += v[i] * v[i];
  return std::sqrt(s);
}

std::string CsvField(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> SplitCsvLine(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string Num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

constexpr std::array<const char*, 15> kColumns{"id",         "category",      "model",        "condition",
                                               "snr_db",     "offset_s",      "si_sdr_noisy", "si_sdr_enhanced",
                                               "delta_si_sdr", "stoi_noisy",  "stoi_enhanced", "delta_stoi",
                                               "unreliable", "pesq",          "dnsmos"};

nlohmann::json AggregateJson(const AggregateRow& a) {
  return {{"key", a.key},
          {"count", a.count},
          {"unreliable", a.unreliable},
          {"si_sdr_noisy", a.si_sdr_noisy},
          {"si_sdr_enhanced", a.si_sdr_enhanced},
          {"delta_si_sdr", a.delta_si_sdr},
          {"stoi_noisy", a.stoi_noisy},
          {"stoi_enhanced", a.stoi_enhanced},
          {"delta_stoi", a.delta_stoi}};
}

}  // namespace

SiSdrResult SiSdr(const std::vector<double>& reference, const std::vector<double>& estimate) {
  if (reference.empty() || reference.size() != estimate.size()) {
    Fail(ErrorKind::kInvalidShape, "si_sdr: lengths " + std::to_string(reference.size()) + " and " +
                                       std::to_string(estimate.size()));
  }
  double rr = 0.0, er = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    rr += reference[i] * reference[i];
    er += estimate[i] * reference[i];
  }
  if (rr <= 0.0) Fail(ErrorKind::kUndefinedReference, "si_sdr: reference has zero energy");
  const double alpha = er / rr;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double t = alpha * reference[i];
    num += t * t;
    den += (t - estimate[i]) * (t - estimate[i]);
  }
  if (den <= 0.0) return {kSiSdrCapDb, true};
  if (num <= 0.0) return {-kSiSdrCapDb, true};
  const double v = 10.0 * std::log10(num / den);
  if (v > kSiSdrCapDb) return {kSiSdrCapDb, true};
  if (v < -kSiSdrCapDb) return {-kSiSdrCapDb, true};
  return {v, false};
}

std::vector<double> ResampleTo10k(const std::vector<double>& x) {
  constexpr int up = 5, down = 12, half = (kStoiFirTaps - 1) / 2;
  const std::size_t n_in = x.size();
  const std::size_t n_out = (n_in * up + down - 1) / down;
  std::vector<double> y(n_out, 0.0);
  for (std::size_t n = 0; n < n_out; ++n) {
    const long long j0 = static_cast<long long>(n) * down + half;
    // Taps k with (j0 - k) divisible by `up` hit real input samples.
    double acc = 0.0;
    for (long long k = j0 % up; k < kStoiFirTaps; k += up) {
      const long long idx = (j0 - k) / up;
      if (idx < 0) break;
      if (idx < static_cast<long long>(n_in)) acc += kStoiFir[k] * x[static_cast<std::size_t>(idx)];
    }
    y[n] = up * acc;
  }
  return y;
}

double Stoi(const AudioBuffer& reference, const AudioBuffer& estimate) {
  if (reference.size() != estimate.size()) {
    Fail(ErrorKind::kInvalidShape, "stoi: lengths " + std::to_string(reference.size()) + " and " +
                                       std::to_string(estimate.size()));
  }
  if (reference.sample_rate != estimate.sample_rate) Fail(ErrorKind::kInvalidConfig, "stoi: sample rates differ");
  std::vector<double> x, y;
  if (reference.sample_rate == 24000) {
    x = ResampleTo10k(reference.samples);
    y = ResampleTo10k(estimate.samples);
  } else if (reference.sample_rate == kStoiRate) {
    x = reference.samples;
    y = estimate.samples;
  } else {
    Fail(ErrorKind::kInvalidConfig, "stoi: unsupported sample rate " + std::to_string(reference.sample_rate));
  }
  const double min_s = static_cast<double>(kStoiSegment * kStoiHop + kStoiFrame) / kStoiRate;
  if (NumStoiFrames(x.size()) < static_cast<std::size_t>(kStoiSegment)) {
    Fail(ErrorKind::kInvalidLength, "stoi: input shorter than " + std::to_string(min_s) + " s");
  }
  std::vector<double> xs, ys;
  RemoveSilentFrames(x, y, xs, ys);
  const auto xt = ThirdOctaveEnvelope(xs);
  const auto yt = ThirdOctaveEnvelope(ys);
  const std::size_t frames = xt[0].size();
  if (frames < static_cast<std::size_t>(kStoiSegment)) {
    Fail(ErrorKind::kInvalidLength, "stoi: only " + std::to_string(frames) +
                                        " active frames remain after silence removal (need 30)");
  }
  const double clip = std::pow(10.0, -kStoiBeta / 20.0);
  double total = 0.0;
  const std::size_t segments = frames - kStoiSegment + 1;
  std::array<double, kStoiSegment> xv{}, yv{};
  for (std::size_t m = 0; m < segments; ++m) {
    for (int b = 0; b < kStoiBands; ++b) {
      std::copy_n(xt[b].begin() + static_cast<std::ptrdiff_t>(m), kStoiSegment, xv.begin());
      std::copy_n(yt[b].begin() + static_cast<std::ptrdiff_t>(m), kStoiSegment, yv.begin());
      const double a = Norm(xv.data(), kStoiSegment) / (Norm(yv.data(), kStoiSegment) + kEps);
      double xm = 0.0, ym = 0.0;
      for (int t = 0; t < kStoiSegment; ++t) {
        yv[t] = std::min(yv[t] * a, xv[t] * (1.0 + clip));
        xm += xv[t];
        ym += yv[t];
      }
      xm /= kStoiSegment;
      ym /= kStoiSegment;
      for (int t = 0; t < kStoiSegment; ++t) {
        xv[t] -= xm;
        yv[t] -= ym;
      }
      const double xn = Norm(xv.data(), kStoiSegment) + kEps, yn = Norm(yv.data(), kStoiSegment) + kEps;
      double c = 0.0;
      for (int t = 0; t < kStoiSegment; ++t) c += (yv[t] / yn) * (xv[t] / xn);
      total += c;
    }
  }
  return total / static_cast<double>(segments * kStoiBands);
}

Delta MakeDelta(double noisy, double enhanced, bool noisy_capped, bool enhanced_capped) {
  return {enhanced - noisy, noisy_capped || enhanced_capped};
}

MetricRow ScoreSample(const AudioBuffer& clean, const AudioBuffer& noisy, const AudioBuffer& enhanced,
                      bool with_stoi) {
  MetricRow r;
  const auto sn = SiSdr(clean.samples, noisy.samples);
  const auto se = SiSdr(clean.samples, enhanced.samples);
  const Delta d = MakeDelta(sn.db, se.db, sn.capped, se.capped);
  r.si_sdr_noisy = sn.db;
  r.si_sdr_enhanced = se.db;
  r.delta_si_sdr = d.value;
  r.unreliable = d.unreliable;
  if (with_stoi) {
    r.stoi_noisy = Stoi(clean, noisy);
    r.stoi_enhanced = Stoi(clean, enhanced);
    r.delta_stoi = r.stoi_enhanced - r.stoi_noisy;
  }
  return r;
}

std::string ToString(AggregateKey k) {
  switch (k) {
    case AggregateKey::kCategory: return "category";
    case AggregateKey::kSnr: return "snr";
    case AggregateKey::kModel: return "model";
    case AggregateKey::kCondition: return "condition";
    case AggregateKey::kOffset: return "offset";
    case AggregateKey::kAll: return "all";
  }
  return "?";
}

AggregateKey ParseAggregateKey(const std::string& s) {
  for (auto k : {AggregateKey::kCategory, AggregateKey::kSnr, AggregateKey::kModel, AggregateKey::kCondition,
                 AggregateKey::kOffset, AggregateKey::kAll}) {
    if (ToString(k) == s) return k;
  }
  Fail(ErrorKind::kInvalidConfig, "unknown aggregate key '" + s + "'");
}

std::vector<AggregateRow> Aggregate(const std::vector<MetricRow>& rows, AggregateKey key) {
  // Numeric keys sort by value; string keys lexicographically.
  std::map<std::pair<double, std::string>, AggregateRow> groups;
  for (const auto& r : rows) {
    std::pair<double, std::string> k{0.0, ""};
    switch (key) {
      case AggregateKey::kCategory: k.second = r.category; break;
      case AggregateKey::kModel: k.second = r.model; break;
      case AggregateKey::kCondition: k.second = r.condition; break;
      case AggregateKey::kSnr: k = {r.snr_db, Num(r.snr_db)}; break;
      case AggregateKey::kOffset: k = {r.offset_s, Num(r.offset_s)}; break;
      case AggregateKey::kAll: k.second = "all"; break;
    }
    auto& g = groups[k];
    g.key = k.second;
    ++g.count;
    g.unreliable += r.unreliable ? 1 : 0;
    g.si_sdr_noisy += r.si_sdr_noisy;
    g.si_sdr_enhanced += r.si_sdr_enhanced;
    g.delta_si_sdr += r.delta_si_sdr;
    g.stoi_noisy += r.stoi_noisy;
    g.stoi_enhanced += r.stoi_enhanced;
    g.delta_stoi += r.delta_stoi;
  }
  std::vector<AggregateRow> out;
  for (auto& [k, g] : groups) {
    const double n = static_cast<double>(g.count);
    for (double* v : {&g.si_sdr_noisy, &g.si_sdr_enhanced, &g.delta_si_sdr, &g.stoi_noisy, &g.stoi_enhanced,
                      &g.delta_stoi})
      *v /= n;
    out.push_back(g);
  }
  return out;
}

void WriteReportCsv(const std::string& path, const std::vector<MetricRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) Fail(ErrorKind::kIo, "cannot write report " + path);
  out << "# " << kReportSchema << "\n";
  for (std::size_t i = 0; i < kColumns.size(); ++i) out << (i ? "," : "") << kColumns[i];
  out << "\n";
  for (const auto& r : rows) {
    out << CsvField(r.id) << ',' << CsvField(r.category) << ',' << CsvField(r.model) << ','
        << CsvField(r.condition) << ',' << Num(r.snr_db) << ',' << Num(r.offset_s) << ',' << Num(r.si_sdr_noisy)
        << ',' << Num(r.si_sdr_enhanced) << ',' << Num(r.delta_si_sdr) << ',' << Num(r.stoi_noisy) << ','
        << Num(r.stoi_enhanced) << ',' << Num(r.delta_stoi) << ',' << (r.unreliable ? 1 : 0) << ",,\n";
  }
  if (!out) Fail(ErrorKind::kIo, "short write to " + path);
}

std::vector<MetricRow> ReadReportCsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) Fail(ErrorKind::kIo, "cannot open report " + path);
  std::string line;
  std::getline(in, line);
  if (line != std::string("# ") + kReportSchema) {
    Fail(ErrorKind::kVersionMismatch, path + ": expected schema " + kReportSchema + ", found '" + line + "'");
  }
  std::getline(in, line);
  std::vector<MetricRow> rows;
  std::size_t lineno = 2;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = SplitCsvLine(line);
    if (f.size() != kColumns.size()) {
      Fail(ErrorKind::kData, path + ":" + std::to_string(lineno) + ": expected " +
                                 std::to_string(kColumns.size()) + " columns, found " + std::to_string(f.size()));
    }
    try {
      MetricRow r;
      r.id = f[0];
      r.category = f[1];
      r.model = f[2];
      r.condition = f[3];
      r.snr_db = std::stod(f[4]);
      r.offset_s = std::stod(f[5]);
      r.si_sdr_noisy = std::stod(f[6]);
      r.si_sdr_enhanced = std::stod(f[7]);
      r.delta_si_sdr = std::stod(f[8]);
      r.stoi_noisy = std::stod(f[9]);
      r.stoi_enhanced = std::stod(f[10]);
      r.delta_stoi = std::stod(f[11]);
      r.unreliable = f[12] == "1";
      rows.push_back(std::move(r));
    } catch (const std::exception& e) {
      Fail(ErrorKind::kData, path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

nlohmann::json ReportJson(const std::vector<MetricRow>& rows, const std::vector<AggregateKey>& keys) {
  nlohmann::json j;
  j["schema"] = kReportSchema;
  j["count"] = rows.size();
  j["overall"] = rows.empty() ? nlohmann::json(nullptr) : AggregateJson(Aggregate(rows, AggregateKey::kAll)[0]);
  for (AggregateKey k : keys) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& a : Aggregate(rows, k)) arr.push_back(AggregateJson(a));
    j["by_" + ToString(k)] = std::move(arr);
  }
  return j;
}

void WriteReportJson(const std::string& path, const std::vector<MetricRow>& rows,
                     const std::vector<AggregateKey>& keys) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) Fail(ErrorKind::kIo, "cannot write report " + path);
  out << ReportJson(rows, keys).dump(2) << "\n";
}

}  // namespace dfinger
