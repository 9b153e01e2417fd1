#include "dfinger/cli/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "dfinger/data/corpus.hpp"
#include "dfinger/error.hpp"
#include "dfinger/model/stream.hpp"

namespace dfinger {

std::vector<MetricRow> EvaluateSet(const Model& model, const std::string& model_name, const EvalSet& set,
                                   bool use_fingerprint, const std::string& condition, bool with_stoi,
                                   int threads) {
  if (set.size() == 0) Fail(ErrorKind::kData, "evaluation set is empty");
  if (use_fingerprint && !model.variant().has_fingerprint_branch()) {
    Fail(ErrorKind::kInvalidConfig, model_name + " has no fingerprint branch");
  }
  EnhanceOptions opts;
  if (!use_fingerprint) opts.fusion = FusionMode::kBypass;

  std::vector<MetricRow> rows(set.size());
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < set.size(); i += step) {
      const SampleTriple s = set.Get(i);
      const AudioBuffer enhanced = Enhance(model, s.mixture, use_fingerprint ? &s.fingerprint : nullptr, opts);
      MetricRow r = ScoreSample(s.clean, s.mixture, enhanced, with_stoi);
      r.id = s.id;
      r.category = s.category;
      r.model = model_name;
      r.condition = condition;
      r.snr_db = set.item(i).snr_db;
      r.offset_s = set.item(i).offset_s;
      rows[i] = std::move(r);
    }
  };
  const auto n = static_cast<std::size_t>(std::max(1, threads));
  if (n == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(n);
    for (std::size_t t = 0; t < n; ++t) {
      pool.emplace_back([&, t] {
        try {
          work(t, n);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return rows;
}

double MeanDeltaSiSdr(const std::vector<MetricRow>& rows) {
  if (rows.empty()) Fail(ErrorKind::kData, "no rows to average");
  double s = 0.0;
  for (const auto& r : rows) s += r.delta_si_sdr;
  return s / static_cast<double>(rows.size());
}

std::vector<StalenessPoint> StalenessCurve(const std::vector<MetricRow>& rows) {
  std::map<double, StalenessPoint> by;
  for (const auto& r : rows) {
    auto& p = by[r.offset_s];
    p.offset_s = r.offset_s;
    p.delta_si_sdr_mean += r.delta_si_sdr;
    ++p.n;
  }
  std::vector<StalenessPoint> out;
  for (auto& [off, p] : by) {
    p.delta_si_sdr_mean /= static_cast<double>(p.n);
    out.push_back(p);
  }
  return out;
}

void WriteStalenessCsv(const std::string& path, const std::vector<StalenessPoint>& points) {
  std::ofstream out(path);
  if (!out) Fail(ErrorKind::kIo, "cannot write " + path);
  out << "offset_s,delta_si_sdr_mean,n\n";
  char buf[96];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof(buf), "%g,%.6f,%zu\n", p.offset_s, p.delta_si_sdr_mean, p.n);
    out << buf;
  }
}

StressReport RunStress(const Model& model, const std::string& model_name, const Manifest& manifest,
                       AudioCache& cache, const EvalSetOptions& base, bool with_stoi, int threads) {
  StressReport rep;
  const std::pair<StressMode, double StressReport::*> modes[] = {
      {StressMode::kNone, &StressReport::normal},
      {StressMode::kCleanAsFingerprint, &StressReport::clean_as_fp},
      {StressMode::kNoiseAsFingerprint, &StressReport::noise_as_fp},
  };
  for (const auto& [mode, field] : modes) {
    EvalSetOptions o = base;
    o.stress = mode;
    const EvalSet set(manifest, cache, o);
    const std::string cond = mode == StressMode::kNone ? "fp" : "stress-" + ToString(mode);
    auto rows = EvaluateSet(model, model_name, set, true, cond, with_stoi, threads);
    rep.*field = MeanDeltaSiSdr(rows);
    rep.rows.insert(rep.rows.end(), rows.begin(), rows.end());
  }
  rep.ordering_holds = rep.clean_as_fp <= rep.normal && rep.normal <= rep.noise_as_fp;
  return rep;
}

nlohmann::json ToJson(const StressReport& r) {
  return {{"clean_as_fingerprint", r.clean_as_fp},
          {"normal", r.normal},
          {"noise_as_fingerprint", r.noise_as_fp},
          {"ordering_holds", r.ordering_holds},
          {"n", r.rows.size() / 3}};
}

std::vector<ComparisonRow> ComparisonTable(const std::vector<MetricRow>& rows) {
  std::vector<ComparisonRow> table;
  if (rows.empty()) return table;
  // The mixture row scores each noisy input once.
  std::map<std::string, const MetricRow*> inputs;
  for (const auto& r : rows) inputs.emplace(r.id, &r);
  ComparisonRow mix{"Mixture", 0.0, 0.0, inputs.size()};
  for (const auto& [id, r] : inputs) {
    mix.si_sdr += r->si_sdr_noisy;
    mix.stoi += r->stoi_noisy;
  }
  mix.si_sdr /= static_cast<double>(mix.n);
  mix.stoi /= static_cast<double>(mix.n);
  table.push_back(mix);

  std::vector<std::string> order;
  std::map<std::string, ComparisonRow> by;
  for (const auto& r : rows) {
    const std::string label = r.model + (r.condition.empty() ? "" : " (" + r.condition + ")");
    auto [it, fresh] = by.try_emplace(label, ComparisonRow{label, 0.0, 0.0, 0});
    if (fresh) order.push_back(label);
    it->second.si_sdr += r.delta_si_sdr;
    it->second.stoi += r.delta_stoi;
    ++it->second.n;
  }
  for (const auto& label : order) {
    ComparisonRow c = by.at(label);
    c.si_sdr /= static_cast<double>(c.n);
    c.stoi /= static_cast<double>(c.n);
    table.push_back(c);
  }
  return table;
}

std::string FormatComparisonTable(const std::vector<ComparisonRow>& table) {
  std::ostringstream os;
  std::size_t w = 8;
  for (const auto& r : table) w = std::max(w, r.label.size());
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-*s  %9s  %9s  %5s\n", static_cast<int>(w), "Model", "SI-SDR", "STOI", "n");
  os << buf;
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& r = table[i];
    // Model rows are improvements over the mixture.
    std::snprintf(buf, sizeof(buf), i == 0 ? "%-*s  %9.2f  %9.3f  %5zu\n" : "%-*s  %+9.2f  %+9.3f  %5zu\n",
                  static_cast<int>(w), r.label.c_str(), r.si_sdr, r.stoi, r.n);
    os << buf;
  }
  return os.str();
}

BenchReport RunBench(const Model& model, double seconds, std::uint64_t seed) {
  const int sr = model.config().analysis.sample_rate;
  const auto hop = static_cast<std::size_t>(model.config().analysis.hop_size);
  const auto n = static_cast<std::size_t>(seconds * sr);
  if (!(seconds > 0.0) || n < hop) Fail(ErrorKind::kInvalidLength, "benchmark needs at least one hop of audio");

  const AudioBuffer speech = SynthesizeSpeech(seconds, sr, seed);
  const AudioBuffer noise = SynthesizeNoise("pink", seconds + 1.0, sr, seed + 1);
  const AudioBuffer noise_seg = Slice(noise, noise.size() - speech.size(), speech.size());
  const MixResult mix = MixAtSnr(speech, noise_seg, 0.0);

  StreamEnhancer stream(model, model.variant().fusion);
  if (model.variant().has_fingerprint_branch()) {
    stream.SetFingerprintEmbedding(FingerprintEmbedding(model, Slice(noise, 0, static_cast<std::size_t>(sr))));
  }

  BenchReport rep;
  const std::size_t hops = n / hop;
  std::vector<double> lat;
  lat.reserve(hops);
  rep.output.resize(hops * hop);
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t h = 0; h < hops; ++h) {
    const auto a = std::chrono::steady_clock::now();
    stream.Process(std::span<const double>(mix.mixture.samples.data() + h * hop, hop),
                   std::span<double>(rep.output.data() + h * hop, hop));
    lat.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - a).count());
  }
  rep.processing_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rep.audio_s = static_cast<double>(hops * hop) / sr;
  rep.rtf = rep.processing_s / rep.audio_s;
  rep.hops = hops;
  std::sort(lat.begin(), lat.end());
  auto pct = [&](double q) { return lat[std::min(lat.size() - 1, static_cast<std::size_t>(q * lat.size()))]; };
  rep.p50_ms = pct(0.50);
  rep.p95_ms = pct(0.95);
  rep.p99_ms = pct(0.99);
  return rep;
}

nlohmann::json ToJson(const BenchReport& r) {
  return {{"audio_s", r.audio_s}, {"processing_s", r.processing_s}, {"rtf", r.rtf}, {"hops", r.hops},
          {"latency_ms", {{"p50", r.p50_ms}, {"p95", r.p95_ms}, {"p99", r.p99_ms}}},
          {"realtime", r.rtf < 1.0}};
}

}  // namespace dfinger
