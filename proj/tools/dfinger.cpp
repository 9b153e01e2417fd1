#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <spdlog/spdlog.h>

#include "dfinger/cli/config.hpp"
#include "dfinger/cli/experiment.hpp"
#include "dfinger/data/corpus.hpp"
#include "dfinger/dsp/wav.hpp"
#include "dfinger/nn/checkpoint.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dfinger;

namespace {

struct Shared {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::vector<std::string> checkpoints;
  std::string variant;
  std::optional<int> threads;
};

struct Args {
  Shared shared;
  std::string manifest;
  std::string split = "eval";
  std::string stress = "none";
  std::size_t count = 0;
  std::string input, fingerprint, remote;
  bool no_fp = false;
  std::string addr;
  double duration_s = 0.0;
  std::optional<double> seconds;
};

void AddShared(CLI::App* app, Shared& s) {
  app->add_option("--config", s.config, "Config file (JSON, comments allowed); DFINGER_CONFIG is the fallback");
  app->add_option("--seed", s.seed, "Seed overriding the config");
  app->add_option("--out", s.out, "Output directory")->capture_default_str();
  app->add_option("--checkpoint", s.checkpoints, "Checkpoint file (repeatable where several models make sense)");
  app->add_option("--variant", s.variant,
                  "baseline, dfin, dfin-att, dfin-sameinit, dfin-sharedenc or dfin-opt");
  app->add_option("--threads", s.threads, "Worker threads for evaluation");
}

json EffectiveConfig(const Shared& s) {
  std::string path = s.config;
  if (path.empty()) {
    if (const char* env = std::getenv("DFINGER_CONFIG")) path = env;
  }
  json cfg = path.empty() ? DefaultConfig() : LoadConfig(path);
  if (s.seed) cfg["seed"] = *s.seed;
  if (s.threads) cfg["threads"] = *s.threads;
  return cfg;
}

// Creates the fixed output layout and records the merged configuration.
void PrepareOut(const std::string& out, const json& cfg, const std::string& command) {
  for (const char* d : {"reports", "checkpoints", "audio"}) fs::create_directories(fs::path(out) / d);
  json echo = cfg;
  echo["command"] = command;
  std::ofstream(fs::path(out) / "effective_config.json") << echo.dump(2) << '\n';
}

std::string OutPath(const std::string& out, const char* sub, const std::string& name) {
  return (fs::path(out) / sub / name).string();
}

void RequireFiles(const std::vector<std::pair<std::string, std::string>>& files) {
  std::string missing;
  for (const auto& [what, path] : files) {
    if (path.empty()) {
      missing += "\n  " + what + ": not given";
    } else if (!fs::exists(path)) {
      missing += "\n  " + what + ": " + path;
    }
  }
  if (!missing.empty()) Fail(ErrorKind::kData, "missing inputs:" + missing);
}

Model LoadModel(const std::string& path) { return Model::FromCheckpoint(nn::LoadCheckpoint(path)); }

std::string ModelName(const std::string& path) { return fs::path(path).stem().string(); }

// ---- subcommands ----------------------------------------------------------

int GenCorpus(const Args& a) {
  const json cfg = EffectiveConfig(a.shared);
  const CorpusConfig cc = CorpusConfigFrom(cfg);
  fs::create_directories(a.shared.out);
  PrepareOut(a.shared.out, cfg, "gen-corpus");
  const Manifest m = GenerateSyntheticCorpus(a.shared.out, cc);
  std::cout << "wrote " << m.records.size() << " records to " << (fs::path(a.shared.out) / "manifest.jsonl").string()
            << "\n";
  return 0;
}

int Mix(const Args& a) {
  RequireFiles({{"manifest", a.manifest}});
  const json cfg = EffectiveConfig(a.shared);
  PrepareOut(a.shared.out, cfg, "mix");
  const Manifest m = ReadManifest(a.manifest);
  AudioCache cache;
  const std::string dir = OutPath(a.shared.out, "audio", "");
  std::size_t n = 0;
  if (a.split == "train") {
    TrainingSetOptions o;
    o.seed = cfg.at("seed").get<std::uint64_t>();
    o.fingerprint_len_s = cfg.at("train").at("fingerprint_len_s").get<double>();
    o.stress = ParseStressMode(a.stress);
    const TrainingSet set(m, cache, o);
    const std::size_t count = a.count ? std::min(a.count, set.size()) : set.size();
    for (; n < count; ++n) WriteSampleTriple(dir, set.Get(n, 0));
  } else {
    EvalSetOptions o = EvalOptionsFrom(cfg);
    o.split = a.split;
    o.stress = ParseStressMode(a.stress);
    const EvalSet set(m, cache, o);
    const std::size_t count = a.count ? std::min(a.count, set.size()) : set.size();
    for (; n < count; ++n) WriteSampleTriple(dir, set.Get(n));
  }
  std::cout << "wrote " << n << " mixtures to " << dir << "\n";
  return 0;
}

int Train(const Args& a) {
  RequireFiles({{"manifest", a.manifest}});
  if (a.shared.checkpoints.size() > 1) Fail(ErrorKind::kInvalidConfig, "train takes at most one --checkpoint");
  const json cfg = EffectiveConfig(a.shared);
  PrepareOut(a.shared.out, cfg, "train");
  const std::string variant = a.shared.variant.empty() ? "baseline" : a.shared.variant;
  const Manifest m = ReadManifest(a.manifest);
  AudioCache cache;
  TrainingSetOptions o;
  o.seed = cfg.at("seed").get<std::uint64_t>();
  o.snr_min_db = cfg.at("corpus").at("train_snr_min_db").get<double>();
  o.snr_max_db = cfg.at("corpus").at("train_snr_max_db").get<double>();
  o.fingerprint_len_s = cfg.at("train").at("fingerprint_len_s").get<double>();
  const TrainingSet set(m, cache, o);

  TrainResult r;
  if (a.shared.checkpoints.empty()) {
    if (variant != "baseline") {
      Fail(ErrorKind::kInvalidConfig, "fine-tuning " + variant + " needs --checkpoint with a pretrained baseline");
    }
    TrainConfig tc = PretrainConfigFrom(cfg);
    tc.log_path = OutPath(a.shared.out, "reports", "train_pretrain.jsonl");
    tc.checkpoint_path = OutPath(a.shared.out, "checkpoints", "pretrain.last_good.ckpt");
    r = PretrainBaseline(ModelConfigFrom(cfg), FromTrainingSet(set), tc);
    nn::SaveCheckpoint(OutPath(a.shared.out, "checkpoints", "pretrain.ckpt"), r.checkpoint);
  } else {
    RequireFiles({{"checkpoint", a.shared.checkpoints[0]}});
    TrainConfig tc = TrainConfigFrom(cfg, variant);
    tc.log_path = OutPath(a.shared.out, "reports", "train_" + variant + ".jsonl");
    tc.checkpoint_path = OutPath(a.shared.out, "checkpoints", variant + ".last_good.ckpt");
    r = TrainVariant(nn::LoadCheckpoint(a.shared.checkpoints[0]), FromTrainingSet(set), tc);
    nn::SaveCheckpoint(OutPath(a.shared.out, "checkpoints", variant + ".ckpt"), r.checkpoint);
  }
  json epochs = json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch}, {"loss", e.mean_loss}, {"magnitude", e.mean_magnitude},
                      {"complex", e.mean_complex}, {"fp_active_batches", e.fp_active_batches},
                      {"batches", e.batches}});
  }
  std::ofstream(OutPath(a.shared.out, "reports", "train_" + variant + "_epochs.json"))
      << json{{"epochs", epochs}, {"steps", r.steps}, {"fp_active_fraction", r.fp_active_fraction}}.dump(2);
  return 0;
}

int EnhanceCmd(const Args& a) {
  if (a.shared.checkpoints.size() != 1) Fail(ErrorKind::kInvalidConfig, "enhance needs exactly one --checkpoint");
  std::vector<std::pair<std::string, std::string>> need{{"checkpoint", a.shared.checkpoints[0]}, {"input", a.input}};
  if (!a.fingerprint.empty()) need.emplace_back("fingerprint", a.fingerprint);
  RequireFiles(need);
  const json cfg = EffectiveConfig(a.shared);
  PrepareOut(a.shared.out, cfg, "enhance");
  const Model model = LoadModel(a.shared.checkpoints[0]);
  const AudioBuffer x = ReadWav(a.input);
  AudioBuffer y;
  const bool want_fp = !a.no_fp && model.variant().has_fingerprint_branch();
  if (want_fp && !a.remote.empty()) {
    if (a.fingerprint.empty()) Fail(ErrorKind::kInvalidConfig, "--remote needs --fingerprint");
    const auto summary = service::FetchOrBypass(
        service::ParseEndpoint(a.remote), ReadWav(a.fingerprint), model,
        std::chrono::milliseconds(cfg.at("service").at("timeout_ms").get<int>()));
    if (summary && model.variant().fusion == FusionMode::kAdditive) {
      nn::Tensor emb({1, summary->size()}, *summary);
      y = EnhanceWithEmbedding(model, x, &emb);
    } else {
      y = Enhance(model, x, nullptr, EnhanceOptions{FusionMode::kBypass});
    }
  } else if (want_fp && !a.fingerprint.empty()) {
    const AudioBuffer fp = ReadWav(a.fingerprint);
    y = Enhance(model, x, &fp);
  } else {
    if (want_fp) spdlog::warn("no fingerprint given; running without fingerprint");
    y = Enhance(model, x, nullptr, EnhanceOptions{FusionMode::kBypass});
  }
  const std::string path = OutPath(a.shared.out, "audio", fs::path(a.input).stem().string() + "_enhanced.wav");
  WriteWav(path, y);
  std::cout << "wrote " << path << "\n";
  return 0;
}

void WriteReports(const std::string& out, const std::string& stem, const std::vector<MetricRow>& rows,
                  const json& cfg) {
  std::vector<AggregateKey> keys;
  for (const auto& k : cfg.at("eval").at("aggregate")) keys.push_back(ParseAggregateKey(k.get<std::string>()));
  WriteReportCsv(OutPath(out, "reports", stem + ".csv"), rows);
  WriteReportJson(OutPath(out, "reports", stem + ".json"), rows, keys);
}

int Eval(const Args& a) {
  if (a.shared.checkpoints.empty()) Fail(ErrorKind::kInvalidConfig, "eval needs at least one --checkpoint");
  std::vector<std::pair<std::string, std::string>> need{{"manifest", a.manifest}};
  for (const auto& c : a.shared.checkpoints) need.emplace_back("checkpoint", c);
  RequireFiles(need);
  const json cfg = EffectiveConfig(a.shared);
  const Manifest m = ReadManifest(a.manifest);
  CheckManifestPaths(m);
  AudioCache cache;
  EvalSetOptions o = EvalOptionsFrom(cfg);
  o.split = a.split;
  const EvalSet set(m, cache, o);
  if (set.size() == 0) Fail(ErrorKind::kData, "evaluation set is empty");
  PrepareOut(a.shared.out, cfg, "eval");

  const bool stoi = cfg.at("eval").at("with_stoi").get<bool>();
  const int threads = cfg.at("threads").get<int>();
  std::vector<MetricRow> rows;
  for (const auto& path : a.shared.checkpoints) {
    const Model model = LoadModel(path);
    const std::string name = ModelName(path);
    for (const auto& c : cfg.at("eval").at("conditions")) {
      const std::string cond = c.get<std::string>();
      if (cond != "fp" && cond != "no-fp") Fail(ErrorKind::kInvalidConfig, "unknown eval condition " + cond);
      const bool fp = cond == "fp" && model.variant().has_fingerprint_branch();
      // A Bypass model has a single condition.
      if (!model.variant().has_fingerprint_branch() && cond == "fp") continue;
      auto r = EvaluateSet(model, name, set, fp, model.variant().has_fingerprint_branch() ? cond : "", stoi, threads);
      rows.insert(rows.end(), r.begin(), r.end());
    }
  }
  WriteReports(a.shared.out, "metrics", rows, cfg);
  const std::string table = FormatComparisonTable(ComparisonTable(rows));
  std::ofstream(OutPath(a.shared.out, "reports", "table.txt")) << table;
  std::cout << table;
  return 0;
}

int SweepStaleness(const Args& a) {
  if (a.shared.checkpoints.size() != 1) Fail(ErrorKind::kInvalidConfig, "sweep-staleness needs one --checkpoint");
  RequireFiles({{"manifest", a.manifest}, {"checkpoint", a.shared.checkpoints[0]}});
  const json cfg = EffectiveConfig(a.shared);
  PrepareOut(a.shared.out, cfg, "sweep-staleness");
  const Manifest m = ReadManifest(a.manifest);
  AudioCache cache;
  EvalSetOptions o = EvalOptionsFrom(cfg);
  o.split = a.split;
  o.offsets_s = cfg.at("staleness").at("offsets_s").get<std::vector<double>>();
  const EvalSet set(m, cache, o);
  const Model model = LoadModel(a.shared.checkpoints[0]);
  const auto rows = EvaluateSet(model, ModelName(a.shared.checkpoints[0]), set, true, "fp", false,
                                cfg.at("threads").get<int>());
  const auto curve = StalenessCurve(rows);
  WriteStalenessCsv(OutPath(a.shared.out, "reports", "staleness.csv"), curve);
  double best = curve.front().delta_si_sdr_mean, worst = best;
  for (const auto& p : curve) {
    best = std::max(best, p.delta_si_sdr_mean);
    worst = std::min(worst, p.delta_si_sdr_mean);
    std::cout << p.offset_s << " s: " << p.delta_si_sdr_mean << " dB (n=" << p.n << ")\n";
  }
  std::cout << "max drop across offsets: " << best - worst << " dB\n";
  return 0;
}

int Stress(const Args& a) {
  if (a.shared.checkpoints.size() != 1) Fail(ErrorKind::kInvalidConfig, "stress needs one --checkpoint");
  RequireFiles({{"manifest", a.manifest}, {"checkpoint", a.shared.checkpoints[0]}});
  const json cfg = EffectiveConfig(a.shared);
  PrepareOut(a.shared.out, cfg, "stress");
  const Manifest m = ReadManifest(a.manifest);
  AudioCache cache;
  EvalSetOptions o = EvalOptionsFrom(cfg);
  o.split = a.split;
  const Model model = LoadModel(a.shared.checkpoints[0]);
  const StressReport r = RunStress(model, ModelName(a.shared.checkpoints[0]), m, cache, o,
                                   cfg.at("eval").at("with_stoi").get<bool>(), cfg.at("threads").get<int>());
  WriteReports(a.shared.out, "stress", r.rows, cfg);
  std::ofstream(OutPath(a.shared.out, "reports", "stress_summary.json")) << ToJson(r).dump(2) << '\n';
  std::printf("%-22s %-10s %-22s\n", "CleanAsFingerprint", "Normal", "NoiseAsFingerprint");
  std::printf("%-22.2f %-10.2f %-22.2f\n", r.clean_as_fp, r.normal, r.noise_as_fp);
  if (!r.ordering_holds) std::printf("note: expected ordering clean <= normal <= noise does not hold\n");
  return 0;
}

volatile std::sig_atomic_t g_stop = 0;

int Serve(const Args& a) {
  if (a.shared.checkpoints.size() != 1) Fail(ErrorKind::kInvalidConfig, "serve needs one --checkpoint");
  RequireFiles({{"checkpoint", a.shared.checkpoints[0]}});
  const json cfg = EffectiveConfig(a.shared);
  service::Endpoint ep = !a.addr.empty()             ? service::ParseEndpoint(a.addr)
                         : std::getenv("DFPN_ADDR") ? service::DefaultEndpoint()
                                                     : service::ParseEndpoint(cfg.at("service").at("addr"));
  service::FingerprintServer server(LoadModel(a.shared.checkpoints[0]), ep);
  std::signal(SIGINT, [](int) { g_stop = 1; });
  std::signal(SIGTERM, [](int) { g_stop = 1; });
  server.Start();
  std::cout << "listening on " << ep.host << ":" << server.port() << std::endl;
  const auto until = std::chrono::steady_clock::now() + std::chrono::duration<double>(a.duration_s);
  while (!g_stop && (a.duration_s <= 0.0 || std::chrono::steady_clock::now() < until)) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  server.Stop();
  const auto st = server.stats();
  std::cout << "served " << st.frames << " frames on " << st.connections << " connections\n";
  return 0;
}

int Bench(const Args& a) {
  if (a.shared.checkpoints.size() != 1) Fail(ErrorKind::kInvalidConfig, "bench needs one --checkpoint");
  RequireFiles({{"checkpoint", a.shared.checkpoints[0]}});
  const json cfg = EffectiveConfig(a.shared);
  PrepareOut(a.shared.out, cfg, "bench");
  const double seconds = a.seconds ? *a.seconds : cfg.at("bench").at("seconds").get<double>();
  const BenchReport r = RunBench(LoadModel(a.shared.checkpoints[0]), seconds, cfg.at("seed").get<std::uint64_t>());
  std::ofstream(OutPath(a.shared.out, "reports", "bench.json")) << ToJson(r).dump(2) << '\n';
  AudioBuffer out;
  out.samples = r.output;
  out.sample_rate = LoadModel(a.shared.checkpoints[0]).config().analysis.sample_rate;
  WriteWav(OutPath(a.shared.out, "audio", "bench_output.wav"), out, WavFormat::kFloat32);
  std::printf("RTF %.3f over %.1f s; per-hop latency p50 %.3f ms, p95 %.3f ms, p99 %.3f ms\n", r.rtf, r.audio_s,
              r.p50_ms, r.p95_ms, r.p99_ms);
  if (r.rtf >= 1.0) std::printf("note: slower than real time on this machine\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Noise-fingerprint speech enhancement toolkit"};
  app.require_subcommand(1);
  Args a;
  std::string level = "info";
  app.add_option("--log-level", level, "trace, debug, info, warn, error");

  struct Sub {
    const char* name;
    const char* help;
    int (*run)(const Args&);
  };
  const Sub subs[] = {
      {"gen-corpus", "Generate the synthetic speech/noise corpus and its manifest", GenCorpus},
      {"mix", "Write mixtures, clean references and fingerprints for a manifest split", Mix},
      {"train", "Pretrain the baseline, or fine-tune a variant from --checkpoint", Train},
      {"enhance", "Enhance one WAV file", EnhanceCmd},
      {"eval", "Score checkpoints on the eval split with and without fingerprints", Eval},
      {"sweep-staleness", "Delta SI-SDR as a function of fingerprint age", SweepStaleness},
      {"stress", "Normal vs clean-speech vs noise-only fingerprints", Stress},
      {"serve", "Run the fingerprint embedding service", Serve},
      {"bench", "Streaming latency and real-time factor", Bench},
  };
  std::map<CLI::App*, int (*)(const Args&)> handlers;
  for (const auto& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    AddShared(sub, a.shared);
    const std::string n = s.name;
    if (n != "gen-corpus" && n != "enhance" && n != "serve" && n != "bench") {
      sub->add_option("--manifest", a.manifest, "Corpus manifest (manifest.jsonl)");
    }
    if (n == "mix" || n == "eval" || n == "sweep-staleness" || n == "stress") {
      sub->add_option("--split", a.split, "Manifest split")->capture_default_str();
    }
    if (n == "mix") {
      sub->add_option("--stress", a.stress, "none, clean-as-fingerprint or noise-as-fingerprint");
      sub->add_option("--count", a.count, "Number of mixtures (0: all)");
    }
    if (n == "enhance") {
      sub->add_option("--input", a.input, "Noisy WAV")->required();
      sub->add_option("--fingerprint", a.fingerprint, "Noise-only WAV recorded before the input");
      sub->add_flag("--no-fp", a.no_fp, "Disable the fingerprint path (Bypass)");
      sub->add_option("--remote", a.remote, "Fetch the fingerprint summary from a service at host:port");
    }
    if (n == "serve") {
      sub->add_option("--addr", a.addr, "Bind address host:port (default: DFPN_ADDR or config)");
      sub->add_option("--duration", a.duration_s, "Stop after this many seconds (0: run until signalled)");
    }
    if (n == "bench") sub->add_option("--seconds", a.seconds, "Audio length to stream");
    handlers[sub] = s.run;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  spdlog::set_level(spdlog::level::from_str(level));
  try {
    for (const auto& [sub, run] : handlers) {
      if (sub->parsed()) return run(a);
    }
  } catch (const Error& e) {
    spdlog::error("{} ({})", e.what(), ToString(e.kind()));
    return ExitCodeFor(e.kind());
  } catch (const nlohmann::json::exception& e) {
    spdlog::error("configuration: {}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 3;
  }
  return 2;
}
