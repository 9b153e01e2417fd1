#include "dfinger/data/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "dfinger/dsp/wav.hpp"
#include "dfinger/error.hpp"

namespace dfinger {

namespace fs = std::filesystem;

std::string Manifest::Resolve(const std::string& path) const {
  const fs::path p(path);
  if (p.is_absolute() || base_dir.empty()) return p.string();
  return (fs::path(base_dir) / p).string();
}

std::vector<const ManifestRecord*> Manifest::Split(const std::string& split) const {
  std::vector<const ManifestRecord*> out;
  for (const auto& r : records)
    if (r.split == split) out.push_back(&r);
  return out;
}

std::vector<std::string> Manifest::Categories() const {
  std::set<std::string> s;
  for (const auto& r : records) s.insert(r.category);
  return {s.begin(), s.end()};
}

Manifest ReadManifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) Fail(ErrorKind::kIo, "cannot open manifest " + path);
  Manifest m;
  m.base_dir = fs::path(path).parent_path().string();
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestRecord r;
      r.id = j.at("id").get<std::string>();
      r.clean_path = j.at("clean_path").get<std::string>();
      r.noise_path = j.at("noise_path").get<std::string>();
      r.snr_db = j.at("snr_db").get<double>();
      r.fingerprint_offset_s = j.value("fingerprint_offset_s", 0.0);
      r.split = j.at("split").get<std::string>();
      r.category = j.value("category", std::string("unknown"));
      if (j.contains("mix_start_s") && !j.at("mix_start_s").is_null()) r.mix_start_s = j.at("mix_start_s").get<double>();
      if (!ids.insert(r.id).second) Fail(ErrorKind::kData, path + ":" + std::to_string(lineno) + ": duplicate id " + r.id);
      m.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      Fail(ErrorKind::kData, path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return m;
}

void WriteManifest(const std::string& path, const Manifest& m) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) Fail(ErrorKind::kIo, "cannot write manifest " + path);
  for (const auto& r : m.records) {
    nlohmann::json j = {{"id", r.id},
                        {"clean_path", r.clean_path},
                        {"noise_path", r.noise_path},
                        {"snr_db", r.snr_db},
                        {"fingerprint_offset_s", r.fingerprint_offset_s},
                        {"split", r.split},
                        {"category", r.category}};
    if (r.mix_start_s) j["mix_start_s"] = *r.mix_start_s;
    out << j.dump() << '\n';
  }
  if (!out) Fail(ErrorKind::kIo, "short write to " + path);
}

void CheckManifestPaths(const Manifest& m) {
  std::string missing;
  std::size_t count = 0;
  for (const auto& r : m.records) {
    for (const auto* p : {&r.clean_path, &r.noise_path}) {
      if (!fs::exists(m.Resolve(*p))) {
        if (++count <= 20) missing += "\n  " + r.id + ": " + m.Resolve(*p);
      }
    }
  }
  if (count > 0) {
    Fail(ErrorKind::kData, std::to_string(count) + " unresolvable audio path(s):" + missing +
                               (count > 20 ? "\n  ..." : ""));
  }
}

std::shared_ptr<const AudioCache::Entry> AudioCache::Get(const std::string& path) {
  std::shared_ptr<const Entry> e;
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = entries_.find(path);
    if (it != entries_.end()) e = it->second;
  }
  if (!e) {
    const AudioBuffer a = ReadWav(path);
    auto fresh = std::make_shared<Entry>();
    fresh->samples.assign(a.samples.begin(), a.samples.end());
    fresh->sample_rate = a.sample_rate;
    std::lock_guard<std::mutex> lock(mu_);
    e = entries_.emplace(path, std::move(fresh)).first->second;
  }
  return e;
}

AudioBuffer AudioCache::Load(const std::string& path) {
  auto e = Get(path);
  return AudioBuffer{std::vector<double>(e->samples.begin(), e->samples.end()), e->sample_rate};
}

AudioBuffer AudioCache::LoadRange(const std::string& path, std::size_t begin, std::size_t count) {
  auto e = Get(path);
  if (begin > e->samples.size() || count > e->samples.size() - begin) {
    Fail(ErrorKind::kInvalidShape, "range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                                       ") exceeds " + path);
  }
  const auto first = e->samples.begin() + static_cast<std::ptrdiff_t>(begin);
  return AudioBuffer{std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count)), e->sample_rate};
}

std::size_t AudioCache::Length(const std::string& path) { return Get(path)->samples.size(); }

int AudioCache::SampleRate(const std::string& path) { return Get(path)->sample_rate; }

void AudioCache::Clear() {
  std::lock_guard<std::mutex> lock(mu_);
  entries_.clear();
}

}  // namespace dfinger
