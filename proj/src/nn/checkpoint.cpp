#include "dfinger/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dfinger/error.hpp"

namespace dfinger::nn {
namespace {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

void AppendU64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void Fnv(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
}

}  // namespace

std::vector<std::uint8_t> SerializeCheckpoint(const Checkpoint& ckpt) {
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.params.params()) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"dtype", "f64"}, {"byte_offset", offset}});
    offset += t.size() * sizeof(double);
  }
  nlohmann::json manifest = {{"format", kCheckpointFormat},
                             {"meta", ckpt.meta},
                             {"rng_seed", ckpt.params.rng_seed()},
                             {"tensors", tensors},
                             {"blob_bytes", offset}};
  const std::string text = manifest.dump();
  std::vector<std::uint8_t> out;
  out.reserve(8 + text.size() + offset);
  AppendU64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [name, t] : ckpt.params.params()) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.data());
    out.insert(out.end(), p, p + t.size() * sizeof(double));
  }
  return out;
}

Checkpoint DeserializeCheckpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8) Fail(ErrorKind::kCorruptCheckpoint, "checkpoint shorter than its header");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  if (len > bytes.size() - 8) Fail(ErrorKind::kCorruptCheckpoint, "manifest runs past end of file");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kCorruptCheckpoint, std::string("manifest is not valid JSON: ") + e.what());
  }
  const std::string format = manifest.value("format", std::string());
  if (format != kCheckpointFormat) {
    Fail(ErrorKind::kVersionMismatch,
         "checkpoint format '" + format + "' is not " + kCheckpointFormat +
             "; re-export it with a matching build or retrain");
  }
  try {
    const std::size_t blob_start = 8 + len;
    const std::uint64_t blob_bytes = manifest.at("blob_bytes").get<std::uint64_t>();
    if (bytes.size() - blob_start != blob_bytes) {
      Fail(ErrorKind::kCorruptCheckpoint, "blob is " + std::to_string(bytes.size() - blob_start) +
                                              " bytes, manifest says " + std::to_string(blob_bytes));
    }
    Checkpoint ckpt{ParamStore(manifest.at("rng_seed").get<std::uint64_t>()), manifest.at("meta")};
    for (const auto& entry : manifest.at("tensors")) {
      if (entry.at("dtype") != "f64") Fail(ErrorKind::kCorruptCheckpoint, "unsupported dtype");
      Shape shape = entry.at("shape").get<Shape>();
      const std::uint64_t off = entry.at("byte_offset").get<std::uint64_t>();
      const std::size_t n = NumElements(shape);
      if (off > blob_bytes || n * sizeof(double) > blob_bytes - off) {
        Fail(ErrorKind::kCorruptCheckpoint, "tensor '" + entry.at("name").get<std::string>() +
                                                "' runs past the blob");
      }
      std::vector<double> values(n);
      if (n > 0) std::memcpy(values.data(), bytes.data() + blob_start + off, n * sizeof(double));
      ckpt.params.Add(entry.at("name").get<std::string>(), Tensor(std::move(shape), std::move(values)));
    }
    return ckpt;
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kCorruptCheckpoint, std::string("malformed manifest: ") + e.what());
  }
}

void SaveCheckpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto bytes = SerializeCheckpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) Fail(ErrorKind::kIo, "cannot write checkpoint " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) Fail(ErrorKind::kIo, "short write to " + path);
}

Checkpoint LoadCheckpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) Fail(ErrorKind::kIo, "cannot open checkpoint " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return DeserializeCheckpoint(bytes);
}

std::uint64_t ParameterHash(const ParamStore& params) {
  std::uint64_t h = 14695981039346656037ULL;
  for (const auto& [name, t] : params.params()) {
    Fnv(h, name.data(), name.size());
    for (std::size_t d : t.shape()) {
      const std::uint64_t d64 = d;
      Fnv(h, &d64, sizeof d64);
    }
    Fnv(h, t.data(), t.size() * sizeof(double));
  }
  return h;
}

}  // namespace dfinger::nn
