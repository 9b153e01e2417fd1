#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "dfinger/dsp/audio.hpp"
#include "dfinger/model/model.hpp"
#include "dfinger/service/wire.hpp"

namespace dfinger::service {

inline constexpr std::uint16_t kDefaultPort = 7462;

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = kDefaultPort;
};

// "host:port" or "host" (default port). Throws kInvalidConfig.
Endpoint ParseEndpoint(const std::string& s);
// DFPN_ADDR when set, else 127.0.0.1:7462.
Endpoint DefaultEndpoint();

// The fingerprint summary exactly as the service computes it: the input is
// narrowed to float, embedded, averaged over time and narrowed again.
std::vector<float> WireSummary(const Model& model, const AudioBuffer& fingerprint);

struct ServerStats {
  std::uint64_t connections = 0;
  std::uint64_t frames = 0;
  std::uint64_t errors = 0;
};

// Threaded TCP server; one handler thread per connection, the model is
// shared read-only. Port 0 binds an ephemeral port.
class FingerprintServer {
 public:
  // Throws kInvalidConfig if the model has no fingerprint encoder.
  FingerprintServer(Model model, Endpoint bind);
  ~FingerprintServer();
  FingerprintServer(const FingerprintServer&) = delete;
  FingerprintServer& operator=(const FingerprintServer&) = delete;

  // Binds and starts accepting. Throws kConnectionFailed if binding fails.
  void Start();
  // Stops accepting, closes every connection and waits for the handlers.
  void Stop();
  std::uint16_t port() const { return port_; }
  std::uint64_t checkpoint_hash() const { return hash_; }
  ServerStats stats() const;

 private:
  void AcceptLoop();
  void Handle(int fd);
  // Returns false when the connection should close.
  bool Dispatch(int fd, const FrameHeader& h, const std::vector<std::uint8_t>& payload);

  Model model_;
  Endpoint bind_;
  std::uint64_t hash_ = 0;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stop_{false};
  std::thread acceptor_;
  mutable std::mutex mu_;
  std::condition_variable idle_;
  int active_ = 0;  // running handler threads (detached)
  std::vector<int> open_fds_;
  std::atomic<std::uint64_t> connections_{0}, frames_{0}, errors_{0};
};

struct FetchResult {
  std::vector<float> summary;
  std::uint64_t checkpoint_hash = 0;
};

// One EmbedRequest round trip. Throws kConnectionFailed, kTimeout, or
// kProtocol (server Error frames included, with the code in the message).
FetchResult ClientFetch(const Endpoint& addr, const AudioBuffer& fingerprint, std::chrono::milliseconds timeout);
// As ClientFetch, then checks the hash against the local enhancer's
// parameters; kHashMismatch otherwise.
std::vector<float> FetchVerified(const Endpoint& addr, const AudioBuffer& fingerprint, const Model& local,
                                 std::chrono::milliseconds timeout);
// FetchVerified with total fallback: any failure is logged and yields
// nullopt, meaning the enhancer runs as Bypass.
std::optional<std::vector<double>> FetchOrBypass(const Endpoint& addr, const AudioBuffer& fingerprint,
                                                 const Model& local, std::chrono::milliseconds timeout);
bool Ping(const Endpoint& addr, std::chrono::milliseconds timeout);

struct StalenessPolicy {
  double max_age_s = 120.0;
  double refresh_interval_s = 60.0;
  // Throws kInvalidConfig unless 0 < refresh_interval_s <= max_age_s.
  void Validate() const;
};

enum class StalenessAction { kUse, kUseAndRefresh, kDrop };
const char* ToString(StalenessAction a);

// age < refresh: Use; refresh <= age < max: Use and refresh; age >= max: Drop.
StalenessAction StalenessGuard(double age_s, const StalenessPolicy& policy);

// Latest summary plus the time it was taken. Writers (a refresh thread)
// swap the whole entry; the audio thread only copies a pointer.
class SummarySlot {
 public:
  using Clock = std::chrono::steady_clock;
  struct Entry {
    std::vector<double> summary;
    Clock::time_point taken;
  };

  void Store(std::vector<double> summary, Clock::time_point taken);
  void Clear();
  std::shared_ptr<const Entry> Load() const;

  // The summary to use at `now` (nullopt: run Bypass) and whether a refresh
  // is due.
  struct Decision {
    std::optional<std::vector<double>> summary;
    bool refresh = false;
  };
  Decision Resolve(const StalenessPolicy& policy, Clock::time_point now) const;

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const Entry> entry_;
};

}  // namespace dfinger::service
