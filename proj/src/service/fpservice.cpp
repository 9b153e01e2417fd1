#include "dfinger/service/fpservice.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <cstring>

#include <spdlog/spdlog.h>

#include "dfinger/error.hpp"
#include "dfinger/nn/checkpoint.hpp"

namespace dfinger::service {
namespace {

using Clock = std::chrono::steady_clock;

constexpr int kPollSliceMs = 100;

class Fd {
 public:
  explicit Fd(int fd = -1) : fd_(fd) {}
  ~Fd() {
    if (fd_ >= 0) ::close(fd_);
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  int get() const { return fd_; }

 private:
  int fd_;
};

// Waits for `events` on fd, in slices so that `cancelled` is honoured.
// Returns false on deadline or cancellation.
template <typename Cancel>
bool WaitFor(int fd, short events, Clock::time_point deadline, Cancel cancelled) {
  while (!cancelled()) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
    if (left <= 0) return false;
    pollfd p{fd, events, 0};
    const int r = ::poll(&p, 1, static_cast<int>(std::min<long long>(left, kPollSliceMs)));
    if (r > 0) return true;
    if (r < 0 && errno != EINTR) return true;  // let the read/write report it
  }
  return false;
}

enum class IoStatus { kOk, kClosed, kTimeout };

template <typename Cancel>
IoStatus ReadExact(int fd, std::uint8_t* buf, std::size_t n, Clock::time_point deadline, Cancel cancelled) {
  std::size_t got = 0;
  while (got < n) {
    if (!WaitFor(fd, POLLIN, deadline, cancelled)) return IoStatus::kTimeout;
    const ssize_t r = ::recv(fd, buf + got, n - got, 0);
    if (r == 0) return IoStatus::kClosed;
    if (r < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      return IoStatus::kClosed;
    }
    got += static_cast<std::size_t>(r);
  }
  return IoStatus::kOk;
}

template <typename Cancel>
IoStatus WriteAll(int fd, const std::vector<std::uint8_t>& data, Clock::time_point deadline, Cancel cancelled) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    if (!WaitFor(fd, POLLOUT, deadline, cancelled)) return IoStatus::kTimeout;
    const ssize_t r = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (r < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      return IoStatus::kClosed;
    }
    sent += static_cast<std::size_t>(r);
  }
  return IoStatus::kOk;
}

constexpr auto kNever = [] { return false; };

addrinfo* Resolve(const Endpoint& e, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(e.port);
  const int rc = ::getaddrinfo(e.host.empty() ? nullptr : e.host.c_str(), port.c_str(), &hints, &res);
  if (rc != 0) Fail(ErrorKind::kConnectionFailed, "cannot resolve " + e.host + ": " + ::gai_strerror(rc));
  return res;
}

std::string Describe(const Endpoint& e) { return e.host + ":" + std::to_string(e.port); }

// Connects within the deadline; throws kConnectionFailed or kTimeout.
int Connect(const Endpoint& addr, Clock::time_point deadline) {
  addrinfo* res = Resolve(addr, false);
  std::string last = "no address";
  bool timed_out = false;
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    const int fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) continue;
    const int flags = ::fcntl(fd, F_GETFL, 0);
    ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
    int rc = ::connect(fd, ai->ai_addr, ai->ai_addrlen);
    if (rc < 0 && errno == EINPROGRESS) {
      if (!WaitFor(fd, POLLOUT, deadline, kNever)) {
        timed_out = true;
        ::close(fd);
        continue;
      }
      int err = 0;
      socklen_t len = sizeof(err);
      ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
      rc = err ? -1 : 0;
      errno = err;
    }
    if (rc == 0) {
      ::freeaddrinfo(res);
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      return fd;
    }
    last = std::strerror(errno);
    ::close(fd);
  }
  ::freeaddrinfo(res);
  if (timed_out) Fail(ErrorKind::kTimeout, "connect to " + Describe(addr) + " timed out");
  Fail(ErrorKind::kConnectionFailed, "cannot connect to " + Describe(addr) + ": " + last);
}

struct Reply {
  FrameHeader header;
  std::vector<std::uint8_t> payload;
};

Reply RoundTrip(const Endpoint& addr, const std::vector<std::uint8_t>& frame, std::chrono::milliseconds timeout) {
  const auto deadline = Clock::now() + timeout;
  Fd fd(Connect(addr, deadline));
  auto check = [&](IoStatus s, const char* what) {
    if (s == IoStatus::kTimeout) Fail(ErrorKind::kTimeout, std::string(what) + " timed out");
    if (s == IoStatus::kClosed) Fail(ErrorKind::kConnectionFailed, std::string("connection closed during ") + what);
  };
  check(WriteAll(fd.get(), frame, deadline, kNever), "send");
  std::uint8_t hdr[kHeaderSize];
  check(ReadExact(fd.get(), hdr, kHeaderSize, deadline, kNever), "receive");
  Reply r;
  r.header = ParseHeader(hdr);
  if (r.header.payload_len > kMaxPayload) Fail(ErrorKind::kProtocol, "oversized reply");
  r.payload.resize(r.header.payload_len);
  check(ReadExact(fd.get(), r.payload.data(), r.payload.size(), deadline, kNever), "receive");
  return r;
}

}  // namespace

Endpoint ParseEndpoint(const std::string& s) {
  Endpoint e;
  const auto colon = s.rfind(':');
  if (colon == std::string::npos) {
    e.host = s;
  } else {
    e.host = s.substr(0, colon);
    const std::string port = s.substr(colon + 1);
    char* end = nullptr;
    const long p = std::strtol(port.c_str(), &end, 10);
    if (port.empty() || *end != '\0' || p < 0 || p > 65535) Fail(ErrorKind::kInvalidConfig, "bad port in '" + s + "'");
    e.port = static_cast<std::uint16_t>(p);
  }
  if (e.host.empty()) Fail(ErrorKind::kInvalidConfig, "missing host in '" + s + "'");
  return e;
}

Endpoint DefaultEndpoint() {
  const char* env = std::getenv("DFPN_ADDR");
  return env && *env ? ParseEndpoint(env) : Endpoint{};
}

std::vector<float> WireSummary(const Model& model, const AudioBuffer& fingerprint) {
  AudioBuffer narrowed;
  narrowed.sample_rate = fingerprint.sample_rate;
  narrowed.samples.reserve(fingerprint.size());
  for (double v : fingerprint.samples) narrowed.samples.push_back(static_cast<double>(static_cast<float>(v)));
  const auto summary = SummarizeFingerprint(FingerprintEmbedding(model, narrowed));
  return std::vector<float>(summary.begin(), summary.end());
}

FingerprintServer::FingerprintServer(Model model, Endpoint bind) : model_(std::move(model)), bind_(std::move(bind)) {
  if (!model_.variant().has_fingerprint_branch()) {
    Fail(ErrorKind::kInvalidConfig, "the fingerprint service needs a checkpoint with a fingerprint encoder");
  }
  hash_ = nn::ParameterHash(model_.params());
}

FingerprintServer::~FingerprintServer() { Stop(); }

void FingerprintServer::Start() {
  addrinfo* res = Resolve(bind_, true);
  std::string last = "no address";
  for (addrinfo* ai = res; ai && listen_fd_ < 0; ai = ai->ai_next) {
    const int fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) continue;
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (::bind(fd, ai->ai_addr, ai->ai_addrlen) == 0 && ::listen(fd, 64) == 0) {
      listen_fd_ = fd;
    } else {
      last = std::strerror(errno);
      ::close(fd);
    }
  }
  ::freeaddrinfo(res);
  if (listen_fd_ < 0) Fail(ErrorKind::kConnectionFailed, "cannot listen on " + Describe(bind_) + ": " + last);

  sockaddr_storage ss{};
  socklen_t len = sizeof(ss);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&ss), &len);
  port_ = ntohs(ss.ss_family == AF_INET6 ? reinterpret_cast<sockaddr_in6*>(&ss)->sin6_port
                                         : reinterpret_cast<sockaddr_in*>(&ss)->sin_port);
  stop_ = false;
  acceptor_ = std::thread([this] { AcceptLoop(); });
  spdlog::info("fingerprint service on {}:{} (checkpoint {})", bind_.host, port_, HashHex(hash_));
}

void FingerprintServer::Stop() {
  if (listen_fd_ < 0) return;
  stop_ = true;
  if (acceptor_.joinable()) acceptor_.join();
  std::unique_lock lock(mu_);
  for (int fd : open_fds_) ::shutdown(fd, SHUT_RDWR);
  idle_.wait(lock, [this] { return active_ == 0; });
  ::close(listen_fd_);
  listen_fd_ = -1;
}

ServerStats FingerprintServer::stats() const { return {connections_, frames_, errors_}; }

void FingerprintServer::AcceptLoop() {
  while (!stop_) {
    pollfd p{listen_fd_, POLLIN, 0};
    if (::poll(&p, 1, kPollSliceMs) <= 0) continue;
    const int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) continue;
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    ++connections_;
    {
      std::lock_guard lock(mu_);
      ++active_;
      open_fds_.push_back(fd);
    }
    std::thread([this, fd] { Handle(fd); }).detach();
  }
}

void FingerprintServer::Handle(int fd) {
  auto cancelled = [this] { return stop_.load(); };
  const auto forever = Clock::time_point::max();
  auto reply = [&](MsgType type, const std::vector<std::uint8_t>& payload) {
    return WriteAll(fd, EncodeFrame(type, payload), forever, cancelled) == IoStatus::kOk;
  };
  auto error = [&](WireError code, const std::string& msg) {
    ++errors_;
    return reply(MsgType::kError, EncodeError({code, msg}));
  };

  try {
    for (;;) {
      std::uint8_t hdr[kHeaderSize];
      if (ReadExact(fd, hdr, kHeaderSize, forever, cancelled) != IoStatus::kOk) break;
      ++frames_;
      FrameHeader h;
      try {
        h = ParseHeader(hdr);
      } catch (const Error&) {
        error(WireError::kMalformedFrame, "bad magic");
        break;
      }
      if (h.payload_len > kMaxPayload) {
        error(WireError::kMalformedFrame, "payload of " + std::to_string(h.payload_len) + " bytes exceeds the limit");
        break;
      }
      std::vector<std::uint8_t> payload(h.payload_len);
      if (ReadExact(fd, payload.data(), payload.size(), forever, cancelled) != IoStatus::kOk) break;
      if (h.version != kWireVersion) {
        if (!error(WireError::kUnsupportedVersion, "version " + std::to_string(h.version))) break;
        continue;
      }
      if (!Dispatch(fd, h, payload)) break;
    }
  } catch (const std::exception& e) {
    spdlog::warn("fingerprint service: connection dropped: {}", e.what());
  }

  std::lock_guard lock(mu_);
  std::erase(open_fds_, fd);
  ::close(fd);
  if (--active_ == 0) idle_.notify_all();
}

bool FingerprintServer::Dispatch(int fd, const FrameHeader& h, const std::vector<std::uint8_t>& payload) {
  auto cancelled = [this] { return stop_.load(); };
  auto send = [&](MsgType type, const std::vector<std::uint8_t>& body) {
    return WriteAll(fd, EncodeFrame(type, body), Clock::time_point::max(), cancelled) == IoStatus::kOk;
  };
  auto error = [&](WireError code, const std::string& msg) {
    ++errors_;
    return send(MsgType::kError, EncodeError({code, msg}));
  };

  switch (static_cast<MsgType>(h.type)) {
    case MsgType::kPing:
      return send(MsgType::kPong, {});
    case MsgType::kEmbedRequest: {
      EmbedRequest req;
      try {
        req = DecodeEmbedRequest(payload);
      } catch (const Error& e) {
        return error(WireError::kBadPayload, e.what());
      }
      const int sr = model_.config().analysis.sample_rate;
      if (req.sample_rate != static_cast<std::uint32_t>(sr)) {
        return error(WireError::kSampleRateMismatch,
                     "expected " + std::to_string(sr) + " Hz, got " + std::to_string(req.sample_rate));
      }
      if (req.pcm.empty()) return error(WireError::kEmptyFingerprint, "empty fingerprint");
      AudioBuffer audio;
      audio.sample_rate = sr;
      audio.samples.reserve(req.pcm.size());
      for (float v : req.pcm) {
        if (!std::isfinite(v)) return error(WireError::kBadPayload, "non-finite sample");
        audio.samples.push_back(v);
      }
      EmbedResponse resp;
      resp.checkpoint_hash = hash_;
      try {
        resp.values = WireSummary(model_, audio);
      } catch (const Error& e) {
        return error(e.kind() == ErrorKind::kEmptyFingerprint ? WireError::kEmptyFingerprint : WireError::kInternal,
                     e.what());
      }
      return send(MsgType::kEmbedResponse, EncodeEmbedResponse(resp));
    }
    default:
      return error(WireError::kUnknownType, "unexpected message type " + std::to_string(h.type));
  }
}

FetchResult ClientFetch(const Endpoint& addr, const AudioBuffer& fingerprint, std::chrono::milliseconds timeout) {
  const Reply r = RoundTrip(addr, EncodeFrame(MsgType::kEmbedRequest, EncodeEmbedRequest(fingerprint)), timeout);
  switch (static_cast<MsgType>(r.header.type)) {
    case MsgType::kEmbedResponse: {
      const EmbedResponse resp = DecodeEmbedResponse(r.payload);
      return {resp.values, resp.checkpoint_hash};
    }
    case MsgType::kError: {
      const ErrorReply e = DecodeError(r.payload);
      Fail(ErrorKind::kProtocol, std::string("server error ") + std::to_string(static_cast<int>(e.code)) + " (" +
                                     ToString(e.code) + "): " + e.message);
    }
    default:
      Fail(ErrorKind::kProtocol, "unexpected reply type " + std::to_string(r.header.type));
  }
}

std::vector<float> FetchVerified(const Endpoint& addr, const AudioBuffer& fingerprint, const Model& local,
                                 std::chrono::milliseconds timeout) {
  FetchResult r = ClientFetch(addr, fingerprint, timeout);
  const std::uint64_t mine = nn::ParameterHash(local.params());
  if (r.checkpoint_hash != mine) {
    Fail(ErrorKind::kHashMismatch,
         "server checkpoint " + HashHex(r.checkpoint_hash) + " differs from local " + HashHex(mine));
  }
  if (r.summary.size() != local.hidden()) Fail(ErrorKind::kProtocol, "summary width does not match the model");
  return std::move(r.summary);
}

std::optional<std::vector<double>> FetchOrBypass(const Endpoint& addr, const AudioBuffer& fingerprint,
                                                 const Model& local, std::chrono::milliseconds timeout) {
  try {
    const auto s = FetchVerified(addr, fingerprint, local, timeout);
    return std::vector<double>(s.begin(), s.end());
  } catch (const Error& e) {
    spdlog::warn("fingerprint fetch from {} failed ({}): {}; running without fingerprint", Describe(addr),
                 dfinger::ToString(e.kind()), e.what());
    return std::nullopt;
  }
}

bool Ping(const Endpoint& addr, std::chrono::milliseconds timeout) {
  try {
    const Reply r = RoundTrip(addr, EncodeFrame(MsgType::kPing, {}), timeout);
    return r.header.type == static_cast<std::uint8_t>(MsgType::kPong) && r.payload.empty();
  } catch (const Error&) {
    return false;
  }
}

void StalenessPolicy::Validate() const {
  if (!(refresh_interval_s > 0.0 && refresh_interval_s <= max_age_s)) {
    Fail(ErrorKind::kInvalidConfig, "staleness policy needs 0 < refresh_interval_s <= max_age_s");
  }
}

const char* ToString(StalenessAction a) {
  switch (a) {
    case StalenessAction::kUse: return "use";
    case StalenessAction::kUseAndRefresh: return "use+refresh";
    case StalenessAction::kDrop: return "drop";
  }
  return "?";
}

StalenessAction StalenessGuard(double age_s, const StalenessPolicy& policy) {
  policy.Validate();
  if (age_s >= policy.max_age_s) return StalenessAction::kDrop;
  if (age_s >= policy.refresh_interval_s) return StalenessAction::kUseAndRefresh;
  return StalenessAction::kUse;
}

void SummarySlot::Store(std::vector<double> summary, Clock::time_point taken) {
  auto e = std::make_shared<const Entry>(Entry{std::move(summary), taken});
  std::lock_guard lock(mu_);
  entry_ = std::move(e);
}

void SummarySlot::Clear() {
  std::lock_guard lock(mu_);
  entry_.reset();
}

std::shared_ptr<const SummarySlot::Entry> SummarySlot::Load() const {
  std::lock_guard lock(mu_);
  return entry_;
}

SummarySlot::Decision SummarySlot::Resolve(const StalenessPolicy& policy, Clock::time_point now) const {
  const auto e = Load();
  Decision d;
  if (!e) {
    d.refresh = true;
    return d;
  }
  const double age = std::chrono::duration<double>(now - e->taken).count();
  switch (StalenessGuard(age, policy)) {
    case StalenessAction::kUse:
      d.summary = e->summary;
      break;
    case StalenessAction::kUseAndRefresh:
      d.summary = e->summary;
      d.refresh = true;
      break;
    case StalenessAction::kDrop:
      d.refresh = true;
      break;
  }
  return d;
}

}  // namespace dfinger::service
