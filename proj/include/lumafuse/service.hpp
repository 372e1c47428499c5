#pragma once
// Length-framed enhancement service over TCP.
//
// Frame: u32 big-endian payload length, then the payload. A request payload
// is a binary PPM; the response payload is the enhanced PPM. Errors come back
// as a zero length followed by one UTF-8 line ending in '\n'.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <sys/time.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "lumafuse/image.hpp"
#include "lumafuse/network.hpp"
#include "lumafuse/weights.hpp"

namespace lumafuse {

inline constexpr std::uint32_t kDefaultMaxPayload = 32u << 20;

class NetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Bytes frame_bytes(std::span<const std::uint8_t> payload) {
  if (payload.size() > 0xffffffffu) throw ParameterError("payload too large to frame");
  const auto n = static_cast<std::uint32_t>(payload.size());
  Bytes out(4 + payload.size());
  out[0] = static_cast<std::uint8_t>(n >> 24);
  out[1] = static_cast<std::uint8_t>(n >> 16);
  out[2] = static_cast<std::uint8_t>(n >> 8);
  out[3] = static_cast<std::uint8_t>(n);
  if (!payload.empty()) std::memcpy(out.data() + 4, payload.data(), payload.size());
  return out;
}

inline Bytes error_frame(std::string message) {
  for (char& c : message) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  Bytes out(4, 0);
  out.insert(out.end(), message.begin(), message.end());
  out.push_back('\n');
  return out;
}

// Turns one request payload into a complete response frame. Never throws for
// bad input.
inline Bytes handle_request(std::span<const std::uint8_t> payload, const WeightStore& enc, const WeightStore& det,
                            DetailInput wiring = DetailInput::Original) {
  if (payload.empty()) return error_frame("empty payload");
  try {
    const Image img = load_ppm(payload);
    return frame_bytes(save_ppm(enhance(img, enc, det, wiring)));
  } catch (const FormatError& e) {
    return error_frame(std::string("bad image: ") + e.what() + " at byte " + std::to_string(e.offset()));
  } catch (const std::exception& e) {
    return error_frame(std::string("rejected: ") + e.what());
  }
}

namespace detail {

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() { reset(); }

  int get() const { return fd_; }
  explicit operator bool() const { return fd_ >= 0; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

inline bool send_all(int fd, std::span<const std::uint8_t> data) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    sent += static_cast<std::size_t>(n);
  }
  return true;
}

// False on EOF, timeout or error before `out` is full.
inline bool recv_all(int fd, std::uint8_t* out, std::size_t len) {
  std::size_t got = 0;
  while (got < len) {
    const ssize_t n = ::recv(fd, out + got, len - got, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    got += static_cast<std::size_t>(n);
  }
  return true;
}

inline void set_timeout(int fd, int ms) {
  if (ms <= 0) return;
  timeval tv{ms / 1000, (ms % 1000) * 1000};
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
  ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
}

inline std::uint32_t be32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

inline addrinfo* resolve(const std::string& host, std::uint16_t port, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(), std::to_string(port).c_str(), &hints, &res);
  if (rc != 0) throw NetError("cannot resolve '" + host + "': " + ::gai_strerror(rc));
  return res;
}

}  // namespace detail

struct ServerConfig {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;  // 0 picks a free port
  std::uint32_t max_payload = kDefaultMaxPayload;
  std::size_t workers = 2;
  std::size_t queue_capacity = 16;  // accepted connections waiting for a worker
  int io_timeout_ms = 30000;
  DetailInput wiring = DetailInput::Original;
};

class Server {
 public:
  Server(ServerConfig cfg, const WeightStore& enc, const WeightStore& det) : cfg_(std::move(cfg)), enc_(enc), det_(det) {
    check_arch(enc_, encoder_arch());
    check_arch(det_, detail_arch());
    if (cfg_.workers == 0) throw ParameterError("server needs at least one worker");
    if (cfg_.queue_capacity == 0) throw ParameterError("server queue capacity must be >= 1");
  }
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;
  ~Server() { stop(); }

  // Binds, listens and starts the accept loop and workers. Returns the bound port.
  std::uint16_t start() {
    addrinfo* res = detail::resolve(cfg_.host, cfg_.port, true);
    std::string last = "no address";
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
      detail::Fd fd(::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol));
      if (!fd) continue;
      const int one = 1;
      ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
      if (::bind(fd.get(), ai->ai_addr, ai->ai_addrlen) == 0 && ::listen(fd.get(), 64) == 0) {
        listen_fd_ = std::move(fd);
        break;
      }
      last = std::strerror(errno);
    }
    ::freeaddrinfo(res);
    if (!listen_fd_) throw NetError("cannot listen on " + cfg_.host + ":" + std::to_string(cfg_.port) + ": " + last);

    sockaddr_storage addr{};
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_.get(), reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.ss_family == AF_INET6 ? reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port
                                             : reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
    running_ = true;
    for (std::size_t i = 0; i < cfg_.workers; ++i) workers_.emplace_back([this] { worker_loop(); });
    acceptor_ = std::thread([this] { accept_loop(); });
    return port_;
  }

  void stop() {
    if (!running_.exchange(false)) return;
    ::shutdown(listen_fd_.get(), SHUT_RDWR);
    if (acceptor_.joinable()) acceptor_.join();
    {
      std::lock_guard lock(mu_);
      stopping_ = true;
      for (auto& fd : queue_) ::shutdown(fd.get(), SHUT_RDWR);
    }
    cv_.notify_all();
    {
      std::lock_guard lock(mu_);
      for (int fd : active_) ::shutdown(fd, SHUT_RDWR);
    }
    for (auto& t : workers_) t.join();
    workers_.clear();
    queue_.clear();
    listen_fd_.reset();
  }

  std::uint16_t port() const { return port_; }
  std::uint64_t requests_served() const { return served_.load(); }

  // Serves one connection until the peer closes, times out or sends an
  // oversize header.
  void serve_connection(int fd) const {
    std::uint8_t hdr[4];
    Bytes payload;
    while (detail::recv_all(fd, hdr, 4)) {
      const std::uint32_t len = detail::be32(hdr);
      if (len > cfg_.max_payload) {
        // The body is never read; the stream cannot be resynchronised.
        detail::send_all(fd, error_frame("payload of " + std::to_string(len) + " bytes exceeds cap of " +
                                         std::to_string(cfg_.max_payload)));
        return;
      }
      payload.resize(len);
      if (len > 0 && !detail::recv_all(fd, payload.data(), len)) return;
      const Bytes resp = handle_request(payload, enc_, det_, cfg_.wiring);
      ++served_;
      if (!detail::send_all(fd, resp)) return;
    }
  }

 private:
  void accept_loop() {
    while (running_) {
      const int c = ::accept(listen_fd_.get(), nullptr, nullptr);
      if (c < 0) {
        if (errno == EINTR || errno == ECONNABORTED) continue;
        if (!running_) return;
        if (errno == EMFILE || errno == ENFILE) {
          std::this_thread::sleep_for(std::chrono::milliseconds(10));
          continue;
        }
        return;
      }
      detail::Fd fd(c);
      detail::set_timeout(c, cfg_.io_timeout_ms);
      std::unique_lock lock(mu_);
      if (queue_.size() >= cfg_.queue_capacity) {
        lock.unlock();
        detail::send_all(c, error_frame("server busy"));
        continue;
      }
      queue_.push_back(std::move(fd));
      lock.unlock();
      cv_.notify_one();
    }
  }

  void worker_loop() {
    for (;;) {
      detail::Fd fd;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
        if (stopping_) return;
        fd = std::move(queue_.front());
        queue_.pop_front();
        active_.push_back(fd.get());
      }
      serve_connection(fd.get());
      std::lock_guard lock(mu_);
      std::erase(active_, fd.get());
    }
  }

  ServerConfig cfg_;
  const WeightStore& enc_;
  const WeightStore& det_;
  detail::Fd listen_fd_;
  std::uint16_t port_ = 0;
  std::atomic<bool> running_{false};
  mutable std::atomic<std::uint64_t> served_{0};
  std::thread acceptor_;
  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<detail::Fd> queue_;
  std::vector<int> active_;
  bool stopping_ = false;
};

// A decoded response: payload on success, message on an error frame.
struct Response {
  bool ok = false;
  Bytes payload;
  std::string error;
};

class Client {
 public:
  Client(const std::string& host, std::uint16_t port, int timeout_ms = 30000) {
    addrinfo* res = detail::resolve(host, port, false);
    for (addrinfo* ai = res; ai && !fd_; ai = ai->ai_next) {
      detail::Fd fd(::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol));
      if (fd && ::connect(fd.get(), ai->ai_addr, ai->ai_addrlen) == 0) fd_ = std::move(fd);
    }
    ::freeaddrinfo(res);
    if (!fd_) throw NetError("cannot connect to " + host + ":" + std::to_string(port));
    detail::set_timeout(fd_.get(), timeout_ms);
  }

  // Sends raw bytes; the caller is responsible for framing.
  void send_raw(std::span<const std::uint8_t> bytes) {
    if (!detail::send_all(fd_.get(), bytes)) throw NetError("send failed");
  }

  Response receive() {
    std::uint8_t hdr[4];
    if (!detail::recv_all(fd_.get(), hdr, 4)) throw NetError("connection closed before response");
    const std::uint32_t len = detail::be32(hdr);
    Response r;
    if (len == 0) {
      char c;
      while (detail::recv_all(fd_.get(), reinterpret_cast<std::uint8_t*>(&c), 1) && c != '\n') r.error += c;
      return r;
    }
    r.payload.resize(len);
    if (!detail::recv_all(fd_.get(), r.payload.data(), len)) throw NetError("truncated response");
    r.ok = true;
    return r;
  }

  Response request(std::span<const std::uint8_t> payload) {
    send_raw(frame_bytes(payload));
    return receive();
  }

 private:
  detail::Fd fd_;
};

}  // namespace lumafuse
