#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "sof/error.hpp"

namespace sof::wire {

/// Owning file descriptor for a TCP socket.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~Socket() { close(); }

  [[nodiscard]] int fd() const noexcept { return fd_; }
  [[nodiscard]] bool valid() const noexcept { return fd_ >= 0; }
  void close() noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  void shutdown() noexcept {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

 private:
  int fd_ = -1;
};

inline std::string errno_text() { return std::strerror(errno); }

/// Waits for readability; false on timeout.
inline bool wait_readable(int fd, int timeout_ms) {
  pollfd p{fd, POLLIN, 0};
  for (;;) {
    const int r = ::poll(&p, 1, timeout_ms);
    if (r >= 0) return r > 0;
    if (errno != EINTR) fail(ErrorCode::IoFailure, "poll: " + errno_text());
  }
}

inline Socket listen_tcp(const std::string& host, std::uint16_t port, int backlog = 16) {
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  if (!s.valid()) fail(ErrorCode::IoFailure, "socket: " + errno_text());
  const int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) fail(ErrorCode::InvalidArgument, "bad IPv4 address " + host);
  if (::bind(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    fail(ErrorCode::IoFailure, "bind " + host + ":" + std::to_string(port) + ": " + errno_text());
  }
  if (::listen(s.fd(), backlog) != 0) fail(ErrorCode::IoFailure, "listen: " + errno_text());
  return s;
}

inline std::uint16_t local_port(const Socket& s) {
  sockaddr_in addr{};
  socklen_t len = sizeof addr;
  if (::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len) != 0) fail(ErrorCode::IoFailure, "getsockname");
  return ntohs(addr.sin_port);
}

/// nullopt on timeout.
inline std::optional<Socket> accept_tcp(const Socket& listener, int timeout_ms) {
  if (!wait_readable(listener.fd(), timeout_ms)) return std::nullopt;
  const int fd = ::accept(listener.fd(), nullptr, nullptr);
  if (fd < 0) {
    if (errno == EINTR || errno == EAGAIN || errno == ECONNABORTED) return std::nullopt;
    fail(ErrorCode::IoFailure, "accept: " + errno_text());
  }
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return Socket(fd);
}

inline Socket connect_tcp(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || res == nullptr) {
    fail(ErrorCode::ServerUnreachable, "cannot resolve " + host);
  }
  Socket s(::socket(res->ai_family, res->ai_socktype, res->ai_protocol));
  const int rc = s.valid() ? ::connect(s.fd(), res->ai_addr, res->ai_addrlen) : -1;
  ::freeaddrinfo(res);
  if (rc != 0) fail(ErrorCode::ServerUnreachable, "connect " + host + ":" + std::to_string(port) + ": " + errno_text());
  const int one = 1;
  ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return s;
}

/// Newline-framed messages over a connected socket.
class LineStream {
 public:
  explicit LineStream(Socket s) : socket_(std::move(s)) {}

  void send(std::string_view line) {
    while (!line.empty()) {
      const auto n = ::send(socket_.fd(), line.data(), line.size(), MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        fail(ErrorCode::IoFailure, "send: " + errno_text());
      }
      line.remove_prefix(static_cast<std::size_t>(n));
    }
  }

  /// Next complete line without its newline; nullopt on timeout. Throws IoFailure once the peer closes.
  std::optional<std::string> read_line(int timeout_ms) {
    for (;;) {
      if (auto pos = buffer_.find('\n'); pos != std::string::npos) {
        auto line = buffer_.substr(0, pos);
        buffer_.erase(0, pos + 1);
        return line;
      }
      if (!wait_readable(socket_.fd(), timeout_ms)) return std::nullopt;
      char chunk[65536];
      const auto n = ::recv(socket_.fd(), chunk, sizeof chunk, 0);
      if (n < 0) {
        if (errno == EINTR) continue;
        fail(ErrorCode::IoFailure, "recv: " + errno_text());
      }
      if (n == 0) fail(ErrorCode::IoFailure, "connection closed");
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  Socket& socket() noexcept { return socket_; }

 private:
  Socket socket_;
  std::string buffer_;
};

}  // namespace sof::wire
