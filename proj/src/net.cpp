#include "infershare/net.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>

namespace infershare {

std::pair<std::string, int> split_host_port(const std::string& address) {
  size_t colon = address.find_last_of(':');
  if (colon == std::string::npos)
    throw Error(Errc::ConfigInvalid, "address '" + address + "' is not host:port");
  return {address.substr(0, colon), std::stoi(address.substr(colon + 1))};
}

TcpConn::~TcpConn() { close(); }

void TcpConn::close() {
  if (fd_ >= 0) {
    ::shutdown(fd_, SHUT_RDWR);
    ::close(fd_);
    fd_ = -1;
  }
}

TcpConn TcpConn::connect_to(const std::string& address) {
  auto [host, port] = split_host_port(address);
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw Error(Errc::IoError, "socket: " + std::string(strerror(errno)));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<uint16_t>(port));
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    throw Error(Errc::IoError, "bad address " + host);
  }
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    int err = errno;
    ::close(fd);
    throw Error(Errc::IoError, "connect " + address + ": " + strerror(err));
  }
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return TcpConn(fd);
}

void TcpConn::send_frame(MsgKind kind, const nlohmann::json& payload) {
  std::vector<uint8_t> bytes = encode_frame(kind, payload);
  size_t sent = 0;
  while (sent < bytes.size()) {
    ssize_t n = ::send(fd_, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (n <= 0) throw Error(Errc::IoError, "send: " + std::string(strerror(errno)));
    sent += static_cast<size_t>(n);
  }
}

std::optional<Frame> TcpConn::recv_frame() {
  uint8_t chunk[4096];
  while (true) {
    DecodeResult r = decoder_.next();
    if (r.status == DecodeResult::Status::Ok) return r.frame;
    if (r.status == DecodeResult::Status::Bad) throw Error(r.error, r.detail);
    ssize_t n = ::recv(fd_, chunk, sizeof(chunk), 0);
    if (n == 0) return std::nullopt;
    if (n < 0) throw Error(Errc::IoError, "recv: " + std::string(strerror(errno)));
    decoder_.feed(chunk, static_cast<size_t>(n));
  }
}

Frame TcpConn::call(MsgKind kind, const nlohmann::json& payload) {
  send_frame(kind, payload);
  std::optional<Frame> resp = recv_frame();
  if (!resp) throw Error(Errc::IoError, "connection closed mid-call");
  return *resp;
}

TcpServer::TcpServer(const std::string& address, Handler handler) : handler_(std::move(handler)) {
  auto [host, port] = split_host_port(address);
  host_ = host;
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw Error(Errc::IoError, "socket: " + std::string(strerror(errno)));
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<uint16_t>(port));
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    throw Error(Errc::IoError, "bad bind address " + host);
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
      ::listen(listen_fd_, 64) != 0) {
    int err = errno;
    ::close(listen_fd_);
    throw Error(Errc::IoError, "bind/listen " + address + ": " + strerror(err));
  }
  sockaddr_in bound{};
  socklen_t blen = sizeof(bound);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &blen);
  port_ = ntohs(bound.sin_port);
}

TcpServer::~TcpServer() { stop(); }

std::string TcpServer::address() const { return host_ + ":" + std::to_string(port_); }

void TcpServer::start() {
  running_ = true;
  accept_thread_ = std::thread([this] { accept_loop(); });
}

void TcpServer::accept_loop() {
  while (running_) {
    int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (!running_) break;
      continue;
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    {
      std::lock_guard<std::mutex> lock(conns_mu_);
      open_fds_.insert(fd);
    }
    conn_threads_.emplace_back([this, fd] {
      {
        TcpConn conn(fd);
        try {
          handler_(conn);
        } catch (const std::exception&) {
          // connection-scoped failures must never take the server down
        }
        std::lock_guard<std::mutex> lock(conns_mu_);
        open_fds_.erase(fd);
      }
    });
  }
}

void TcpServer::stop() {
  if (!running_.exchange(false)) return;
  if (listen_fd_ >= 0) {
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
  {
    // unblock handlers stuck in recv
    std::lock_guard<std::mutex> lock(conns_mu_);
    for (int fd : open_fds_) ::shutdown(fd, SHUT_RDWR);
  }
  if (accept_thread_.joinable()) accept_thread_.join();
  for (auto& t : conn_threads_)
    if (t.joinable()) t.join();
  conn_threads_.clear();
}

}  // namespace infershare
