#pragma once

// Blocking TCP transport for the framed protocol. One thread per accepted
// connection; responses carry request context in the payload so pipelining
// is safe.

#include <atomic>
#include <functional>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "infershare/protocol.hpp"

namespace infershare {

class TcpConn {
 public:
  explicit TcpConn(int fd) : fd_(fd) {}
  TcpConn(const TcpConn&) = delete;
  TcpConn& operator=(const TcpConn&) = delete;
  TcpConn(TcpConn&& o) noexcept : fd_(o.fd_), decoder_(std::move(o.decoder_)) { o.fd_ = -1; }
  ~TcpConn();

  // host:port
  static TcpConn connect_to(const std::string& address);

  void send_frame(MsgKind kind, const nlohmann::json& payload);
  // nullopt on clean EOF; throws Error on protocol violations or io errors.
  std::optional<Frame> recv_frame();
  // send + wait for one response
  Frame call(MsgKind kind, const nlohmann::json& payload);

  void close();
  bool valid() const { return fd_ >= 0; }

 private:
  int fd_ = -1;
  FrameDecoder decoder_;
};

class TcpServer {
 public:
  using Handler = std::function<void(TcpConn&)>;

  // address "host:port"; port 0 binds an ephemeral port.
  TcpServer(const std::string& address, Handler handler);
  ~TcpServer();

  void start();
  void stop();
  int port() const { return port_; }
  std::string address() const;

 private:
  void accept_loop();

  int listen_fd_ = -1;
  int port_ = 0;
  std::string host_;
  Handler handler_;
  std::thread accept_thread_;
  std::vector<std::thread> conn_threads_;
  std::mutex conns_mu_;
  std::set<int> open_fds_;
  std::atomic<bool> running_{false};
};

std::pair<std::string, int> split_host_port(const std::string& address);

}  // namespace infershare
