#pragma once

// Real-mode processes. Both services wrap the same deterministic cores used
// by the simulator and drive them with wall-clock time and real threads: one
// serialized owner (mutex) mutates core state; the transfer and execute
// stages each run on their own thread, with no lock held during execution.

#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>

#include "infershare/billing.hpp"
#include "infershare/config.hpp"
#include "infershare/controller.hpp"
#include "infershare/executor.hpp"
#include "infershare/net.hpp"
#include "infershare/worker.hpp"

namespace infershare {

double steady_now_ms();

class WorkerService {
 public:
  struct Options {
    std::string worker_id = "worker";
    std::string listen = "127.0.0.1:0";
    std::string controller;  // empty = standalone (no registration/heartbeat)
    std::string profile_name = "cpu-reference";
    DeviceProfile profile;
    WorkerConfig worker_config;
    std::string secret = "infershare-dev";
    double heartbeat_ms = 500.0;
  };

  explicit WorkerService(Options opt);
  ~WorkerService();

  void start();
  void stop();
  std::string address() const { return server_->address(); }

 private:
  struct StageJob {
    Resource resource;
    std::vector<std::string> ids;
    double duration_ms;
  };

  void handle_conn(TcpConn& conn);
  nlohmann::json handle(MsgKind kind, const nlohmann::json& p);
  void dispatch(std::vector<Action>&& actions);
  void run_stage(const StageJob& job);
  void stage_loop(Resource resource);
  void heartbeat_loop();

  Options opt_;
  std::mutex mu_;
  WorkerCore core_;
  BillingLedger billing_;
  std::map<std::string, std::shared_ptr<const ModelManifest>> manifests_;
  std::map<std::string, WeightStore> weights_;
  std::map<std::string, std::shared_ptr<const Tensor>> inputs_;
  std::map<std::string, std::string> input_models_;  // request -> model
  std::map<std::string, CompletionRecord> finished_;
  std::map<std::string, Tensor> outputs_;
  std::condition_variable finished_cv_;

  std::mutex jobs_mu_;
  std::condition_variable jobs_cv_;
  std::deque<StageJob> transfer_jobs_, execute_jobs_;
  double window_busy_ms_ = 0.0;

  std::unique_ptr<TcpServer> server_;
  std::thread transfer_thread_, execute_thread_, heartbeat_thread_;
  std::atomic<bool> running_{false};
};

class ControllerService {
 public:
  struct Options {
    ClusterConfig cluster;
    std::string listen;  // defaults to cluster.controller_listen
  };

  explicit ControllerService(Options opt);
  ~ControllerService();

  void start();
  void stop();
  std::string address() const { return server_->address(); }

 private:
  void handle_conn(TcpConn& conn);
  nlohmann::json handle(MsgKind kind, const nlohmann::json& p);
  nlohmann::json worker_call(const std::string& worker_id, MsgKind kind,
                             const nlohmann::json& payload);
  void apply_ctrl_actions(const std::vector<CtrlAction>& actions);
  void monitor_loop();

  Options opt_;
  std::mutex mu_;
  ControllerCore core_;
  std::map<std::string, std::string> worker_addrs_;
  // cumulative per-tenant charges, latest report per worker
  std::map<std::string, std::map<std::string, double>> worker_charges_;
  std::map<std::string, int64_t> demand_counts_;
  uint64_t infer_seq_ = 0;

  std::unique_ptr<TcpServer> server_;
  std::thread monitor_thread_;
  std::atomic<bool> running_{false};
};

}  // namespace infershare
