#pragma once

// Logically centralized controller: model registry, placement, replication,
// demand-driven scaling, saturation migration, routing, failure recovery.
// Same shape as WorkerCore: a deterministic state machine driven by messages
// (heartbeats, demand reports, acks) that returns actions for the driver to
// execute. Registry mutations are journaled to an append-only log; restart
// replays it.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "infershare/manifest.hpp"
#include "infershare/predictor.hpp"

namespace infershare {

enum class ModelState { Registering, Active, Migrating, Deleted };

struct RegistryEntry {
  std::string model_id;
  std::string tenant_id;
  std::shared_ptr<const ModelManifest> manifest;
  std::vector<std::string> replicas;          // acked and routable
  std::vector<std::string> pending_replicas;  // load sent, ack outstanding
  double demand_ewma = 0.0;                   // inf/s
  ModelState state = ModelState::Registering;
};

struct WorkerStatsLite {
  double load_frac = 0.0;  // execute-resource busy fraction over the last window
  double pending_transfer_ms = 0.0;
  double pending_execute_ms = 0.0;
  std::vector<std::string> device_resident;
  std::vector<std::string> host_resident;
};

struct WorkerInfo {
  std::string worker_id;
  DeviceProfile profile;
  int64_t host_cache_bytes = 0;
  double load_ewma = 0.0;
  double last_heartbeat_ms = 0.0;
  bool alive = true;
  WorkerStatsLite last_stats;
  std::set<std::string> hosted;  // models placed here (acked or pending)
};

struct RoutingTable {
  uint64_t version = 0;
  std::map<std::string, std::vector<std::string>> replicas;  // model -> acked workers
};

struct CtrlAction {
  enum class Kind { LoadModel, EvictModel } kind;
  std::string worker_id;
  std::string model_id;
};

struct ControllerConfig {
  double heartbeat_ms = 500.0;
  int heartbeat_miss_limit = 3;
  double demand_window_ms = 1000.0;
  double demand_decay = 0.3;
  double saturation_theta = 0.7;
  double utilization_mu = 0.8;
  int min_replicas = 1;
  bool autoscale = true;
  int tenant_quota_models = 100;
  int64_t tenant_quota_bytes = 100ll * 1000 * 1000 * 1000;
  std::string journal_path;  // empty = no journal
};

struct UploadResult {
  std::string model_id;
  std::string endpoint;  // "/models/<id>"
  std::vector<CtrlAction> actions;
};

class ControllerCore {
 public:
  ControllerCore(ControllerConfig cfg, std::map<std::string, DeviceProfile> profiles);

  // --- membership -----------------------------------------------------------
  void register_worker(const std::string& worker_id, const std::string& profile_name,
                       int64_t host_cache_bytes, double now);
  std::vector<CtrlAction> heartbeat_scan(double now);
  void on_heartbeat(const std::string& worker_id, const WorkerStatsLite& stats, double now);

  // --- registry -------------------------------------------------------------
  // replica_count 0 means min_replicas; `pin` overrides placement.
  UploadResult upload_model(const std::string& tenant_id,
                            std::shared_ptr<const ModelManifest> manifest, double now,
                            int replica_count = 0, const std::vector<std::string>& pin = {});
  std::vector<CtrlAction> delete_model(const std::string& model_id, double now);
  std::vector<CtrlAction> on_load_ack(const std::string& worker_id, const std::string& model_id,
                                      bool ok, double now);
  void on_evict_ack(const std::string& worker_id, const std::string& model_id, double now);

  // --- scaling / migration ---------------------------------------------------
  // Per-window demand counts (requests in the last window), keyed by model.
  std::vector<CtrlAction> demand_tick(double now,
                                      const std::map<std::string, int64_t>& window_counts);
  int scale_target(const RegistryEntry& entry) const;
  std::vector<CtrlAction> migrate_for_saturation(const std::string& worker_id, double now);
  std::vector<CtrlAction> handle_worker_failure(const std::string& worker_id, double now);

  // --- routing ----------------------------------------------------------------
  // Weighted pick favoring device-resident replicas, then least pending work.
  // Throws ModelUnavailable.
  std::string route(const std::string& model_id, const std::set<std::string>& exclude = {}) const;
  const RoutingTable& routing() const { return routing_; }

  // --- introspection -----------------------------------------------------------
  const RegistryEntry* find_model(const std::string& model_id) const;
  const WorkerInfo* find_worker(const std::string& worker_id) const;
  std::vector<const RegistryEntry*> models() const;
  std::vector<const WorkerInfo*> workers() const;
  const ControllerConfig& config() const { return cfg_; }

  // (t, model, acked replica count) after every replica-set change
  struct ReplicaEvent {
    double t;
    std::string model_id;
    int replicas;
  };
  const std::vector<ReplicaEvent>& replica_events() const { return replica_events_; }

  // Placement: greedy minimum projected load with host-cache byte fit; never
  // two replicas of one model on a worker. Throws InsufficientCapacity.
  std::vector<std::string> place(const RegistryEntry& entry, int replica_count,
                                 const std::set<std::string>& exclude = {}) const;

 private:
  void bump_routing(double now, const std::string& model_id);
  void journal_append(const std::string& op, const std::string& tenant,
                      const std::string& model_id, const std::string& payload);
  void journal_replay();
  int64_t committed_bytes(const WorkerInfo& w) const;
  double worker_capacity_inf_s(const WorkerInfo& w, const ModelManifest& m) const;

  ControllerConfig cfg_;
  std::map<std::string, DeviceProfile> profiles_;
  std::map<std::string, WorkerInfo> workers_;
  std::map<std::string, RegistryEntry> registry_;
  RoutingTable routing_;
  std::vector<ReplicaEvent> replica_events_;
  // in-flight migrations: model -> (from worker, to worker)
  std::map<std::string, std::pair<std::string, std::string>> migrations_;
  uint64_t model_seq_ = 0;
};

}  // namespace infershare
