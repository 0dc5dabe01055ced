#pragma once

// One worker hosts many tenants' models in a single long-lived process. It
// owns two serial resources (transfer, execute), the remote->host->device
// cache hierarchy, and the admission scheduler.
//
// WorkerCore is a deterministic, copyable state machine with no clock and no
// RNG: every entry point takes `now`, stage durations come out as actions,
// and the caller (discrete-event simulator or real-mode driver) delivers
// completions back. Completion estimation clones the core and replays it to
// completion — the predictor and the executor literally share one model.

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "infershare/predictor.hpp"
#include "infershare/scheduler.hpp"

namespace infershare {

struct Tensor;

enum class RequestState {
  QueuedTransfer,
  QueuedExecute,
  Transferring,
  Executing,
  Done,
  Rejected,
  Cancelled,
  Rerouted,
  Faulted,  // terminal error outcome (injected device fault)
};
const char* request_state_name(RequestState s);

struct InferenceRequest {
  std::string request_id;
  std::string tenant_id;
  std::string model_id;
  int batch = 1;
  double arrival_ms = 0.0;
  std::optional<double> deadline_ms;  // relative to arrival
  // Real mode carries the tensor; simulation carries sizes only.
  std::shared_ptr<const Tensor> input;
  // Sweep hook: serve this request at the given residency level (HostHit
  // makes it re-pay the host->device copy even when cached). Assumes the
  // model is at least host-resident.
  std::optional<Residency> force_residency;

  double deadline_abs_ms() const;  // +inf when absent
};

struct CompletionRecord {
  std::string request_id;
  std::string tenant_id;
  std::string model_id;
  std::string worker_id;
  int batch = 1;
  int stage_batch = 1;  // total coalesced batch of the execute stage served in
  double arrival_ms = 0.0;
  double admit_ms = 0.0;
  double transfer_start_ms = -1.0;
  double transfer_end_ms = -1.0;
  double fetch_ms = 0.0;  // components of the transfer stage
  double h2d_ms = 0.0;
  double exec_start_ms = -1.0;
  double exec_end_ms = -1.0;
  double done_ms = -1.0;
  double deadline_rel_ms = -1.0;  // <0 when the request had no deadline
  Residency residency = Residency::DeviceHit;
  RequestState outcome = RequestState::Done;
  std::string detail;  // reject/cancel reason
  bool has_estimate = false;
  LatencyEstimate admit_estimate;
  double device_cost_per_hour = 0.0;
  std::string device_kind;

  double latency_ms() const { return done_ms - arrival_ms; }
};

enum class Resource { Transfer, Execute };
const char* resource_name(Resource r);

struct Action {
  enum class Kind { StartStage, Complete, LoadAck, EvictAck } kind;
  Resource resource = Resource::Transfer;
  std::vector<std::string> request_ids;  // >1 when execute stages are batched
  double duration_ms = 0.0;              // StartStage
  CompletionRecord record;               // Complete
  std::string model_id;                  // LoadAck / EvictAck
};

struct RerouteDecision {
  std::string request_id;
  std::string tenant_id;
  std::string model_id;
  LatencyEstimate estimate;  // the recomputed estimate that missed the deadline
  CompletionRecord record;   // outcome Rerouted, for the trace
};

struct CacheEntry {
  int64_t bytes = 0;
  double last_used_ms = 0.0;
  int64_t last_used_seq = 0;
  int pinned = 0;
  bool loading = false;
};

struct ResidencyPlan {
  bool feasible = true;
  bool need_fetch = false;
  bool need_transfer = false;
  std::vector<std::string> evict_host;
  std::vector<std::string> evict_device;
  std::vector<Finding> findings;  // CacheThrash warnings
  bool empty() const { return !need_fetch && !need_transfer && evict_host.empty() && evict_device.empty(); }
};

struct WorkerConfig {
  std::string worker_id;
  SchedPolicy policy = SchedPolicy::Fifo;
  bool fair = false;
  bool batching = false;
  double admission_ceiling_ms = 1000.0;  // per resource
  double per_tenant_ceiling_ms = 0.0;    // 0 = unlimited
  int64_t host_cache_bytes = 0;
  int cache_thrash_window = 100;
  std::map<std::string, int> tenant_weights;  // fair round-robin weights
};

struct WorkerQueueSnapshot {
  std::string worker_id;
  double now_ms = 0.0;
  SchedPolicy policy = SchedPolicy::Fifo;
  double pending_transfer_ms = 0.0;  // queued + remaining in-flight
  double pending_execute_ms = 0.0;
  int queued_transfer = 0;
  int queued_execute = 0;
  std::map<std::string, Residency> model_residency;
  std::map<std::string, double> tenant_pending_ms;  // both resources combined
  int64_t device_bytes_used = 0;
  int64_t device_bytes_capacity = 0;
  int64_t host_bytes_used = 0;
  int64_t host_bytes_capacity = 0;
};

struct AdmitOutcome {
  bool admitted = false;
  bool has_estimate = false;
  LatencyEstimate estimate;
  Errc reason = Errc::Overloaded;  // when rejected
  std::string detail;
};

class WorkerCore {
 public:
  WorkerCore(WorkerConfig cfg, DeviceProfile profile);

  // --- control plane -------------------------------------------------------
  // Registers the model and starts the remote->host load on the transfer
  // resource; a LoadAck action is emitted when host residency is reached.
  // With instant=true the model is placed host-resident immediately (cluster
  // bring-up before the measurement window).
  void load_model(std::shared_ptr<const ModelManifest> manifest, double now, bool instant = false);
  // Drains and removes the model; EvictAck is emitted once nothing pins it.
  // Throws UnknownModel.
  void evict_model(const std::string& model_id, double now);
  bool has_model(const std::string& model_id) const;

  // --- data plane -----------------------------------------------------------
  AdmitOutcome admit(const InferenceRequest& req, double now, bool want_estimate);
  // Starts stages on free resources; returns StartStage/LoadAck/... actions.
  std::vector<Action> poll(double now);
  // Driver callback when a started stage finishes (realized == scheduled).
  std::vector<Action> on_stage_complete(Resource resource, const std::string& request_id,
                                        double now);
  // Re-checks queued (never executing) deadline requests; cancels the ones
  // that can no longer make it so the controller can re-route them.
  std::vector<RerouteDecision> reroute_check(double now);
  // Fails the currently executing stage (test hook).
  std::vector<Action> inject_device_fault(double now);
  // Worker death: every pending request completes as Cancelled so the router
  // can retry it elsewhere under a new id.
  std::vector<Action> drain_all(double now, const std::string& detail);

  // --- introspection --------------------------------------------------------
  WorkerQueueSnapshot snapshot(double now) const;
  ResidencyPlan plan_residency(const std::string& model_id, Residency target, double now) const;
  Residency residency_of(const std::string& model_id) const;
  double pending_ms(Resource r, double now) const;
  const DeviceProfile& profile() const { return profile_; }
  const WorkerConfig& config() const { return cfg_; }
  CalibrationState& calibration() { return calibration_; }
  const CalibrationState& calibration() const { return calibration_; }
  const std::vector<Finding>& findings() const { return findings_; }
  int64_t device_bytes_used() const { return device_.used; }
  int64_t host_bytes_used() const { return host_.used; }
  std::vector<std::string> resident_models(Residency level) const;
  const ModelManifest* model_manifest(const std::string& model_id) const;

 private:
  friend LatencyEstimate estimate_completion(const WorkerCore& worker, const InferenceRequest& req,
                                             double now);

  struct PendingRequest {
    InferenceRequest req;
    RequestState state = RequestState::QueuedTransfer;
    double stage_start_ms = -1.0;
    bool holds_device_pin = false;
    bool holds_host_pin = false;
    CompletionRecord record;
  };

  struct SerialResource {
    std::vector<std::string> occupants;  // executing batch shares the resource
    double stage_start_ms = 0.0;
    double stage_end_ms = 0.0;
    int stage_batch = 0;
    std::vector<std::string> queue;  // request ids, policy picks
  };

  struct CacheLevel {
    int64_t capacity = 0;
    int64_t used = 0;
    std::map<std::string, CacheEntry> entries;
  };

  struct ModelInfo {
    std::shared_ptr<const ModelManifest> manifest;
    bool draining = false;
    bool load_acked = false;
  };

  double stage_cost_ms(const PendingRequest& pr, Resource r, double now) const;
  double exec_cost_ms(const std::string& model_id, int batch) const;
  std::vector<SchedCandidate> candidates_for(const SerialResource& res, Resource r,
                                             double now) const;
  bool reserve_cache(const std::string& model_id, Residency target, double now);
  void touch(CacheLevel& level, const std::string& model_id, double now);
  void unpin(const std::string& model_id);
  std::vector<Action> finish_evictions(double now);
  void finalize(PendingRequest& pr, RequestState outcome, double now, const std::string& detail,
                std::vector<Action>* out);
  LatencyEstimate replay_estimate(const InferenceRequest& req, double now) const;
  LatencyEstimate replay_until(const std::string& request_id, double now) const;
  LatencyEstimate run_replay(const std::string& request_id, double now);
  void enqueue(const InferenceRequest& req, double now, const AdmitOutcome& outcome);

  WorkerConfig cfg_;
  DeviceProfile profile_;
  std::map<std::string, ModelInfo> models_;
  std::map<std::string, PendingRequest> requests_;
  SerialResource transfer_, execute_;
  CacheLevel host_, device_;
  CalibrationState calibration_;
  FairState fair_transfer_, fair_execute_;
  std::vector<Finding> findings_;
  std::set<std::string> pending_evictions_;
  std::deque<std::string> load_queue_;  // model ids waiting for host fetch
  std::string active_load_;             // model currently fetching (occupies transfer)
  int64_t admit_seq_ = 0;
  bool replay_mode_ = false;  // clone used for estimation: no calibration writes
  // memo for the analytic flops model; (model, batch) -> ms
  mutable std::map<std::pair<std::string, int>, double> analytic_ms_;
};

// Expected completion for `req` if admitted now: clones the worker state and
// replays it to completion under the active policy, including pipeline
// overlap of the transfer and execute resources. Throws UnknownModel.
LatencyEstimate estimate_completion(const WorkerCore& worker, const InferenceRequest& req,
                                    double now);

}  // namespace infershare
