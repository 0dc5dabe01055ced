#pragma once

// Deterministic discrete-event simulation of the whole cluster: virtual time,
// virtual devices, synthetic workloads, metrics and billing. Strictly
// single-threaded over one event queue; bit-deterministic given
// (config, workloads, seed). Events sharing a timestamp are drained together
// (execute completions first, then transfer completions, then arrivals and
// ticks), after which every worker's dispatch runs — the same simultaneity
// rule the completion estimator replays.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "infershare/billing.hpp"
#include "infershare/config.hpp"
#include "infershare/controller.hpp"
#include "infershare/metrics.hpp"
#include "infershare/worker.hpp"

namespace infershare {

struct SimResult {
  MetricsReport report;
  std::vector<CompletionRecord> trace;
  std::map<std::string, double> tenant_charges;
  std::map<std::string, double> tenant_vm_charges;
  std::vector<ControllerCore::ReplicaEvent> replica_events;
  double duration_ms = 0.0;
  double last_event_ms = 0.0;
  int64_t generated_arrivals = 0;
};

SimResult run_simulation(const ScenarioConfig& cfg, uint64_t seed);

struct SweepPoint {
  double hit_ratio = 0.0;
  double throughput_inf_s = 0.0;
  double transfer_util = 0.0;
  double execute_util = 0.0;
};

// Runs the scenario once per sweep hit ratio (forced on every workload) and
// reports sustained throughput and per-resource utilization.
std::vector<SweepPoint> run_hitratio_sweep(const ScenarioConfig& cfg, uint64_t seed);

}  // namespace infershare
