#pragma once

// Metrics are a pure fold over the event trace: the trace file is the single
// source, so reports are replayable offline. Percentiles are nearest-rank on
// the sorted latency multiset (no interpolation) for bit-reproducibility.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "infershare/worker.hpp"

namespace infershare {

struct ModelStats {
  int64_t arrivals = 0;
  int64_t done = 0;
  int64_t rejected = 0;
  int64_t cancelled = 0;
  int64_t rerouted = 0;
  int64_t faulted = 0;
  double mean_ms = 0.0;
  double p50_ms = 0.0;
  double p99_ms = 0.0;
  double slo_violation_frac = 0.0;  // among completed requests with a deadline
  double rejection_frac = 0.0;
  int64_t device_hits = 0;
  int64_t host_hits = 0;
  int64_t cold_hits = 0;

  double hit_ratio_device() const {
    int64_t n = device_hits + host_hits + cold_hits;
    return n ? static_cast<double>(device_hits) / static_cast<double>(n) : 0.0;
  }
};

struct ResourceUtil {
  double transfer_busy_ms = 0.0;
  double execute_busy_ms = 0.0;
  double transfer_util = 0.0;
  double execute_util = 0.0;
};

struct MetricsReport {
  double elapsed_ms = 0.0;
  std::map<std::pair<std::string, std::string>, ModelStats> per_model;
  std::map<std::string, ResourceUtil> per_worker;
  std::map<std::string, double> tenant_charges;
  std::map<std::string, double> tenant_vm_charges;  // vm-baseline comparison

  void write_csv(std::ostream& os) const;
  void write_summary(std::ostream& os) const;
};

// Nearest-rank percentile: ceil(p/100 * n)-th of the sorted multiset.
double percentile_nearest_rank(std::vector<double> sorted_or_not, double p);

MetricsReport compute_report(const std::vector<CompletionRecord>& trace, double elapsed_ms,
                             const std::map<std::string, double>& tenant_charges = {},
                             const std::map<std::string, double>& tenant_vm_charges = {});

// Line-delimited trace io (CSV with a documented header).
void write_trace(std::ostream& os, const std::vector<CompletionRecord>& trace);
std::vector<CompletionRecord> read_trace(std::istream& is);

}  // namespace infershare
