#pragma once

// Latency and cost model. Execution cost comes from manifest flops divided by
// a calibrated effective rate; once enough real measurements exist the
// estimate switches to a measurement EWMA. Transfer cost is footprint bytes
// over bandwidth. Completion estimation (queueing included) lives with the
// worker state machine in worker.hpp, which replays the same cost model.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "infershare/manifest.hpp"

namespace infershare {

enum class DeviceKind { CpuReference, VirtualCpuCore, VirtualGpu, VirtualAccelerator };
DeviceKind parse_device_kind(const std::string& name);
const char* device_kind_name(DeviceKind k);

// Throughput multiplier by batch size, piecewise-linear in log2(batch)
// between anchor points, clamped at the ends. at(1) must be 1.
struct BatchEfficiencyTable {
  std::vector<std::pair<int, double>> points;  // sorted by batch
  double at(int batch) const;
};

struct DeviceProfile {
  std::string device_id;
  DeviceKind kind = DeviceKind::VirtualGpu;
  double effective_flops_per_sec = 1e12;
  int64_t device_memory_bytes = 0;
  double host_to_device_bandwidth = 12e9;  // B/s
  double fetch_bandwidth = 1e9;            // remote store -> host, B/s
  double cost_per_hour = 0.0;
  int max_batch = 1;
  BatchEfficiencyTable batch_efficiency{{{1, 1.0}}};

  void validate() const;  // throws ConfigInvalid
};

// Where the model's weights live relative to this worker right now.
enum class Residency { DeviceHit, HostHit, Cold };
const char* residency_name(Residency r);

struct LatencyEstimate {
  double fetch_ms = 0.0;
  double transfer_ms = 0.0;
  double exec_ms = 0.0;
  double queue_ms = 0.0;
  double total_ms = 0.0;  // always the component sum
  double confidence_p99_ms = 0.0;

  void finalize() { total_ms = fetch_ms + transfer_ms + exec_ms + queue_ms; }
};

// ---------------------------------------------------------------------------
// Calibration: per (model, device, batch) EWMA/EWVar of observed exec_ms.
// ---------------------------------------------------------------------------

struct CalKey {
  std::string model_id;
  std::string device_id;
  int batch = 1;
  auto operator<=>(const CalKey&) const = default;
};

struct CalEntry {
  double ewma_ms = 0.0;
  double ewvar = 0.0;
  int64_t samples = 0;
};

class CalibrationState {
 public:
  explicit CalibrationState(double decay = 0.05) : decay_(decay) {}

  void update(const CalKey& key, double observed_exec_ms);
  const CalEntry* find(const CalKey& key) const;
  double decay() const { return decay_; }
  void dump_csv(std::ostream& os) const;

 private:
  double decay_;
  std::map<CalKey, CalEntry> entries_;
};

// Below this many samples the analytic flops model is used; at or above it,
// the measurement EWMA.
inline constexpr int kCalibrationSwitch = 10;
// Predicted execution never drops below this per-request overhead floor.
inline constexpr double kExecFloorMs = 0.01;
// Measured predictability envelope: p99 within 15% of the mean.
inline constexpr double kP99Envelope = 1.15;

// Analytic-or-measured execution estimate, in ms. Throws BatchTooLarge.
double predict_exec(const ModelManifest& m, const DeviceProfile& device, int batch,
                    const CalibrationState* cal = nullptr);

// p99 confidence bound for the exec estimate.
double confidence_p99(const ModelManifest& m, const DeviceProfile& device, int batch,
                      const CalibrationState* cal);

// (fetch_ms, transfer_ms) to raise residency for one request.
std::pair<double, double> predict_transfer(const ModelManifest& m, const DeviceProfile& device,
                                           Residency residency);

// Currency per million inferences at a sustained throughput (inf/s).
double cost_per_million(const DeviceProfile& device, double sustained_throughput);

// Smallest device-cache hit ratio at which execution, not transfer, bounds
// throughput: max(0, 1 - exec_ms/transfer_ms).
double breakeven_hit_ratio(double exec_ms, double transfer_ms);
double breakeven_hit_ratio(const ModelManifest& m, const DeviceProfile& device);

}  // namespace infershare
