#include "infershare/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace infershare {

DeviceKind parse_device_kind(const std::string& name) {
  if (name == "cpu-reference") return DeviceKind::CpuReference;
  if (name == "virtual-cpu-core") return DeviceKind::VirtualCpuCore;
  if (name == "virtual-gpu") return DeviceKind::VirtualGpu;
  if (name == "virtual-accelerator") return DeviceKind::VirtualAccelerator;
  throw Error(Errc::ConfigInvalid, "unknown device kind '" + name + "'");
}

const char* device_kind_name(DeviceKind k) {
  switch (k) {
    case DeviceKind::CpuReference: return "cpu-reference";
    case DeviceKind::VirtualCpuCore: return "virtual-cpu-core";
    case DeviceKind::VirtualGpu: return "virtual-gpu";
    case DeviceKind::VirtualAccelerator: return "virtual-accelerator";
  }
  return "?";
}

const char* residency_name(Residency r) {
  switch (r) {
    case Residency::DeviceHit: return "device";
    case Residency::HostHit: return "host";
    case Residency::Cold: return "cold";
  }
  return "?";
}

double BatchEfficiencyTable::at(int batch) const {
  if (points.empty()) return 1.0;
  if (batch <= points.front().first) return points.front().second;
  if (batch >= points.back().first) return points.back().second;
  for (size_t i = 1; i < points.size(); ++i) {
    if (batch <= points[i].first) {
      double x0 = std::log2(static_cast<double>(points[i - 1].first));
      double x1 = std::log2(static_cast<double>(points[i].first));
      double x = std::log2(static_cast<double>(batch));
      double t = (x - x0) / (x1 - x0);
      return points[i - 1].second + t * (points[i].second - points[i - 1].second);
    }
  }
  return points.back().second;
}

void DeviceProfile::validate() const {
  if (effective_flops_per_sec <= 0 || host_to_device_bandwidth <= 0 || fetch_bandwidth <= 0)
    throw Error(Errc::ConfigInvalid, "device '" + device_id + "': rates must be positive");
  if (max_batch < 1) throw Error(Errc::ConfigInvalid, "device '" + device_id + "': max_batch < 1");
  if (batch_efficiency.points.empty() || batch_efficiency.at(1) != 1.0)
    throw Error(Errc::ConfigInvalid, "device '" + device_id + "': batch_efficiency(1) must be 1");
  double prev = 0.0;
  for (const auto& [b, mult] : batch_efficiency.points) {
    if (b < 1 || mult < prev)
      throw Error(Errc::ConfigInvalid,
                  "device '" + device_id + "': batch_efficiency must be non-decreasing");
    prev = mult;
  }
}

void CalibrationState::update(const CalKey& key, double observed_exec_ms) {
  CalEntry& e = entries_[key];
  if (e.samples == 0) {
    e.ewma_ms = observed_exec_ms;
    e.ewvar = 0.0;
  } else {
    double diff = observed_exec_ms - e.ewma_ms;
    // standard exponentially weighted mean/variance pair
    e.ewma_ms += decay_ * diff;
    e.ewvar = (1.0 - decay_) * (e.ewvar + decay_ * diff * diff);
  }
  e.samples++;
}

const CalEntry* CalibrationState::find(const CalKey& key) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

void CalibrationState::dump_csv(std::ostream& os) const {
  os << "model,device,batch,ewma_ms,ewvar,samples\n";
  for (const auto& [k, e] : entries_)
    os << k.model_id << ',' << k.device_id << ',' << k.batch << ',' << e.ewma_ms << ',' << e.ewvar
       << ',' << e.samples << '\n';
}

double predict_exec(const ModelManifest& m, const DeviceProfile& device, int batch,
                    const CalibrationState* cal) {
  if (batch < 1 || batch > device.max_batch)
    throw Error(Errc::BatchTooLarge, "batch " + std::to_string(batch) + " > max_batch " +
                                         std::to_string(device.max_batch) + " on " +
                                         device.device_id);
  if (cal) {
    const CalEntry* e = cal->find({m.model_name, device.device_id, batch});
    if (e && e->samples >= kCalibrationSwitch) return std::max(e->ewma_ms, kExecFloorMs);
  }
  double flops = static_cast<double>(model_flops(m, batch));
  double seconds = flops / (device.effective_flops_per_sec * device.batch_efficiency.at(batch));
  return std::max(seconds * 1e3, kExecFloorMs);
}

double confidence_p99(const ModelManifest& m, const DeviceProfile& device, int batch,
                      const CalibrationState* cal) {
  double mean = predict_exec(m, device, batch, cal);
  if (cal) {
    const CalEntry* e = cal->find({m.model_name, device.device_id, batch});
    if (e && e->samples >= 100) {
      // measured tail, capped at the predictability envelope
      double z99 = 2.3263478740408408;
      return std::min(mean + z99 * std::sqrt(std::max(e->ewvar, 0.0)), kP99Envelope * mean);
    }
  }
  return kP99Envelope * mean;
}

std::pair<double, double> predict_transfer(const ModelManifest& m, const DeviceProfile& device,
                                           Residency residency) {
  double bytes = static_cast<double>(m.declared_footprint_bytes);
  double h2d_ms = bytes / device.host_to_device_bandwidth * 1e3;
  switch (residency) {
    case Residency::DeviceHit: return {0.0, 0.0};
    case Residency::HostHit: return {0.0, h2d_ms};
    case Residency::Cold: return {bytes / device.fetch_bandwidth * 1e3, h2d_ms};
  }
  return {0.0, 0.0};
}

double cost_per_million(const DeviceProfile& device, double sustained_throughput) {
  if (sustained_throughput <= 0)
    throw Error(Errc::ConfigInvalid, "throughput must be positive");
  return device.cost_per_hour / (sustained_throughput * 3600.0) * 1e6;
}

double breakeven_hit_ratio(double exec_ms, double transfer_ms) {
  if (transfer_ms <= 0) throw Error(Errc::ConfigInvalid, "transfer_ms must be positive");
  return std::max(0.0, 1.0 - exec_ms / transfer_ms);
}

double breakeven_hit_ratio(const ModelManifest& m, const DeviceProfile& device) {
  double exec = predict_exec(m, device, 1, nullptr);
  auto [fetch, transfer] = predict_transfer(m, device, Residency::HostHit);
  (void)fetch;
  return breakeven_hit_ratio(exec, transfer);
}

}  // namespace infershare
