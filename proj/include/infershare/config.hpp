#pragma once

// Cluster and scenario configuration. Files are TOML (a small subset parsed
// here: tables, arrays of tables, scalars, flat arrays); both schemas are
// versioned via schema_version = 1.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "infershare/predictor.hpp"
#include "infershare/scheduler.hpp"
#include "infershare/workload.hpp"

namespace infershare {

// ---------------------------------------------------------------------------
// Minimal TOML value model
// ---------------------------------------------------------------------------

struct TomlValue {
  enum class Type { String, Integer, Float, Boolean, Array, Table };
  Type type = Type::Table;
  std::string str;
  int64_t integer = 0;
  double real = 0.0;
  bool boolean = false;
  std::vector<TomlValue> array;
  std::map<std::string, TomlValue> table;

  bool has(const std::string& key) const { return table.count(key) > 0; }
  const TomlValue& at(const std::string& key) const;
  std::string get_str(const std::string& key, const std::string& dflt = "") const;
  int64_t get_int(const std::string& key, int64_t dflt) const;
  double get_num(const std::string& key, double dflt) const;
  bool get_bool(const std::string& key, bool dflt) const;
  double as_num() const;  // Integer or Float
};

TomlValue parse_toml(const std::string& text);
TomlValue load_toml_file(const std::string& path);

// ---------------------------------------------------------------------------
// Cluster config
// ---------------------------------------------------------------------------

struct WorkerDef {
  std::string name;
  std::string profile;
  int64_t host_cache_bytes = 1'000'000'000;
  std::string listen;  // real mode only
  bool vm_mode = false;
  double vm_idle_teardown_s = 0.0;
  double vm_cold_start_s = 0.0;
  // VM-baseline partitioning: only this tenant may use the worker ("" = any)
  std::string vm_tenant;
};

struct ClusterConfig {
  int schema_version = 1;
  std::string controller_listen = "127.0.0.1:7070";
  std::string secret = "infershare-dev";
  std::string journal_path;
  double heartbeat_ms = 500.0;
  double demand_window_ms = 1000.0;
  double saturation_theta = 0.7;
  double utilization_mu = 0.8;
  int min_replicas = 1;
  bool autoscale = true;
  SchedPolicy policy = SchedPolicy::Fifo;
  bool fair = false;
  bool batching = false;
  double admission_ceiling_ms = 1000.0;
  double per_tenant_ceiling_ms = 0.0;
  std::map<std::string, DeviceProfile> profiles;  // built-ins plus overrides
  std::vector<WorkerDef> workers;

  const DeviceProfile& profile_of(const WorkerDef& w) const;
};

// Profiles calibrated against the bundled resnet18-style model
// (2,013,634,536 flops at batch 1):
//   virtual-gpu       0.97 ms/inf, 1031 inf/s, $2.55/hr, 12 GB/s PCIe
//   virtual-cpu-core  190.80 ms/inf, 5.24 inf/s, $0.0348/hr
//   virtual-accelerator 4x the gpu rate, 64 GB device memory
//   cpu-reference     runs the real executor; rate is a seed for calibration
std::map<std::string, DeviceProfile> builtin_profiles();
inline constexpr double kCalibratedModelFlops = 2013634536.0;

ClusterConfig cluster_from_toml(const TomlValue& root);
ClusterConfig load_cluster_file(const std::string& path);

// ---------------------------------------------------------------------------
// Scenario config (simulation)
// ---------------------------------------------------------------------------

struct ModelDef {
  std::string name;
  std::string manifest_path;  // relative to the scenario file
  std::string tenant;
  int replicas = 1;
  bool preload = true;       // host-resident at t=0 (bring-up before the window)
  std::string pin_worker;    // force initial placement (vm-baseline partitioning)
};

struct NoiseConfig {
  bool enabled = false;
  double sigma = 0.0;  // 0 = default calibrated to the p99/mean envelope
};

struct FailureEvent {
  enum class Kind { Kill, Rejoin } kind = Kind::Kill;
  std::string worker;
  double at_s = 0.0;
};

struct ScenarioConfig {
  int schema_version = 1;
  std::string name;
  double duration_s = 10.0;
  uint64_t seed = 1;
  double reroute_check_ms = 0.0;  // 0 = disabled
  ClusterConfig cluster;
  std::vector<ModelDef> models;
  std::vector<WorkloadSpec> workloads;
  NoiseConfig noise;
  std::vector<FailureEvent> events;
  std::vector<double> sweep_hit_ratios;  // hit-ratio sweep scenarios
  std::string base_dir;                  // directory of the scenario file
};

ScenarioConfig scenario_from_toml(const TomlValue& root, const std::string& base_dir);
ScenarioConfig load_scenario_file(const std::string& path);

// Default lognormal sigma solving p99/mean = kP99Envelope for the noise
// multiplier distribution.
double default_noise_sigma();

}  // namespace infershare
