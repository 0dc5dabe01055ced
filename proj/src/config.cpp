#include "infershare/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace infershare {

// ---------------------------------------------------------------------------
// TOML subset parser: [table], [[array-of-tables]], key = value with string,
// integer, float, boolean and flat-array values. Comments with '#'.
// ---------------------------------------------------------------------------

namespace {

std::string strip(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// removes a trailing comment that is not inside a string
std::string strip_comment(const std::string& line) {
  bool in_str = false;
  for (size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_str = !in_str;
    if (line[i] == '#' && !in_str) return line.substr(0, i);
  }
  return line;
}

std::vector<std::string> split_path(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == '.') {
      out.push_back(strip(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(strip(cur));
  return out;
}

TomlValue parse_scalar(const std::string& raw);

TomlValue parse_array(const std::string& raw) {
  TomlValue v;
  v.type = TomlValue::Type::Array;
  std::string inner = strip(raw.substr(1, raw.size() - 2));
  if (inner.empty()) return v;
  // split on commas at depth 0
  int depth = 0;
  bool in_str = false;
  std::string cur;
  auto flush = [&] {
    std::string s = strip(cur);
    if (!s.empty()) v.array.push_back(parse_scalar(s));
    cur.clear();
  };
  for (char c : inner) {
    if (c == '"') in_str = !in_str;
    if (!in_str) {
      if (c == '[') depth++;
      if (c == ']') depth--;
      if (c == ',' && depth == 0) {
        flush();
        continue;
      }
    }
    cur.push_back(c);
  }
  flush();
  return v;
}

TomlValue parse_scalar(const std::string& raw) {
  TomlValue v;
  if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"') {
    v.type = TomlValue::Type::String;
    v.str = raw.substr(1, raw.size() - 2);
    return v;
  }
  if (raw.front() == '[') return parse_array(raw);
  if (raw == "true" || raw == "false") {
    v.type = TomlValue::Type::Boolean;
    v.boolean = raw == "true";
    return v;
  }
  std::string digits = raw;
  digits.erase(std::remove(digits.begin(), digits.end(), '_'), digits.end());
  if (digits.find('.') == std::string::npos && digits.find('e') == std::string::npos &&
      digits.find('E') == std::string::npos) {
    int64_t i = 0;
    auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), i);
    if (ec == std::errc() && p == digits.data() + digits.size()) {
      v.type = TomlValue::Type::Integer;
      v.integer = i;
      return v;
    }
  }
  try {
    size_t pos = 0;
    double d = std::stod(digits, &pos);
    if (pos == digits.size()) {
      v.type = TomlValue::Type::Float;
      v.real = d;
      return v;
    }
  } catch (const std::exception&) {
  }
  throw Error(Errc::ConfigInvalid, "cannot parse value '" + raw + "'");
}

TomlValue* descend(TomlValue* root, const std::vector<std::string>& path, bool array_elem) {
  TomlValue* cur = root;
  for (size_t i = 0; i < path.size(); ++i) {
    TomlValue& slot = cur->table[path[i]];
    bool last = i + 1 == path.size();
    if (last && array_elem) {
      if (slot.type != TomlValue::Type::Array) {
        slot = TomlValue{};
        slot.type = TomlValue::Type::Array;
      }
      slot.array.emplace_back();
      slot.array.back().type = TomlValue::Type::Table;
      return &slot.array.back();
    }
    if (slot.type == TomlValue::Type::Array) {
      if (slot.array.empty()) throw Error(Errc::ConfigInvalid, "bad table path");
      cur = &slot.array.back();
    } else {
      if (slot.type != TomlValue::Type::Table && slot.table.empty()) {
        slot = TomlValue{};
        slot.type = TomlValue::Type::Table;
      }
      cur = &slot;
    }
  }
  return cur;
}

}  // namespace

const TomlValue& TomlValue::at(const std::string& key) const {
  auto it = table.find(key);
  if (it == table.end()) throw Error(Errc::ConfigInvalid, "missing config key '" + key + "'");
  return it->second;
}

std::string TomlValue::get_str(const std::string& key, const std::string& dflt) const {
  auto it = table.find(key);
  return it == table.end() ? dflt : it->second.str;
}

int64_t TomlValue::get_int(const std::string& key, int64_t dflt) const {
  auto it = table.find(key);
  if (it == table.end()) return dflt;
  return it->second.type == Type::Float ? static_cast<int64_t>(it->second.real)
                                        : it->second.integer;
}

double TomlValue::get_num(const std::string& key, double dflt) const {
  auto it = table.find(key);
  if (it == table.end()) return dflt;
  return it->second.as_num();
}

bool TomlValue::get_bool(const std::string& key, bool dflt) const {
  auto it = table.find(key);
  return it == table.end() ? dflt : it->second.boolean;
}

double TomlValue::as_num() const {
  return type == Type::Integer ? static_cast<double>(integer) : real;
}

TomlValue parse_toml(const std::string& text) {
  TomlValue root;
  root.type = TomlValue::Type::Table;
  TomlValue* current = &root;
  std::istringstream is(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(is, raw)) {
    lineno++;
    std::string line = strip(strip_comment(raw));
    if (line.empty()) continue;
    try {
      if (line.size() >= 4 && line.substr(0, 2) == "[[" && line.substr(line.size() - 2) == "]]") {
        current = descend(&root, split_path(line.substr(2, line.size() - 4)), true);
      } else if (line.front() == '[' && line.back() == ']') {
        current = descend(&root, split_path(line.substr(1, line.size() - 2)), false);
      } else {
        size_t eq = line.find('=');
        if (eq == std::string::npos)
          throw Error(Errc::ConfigInvalid, "expected key = value");
        std::string key = strip(line.substr(0, eq));
        std::string value = strip(line.substr(eq + 1));
        if (key.empty() || value.empty())
          throw Error(Errc::ConfigInvalid, "expected key = value");
        current->table[key] = parse_scalar(value);
      }
    } catch (const Error& e) {
      throw Error(Errc::ConfigInvalid,
                  "line " + std::to_string(lineno) + ": " + std::string(e.what()));
    }
  }
  return root;
}

TomlValue load_toml_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_toml(buf.str());
}

// ---------------------------------------------------------------------------
// Built-in device profiles
// ---------------------------------------------------------------------------

std::map<std::string, DeviceProfile> builtin_profiles() {
  std::map<std::string, DeviceProfile> out;

  DeviceProfile gpu;
  gpu.device_id = "virtual-gpu";
  gpu.kind = DeviceKind::VirtualGpu;
  gpu.effective_flops_per_sec = kCalibratedModelFlops / 0.97e-3;
  gpu.device_memory_bytes = 32'000'000'000;
  gpu.host_to_device_bandwidth = 12e9;
  gpu.fetch_bandwidth = 1e9;
  gpu.cost_per_hour = 2.55;
  gpu.max_batch = 256;
  gpu.batch_efficiency.points = {{1, 1.0}, {256, 4083.0 / 1031.0}};
  out[gpu.device_id] = gpu;

  DeviceProfile cpu;
  cpu.device_id = "virtual-cpu-core";
  cpu.kind = DeviceKind::VirtualCpuCore;
  cpu.effective_flops_per_sec = kCalibratedModelFlops / 190.80e-3;
  cpu.device_memory_bytes = 64'000'000'000;
  cpu.host_to_device_bandwidth = 1e15;  // host memory is the device: no copy stage
  cpu.fetch_bandwidth = 1e9;
  cpu.cost_per_hour = 0.0348;
  cpu.max_batch = 16;
  cpu.batch_efficiency.points = {{1, 1.0}};
  out[cpu.device_id] = cpu;

  DeviceProfile acc;
  acc.device_id = "virtual-accelerator";
  acc.kind = DeviceKind::VirtualAccelerator;
  acc.effective_flops_per_sec = 4.0 * gpu.effective_flops_per_sec;
  acc.device_memory_bytes = 64'000'000'000;
  acc.host_to_device_bandwidth = 16e9;
  acc.fetch_bandwidth = 1e9;
  acc.cost_per_hour = 4.50;
  acc.max_batch = 256;
  acc.batch_efficiency.points = {{1, 1.0}, {256, 4083.0 / 1031.0}};
  out[acc.device_id] = acc;

  DeviceProfile ref;
  ref.device_id = "cpu-reference";
  ref.kind = DeviceKind::CpuReference;
  ref.effective_flops_per_sec = 1e9;  // seed estimate; calibration takes over
  ref.device_memory_bytes = 8'000'000'000;
  ref.host_to_device_bandwidth = 1e15;
  ref.fetch_bandwidth = 1e15;  // weights are generated locally, not fetched
  ref.cost_per_hour = 0.0;
  ref.max_batch = 8;
  ref.batch_efficiency.points = {{1, 1.0}};
  out[ref.device_id] = ref;

  return out;
}

// ---------------------------------------------------------------------------
// Cluster config
// ---------------------------------------------------------------------------

namespace {

DeviceProfile profile_from_toml(const TomlValue& t, const std::map<std::string, DeviceProfile>& base) {
  std::string name = t.get_str("name");
  std::string kind = t.get_str("kind", name);
  DeviceProfile p;
  auto bit = base.find(kind);
  if (bit != base.end()) p = bit->second;
  p.device_id = name.empty() ? kind : name;
  p.kind = parse_device_kind(kind);
  p.effective_flops_per_sec = t.get_num("effective_flops_per_sec", p.effective_flops_per_sec);
  p.device_memory_bytes = t.get_int("device_memory_bytes", p.device_memory_bytes);
  p.host_to_device_bandwidth = t.get_num("host_to_device_bandwidth", p.host_to_device_bandwidth);
  p.fetch_bandwidth = t.get_num("fetch_bandwidth", p.fetch_bandwidth);
  p.cost_per_hour = t.get_num("cost_per_hour", p.cost_per_hour);
  p.max_batch = static_cast<int>(t.get_int("max_batch", p.max_batch));
  if (t.has("batch_efficiency")) {
    p.batch_efficiency.points.clear();
    for (const auto& pair : t.at("batch_efficiency").array) {
      if (pair.array.size() != 2)
        throw Error(Errc::ConfigInvalid, "batch_efficiency entries are [batch, multiplier]");
      p.batch_efficiency.points.push_back(
          {static_cast<int>(pair.array[0].integer ? pair.array[0].integer
                                                  : static_cast<int64_t>(pair.array[0].real)),
           pair.array[1].as_num()});
    }
  }
  p.validate();
  return p;
}

}  // namespace

ClusterConfig cluster_from_toml(const TomlValue& root) {
  ClusterConfig cfg;
  cfg.schema_version = static_cast<int>(root.get_int("schema_version", 1));
  if (cfg.schema_version != 1)
    throw Error(Errc::UnsupportedVersion,
                "cluster config schema v" + std::to_string(cfg.schema_version));
  cfg.profiles = builtin_profiles();

  if (root.has("controller")) {
    const TomlValue& c = root.at("controller");
    cfg.controller_listen = c.get_str("listen", cfg.controller_listen);
    cfg.secret = c.get_str("secret", cfg.secret);
    cfg.journal_path = c.get_str("journal", "");
    cfg.heartbeat_ms = c.get_num("heartbeat_ms", cfg.heartbeat_ms);
    cfg.demand_window_ms = c.get_num("demand_window_ms", cfg.demand_window_ms);
    cfg.saturation_theta = c.get_num("saturation_theta", cfg.saturation_theta);
    cfg.utilization_mu = c.get_num("utilization_mu", cfg.utilization_mu);
    cfg.min_replicas = static_cast<int>(c.get_int("min_replicas", cfg.min_replicas));
    cfg.autoscale = c.get_bool("autoscale", cfg.autoscale);
  }
  if (root.has("scheduler")) {
    const TomlValue& s = root.at("scheduler");
    cfg.policy = parse_policy(s.get_str("policy", "fifo"));
    cfg.fair = s.get_bool("fair", false);
    cfg.batching = s.get_bool("batching", false);
    cfg.admission_ceiling_ms = s.get_num("admission_ceiling_ms", cfg.admission_ceiling_ms);
    cfg.per_tenant_ceiling_ms = s.get_num("per_tenant_ceiling_ms", cfg.per_tenant_ceiling_ms);
  }
  if (root.has("profiles")) {
    for (const auto& t : root.at("profiles").array) {
      DeviceProfile p = profile_from_toml(t, cfg.profiles);
      cfg.profiles[p.device_id] = p;
    }
  }
  if (root.has("workers")) {
    for (const auto& t : root.at("workers").array) {
      WorkerDef w;
      w.name = t.get_str("name");
      if (w.name.empty()) throw Error(Errc::ConfigInvalid, "worker needs a name");
      w.profile = t.get_str("profile", "virtual-gpu");
      w.host_cache_bytes = t.get_int("host_cache_bytes", w.host_cache_bytes);
      w.listen = t.get_str("listen", "");
      w.vm_mode = t.get_bool("vm_mode", false);
      w.vm_idle_teardown_s = t.get_num("vm_idle_teardown_s", 0.0);
      w.vm_cold_start_s = t.get_num("vm_cold_start_s", 0.0);
      w.vm_tenant = t.get_str("vm_tenant", "");
      cfg.workers.push_back(std::move(w));
    }
  }
  std::set<std::string> names;
  for (const auto& w : cfg.workers) {
    if (!cfg.profiles.count(w.profile))
      throw Error(Errc::ConfigInvalid, "worker '" + w.name + "' references unknown profile '" +
                                           w.profile + "'");
    if (!names.insert(w.name).second)
      throw Error(Errc::ConfigInvalid, "duplicate worker name '" + w.name + "'");
  }
  return cfg;
}

const DeviceProfile& ClusterConfig::profile_of(const WorkerDef& w) const {
  return profiles.at(w.profile);
}

ClusterConfig load_cluster_file(const std::string& path) {
  return cluster_from_toml(load_toml_file(path));
}

// ---------------------------------------------------------------------------
// Scenario config
// ---------------------------------------------------------------------------

ScenarioConfig scenario_from_toml(const TomlValue& root, const std::string& base_dir) {
  ScenarioConfig s;
  s.schema_version = static_cast<int>(root.get_int("schema_version", 1));
  if (s.schema_version != 1)
    throw Error(Errc::UnsupportedVersion, "scenario schema v" + std::to_string(s.schema_version));
  s.name = root.get_str("name", "scenario");
  s.duration_s = root.get_num("duration_s", 10.0);
  s.seed = static_cast<uint64_t>(root.get_int("seed", 1));
  s.reroute_check_ms = root.get_num("reroute_check_ms", 0.0);
  s.base_dir = base_dir;
  s.cluster = cluster_from_toml(root);

  if (root.has("models")) {
    for (const auto& t : root.at("models").array) {
      ModelDef m;
      m.name = t.get_str("name");
      m.manifest_path = t.get_str("manifest");
      m.tenant = t.get_str("tenant", "tenant0");
      m.replicas = static_cast<int>(t.get_int("replicas", 1));
      m.preload = t.get_bool("preload", true);
      m.pin_worker = t.get_str("pin_worker", "");
      if (m.name.empty() || m.manifest_path.empty())
        throw Error(Errc::ConfigInvalid, "model entries need name and manifest");
      s.models.push_back(std::move(m));
    }
  }
  if (root.has("workloads")) {
    for (const auto& t : root.at("workloads").array) {
      WorkloadSpec w;
      w.tenant_id = t.get_str("tenant", "tenant0");
      w.model_id = t.get_str("model");
      w.pattern = parse_pattern(t.get_str("pattern", "poisson"));
      w.rate = t.get_num("rate", 0.0);
      w.low_rate = t.get_num("low_rate", 0.0);
      w.high_rate = t.get_num("high_rate", 0.0);
      w.period_s = t.get_num("period_s", 0.0);
      w.mean_gap_s = t.get_num("mean_gap_s", 0.0);
      w.trace_path = t.get_str("trace", "");
      if (!w.trace_path.empty() && !base_dir.empty() && w.trace_path.front() != '/')
        w.trace_path = base_dir + "/" + w.trace_path;
      if (t.has("deadline_ms")) w.deadline_ms = t.get_num("deadline_ms", 0.0);
      w.batch = static_cast<int>(t.get_int("batch", 1));
      w.start_s = t.get_num("start_s", 0.0);
      w.duration_s = t.get_num("duration_s", 0.0);
      w.record_estimates = t.get_bool("record_estimates", false);
      w.forced_hit_ratio = t.get_num("forced_hit_ratio", -1.0);
      if (w.model_id.empty()) throw Error(Errc::ConfigInvalid, "workload needs a model");
      s.workloads.push_back(std::move(w));
    }
  }
  if (root.has("noise")) {
    s.noise.enabled = root.at("noise").get_bool("enabled", false);
    s.noise.sigma = root.at("noise").get_num("sigma", 0.0);
  }
  if (root.has("events")) {
    for (const auto& t : root.at("events").array) {
      FailureEvent e;
      std::string kind = t.get_str("kind", "kill");
      e.kind = kind == "rejoin" ? FailureEvent::Kind::Rejoin : FailureEvent::Kind::Kill;
      e.worker = t.get_str("worker");
      e.at_s = t.get_num("at_s", 0.0);
      s.events.push_back(std::move(e));
    }
  }
  if (root.has("sweep")) {
    const TomlValue& sw = root.at("sweep");
    if (sw.has("hit_ratios")) {
      for (const auto& v : sw.at("hit_ratios").array) s.sweep_hit_ratios.push_back(v.as_num());
    } else {
      double from = sw.get_num("from", 0.5), to = sw.get_num("to", 1.0),
             step = sw.get_num("step", 0.05);
      if (step <= 0) throw Error(Errc::ConfigInvalid, "sweep step must be positive");
      for (double h = from; h <= to + 1e-12; h += step) s.sweep_hit_ratios.push_back(h);
    }
  }
  return s;
}

ScenarioConfig load_scenario_file(const std::string& path) {
  std::string dir = ".";
  size_t slash = path.find_last_of('/');
  if (slash != std::string::npos) dir = path.substr(0, slash);
  return scenario_from_toml(load_toml_file(path), dir);
}

double default_noise_sigma() {
  // solve -s^2/2 + z99*s = ln(kP99Envelope), take the small root
  double z99 = 2.3263478740408408;
  double c = std::log(kP99Envelope);
  return z99 - std::sqrt(z99 * z99 - 2.0 * c);
}

}  // namespace infershare
