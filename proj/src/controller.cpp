#include "infershare/controller.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace infershare {

using nlohmann::json;

ControllerCore::ControllerCore(ControllerConfig cfg, std::map<std::string, DeviceProfile> profiles)
    : cfg_(std::move(cfg)), profiles_(std::move(profiles)) {
  if (!cfg_.journal_path.empty()) journal_replay();
}

// ---------------------------------------------------------------------------
// Membership
// ---------------------------------------------------------------------------

void ControllerCore::register_worker(const std::string& worker_id, const std::string& profile_name,
                                     int64_t host_cache_bytes, double now) {
  auto pit = profiles_.find(profile_name);
  if (pit == profiles_.end())
    throw Error(Errc::ConfigInvalid, "worker '" + worker_id + "' references unknown profile '" +
                                         profile_name + "'");
  WorkerInfo info;
  info.worker_id = worker_id;
  info.profile = pit->second;
  info.profile.device_id = worker_id;
  info.host_cache_bytes = host_cache_bytes;
  info.last_heartbeat_ms = now;
  // a rejoining worker comes back fresh: empty caches, nothing hosted
  workers_[worker_id] = std::move(info);
}

void ControllerCore::on_heartbeat(const std::string& worker_id, const WorkerStatsLite& stats,
                                  double now) {
  auto it = workers_.find(worker_id);
  if (it == workers_.end()) return;
  it->second.last_heartbeat_ms = now;
  it->second.alive = true;
  it->second.last_stats = stats;
  it->second.load_ewma = 0.7 * it->second.load_ewma + 0.3 * stats.load_frac;
}

std::vector<CtrlAction> ControllerCore::heartbeat_scan(double now) {
  std::vector<CtrlAction> actions;
  for (auto& [id, w] : workers_) {
    if (!w.alive) continue;
    if (now - w.last_heartbeat_ms >= cfg_.heartbeat_miss_limit * cfg_.heartbeat_ms) {
      for (auto& a : handle_worker_failure(id, now)) actions.push_back(a);
    }
  }
  return actions;
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

UploadResult ControllerCore::upload_model(const std::string& tenant_id,
                                          std::shared_ptr<const ModelManifest> manifest,
                                          double now, int replica_count,
                                          const std::vector<std::string>& pin) {
  ValidationReport rep = validate_manifest(*manifest);
  if (!rep.ok()) throw Error(Errc::ValidationFailed, rep.to_string());

  int count = 0;
  int64_t bytes = 0;
  for (const auto& [id, e] : registry_) {
    if (e.tenant_id == tenant_id && e.state != ModelState::Deleted) {
      count++;
      bytes += e.manifest->declared_footprint_bytes;
    }
  }
  if (count + 1 > cfg_.tenant_quota_models ||
      bytes + manifest->declared_footprint_bytes > cfg_.tenant_quota_bytes)
    throw Error(Errc::QuotaExceeded, "tenant '" + tenant_id + "' exceeds its model quota");

  std::string model_id = manifest->model_name;
  if (registry_.count(model_id) && registry_[model_id].state != ModelState::Deleted)
    model_id += "-" + std::to_string(++model_seq_);

  RegistryEntry entry;
  entry.model_id = model_id;
  entry.tenant_id = tenant_id;
  entry.manifest = std::move(manifest);
  entry.state = ModelState::Registering;

  UploadResult result;
  result.model_id = model_id;
  result.endpoint = "/models/" + model_id;

  int target = replica_count > 0 ? replica_count : cfg_.min_replicas;
  std::vector<std::string> chosen = pin.empty() ? place(entry, target) : pin;
  for (const auto& w : chosen)
    if (!workers_.count(w))
      throw Error(Errc::InsufficientCapacity, "pinned worker '" + w + "' is not registered");
  for (const auto& w : chosen) {
    entry.pending_replicas.push_back(w);
    workers_[w].hosted.insert(model_id);
    result.actions.push_back({CtrlAction::Kind::LoadModel, w, model_id});
  }
  registry_[model_id] = entry;
  journal_append("upload", tenant_id, model_id, serialize_manifest(*entry.manifest));
  (void)now;
  return result;
}

std::vector<CtrlAction> ControllerCore::delete_model(const std::string& model_id, double now) {
  auto it = registry_.find(model_id);
  if (it == registry_.end() || it->second.state == ModelState::Deleted)
    throw Error(Errc::UnknownModel, "model '" + model_id + "' not registered");
  std::vector<CtrlAction> actions;
  for (const auto& w : it->second.replicas) {
    actions.push_back({CtrlAction::Kind::EvictModel, w, model_id});
    if (workers_.count(w)) workers_[w].hosted.erase(model_id);
  }
  for (const auto& w : it->second.pending_replicas)
    if (workers_.count(w)) workers_[w].hosted.erase(model_id);
  it->second.replicas.clear();
  it->second.pending_replicas.clear();
  it->second.state = ModelState::Deleted;
  bump_routing(now, model_id);
  journal_append("delete", it->second.tenant_id, model_id, "");
  return actions;
}

std::vector<CtrlAction> ControllerCore::on_load_ack(const std::string& worker_id,
                                                    const std::string& model_id, bool ok,
                                                    double now) {
  std::vector<CtrlAction> actions;
  auto it = registry_.find(model_id);
  if (it == registry_.end()) return actions;
  RegistryEntry& e = it->second;
  auto& pend = e.pending_replicas;
  pend.erase(std::remove(pend.begin(), pend.end(), worker_id), pend.end());
  if (!ok) {
    if (workers_.count(worker_id)) workers_[worker_id].hosted.erase(model_id);
    return actions;
  }
  if (std::find(e.replicas.begin(), e.replicas.end(), worker_id) == e.replicas.end())
    e.replicas.push_back(worker_id);
  if (e.state == ModelState::Registering) e.state = ModelState::Active;
  bump_routing(now, model_id);
  replica_events_.push_back({now, model_id, static_cast<int>(e.replicas.size())});

  // migration step 2: the target is routable, flip done by bump above;
  // step 3: evict the source replica.
  auto mig = migrations_.find(model_id);
  if (mig != migrations_.end() && mig->second.second == worker_id) {
    const std::string& from = mig->second.first;
    auto& reps = e.replicas;
    reps.erase(std::remove(reps.begin(), reps.end(), from), reps.end());
    if (workers_.count(from)) workers_[from].hosted.erase(model_id);
    actions.push_back({CtrlAction::Kind::EvictModel, from, model_id});
    migrations_.erase(mig);
    e.state = ModelState::Active;
    bump_routing(now, model_id);
    replica_events_.push_back({now, model_id, static_cast<int>(e.replicas.size())});
  }
  return actions;
}

void ControllerCore::on_evict_ack(const std::string& worker_id, const std::string& model_id,
                                  double now) {
  (void)worker_id;
  (void)model_id;
  (void)now;
}

// ---------------------------------------------------------------------------
// Placement
// ---------------------------------------------------------------------------

int64_t ControllerCore::committed_bytes(const WorkerInfo& w) const {
  int64_t bytes = 0;
  for (const auto& m : w.hosted) {
    auto it = registry_.find(m);
    if (it != registry_.end()) bytes += it->second.manifest->declared_footprint_bytes;
  }
  return bytes;
}

std::vector<std::string> ControllerCore::place(const RegistryEntry& entry, int replica_count,
                                               const std::set<std::string>& exclude) const {
  if (replica_count < 1) throw Error(Errc::InsufficientCapacity, "replica_count must be >= 1");
  struct Cand {
    double load;
    std::string id;
  };
  std::vector<Cand> cands;
  for (const auto& [id, w] : workers_) {
    if (!w.alive || exclude.count(id) || w.hosted.count(entry.model_id)) continue;
    if (committed_bytes(w) + entry.manifest->declared_footprint_bytes > w.host_cache_bytes)
      continue;
    cands.push_back({w.load_ewma, id});
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    return std::tie(a.load, a.id) < std::tie(b.load, b.id);
  });
  if (static_cast<int>(cands.size()) < replica_count)
    throw Error(Errc::InsufficientCapacity,
                "need " + std::to_string(replica_count) + " worker(s), only " +
                    std::to_string(cands.size()) + " eligible");
  std::vector<std::string> out;
  for (int i = 0; i < replica_count; ++i) out.push_back(cands[i].id);
  return out;
}

// ---------------------------------------------------------------------------
// Scaling and saturation
// ---------------------------------------------------------------------------

double ControllerCore::worker_capacity_inf_s(const WorkerInfo& w, const ModelManifest& m) const {
  return 1000.0 / predict_exec(m, w.profile, 1, nullptr);
}

int ControllerCore::scale_target(const RegistryEntry& entry) const {
  const WorkerInfo* ref = nullptr;
  if (!entry.replicas.empty()) {
    auto it = workers_.find(entry.replicas.front());
    if (it != workers_.end()) ref = &it->second;
  }
  if (!ref) {
    for (const auto& [id, w] : workers_)
      if (w.alive) {
        ref = &w;
        break;
      }
  }
  if (!ref) return cfg_.min_replicas;
  double per_worker = cfg_.utilization_mu * worker_capacity_inf_s(*ref, *entry.manifest);
  return std::max(cfg_.min_replicas,
                  static_cast<int>(std::ceil(entry.demand_ewma / per_worker)));
}

std::vector<CtrlAction> ControllerCore::demand_tick(
    double now, const std::map<std::string, int64_t>& window_counts) {
  std::vector<CtrlAction> actions;
  double window_s = cfg_.demand_window_ms / 1000.0;
  for (auto& [model_id, e] : registry_) {
    if (e.state == ModelState::Deleted) continue;
    auto cit = window_counts.find(model_id);
    double rate = cit == window_counts.end() ? 0.0 : static_cast<double>(cit->second) / window_s;
    // history decays to demand_decay each window; a step change must move the
    // estimate across a scaling threshold within one window
    e.demand_ewma = cfg_.demand_decay * e.demand_ewma + (1.0 - cfg_.demand_decay) * rate;
  }
  if (!cfg_.autoscale) return actions;

  for (auto& [model_id, e] : registry_) {
    if (e.state != ModelState::Active) continue;
    int target = scale_target(e);
    int have = static_cast<int>(e.replicas.size() + e.pending_replicas.size());
    if (target > have) {
      std::set<std::string> exclude;
      for (const auto& w : e.replicas) exclude.insert(w);
      for (const auto& w : e.pending_replicas) exclude.insert(w);
      try {
        std::vector<std::string> extra = place(e, target - have, exclude);
        for (const auto& w : extra) {
          e.pending_replicas.push_back(w);
          workers_[w].hosted.insert(model_id);
          actions.push_back({CtrlAction::Kind::LoadModel, w, model_id});
        }
      } catch (const Error&) {
        // not enough capacity to reach target; keep what we have
      }
    } else if (target < static_cast<int>(e.replicas.size()) &&
               static_cast<int>(e.replicas.size()) > cfg_.min_replicas) {
      // shed the highest-loaded replicas down to the target
      std::vector<std::string> reps = e.replicas;
      std::sort(reps.begin(), reps.end(), [this](const std::string& a, const std::string& b) {
        double la = workers_.count(a) ? workers_.at(a).load_ewma : 0.0;
        double lb = workers_.count(b) ? workers_.at(b).load_ewma : 0.0;
        return std::tie(la, a) > std::tie(lb, b);
      });
      int drop = std::min(static_cast<int>(e.replicas.size()) - target,
                          static_cast<int>(e.replicas.size()) - cfg_.min_replicas);
      for (int i = 0; i < drop; ++i) {
        const std::string& w = reps[i];
        e.replicas.erase(std::remove(e.replicas.begin(), e.replicas.end(), w), e.replicas.end());
        if (workers_.count(w)) workers_[w].hosted.erase(model_id);
        actions.push_back({CtrlAction::Kind::EvictModel, w, model_id});
      }
      bump_routing(now, model_id);
      replica_events_.push_back({now, model_id, static_cast<int>(e.replicas.size())});
    }
  }

  // saturation: a model driving a worker beyond theta gets it exclusively
  for (const auto& [wid, w] : workers_) {
    if (!w.alive) continue;
    for (auto& a : migrate_for_saturation(wid, now)) actions.push_back(a);
  }
  return actions;
}

std::vector<CtrlAction> ControllerCore::migrate_for_saturation(const std::string& worker_id,
                                                               double now) {
  std::vector<CtrlAction> actions;
  auto wit = workers_.find(worker_id);
  if (wit == workers_.end() || !wit->second.alive) return actions;
  const WorkerInfo& w = wit->second;
  if (w.hosted.size() < 2) return actions;

  // find a model whose routed share saturates this worker
  std::string heavy;
  for (const auto& m : w.hosted) {
    auto rit = registry_.find(m);
    if (rit == registry_.end() || rit->second.state != ModelState::Active) continue;
    const RegistryEntry& e = rit->second;
    size_t replicas = std::max<size_t>(1, e.replicas.size());
    double share = e.demand_ewma / static_cast<double>(replicas);
    if (share >= cfg_.saturation_theta * worker_capacity_inf_s(w, *e.manifest)) {
      heavy = m;
      break;
    }
  }
  if (heavy.empty()) return actions;

  for (const auto& m : std::vector<std::string>(w.hosted.begin(), w.hosted.end())) {
    if (m == heavy) continue;
    auto rit = registry_.find(m);
    if (rit == registry_.end() || rit->second.state != ModelState::Active) continue;
    if (migrations_.count(m)) continue;  // already moving
    RegistryEntry& e = rit->second;
    std::set<std::string> exclude{worker_id};
    for (const auto& r : e.replicas) exclude.insert(r);
    for (const auto& r : e.pending_replicas) exclude.insert(r);
    try {
      std::string target = place(e, 1, exclude).front();
      // load-on-target -> route-flip -> evict-on-source, driven by the ack
      migrations_[m] = {worker_id, target};
      e.state = ModelState::Migrating;
      e.pending_replicas.push_back(target);
      workers_[target].hosted.insert(m);
      actions.push_back({CtrlAction::Kind::LoadModel, target, m});
    } catch (const Error&) {
      // no alternative worker fits this model; leave it, flag via state
      e.state = ModelState::Active;
    }
  }
  (void)now;
  return actions;
}

std::vector<CtrlAction> ControllerCore::handle_worker_failure(const std::string& worker_id,
                                                              double now) {
  std::vector<CtrlAction> actions;
  auto wit = workers_.find(worker_id);
  if (wit == workers_.end()) return actions;
  wit->second.alive = false;
  wit->second.hosted.clear();

  for (auto& [model_id, e] : registry_) {
    if (e.state == ModelState::Deleted) continue;
    bool touched = false;
    auto& reps = e.replicas;
    if (std::find(reps.begin(), reps.end(), worker_id) != reps.end()) {
      reps.erase(std::remove(reps.begin(), reps.end(), worker_id), reps.end());
      touched = true;
    }
    auto& pend = e.pending_replicas;
    if (std::find(pend.begin(), pend.end(), worker_id) != pend.end()) {
      pend.erase(std::remove(pend.begin(), pend.end(), worker_id), pend.end());
      touched = true;
    }
    if (!touched) continue;
    bump_routing(now, model_id);
    replica_events_.push_back({now, model_id, static_cast<int>(reps.size())});

    int target = std::max(cfg_.min_replicas, scale_target(e));
    int have = static_cast<int>(reps.size() + pend.size());
    if (target > have) {
      std::set<std::string> exclude{worker_id};
      for (const auto& r : reps) exclude.insert(r);
      for (const auto& r : pend) exclude.insert(r);
      try {
        std::vector<std::string> repl = place(e, target - have, exclude);
        for (const auto& w : repl) {
          pend.push_back(w);
          workers_[w].hosted.insert(model_id);
          actions.push_back({CtrlAction::Kind::LoadModel, w, model_id});
        }
      } catch (const Error&) {
        // cluster cannot restore the target count right now
      }
    }
  }
  return actions;
}

// ---------------------------------------------------------------------------
// Routing
// ---------------------------------------------------------------------------

void ControllerCore::bump_routing(double now, const std::string& model_id) {
  (void)now;
  routing_.version++;
  auto it = registry_.find(model_id);
  if (it == registry_.end() || it->second.state == ModelState::Deleted ||
      it->second.replicas.empty()) {
    routing_.replicas.erase(model_id);
  } else {
    routing_.replicas[model_id] = it->second.replicas;
  }
}

std::string ControllerCore::route(const std::string& model_id,
                                  const std::set<std::string>& exclude) const {
  auto it = routing_.replicas.find(model_id);
  if (it == routing_.replicas.end())
    throw Error(Errc::ModelUnavailable, "model '" + model_id + "' has no routable replica");
  auto rit = registry_.find(model_id);
  struct Cand {
    double cost;
    std::string id;
  };
  std::vector<Cand> cands;
  for (const auto& w : it->second) {
    if (exclude.count(w)) continue;
    auto wit = workers_.find(w);
    if (wit == workers_.end() || !wit->second.alive) continue;
    const WorkerInfo& info = wit->second;
    const WorkerStatsLite& s = info.last_stats;
    // cache-affinity and load aware: a replica that would have to copy the
    // model in pays that copy as a routing penalty
    double penalty = 0.0;
    bool dev = std::find(s.device_resident.begin(), s.device_resident.end(), model_id) !=
               s.device_resident.end();
    if (!dev && rit != registry_.end()) {
      double bytes = static_cast<double>(rit->second.manifest->declared_footprint_bytes);
      penalty = bytes / info.profile.host_to_device_bandwidth * 1e3;
      bool host = std::find(s.host_resident.begin(), s.host_resident.end(), model_id) !=
                  s.host_resident.end();
      if (!host) penalty += bytes / info.profile.fetch_bandwidth * 1e3;
    }
    cands.push_back({s.pending_transfer_ms + s.pending_execute_ms + penalty, w});
  }
  if (cands.empty())
    throw Error(Errc::ModelUnavailable, "model '" + model_id + "' has no routable replica");
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    return std::tie(a.cost, a.id) < std::tie(b.cost, b.id);
  });
  return cands.front().id;
}

// ---------------------------------------------------------------------------
// Introspection
// ---------------------------------------------------------------------------

const RegistryEntry* ControllerCore::find_model(const std::string& model_id) const {
  auto it = registry_.find(model_id);
  return it == registry_.end() ? nullptr : &it->second;
}

const WorkerInfo* ControllerCore::find_worker(const std::string& worker_id) const {
  auto it = workers_.find(worker_id);
  return it == workers_.end() ? nullptr : &it->second;
}

std::vector<const RegistryEntry*> ControllerCore::models() const {
  std::vector<const RegistryEntry*> out;
  for (const auto& [id, e] : registry_) out.push_back(&e);
  return out;
}

std::vector<const WorkerInfo*> ControllerCore::workers() const {
  std::vector<const WorkerInfo*> out;
  for (const auto& [id, w] : workers_) out.push_back(&w);
  return out;
}

// ---------------------------------------------------------------------------
// Journal: length-prefixed JSON records, replayed on restart.
// ---------------------------------------------------------------------------

void ControllerCore::journal_append(const std::string& op, const std::string& tenant,
                                    const std::string& model_id, const std::string& payload) {
  if (cfg_.journal_path.empty()) return;
  json j{{"v", 1}, {"op", op}, {"tenant", tenant}, {"model", model_id}, {"payload", payload}};
  std::string body = j.dump();
  std::ofstream out(cfg_.journal_path, std::ios::app | std::ios::binary);
  uint32_t len = static_cast<uint32_t>(body.size());
  unsigned char hdr[4] = {static_cast<unsigned char>(len >> 24),
                          static_cast<unsigned char>(len >> 16),
                          static_cast<unsigned char>(len >> 8), static_cast<unsigned char>(len)};
  out.write(reinterpret_cast<const char*>(hdr), 4);
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
}

void ControllerCore::journal_replay() {
  std::ifstream in(cfg_.journal_path, std::ios::binary);
  if (!in) return;
  std::string journal = cfg_.journal_path;
  cfg_.journal_path.clear();  // suppress re-journaling while replaying
  unsigned char hdr[4];
  while (in.read(reinterpret_cast<char*>(hdr), 4)) {
    uint32_t len = (uint32_t(hdr[0]) << 24) | (uint32_t(hdr[1]) << 16) | (uint32_t(hdr[2]) << 8) |
                   uint32_t(hdr[3]);
    std::string body(len, '\0');
    if (!in.read(body.data(), len)) break;
    json j = json::parse(body, nullptr, false);
    if (j.is_discarded()) continue;
    std::string op = j.value("op", "");
    if (op == "upload") {
      auto manifest =
          std::make_shared<const ModelManifest>(parse_manifest(j.value("payload", "")));
      RegistryEntry e;
      e.model_id = j.value("model", manifest->model_name);
      e.tenant_id = j.value("tenant", "");
      e.manifest = manifest;
      e.state = ModelState::Registering;  // replicas must re-ack after restart
      registry_[e.model_id] = std::move(e);
    } else if (op == "delete") {
      auto it = registry_.find(j.value("model", ""));
      if (it != registry_.end()) it->second.state = ModelState::Deleted;
    }
  }
  cfg_.journal_path = journal;
}

}  // namespace infershare
