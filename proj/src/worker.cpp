#include "infershare/worker.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace infershare {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
std::string load_job_id(const std::string& model_id) { return "load:" + model_id; }
}  // namespace

const char* request_state_name(RequestState s) {
  switch (s) {
    case RequestState::QueuedTransfer: return "queued-transfer";
    case RequestState::QueuedExecute: return "queued-execute";
    case RequestState::Transferring: return "transferring";
    case RequestState::Executing: return "executing";
    case RequestState::Done: return "done";
    case RequestState::Rejected: return "rejected";
    case RequestState::Cancelled: return "cancelled";
    case RequestState::Rerouted: return "rerouted";
    case RequestState::Faulted: return "faulted";
  }
  return "?";
}

const char* resource_name(Resource r) {
  return r == Resource::Transfer ? "transfer" : "execute";
}

double InferenceRequest::deadline_abs_ms() const {
  return deadline_ms ? arrival_ms + *deadline_ms : kInf;
}

WorkerCore::WorkerCore(WorkerConfig cfg, DeviceProfile profile)
    : cfg_(std::move(cfg)), profile_(std::move(profile)) {
  profile_.validate();
  host_.capacity = cfg_.host_cache_bytes;
  device_.capacity = profile_.device_memory_bytes;
  fair_transfer_.weights = cfg_.tenant_weights;
  fair_execute_.weights = cfg_.tenant_weights;
}

// ---------------------------------------------------------------------------
// Cache bookkeeping
// ---------------------------------------------------------------------------

Residency WorkerCore::residency_of(const std::string& model_id) const {
  auto dit = device_.entries.find(model_id);
  if (dit != device_.entries.end() && !dit->second.loading) return Residency::DeviceHit;
  auto hit = host_.entries.find(model_id);
  if (hit != host_.entries.end() && !hit->second.loading) return Residency::HostHit;
  return Residency::Cold;
}

std::vector<std::string> WorkerCore::resident_models(Residency level) const {
  std::vector<std::string> out;
  const CacheLevel& lvl = level == Residency::DeviceHit ? device_ : host_;
  for (const auto& [m, e] : lvl.entries)
    if (!e.loading) out.push_back(m);
  return out;
}

const ModelManifest* WorkerCore::model_manifest(const std::string& model_id) const {
  auto it = models_.find(model_id);
  return it == models_.end() ? nullptr : it->second.manifest.get();
}

void WorkerCore::touch(CacheLevel& level, const std::string& model_id, double now) {
  auto it = level.entries.find(model_id);
  if (it != level.entries.end()) {
    it->second.last_used_ms = now;
    it->second.last_used_seq = admit_seq_;
  }
}

ResidencyPlan WorkerCore::plan_residency(const std::string& model_id, Residency target,
                                         double now) const {
  (void)now;
  ResidencyPlan plan;
  auto mit = models_.find(model_id);
  if (mit == models_.end()) {
    plan.feasible = false;
    return plan;
  }
  int64_t bytes = mit->second.manifest->declared_footprint_bytes;

  auto plan_level = [&](const CacheLevel& level, std::vector<std::string>* evict) -> bool {
    if (level.entries.count(model_id)) return true;
    if (bytes > level.capacity) return false;
    int64_t freeable = level.capacity - level.used;
    if (freeable >= bytes) return true;
    // LRU among unpinned entries
    std::vector<std::pair<std::pair<double, std::string>, int64_t>> victims;
    for (const auto& [m, e] : level.entries)
      if (e.pinned == 0 && !e.loading) victims.push_back({{e.last_used_ms, m}, e.bytes});
    std::sort(victims.begin(), victims.end());
    for (const auto& [key, vbytes] : victims) {
      if (freeable >= bytes) break;
      evict->push_back(key.second);
      freeable += vbytes;
    }
    return freeable >= bytes;
  };

  if (target == Residency::HostHit || target == Residency::DeviceHit) {
    auto hit = host_.entries.find(model_id);
    if (hit == host_.entries.end()) {
      plan.need_fetch = true;
      if (!plan_level(host_, &plan.evict_host)) plan.feasible = false;
    }
  }
  if (target == Residency::DeviceHit) {
    auto dit = device_.entries.find(model_id);
    if (dit == device_.entries.end()) {
      plan.need_transfer = true;
      if (!plan_level(device_, &plan.evict_device)) plan.feasible = false;
    }
  }
  return plan;
}

bool WorkerCore::reserve_cache(const std::string& model_id, Residency target, double now) {
  ResidencyPlan plan = plan_residency(model_id, target, now);
  if (!plan.feasible) return false;
  auto evict_from = [&](CacheLevel& level, const std::vector<std::string>& ids) {
    for (const auto& id : ids) {
      auto it = level.entries.find(id);
      if (it == level.entries.end()) continue;
      if (admit_seq_ - it->second.last_used_seq < cfg_.cache_thrash_window)
        findings_.push_back({Errc::CacheThrash, id,
                             "evicted a model used within the last " +
                                 std::to_string(cfg_.cache_thrash_window) + " requests"});
      level.used -= it->second.bytes;
      level.entries.erase(it);
    }
  };
  evict_from(host_, plan.evict_host);
  evict_from(device_, plan.evict_device);

  int64_t bytes = models_.at(model_id).manifest->declared_footprint_bytes;
  if (plan.need_fetch) {
    host_.entries[model_id] = CacheEntry{bytes, now, admit_seq_, 0, true};
    host_.used += bytes;
  }
  if (target == Residency::DeviceHit && plan.need_transfer) {
    device_.entries[model_id] = CacheEntry{bytes, now, admit_seq_, 0, true};
    device_.used += bytes;
  }
  return true;
}

void WorkerCore::unpin(const std::string& request_id) {
  auto it = requests_.find(request_id);
  if (it == requests_.end()) return;
  PendingRequest& pr = it->second;
  if (pr.holds_device_pin) {
    auto dit = device_.entries.find(pr.req.model_id);
    if (dit != device_.entries.end()) dit->second.pinned--;
    pr.holds_device_pin = false;
  }
  if (pr.holds_host_pin) {
    auto hit = host_.entries.find(pr.req.model_id);
    if (hit != host_.entries.end()) hit->second.pinned--;
    pr.holds_host_pin = false;
  }
}

// ---------------------------------------------------------------------------
// Control plane
// ---------------------------------------------------------------------------

void WorkerCore::load_model(std::shared_ptr<const ModelManifest> manifest, double now,
                            bool instant) {
  const std::string& id = manifest->model_name;
  int64_t bytes = manifest->declared_footprint_bytes;
  if (bytes > cfg_.host_cache_bytes)
    throw Error(Errc::ModelTooLarge, "footprint " + std::to_string(bytes) +
                                         " exceeds host cache " +
                                         std::to_string(cfg_.host_cache_bytes));
  if (models_.count(id) && !models_[id].draining)
    return;  // already registered, idempotent
  models_[id] = ModelInfo{std::move(manifest), false, false};
  if (instant) {
    if (!reserve_cache(id, Residency::HostHit, now))
      throw Error(Errc::ModelTooLarge, "cannot place " + id + " host-resident");
    auto hit = host_.entries.find(id);
    if (hit != host_.entries.end()) hit->second.loading = false;
    models_[id].load_acked = true;
  } else {
    load_queue_.push_back(id);
  }
}

void WorkerCore::evict_model(const std::string& model_id, double now) {
  (void)now;
  auto it = models_.find(model_id);
  if (it == models_.end() || it->second.draining)
    throw Error(Errc::UnknownModel, "evict of unknown model '" + model_id + "'");
  it->second.draining = true;
  pending_evictions_.insert(model_id);
  load_queue_.erase(std::remove(load_queue_.begin(), load_queue_.end(), model_id),
                    load_queue_.end());
}

bool WorkerCore::has_model(const std::string& model_id) const {
  auto it = models_.find(model_id);
  return it != models_.end() && !it->second.draining;
}

std::vector<Action> WorkerCore::finish_evictions(double) {
  std::vector<Action> actions;
  for (auto it = pending_evictions_.begin(); it != pending_evictions_.end();) {
    const std::string& m = *it;
    bool busy = active_load_ == m;
    for (const auto& [id, pr] : requests_)
      if (pr.req.model_id == m) busy = true;
    auto pinned = [&](const CacheLevel& level) {
      auto e = level.entries.find(m);
      return e != level.entries.end() && (e->second.pinned > 0 || e->second.loading);
    };
    if (!busy && !pinned(host_) && !pinned(device_)) {
      auto drop = [&](CacheLevel& level) {
        auto e = level.entries.find(m);
        if (e != level.entries.end()) {
          level.used -= e->second.bytes;
          level.entries.erase(e);
        }
      };
      drop(host_);
      drop(device_);
      models_.erase(m);
      Action a;
      a.kind = Action::Kind::EvictAck;
      a.model_id = m;
      actions.push_back(std::move(a));
      it = pending_evictions_.erase(it);
    } else {
      ++it;
    }
  }
  return actions;
}

// ---------------------------------------------------------------------------
// Costs, candidates, pending work
// ---------------------------------------------------------------------------

double WorkerCore::exec_cost_ms(const std::string& model_id, int batch) const {
  const CalEntry* e = calibration_.find({model_id, profile_.device_id, batch});
  if (e && e->samples >= kCalibrationSwitch) return std::max(e->ewma_ms, kExecFloorMs);
  auto key = std::make_pair(model_id, batch);
  auto it = analytic_ms_.find(key);
  if (it != analytic_ms_.end()) return it->second;
  double ms = predict_exec(*models_.at(model_id).manifest, profile_, batch, nullptr);
  analytic_ms_[key] = ms;
  return ms;
}

double WorkerCore::stage_cost_ms(const PendingRequest& pr, Resource r, double now) const {
  (void)now;
  const ModelManifest& m = *models_.at(pr.req.model_id).manifest;
  if (r == Resource::Execute) return exec_cost_ms(pr.req.model_id, pr.req.batch);
  // transfer stage: depends on residency at this instant
  if (pr.req.force_residency) {
    auto [f, t] = predict_transfer(m, profile_, *pr.req.force_residency);
    return f + t;
  }
  if (device_.entries.count(pr.req.model_id)) return 0.0;
  Residency res = residency_of(pr.req.model_id);
  if (res == Residency::HostHit) {
    auto [f, t] = predict_transfer(m, profile_, Residency::HostHit);
    return f + t;
  }
  // cold; if a load is already bringing it to host only the h2d part remains
  bool load_pending = active_load_ == pr.req.model_id ||
                      std::count(load_queue_.begin(), load_queue_.end(), pr.req.model_id) > 0;
  auto [f, t] = predict_transfer(m, profile_, Residency::Cold);
  return load_pending ? t : f + t;
}

double WorkerCore::pending_ms(Resource r, double now) const {
  const SerialResource& res = r == Resource::Transfer ? transfer_ : execute_;
  double total = 0.0;
  if (!res.occupants.empty()) total += std::max(0.0, res.stage_end_ms - now);
  for (const auto& id : res.queue) total += stage_cost_ms(requests_.at(id), r, now);
  if (r == Resource::Transfer) {
    for (const auto& m : load_queue_) {
      auto [f, t] = predict_transfer(*models_.at(m).manifest, profile_, Residency::Cold);
      (void)t;
      total += f;
    }
  }
  return total;
}

std::vector<SchedCandidate> WorkerCore::candidates_for(const SerialResource& res, Resource r,
                                                       double now) const {
  std::vector<SchedCandidate> out;
  for (const auto& id : res.queue) {
    const PendingRequest& pr = requests_.at(id);
    if (r == Resource::Execute) {
      auto dit = device_.entries.find(pr.req.model_id);
      if (dit == device_.entries.end() || dit->second.loading) continue;  // not ready
    }
    out.push_back({id, pr.req.tenant_id, pr.req.arrival_ms, pr.req.deadline_abs_ms(),
                   stage_cost_ms(pr, r, now)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Admission
// ---------------------------------------------------------------------------

void WorkerCore::enqueue(const InferenceRequest& req, double now, const AdmitOutcome& outcome) {
  admit_seq_++;
  PendingRequest pr;
  pr.req = req;
  pr.record.request_id = req.request_id;
  pr.record.tenant_id = req.tenant_id;
  pr.record.model_id = req.model_id;
  pr.record.worker_id = cfg_.worker_id;
  pr.record.batch = req.batch;
  pr.record.arrival_ms = req.arrival_ms;
  pr.record.admit_ms = now;
  pr.record.deadline_rel_ms = req.deadline_ms ? *req.deadline_ms : -1.0;
  pr.record.device_cost_per_hour = profile_.cost_per_hour;
  pr.record.device_kind = device_kind_name(profile_.kind);
  pr.record.has_estimate = outcome.has_estimate;
  pr.record.admit_estimate = outcome.estimate;

  bool forced_transfer =
      req.force_residency && *req.force_residency != Residency::DeviceHit;
  if (!forced_transfer && device_.entries.count(req.model_id)) {
    // device-resident (or being raised by an earlier request): execute queue
    pr.state = RequestState::QueuedExecute;
    pr.record.residency = Residency::DeviceHit;
    device_.entries[req.model_id].pinned++;
    pr.holds_device_pin = true;
    execute_.queue.push_back(req.request_id);
  } else {
    pr.state = RequestState::QueuedTransfer;
    pr.record.residency = residency_of(req.model_id);
    transfer_.queue.push_back(req.request_id);
  }
  requests_[req.request_id] = std::move(pr);
}

AdmitOutcome WorkerCore::admit(const InferenceRequest& req, double now, bool want_estimate) {
  AdmitOutcome out;
  auto mit = models_.find(req.model_id);
  if (mit == models_.end() || mit->second.draining) {
    out.reason = Errc::UnknownModel;
    out.detail = "model '" + req.model_id + "' is not registered on this worker";
    return out;
  }
  if (req.batch < 1 || req.batch > profile_.max_batch) {
    out.reason = Errc::BatchTooLarge;
    out.detail = "batch " + std::to_string(req.batch) + " > max " +
                 std::to_string(profile_.max_batch);
    return out;
  }
  if (mit->second.manifest->declared_footprint_bytes > device_.capacity) {
    out.reason = Errc::ModelTooLarge;
    out.detail = "footprint exceeds device memory";
    return out;
  }
  if (pending_ms(Resource::Transfer, now) > cfg_.admission_ceiling_ms ||
      pending_ms(Resource::Execute, now) > cfg_.admission_ceiling_ms) {
    out.reason = Errc::Overloaded;
    out.detail = "pending work exceeds admission ceiling";
    return out;
  }
  if (cfg_.per_tenant_ceiling_ms > 0) {
    double tenant_pending = 0.0;
    for (const auto& [id, pr] : requests_)
      if (pr.req.tenant_id == req.tenant_id && (pr.state == RequestState::QueuedTransfer ||
                                                pr.state == RequestState::QueuedExecute))
        tenant_pending += stage_cost_ms(pr, Resource::Execute, now);
    if (tenant_pending > cfg_.per_tenant_ceiling_ms) {
      out.reason = Errc::Overloaded;
      out.detail = "tenant pending work exceeds per-tenant ceiling";
      return out;
    }
  }

  if (want_estimate || req.deadline_ms) {
    out.estimate = replay_estimate(req, now);
    out.has_estimate = true;
    if (req.deadline_ms && out.estimate.total_ms > *req.deadline_ms) {
      out.reason = Errc::WouldMissDeadline;
      out.detail = "estimated " + std::to_string(out.estimate.total_ms) + " ms > deadline " +
                   std::to_string(*req.deadline_ms) + " ms";
      return out;
    }
  }
  enqueue(req, now, out);
  out.admitted = true;
  return out;
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

std::vector<Action> WorkerCore::poll(double now) {
  std::vector<Action> actions;
  for (auto& a : finish_evictions(now)) actions.push_back(std::move(a));

  bool progressed = true;
  while (progressed) {
    progressed = false;

    // Requests whose model reached the device while they waited for transfer
    // move straight to the execute queue; they occupy nothing. Forced-miss
    // requests still pay their transfer.
    for (auto it = transfer_.queue.begin(); it != transfer_.queue.end();) {
      PendingRequest& pr = requests_.at(*it);
      if (!pr.req.force_residency && device_.entries.count(pr.req.model_id)) {
        pr.state = RequestState::QueuedExecute;
        pr.record.residency = Residency::DeviceHit;
        device_.entries[pr.req.model_id].pinned++;
        pr.holds_device_pin = true;
        execute_.queue.push_back(*it);
        it = transfer_.queue.erase(it);
        progressed = true;
      } else {
        ++it;
      }
    }

    if (transfer_.occupants.empty()) {
      // control-plane loads first: they unblock every request behind them
      if (!load_queue_.empty()) {
        const std::string m = load_queue_.front();
        if (reserve_cache(m, Residency::HostHit, now)) {
          load_queue_.pop_front();
          auto hit = host_.entries.find(m);
          if (hit != host_.entries.end()) hit->second.pinned++;
          active_load_ = m;
          auto [fetch, h2d] = predict_transfer(*models_.at(m).manifest, profile_, Residency::Cold);
          (void)h2d;
          transfer_.occupants = {load_job_id(m)};
          transfer_.stage_start_ms = now;
          transfer_.stage_end_ms = now + fetch;
          Action a;
          a.kind = Action::Kind::StartStage;
          a.resource = Resource::Transfer;
          a.request_ids = {load_job_id(m)};
          a.duration_ms = fetch;
          actions.push_back(std::move(a));
          progressed = true;
          continue;
        }
      }
      if (transfer_.occupants.empty() && !transfer_.queue.empty()) {
        // only candidates that can actually start now
        std::vector<SchedCandidate> cands;
        for (const auto& id : transfer_.queue) {
          const PendingRequest& pr = requests_.at(id);
          Residency res = residency_of(pr.req.model_id);
          bool load_pending =
              active_load_ == pr.req.model_id ||
              std::count(load_queue_.begin(), load_queue_.end(), pr.req.model_id) > 0;
          if (res == Residency::Cold && load_pending) continue;  // wait for the load
          if (!plan_residency(pr.req.model_id, Residency::DeviceHit, now).feasible) continue;
          cands.push_back({id, pr.req.tenant_id, pr.req.arrival_ms, pr.req.deadline_abs_ms(),
                           stage_cost_ms(pr, Resource::Transfer, now)});
        }
        int pick = pick_next(cands, cfg_.policy, cfg_.fair, &fair_transfer_);
        if (pick >= 0) {
          const std::string id = cands[pick].request_id;
          PendingRequest& pr = requests_.at(id);
          Residency res = pr.req.force_residency ? *pr.req.force_residency
                                                 : residency_of(pr.req.model_id);
          auto [fetch, h2d] = predict_transfer(*models_.at(pr.req.model_id).manifest, profile_, res);
          reserve_cache(pr.req.model_id, Residency::DeviceHit, now);
          auto hit = host_.entries.find(pr.req.model_id);
          if (hit != host_.entries.end()) {
            hit->second.pinned++;
            pr.holds_host_pin = true;
          }
          auto dit = device_.entries.find(pr.req.model_id);
          if (dit != device_.entries.end()) {
            dit->second.pinned++;
            pr.holds_device_pin = true;
          }
          pr.state = RequestState::Transferring;
          pr.record.residency = res;
          pr.record.fetch_ms = fetch;
          pr.record.h2d_ms = h2d;
          pr.record.transfer_start_ms = now;
          pr.stage_start_ms = now;
          transfer_.queue.erase(std::remove(transfer_.queue.begin(), transfer_.queue.end(), id),
                                transfer_.queue.end());
          transfer_.occupants = {id};
          transfer_.stage_start_ms = now;
          transfer_.stage_end_ms = now + fetch + h2d;
          Action a;
          a.kind = Action::Kind::StartStage;
          a.resource = Resource::Transfer;
          a.request_ids = {id};
          a.duration_ms = fetch + h2d;
          actions.push_back(std::move(a));
          progressed = true;
        }
      }
    }

    if (execute_.occupants.empty() && !execute_.queue.empty()) {
      std::vector<SchedCandidate> cands = candidates_for(execute_, Resource::Execute, now);
      int pick = pick_next(cands, cfg_.policy, cfg_.fair, &fair_execute_);
      if (pick >= 0) {
        std::vector<std::string> ids = {cands[pick].request_id};
        const std::string& model = requests_.at(ids[0]).req.model_id;
        int total_batch = requests_.at(ids[0]).req.batch;
        if (cfg_.batching) {
          // coalesce same-model ready requests in (arrival, id) order
          std::vector<const SchedCandidate*> same;
          for (const auto& c : cands)
            if (c.request_id != ids[0] && requests_.at(c.request_id).req.model_id == model)
              same.push_back(&c);
          std::sort(same.begin(), same.end(), [](const auto* a, const auto* b) {
            return std::tie(a->arrival_ms, a->request_id) < std::tie(b->arrival_ms, b->request_id);
          });
          for (const auto* c : same) {
            int b = requests_.at(c->request_id).req.batch;
            if (total_batch + b > profile_.max_batch) break;
            total_batch += b;
            ids.push_back(c->request_id);
          }
        }
        double dur = exec_cost_ms(model, total_batch);
        for (const auto& id : ids) {
          PendingRequest& pr = requests_.at(id);
          pr.state = RequestState::Executing;
          pr.record.exec_start_ms = now;
          pr.record.stage_batch = total_batch;
          pr.stage_start_ms = now;
          execute_.queue.erase(std::remove(execute_.queue.begin(), execute_.queue.end(), id),
                               execute_.queue.end());
        }
        execute_.occupants = ids;
        execute_.stage_start_ms = now;
        execute_.stage_end_ms = now + dur;
        execute_.stage_batch = total_batch;
        Action a;
        a.kind = Action::Kind::StartStage;
        a.resource = Resource::Execute;
        a.request_ids = ids;
        a.duration_ms = dur;
        actions.push_back(std::move(a));
        progressed = true;
      }
    }
  }
  return actions;
}

void WorkerCore::finalize(PendingRequest& pr, RequestState outcome, double now,
                          const std::string& detail, std::vector<Action>* out) {
  pr.record.outcome = outcome;
  pr.record.done_ms = now;
  pr.record.detail = detail;
  pr.state = outcome;
  unpin(pr.req.request_id);
  Action a;
  a.kind = Action::Kind::Complete;
  a.record = pr.record;
  out->push_back(std::move(a));
}

std::vector<Action> WorkerCore::on_stage_complete(Resource resource, const std::string& request_id,
                                                  double now) {
  std::vector<Action> actions;
  if (resource == Resource::Transfer) {
    if (!active_load_.empty() && request_id == load_job_id(active_load_)) {
      auto hit = host_.entries.find(active_load_);
      if (hit != host_.entries.end()) {
        hit->second.loading = false;
        hit->second.pinned--;
        hit->second.last_used_ms = now;
      }
      auto mit = models_.find(active_load_);
      if (mit != models_.end()) mit->second.load_acked = true;
      Action a;
      a.kind = Action::Kind::LoadAck;
      a.model_id = active_load_;
      actions.push_back(std::move(a));
      active_load_.clear();
      transfer_.occupants.clear();
      for (auto& e : finish_evictions(now)) actions.push_back(std::move(e));
      return actions;
    }
    auto it = requests_.find(request_id);
    if (it == requests_.end()) return actions;  // cancelled while in flight (not expected)
    PendingRequest& pr = it->second;
    pr.record.transfer_end_ms = now;
    auto hit = host_.entries.find(pr.req.model_id);
    if (hit != host_.entries.end()) {
      hit->second.loading = false;
      hit->second.last_used_ms = now;
      hit->second.last_used_seq = admit_seq_;
      if (pr.holds_host_pin) {
        hit->second.pinned--;
        pr.holds_host_pin = false;
      }
    }
    auto dit = device_.entries.find(pr.req.model_id);
    if (dit != device_.entries.end()) {
      dit->second.loading = false;
      dit->second.last_used_ms = now;
      dit->second.last_used_seq = admit_seq_;
    }
    pr.state = RequestState::QueuedExecute;
    execute_.queue.push_back(request_id);
    transfer_.occupants.clear();
    return actions;
  }

  // execute completion: the whole occupant batch finishes together
  if (std::find(execute_.occupants.begin(), execute_.occupants.end(), request_id) ==
      execute_.occupants.end())
    return actions;
  double realized = now - execute_.stage_start_ms;
  std::string model_id;
  std::vector<std::string> ids = execute_.occupants;
  execute_.occupants.clear();
  for (const auto& id : ids) {
    auto it = requests_.find(id);
    if (it == requests_.end()) continue;
    PendingRequest& pr = it->second;
    model_id = pr.req.model_id;
    pr.record.exec_end_ms = now;
    finalize(pr, RequestState::Done, now, "", &actions);
    requests_.erase(it);
  }
  if (!model_id.empty()) {
    touch(device_, model_id, now);
    if (!replay_mode_)
      calibration_.update({model_id, profile_.device_id, execute_.stage_batch}, realized);
  }
  for (auto& e : finish_evictions(now)) actions.push_back(std::move(e));
  return actions;
}

std::vector<Action> WorkerCore::drain_all(double now, const std::string& detail) {
  std::vector<Action> actions;
  for (auto& [id, pr] : requests_) finalize(pr, RequestState::Cancelled, now, detail, &actions);
  requests_.clear();
  transfer_.queue.clear();
  transfer_.occupants.clear();
  execute_.queue.clear();
  execute_.occupants.clear();
  load_queue_.clear();
  active_load_.clear();
  return actions;
}

std::vector<Action> WorkerCore::inject_device_fault(double now) {
  std::vector<Action> actions;
  std::vector<std::string> ids = execute_.occupants;
  execute_.occupants.clear();
  for (const auto& id : ids) {
    auto it = requests_.find(id);
    if (it == requests_.end()) continue;
    finalize(it->second, RequestState::Faulted, now, "DeviceFault", &actions);
    requests_.erase(it);
  }
  return actions;
}

std::vector<RerouteDecision> WorkerCore::reroute_check(double now) {
  std::vector<RerouteDecision> decisions;
  std::vector<std::string> queued;
  for (const auto& [id, pr] : requests_)
    if ((pr.state == RequestState::QueuedTransfer || pr.state == RequestState::QueuedExecute) &&
        pr.req.deadline_ms)
      queued.push_back(id);
  std::sort(queued.begin(), queued.end());

  for (const auto& id : queued) {
    PendingRequest& pr = requests_.at(id);
    LatencyEstimate est = replay_until(id, now);
    if (now + est.total_ms <= pr.req.deadline_abs_ms()) continue;
    // cancel and hand back to the controller for placement
    transfer_.queue.erase(std::remove(transfer_.queue.begin(), transfer_.queue.end(), id),
                          transfer_.queue.end());
    execute_.queue.erase(std::remove(execute_.queue.begin(), execute_.queue.end(), id),
                         execute_.queue.end());
    unpin(id);
    RerouteDecision d{id, pr.req.tenant_id, pr.req.model_id, est, pr.record};
    d.record.outcome = RequestState::Rerouted;
    d.record.done_ms = now;
    d.record.detail = "estimated " + std::to_string(est.total_ms) + " ms misses deadline";
    decisions.push_back(std::move(d));
    requests_.erase(id);
  }
  return decisions;
}

// ---------------------------------------------------------------------------
// Completion estimation: clone and replay
// ---------------------------------------------------------------------------

LatencyEstimate WorkerCore::replay_until(const std::string& request_id, double now) const {
  WorkerCore sim(*this);
  sim.replay_mode_ = true;
  return sim.run_replay(request_id, now);
}

LatencyEstimate WorkerCore::replay_estimate(const InferenceRequest& req, double now) const {
  WorkerCore sim(*this);
  sim.replay_mode_ = true;
  AdmitOutcome none;
  sim.enqueue(req, now, none);
  return sim.run_replay(req.request_id, now);
}

LatencyEstimate WorkerCore::run_replay(const std::string& request_id, double now) {
  struct Ev {
    double t;
    int pri;  // execute completes before transfer at equal times
    Resource r;
    std::string id;
    bool operator<(const Ev& o) const { return std::tie(t, pri, id) < std::tie(o.t, o.pri, o.id); }
  };
  std::vector<Ev> events;
  auto seed = [&](const SerialResource& res, Resource r) {
    if (!res.occupants.empty())
      events.push_back({res.stage_end_ms, r == Resource::Execute ? 0 : 1, r, res.occupants[0]});
  };
  seed(transfer_, Resource::Transfer);
  seed(execute_, Resource::Execute);

  LatencyEstimate est;
  double t = now;
  const ModelManifest* manifest = nullptr;
  if (auto it = models_.find(requests_.at(request_id).req.model_id); it != models_.end())
    manifest = it->second.manifest.get();

  std::optional<CompletionRecord> done;
  auto absorb = [&](std::vector<Action>&& actions) {
    for (auto& a : actions) {
      if (a.kind == Action::Kind::StartStage) {
        events.push_back({t + a.duration_ms, a.resource == Resource::Execute ? 0 : 1, a.resource,
                          a.request_ids[0]});
      } else if (a.kind == Action::Kind::Complete && a.record.request_id == request_id) {
        done = a.record;
      }
    }
  };

  absorb(poll(t));
  while (!done) {
    if (events.empty()) {
      // nothing in flight can unblock the request; report an unbounded wait
      est.exec_ms = manifest ? predict_exec(*manifest, profile_, 1, &calibration_) : 0.0;
      est.queue_ms = kInf;
      est.finalize();
      est.confidence_p99_ms = kInf;
      return est;
    }
    std::sort(events.begin(), events.end());
    double batch_t = events.front().t;
    t = batch_t;
    std::vector<Ev> batch;
    while (!events.empty() && events.front().t == batch_t) {
      batch.push_back(events.front());
      events.erase(events.begin());
    }
    for (const auto& ev : batch) absorb(on_stage_complete(ev.r, ev.id, t));
    absorb(poll(t));
  }

  est.fetch_ms = done->fetch_ms;
  est.transfer_ms = done->h2d_ms;
  est.exec_ms = done->exec_end_ms - done->exec_start_ms;
  est.queue_ms = (done->done_ms - now) - est.fetch_ms - est.transfer_ms - est.exec_ms;
  if (est.queue_ms < 0 && est.queue_ms > -1e-9) est.queue_ms = 0.0;  // fp dust
  est.finalize();
  double p99_exec =
      manifest ? confidence_p99(*manifest, profile_, done->batch, &calibration_) : est.exec_ms;
  est.confidence_p99_ms = est.total_ms + (p99_exec - est.exec_ms);
  return est;
}

LatencyEstimate estimate_completion(const WorkerCore& worker, const InferenceRequest& req,
                                    double now) {
  if (!worker.has_model(req.model_id))
    throw Error(Errc::UnknownModel, "model '" + req.model_id + "' not registered");
  return worker.replay_estimate(req, now);
}

// ---------------------------------------------------------------------------
// Snapshot
// ---------------------------------------------------------------------------

WorkerQueueSnapshot WorkerCore::snapshot(double now) const {
  WorkerQueueSnapshot s;
  s.worker_id = cfg_.worker_id;
  s.now_ms = now;
  s.policy = cfg_.policy;
  s.pending_transfer_ms = pending_ms(Resource::Transfer, now);
  s.pending_execute_ms = pending_ms(Resource::Execute, now);
  s.queued_transfer = static_cast<int>(transfer_.queue.size());
  s.queued_execute = static_cast<int>(execute_.queue.size());
  for (const auto& [m, info] : models_) {
    (void)info;
    s.model_residency[m] = residency_of(m);
  }
  for (const auto& [id, pr] : requests_) {
    if (pr.state == RequestState::QueuedTransfer || pr.state == RequestState::QueuedExecute ||
        pr.state == RequestState::Transferring || pr.state == RequestState::Executing) {
      double rem = pr.state == RequestState::QueuedTransfer
                       ? stage_cost_ms(pr, Resource::Transfer, now)
                       : stage_cost_ms(pr, Resource::Execute, now);
      s.tenant_pending_ms[pr.req.tenant_id] += rem;
    }
  }
  s.device_bytes_used = device_.used;
  s.device_bytes_capacity = device_.capacity;
  s.host_bytes_used = host_.used;
  s.host_bytes_capacity = host_.capacity;
  return s;
}

}  // namespace infershare
