#include "infershare/sim.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <queue>
#include <set>

#include "infershare/executor.hpp"  // mix64 / fnv1a64
#include "infershare/workload.hpp"

namespace infershare {

namespace {

enum class EvKind : int {
  ExecComplete = 0,
  TransferComplete = 1,
  Kill = 2,
  Rejoin = 3,
  Arrival = 4,
  HeartbeatTick = 5,
  DemandTick = 6,
  RerouteTick = 7,
};

struct SimEvent {
  double t = 0.0;
  EvKind kind = EvKind::Arrival;
  uint64_t seq = 0;
  std::string worker;
  std::string id;  // stage key (request id)
  int workload = -1;
  int arrival_index = 0;
  InferenceRequest request;  // Arrival payload
  bool operator>(const SimEvent& o) const {
    return std::tie(t, kind, seq) > std::tie(o.t, o.kind, o.seq);
  }
};

struct SimWorker {
  WorkerDef def;
  std::unique_ptr<WorkerCore> core;
  bool alive = true;
  std::mt19937_64 noise_rng{0};
  double window_exec_busy_ms = 0.0;  // for heartbeat load_frac
  // vm-baseline emulation
  double vm_last_activity_ms = -1.0;
  double vm_up_since_ms = -1.0;
  double vm_uptime_ms = 0.0;
};

class Simulation {
 public:
  Simulation(const ScenarioConfig& cfg, uint64_t seed)
      : cfg_(cfg),
        seed_(seed),
        controller_(make_controller_config(cfg), cfg.cluster.profiles),
        noise_sigma_(cfg.noise.sigma > 0 ? cfg.noise.sigma : default_noise_sigma()) {}

  SimResult run();

 private:
  static ControllerConfig make_controller_config(const ScenarioConfig& cfg) {
    ControllerConfig c;
    c.heartbeat_ms = cfg.cluster.heartbeat_ms;
    c.demand_window_ms = cfg.cluster.demand_window_ms;
    c.saturation_theta = cfg.cluster.saturation_theta;
    c.utilization_mu = cfg.cluster.utilization_mu;
    c.min_replicas = cfg.cluster.min_replicas;
    c.autoscale = cfg.cluster.autoscale;
    return c;
  }

  void push(SimEvent ev) {
    ev.seq = seq_++;
    queue_.push(std::move(ev));
  }

  WorkerConfig worker_config(const WorkerDef& def) const {
    WorkerConfig wc;
    wc.worker_id = def.name;
    wc.policy = cfg_.cluster.policy;
    wc.fair = cfg_.cluster.fair;
    wc.batching = cfg_.cluster.batching;
    wc.admission_ceiling_ms = cfg_.cluster.admission_ceiling_ms;
    wc.per_tenant_ceiling_ms = cfg_.cluster.per_tenant_ceiling_ms;
    wc.host_cache_bytes = def.host_cache_bytes;
    return wc;
  }

  void setup();
  void apply(const SimEvent& ev);
  void handle_actions(const std::string& worker_id, std::vector<Action>&& actions, double t);
  void apply_ctrl(std::vector<CtrlAction>&& actions, double t);
  void do_arrival(const SimEvent& ev);
  void attempt_admit(InferenceRequest req, double t, bool want_estimate, bool is_retry);
  void record_final(CompletionRecord rec);
  void vm_touch(SimWorker& w, double t);

  const ScenarioConfig& cfg_;
  uint64_t seed_;
  ControllerCore controller_;
  double noise_sigma_;
  std::map<std::string, SimWorker> workers_;
  std::map<std::string, std::shared_ptr<const ModelManifest>> manifests_;
  std::map<std::string, std::string> model_tenant_;
  std::priority_queue<SimEvent, std::vector<SimEvent>, std::greater<SimEvent>> queue_;
  uint64_t seq_ = 0;
  std::vector<CompletionRecord> trace_;
  BillingLedger billing_;
  std::map<std::string, int64_t> demand_window_counts_;
  int64_t generated_arrivals_ = 0;
  double last_event_ms_ = 0.0;
  uint64_t retry_seq_ = 0;
};

void Simulation::vm_touch(SimWorker& w, double t) {
  if (!w.def.vm_mode) return;
  if (w.vm_up_since_ms < 0) w.vm_up_since_ms = t;
  w.vm_last_activity_ms = std::max(w.vm_last_activity_ms, t);
}

void Simulation::setup() {
  for (const auto& def : cfg_.cluster.workers) {
    SimWorker w;
    w.def = def;
    DeviceProfile profile = cfg_.cluster.profile_of(def);
    profile.device_id = def.name;
    w.core = std::make_unique<WorkerCore>(worker_config(def), profile);
    w.noise_rng = std::mt19937_64(mix64(seed_, fnv1a64("noise:" + def.name)));
    workers_.emplace(def.name, std::move(w));
    controller_.register_worker(def.name, def.profile, def.host_cache_bytes, 0.0);
  }

  for (const auto& m : cfg_.models) {
    std::string path = m.manifest_path;
    if (!path.empty() && path.front() != '/' && !cfg_.base_dir.empty())
      path = cfg_.base_dir + "/" + path;
    ModelManifest manifest = load_manifest_file(path);
    manifest.model_name = m.name;  // scenario name wins; one file can back many models
    auto shared = std::make_shared<const ModelManifest>(std::move(manifest));
    manifests_[m.name] = shared;
    model_tenant_[m.name] = m.tenant;
    std::vector<std::string> pin;
    if (!m.pin_worker.empty()) pin.push_back(m.pin_worker);
    UploadResult up = controller_.upload_model(m.tenant, shared, 0.0, m.replicas, pin);
    for (const auto& a : up.actions) {
      SimWorker& w = workers_.at(a.worker_id);
      if (m.preload) {
        w.core->load_model(shared, 0.0, /*instant=*/true);
        apply_ctrl(controller_.on_load_ack(a.worker_id, m.name, true, 0.0), 0.0);
      } else {
        w.core->load_model(shared, 0.0, /*instant=*/false);
      }
    }
  }

  // arrivals
  for (size_t i = 0; i < cfg_.workloads.size(); ++i) {
    const WorkloadSpec& spec = cfg_.workloads[i];
    std::vector<double> times = generate_arrivals(spec, seed_, cfg_.duration_s);
    generated_arrivals_ += static_cast<int64_t>(times.size());
    for (size_t k = 0; k < times.size(); ++k) {
      SimEvent ev;
      ev.t = times[k];
      ev.kind = EvKind::Arrival;
      ev.workload = static_cast<int>(i);
      ev.arrival_index = static_cast<int>(k);
      push(std::move(ev));
    }
  }

  double duration_ms = cfg_.duration_s * 1e3;
  for (double t = cfg_.cluster.heartbeat_ms; t <= duration_ms; t += cfg_.cluster.heartbeat_ms)
    push({t, EvKind::HeartbeatTick, 0, "", "", -1, 0, {}});
  for (double t = cfg_.cluster.demand_window_ms; t <= duration_ms;
       t += cfg_.cluster.demand_window_ms)
    push({t, EvKind::DemandTick, 0, "", "", -1, 0, {}});
  if (cfg_.reroute_check_ms > 0)
    for (double t = cfg_.reroute_check_ms; t <= duration_ms; t += cfg_.reroute_check_ms)
      push({t, EvKind::RerouteTick, 0, "", "", -1, 0, {}});
  for (const auto& e : cfg_.events) {
    SimEvent ev;
    ev.t = e.at_s * 1e3;
    ev.kind = e.kind == FailureEvent::Kind::Kill ? EvKind::Kill : EvKind::Rejoin;
    ev.worker = e.worker;
    push(std::move(ev));
  }
}

void Simulation::record_final(CompletionRecord rec) {
  billing_.charge(rec);
  trace_.push_back(std::move(rec));
}

void Simulation::handle_actions(const std::string& worker_id, std::vector<Action>&& actions,
                                double t) {
  SimWorker& w = workers_.at(worker_id);
  for (auto& a : actions) {
    switch (a.kind) {
      case Action::Kind::StartStage: {
        double dur = a.duration_ms;
        if (a.resource == Resource::Execute && cfg_.noise.enabled) {
          // lognormal multiplier with unit mean
          double z = normal_draw(w.noise_rng);
          dur *= std::exp(noise_sigma_ * z - 0.5 * noise_sigma_ * noise_sigma_);
        }
        SimEvent ev;
        ev.t = t + dur;
        ev.kind = a.resource == Resource::Execute ? EvKind::ExecComplete : EvKind::TransferComplete;
        ev.worker = worker_id;
        ev.id = a.request_ids[0];
        push(std::move(ev));
        break;
      }
      case Action::Kind::Complete:
        if (a.record.exec_start_ms >= 0 && a.record.exec_end_ms >= 0)
          w.window_exec_busy_ms += (a.record.exec_end_ms - a.record.exec_start_ms) *
                                   (a.record.stage_batch > 0
                                        ? static_cast<double>(a.record.batch) / a.record.stage_batch
                                        : 1.0);
        vm_touch(w, t);
        record_final(std::move(a.record));
        break;
      case Action::Kind::LoadAck:
        apply_ctrl(controller_.on_load_ack(worker_id, a.model_id, true, t), t);
        break;
      case Action::Kind::EvictAck:
        controller_.on_evict_ack(worker_id, a.model_id, t);
        break;
    }
  }
}

void Simulation::apply_ctrl(std::vector<CtrlAction>&& actions, double t) {
  for (const auto& a : actions) {
    auto wit = workers_.find(a.worker_id);
    if (wit == workers_.end() || !wit->second.alive) continue;
    SimWorker& w = wit->second;
    try {
      if (a.kind == CtrlAction::Kind::LoadModel) {
        w.core->load_model(manifests_.at(a.model_id), t, /*instant=*/false);
      } else {
        w.core->evict_model(a.model_id, t);
      }
    } catch (const Error&) {
      // load/evict of a model the worker cannot take; controller will retry
      // on the next demand window
    }
    handle_actions(a.worker_id, w.core->poll(t), t);
  }
}

void Simulation::attempt_admit(InferenceRequest req, double t, bool want_estimate, bool is_retry) {
  auto reject_record = [&](Errc reason, const std::string& detail) {
    CompletionRecord rec;
    rec.request_id = req.request_id;
    rec.tenant_id = req.tenant_id;
    rec.model_id = req.model_id;
    rec.batch = req.batch;
    rec.arrival_ms = req.arrival_ms;
    rec.admit_ms = t;
    rec.done_ms = t;
    rec.deadline_rel_ms = req.deadline_ms ? *req.deadline_ms : -1.0;
    rec.outcome = RequestState::Rejected;
    rec.detail = std::string(errc_name(reason)) + ": " + detail;
    record_final(std::move(rec));
  };

  std::set<std::string> tried;
  for (int attempt = 0; attempt < 2; ++attempt) {
    std::string target;
    // vm-baseline workers are statically partitioned per tenant
    for (const auto& [name, w] : workers_)
      if (w.def.vm_mode && w.def.vm_tenant == req.tenant_id && w.alive) target = name;
    if (target.empty()) {
      try {
        target = controller_.route(req.model_id, tried);
      } catch (const Error& e) {
        reject_record(e.code(), e.what());
        return;
      }
    } else if (tried.count(target)) {
      reject_record(Errc::ModelUnavailable, "vm worker saturated");
      return;
    }
    SimWorker& w = workers_.at(target);
    if (!w.alive) {
      tried.insert(target);
      continue;
    }
    AdmitOutcome out = w.core->admit(req, t, want_estimate);
    if (out.admitted) {
      vm_touch(w, t);
      handle_actions(target, w.core->poll(t), t);
      return;
    }
    tried.insert(target);
    if (attempt == 1 || out.reason == Errc::UnknownModel) {
      reject_record(out.reason, out.detail + (is_retry ? " (retry)" : ""));
      return;
    }
  }
}

void Simulation::do_arrival(const SimEvent& ev) {
  const WorkloadSpec& spec = cfg_.workloads[static_cast<size_t>(ev.workload)];
  double t = ev.t;
  InferenceRequest req;
  req.request_id = "w" + std::to_string(ev.workload) + "-" + std::to_string(ev.arrival_index);
  req.tenant_id = spec.tenant_id;
  req.model_id = spec.model_id;
  req.batch = spec.batch;
  req.arrival_ms = t;
  req.deadline_ms = spec.deadline_ms;
  if (spec.forced_hit_ratio >= 0.0) {
    double miss = 1.0 - spec.forced_hit_ratio;
    int64_t i = ev.arrival_index;
    bool is_miss =
        std::floor(static_cast<double>(i + 1) * miss) > std::floor(static_cast<double>(i) * miss);
    if (is_miss) req.force_residency = Residency::HostHit;
    // hits keep the natural path (device-resident after the first use)
  }
  if (ev.arrival_index >= 0) demand_window_counts_[req.model_id]++;

  // vm-baseline: idle teardown then a cold start before the VM serves again
  for (auto& [name, w] : workers_) {
    if (!w.def.vm_mode || w.def.vm_tenant != req.tenant_id || !w.alive) continue;
    if (ev.arrival_index >= 0 && w.vm_last_activity_ms >= 0 &&
        t - w.vm_last_activity_ms > w.def.vm_idle_teardown_s * 1e3 && req.input == nullptr) {
      // bill the previous uptime interval, then schedule the cold restart
      double down_at = w.vm_last_activity_ms + w.def.vm_idle_teardown_s * 1e3;
      if (w.vm_up_since_ms >= 0) {
        w.vm_uptime_ms += std::max(0.0, down_at - w.vm_up_since_ms);
        w.vm_up_since_ms = -1.0;
      }
      w.vm_last_activity_ms = -1.0;
      SimEvent delayed;
      delayed.t = t + w.def.vm_cold_start_s * 1e3;
      delayed.kind = EvKind::Arrival;
      delayed.workload = ev.workload;
      delayed.arrival_index = -1;  // marks an already-delayed arrival
      delayed.request = req;
      push(std::move(delayed));
      return;
    }
  }
  if (ev.arrival_index < 0) {
    // delayed vm arrival: the original request rides in ev.request
    attempt_admit(ev.request, t, spec.record_estimates, false);
    return;
  }
  attempt_admit(req, t, spec.record_estimates, false);
}

void Simulation::apply(const SimEvent& ev) {
  double t = ev.t;
  switch (ev.kind) {
    case EvKind::ExecComplete:
    case EvKind::TransferComplete: {
      auto wit = workers_.find(ev.worker);
      if (wit == workers_.end() || !wit->second.alive) return;  // died mid-stage
      Resource r = ev.kind == EvKind::ExecComplete ? Resource::Execute : Resource::Transfer;
      handle_actions(ev.worker, wit->second.core->on_stage_complete(r, ev.id, t), t);
      break;
    }
    case EvKind::Arrival:
      do_arrival(ev);
      break;
    case EvKind::Kill: {
      auto wit = workers_.find(ev.worker);
      if (wit == workers_.end() || !wit->second.alive) return;
      SimWorker& w = wit->second;
      w.alive = false;
      std::vector<Action> drained = w.core->drain_all(t, "worker '" + ev.worker + "' failed");
      for (auto& a : drained) {
        if (a.kind != Action::Kind::Complete) continue;
        CompletionRecord& rec = a.record;
        // the router retries lost requests elsewhere under new ids
        double deadline_abs =
            rec.deadline_rel_ms >= 0 ? rec.arrival_ms + rec.deadline_rel_ms : -1.0;
        bool retryable = deadline_abs < 0 || deadline_abs > t;
        if (retryable) {
          InferenceRequest retry;
          retry.request_id = rec.request_id + "~retry" + std::to_string(retry_seq_++);
          retry.tenant_id = rec.tenant_id;
          retry.model_id = rec.model_id;
          retry.batch = rec.batch;
          retry.arrival_ms = t;
          if (deadline_abs >= 0) retry.deadline_ms = deadline_abs - t;
          rec.outcome = RequestState::Rerouted;
          record_final(std::move(rec));
          attempt_admit(std::move(retry), t, false, true);
        } else {
          record_final(std::move(rec));
        }
      }
      break;
    }
    case EvKind::Rejoin: {
      auto wit = workers_.find(ev.worker);
      if (wit == workers_.end() || wit->second.alive) return;
      SimWorker& w = wit->second;
      DeviceProfile profile = cfg_.cluster.profile_of(w.def);
      profile.device_id = w.def.name;
      w.core = std::make_unique<WorkerCore>(worker_config(w.def), profile);  // fresh caches
      w.alive = true;
      controller_.register_worker(w.def.name, w.def.profile, w.def.host_cache_bytes, t);
      break;
    }
    case EvKind::HeartbeatTick: {
      for (auto& [name, w] : workers_) {
        if (!w.alive) continue;
        WorkerQueueSnapshot snap = w.core->snapshot(t);
        WorkerStatsLite stats;
        stats.load_frac = std::min(1.0, w.window_exec_busy_ms / cfg_.cluster.heartbeat_ms);
        w.window_exec_busy_ms = 0.0;
        stats.pending_transfer_ms = snap.pending_transfer_ms;
        stats.pending_execute_ms = snap.pending_execute_ms;
        stats.device_resident = w.core->resident_models(Residency::DeviceHit);
        stats.host_resident = w.core->resident_models(Residency::HostHit);
        controller_.on_heartbeat(name, stats, t);
      }
      apply_ctrl(controller_.heartbeat_scan(t), t);
      break;
    }
    case EvKind::DemandTick: {
      std::map<std::string, int64_t> counts;
      std::swap(counts, demand_window_counts_);
      apply_ctrl(controller_.demand_tick(t, counts), t);
      break;
    }
    case EvKind::RerouteTick: {
      for (auto& [name, w] : workers_) {
        if (!w.alive) continue;
        for (auto& d : w.core->reroute_check(t)) {
          record_final(std::move(d.record));
          InferenceRequest retry;
          retry.request_id = d.request_id + "~retry" + std::to_string(retry_seq_++);
          retry.tenant_id = d.tenant_id;
          retry.model_id = d.model_id;
          retry.arrival_ms = t;
          // remaining slack carries over
          double deadline_abs = d.record.arrival_ms + d.record.deadline_rel_ms;
          if (d.record.deadline_rel_ms >= 0 && deadline_abs > t)
            retry.deadline_ms = deadline_abs - t;
          std::set<std::string> exclude{name};
          try {
            std::string target = controller_.route(retry.model_id, exclude);
            AdmitOutcome out = workers_.at(target).core->admit(retry, t, true);
            if (out.admitted)
              handle_actions(target, workers_.at(target).core->poll(t), t);
            else {
              CompletionRecord rec = d.record;
              rec.request_id = retry.request_id;
              rec.outcome = RequestState::Rejected;
              rec.detail = out.detail;
              record_final(std::move(rec));
            }
          } catch (const Error&) {
            // no alternative replica; the cancellation already stands
          }
        }
      }
      break;
    }
  }
}

SimResult Simulation::run() {
  setup();
  while (!queue_.empty()) {
    double t = queue_.top().t;
    // drain every event at this timestamp, then dispatch all workers once
    std::vector<SimEvent> batch;
    while (!queue_.empty() && queue_.top().t == t) {
      batch.push_back(queue_.top());
      queue_.pop();
    }
    for (const auto& ev : batch) apply(ev);
    for (auto& [name, w] : workers_) {
      if (!w.alive) continue;
      handle_actions(name, w.core->poll(t), t);
    }
    last_event_ms_ = t;
  }

  SimResult result;
  result.duration_ms = cfg_.duration_s * 1e3;
  result.last_event_ms = last_event_ms_;
  result.generated_arrivals = generated_arrivals_;
  result.tenant_charges = billing_.charges();
  // vm-baseline provisioned-time charges
  for (auto& [name, w] : workers_) {
    if (!w.def.vm_mode) continue;
    double up = w.vm_uptime_ms;
    if (w.vm_up_since_ms >= 0) {
      double down_at = w.vm_last_activity_ms + w.def.vm_idle_teardown_s * 1e3;
      up += std::max(0.0, std::min(down_at, result.duration_ms) - w.vm_up_since_ms);
    }
    double rate = cfg_.cluster.profile_of(w.def).cost_per_hour;
    if (!w.def.vm_tenant.empty())
      result.tenant_vm_charges[w.def.vm_tenant] += up / 1e3 / 3600.0 * rate;
  }
  result.replica_events = controller_.replica_events();
  result.report =
      compute_report(trace_, result.duration_ms, result.tenant_charges, result.tenant_vm_charges);
  result.trace = std::move(trace_);
  return result;
}

}  // namespace

SimResult run_simulation(const ScenarioConfig& cfg, uint64_t seed) {
  Simulation sim(cfg, seed);
  return sim.run();
}

std::vector<SweepPoint> run_hitratio_sweep(const ScenarioConfig& cfg, uint64_t seed) {
  std::vector<SweepPoint> points;
  for (double h : cfg.sweep_hit_ratios) {
    ScenarioConfig variant = cfg;
    for (auto& w : variant.workloads) w.forced_hit_ratio = h;
    SimResult res = run_simulation(variant, seed);
    SweepPoint p;
    p.hit_ratio = h;
    int64_t done_in_window = 0;
    for (const auto& r : res.trace)
      if (r.outcome == RequestState::Done && r.done_ms <= res.duration_ms) done_in_window++;
    p.throughput_inf_s = static_cast<double>(done_in_window) / cfg.duration_s;
    for (const auto& [w, u] : res.report.per_worker) {
      p.transfer_util = std::max(p.transfer_util, u.transfer_util);
      p.execute_util = std::max(p.execute_util, u.execute_util);
    }
    points.push_back(p);
  }
  return points;
}

}  // namespace infershare
