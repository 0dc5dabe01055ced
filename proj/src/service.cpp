#include "infershare/service.hpp"

#include <chrono>

namespace infershare {

using nlohmann::json;

double steady_now_ms() {
  static const auto start = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
      .count();
}

namespace {

json record_to_json(const CompletionRecord& r) {
  return json{{"request", r.request_id},
              {"tenant", r.tenant_id},
              {"model", r.model_id},
              {"worker", r.worker_id},
              {"batch", r.batch},
              {"outcome", request_state_name(r.outcome)},
              {"residency", residency_name(r.residency)},
              {"latency_ms", r.latency_ms()},
              {"fetch_ms", r.fetch_ms},
              {"h2d_ms", r.h2d_ms},
              {"exec_ms", r.exec_end_ms >= 0 ? r.exec_end_ms - r.exec_start_ms : 0.0},
              {"detail", r.detail}};
}

json estimate_to_json(const LatencyEstimate& e) {
  return json{{"fetch_ms", e.fetch_ms},     {"transfer_ms", e.transfer_ms},
              {"exec_ms", e.exec_ms},       {"queue_ms", e.queue_ms},
              {"total_ms", e.total_ms},     {"p99_ms", e.confidence_p99_ms}};
}

}  // namespace

// ===========================================================================
// WorkerService
// ===========================================================================

WorkerService::WorkerService(Options opt)
    : opt_(std::move(opt)), core_(opt_.worker_config, opt_.profile) {
  server_ = std::make_unique<TcpServer>(opt_.listen, [this](TcpConn& c) { handle_conn(c); });
}

WorkerService::~WorkerService() { stop(); }

void WorkerService::start() {
  running_ = true;
  server_->start();
  transfer_thread_ = std::thread([this] { stage_loop(Resource::Transfer); });
  execute_thread_ = std::thread([this] { stage_loop(Resource::Execute); });
  if (!opt_.controller.empty()) {
    TcpConn conn = TcpConn::connect_to(opt_.controller);
    Frame resp = conn.call(MsgKind::RegisterWorker,
                           json{{"auth", opt_.secret},
                                {"worker", opt_.worker_id},
                                {"profile", opt_.profile_name},
                                {"host_cache_bytes", opt_.worker_config.host_cache_bytes},
                                {"address", server_->address()}});
    if (resp.kind != MsgKind::Ack)
      throw Error(Errc::IoError, "controller rejected registration: " + resp.payload.dump());
    heartbeat_thread_ = std::thread([this] { heartbeat_loop(); });
  }
}

void WorkerService::stop() {
  if (!running_.exchange(false)) return;
  jobs_cv_.notify_all();
  finished_cv_.notify_all();
  if (transfer_thread_.joinable()) transfer_thread_.join();
  if (execute_thread_.joinable()) execute_thread_.join();
  if (heartbeat_thread_.joinable()) heartbeat_thread_.join();
  server_->stop();
}

void WorkerService::dispatch(std::vector<Action>&& actions) {
  // mu_ is held by the caller
  for (auto& a : actions) {
    switch (a.kind) {
      case Action::Kind::StartStage: {
        std::lock_guard<std::mutex> jl(jobs_mu_);
        (a.resource == Resource::Transfer ? transfer_jobs_ : execute_jobs_)
            .push_back({a.resource, a.request_ids, a.duration_ms});
        jobs_cv_.notify_all();
        break;
      }
      case Action::Kind::Complete:
        billing_.charge(a.record);
        finished_[a.record.request_id] = a.record;
        finished_cv_.notify_all();
        break;
      case Action::Kind::LoadAck:
      case Action::Kind::EvictAck:
        if (a.kind == Action::Kind::EvictAck) {
          weights_.erase(a.model_id);
          manifests_.erase(a.model_id);
        }
        break;
    }
  }
}

void WorkerService::run_stage(const StageJob& job) {
  double start = steady_now_ms();
  bool real_exec = job.resource == Resource::Execute &&
                   opt_.profile.kind == DeviceKind::CpuReference;
  if (real_exec) {
    // run the actual model on the reference executor; no lock held while computing
    for (const auto& id : job.ids) {
      std::shared_ptr<const Tensor> input;
      std::shared_ptr<const ModelManifest> manifest;
      const WeightStore* weights = nullptr;
      {
        std::lock_guard<std::mutex> lock(mu_);
        auto iit = inputs_.find(id);
        if (iit != inputs_.end()) input = iit->second;
        auto mit = input_models_.find(id);
        if (mit != input_models_.end()) {
          auto man = manifests_.find(mit->second);
          if (man != manifests_.end()) manifest = man->second;
          auto wit = weights_.find(mit->second);
          if (wit != weights_.end()) weights = &wit->second;
        }
      }
      if (input && manifest && weights) {
        Tensor out = execute_model(*manifest, *weights, *input);
        std::lock_guard<std::mutex> lock(mu_);
        outputs_[id] = std::move(out);
      }
    }
  } else {
    std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(job.duration_ms));
  }
  double end = steady_now_ms();
  std::lock_guard<std::mutex> lock(mu_);
  if (job.resource == Resource::Execute) window_busy_ms_ += end - start;
  dispatch(core_.on_stage_complete(job.resource, job.ids[0], end));
  dispatch(core_.poll(end));
}

void WorkerService::stage_loop(Resource resource) {
  auto& jobs = resource == Resource::Transfer ? transfer_jobs_ : execute_jobs_;
  while (running_) {
    StageJob job;
    {
      std::unique_lock<std::mutex> lock(jobs_mu_);
      jobs_cv_.wait(lock, [&] { return !running_ || !jobs.empty(); });
      if (!running_) return;
      job = jobs.front();
      jobs.pop_front();
    }
    run_stage(job);
  }
}

void WorkerService::heartbeat_loop() {
  while (running_) {
    std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(opt_.heartbeat_ms));
    if (!running_) return;
    json stats;
    {
      std::lock_guard<std::mutex> lock(mu_);
      double now = steady_now_ms();
      WorkerQueueSnapshot snap = core_.snapshot(now);
      stats = json{{"auth", opt_.secret},
                   {"worker", opt_.worker_id},
                   {"load_frac", std::min(1.0, window_busy_ms_ / opt_.heartbeat_ms)},
                   {"pending_transfer_ms", snap.pending_transfer_ms},
                   {"pending_execute_ms", snap.pending_execute_ms},
                   {"device_resident", core_.resident_models(Residency::DeviceHit)},
                   {"host_resident", core_.resident_models(Residency::HostHit)},
                   {"charges", billing_.charges()}};
      window_busy_ms_ = 0.0;
    }
    try {
      TcpConn conn = TcpConn::connect_to(opt_.controller);
      conn.send_frame(MsgKind::Heartbeat, stats);
      conn.recv_frame();
    } catch (const std::exception&) {
      // controller unreachable; try again next interval
    }
  }
}

void WorkerService::handle_conn(TcpConn& conn) {
  while (running_) {
    std::optional<Frame> f;
    try {
      f = conn.recv_frame();
    } catch (const Error& e) {
      if (e.code() == Errc::UnsupportedVersion || e.code() == Errc::UnknownKind ||
          e.code() == Errc::FrameTooLarge || e.code() == Errc::MalformedPayload) {
        try {
          conn.send_frame(MsgKind::ErrorResp, make_error_payload(e.code(), e.what()));
        } catch (const std::exception&) {
        }
      }
      return;
    }
    if (!f) return;
    try {
      json resp = handle(f->kind, f->payload);
      MsgKind kind = static_cast<MsgKind>(resp.value("__kind", int(MsgKind::Ack)));
      resp.erase("__kind");
      conn.send_frame(kind, resp);
    } catch (const Error& e) {
      conn.send_frame(MsgKind::ErrorResp, make_error_payload(e.code(), e.what()));
    } catch (const std::exception& e) {
      conn.send_frame(MsgKind::ErrorResp, make_error_payload(Errc::IoError, e.what()));
    }
  }
}

json WorkerService::handle(MsgKind kind, const json& p) {
  double now = steady_now_ms();
  switch (kind) {
    case MsgKind::LoadModel: {
      if (p.value("auth", "") != opt_.secret)
        throw Error(Errc::Unauthorized, "bad shared secret");
      auto manifest = std::make_shared<const ModelManifest>(parse_manifest(p.at("manifest")));
      WeightStore weights = generate_weights(*manifest);  // the real fetch cost
      std::lock_guard<std::mutex> lock(mu_);
      core_.load_model(manifest, now, /*instant=*/true);
      manifests_[manifest->model_name] = manifest;
      weights_[manifest->model_name] = std::move(weights);
      return json{{"ok", true}, {"model", manifest->model_name}};
    }
    case MsgKind::EvictModel: {
      if (p.value("auth", "") != opt_.secret)
        throw Error(Errc::Unauthorized, "bad shared secret");
      std::lock_guard<std::mutex> lock(mu_);
      core_.evict_model(p.at("model"), now);
      dispatch(core_.poll(now));
      return json{{"ok", true}};
    }
    case MsgKind::Infer: {
      InferenceRequest req;
      req.request_id = p.value("request", "r0");
      req.tenant_id = p.value("tenant", "tenant0");
      req.model_id = p.at("model");
      req.batch = p.value("batch", 1);
      req.arrival_ms = now;
      if (p.contains("deadline_ms")) req.deadline_ms = p["deadline_ms"].get<double>();
      std::shared_ptr<const Tensor> input;
      if (p.contains("input")) {
        Tensor t;
        const json& in = p["input"];
        t.shape.dims.assign(in.at("dims").begin(), in.at("dims").end());
        t.values.assign(in.at("values").begin(), in.at("values").end());
        if (t.size() != t.shape.fixed_element_count())
          throw Error(Errc::ShapeMismatch, "input values do not match dims");
        input = std::make_shared<const Tensor>(std::move(t));
        req.batch = static_cast<int>(input->shape.dims[0]);
      }
      req.input = input;
      AdmitOutcome out;
      {
        std::lock_guard<std::mutex> lock(mu_);
        out = core_.admit(req, now, true);
        if (out.admitted) {
          if (input) {
            inputs_[req.request_id] = input;
            input_models_[req.request_id] = req.model_id;
          }
          dispatch(core_.poll(now));
        }
      }
      if (!out.admitted) {
        json r = make_error_payload(out.reason, out.detail);
        r["estimate"] = estimate_to_json(out.estimate);
        r["__kind"] = int(MsgKind::ErrorResp);
        return r;
      }
      // wait for completion
      std::unique_lock<std::mutex> lock(mu_);
      finished_cv_.wait(lock, [&] { return !running_ || finished_.count(req.request_id) > 0; });
      if (!running_) throw Error(Errc::IoError, "worker stopping");
      CompletionRecord rec = finished_[req.request_id];
      finished_.erase(req.request_id);
      inputs_.erase(req.request_id);
      input_models_.erase(req.request_id);
      json resp = record_to_json(rec);
      resp["estimate"] = estimate_to_json(out.estimate);
      auto oit = outputs_.find(req.request_id);
      if (oit != outputs_.end()) {
        if (oit->second.size() <= 4096) {
          resp["output"] = json{{"dims", oit->second.shape.dims}, {"values", oit->second.values}};
        } else {
          resp["output"] = json{{"dims", oit->second.shape.dims}};
        }
        outputs_.erase(oit);
      }
      resp["__kind"] = int(MsgKind::InferResp);
      return resp;
    }
    case MsgKind::GetStats: {
      std::lock_guard<std::mutex> lock(mu_);
      WorkerQueueSnapshot s = core_.snapshot(now);
      json residency = json::object();
      for (const auto& [m, r] : s.model_residency) residency[m] = residency_name(r);
      json r{{"worker", s.worker_id},
             {"policy", policy_name(s.policy)},
             {"pending_transfer_ms", s.pending_transfer_ms},
             {"pending_execute_ms", s.pending_execute_ms},
             {"queued_transfer", s.queued_transfer},
             {"queued_execute", s.queued_execute},
             {"residency", residency},
             {"device_bytes_used", s.device_bytes_used},
             {"device_bytes_capacity", s.device_bytes_capacity},
             {"host_bytes_used", s.host_bytes_used},
             {"host_bytes_capacity", s.host_bytes_capacity},
             {"charges", billing_.charges()}};
      r["__kind"] = int(MsgKind::StatsResp);
      return r;
    }
    default:
      throw Error(Errc::UnknownKind, std::string("worker cannot handle ") + msg_kind_name(kind));
  }
}

// ===========================================================================
// ControllerService
// ===========================================================================

namespace {
ControllerConfig controller_config_from(const ClusterConfig& c) {
  ControllerConfig cfg;
  cfg.heartbeat_ms = c.heartbeat_ms;
  cfg.demand_window_ms = c.demand_window_ms;
  cfg.saturation_theta = c.saturation_theta;
  cfg.utilization_mu = c.utilization_mu;
  cfg.min_replicas = c.min_replicas;
  cfg.autoscale = c.autoscale;
  cfg.journal_path = c.journal_path;
  return cfg;
}
}  // namespace

ControllerService::ControllerService(Options opt)
    : opt_(std::move(opt)),
      core_(controller_config_from(opt_.cluster), opt_.cluster.profiles) {
  std::string listen = opt_.listen.empty() ? opt_.cluster.controller_listen : opt_.listen;
  server_ = std::make_unique<TcpServer>(listen, [this](TcpConn& c) { handle_conn(c); });
}

ControllerService::~ControllerService() { stop(); }

void ControllerService::start() {
  running_ = true;
  server_->start();
  monitor_thread_ = std::thread([this] { monitor_loop(); });
}

void ControllerService::stop() {
  if (!running_.exchange(false)) return;
  if (monitor_thread_.joinable()) monitor_thread_.join();
  server_->stop();
}

json ControllerService::worker_call(const std::string& worker_id, MsgKind kind,
                                    const json& payload) {
  std::string addr;
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = worker_addrs_.find(worker_id);
    if (it == worker_addrs_.end())
      throw Error(Errc::ModelUnavailable, "worker '" + worker_id + "' has no known address");
    addr = it->second;
  }
  TcpConn conn = TcpConn::connect_to(addr);
  Frame resp = conn.call(kind, payload);
  if (resp.kind == MsgKind::ErrorResp)
    throw Error(Errc::IoError, "worker " + worker_id + ": " + resp.payload.dump());
  return resp.payload;
}

void ControllerService::apply_ctrl_actions(const std::vector<CtrlAction>& actions) {
  double now = steady_now_ms();
  for (const auto& a : actions) {
    try {
      if (a.kind == CtrlAction::Kind::LoadModel) {
        std::string manifest_text;
        {
          std::lock_guard<std::mutex> lock(mu_);
          const RegistryEntry* e = core_.find_model(a.model_id);
          if (!e) continue;
          manifest_text = serialize_manifest(*e->manifest);
        }
        worker_call(a.worker_id, MsgKind::LoadModel,
                    json{{"auth", opt_.cluster.secret}, {"manifest", manifest_text}});
        std::vector<CtrlAction> follow;
        {
          std::lock_guard<std::mutex> lock(mu_);
          follow = core_.on_load_ack(a.worker_id, a.model_id, true, now);
        }
        apply_ctrl_actions(follow);
      } else {
        worker_call(a.worker_id, MsgKind::EvictModel,
                    json{{"auth", opt_.cluster.secret}, {"model", a.model_id}});
        std::lock_guard<std::mutex> lock(mu_);
        core_.on_evict_ack(a.worker_id, a.model_id, now);
      }
    } catch (const std::exception&) {
      std::lock_guard<std::mutex> lock(mu_);
      if (a.kind == CtrlAction::Kind::LoadModel)
        core_.on_load_ack(a.worker_id, a.model_id, false, now);
    }
  }
}

void ControllerService::monitor_loop() {
  double last_demand = steady_now_ms();
  while (running_) {
    std::this_thread::sleep_for(
        std::chrono::duration<double, std::milli>(opt_.cluster.heartbeat_ms));
    if (!running_) return;
    double now = steady_now_ms();
    std::vector<CtrlAction> actions;
    {
      std::lock_guard<std::mutex> lock(mu_);
      actions = core_.heartbeat_scan(now);
    }
    apply_ctrl_actions(actions);
    if (now - last_demand >= opt_.cluster.demand_window_ms) {
      last_demand = now;
      std::map<std::string, int64_t> counts;
      std::vector<CtrlAction> scale;
      {
        std::lock_guard<std::mutex> lock(mu_);
        std::swap(counts, demand_counts_);
        scale = core_.demand_tick(now, counts);
      }
      apply_ctrl_actions(scale);
    }
  }
}

void ControllerService::handle_conn(TcpConn& conn) {
  while (running_) {
    std::optional<Frame> f;
    try {
      f = conn.recv_frame();
    } catch (const Error& e) {
      try {
        conn.send_frame(MsgKind::ErrorResp, make_error_payload(e.code(), e.what()));
      } catch (const std::exception&) {
      }
      return;
    }
    if (!f) return;
    try {
      json resp = handle(f->kind, f->payload);
      MsgKind kind = static_cast<MsgKind>(resp.value("__kind", int(MsgKind::Ack)));
      resp.erase("__kind");
      conn.send_frame(kind, resp);
    } catch (const Error& e) {
      conn.send_frame(MsgKind::ErrorResp, make_error_payload(e.code(), e.what()));
    } catch (const std::exception& e) {
      conn.send_frame(MsgKind::ErrorResp, make_error_payload(Errc::IoError, e.what()));
    }
  }
}

json ControllerService::handle(MsgKind kind, const json& p) {
  double now = steady_now_ms();
  switch (kind) {
    case MsgKind::RegisterWorker: {
      if (p.value("auth", "") != opt_.cluster.secret)
        throw Error(Errc::Unauthorized, "bad shared secret");
      std::lock_guard<std::mutex> lock(mu_);
      core_.register_worker(p.at("worker"), p.at("profile"), p.value("host_cache_bytes", int64_t(1'000'000'000)),
                            now);
      worker_addrs_[p.at("worker")] = p.at("address");
      return json{{"ok", true}};
    }
    case MsgKind::Heartbeat: {
      if (p.value("auth", "") != opt_.cluster.secret)
        throw Error(Errc::Unauthorized, "bad shared secret");
      WorkerStatsLite stats;
      stats.load_frac = p.value("load_frac", 0.0);
      stats.pending_transfer_ms = p.value("pending_transfer_ms", 0.0);
      stats.pending_execute_ms = p.value("pending_execute_ms", 0.0);
      if (p.contains("device_resident"))
        stats.device_resident = p["device_resident"].get<std::vector<std::string>>();
      if (p.contains("host_resident"))
        stats.host_resident = p["host_resident"].get<std::vector<std::string>>();
      std::lock_guard<std::mutex> lock(mu_);
      core_.on_heartbeat(p.at("worker"), stats, now);
      if (p.contains("charges")) {
        // worker ledgers are cumulative; keep the latest per worker
        auto& per_tenant = worker_charges_[p.at("worker")];
        for (auto& [tenant, charge] : p["charges"].items())
          per_tenant[tenant] = charge.get<double>();
      }
      return json{{"ok", true}};
    }
    case MsgKind::UploadModel: {
      if (p.value("auth", "") != opt_.cluster.secret)
        throw Error(Errc::Unauthorized, "bad shared secret");
      auto manifest = std::make_shared<const ModelManifest>(parse_manifest(p.at("manifest")));
      UploadResult up;
      {
        std::lock_guard<std::mutex> lock(mu_);
        up = core_.upload_model(p.value("tenant", "tenant0"), manifest, now,
                                p.value("replicas", 0));
      }
      apply_ctrl_actions(up.actions);
      json r{{"model", up.model_id}, {"endpoint", up.endpoint}};
      r["__kind"] = int(MsgKind::UploadModelResp);
      return r;
    }
    case MsgKind::DeleteModel: {
      if (p.value("auth", "") != opt_.cluster.secret)
        throw Error(Errc::Unauthorized, "bad shared secret");
      std::vector<CtrlAction> actions;
      {
        std::lock_guard<std::mutex> lock(mu_);
        actions = core_.delete_model(p.at("model"), now);
      }
      apply_ctrl_actions(actions);
      return json{{"ok", true}};
    }
    case MsgKind::ListModels: {
      std::lock_guard<std::mutex> lock(mu_);
      json models = json::array();
      for (const auto* e : core_.models()) {
        models.push_back(json{{"model", e->model_id},
                              {"tenant", e->tenant_id},
                              {"replicas", e->replicas},
                              {"demand_ewma", e->demand_ewma}});
      }
      json r{{"models", models}};
      r["__kind"] = int(MsgKind::ListModelsResp);
      return r;
    }
    case MsgKind::Infer: {
      std::string model = p.at("model");
      std::string worker;
      {
        std::lock_guard<std::mutex> lock(mu_);
        demand_counts_[model]++;
        worker = core_.route(model);
      }
      json req = p;
      req["request"] = "c" + std::to_string(infer_seq_++);
      try {
        json resp = worker_call(worker, MsgKind::Infer, req);
        resp["__kind"] = int(MsgKind::InferResp);
        return resp;
      } catch (const Error&) {
        // one retry on the next replica, then surface
        std::string second;
        {
          std::lock_guard<std::mutex> lock(mu_);
          second = core_.route(model, {worker});
        }
        json resp = worker_call(second, MsgKind::Infer, req);
        resp["__kind"] = int(MsgKind::InferResp);
        return resp;
      }
    }
    case MsgKind::DemandReport: {
      std::lock_guard<std::mutex> lock(mu_);
      for (auto& [model, count] : p.at("counts").items())
        demand_counts_[model] += count.get<int64_t>();
      return json{{"ok", true}};
    }
    case MsgKind::GetStats: {
      std::lock_guard<std::mutex> lock(mu_);
      json workers = json::array();
      for (const auto* w : core_.workers()) {
        workers.push_back(json{{"worker", w->worker_id},
                               {"alive", w->alive},
                               {"load_ewma", w->load_ewma},
                               {"hosted", std::vector<std::string>(w->hosted.begin(), w->hosted.end())}});
      }
      json models = json::array();
      for (const auto* e : core_.models())
        models.push_back(json{{"model", e->model_id},
                              {"tenant", e->tenant_id},
                              {"replicas", e->replicas},
                              {"demand_ewma", e->demand_ewma}});
      std::map<std::string, double> charges;
      for (const auto& [w, per_tenant] : worker_charges_)
        for (const auto& [tenant, c] : per_tenant) charges[tenant] += c;
      json r{{"routing_version", core_.routing().version},
             {"workers", workers},
             {"models", models},
             {"charges", charges}};
      r["__kind"] = int(MsgKind::StatsResp);
      return r;
    }
    default:
      throw Error(Errc::UnknownKind, std::string("controller cannot handle ") + msg_kind_name(kind));
  }
}

}  // namespace infershare
