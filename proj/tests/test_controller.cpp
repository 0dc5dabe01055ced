#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "infershare/config.hpp"
#include "infershare/controller.hpp"
#include "test_util.hpp"

using namespace infershare;
using namespace infershare::testutil;

namespace {

std::shared_ptr<const ModelManifest> resnet(const std::string& name = "resnet18") {
  ModelManifest m = load_manifest_file(data_path("models/resnet18.manifest"));
  m.model_name = name;
  return std::make_shared<const ModelManifest>(std::move(m));
}

ControllerCore make_controller(int n_workers, ControllerConfig cfg = {}) {
  ControllerCore c(cfg, builtin_profiles());
  for (int i = 1; i <= n_workers; ++i)
    c.register_worker("w" + std::to_string(i), "virtual-gpu", 1'000'000'000, 0.0);
  return c;
}

void set_load(ControllerCore& c, const std::string& worker, double load) {
  WorkerStatsLite s;
  s.load_frac = load;
  // the ewma warms toward the target; push it close enough
  for (int i = 0; i < 30; ++i) c.on_heartbeat(worker, s, 0.0);
}

}  // namespace

TEST_CASE("placement picks the least loaded workers, tie-break by id") {
  ControllerCore c = make_controller(3);
  set_load(c, "w1", 0.9);
  set_load(c, "w2", 0.1);
  set_load(c, "w3", 0.5);

  RegistryEntry e;
  e.model_id = "m";
  e.manifest = resnet("m");

  SUBCASE("k = 1 picks the argmin") { CHECK(c.place(e, 1) == std::vector<std::string>{"w2"}); }
  SUBCASE("k = 2 picks the two smallest") {
    CHECK(c.place(e, 2) == std::vector<std::string>{"w2", "w3"});
  }
  SUBCASE("k larger than the cluster is infeasible") {
    CHECK_THROWS_AS(c.place(e, 4), Error);
    try {
      c.place(e, 4);
    } catch (const Error& err) {
      CHECK(err.code() == Errc::InsufficientCapacity);
    }
  }
  SUBCASE("host-cache fit is respected") {
    ControllerCore small(ControllerConfig{}, builtin_profiles());
    small.register_worker("w1", "virtual-gpu", 10'000'000, 0.0);  // too small for 78 MB
    CHECK_THROWS_AS(small.place(e, 1), Error);
  }
}

TEST_CASE("upload places on the least-loaded worker and becomes routable on ack") {
  ControllerCore c = make_controller(3);
  UploadResult up = c.upload_model("tenantA", resnet(), 0.0);
  CHECK(up.model_id == "resnet18");
  CHECK(up.endpoint == "/models/resnet18");
  REQUIRE(up.actions.size() == 1);
  CHECK(up.actions[0].worker_id == "w1");  // all loads equal, id breaks the tie

  // not routable before the ack
  CHECK_THROWS_AS(c.route("resnet18"), Error);
  uint64_t v0 = c.routing().version;
  c.on_load_ack("w1", "resnet18", true, 1.0);
  CHECK(c.routing().version > v0);
  CHECK(c.route("resnet18") == "w1");
  CHECK(c.find_model("resnet18")->state == ModelState::Active);
}

TEST_CASE("upload rejects bad manifests and quota violations") {
  ControllerCore c = make_controller(2);
  SUBCASE("validation failure carries findings") {
    ModelManifest bad = *resnet("bad");
    bad.total_weight_bytes += 4;
    try {
      c.upload_model("t", std::make_shared<const ModelManifest>(bad), 0.0);
      FAIL("expected ValidationFailed");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::ValidationFailed);
      CHECK(std::string(e.what()).find("WeightByteMismatch") != std::string::npos);
    }
  }
  SUBCASE("model-count quota") {
    ControllerConfig cfg;
    cfg.tenant_quota_models = 1;
    ControllerCore q(cfg, builtin_profiles());
    q.register_worker("w1", "virtual-gpu", 1'000'000'000, 0.0);
    q.upload_model("t", resnet("a"), 0.0);
    try {
      q.upload_model("t", resnet("b"), 0.0);
      FAIL("expected QuotaExceeded");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::QuotaExceeded);
    }
  }
}

TEST_CASE("scaling target formula") {
  ControllerCore c = make_controller(3);
  UploadResult up = c.upload_model("t", resnet(), 0.0);
  c.on_load_ack(up.actions[0].worker_id, "resnet18", true, 0.0);

  // per-worker throughput 1000/0.97 = 1030.9 inf/s, mu = 0.8 -> 824.7
  RegistryEntry e = *c.find_model("resnet18");
  SUBCASE("demand 1200 needs 2 replicas") {
    e.demand_ewma = 1200.0;
    CHECK(c.scale_target(e) == 2);
  }
  SUBCASE("zero demand keeps the minimum: the model stays warm") {
    e.demand_ewma = 0.0;
    CHECK(c.scale_target(e) == 1);
  }
  SUBCASE("monotone in demand") {
    int prev = 0;
    for (double demand : {0.0, 100.0, 500.0, 900.0, 1700.0, 2500.0, 5000.0}) {
      e.demand_ewma = demand;
      int t = c.scale_target(e);
      CHECK(t >= prev);
      prev = t;
    }
  }
}

TEST_CASE("demand tick scales up within one window after a 10x step") {
  ControllerConfig cfg;
  cfg.demand_window_ms = 1000.0;
  ControllerCore c(cfg, builtin_profiles());
  for (int i = 1; i <= 3; ++i)
    c.register_worker("w" + std::to_string(i), "virtual-gpu", 1'000'000'000, 0.0);
  UploadResult up = c.upload_model("t", resnet(), 0.0);
  c.on_load_ack(up.actions[0].worker_id, "resnet18", true, 0.0);

  // settle at 150 inf/s
  for (int i = 0; i < 5; ++i) c.demand_tick(1000.0 * (i + 1), {{"resnet18", 150}});
  CHECK(c.find_model("resnet18")->replicas.size() == 1);
  // one window at 1500 inf/s crosses the threshold for 2 replicas
  auto actions = c.demand_tick(6000.0, {{"resnet18", 1500}});
  REQUIRE(actions.size() == 1);
  CHECK(actions[0].kind == CtrlAction::Kind::LoadModel);
  c.on_load_ack(actions[0].worker_id, "resnet18", true, 6078.0);
  CHECK(c.find_model("resnet18")->replicas.size() == 2);

  SUBCASE("demand collapse scales back down to the minimum") {
    for (int i = 0; i < 8; ++i) {
      auto down = c.demand_tick(7000.0 + 1000.0 * i, {});
      for (const auto& a : down) CHECK(a.kind == CtrlAction::Kind::EvictModel);
    }
    CHECK(c.find_model("resnet18")->replicas.size() == 1);
  }
}

TEST_CASE("saturation migration evacuates colocated models") {
  // autoscale off so demand ticks only move the estimate; migration is driven
  // explicitly below
  ControllerConfig cfg;
  cfg.autoscale = false;
  ControllerCore c = make_controller(3, cfg);
  // heavy and two light models all land on w1/w2; make w1 host heavy + light1
  UploadResult heavy = c.upload_model("t", resnet("heavy"), 0.0);
  c.on_load_ack(heavy.actions[0].worker_id, "heavy", true, 0.0);  // w1
  UploadResult l1 = c.upload_model("t", resnet("light1"), 0.0);
  c.on_load_ack(l1.actions[0].worker_id, "light1", true, 0.0);
  std::string light_worker = l1.actions[0].worker_id;
  // co-locate by forcing light1 onto w1 if it went elsewhere
  // (placement is load-based; with equal loads it lands on w1 again only if
  //  not already hosting; so place light explicitly via pin)
  if (light_worker != "w1") {
    UploadResult l2 = c.upload_model("t", resnet("light2"), 0.0, 1, {"w1"});
    c.on_load_ack("w1", "light2", true, 0.0);
  }

  // drive heavy demand to ~0.9 of one worker's capacity (1030.9 inf/s)
  for (int i = 0; i < 20; ++i) c.demand_tick(1000.0 * (i + 1), {{"heavy", 930}});

  auto actions = c.migrate_for_saturation("w1", 21000.0);
  REQUIRE_FALSE(actions.empty());
  for (const auto& a : actions) {
    CHECK(a.kind == CtrlAction::Kind::LoadModel);
    CHECK(a.model_id != "heavy");  // the heavy model keeps the worker
    CHECK(a.worker_id != "w1");
  }
  // completing the move flips routing then evicts the source
  auto follow = c.on_load_ack(actions[0].worker_id, actions[0].model_id, true, 21100.0);
  REQUIRE(follow.size() == 1);
  CHECK(follow[0].kind == CtrlAction::Kind::EvictModel);
  CHECK(follow[0].worker_id == "w1");
  // at no point did the moved model lose its last routable replica
  CHECK_NOTHROW(c.route(actions[0].model_id));

  SUBCASE("no saturated model means an empty plan") {
    CHECK(c.migrate_for_saturation("w2", 22000.0).empty());
  }
}

TEST_CASE("worker failure recovery") {
  ControllerConfig cfg;
  cfg.min_replicas = 2;
  ControllerCore c(cfg, builtin_profiles());
  for (int i = 1; i <= 3; ++i)
    c.register_worker("w" + std::to_string(i), "virtual-gpu", 1'000'000'000, 0.0);
  UploadResult up = c.upload_model("t", resnet(), 0.0, 2);
  for (const auto& a : up.actions) c.on_load_ack(a.worker_id, "resnet18", true, 0.0);
  REQUIRE(c.find_model("resnet18")->replicas.size() == 2);  // w1, w2

  uint64_t v0 = c.routing().version;
  auto actions = c.handle_worker_failure("w1", 5000.0);
  CHECK(c.routing().version > v0);
  // routing no longer offers w1
  CHECK(c.route("resnet18") == "w2");
  REQUIRE(actions.size() == 1);
  CHECK(actions[0].worker_id == "w3");
  c.on_load_ack("w3", "resnet18", true, 5078.0);
  CHECK(c.find_model("resnet18")->replicas.size() == 2);

  SUBCASE("a rejoining worker is fresh") {
    c.register_worker("w1", "virtual-gpu", 1'000'000'000, 9000.0);
    const WorkerInfo* w = c.find_worker("w1");
    REQUIRE(w);
    CHECK(w->alive);
    CHECK(w->hosted.empty());
    CHECK(w->load_ewma == 0.0);
  }
}

TEST_CASE("heartbeat silence trips the failure handler") {
  ControllerConfig cfg;
  cfg.heartbeat_ms = 500.0;
  cfg.heartbeat_miss_limit = 3;
  ControllerCore c(cfg, builtin_profiles());
  c.register_worker("w1", "virtual-gpu", 1'000'000'000, 0.0);
  c.register_worker("w2", "virtual-gpu", 1'000'000'000, 0.0);
  UploadResult up = c.upload_model("t", resnet(), 0.0);
  c.on_load_ack("w1", "resnet18", true, 0.0);
  (void)up;

  WorkerStatsLite s;
  for (double t = 500; t <= 4500; t += 500) {
    c.on_heartbeat("w1", s, t);
    c.on_heartbeat("w2", s, t);
  }
  // w1 goes silent after t=4500; at 6000 it has missed 3 intervals
  c.on_heartbeat("w2", s, 5000.0);
  CHECK(c.heartbeat_scan(5000.0).empty());
  c.on_heartbeat("w2", s, 6000.0);
  auto actions = c.heartbeat_scan(6000.0);
  CHECK_FALSE(c.find_worker("w1")->alive);
  REQUIRE(actions.size() == 1);
  CHECK(actions[0].worker_id == "w2");
}

TEST_CASE("routing prefers device residency and low load") {
  ControllerCore c = make_controller(2);
  UploadResult up = c.upload_model("t", resnet(), 0.0, 2);
  for (const auto& a : up.actions) c.on_load_ack(a.worker_id, "resnet18", true, 0.0);

  WorkerStatsLite s1, s2;
  s1.device_resident = {"resnet18"};
  s1.pending_execute_ms = 50.0;
  s2.device_resident = {"resnet18"};
  s2.pending_execute_ms = 1.0;
  c.on_heartbeat("w1", s1, 100.0);
  c.on_heartbeat("w2", s2, 100.0);
  CHECK(c.route("resnet18") == "w2");

  SUBCASE("excluding the best replica falls back to the next") {
    CHECK(c.route("resnet18", {"w2"}) == "w1");
  }
  SUBCASE("a host-only replica pays its copy as a penalty") {
    s2.device_resident.clear();
    s2.host_resident = {"resnet18"};
    s2.pending_execute_ms = 1.0;
    c.on_heartbeat("w2", s2, 200.0);
    // w2 cost 1 + 6.5, w1 cost 50: still w2; at 4 ms pending w1 would win
    CHECK(c.route("resnet18") == "w2");
    s1.pending_execute_ms = 4.0;
    c.on_heartbeat("w1", s1, 200.0);
    CHECK(c.route("resnet18") == "w1");
  }
}

TEST_CASE("routing coherence: every version routes only to acked replicas") {
  ControllerCore c = make_controller(3);
  UploadResult up = c.upload_model("t", resnet(), 0.0, 2);
  auto check_coherent = [&] {
    for (const auto& [model, workers] : c.routing().replicas) {
      const RegistryEntry* e = c.find_model(model);
      REQUIRE(e);
      for (const auto& w : workers)
        CHECK(std::find(e->replicas.begin(), e->replicas.end(), w) != e->replicas.end());
    }
  };
  check_coherent();
  c.on_load_ack(up.actions[0].worker_id, "resnet18", true, 1.0);
  check_coherent();
  c.on_load_ack(up.actions[1].worker_id, "resnet18", true, 2.0);
  check_coherent();
  c.handle_worker_failure(up.actions[0].worker_id, 3.0);
  check_coherent();
  c.delete_model("resnet18", 4.0);
  CHECK(c.routing().replicas.count("resnet18") == 0);
}

TEST_CASE("journal replay restores the registry") {
  std::string path = "/tmp/infershare_test_journal.bin";
  std::remove(path.c_str());
  {
    ControllerConfig cfg;
    cfg.journal_path = path;
    ControllerCore c(cfg, builtin_profiles());
    c.register_worker("w1", "virtual-gpu", 1'000'000'000, 0.0);
    c.upload_model("tenantA", resnet("keep"), 0.0);
    c.upload_model("tenantA", resnet("drop"), 0.0);
    c.delete_model("drop", 1.0);
  }
  ControllerConfig cfg;
  cfg.journal_path = path;
  ControllerCore again(cfg, builtin_profiles());
  const RegistryEntry* kept = again.find_model("keep");
  REQUIRE(kept);
  CHECK(kept->tenant_id == "tenantA");
  CHECK(kept->state == ModelState::Registering);  // replicas must re-ack
  CHECK(model_flops(*kept->manifest, 1) == 2'013'634'536);
  const RegistryEntry* dropped = again.find_model("drop");
  CHECK((dropped == nullptr || dropped->state == ModelState::Deleted));
  std::remove(path.c_str());
}
