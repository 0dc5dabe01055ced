#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "infershare/config.hpp"
#include "infershare/worker.hpp"
#include "test_util.hpp"

using namespace infershare;
using namespace infershare::testutil;

namespace {

std::shared_ptr<const ModelManifest> resnet() {
  static auto m = std::make_shared<const ModelManifest>(
      load_manifest_file(data_path("models/resnet18.manifest")));
  return m;
}

WorkerConfig gpu_worker_config(const std::string& id = "w1") {
  WorkerConfig cfg;
  cfg.worker_id = id;
  cfg.host_cache_bytes = 1'000'000'000;
  return cfg;
}

DeviceProfile gpu_profile() {
  DeviceProfile p = builtin_profiles().at("virtual-gpu");
  p.device_id = "w1";
  return p;
}

// warm: execute one request so the model is device-resident
void warm_model(WorkerCore& w, MiniDriver& d, const std::string& model) {
  auto out = w.admit(make_request("warm-" + model, model, d.now), d.now, false);
  REQUIRE(out.admitted);
  d.run_until_idle();
  REQUIRE(w.residency_of(model) == Residency::DeviceHit);
}

}  // namespace

TEST_CASE("admission examples") {
  WorkerCore w(gpu_worker_config(), gpu_profile());
  MiniDriver d(w);
  w.load_model(resnet(), 0.0, /*instant=*/true);

  SUBCASE("device hit with empty queues meets a 10 ms deadline at 0.97 ms") {
    warm_model(w, d, "resnet18");
    auto out = w.admit(make_request("r1", "resnet18", d.now, "t0", 10.0), d.now, true);
    REQUIRE(out.admitted);
    CHECK(out.estimate.exec_ms == doctest::Approx(0.97).epsilon(1e-12));
    CHECK(out.estimate.total_ms == doctest::Approx(0.97).epsilon(1e-12));
    CHECK(out.estimate.queue_ms == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("host-resident model with a 5 ms deadline is rejected up front") {
    // transfer alone is 6.5 ms
    auto out = w.admit(make_request("r1", "resnet18", 0.0, "t0", 5.0), 0.0, true);
    CHECK_FALSE(out.admitted);
    CHECK(out.reason == Errc::WouldMissDeadline);
    CHECK(out.estimate.total_ms > 5.0);
  }
  SUBCASE("no deadline and empty queues always admits") {
    auto out = w.admit(make_request("r1", "resnet18", 0.0), 0.0, false);
    CHECK(out.admitted);
  }
  SUBCASE("unknown model") {
    auto out = w.admit(make_request("r1", "nope", 0.0), 0.0, false);
    CHECK_FALSE(out.admitted);
    CHECK(out.reason == Errc::UnknownModel);
  }
  SUBCASE("batch beyond the device limit") {
    InferenceRequest r = make_request("r1", "resnet18", 0.0);
    r.batch = 100000;
    auto out = w.admit(r, 0.0, false);
    CHECK_FALSE(out.admitted);
    CHECK(out.reason == Errc::BatchTooLarge);
  }
}

TEST_CASE("admission ceiling rejects overload") {
  WorkerConfig cfg = gpu_worker_config();
  cfg.admission_ceiling_ms = 10.0;
  WorkerCore w(cfg, gpu_profile());
  MiniDriver d(w);
  w.load_model(resnet(), 0.0, true);
  warm_model(w, d, "resnet18");
  // stack up ~11 ms of execute work (0.97 each)
  int admitted = 0, rejected = 0;
  for (int i = 0; i < 20; ++i) {
    auto out = w.admit(make_request("r" + std::to_string(i), "resnet18", d.now), d.now, false);
    (out.admitted ? admitted : rejected)++;
  }
  CHECK(admitted >= 10);
  CHECK(rejected >= 1);
}

TEST_CASE("completion estimates replay the pipeline") {
  WorkerCore w(gpu_worker_config(), gpu_profile());
  MiniDriver d(w);
  w.load_model(resnet(), 0.0, true);

  SUBCASE("empty queues, device hit: exec only") {
    warm_model(w, d, "resnet18");
    LatencyEstimate est = estimate_completion(w, make_request("x", "resnet18", d.now), d.now);
    CHECK(est.total_ms == doctest::Approx(0.97).epsilon(1e-12));
    CHECK(est.queue_ms == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("serial execute resource: 5 ms pending ahead under fifo") {
    // unit device: 1e9 flops/s so a dense 1000x2500 model executes in 5 ms
    WorkerConfig cfg;
    cfg.worker_id = "u";
    cfg.host_cache_bytes = 100'000'000;
    WorkerCore u(cfg, unit_profile(1e9, 1e12, 1e12));
    MiniDriver du(u);
    auto five = make_dense_model("five", 1000, 2500, 1, 1000);  // 5e6 flops -> 5 ms
    u.load_model(five, 0.0, true);
    warm_model(u, du, "five");
    // occupy the execute resource with one 5 ms request
    REQUIRE(u.admit(make_request("ahead", "five", du.now), du.now, false).admitted);
    du.poll();
    LatencyEstimate est = estimate_completion(u, make_request("x", "five", du.now), du.now);
    CHECK(est.queue_ms == doctest::Approx(5.0).epsilon(1e-9));
    CHECK(est.total_ms == doctest::Approx(10.0).epsilon(1e-9));
  }
  SUBCASE("two-stage pipeline: second transfer waits, execution overlaps") {
    // both models host-resident with 6.5 ms transfers and 0.97 ms exec
    auto resnet_b = std::make_shared<const ModelManifest>([] {
      ModelManifest m = *resnet();
      m.model_name = "resnet18b";
      return m;
    }());
    w.load_model(resnet_b, 0.0, true);
    REQUIRE(w.admit(make_request("first", "resnet18", 0.0), 0.0, false).admitted);
    d.poll();  // first starts transferring at t=0
    LatencyEstimate est = estimate_completion(w, make_request("second", "resnet18b", 0.0), 0.0);
    // transfer [6.5, 13.0], exec [13.0, 13.97]
    CHECK(est.total_ms == doctest::Approx(13.97).epsilon(1e-9));
    CHECK(est.queue_ms == doctest::Approx(6.5).epsilon(1e-9));
  }
}

TEST_CASE("run to completion: realized equals estimate on deterministic devices") {
  WorkerCore w(gpu_worker_config(), gpu_profile());
  MiniDriver d(w);
  w.load_model(resnet(), 0.0, true);

  SUBCASE("host-hit end to end is 6.5 + 0.97 = 7.47 ms") {
    auto out = w.admit(make_request("r1", "resnet18", 0.0), 0.0, true);
    REQUIRE(out.admitted);
    CHECK(out.estimate.total_ms == doctest::Approx(7.47).epsilon(1e-12));
    d.run_until_idle();
    const CompletionRecord* rec = d.record_of("r1");
    REQUIRE(rec);
    CHECK(rec->outcome == RequestState::Done);
    CHECK(rec->residency == Residency::HostHit);
    CHECK(rec->latency_ms() == doctest::Approx(7.47).epsilon(1e-12));
    CHECK(rec->latency_ms() == doctest::Approx(out.estimate.total_ms).epsilon(1e-12));
  }
  SUBCASE("cold requests pay fetch, transfer and execute") {
    // second model's instant load evicts the first from the small host cache
    WorkerConfig cfg = gpu_worker_config();
    cfg.host_cache_bytes = 100'000'000;  // fits one 78 MB footprint
    WorkerCore small(cfg, gpu_profile());
    MiniDriver ds(small);
    small.load_model(resnet(), 0.0, true);
    auto other = std::make_shared<const ModelManifest>([] {
      ModelManifest m = *resnet();
      m.model_name = "other";
      return m;
    }());
    small.load_model(other, 0.0, true);
    CHECK(small.residency_of("resnet18") == Residency::Cold);
    auto out = small.admit(make_request("r1", "resnet18", 0.0), 0.0, true);
    REQUIRE(out.admitted);
    ds.run_until_idle();
    const CompletionRecord* rec = ds.record_of("r1");
    REQUIRE(rec);
    CHECK(rec->residency == Residency::Cold);
    CHECK(rec->fetch_ms > 0.0);
    CHECK(rec->h2d_ms > 0.0);
    CHECK(rec->exec_end_ms - rec->exec_start_ms > 0.0);
    // 78 ms fetch + 6.5 ms copy + 0.97 ms exec
    CHECK(rec->latency_ms() == doctest::Approx(85.47).epsilon(1e-9));
  }
}

TEST_CASE("pipeline overlap beats serialized stages") {
  WorkerCore w(gpu_worker_config(), gpu_profile());
  MiniDriver d(w);
  auto b = std::make_shared<const ModelManifest>([] {
    ModelManifest m = *resnet();
    m.model_name = "b";
    return m;
  }());
  w.load_model(resnet(), 0.0, true);
  w.load_model(b, 0.0, true);
  REQUIRE(w.admit(make_request("r1", "resnet18", 0.0), 0.0, false).admitted);
  REQUIRE(w.admit(make_request("r2", "b", 0.0), 0.0, false).admitted);
  d.run_until_idle();
  double makespan = std::max(d.record_of("r1")->done_ms, d.record_of("r2")->done_ms);
  double serialized = 2 * (6.5 + 0.97);
  CHECK(makespan < serialized);
  // r2's transfer [6.5,13.0] overlaps r1's exec [6.5,7.47]; exact makespan 13.97
  CHECK(makespan == doctest::Approx(13.97).epsilon(1e-9));
}

TEST_CASE("residency planning") {
  WorkerCore w(gpu_worker_config(), gpu_profile());
  MiniDriver d(w);
  w.load_model(resnet(), 0.0, true);

  SUBCASE("already device resident: empty plan") {
    warm_model(w, d, "resnet18");
    ResidencyPlan plan = w.plan_residency("resnet18", Residency::DeviceHit, d.now);
    CHECK(plan.empty());
  }
  SUBCASE("host resident with room: a single transfer") {
    ResidencyPlan plan = w.plan_residency("resnet18", Residency::DeviceHit, 0.0);
    CHECK(plan.need_transfer);
    CHECK_FALSE(plan.need_fetch);
    CHECK(plan.evict_device.empty());
  }
  SUBCASE("full device evicts the least recently used unpinned entry") {
    // device that fits exactly two footprints
    DeviceProfile p = gpu_profile();
    p.device_memory_bytes = 160'000'000;
    WorkerConfig cfg = gpu_worker_config();
    cfg.host_cache_bytes = 400'000'000;
    WorkerCore tight(cfg, p);
    MiniDriver dt(tight);
    auto m2 = std::make_shared<const ModelManifest>([] {
      ModelManifest m = *resnet();
      m.model_name = "m2";
      return m;
    }());
    auto m3 = std::make_shared<const ModelManifest>([] {
      ModelManifest m = *resnet();
      m.model_name = "m3";
      return m;
    }());
    tight.load_model(resnet(), 0.0, true);
    tight.load_model(m2, 0.0, true);
    tight.load_model(m3, 0.0, true);
    warm_model(tight, dt, "resnet18");  // device lru: resnet18@~7.5
    warm_model(tight, dt, "m2");        // device lru: m2 later
    ResidencyPlan plan = tight.plan_residency("m3", Residency::DeviceHit, dt.now);
    REQUIRE(plan.evict_device.size() == 1);
    CHECK(plan.evict_device[0] == "resnet18");  // least recently used
  }
}

TEST_CASE("load and evict lifecycle") {
  WorkerCore w(gpu_worker_config(), gpu_profile());
  MiniDriver d(w);

  SUBCASE("load then immediate infer takes the host-hit path") {
    w.load_model(resnet(), 0.0, true);
    auto out = w.admit(make_request("r1", "resnet18", 0.0), 0.0, true);
    REQUIRE(out.admitted);
    CHECK(out.estimate.fetch_ms == 0.0);  // fetch skipped
    CHECK(out.estimate.transfer_ms > 0.0);
  }
  SUBCASE("evicting an unknown model fails") {
    CHECK_THROWS_AS(w.evict_model("ghost", 0.0), Error);
  }
  SUBCASE("non-instant load pays the fetch and acks") {
    w.load_model(resnet(), 0.0, false);
    d.poll();
    CHECK(w.residency_of("resnet18") == Residency::Cold);  // still fetching
    d.run_until_idle();
    REQUIRE(d.load_acks.size() == 1);
    CHECK(d.load_acks[0] == "resnet18");
    CHECK(w.residency_of("resnet18") == Residency::HostHit);
    CHECK(d.now == doctest::Approx(78.0).epsilon(1e-9));  // 78 MB at 1 GB/s
  }
  SUBCASE("evict waits for the pinned request to finish") {
    w.load_model(resnet(), 0.0, true);
    REQUIRE(w.admit(make_request("r1", "resnet18", 0.0), 0.0, false).admitted);
    d.poll();
    w.evict_model("resnet18", 0.0);
    d.absorb(w.poll(0.0));
    CHECK(d.evict_acks.empty());  // request still holds it
    d.run_until_idle();
    REQUIRE(d.evict_acks.size() == 1);
    CHECK(d.record_of("r1")->outcome == RequestState::Done);
    CHECK_FALSE(w.has_model("resnet18"));
  }
}

TEST_CASE("forty 10 MB models in a 256 MB device churn by LRU, capacity holds") {
  DeviceProfile p = gpu_profile();
  p.device_memory_bytes = 256'000'000;
  WorkerConfig cfg = gpu_worker_config();
  cfg.host_cache_bytes = 1'000'000'000;  // all 40 fit host-side
  WorkerCore w(cfg, p);
  MiniDriver d(w);

  for (int i = 0; i < 40; ++i) {
    auto m = make_dense_model("m" + std::to_string(i), 256, 256, i, 10'000'000);
    w.load_model(m, 0.0, true);
    CHECK(w.residency_of(m->model_name) == Residency::HostHit);
  }
  CHECK(w.host_bytes_used() == 40ll * 10'000'000);

  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    std::string model = "m" + std::to_string(rng() % 40);
    auto out = w.admit(make_request("r" + std::to_string(i), model, d.now), d.now, false);
    if (out.admitted) d.run_until_idle();
    CHECK(w.device_bytes_used() <= p.device_memory_bytes);
    CHECK(w.host_bytes_used() <= cfg.host_cache_bytes);
  }
  // 40 x 10 MB does not fit 256 MB: churn is forced and flagged eventually
  CHECK(w.device_bytes_used() <= p.device_memory_bytes);
  int64_t device_models = static_cast<int64_t>(w.resident_models(Residency::DeviceHit).size());
  CHECK(device_models <= 25);
}

TEST_CASE("reroute check cancels only queued requests that will miss") {
  WorkerCore w(gpu_worker_config(), gpu_profile());
  MiniDriver d(w);
  w.load_model(resnet(), 0.0, true);
  warm_model(w, d, "resnet18");

  SUBCASE("drained queues keep everything") { CHECK(w.reroute_check(d.now).empty()); }

  SUBCASE("a burst ahead of a deadline request triggers cancel-and-reroute") {
    double t = d.now;
    // the deadline request first: it fits comfortably at admission
    auto out = w.admit(make_request("dl", "resnet18", t, "t0", 10.0), t, true);
    REQUIRE(out.admitted);
    // then ~20 ms of work arrives at the same instant; fifo ties break by id,
    // so the "b*" burst sits ahead of "dl"
    for (int i = 0; i < 20; ++i) {
      auto o = w.admit(make_request("b" + std::to_string(i), "resnet18", t, "t0"), t, false);
      REQUIRE(o.admitted);
    }
    auto decisions = w.reroute_check(t);
    REQUIRE(decisions.size() == 1);
    CHECK(decisions[0].request_id == "dl");
    CHECK(decisions[0].estimate.total_ms > 10.0);
    CHECK(decisions[0].record.outcome == RequestState::Rerouted);
  }

  SUBCASE("executing requests are never pre-empted") {
    double t = d.now;
    auto out = w.admit(make_request("exec1", "resnet18", t, "t0", 5.0), t, true);
    REQUIRE(out.admitted);
    d.poll();  // starts executing
    for (int i = 0; i < 20; ++i)
      w.admit(make_request("b" + std::to_string(i), "resnet18", t, "t0"), t, false);
    for (const auto& dec : w.reroute_check(t)) CHECK(dec.request_id != "exec1");
    d.run_until_idle();
    const CompletionRecord* rec = d.record_of("exec1");
    REQUIRE(rec);
    CHECK(rec->outcome == RequestState::Done);
  }
}

TEST_CASE("cache safety under a randomized request stream") {
  DeviceProfile p = gpu_profile();
  p.device_memory_bytes = 200'000'000;  // two resnet footprints
  WorkerConfig cfg = gpu_worker_config();
  cfg.host_cache_bytes = 500'000'000;
  WorkerCore w(cfg, p);
  MiniDriver d(w);
  for (int i = 0; i < 5; ++i) {
    auto m = std::make_shared<const ModelManifest>([&] {
      ModelManifest mm = *resnet();
      mm.model_name = "m" + std::to_string(i);
      return mm;
    }());
    w.load_model(m, 0.0, true);
  }

  std::mt19937_64 rng(7);
  int events = 0;
  for (int i = 0; i < 400; ++i) {
    std::string model = "m" + std::to_string(rng() % 5);
    w.admit(make_request("r" + std::to_string(i), model, d.now), d.now, false);
    d.poll();
    // interleave partial progress with new admissions
    int steps = static_cast<int>(rng() % 3);
    for (int s = 0; s < steps && d.step(); ++s) events++;
    CHECK(w.device_bytes_used() <= p.device_memory_bytes);
    CHECK(w.host_bytes_used() <= cfg.host_cache_bytes);
  }
  d.run_until_idle();
  CHECK(w.device_bytes_used() <= p.device_memory_bytes);
  // every admitted request completed despite the churn
  for (const auto& rec : d.completed) CHECK(rec.outcome == RequestState::Done);
}

TEST_CASE("idle models stay warm: no cold path after an hour of silence") {
  WorkerCore w(gpu_worker_config(), gpu_profile());
  MiniDriver d(w);
  w.load_model(resnet(), 0.0, true);
  warm_model(w, d, "resnet18");
  double hour_later = d.now + 3600.0 * 1000.0;
  auto out = w.admit(make_request("r1", "resnet18", hour_later), hour_later, true);
  REQUIRE(out.admitted);
  CHECK(w.residency_of("resnet18") != Residency::Cold);
  CHECK(out.estimate.fetch_ms == 0.0);
  CHECK(out.estimate.total_ms <= 7.47 + 1e-9);  // at most the host-hit path
}

TEST_CASE("batching coalesces same-model requests up to max_batch") {
  WorkerConfig cfg = gpu_worker_config();
  cfg.batching = true;
  DeviceProfile p = gpu_profile();
  p.max_batch = 4;
  p.batch_efficiency.points = {{1, 1.0}, {4, 2.0}};
  WorkerCore w(cfg, p);
  MiniDriver d(w);
  w.load_model(resnet(), 0.0, true);
  warm_model(w, d, "resnet18");

  double t = d.now;
  // one executes immediately; five queue; the next stage coalesces 4
  for (int i = 0; i < 6; ++i)
    REQUIRE(w.admit(make_request("r" + std::to_string(i), "resnet18", t), t, false).admitted);
  d.run_until_idle();
  int batched = 0;
  for (const auto& rec : d.completed)
    if (rec.request_id.rfind("r", 0) == 0 && rec.stage_batch == 4) batched++;
  CHECK(batched == 4);
  // batch of 4 at efficiency 2: 4x flops over 2x rate = 2x single latency
  double single = 0.97, batch4 = 4 * single / 2.0;
  bool found = false;
  for (const auto& rec : d.completed)
    if (rec.stage_batch == 4 && !found) {
      CHECK(rec.exec_end_ms - rec.exec_start_ms == doctest::Approx(batch4).epsilon(1e-9));
      found = true;
    }
  CHECK(found);
}

TEST_CASE("device fault finalizes the executing batch as faulted") {
  WorkerCore w(gpu_worker_config(), gpu_profile());
  MiniDriver d(w);
  w.load_model(resnet(), 0.0, true);
  warm_model(w, d, "resnet18");
  REQUIRE(w.admit(make_request("r1", "resnet18", d.now), d.now, false).admitted);
  d.poll();
  d.absorb(w.inject_device_fault(d.now));
  const CompletionRecord* rec = d.record_of("r1");
  REQUIRE(rec);
  CHECK(rec->outcome == RequestState::Faulted);
}

TEST_CASE("snapshot reflects queues and residency") {
  WorkerCore w(gpu_worker_config(), gpu_profile());
  MiniDriver d(w);
  w.load_model(resnet(), 0.0, true);
  REQUIRE(w.admit(make_request("r1", "resnet18", 0.0), 0.0, false).admitted);
  d.poll();
  WorkerQueueSnapshot s = w.snapshot(0.0);
  CHECK(s.worker_id == "w1");
  CHECK(s.pending_transfer_ms > 0.0);
  CHECK(s.model_residency.at("resnet18") == Residency::HostHit);
  CHECK(s.device_bytes_used > 0);  // reserved for the in-flight transfer
}
