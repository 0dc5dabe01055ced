// infershare command line: cluster processes, simulation, and desk tools.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "infershare/config.hpp"
#include "infershare/executor.hpp"
#include "infershare/metrics.hpp"
#include "infershare/service.hpp"
#include "infershare/sim.hpp"

namespace fs = std::filesystem;
using namespace infershare;
using nlohmann::json;

namespace {

volatile std::sig_atomic_t g_stop = 0;
void on_signal(int) { g_stop = 1; }

void wait_for_signal() {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
}

int run_controller(const std::string& config_path, const std::string& listen) {
  ControllerService::Options opt;
  opt.cluster = config_path.empty() ? ClusterConfig{} : load_cluster_file(config_path);
  if (opt.cluster.profiles.empty()) opt.cluster.profiles = builtin_profiles();
  opt.listen = listen;
  ControllerService service(std::move(opt));
  service.start();
  std::cout << "controller listening on " << service.address() << "\n";
  wait_for_signal();
  service.stop();
  return 0;
}

int run_worker(const std::string& config_path, const std::string& name,
               const std::string& profile, const std::string& listen,
               const std::string& controller, int64_t host_cache_bytes) {
  WorkerService::Options opt;
  ClusterConfig cluster = config_path.empty() ? ClusterConfig{} : load_cluster_file(config_path);
  if (cluster.profiles.empty()) cluster.profiles = builtin_profiles();
  auto pit = cluster.profiles.find(profile);
  if (pit == cluster.profiles.end())
    throw Error(Errc::ConfigInvalid, "unknown device profile '" + profile + "'");
  opt.worker_id = name;
  opt.profile_name = profile;
  opt.profile = pit->second;
  opt.profile.device_id = name;
  opt.listen = listen;
  opt.controller = controller.empty() ? cluster.controller_listen : controller;
  opt.secret = cluster.secret;
  opt.heartbeat_ms = cluster.heartbeat_ms;
  opt.worker_config.worker_id = name;
  opt.worker_config.policy = cluster.policy;
  opt.worker_config.fair = cluster.fair;
  opt.worker_config.batching = cluster.batching;
  opt.worker_config.admission_ceiling_ms = cluster.admission_ceiling_ms;
  opt.worker_config.per_tenant_ceiling_ms = cluster.per_tenant_ceiling_ms;
  opt.worker_config.host_cache_bytes = host_cache_bytes;
  WorkerService service(std::move(opt));
  service.start();
  std::cout << "worker " << name << " (" << profile << ") listening on " << service.address()
            << "\n";
  wait_for_signal();
  service.stop();
  return 0;
}

int run_simulate(const std::string& scenario_path, int64_t seed_flag, const std::string& out_dir,
                 int noise_flag, double noise_sigma) {
  ScenarioConfig cfg = load_scenario_file(scenario_path);
  uint64_t seed = seed_flag >= 0 ? static_cast<uint64_t>(seed_flag) : cfg.seed;
  if (noise_flag >= 0) cfg.noise.enabled = noise_flag > 0;
  if (noise_sigma > 0) cfg.noise.sigma = noise_sigma;

  if (!out_dir.empty()) fs::create_directories(out_dir);

  if (!cfg.sweep_hit_ratios.empty()) {
    std::vector<SweepPoint> points = run_hitratio_sweep(cfg, seed);
    std::ostringstream csv;
    csv << "hit_ratio,throughput_inf_s,transfer_util,execute_util\n";
    csv.precision(9);
    csv << std::fixed;
    for (const auto& p : points)
      csv << p.hit_ratio << ',' << p.throughput_inf_s << ',' << p.transfer_util << ','
          << p.execute_util << "\n";
    if (!out_dir.empty()) {
      std::ofstream f(out_dir + "/sweep.csv");
      f << csv.str();
    }
    std::cout << csv.str();
    return 0;
  }

  SimResult res = run_simulation(cfg, seed);
  if (!out_dir.empty()) {
    std::ofstream rf(out_dir + "/report.csv");
    res.report.write_csv(rf);
    std::ofstream tf(out_dir + "/trace.csv");
    write_trace(tf, res.trace);
  }
  res.report.write_summary(std::cout);
  return 0;
}

int run_report(const std::string& trace_path, const std::string& out_dir) {
  std::ifstream in(trace_path);
  if (!in) throw Error(Errc::IoError, "cannot open " + trace_path);
  std::vector<CompletionRecord> trace = read_trace(in);
  double elapsed = 0.0;
  std::map<std::string, double> charges;
  BillingLedger ledger;
  for (const auto& r : trace) {
    elapsed = std::max(elapsed, r.done_ms);
    ledger.charge(r);
  }
  MetricsReport rep = compute_report(trace, elapsed, ledger.charges());
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream rf(out_dir + "/report.csv");
    rep.write_csv(rf);
  }
  rep.write_summary(std::cout);
  return 0;
}

int run_exec(const std::string& manifest_path, const std::string& input_path,
             const std::string& out_path, bool serial, bool count_ops) {
  ModelManifest m = load_manifest_file(manifest_path);
  WeightStore weights = generate_weights(m);
  Tensor input = read_tensor_csv(input_path, m.input_shape);
  ExecOptions opts;
  opts.mode = serial ? KernelMode::Serial : KernelMode::Parallel;
  uint64_t ops = 0;
  if (count_ops) {
    opts.mode = KernelMode::Serial;
    opts.op_counter = &ops;
  }
  Tensor out = execute_model(m, weights, input, opts);
  if (!out_path.empty())
    write_tensor_csv(out_path, out);
  else
    write_tensor_csv("/dev/stdout", out);
  if (count_ops) {
    std::cerr << "costed ops: " << ops << " (model_flops: "
              << model_flops(m, input.shape.dims[0]) << ")\n";
  }
  return 0;
}

int run_validate(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw Error(Errc::IoError, "cannot open " + manifest_path);
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    ModelManifest m = parse_manifest(buf.str());
    std::cout << "ok: " << m.model_name << ", " << m.layers.size() << " layers, "
              << m.total_weight_bytes << " weight bytes, " << model_flops(m, 1)
              << " flops at batch 1\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "invalid manifest: " << e.what() << "\n";
    return 1;
  }
}

TcpConn dial(const std::string& controller) { return TcpConn::connect_to(controller); }

int run_upload(const std::string& controller, const std::string& secret,
               const std::string& manifest_path, const std::string& tenant, int replicas) {
  std::ifstream in(manifest_path);
  if (!in) throw Error(Errc::IoError, "cannot open " + manifest_path);
  std::ostringstream buf;
  buf << in.rdbuf();
  TcpConn conn = dial(controller);
  Frame resp = conn.call(MsgKind::UploadModel, json{{"auth", secret},
                                                    {"tenant", tenant},
                                                    {"replicas", replicas},
                                                    {"manifest", buf.str()}});
  if (resp.kind != MsgKind::UploadModelResp) {
    std::cerr << resp.payload.dump(2) << "\n";
    return 1;
  }
  std::cout << resp.payload.dump(2) << "\n";
  return 0;
}

int run_infer(const std::string& controller, const std::string& model,
              const std::string& input_path, double deadline_ms, const std::string& tenant,
              const std::string& out_path) {
  json req{{"model", model}, {"tenant", tenant}};
  if (deadline_ms > 0) req["deadline_ms"] = deadline_ms;
  if (!input_path.empty()) {
    std::ifstream in(input_path);
    if (!in) throw Error(Errc::IoError, "cannot open " + input_path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<double> row;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
      rows.push_back(std::move(row));
    }
    if (rows.empty()) throw Error(Errc::IoError, "no rows in " + input_path);
    std::vector<double> flat;
    for (auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    req["input"] = json{{"dims", std::vector<int64_t>{static_cast<int64_t>(rows.size()),
                                                      static_cast<int64_t>(rows[0].size())}},
                        {"values", flat}};
  }
  TcpConn conn = dial(controller);
  Frame resp = conn.call(MsgKind::Infer, req);
  if (resp.kind != MsgKind::InferResp) {
    std::cerr << resp.payload.dump(2) << "\n";
    return 1;
  }
  json out = resp.payload;
  if (out.contains("output") && !out_path.empty()) {
    const json& o = out["output"];
    if (o.contains("values")) {
      std::ofstream f(out_path);
      f.precision(17);
      const auto& dims = o["dims"];
      int64_t batch = dims[0].get<int64_t>();
      int64_t per = 1;
      for (size_t i = 1; i < dims.size(); ++i) per *= dims[i].get<int64_t>();
      const auto& vals = o["values"];
      for (int64_t b = 0; b < batch; ++b) {
        for (int64_t i = 0; i < per; ++i) f << (i ? "," : "") << vals[b * per + i].get<double>();
        f << "\n";
      }
    }
    out.erase("output");
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

int run_stats(const std::string& controller) {
  TcpConn conn = dial(controller);
  Frame resp = conn.call(MsgKind::GetStats, json::object());
  std::cout << resp.payload.dump(2) << "\n";
  return resp.kind == MsgKind::StatsResp ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"infershare: multi-tenant DNN inference serving"};
  app.require_subcommand(1);

  std::string config_path, listen, controller = "127.0.0.1:7070", secret = "infershare-dev";
  std::string name = "worker1", profile = "cpu-reference";
  int64_t host_cache_bytes = 1'000'000'000;

  auto* c_ctrl = app.add_subcommand("controller", "controller process");
  auto* c_ctrl_run = c_ctrl->add_subcommand("run", "run the controller");
  c_ctrl_run->add_option("--config", config_path, "cluster config file");
  c_ctrl_run->add_option("--listen", listen, "override listen address");

  auto* c_worker = app.add_subcommand("worker", "worker process");
  auto* c_worker_run = c_worker->add_subcommand("run", "run a worker");
  c_worker_run->add_option("--config", config_path, "cluster config file");
  c_worker_run->add_option("--name", name, "worker id");
  c_worker_run->add_option("--profile", profile, "device profile name");
  c_worker_run->add_option("--listen", listen, "listen address (default ephemeral)");
  c_worker_run->add_option("--controller", controller, "controller address");
  c_worker_run->add_option("--host-cache-bytes", host_cache_bytes, "host cache capacity");

  std::string scenario_path, out_dir, trace_path;
  int64_t seed = -1;
  int noise_flag = -1;
  double noise_sigma = 0.0;
  auto* c_sim = app.add_subcommand("simulate", "run a scenario in the simulator");
  c_sim->add_option("--scenario", scenario_path, "scenario file")->required();
  c_sim->add_option("--seed", seed, "seed override");
  c_sim->add_option("--out", out_dir, "output directory for report.csv and trace.csv");
  c_sim->add_flag("--noise{1},--no-noise{0}", noise_flag, "override the scenario noise model");
  c_sim->add_option("--noise-sigma", noise_sigma, "override the lognormal sigma");

  auto* c_report = app.add_subcommand("report", "recompute metrics from a trace file");
  c_report->add_option("--trace", trace_path, "trace csv")->required();
  c_report->add_option("--out", out_dir, "output directory");

  std::string manifest_path, input_path, out_path, model_id, tenant = "tenant0";
  bool serial = false, count_ops = false;
  int replicas = 0;
  double deadline_ms = 0.0;
  auto* c_exec = app.add_subcommand("exec", "run a model on the reference executor");
  c_exec->add_option("--manifest", manifest_path, "manifest file")->required();
  c_exec->add_option("--input", input_path, "input csv (one row per batch element)")->required();
  c_exec->add_option("--out", out_path, "output csv (default stdout)");
  c_exec->add_flag("--serial", serial, "use the serial kernels");
  c_exec->add_flag("--count-ops", count_ops, "count costed arithmetic ops (serial path)");

  auto* c_validate = app.add_subcommand("validate", "parse and validate a manifest");
  c_validate->add_option("--manifest", manifest_path, "manifest file")->required();

  auto* c_upload = app.add_subcommand("upload", "upload a model to the controller");
  c_upload->add_option("--manifest", manifest_path, "manifest file")->required();
  c_upload->add_option("--controller", controller, "controller address");
  c_upload->add_option("--tenant", tenant, "tenant id");
  c_upload->add_option("--replicas", replicas, "initial replica count");
  c_upload->add_option("--secret", secret, "shared secret");

  auto* c_infer = app.add_subcommand("infer", "send an inference request");
  c_infer->add_option("--model", model_id, "model id")->required();
  c_infer->add_option("--input", input_path, "input csv");
  c_infer->add_option("--deadline", deadline_ms, "relative deadline in ms");
  c_infer->add_option("--controller", controller, "controller address");
  c_infer->add_option("--tenant", tenant, "tenant id");
  c_infer->add_option("--out", out_path, "write the output tensor csv here");

  auto* c_stats = app.add_subcommand("stats", "query controller stats");
  c_stats->add_option("--controller", controller, "controller address");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (c_ctrl_run->parsed()) return run_controller(config_path, listen);
    if (c_worker_run->parsed())
      return run_worker(config_path, name, profile,
                        listen.empty() ? "127.0.0.1:0" : listen, controller, host_cache_bytes);
    if (c_sim->parsed()) return run_simulate(scenario_path, seed, out_dir, noise_flag, noise_sigma);
    if (c_report->parsed()) return run_report(trace_path, out_dir);
    if (c_exec->parsed()) return run_exec(manifest_path, input_path, out_path, serial, count_ops);
    if (c_validate->parsed()) return run_validate(manifest_path);
    if (c_upload->parsed()) return run_upload(controller, secret, manifest_path, tenant, replicas);
    if (c_infer->parsed())
      return run_infer(controller, model_id, input_path, deadline_ms, tenant, out_path);
    if (c_stats->parsed()) return run_stats(controller);
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << app.help();
  return 2;
}
