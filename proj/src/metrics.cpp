#include "infershare/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

namespace infershare {

double percentile_nearest_rank(std::vector<double> values, double p) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  size_t rank = static_cast<size_t>(std::ceil(p / 100.0 * static_cast<double>(values.size())));
  if (rank < 1) rank = 1;
  if (rank > values.size()) rank = values.size();
  return values[rank - 1];
}

MetricsReport compute_report(const std::vector<CompletionRecord>& trace, double elapsed_ms,
                             const std::map<std::string, double>& tenant_charges,
                             const std::map<std::string, double>& tenant_vm_charges) {
  MetricsReport rep;
  rep.elapsed_ms = elapsed_ms;
  rep.tenant_charges = tenant_charges;
  rep.tenant_vm_charges = tenant_vm_charges;

  std::map<std::pair<std::string, std::string>, std::vector<double>> latencies;
  std::map<std::pair<std::string, std::string>, std::pair<int64_t, int64_t>> slo;
  // batched requests share one execute occupancy; count each interval once
  std::set<std::pair<std::string, double>> exec_intervals, transfer_intervals;

  for (const auto& r : trace) {
    auto key = std::make_pair(r.tenant_id, r.model_id);
    ModelStats& s = rep.per_model[key];
    s.arrivals++;
    switch (r.outcome) {
      case RequestState::Done: {
        s.done++;
        latencies[key].push_back(r.latency_ms());
        switch (r.residency) {
          case Residency::DeviceHit: s.device_hits++; break;
          case Residency::HostHit: s.host_hits++; break;
          case Residency::Cold: s.cold_hits++; break;
        }
        if (r.deadline_rel_ms >= 0) {
          slo[key].second++;
          if (r.latency_ms() > r.deadline_rel_ms) slo[key].first++;
        }
        break;
      }
      case RequestState::Rejected: s.rejected++; break;
      case RequestState::Cancelled: s.cancelled++; break;
      case RequestState::Rerouted: s.rerouted++; break;
      case RequestState::Faulted: s.faulted++; break;
      default: break;
    }
    if (!r.worker_id.empty()) {
      ResourceUtil& u = rep.per_worker[r.worker_id];
      if (r.transfer_start_ms >= 0 && r.transfer_end_ms >= 0 &&
          transfer_intervals.insert({r.worker_id, r.transfer_start_ms}).second)
        u.transfer_busy_ms += r.transfer_end_ms - r.transfer_start_ms;
      if (r.exec_start_ms >= 0 && r.exec_end_ms >= 0 &&
          exec_intervals.insert({r.worker_id, r.exec_start_ms}).second)
        u.execute_busy_ms += r.exec_end_ms - r.exec_start_ms;
    }
  }

  for (auto& [key, s] : rep.per_model) {
    auto lit = latencies.find(key);
    if (lit != latencies.end() && !lit->second.empty()) {
      double sum = 0.0;
      for (double v : lit->second) sum += v;
      s.mean_ms = sum / static_cast<double>(lit->second.size());
      s.p50_ms = percentile_nearest_rank(lit->second, 50.0);
      s.p99_ms = percentile_nearest_rank(lit->second, 99.0);
    }
    s.rejection_frac = s.arrivals ? static_cast<double>(s.rejected) / s.arrivals : 0.0;
    auto sit = slo.find(key);
    if (sit != slo.end() && sit->second.second > 0)
      s.slo_violation_frac =
          static_cast<double>(sit->second.first) / static_cast<double>(sit->second.second);
  }

  for (auto& [w, u] : rep.per_worker) {
    if (elapsed_ms > 0) {
      u.transfer_util = u.transfer_busy_ms / elapsed_ms;
      u.execute_util = u.execute_busy_ms / elapsed_ms;
    }
  }
  return rep;
}

void MetricsReport::write_csv(std::ostream& os) const {
  os << std::setprecision(9) << std::fixed;
  os << "section,tenant,model_or_worker,arrivals,done,rejected,cancelled,rerouted,faulted,"
        "mean_ms,p50_ms,p99_ms,rejection_frac,device_hit_ratio,host_hits,cold_hits,"
        "transfer_util,execute_util,charge\n";
  for (const auto& [key, s] : per_model) {
    os << "model," << key.first << ',' << key.second << ',' << s.arrivals << ',' << s.done << ','
       << s.rejected << ',' << s.cancelled << ',' << s.rerouted << ',' << s.faulted << ','
       << s.mean_ms << ',' << s.p50_ms << ',' << s.p99_ms << ',' << s.rejection_frac << ','
       << s.hit_ratio_device() << ',' << s.host_hits << ',' << s.cold_hits << ",,,\n";
  }
  for (const auto& [w, u] : per_worker) {
    os << "worker,," << w << ",,,,,,,,,,,,,"
       << u.transfer_util << ',' << u.execute_util << ",\n";
  }
  for (const auto& [t, c] : tenant_charges) {
    os << "billing," << t << ",work-based,,,,,,,,,,,,,,," << c << "\n";
  }
  for (const auto& [t, c] : tenant_vm_charges) {
    os << "billing," << t << ",vm-provisioned,,,,,,,,,,,,,,," << c << "\n";
  }
}

void MetricsReport::write_summary(std::ostream& os) const {
  os << std::setprecision(4) << std::fixed;
  os << "elapsed: " << elapsed_ms / 1000.0 << " s\n";
  for (const auto& [key, s] : per_model) {
    os << "  " << key.first << "/" << key.second << ": " << s.done << "/" << s.arrivals
       << " done, mean " << s.mean_ms << " ms, p50 " << s.p50_ms << " ms, p99 " << s.p99_ms
       << " ms, rejected " << s.rejected << ", device-hit " << s.hit_ratio_device() << "\n";
  }
  for (const auto& [w, u] : per_worker)
    os << "  worker " << w << ": transfer util " << u.transfer_util << ", execute util "
       << u.execute_util << "\n";
  for (const auto& [t, c] : tenant_charges) {
    os << "  tenant " << t << ": charge $" << std::setprecision(8) << c;
    auto v = tenant_vm_charges.find(t);
    if (v != tenant_vm_charges.end()) os << " (vm-provisioned $" << v->second << ")";
    os << std::setprecision(4) << "\n";
  }
}

// ---------------------------------------------------------------------------
// Trace io
// ---------------------------------------------------------------------------

namespace {
constexpr const char* kTraceHeader =
    "request,tenant,model,worker,batch,arrival_ms,admit_ms,transfer_start_ms,transfer_end_ms,"
    "fetch_ms,h2d_ms,exec_start_ms,exec_end_ms,done_ms,deadline_ms,residency,outcome,"
    "est_total_ms";
}

void write_trace(std::ostream& os, const std::vector<CompletionRecord>& trace) {
  os << kTraceHeader << "\n";
  os << std::setprecision(9) << std::fixed;
  for (const auto& r : trace) {
    os << r.request_id << ',' << r.tenant_id << ',' << r.model_id << ',' << r.worker_id << ','
       << r.batch << ',' << r.arrival_ms << ',' << r.admit_ms << ',' << r.transfer_start_ms << ','
       << r.transfer_end_ms << ',' << r.fetch_ms << ',' << r.h2d_ms << ',' << r.exec_start_ms
       << ',' << r.exec_end_ms << ',' << r.done_ms << ',' << r.deadline_rel_ms << ','
       << residency_name(r.residency) << ',' << request_state_name(r.outcome) << ','
       << (r.has_estimate ? r.admit_estimate.total_ms : -1.0) << "\n";
  }
}

std::vector<CompletionRecord> read_trace(std::istream& is) {
  std::vector<CompletionRecord> out;
  std::string line;
  if (!std::getline(is, line)) throw Error(Errc::TraceParseError, "empty trace");
  if (line != kTraceHeader) throw Error(Errc::TraceParseError, "unrecognized trace header");
  size_t lineno = 1;
  while (std::getline(is, line)) {
    lineno++;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 18)
      throw Error(Errc::TraceParseError, "line " + std::to_string(lineno) + ": bad field count");
    CompletionRecord r;
    try {
      r.request_id = f[0];
      r.tenant_id = f[1];
      r.model_id = f[2];
      r.worker_id = f[3];
      r.batch = std::stoi(f[4]);
      r.arrival_ms = std::stod(f[5]);
      r.admit_ms = std::stod(f[6]);
      r.transfer_start_ms = std::stod(f[7]);
      r.transfer_end_ms = std::stod(f[8]);
      r.fetch_ms = std::stod(f[9]);
      r.h2d_ms = std::stod(f[10]);
      r.exec_start_ms = std::stod(f[11]);
      r.exec_end_ms = std::stod(f[12]);
      r.done_ms = std::stod(f[13]);
      r.deadline_rel_ms = std::stod(f[14]);
    } catch (const std::exception&) {
      throw Error(Errc::TraceParseError, "line " + std::to_string(lineno) + ": bad number");
    }
    std::string res = f[15];
    r.residency = res == "device" ? Residency::DeviceHit
                  : res == "host" ? Residency::HostHit
                                  : Residency::Cold;
    std::string outcome = f[16];
    if (outcome == "done") r.outcome = RequestState::Done;
    else if (outcome == "rejected") r.outcome = RequestState::Rejected;
    else if (outcome == "cancelled") r.outcome = RequestState::Cancelled;
    else if (outcome == "rerouted") r.outcome = RequestState::Rerouted;
    else if (outcome == "faulted") r.outcome = RequestState::Faulted;
    else throw Error(Errc::TraceParseError, "line " + std::to_string(lineno) + ": bad outcome");
    double est = std::stod(f[17]);
    if (est >= 0) {
      r.has_estimate = true;
      r.admit_estimate.total_ms = est;
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace infershare
