#pragma once

// Synthetic workload generation. One PRNG stream per WorkloadSpec, keyed by
// (seed, tenant_id, model_id), so adding a workload never perturbs another's
// arrivals. All draws go through mt19937_64 with explicit inversion — no
// distribution objects, so sequences are bit-identical across platforms.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace infershare {

enum class ArrivalPattern { Poisson, Burst, Sporadic, Replay };
ArrivalPattern parse_pattern(const std::string& name);
const char* pattern_name(ArrivalPattern p);

struct WorkloadSpec {
  std::string tenant_id;
  std::string model_id;
  ArrivalPattern pattern = ArrivalPattern::Poisson;
  double rate = 0.0;        // poisson: inf/s
  double low_rate = 0.0;    // burst
  double high_rate = 0.0;   // burst
  double period_s = 0.0;    // burst: full square-wave period (low half, high half)
  double mean_gap_s = 0.0;  // sporadic: mean idle gap between single requests
  std::string trace_path;   // replay
  std::optional<double> deadline_ms;
  int batch = 1;
  double start_s = 0.0;
  double duration_s = 0.0;  // 0 = scenario duration
  bool record_estimates = false;
  double forced_hit_ratio = -1.0;  // in [0,1]: fraction of requests served from device cache
};

// Arrival timestamps in ms, sorted, within [start_s, start_s + duration_s).
std::vector<double> generate_arrivals(const WorkloadSpec& spec, uint64_t seed,
                                      double scenario_duration_s);

// PRNG stream for a workload: mt19937_64 keyed by (seed, tenant, model).
std::mt19937_64 workload_stream(const WorkloadSpec& spec, uint64_t seed);

// Uniform in [0,1) from the top 53 bits; never returns exactly 0.
double u01(std::mt19937_64& rng);
// Standard normal via Box-Muller (bit-deterministic, unlike
// std::normal_distribution).
double normal_draw(std::mt19937_64& rng);

}  // namespace infershare
