#include "infershare/workload.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "infershare/errors.hpp"
#include "infershare/executor.hpp"  // fnv1a64 / mix64

namespace infershare {

ArrivalPattern parse_pattern(const std::string& name) {
  if (name == "poisson") return ArrivalPattern::Poisson;
  if (name == "burst") return ArrivalPattern::Burst;
  if (name == "sporadic") return ArrivalPattern::Sporadic;
  if (name == "replay") return ArrivalPattern::Replay;
  throw Error(Errc::ConfigInvalid, "unknown arrival pattern '" + name + "'");
}

const char* pattern_name(ArrivalPattern p) {
  switch (p) {
    case ArrivalPattern::Poisson: return "poisson";
    case ArrivalPattern::Burst: return "burst";
    case ArrivalPattern::Sporadic: return "sporadic";
    case ArrivalPattern::Replay: return "replay";
  }
  return "?";
}

std::mt19937_64 workload_stream(const WorkloadSpec& spec, uint64_t seed) {
  return std::mt19937_64(
      mix64(seed, mix64(fnv1a64(spec.tenant_id), fnv1a64(spec.model_id))));
}

double u01(std::mt19937_64& rng) {
  double u = static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
  return u > 0.0 ? u : 5e-324;
}

double normal_draw(std::mt19937_64& rng) {
  double u1 = u01(rng), u2 = u01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793 * u2);
}

namespace {

double exp_draw(std::mt19937_64& rng, double rate_per_s) {
  return -std::log(u01(rng)) / rate_per_s;  // seconds
}

void poisson_segment(std::mt19937_64& rng, double rate, double from_s, double to_s,
                     std::vector<double>* out_ms) {
  if (rate <= 0.0) return;
  double t = from_s;
  while (true) {
    t += exp_draw(rng, rate);
    if (t >= to_s) break;
    out_ms->push_back(t * 1e3);
  }
}

}  // namespace

std::vector<double> generate_arrivals(const WorkloadSpec& spec, uint64_t seed,
                                      double scenario_duration_s) {
  std::vector<double> out;
  double start = spec.start_s;
  double dur = spec.duration_s > 0 ? spec.duration_s : scenario_duration_s - start;
  double end = start + dur;
  std::mt19937_64 rng = workload_stream(spec, seed);

  switch (spec.pattern) {
    case ArrivalPattern::Poisson:
      poisson_segment(rng, spec.rate, start, end, &out);
      break;
    case ArrivalPattern::Burst: {
      if (spec.period_s <= 0)
        throw Error(Errc::ConfigInvalid, "burst workload needs period_s > 0");
      // square wave: low for the first half of each period, high for the second
      double half = spec.period_s / 2.0;
      double t = start;
      bool high = false;
      while (t < end) {
        double seg_end = std::min(t + half, end);
        poisson_segment(rng, high ? spec.high_rate : spec.low_rate, t, seg_end, &out);
        t = seg_end;
        high = !high;
      }
      break;
    }
    case ArrivalPattern::Sporadic: {
      if (spec.mean_gap_s <= 0)
        throw Error(Errc::ConfigInvalid, "sporadic workload needs mean_gap_s > 0");
      double t = start;
      while (true) {
        t += exp_draw(rng, 1.0 / spec.mean_gap_s);
        if (t >= end) break;
        out.push_back(t * 1e3);
      }
      break;
    }
    case ArrivalPattern::Replay: {
      std::ifstream in(spec.trace_path);
      if (!in) throw Error(Errc::TraceParseError, "cannot open trace " + spec.trace_path);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        try {
          out.push_back(std::stod(line));
        } catch (const std::exception&) {
          throw Error(Errc::TraceParseError, "bad timestamp '" + line + "' in " + spec.trace_path);
        }
      }
      break;
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace infershare
