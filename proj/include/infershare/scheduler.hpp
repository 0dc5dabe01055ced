#pragma once

// Per-resource admission scheduling. Resources are serial, costs are known
// up front, and decisions are interposed whenever a resource frees or work
// arrives — so the policy is just "pick the next candidate".

#include <limits>
#include <map>
#include <string>
#include <vector>

namespace infershare {

enum class SchedPolicy { Fifo, Edf, Srpt, MinAvgLatency };

SchedPolicy parse_policy(const std::string& name);
const char* policy_name(SchedPolicy p);

struct SchedCandidate {
  std::string request_id;
  std::string tenant_id;
  double arrival_ms = 0.0;
  double deadline_abs_ms = std::numeric_limits<double>::infinity();
  double stage_ms = 0.0;  // predicted remaining work on this resource
};

// Weighted round-robin over tenants, applied before the per-resource policy
// when the fair flag is set. Weights default to 1.
struct FairState {
  std::map<std::string, int> weights;
  std::string cursor;
  int remaining = 0;

  int weight_of(const std::string& tenant) const {
    auto it = weights.find(tenant);
    return it == weights.end() ? 1 : it->second;
  }
};

// Picks the next candidate index, or -1 when empty.
//   fifo            — earliest arrival
//   edf             — earliest absolute deadline (deadline-less requests last)
//   srpt            — smallest predicted remaining work on this resource
//   min-avg-latency — permutation-optimal next pick; on a serial resource
//                     with known costs this is shortest-predicted-job-first
// Ties break deterministically by (arrival_ms, request_id). When `fair` is
// set, tenants are served weighted round-robin and the policy applies within
// the chosen tenant's candidates; `fair_state` is advanced on each pick.
int pick_next(const std::vector<SchedCandidate>& candidates, SchedPolicy policy, bool fair,
              FairState* fair_state);

}  // namespace infershare
