#include "infershare/scheduler.hpp"

#include <algorithm>
#include <set>

#include "infershare/errors.hpp"

namespace infershare {

SchedPolicy parse_policy(const std::string& name) {
  if (name == "fifo") return SchedPolicy::Fifo;
  if (name == "edf") return SchedPolicy::Edf;
  if (name == "srpt") return SchedPolicy::Srpt;
  if (name == "min-avg-latency") return SchedPolicy::MinAvgLatency;
  throw Error(Errc::ConfigInvalid, "unknown scheduling policy '" + name + "'");
}

const char* policy_name(SchedPolicy p) {
  switch (p) {
    case SchedPolicy::Fifo: return "fifo";
    case SchedPolicy::Edf: return "edf";
    case SchedPolicy::Srpt: return "srpt";
    case SchedPolicy::MinAvgLatency: return "min-avg-latency";
  }
  return "?";
}

namespace {

bool better(const SchedCandidate& a, const SchedCandidate& b, SchedPolicy policy) {
  double ka, kb;
  switch (policy) {
    case SchedPolicy::Fifo:
      ka = a.arrival_ms, kb = b.arrival_ms;
      break;
    case SchedPolicy::Edf:
      ka = a.deadline_abs_ms, kb = b.deadline_abs_ms;
      break;
    case SchedPolicy::Srpt:
    case SchedPolicy::MinAvgLatency:
      // For a serial resource with known costs the permutation-optimal next
      // pick is the shortest predicted job, so both policies reduce to it.
      ka = a.stage_ms, kb = b.stage_ms;
      break;
    default:
      ka = kb = 0;
  }
  if (ka != kb) return ka < kb;
  if (a.arrival_ms != b.arrival_ms) return a.arrival_ms < b.arrival_ms;
  return a.request_id < b.request_id;
}

}  // namespace

int pick_next(const std::vector<SchedCandidate>& candidates, SchedPolicy policy, bool fair,
              FairState* fair_state) {
  if (candidates.empty()) return -1;

  std::string tenant_filter;
  if (fair && fair_state) {
    std::set<std::string> present;
    for (const auto& c : candidates) present.insert(c.tenant_id);
    if (present.size() > 1) {
      if (fair_state->remaining > 0 && present.count(fair_state->cursor)) {
        tenant_filter = fair_state->cursor;
        fair_state->remaining--;
      } else {
        // next tenant in cyclic lexicographic order strictly after the cursor
        auto it = present.upper_bound(fair_state->cursor);
        if (it == present.end()) it = present.begin();
        tenant_filter = *it;
        fair_state->cursor = tenant_filter;
        fair_state->remaining = fair_state->weight_of(tenant_filter) - 1;
      }
    }
  }

  int best = -1;
  for (size_t i = 0; i < candidates.size(); ++i) {
    if (!tenant_filter.empty() && candidates[i].tenant_id != tenant_filter) continue;
    if (best < 0 || better(candidates[i], candidates[best], policy)) best = static_cast<int>(i);
  }
  return best;
}

}  // namespace infershare
