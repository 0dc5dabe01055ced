#include "infershare/billing.hpp"

namespace infershare {

double charge_for(const CompletionRecord& record, double link_cost_per_hour) {
  if (record.outcome != RequestState::Done) return 0.0;
  double charge = 0.0;
  if (record.exec_start_ms >= 0 && record.exec_end_ms >= 0) {
    double device_s = (record.exec_end_ms - record.exec_start_ms) / 1e3;
    // a coalesced stage serves several requests; each pays its share
    double share =
        record.stage_batch > 0 ? static_cast<double>(record.batch) / record.stage_batch : 1.0;
    charge += device_s * share * record.device_cost_per_hour / 3600.0;
  }
  if (link_cost_per_hour > 0 && record.transfer_start_ms >= 0 && record.transfer_end_ms >= 0) {
    double transfer_s = (record.transfer_end_ms - record.transfer_start_ms) / 1e3;
    charge += transfer_s * link_cost_per_hour / 3600.0;
  }
  return charge;
}

void BillingLedger::charge(const CompletionRecord& record) {
  double c = charge_for(record, link_cost_per_hour_);
  if (c > 0.0) charges_[record.tenant_id] += c;
}

double BillingLedger::tenant_total(const std::string& tenant) const {
  auto it = charges_.find(tenant);
  return it == charges_.end() ? 0.0 : it->second;
}

}  // namespace infershare
