#pragma once

// Work-based billing: a tenant pays for the device seconds its completed
// requests occupied, never for idle capacity. Rejected, cancelled, rerouted
// and faulted requests are free. Interleaving-invariant by construction: the
// charge is a sum over per-request records.

#include <map>
#include <string>

#include "infershare/worker.hpp"

namespace infershare {

class BillingLedger {
 public:
  explicit BillingLedger(double link_cost_per_hour = 0.0)
      : link_cost_per_hour_(link_cost_per_hour) {}

  void charge(const CompletionRecord& record);

  double tenant_total(const std::string& tenant) const;
  const std::map<std::string, double>& charges() const { return charges_; }

 private:
  double link_cost_per_hour_;
  std::map<std::string, double> charges_;
};

// Charge for a single completed record (currency).
double charge_for(const CompletionRecord& record, double link_cost_per_hour = 0.0);

}  // namespace infershare
