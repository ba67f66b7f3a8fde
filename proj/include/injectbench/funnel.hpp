#pragma once

#include <string>
#include <vector>

namespace injectbench {

struct FunnelEntry {
  std::string screenshot_id;
  long long proposed = 0;
  long long moderator_added = 0;
  long long moderator_dropped = 0;
  long long survivors = 0;
  long long in_final_dataset = 0;

  friend bool operator==(const FunnelEntry&, const FunnelEntry&) = default;
};

/// Localizer accounting. Identity: survivors = proposed + added - dropped.
struct FunnelLedger {
  long long proposed = 0;
  long long moderator_added = 0;
  long long moderator_dropped = 0;
  long long survivors = 0;
  long long in_final_dataset = 0;
  std::vector<FunnelEntry> per_screenshot;

  bool identity_holds() const {
    return survivors == proposed + moderator_added - moderator_dropped &&
           in_final_dataset <= survivors;
  }

  void add(const FunnelEntry& e) {
    proposed += e.proposed;
    moderator_added += e.moderator_added;
    moderator_dropped += e.moderator_dropped;
    survivors += e.survivors;
    in_final_dataset += e.in_final_dataset;
    per_screenshot.push_back(e);
  }

  /// Recomputes totals from the per-screenshot rows.
  static FunnelLedger from_entries(std::vector<FunnelEntry> entries) {
    FunnelLedger l;
    for (const auto& e : entries) l.add(e);
    return l;
  }

  friend bool operator==(const FunnelLedger&, const FunnelLedger&) = default;
};

}  // namespace injectbench
