#pragma once

#include <cstdint>

namespace sfnet {

// Fingerprint of every discrete branch taken by non-smooth ops (ReLU sign
// pattern, sampling cell and clamp flags, hard-example selection). Finite
// difference checks compare fingerprints at x +- h and discard probes that
// straddle a kink.
class KinkMonitor {
 public:
  KinkMonitor();
  ~KinkMonitor();
  KinkMonitor(const KinkMonitor&) = delete;
  KinkMonitor& operator=(const KinkMonitor&) = delete;

  std::uint64_t fingerprint() const;
  void reset();
};

bool kink_monitor_active();
void kink_record(std::uint64_t value);

}  // namespace sfnet
