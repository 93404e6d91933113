#include "sfnet/kink_monitor.hpp"

namespace sfnet {

namespace {
struct MonitorState {
  bool active = false;
  std::uint64_t hash = 1469598103934665603ULL;
};
thread_local MonitorState g_state;
constexpr std::uint64_t kOffset = 1469598103934665603ULL;
constexpr std::uint64_t kPrime = 1099511628211ULL;
}  // namespace

KinkMonitor::KinkMonitor() {
  g_state.active = true;
  g_state.hash = kOffset;
}

KinkMonitor::~KinkMonitor() { g_state.active = false; }

std::uint64_t KinkMonitor::fingerprint() const { return g_state.hash; }

void KinkMonitor::reset() { g_state.hash = kOffset; }

bool kink_monitor_active() { return g_state.active; }

void kink_record(std::uint64_t value) {
  for (int i = 0; i < 8; ++i) {
    g_state.hash ^= (value >> (8 * i)) & 0xffU;
    g_state.hash *= kPrime;
  }
}

}  // namespace sfnet
