#include "sfnet/flop_trace.hpp"

namespace sfnet {

namespace {
thread_local bool g_active = false;
thread_local double g_total = 0.0;
}  // namespace

FlopTrace::FlopTrace() {
  g_active = true;
  g_total = 0.0;
}

FlopTrace::~FlopTrace() { g_active = false; }

double FlopTrace::total() const { return g_total; }

bool flop_trace_active() { return g_active; }

void flop_trace_add(double ops) {
  if (g_active) g_total += ops;
}

}  // namespace sfnet
