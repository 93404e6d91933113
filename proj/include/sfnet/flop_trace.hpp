#pragma once

namespace sfnet {

// Counts operations actually executed by conv2d and bilinear_sample on this
// thread while alive (same conventions as count_flops). Used to cross-check
// the analytic counter against a real forward pass.
class FlopTrace {
 public:
  FlopTrace();
  ~FlopTrace();
  FlopTrace(const FlopTrace&) = delete;
  FlopTrace& operator=(const FlopTrace&) = delete;

  double total() const;
};

bool flop_trace_active();
void flop_trace_add(double ops);

}  // namespace sfnet
