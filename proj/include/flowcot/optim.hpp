#pragma once

#include <cstdint>
#include <vector>

namespace flowcot {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<float> m, v;
  std::int64_t t = 0;
};

/// One bias-corrected Adam update in place. Elements with zero gradient and
/// zero moments are left untouched.
void adam_step(std::vector<float>& params, const std::vector<float>& grads, AdamState& state,
               const AdamConfig& cfg);

/// Scales `grads` so its global L2 norm is at most `max_norm`; returns the
/// norm before scaling.
double clip_global_norm(std::vector<float>& grads, double max_norm);

}  // namespace flowcot
