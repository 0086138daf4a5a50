#include "flowcot/optim.hpp"

#include <cmath>

#include "flowcot/error.hpp"

namespace flowcot {

void adam_step(std::vector<float>& params, const std::vector<float>& grads, AdamState& state,
               const AdamConfig& cfg) {
  if (grads.size() != params.size()) throw DataError("adam_step: shape mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0f);
    state.v.assign(params.size(), 0.0f);
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  const auto b1 = static_cast<float>(cfg.beta1), b2 = static_cast<float>(cfg.beta2);
  const auto step = static_cast<float>(cfg.lr / bc1);
  const auto inv_bc2 = static_cast<float>(1.0 / bc2);
  const auto eps = static_cast<float>(cfg.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const float g = grads[i];
    const float m = b1 * state.m[i] + (1.0f - b1) * g;
    const float v = b2 * state.v[i] + (1.0f - b2) * g * g;
    state.m[i] = m;
    state.v[i] = v;
    params[i] -= step * m / (std::sqrt(v * inv_bc2) + eps);
  }
}

double clip_global_norm(std::vector<float>& grads, double max_norm) {
  double sq = 0.0;
  for (float g : grads) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && std::isfinite(norm)) {
    const auto s = static_cast<float>(max_norm / norm);
    for (float& g : grads) g *= s;
  }
  return norm;
}

}  // namespace flowcot
