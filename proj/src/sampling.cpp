#include "flowcot/sampling.hpp"

#include <cmath>
#include <vector>

#include "flowcot/error.hpp"
#include "flowcot/hash.hpp"

namespace flowcot {

double counter_uniform(std::uint64_t seed, std::uint64_t counter) {
  const std::uint64_t bits = splitmix64(seed ^ splitmix64(counter));
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

std::uint32_t argmax_range(std::span<const float> logits, std::uint32_t begin, std::uint32_t end) {
  if (begin >= end || end > logits.size()) throw DataError("argmax_range: empty or invalid range");
  std::uint32_t best = begin;
  for (std::uint32_t i = begin + 1; i < end; ++i)
    if (logits[i] > logits[best]) best = i;
  return best;
}

std::uint32_t sample_next(std::span<const float> logits, double temperature, std::uint64_t rng_seed) {
  if (logits.empty()) throw DataError("sample_next: empty logits");
  if (!(temperature >= 0.0)) throw ConfigError("temperature must be nonnegative");
  const auto n = static_cast<std::uint32_t>(logits.size());
  if (temperature == 0.0) return argmax_range(logits, 0, n);

  double mx = logits[0];
  for (float l : logits) mx = std::max(mx, static_cast<double>(l));
  std::vector<double> w(n);
  double sum = 0.0;
  for (std::uint32_t i = 0; i < n; ++i) {
    w[i] = std::exp((logits[i] - mx) / temperature);
    sum += w[i];
  }
  const double u = counter_uniform(rng_seed, 0) * sum;
  double cum = 0.0;
  for (std::uint32_t i = 0; i < n; ++i) {
    cum += w[i];
    if (u < cum) return i;
  }
  return n - 1;
}

}  // namespace flowcot
