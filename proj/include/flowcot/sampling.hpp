#pragma once

#include <cstdint>
#include <span>

namespace flowcot {

/// Counter-based uniform in [0, 1): a pure function of (seed, counter).
double counter_uniform(std::uint64_t seed, std::uint64_t counter);

/// Temperature 0 is argmax with the lowest index winning ties; otherwise a
/// softmax draw at the given temperature from counter_uniform(rng_seed, 0).
std::uint32_t sample_next(std::span<const float> logits, double temperature, std::uint64_t rng_seed);

/// Argmax restricted to [begin, end), lowest index on ties.
std::uint32_t argmax_range(std::span<const float> logits, std::uint32_t begin, std::uint32_t end);

}  // namespace flowcot
