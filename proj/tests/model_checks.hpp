#pragma once

// Finite-difference and causality harnesses shared by the unit and
// acceptance binaries.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "flowcot/model.hpp"
#include "reference_model.hpp"

namespace modelcheck {

struct TensorGradError {
  std::string name;
  double rel_error = 0;
};

/// Central differences on every parameter of the tiny model in double
/// precision, perturbed away from init so norms and biases matter.
inline std::vector<TensorGradError> gradient_check(double eps = 1e-4) {
  using namespace flowcot;
  const ModelConfig c = reftest::tiny_config(12);
  auto p = init_params(c, 0).cast<double>();
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(0.0, 0.15);
  for (auto& v : p.values) v += nd(rng);

  const std::vector<std::uint32_t> tokens = {1, 7, 8, 9, 3, 10, 11, 4, 5, 13, 14, 2};
  std::vector<Segment> segs;
  for (auto t : tokens) segs.push_back(default_segment(t, c.vocab));
  std::vector<std::uint32_t> targets(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) targets[i] = (tokens[i] * 5 + 3) % c.vocab.total();
  std::vector<std::uint8_t> mask(tokens.size(), 1);
  mask[3] = 0;

  const Gradients<double> g = grad(p, tokens, segs, targets, mask);
  auto loss = [&] { return masked_ce(forward(p, tokens, segs), targets, mask); };
  std::vector<TensorGradError> out;
  for (const auto& t : param_layout(c)) {
    double num = 0, den = 0;
    for (std::size_t e = 0; e < t.size(); ++e) {
      const std::size_t i = t.offset + e;
      const double saved = p.values[i];
      p.values[i] = saved + eps;
      const double lp = loss();
      p.values[i] = saved - eps;
      const double lm = loss();
      p.values[i] = saved;
      const double fd = (lp - lm) / (2 * eps);
      num += (fd - g.values[i]) * (fd - g.values[i]);
      den += std::max(fd * fd, g.values[i] * g.values[i]);
    }
    // Rows of the position table past the sequence get no gradient at all.
    out.push_back({t.name, den == 0 ? std::sqrt(num) : std::sqrt(num / den)});
  }
  return out;
}

/// Randomized suffix edits; returns the number of trials in which any
/// prefix logit changed.
inline int causality_violations(int trials, std::uint64_t seed) {
  using namespace flowcot;
  const ModelConfig c = reftest::tiny_config(12);
  auto p = init_params(c, seed).cast<double>();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 0.3);
  for (auto& v : p.values) v += nd(rng);
  const auto V = c.vocab.total();
  int bad = 0;
  for (int trial = 0; trial < trials; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 11);
    std::vector<std::uint32_t> tok(n);
    std::vector<Segment> seg(n);
    for (int i = 0; i < n; ++i) {
      tok[i] = static_cast<std::uint32_t>(rng() % V);
      seg[i] = static_cast<Segment>(rng() % kNumSegments);
    }
    const int cut = static_cast<int>(rng() % (n - 1));  // positions <= cut must not change
    auto tok2 = tok;
    auto seg2 = seg;
    for (int i = cut + 1; i < n; ++i) {
      tok2[i] = static_cast<std::uint32_t>(rng() % V);
      if (rng() % 2) seg2[i] = static_cast<Segment>(rng() % kNumSegments);
    }
    const auto a = forward(p, tok, seg), b = forward(p, tok2, seg2);
    bool same = true;
    for (std::size_t e = 0; e < static_cast<std::size_t>(cut + 1) * V; ++e) same &= a.values[e] == b.values[e];
    bad += same ? 0 : 1;
  }
  return bad;
}

}  // namespace modelcheck
