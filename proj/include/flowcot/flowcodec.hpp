#pragma once

// Flow colorization: direction -> hue, normalized magnitude -> saturation,
// value fixed at 1 so zero motion renders white.

#include <vector>

#include "flowcot/image.hpp"

namespace flowcot {

struct FlowCodecConfig {
  double sigma = 0.15;
  void validate() const;
  friend bool operator==(const FlowCodecConfig&, const FlowCodecConfig&) = default;
};

/// min(1, m / (sigma * sqrt(h^2 + w^2))).
double normalize_magnitude(double m, int h, int w, const FlowCodecConfig& cfg);

struct PolarSample {
  double alpha = 0;   // radians in (-pi, pi]
  double m = 0;       // magnitude
  double m_norm = 0;  // [0, 1]
};

struct PolarFlow {
  int h = 0, w = 0;
  std::vector<PolarSample> samples;
};

PolarFlow to_polar(const FlowField& f, const FlowCodecConfig& cfg);

/// Colorizes one vector for a frame of size h x w.
Rgb encode_flow_vector(double u, double v, int h, int w, const FlowCodecConfig& cfg);

/// Throws CodecError on non-finite input.
Frame flow_to_rgb(const FlowField& f, const FlowCodecConfig& cfg);

/// Inverse colorization. Achromatic pixels decode to (0, 0); magnitudes are
/// recovered up to the clamp in normalize_magnitude.
FlowField rgb_to_flow(const Frame& img, const FlowCodecConfig& cfg);

/// Rounds every component to the nearest multiple of `spacing`.
FlowField snap_to_lattice(const FlowField& f, double spacing = 1.0);

/// HSV -> RGB (6-sector), h in degrees [0, 360), s and v in [0, 1]; channels
/// rounded half away from zero.
Rgb hsv_to_rgb8(double hue_deg, double s, double v);

}  // namespace flowcot
