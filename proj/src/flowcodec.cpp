#include "flowcot/flowcodec.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "flowcot/error.hpp"

namespace flowcot {

namespace {

double diagonal(int h, int w) {
  return std::sqrt(static_cast<double>(h) * h + static_cast<double>(w) * w);
}

std::uint8_t to_byte(double x) {
  return static_cast<std::uint8_t>(std::clamp(std::round(x * 255.0), 0.0, 255.0));
}

}  // namespace

void FlowCodecConfig::validate() const {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("flow sigma must be positive");
}

double normalize_magnitude(double m, int h, int w, const FlowCodecConfig& cfg) {
  return std::min(1.0, m / (cfg.sigma * diagonal(h, w)));
}

PolarFlow to_polar(const FlowField& f, const FlowCodecConfig& cfg) {
  PolarFlow p{f.h, f.w, {}};
  p.samples.reserve(static_cast<std::size_t>(f.h) * f.w);
  for (int y = 0; y < f.h; ++y)
    for (int x = 0; x < f.w; ++x) {
      const FlowVec fv = f.at(y, x);
      const double m = std::hypot(static_cast<double>(fv.u), static_cast<double>(fv.v));
      p.samples.push_back({std::atan2(static_cast<double>(fv.v), static_cast<double>(fv.u)), m,
                           normalize_magnitude(m, f.h, f.w, cfg)});
    }
  return p;
}

Rgb hsv_to_rgb8(double hue_deg, double s, double v) {
  const double h6 = hue_deg / 60.0;
  const double fl = std::floor(h6);
  const int sector = static_cast<int>(fl) % 6;
  const double f = h6 - fl;
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  double r = v, g = t, b = p;
  switch (sector) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
  return {to_byte(r), to_byte(g), to_byte(b)};
}

Rgb encode_flow_vector(double u, double v, int h, int w, const FlowCodecConfig& cfg) {
  if (!std::isfinite(u) || !std::isfinite(v)) throw CodecError("non-finite flow vector");
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double alpha = std::fmod(std::atan2(v, u), two_pi);
  if (alpha < 0) alpha += two_pi;
  double hue = alpha / two_pi * 360.0;
  if (hue >= 360.0) hue -= 360.0;
  const double s = normalize_magnitude(std::hypot(u, v), h, w, cfg);
  return hsv_to_rgb8(hue, s, 1.0);
}

Frame flow_to_rgb(const FlowField& f, const FlowCodecConfig& cfg) {
  Frame out(f.h, f.w);
  for (int y = 0; y < f.h; ++y)
    for (int x = 0; x < f.w; ++x) {
      const FlowVec fv = f.at(y, x);
      out.set(y, x, encode_flow_vector(fv.u, fv.v, f.h, f.w, cfg));
    }
  return out;
}

FlowField rgb_to_flow(const Frame& img, const FlowCodecConfig& cfg) {
  FlowField out(img.h, img.w);
  const double scale = cfg.sigma * diagonal(img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      const Rgb c = img.at(y, x);
      const double r = c.r / 255.0, g = c.g / 255.0, b = c.b / 255.0;
      const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
      if (mx == mn) continue;
      const double delta = mx - mn;
      double hue;
      if (mx == r)
        hue = 60.0 * std::fmod((g - b) / delta + 6.0, 6.0);
      else if (mx == g)
        hue = 60.0 * ((b - r) / delta + 2.0);
      else
        hue = 60.0 * ((r - g) / delta + 4.0);
      const double s = delta / mx;
      const double m = s * scale;
      const double alpha = hue * std::numbers::pi / 180.0;
      out.set(y, x, {static_cast<float>(m * std::cos(alpha)), static_cast<float>(m * std::sin(alpha))});
    }
  return out;
}

FlowField snap_to_lattice(const FlowField& f, double spacing) {
  FlowField out = f;
  for (auto& c : out.uv) c = static_cast<float>(std::round(c / spacing) * spacing);
  return out;
}

}  // namespace flowcot
