#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include "doctest.h"
#include "flowcot/error.hpp"
#include "flowcot/flowcodec.hpp"
#include "test_util.hpp"

using namespace flowcot;

namespace {

FlowField uniform_flow(int h, int w, float u, float v) {
  FlowField f(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) f.set(y, x, {u, v});
  return f;
}

// Hue of an 8-bit color in degrees, from the standard max/min formulas.
double hue_of(Rgb c) {
  const double r = c.r, g = c.g, b = c.b;
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double d = mx - mn;
  double h = 0;
  if (mx == r)
    h = 60.0 * std::fmod((g - b) / d + 6.0, 6.0);
  else if (mx == g)
    h = 60.0 * ((b - r) / d + 2.0);
  else
    h = 60.0 * ((r - g) / d + 4.0);
  return h;
}

double angle_diff(double a, double b) {
  double d = std::fmod(a - b + 540.0, 360.0) - 180.0;
  return std::abs(d);
}

}  // namespace

TEST_SUITE("flowcodec") {
  TEST_CASE("normalize_magnitude") {
    const FlowCodecConfig cfg;
    CHECK(normalize_magnitude(0, 32, 32, cfg) == 0.0);
    CHECK(normalize_magnitude(0.15 * std::hypot(32.0, 32.0), 32, 32, cfg) == 1.0);
    CHECK(normalize_magnitude(100, 32, 32, cfg) == 1.0);
    // 3 / (0.15 * 45.254834) to 7 places.
    CHECK(normalize_magnitude(3, 32, 32, cfg) == doctest::Approx(0.4419417).epsilon(1e-7));
  }

  TEST_CASE("flow_to_rgb reference colors") {
    const FlowCodecConfig cfg;
    CHECK(encode_flow_vector(0, 0, 32, 32, cfg) == Rgb{255, 255, 255});
    CHECK(encode_flow_vector(3, 0, 32, 32, cfg) == Rgb{255, 142, 142});
    const Rgb up = encode_flow_vector(0, 3, 32, 32, cfg), down = encode_flow_vector(0, -3, 32, 32, cfg);
    CHECK(hue_of(up) == doctest::Approx(90.0).epsilon(0.01));
    CHECK(hue_of(down) == doctest::Approx(270.0).epsilon(0.01));
    CHECK(std::max({up.r, up.g, up.b}) - std::min({up.r, up.g, up.b}) ==
          std::max({down.r, down.g, down.b}) - std::min({down.r, down.g, down.b}));
    CHECK_THROWS_AS(encode_flow_vector(NAN, 0, 32, 32, cfg), CodecError);
  }

  TEST_CASE("golden PPM for the (3, 0) field") {
    const Frame img = flow_to_rgb(uniform_flow(32, 32, 3, 0), {});
    const auto path = test_tmp_dir("codec") / "f.ppm";
    write_ppm(path, img);
    CHECK(read_bytes(path) == read_bytes(test_data_path("flow_u3_v0_32x32.ppm")));
  }

  TEST_CASE("lattice round trip") {
    const FlowCodecConfig cfg;
    FlowField f(32, 32);
    int i = 0;
    for (int u = -4; u <= 4; ++u)
      for (int v = -4; v <= 4; ++v, ++i) f.set(i / 32, i % 32, {float(u), float(v)});
    const FlowField back = rgb_to_flow(flow_to_rgb(f, cfg), cfg);
    double worst = 0;
    for (std::size_t k = 0; k < f.uv.size(); ++k) worst = std::max(worst, double(std::abs(back.uv[k] - f.uv[k])));
    CHECK(worst <= 0.1);
    CHECK(snap_to_lattice(back) == f);
    const FlowField zero(32, 32);
    CHECK(rgb_to_flow(flow_to_rgb(zero, cfg), cfg) == zero);
  }

  TEST_CASE("saturated flow decodes to the clamped magnitude") {
    const FlowCodecConfig cfg;
    const double cap = cfg.sigma * std::hypot(32.0, 32.0);
    const FlowField back = rgb_to_flow(flow_to_rgb(uniform_flow(32, 32, 20, 0), cfg), cfg);
    CHECK(back.at(0, 0).u == doctest::Approx(cap).epsilon(1e-6));
    CHECK(back.at(0, 0).v == doctest::Approx(0.0));
  }

  TEST_CASE("rotation equivariance within 2 degrees") {
    const FlowCodecConfig cfg;
    const double m = 4.0;
    const Rgb base = encode_flow_vector(m, 0, 32, 32, cfg);
    for (int deg = 0; deg < 360; deg += 7) {
      const double th = deg * std::numbers::pi / 180.0;
      const Rgb c = encode_flow_vector(m * std::cos(th), m * std::sin(th), 32, 32, cfg);
      CHECK(angle_diff(hue_of(c), hue_of(base) + deg) <= 2.0);
    }
  }

  TEST_CASE("saturation is monotone in magnitude") {
    const FlowCodecConfig cfg;
    const double cap = cfg.sigma * std::hypot(32.0, 32.0);
    for (double th : {0.3, 1.7, -2.4}) {
      int prev_sat = -1;
      for (double m = 0; m <= 2 * cap; m += 0.25) {
        const Rgb c = encode_flow_vector(m * std::cos(th), m * std::sin(th), 32, 32, cfg);
        const int sat = std::max({c.r, c.g, c.b}) - std::min({c.r, c.g, c.b});
        CHECK(sat >= prev_sat);
        if (m >= cap) CHECK(sat == 255);
        prev_sat = sat;
      }
    }
  }

  TEST_CASE("flow file round trip") {
    const FlowField f = uniform_flow(8, 8, -4, 4);
    const auto path = test_tmp_dir("codec") / "f.f32";
    write_flow(path, f);
    CHECK(read_bytes(path).size() == 8 * 8 * 2 * 4);
    CHECK(read_flow(path, 8, 8) == f);
    CHECK(read_flow_square(path) == f);
  }
}
