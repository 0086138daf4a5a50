#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace flowcot {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// H x W 8-bit RGB raster, row-major, 3 bytes per pixel.
struct Frame {
  int h = 0, w = 0;
  std::vector<std::uint8_t> rgb;

  Frame() = default;
  Frame(int height, int width, Rgb fill = {});

  Rgb at(int y, int x) const {
    const std::size_t i = (static_cast<std::size_t>(y) * w + x) * 3;
    return {rgb[i], rgb[i + 1], rgb[i + 2]};
  }
  void set(int y, int x, Rgb c) {
    const std::size_t i = (static_cast<std::size_t>(y) * w + x) * 3;
    rgb[i] = c.r;
    rgb[i + 1] = c.g;
    rgb[i + 2] = c.b;
  }
  friend bool operator==(const Frame&, const Frame&) = default;
};

struct FlowVec {
  float u = 0, v = 0;
  friend bool operator==(const FlowVec&, const FlowVec&) = default;
};

/// H x W grid of per-pixel displacements in pixels/step, (u, v) interleaved.
struct FlowField {
  int h = 0, w = 0;
  std::vector<float> uv;

  FlowField() = default;
  FlowField(int height, int width);

  FlowVec at(int y, int x) const {
    const std::size_t i = (static_cast<std::size_t>(y) * w + x) * 2;
    return {uv[i], uv[i + 1]};
  }
  void set(int y, int x, FlowVec f) {
    const std::size_t i = (static_cast<std::size_t>(y) * w + x) * 2;
    uv[i] = f.u;
    uv[i + 1] = f.v;
  }
  friend bool operator==(const FlowField&, const FlowField&) = default;
};

// Binary PPM (P6, maxval 255).
void write_ppm(const std::filesystem::path& path, const Frame& f);
Frame read_ppm(const std::filesystem::path& path);

// Headerless little-endian float32, row-major, u then v per pixel.
void write_flow(const std::filesystem::path& path, const FlowField& f);
FlowField read_flow(const std::filesystem::path& path, int h, int w);
/// Reads a square flow file, inferring the side from the file size.
FlowField read_flow_square(const std::filesystem::path& path);

}  // namespace flowcot
