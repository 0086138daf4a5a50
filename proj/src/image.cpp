#include "flowcot/image.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "flowcot/error.hpp"

namespace flowcot {

static_assert(std::endian::native == std::endian::little,
              "flow and checkpoint files assume a little-endian host");

Frame::Frame(int height, int width, Rgb fill) : h(height), w(width) {
  rgb.resize(static_cast<std::size_t>(h) * w * 3);
  for (std::size_t i = 0; i < rgb.size(); i += 3) {
    rgb[i] = fill.r;
    rgb[i + 1] = fill.g;
    rgb[i + 2] = fill.b;
  }
}

FlowField::FlowField(int height, int width)
    : h(height), w(width), uv(static_cast<std::size_t>(height) * width * 2, 0.0f) {}

void write_ppm(const std::filesystem::path& path, const Frame& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P6\n" << f.w << ' ' << f.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(f.rgb.data()),
            static_cast<std::streamsize>(f.rgb.size()));
}

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

}  // namespace

Frame read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  if (next_token(in) != "P6") throw DataError(path.string() + ": not a P6 PPM");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token(in));
    h = std::stoi(next_token(in));
    maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    throw DataError(path.string() + ": malformed PPM header");
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw DataError(path.string() + ": unsupported PPM");
  Frame f(h, w);
  in.read(reinterpret_cast<char*>(f.rgb.data()), static_cast<std::streamsize>(f.rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(f.rgb.size()))
    throw DataError(path.string() + ": truncated PPM");
  return f;
}

void write_flow(const std::filesystem::path& path, const FlowField& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(f.uv.data()),
            static_cast<std::streamsize>(f.uv.size() * sizeof(float)));
}

FlowField read_flow(const std::filesystem::path& path, int h, int w) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  FlowField f(h, w);
  const auto bytes = static_cast<std::streamsize>(f.uv.size() * sizeof(float));
  in.read(reinterpret_cast<char*>(f.uv.data()), bytes);
  if (in.gcount() != bytes || in.peek() != EOF)
    throw DataError(path.string() + ": flow file size does not match " + std::to_string(h) +
                    "x" + std::to_string(w));
  return f;
}

FlowField read_flow_square(const std::filesystem::path& path) {
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) throw DataError("cannot stat " + path.string());
  const auto pixels = size / (2 * sizeof(float));
  const auto side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(pixels))));
  if (static_cast<std::uintmax_t>(side) * side * 2 * sizeof(float) != size)
    throw DataError(path.string() + ": not a square flow field; pass explicit dimensions");
  return read_flow(path, side, side);
}

}  // namespace flowcot
