#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "egmae/errors.hpp"

namespace egmae {

/// H×W×C raster, interleaved (row-major, channels innermost), values in [0,1]
/// for decoded images.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, float fill = 0.0f)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  float& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }

  bool operator==(const Image&) const = default;
};

namespace pnm {

namespace detail {

inline void skip_space_and_comments(const std::string& buf, std::size_t& pos) {
  while (pos < buf.size()) {
    const char ch = buf[pos];
    if (ch == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
    } else if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r' || ch == '\v' || ch == '\f') {
      ++pos;
    } else {
      return;
    }
  }
}

inline std::size_t read_uint(const std::string& buf, std::size_t& pos, const char* field) {
  skip_space_and_comments(buf, pos);
  const std::size_t start = pos;
  std::size_t v = 0;
  while (pos < buf.size() && buf[pos] >= '0' && buf[pos] <= '9') {
    v = v * 10 + static_cast<std::size_t>(buf[pos] - '0');
    if (v > (1u << 24)) throw DecodeError(std::string("PNM header: ") + field + " too large");
    ++pos;
  }
  if (pos == start) throw DecodeError(std::string("PNM header: missing ") + field);
  return v;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DecodeError("cannot open image " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) throw IoError("failed to write " + path.string());
}

}  // namespace detail

/// Decodes binary P5 (gray) or P6 (RGB) with maxval 255; samples scaled by 1/255.
inline Image decode(const std::string& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw DecodeError("bad magic: expected P5 or P6");
  }
  const std::size_t channels = bytes[1] == '5' ? 1 : 3;
  std::size_t pos = 2;
  const std::size_t width = detail::read_uint(bytes, pos, "width");
  const std::size_t height = detail::read_uint(bytes, pos, "height");
  const std::size_t maxval = detail::read_uint(bytes, pos, "maxval");
  if (width == 0 || height == 0) throw DecodeError("PNM header: zero image dimension");
  if (maxval != 255) {
    throw DecodeError("unsupported format: maxval " + std::to_string(maxval) + " (only 255 is supported)");
  }
  if (pos >= bytes.size()) throw DecodeError("truncated raster: no data after header");
  ++pos;  // single whitespace byte terminating the header
  const std::size_t need = width * height * channels;
  if (bytes.size() - pos < need) {
    throw DecodeError("truncated raster: expected " + std::to_string(need) + " bytes, found " +
                      std::to_string(bytes.size() - pos));
  }
  Image img(height, width, channels);
  for (std::size_t i = 0; i < need; ++i) {
    img.pixels[i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + i])) / 255.0f;
  }
  return img;
}

inline Image read(const std::filesystem::path& path) { return decode(detail::read_file(path)); }

/// Encodes to binary P5/P6 (maxval 255), rounding v·255 after clamping to [0,1].
inline std::string encode(const Image& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw DecodeError("PNM encode supports 1 or 3 channels, got " + std::to_string(img.channels));
  }
  std::ostringstream os;
  os << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
  std::string out = os.str();
  out.reserve(out.size() + img.pixels.size());
  for (float v : img.pixels) {
    const float c = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0f))));
  }
  return out;
}

inline void write(const std::filesystem::path& path, const Image& img) { detail::write_file(path, encode(img)); }

/// Plain-text P2 graymap from 8-bit levels in row-major order.
inline std::string encode_ascii_gray(std::size_t width, std::size_t height, const std::vector<int>& levels) {
  std::ostringstream os;
  os << "P2\n" << width << ' ' << height << "\n255\n";
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) os << (x ? " " : "") << levels[y * width + x];
    os << '\n';
  }
  return os.str();
}

}  // namespace pnm

}  // namespace egmae
