#pragma once

// Seeded procedural image sets used for desk-scale experiments and tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "egmae/data.hpp"
#include "egmae/errors.hpp"
#include "egmae/image.hpp"
#include "egmae/rng.hpp"

namespace egmae::synth {

enum class Texture { Stripes, Checkerboard, ValueNoise, Blobs };

inline const char* to_string(Texture t) {
  switch (t) {
    case Texture::Stripes: return "stripes";
    case Texture::Checkerboard: return "checkerboard";
    case Texture::ValueNoise: return "value-noise";
    case Texture::Blobs: return "blobs";
  }
  return "?";
}

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

inline float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

/// Sinusoidal-edged stripes at a random angle, period and phase.
inline Image stripes(std::size_t size, Rng& rng) {
  const double angle = uniform(rng, 0.0, std::numbers::pi);
  const double period = uniform(rng, 8.0, 16.0);
  const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double lo = uniform(rng, 0.0, 0.3), hi = uniform(rng, 0.7, 1.0);
  const double c = std::cos(angle), s = std::sin(angle);
  Image img(size, size, 1);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double t = (c * x + s * y) * 2.0 * std::numbers::pi / period + phase;
      img.at(y, x, 0) = clamp01(std::sin(t) >= 0.0 ? hi : lo);
    }
  return img;
}

/// Axis-aligned checkerboard with random cell size and offset.
inline Image checkerboard(std::size_t size, Rng& rng) {
  const auto cell = static_cast<std::size_t>(std::uniform_int_distribution<int>(4, 8)(rng));
  const auto oy = static_cast<std::size_t>(std::uniform_int_distribution<int>(0, static_cast<int>(cell) - 1)(rng));
  const auto ox = static_cast<std::size_t>(std::uniform_int_distribution<int>(0, static_cast<int>(cell) - 1)(rng));
  const double lo = uniform(rng, 0.0, 0.3), hi = uniform(rng, 0.7, 1.0);
  Image img(size, size, 1);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) img.at(y, x, 0) = clamp01((((y + oy) / cell + (x + ox) / cell) % 2) ? hi : lo);
  return img;
}

/// Bilinearly interpolated random lattice values.
inline Image value_noise(std::size_t size, Rng& rng) {
  const auto cells = static_cast<std::size_t>(std::uniform_int_distribution<int>(2, 8)(rng));
  std::vector<double> lattice((cells + 1) * (cells + 1));
  for (auto& v : lattice) v = uniform(rng, 0.0, 1.0);
  Image img(size, size, 1);
  const double scale = static_cast<double>(cells) / static_cast<double>(size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double fy = y * scale, fx = x * scale;
      const auto iy = static_cast<std::size_t>(fy), ix = static_cast<std::size_t>(fx);
      const double ty = fy - iy, tx = fx - ix;
      auto L = [&](std::size_t r, std::size_t c) { return lattice[r * (cells + 1) + c]; };
      const double top = L(iy, ix) * (1 - tx) + L(iy, ix + 1) * tx;
      const double bot = L(iy + 1, ix) * (1 - tx) + L(iy + 1, ix + 1) * tx;
      img.at(y, x, 0) = clamp01(top * (1 - ty) + bot * ty);
    }
  return img;
}

/// A few Gaussian bumps on a dark background.
inline Image blobs(std::size_t size, Rng& rng) {
  const int count = std::uniform_int_distribution<int>(2, 5)(rng);
  std::vector<double> cy(count), cx(count), r(count), a(count);
  for (int i = 0; i < count; ++i) {
    cy[i] = uniform(rng, 0.0, size);
    cx[i] = uniform(rng, 0.0, size);
    r[i] = uniform(rng, size / 12.0, size / 4.0);
    a[i] = uniform(rng, 0.4, 1.0);
  }
  Image img(size, size, 1);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      double v = 0.05;
      for (int i = 0; i < count; ++i) {
        const double d2 = (y - cy[i]) * (y - cy[i]) + (x - cx[i]) * (x - cx[i]);
        v += a[i] * std::exp(-d2 / (2 * r[i] * r[i]));
      }
      img.at(y, x, 0) = clamp01(v);
    }
  return img;
}

inline Image texture(Texture kind, std::size_t size, Rng& rng) {
  switch (kind) {
    case Texture::Stripes: return stripes(size, rng);
    case Texture::Checkerboard: return checkerboard(size, rng);
    case Texture::ValueNoise: return value_noise(size, rng);
    case Texture::Blobs: return blobs(size, rng);
  }
  throw ParameterError("unknown texture kind");
}

/// Adds N(0, std²) noise and clamps to [0,1].
inline void add_noise(Image& img, double std, Rng& rng) {
  std::normal_distribution<double> nd(0.0, std);
  for (auto& v : img.pixels) v = clamp01(v + nd(rng));
}

struct Entry {
  Image image;
  std::string label;
  Split split = Split::Train;
};

/// Unlabeled-style corpus cycling through all four texture families.
inline std::vector<Entry> texture_corpus(std::size_t count, std::size_t size, std::uint64_t seed) {
  std::vector<Entry> out;
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = make_rng(seed, "synth.texture", {i});
    const auto kind = static_cast<Texture>(i % 4);
    out.push_back({texture(kind, size, rng), to_string(kind), Split::Train});
  }
  return out;
}

/// Two-class stripes vs checkerboard set with per-image noise.
inline std::vector<Entry> stripes_vs_checkerboard(std::size_t n_train, std::size_t n_val, std::size_t n_test,
                                                  std::size_t size, std::uint64_t seed, double noise_std = 0.08) {
  std::vector<Entry> out;
  const std::size_t total = n_train + n_val + n_test;
  for (std::size_t i = 0; i < total; ++i) {
    Rng rng = make_rng(seed, "synth.twoclass", {i});
    const auto kind = (i % 2 == 0) ? Texture::Stripes : Texture::Checkerboard;
    Image img = texture(kind, size, rng);
    add_noise(img, noise_std, rng);
    const Split split = i < n_train ? Split::Train : (i < n_train + n_val ? Split::Val : Split::Test);
    out.push_back({std::move(img), to_string(kind), split});
  }
  return out;
}

/// Writes images/NNNNN.pgm plus manifest.csv under `dir`; returns the manifest path.
inline std::filesystem::path write_dataset(const std::vector<Entry>& entries, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (ec) throw IoError("cannot create " + (dir / "images").string() + ": " + ec.message());
  std::string manifest = "path,label,split\n";
  for (std::size_t i = 0; i < entries.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "images/%05zu.pgm", i);
    pnm::write(dir / name, entries[i].image);
    manifest += std::string(name) + "," + entries[i].label + "," + to_string(entries[i].split) + "\n";
  }
  const auto path = dir / "manifest.csv";
  pnm::detail::write_file(path, manifest);
  return path;
}

}  // namespace egmae::synth
