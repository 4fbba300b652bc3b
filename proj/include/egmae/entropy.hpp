#pragma once

// Entropy-guided continuous corruption.
//
// An image is tiled into non-overlapping patches; each patch gets the Shannon
// entropy (nats) of its quantized intensity histogram, and every pixel of
// patch k is perturbed by an independent draw from N(0, σ²_k) where σ²_k is
// the patch entropy, optionally normalized by ln(bins) and scaled. A zero
// entropy patch passes through untouched; as σ² grows the patch approaches
// the fully masked limit.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "egmae/errors.hpp"
#include "egmae/image.hpp"
#include "egmae/rng.hpp"

namespace egmae {

struct PatchSize {
  std::size_t height = 8;
  std::size_t width = 8;

  bool operator==(const PatchSize&) const = default;
};

/// Patches stored contiguously in row-major grid order, each patch laid out
/// P_H×P_W×C.
struct PatchGrid {
  std::size_t rows = 0, cols = 0;
  PatchSize patch;
  std::size_t height = 0, width = 0, channels = 0;
  std::vector<float> data;

  std::size_t count() const { return rows * cols; }
  std::size_t patch_len() const { return patch.height * patch.width * channels; }
  std::span<const float> patch_at(std::size_t k) const {
    return std::span<const float>(data).subspan(k * patch_len(), patch_len());
  }
  std::span<float> patch_at(std::size_t k) { return std::span<float>(data).subspan(k * patch_len(), patch_len()); }

  bool operator==(const PatchGrid&) const = default;
};

struct EntropyMap {
  std::vector<double> values;  // nats, row-major over the patch grid
  std::size_t bins = 256;
  std::size_t rows = 0, cols = 0;
};

struct NoiseConfig {
  double sigma_scale = 1.0;
  bool normalize_entropy = false;
  std::size_t bins = 256;
  std::uint64_t seed = 0;
  PatchSize patch{8, 8};

  /// σ² applied to a patch of entropy h (nats), computed with `bins` bins.
  double variance(double h, std::size_t map_bins) const {
    const double base = normalize_entropy ? h / std::log(static_cast<double>(map_bins)) : h;
    return sigma_scale * base;
  }
};

inline PatchGrid patchify(const Image& image, PatchSize ps) {
  if (ps.height == 0 || ps.width == 0) throw TilingError("patch size must be positive");
  if (image.height % ps.height != 0 || image.width % ps.width != 0) {
    throw TilingError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                      " does not tile into " + std::to_string(ps.height) + "x" + std::to_string(ps.width) +
                      " patches: patch height must divide image height and patch width must divide image width");
  }
  PatchGrid g;
  g.rows = image.height / ps.height;
  g.cols = image.width / ps.width;
  g.patch = ps;
  g.height = image.height;
  g.width = image.width;
  g.channels = image.channels;
  g.data.resize(image.pixels.size());
  const std::size_t row_len = ps.width * image.channels;
  for (std::size_t r = 0; r < g.rows; ++r)
    for (std::size_t c = 0; c < g.cols; ++c) {
      float* dst = g.patch_at(r * g.cols + c).data();
      for (std::size_t y = 0; y < ps.height; ++y) {
        const float* src = image.pixels.data() + ((r * ps.height + y) * image.width + c * ps.width) * image.channels;
        std::copy(src, src + row_len, dst + y * row_len);
      }
    }
  return g;
}

inline Image unpatchify(const PatchGrid& g) {
  Image img(g.height, g.width, g.channels);
  const std::size_t row_len = g.patch.width * g.channels;
  for (std::size_t r = 0; r < g.rows; ++r)
    for (std::size_t c = 0; c < g.cols; ++c) {
      const float* src = g.patch_at(r * g.cols + c).data();
      for (std::size_t y = 0; y < g.patch.height; ++y) {
        float* dst = img.pixels.data() + ((r * g.patch.height + y) * g.width + c * g.patch.width) * g.channels;
        std::copy(src + y * row_len, src + (y + 1) * row_len, dst);
      }
    }
  return img;
}

/// Bucket of a [0,1] intensity: min(floor(v·bins), bins−1).
inline std::size_t quantize(float v, std::size_t bins) {
  const auto b = static_cast<std::size_t>(std::floor(static_cast<double>(v) * static_cast<double>(bins)));
  return b < bins ? b : bins - 1;
}

/// Shannon entropy in nats of the pooled (all channels) histogram of a patch.
inline double patch_entropy(std::span<const float> patch, std::size_t bins) {
  if (bins == 0) throw ParameterError("patch_entropy: bins must be positive");
  if (patch.empty()) return 0.0;
  std::vector<std::size_t> hist(bins, 0);
  for (std::size_t i = 0; i < patch.size(); ++i) {
    const float v = patch[i];
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw RangeError("patch_entropy: value " + std::to_string(v) + " at index " + std::to_string(i) +
                       " outside [0, 1]");
    }
    ++hist[quantize(v, bins)];
  }
  const double n = static_cast<double>(patch.size());
  double h = 0.0;
  for (std::size_t count : hist) {
    if (count == 0) continue;
    const double p = static_cast<double>(count) / n;
    h -= p * std::log(p);
  }
  return h;
}

inline EntropyMap entropy_map(const PatchGrid& grid, std::size_t bins) {
  EntropyMap m;
  m.bins = bins;
  m.rows = grid.rows;
  m.cols = grid.cols;
  m.values.reserve(grid.count());
  for (std::size_t k = 0; k < grid.count(); ++k) m.values.push_back(patch_entropy(grid.patch_at(k), bins));
  return m;
}

inline EntropyMap entropy_map(const Image& image, PatchSize ps, std::size_t bins) {
  return entropy_map(patchify(image, ps), bins);
}

/// Adds N(0, variance) to every value of one patch from its own substream,
/// keyed by (seed, image id, patch index).
inline void corrupt_patch(std::span<float> patch, double variance, std::uint64_t seed, std::uint64_t image_id,
                          std::uint64_t patch_index) {
  if (!(variance > 0.0)) return;
  Rng rng = make_rng(seed, "corrupt", {image_id, patch_index});
  std::normal_distribution<double> noise(0.0, std::sqrt(variance));
  for (float& v : patch) v = static_cast<float>(static_cast<double>(v) + noise(rng));
}

/// Corrupted copy of `grid`; the input is left unchanged. Noise is added in
/// raw pixel space and never clamped.
inline PatchGrid corrupt(const PatchGrid& grid, const EntropyMap& entropy, const NoiseConfig& cfg,
                         std::uint64_t image_id = 0) {
  if (entropy.rows != grid.rows || entropy.cols != grid.cols || entropy.values.size() != grid.count()) {
    throw GridError("corrupt: entropy map " + std::to_string(entropy.rows) + "x" + std::to_string(entropy.cols) +
                    " does not match patch grid " + std::to_string(grid.rows) + "x" + std::to_string(grid.cols));
  }
  if (cfg.sigma_scale < 0.0) throw ParameterError("corrupt: sigma_scale must be non-negative");
  PatchGrid out = grid;
  for (std::size_t k = 0; k < grid.count(); ++k) {
    corrupt_patch(out.patch_at(k), cfg.variance(entropy.values[k], entropy.bins), cfg.seed, image_id, k);
  }
  return out;
}

/// Gray level per patch: round(255·H/ln(bins)).
inline std::vector<int> entropy_levels(const EntropyMap& m) {
  std::vector<int> levels;
  levels.reserve(m.values.size());
  const double top = std::log(static_cast<double>(m.bins));
  for (double h : m.values) {
    const double v = top > 0.0 ? 255.0 * h / top : 0.0;
    levels.push_back(static_cast<int>(std::lround(std::min(255.0, std::max(0.0, v)))));
  }
  return levels;
}

inline std::string entropy_heatmap_pgm(const EntropyMap& m) {
  return pnm::encode_ascii_gray(m.cols, m.rows, entropy_levels(m));
}

}  // namespace egmae
