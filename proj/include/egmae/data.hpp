#pragma once

// Manifest ingestion, image loading, augmentation and deterministic batching.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "egmae/errors.hpp"
#include "egmae/image.hpp"
#include "egmae/parallel.hpp"
#include "egmae/rng.hpp"
#include "egmae/tensor.hpp"

namespace egmae {

enum class Split { Train, Val, Test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

inline std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  return std::nullopt;
}

struct ManifestRecord {
  std::string path;  // as written in the manifest
  std::size_t label = 0;
  Split split = Split::Train;
};

struct Manifest {
  std::vector<ManifestRecord> records;
  std::vector<std::string> class_names;
  std::filesystem::path root;  // record paths resolve against this directory

  std::vector<ManifestRecord> split(Split s) const {
    std::vector<ManifestRecord> out;
    for (const auto& r : records)
      if (r.split == s) out.push_back(r);
    return out;
  }
  std::size_t count(Split s) const {
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [s](const ManifestRecord& r) { return r.split == s; }));
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string> read_lines(std::istream& in) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

inline bool parse_index(std::string_view s, std::size_t& out) {
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

}  // namespace detail

/// Parses "path,label,split" CSV text. Labels are either all class indices or
/// class-name strings; string labels map to indices in sorted order unless
/// `classes` supplies the ordering.
inline Manifest parse_manifest(std::istream& in, const std::optional<std::vector<std::string>>& classes = std::nullopt) {
  auto lines = detail::read_lines(in);
  if (lines.empty() || detail::trim(lines[0]) != "path,label,split") {
    if (!lines.empty() && lines[0].starts_with("\xEF\xBB\xBF") && detail::trim(lines[0].substr(3)) == "path,label,split") {
      lines[0] = "path,label,split";
    } else {
      throw ParseError("manifest line 1: missing header 'path,label,split'");
    }
  }
  struct Raw {
    std::string path, label;
    Split split;
    std::size_t line;
  };
  std::vector<Raw> raw;
  std::unordered_set<std::string> seen;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t lineno = i + 1;
    std::string_view line = detail::trim(lines[i]);
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    for (std::size_t pos; (pos = line.find(',', start)) != std::string_view::npos; start = pos + 1)
      fields.push_back(detail::trim(line.substr(start, pos - start)));
    fields.push_back(detail::trim(line.substr(start)));
    if (fields.size() != 3) {
      throw ParseError("manifest line " + std::to_string(lineno) + ": expected 3 fields, found " +
                       std::to_string(fields.size()));
    }
    if (fields[0].empty()) throw ParseError("manifest line " + std::to_string(lineno) + ": empty path");
    if (fields[1].empty()) throw ParseError("manifest line " + std::to_string(lineno) + ": empty label");
    auto split = parse_split(fields[2]);
    if (!split) {
      throw ParseError("manifest line " + std::to_string(lineno) + ": unknown split '" + std::string(fields[2]) +
                       "' (expected train, val or test)");
    }
    if (!seen.insert(std::string(fields[0])).second) {
      throw ParseError("manifest line " + std::to_string(lineno) + ": duplicate path '" + std::string(fields[0]) + "'");
    }
    raw.push_back({std::string(fields[0]), std::string(fields[1]), *split, lineno});
  }

  Manifest m;
  std::map<std::string, std::size_t> name_to_index;
  if (classes) {
    m.class_names = *classes;
    for (std::size_t i = 0; i < classes->size(); ++i) name_to_index[(*classes)[i]] = i;
  }
  const bool numeric = !classes && std::all_of(raw.begin(), raw.end(), [](const Raw& r) {
    std::size_t v;
    return detail::parse_index(r.label, v);
  });
  if (numeric) {
    std::size_t max_label = 0;
    for (const auto& r : raw) {
      std::size_t v = 0;
      detail::parse_index(r.label, v);
      max_label = std::max(max_label, v);
    }
    for (std::size_t i = 0; !raw.empty() && i <= max_label; ++i) m.class_names.push_back(std::to_string(i));
  } else if (!classes) {
    std::set<std::string> distinct;
    for (const auto& r : raw) distinct.insert(r.label);
    for (const auto& name : distinct) {
      name_to_index[name] = m.class_names.size();
      m.class_names.push_back(name);
    }
  }
  for (const auto& r : raw) {
    ManifestRecord rec{r.path, 0, r.split};
    if (numeric) {
      detail::parse_index(r.label, rec.label);
    } else {
      auto it = name_to_index.find(r.label);
      if (it == name_to_index.end()) {
        // A numeric label with an explicit class list indexes into it.
        std::size_t v = 0;
        if (classes && detail::parse_index(r.label, v) && v < classes->size()) {
          rec.label = v;
        } else {
          throw ParseError("manifest line " + std::to_string(r.line) + ": label '" + r.label +
                           "' not in class list");
        }
      } else {
        rec.label = it->second;
      }
    }
    m.records.push_back(std::move(rec));
  }
  return m;
}

inline std::vector<std::string> load_class_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open classes file " + path.string());
  std::vector<std::string> out;
  for (const auto& line : detail::read_lines(in)) {
    auto t = detail::trim(line);
    if (!t.empty()) out.emplace_back(t);
  }
  if (out.empty()) throw ParseError("classes file " + path.string() + " is empty");
  return out;
}

/// Loads a manifest; a "classes.txt" next to it (or `classes_path`) fixes the
/// class ordering.
inline Manifest load_manifest(const std::filesystem::path& path,
                              const std::optional<std::filesystem::path>& classes_path = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  std::optional<std::vector<std::string>> classes;
  if (classes_path) {
    classes = load_class_list(*classes_path);
  } else if (auto sidecar = path.parent_path() / "classes.txt"; std::filesystem::exists(sidecar)) {
    classes = load_class_list(sidecar);
  }
  Manifest m = parse_manifest(in, classes);
  m.root = path.parent_path();
  return m;
}

struct ImageSample {
  Image pixels;
  std::size_t label = 0;
  std::uint64_t id = 0;  // FNV-1a of the manifest path
  std::string path;
};

inline std::uint64_t sample_id(std::string_view manifest_path) { return fnv1a64(manifest_path); }

inline Image decode_image(const std::filesystem::path& path) { return pnm::read(path); }

/// Decodes every record of a split; workers fill fixed slots so the result
/// order always equals manifest order.
inline std::vector<ImageSample> load_split(const Manifest& m, Split s) {
  const auto recs = m.split(s);
  std::vector<ImageSample> out(recs.size());
  parallel_for(recs.size(), [&](std::size_t i) {
    out[i].pixels = decode_image(m.root / recs[i].path);
    out[i].label = recs[i].label;
    out[i].id = sample_id(recs[i].path);
    out[i].path = recs[i].path;
  });
  return out;
}

// ---- geometric transforms ------------------------------------------------

/// Crop rectangle (top, left, height, width) in source pixels.
struct CropBox {
  std::size_t top = 0, left = 0, height = 0, width = 0;
};

inline Image crop(const Image& img, CropBox box) {
  Image out(box.height, box.width, img.channels);
  for (std::size_t y = 0; y < box.height; ++y) {
    const float* src = img.pixels.data() + ((box.top + y) * img.width + box.left) * img.channels;
    std::copy(src, src + box.width * img.channels, out.pixels.data() + y * box.width * img.channels);
  }
  return out;
}

/// Bilinear resize with half-pixel centres and edge clamping. Output values
/// are convex combinations of inputs, so [0,1] inputs stay in [0,1].
inline Image resize_bilinear(const Image& img, std::size_t out_h, std::size_t out_w) {
  if (out_h == img.height && out_w == img.width) return img;
  Image out(out_h, out_w, img.channels);
  const double sy = static_cast<double>(img.height) / static_cast<double>(out_h);
  const double sx = static_cast<double>(img.width) / static_cast<double>(out_w);
  auto coord = [](double dst, double scale, std::size_t size) {
    double src = (dst + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(size - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t i1 = std::min(i0 + 1, size - 1);
    return std::tuple{i0, i1, src - static_cast<double>(i0)};
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    const auto [y0, y1, fy] = coord(static_cast<double>(y), sy, img.height);
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto [x0, x1, fx] = coord(static_cast<double>(x), sx, img.width);
      for (std::size_t c = 0; c < img.channels; ++c) {
        const double top = (1.0 - fx) * img.at(y0, x0, c) + fx * img.at(y0, x1, c);
        const double bot = (1.0 - fx) * img.at(y1, x0, c) + fx * img.at(y1, x1, c);
        out.at(y, x, c) = static_cast<float>((1.0 - fy) * top + fy * bot);
      }
    }
  }
  return out;
}

inline Image hflip(const Image& img) {
  Image out(img.height, img.width, img.channels);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c) out.at(y, img.width - 1 - x, c) = img.at(y, x, c);
  return out;
}

/// Resizes so the shorter side equals `side`, preserving aspect ratio.
inline Image resize_shorter_side(const Image& img, std::size_t side) {
  if (img.height <= img.width) {
    const auto w = static_cast<std::size_t>(std::lround(static_cast<double>(img.width) * side / img.height));
    return resize_bilinear(img, side, std::max<std::size_t>(w, side));
  }
  const auto h = static_cast<std::size_t>(std::lround(static_cast<double>(img.height) * side / img.width));
  return resize_bilinear(img, std::max<std::size_t>(h, side), side);
}

inline Image center_crop(const Image& img, std::size_t size) {
  if (img.height < size || img.width < size) throw DataError("center_crop: image smaller than crop");
  return crop(img, {(img.height - size) / 2, (img.width - size) / 2, size, size});
}

struct ResizedCropParams {
  double scale = 1.0;   // crop area fraction
  double aspect = 1.0;  // width / height
  bool flip = false;
};

inline constexpr double kCropScaleMin = 0.2;
inline constexpr double kCropScaleMax = 1.0;
inline constexpr double kAspectMin = 3.0 / 4.0;
inline constexpr double kAspectMax = 4.0 / 3.0;

/// Crop box for a requested area fraction and aspect ratio. When the box
/// would overflow the image the aspect is clamped to the range that fits
/// that area, so the area fraction is always honoured. `rng` places the box;
/// pass nullptr for a centred box.
inline CropBox resized_crop_box(const Image& img, double scale, double aspect, Rng* rng) {
  const double H = static_cast<double>(img.height), W = static_cast<double>(img.width);
  const double area = std::clamp(scale, 0.0, 1.0) * H * W;
  if (area > 0.0) aspect = std::clamp(aspect, area / (H * H), (W * W) / area);
  auto w = static_cast<std::size_t>(std::lround(std::sqrt(area * aspect)));
  auto h = static_cast<std::size_t>(std::lround(std::sqrt(area / aspect)));
  w = std::clamp<std::size_t>(w, 1, img.width);
  h = std::clamp<std::size_t>(h, 1, img.height);
  if (!rng) return {(img.height - h) / 2, (img.width - w) / 2, h, w};
  std::uniform_int_distribution<std::size_t> top(0, img.height - h), left(0, img.width - w);
  const std::size_t t = top(*rng);
  return {t, left(*rng), h, w};
}

/// Applies a resized crop with fixed parameters (crop box centred).
inline Image apply_resized_crop(const Image& img, const ResizedCropParams& p, std::size_t out_size) {
  Image out = resize_bilinear(crop(img, resized_crop_box(img, p.scale, p.aspect, nullptr)), out_size, out_size);
  return p.flip ? hflip(out) : out;
}

/// Random resized crop (area fraction U[0.2,1], aspect U[3/4,4/3]) to
/// out_size², then a horizontal flip with probability 0.5.
inline Image augment_pretrain(const Image& img, Rng& rng, std::size_t out_size) {
  if (img.height < 2 || img.width < 2) throw DataError("augment_pretrain: source image must be at least 2x2");
  std::uniform_real_distribution<double> scale(kCropScaleMin, kCropScaleMax), aspect(kAspectMin, kAspectMax);
  const double s = scale(rng);
  const double a = aspect(rng);
  const CropBox box = resized_crop_box(img, s, a, &rng);
  Image out = resize_bilinear(crop(img, box), out_size, out_size);
  std::bernoulli_distribution flip(0.5);
  return flip(rng) ? hflip(out) : out;
}

/// Shorter-side resize used before the training crop: ceil(K·236/224).
inline std::size_t finetune_resize_side(std::size_t crop) { return (crop * 236 + 223) / 224; }

/// Shorter-side resize to ceil(K·236/224), uniform random K×K crop, flip p=0.5.
inline Image augment_finetune_train(const Image& img, Rng& rng, std::size_t crop_size) {
  const Image resized = resize_shorter_side(img, finetune_resize_side(crop_size));
  std::uniform_int_distribution<std::size_t> top(0, resized.height - crop_size), left(0, resized.width - crop_size);
  const std::size_t t = top(rng);
  const std::size_t l = left(rng);
  Image out = crop(resized, {t, l, crop_size, crop_size});
  std::bernoulli_distribution flip(0.5);
  return flip(rng) ? hflip(out) : out;
}

/// Deterministic evaluation view: shorter-side resize to K, centre crop K×K.
inline Image eval_transform(const Image& img, std::size_t size) {
  return center_crop(resize_shorter_side(img, size), size);
}

// ---- normalization ---------------------------------------------------------

struct Normalization {
  std::vector<double> mean;
  std::vector<double> std;

  static Normalization defaults(std::size_t channels) {
    if (channels == 3) return {{0.485, 0.456, 0.406}, {0.229, 0.224, 0.225}};
    if (channels == 1) return {{0.449}, {0.226}};
    return {std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0)};
  }
};

/// Writes (v − mean_c)/std_c in CHW order into dst (length C·H·W).
inline void normalize_into(const Image& img, const Normalization& norm, std::span<float> dst) {
  if (norm.mean.size() != img.channels || norm.std.size() != img.channels) {
    throw ParameterError("normalize: expected " + std::to_string(img.channels) + " mean/std values");
  }
  for (double s : norm.std)
    if (!(s > 0.0)) throw ParameterError("normalize: std must be positive");
  const std::size_t HW = img.height * img.width;
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t i = 0; i < HW; ++i) {
      dst[c * HW + i] =
          static_cast<float>((static_cast<double>(img.pixels[i * img.channels + c]) - norm.mean[c]) / norm.std[c]);
    }
}

/// Normalized 1×C×H×W tensor.
inline Tensor<float> normalize(const Image& img, const Normalization& norm) {
  std::vector<float> v(img.pixels.size());
  normalize_into(img, norm, v);
  return Tensor<float>({1, img.channels, img.height, img.width}, std::move(v));
}

/// Inverse of normalize for a 1×C×H×W tensor.
inline Image denormalize(const Tensor<float>& t, const Normalization& norm) {
  const std::size_t C = t.dim(1), H = t.dim(2), W = t.dim(3);
  Image img(H, W, C);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H * W; ++i)
      img.pixels[i * C + c] = static_cast<float>(static_cast<double>(t[c * H * W + i]) * norm.std[c] + norm.mean[c]);
  return img;
}

/// Stacks equally sized images into a normalized N×C×H×W tensor.
inline Tensor<float> stack_normalized(const std::vector<Image>& imgs, const Normalization& norm) {
  if (imgs.empty()) throw DataError("stack_normalized: empty batch");
  const auto& f = imgs.front();
  const std::size_t per = f.pixels.size();
  std::vector<float> v(per * imgs.size());
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    if (imgs[i].height != f.height || imgs[i].width != f.width || imgs[i].channels != f.channels) {
      throw DataError("stack_normalized: images in a batch must share a shape");
    }
    normalize_into(imgs[i], norm, std::span<float>(v).subspan(i * per, per));
  }
  return Tensor<float>({imgs.size(), f.channels, f.height, f.width}, std::move(v));
}

// ---- batching --------------------------------------------------------------

/// Index batches over [0, n) for one epoch: a permutation seeded by
/// (seed, epoch), chunked in order, last partial batch kept.
inline std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                     std::uint64_t epoch) {
  if (batch_size == 0) throw ParameterError("batches: batch_size must be at least 1");
  if (n == 0) throw DataError("batches: split is empty");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed, "data.order", {epoch});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  }
  return out;
}

}  // namespace egmae
