#pragma once

// ConvNeXt-style encoder, lightweight reconstruction decoder and linear
// classification head, all expressed over a named parameter store.
//
//   encoder: stem conv (k = s = stem_patch) -> LN -> stage 0 blocks
//            -> [LN -> 2x2/2 downsample conv -> stage i blocks] for i >= 1
//   block:   x + pw2(gelu(pw1(layer_norm(dwconv_KxK(x)))))
//   decoder: 1x1 proj -> blocks -> [nearest x2 -> refine blocks] per encoder
//            downsample -> LN -> 1x1 to stem_patch²·C -> pixel shuffle
//   head:    softmax(linear(global_avg_pool(encoder(x))))

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "egmae/errors.hpp"
#include "egmae/ops.hpp"
#include "egmae/rng.hpp"
#include "egmae/tensor.hpp"

namespace egmae {

struct EncoderConfig {
  std::size_t in_channels = 1;
  std::size_t stem_patch = 4;
  std::vector<std::size_t> stage_dims{24, 48, 96};
  std::vector<std::size_t> stage_depths{1, 1, 2};
  std::size_t dw_kernel = 7;
  std::size_t expansion = 4;
  double ln_eps = 1e-6;

  std::size_t num_stages() const { return stage_dims.size(); }
  std::size_t out_dim() const { return stage_dims.back(); }
  /// Total spatial reduction: stem_patch · 2^(stages−1).
  std::size_t reduction() const { return stem_patch << (num_stages() - 1); }

  void validate() const {
    if (in_channels == 0) throw ConfigError("encoder: in_channels must be positive");
    if (stem_patch == 0) throw ConfigError("encoder: stem_patch must be positive");
    if (stage_dims.empty() || stage_dims.size() != stage_depths.size()) {
      throw ConfigError("encoder: stage_dims and stage_depths must be non-empty and of equal length");
    }
    for (std::size_t d : stage_dims)
      if (d == 0) throw ConfigError("encoder: stage dims must be positive");
    if (dw_kernel % 2 == 0) throw ConfigError("encoder: dw_kernel must be odd, got " + std::to_string(dw_kernel));
    if (expansion == 0) throw ConfigError("encoder: expansion must be positive");
    if (!(ln_eps > 0.0)) throw ConfigError("encoder: ln_eps must be positive");
  }

  bool operator==(const EncoderConfig&) const = default;
};

struct DecoderConfig {
  std::size_t dim = 64;
  std::size_t depth = 2;
  std::size_t refine_blocks = 1;  // blocks after each ×2 upsampling step
  std::size_t expansion = 4;

  void validate() const {
    if (dim == 0 || expansion == 0) throw ConfigError("decoder: dim and expansion must be positive");
  }

  bool operator==(const DecoderConfig&) const = default;
};

/// Insertion-ordered named parameters.
template <typename T>
class ParamStore {
 public:
  void add(std::string name, Tensor<T> t) {
    if (index_.count(name)) throw ConfigError("duplicate parameter " + name);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(t));
  }

  const Tensor<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("missing parameter " + name);
    return entries_[it->second].second;
  }
  Tensor<T>& get(const std::string& name) {
    return const_cast<Tensor<T>&>(static_cast<const ParamStore&>(*this).get(name));
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  std::size_t size() const { return entries_.size(); }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : entries_) t.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

namespace init {

/// Normal(0, std) resampled outside ±2·std.
template <typename T>
Tensor<T> trunc_normal(Shape shape, Rng& rng, double std = 0.02) {
  std::normal_distribution<double> dist(0.0, std);
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) {
    double s;
    do {
      s = dist(rng);
    } while (std::abs(s) > 2.0 * std);
    x = static_cast<T>(s);
  }
  return Tensor<T>(std::move(shape), std::move(v), true);
}

template <typename T>
Tensor<T> constant(Shape shape, T value) {
  return Tensor<T>::full(std::move(shape), value, true);
}

}  // namespace init

template <typename T>
void add_conv_params(ParamStore<T>& ps, const std::string& prefix, std::size_t out, std::size_t in_per_group,
                     std::size_t k, Rng& rng) {
  ps.add(prefix + ".weight", init::trunc_normal<T>({out, in_per_group, k, k}, rng));
  ps.add(prefix + ".bias", init::constant<T>({out}, T(0)));
}

template <typename T>
void add_norm_params(ParamStore<T>& ps, const std::string& prefix, std::size_t dim) {
  ps.add(prefix + ".weight", init::constant<T>({dim}, T(1)));
  ps.add(prefix + ".bias", init::constant<T>({dim}, T(0)));
}

template <typename T>
void add_block_params(ParamStore<T>& ps, const std::string& prefix, std::size_t dim, std::size_t kernel,
                      std::size_t expansion, Rng& rng) {
  add_conv_params(ps, prefix + ".dw", dim, 1, kernel, rng);
  ps.add(prefix + ".ln.weight", init::constant<T>({dim}, T(1)));
  ps.add(prefix + ".ln.bias", init::constant<T>({dim}, T(0)));
  add_conv_params(ps, prefix + ".pw1", dim * expansion, dim, 1, rng);
  add_conv_params(ps, prefix + ".pw2", dim, dim * expansion, 1, rng);
}

template <typename T>
void add_encoder_params(ParamStore<T>& ps, const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  add_conv_params(ps, "encoder.stem", cfg.stage_dims[0], cfg.in_channels, cfg.stem_patch, rng);
  add_norm_params(ps, "encoder.stem_norm", cfg.stage_dims[0]);
  for (std::size_t s = 0; s < cfg.num_stages(); ++s) {
    const std::string stage = "encoder.stages." + std::to_string(s);
    if (s > 0) {
      add_norm_params(ps, stage + ".down_norm", cfg.stage_dims[s - 1]);
      add_conv_params(ps, stage + ".down", cfg.stage_dims[s], cfg.stage_dims[s - 1], 2, rng);
    }
    for (std::size_t b = 0; b < cfg.stage_depths[s]; ++b) {
      add_block_params(ps, stage + ".blocks." + std::to_string(b), cfg.stage_dims[s], cfg.dw_kernel, cfg.expansion,
                       rng);
    }
  }
}

template <typename T>
void add_decoder_params(ParamStore<T>& ps, const EncoderConfig& enc, const DecoderConfig& dec, Rng& rng) {
  dec.validate();
  add_conv_params(ps, "decoder.proj", dec.dim, enc.out_dim(), 1, rng);
  for (std::size_t b = 0; b < dec.depth; ++b) {
    add_block_params(ps, "decoder.blocks." + std::to_string(b), dec.dim, enc.dw_kernel, dec.expansion, rng);
  }
  for (std::size_t u = 1; u < enc.num_stages(); ++u) {
    for (std::size_t b = 0; b < dec.refine_blocks; ++b) {
      add_block_params(ps, "decoder.up." + std::to_string(u) + ".blocks." + std::to_string(b), dec.dim,
                       enc.dw_kernel, dec.expansion, rng);
    }
  }
  add_norm_params(ps, "decoder.norm", dec.dim);
  add_conv_params(ps, "decoder.pred", enc.stem_patch * enc.stem_patch * enc.in_channels, dec.dim, 1, rng);
}

template <typename T>
void add_head_params(ParamStore<T>& ps, std::size_t in_dim, std::size_t num_classes, Rng& rng) {
  if (num_classes == 0) throw ConfigError("head: num_classes must be positive");
  ps.add("head.weight", init::trunc_normal<T>({num_classes, in_dim}, rng));
  ps.add("head.bias", init::constant<T>({num_classes}, T(0)));
}

namespace detail {
template <typename T>
Tensor<T> conv(const Tensor<T>& x, const ParamStore<T>& ps, const std::string& prefix, Conv2dOptions opt = {}) {
  return conv2d(x, ps.get(prefix + ".weight"), std::optional<Tensor<T>>(ps.get(prefix + ".bias")), opt);
}
template <typename T>
Tensor<T> norm(const Tensor<T>& x, const ParamStore<T>& ps, const std::string& prefix, double eps) {
  return layer_norm(x, ps.get(prefix + ".weight"), ps.get(prefix + ".bias"), eps);
}
}  // namespace detail

/// F + pw2(GELU(pw1(LayerNorm(dwconv(F))))); spatial size preserved.
template <typename T>
Tensor<T> convnext_block_forward(const Tensor<T>& x, const ParamStore<T>& ps, const std::string& prefix,
                                 std::size_t kernel, double ln_eps) {
  const auto& dw = ps.get(prefix + ".dw.weight");
  if (x.ndim() != 4 || x.dim(1) != dw.dim(0)) {
    throw ConfigError("block " + prefix + ": input has " + (x.ndim() == 4 ? std::to_string(x.dim(1)) : "?") +
                      " channels, block expects " + std::to_string(dw.dim(0)));
  }
  const std::size_t C = x.dim(1);
  auto h = detail::conv(x, ps, prefix + ".dw", {1, (kernel - 1) / 2, C});
  h = layer_norm(h, ps.get(prefix + ".ln.weight"), ps.get(prefix + ".ln.bias"), ln_eps);
  h = gelu(detail::conv(h, ps, prefix + ".pw1"));
  h = detail::conv(h, ps, prefix + ".pw2");
  return add(x, h);
}

template <typename T>
Tensor<T> encoder_forward(const Tensor<T>& x, const EncoderConfig& cfg, const ParamStore<T>& ps) {
  if (x.ndim() != 4) throw ConfigError("encoder: input must be N×C×H×W, got " + shape_str(x.shape()));
  if (x.dim(1) != cfg.in_channels) {
    throw ConfigError("encoder: input has " + std::to_string(x.dim(1)) + " channels, config expects " +
                      std::to_string(cfg.in_channels));
  }
  const std::size_t m = cfg.reduction();
  if (x.dim(2) % m != 0 || x.dim(3) % m != 0) {
    throw ConfigError("encoder: input spatial size " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                      " must be a multiple of " + std::to_string(m) + " (stem_patch · 2^(stages−1))");
  }
  auto h = detail::norm(detail::conv(x, ps, "encoder.stem", {cfg.stem_patch, 0, 1}), ps, "encoder.stem_norm",
                        cfg.ln_eps);
  for (std::size_t s = 0; s < cfg.num_stages(); ++s) {
    const std::string stage = "encoder.stages." + std::to_string(s);
    if (s > 0) h = detail::conv(detail::norm(h, ps, stage + ".down_norm", cfg.ln_eps), ps, stage + ".down", {2, 0, 1});
    for (std::size_t b = 0; b < cfg.stage_depths[s]; ++b) {
      h = convnext_block_forward(h, ps, stage + ".blocks." + std::to_string(b), cfg.dw_kernel, cfg.ln_eps);
    }
  }
  return h;
}

/// Reconstructs the full N×C×H×W image from encoder features.
template <typename T>
Tensor<T> decoder_forward(const Tensor<T>& z, const EncoderConfig& enc, const DecoderConfig& dec,
                          const ParamStore<T>& ps) {
  if (z.ndim() != 4 || z.dim(1) != enc.out_dim()) {
    throw ConfigError("decoder: features must have " + std::to_string(enc.out_dim()) + " channels, got shape " +
                      shape_str(z.shape()));
  }
  auto h = detail::conv(z, ps, "decoder.proj");
  for (std::size_t b = 0; b < dec.depth; ++b) {
    h = convnext_block_forward(h, ps, "decoder.blocks." + std::to_string(b), enc.dw_kernel, enc.ln_eps);
  }
  for (std::size_t u = 1; u < enc.num_stages(); ++u) {
    h = upsample_nearest2x(h);
    for (std::size_t b = 0; b < dec.refine_blocks; ++b) {
      h = convnext_block_forward(h, ps, "decoder.up." + std::to_string(u) + ".blocks." + std::to_string(b),
                                 enc.dw_kernel, enc.ln_eps);
    }
  }
  h = detail::conv(detail::norm(h, ps, "decoder.norm", enc.ln_eps), ps, "decoder.pred");
  return pixel_shuffle(h, enc.stem_patch);
}

template <typename T>
Tensor<T> classifier_logits(const Tensor<T>& x, const EncoderConfig& enc, const ParamStore<T>& ps) {
  auto pooled = global_avg_pool(encoder_forward(x, enc, ps));
  return linear(pooled, ps.get("head.weight"), std::optional<Tensor<T>>(ps.get("head.bias")));
}

/// Class probabilities, N×K.
template <typename T>
Tensor<T> classify(const Tensor<T>& x, const EncoderConfig& enc, const ParamStore<T>& ps) {
  return softmax(classifier_logits(x, enc, ps));
}

enum class Provenance { MaePretrained, RandomInit, External };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::MaePretrained: return "mae-pretrained";
    case Provenance::RandomInit: return "random-init";
    case Provenance::External: return "external";
  }
  return "external";
}

inline Provenance provenance_from_string(const std::string& s) {
  if (s == "mae-pretrained") return Provenance::MaePretrained;
  if (s == "random-init") return Provenance::RandomInit;
  if (s == "external") return Provenance::External;
  throw ConfigError("unknown provenance '" + s + "'");
}

/// A parameter set plus the configuration needed to run it. An autoencoder
/// carries a decoder config; a classifier carries class names.
template <typename T = float>
struct Model {
  EncoderConfig encoder;
  std::optional<DecoderConfig> decoder;
  std::vector<std::string> class_names;  // non-empty iff the model has a head
  Provenance provenance = Provenance::RandomInit;
  ParamStore<T> params;

  bool has_head() const { return !class_names.empty(); }
};

template <typename T = float>
Model<T> make_autoencoder(const EncoderConfig& enc, const DecoderConfig& dec, std::uint64_t seed) {
  Model<T> m;
  m.encoder = enc;
  m.decoder = dec;
  Rng rng = make_rng(seed, "init.encoder");
  add_encoder_params(m.params, enc, rng);
  Rng drng = make_rng(seed, "init.decoder");
  add_decoder_params(m.params, enc, dec, drng);
  return m;
}

template <typename T = float>
Model<T> make_classifier(const EncoderConfig& enc, std::vector<std::string> class_names, std::uint64_t seed) {
  Model<T> m;
  m.encoder = enc;
  m.class_names = std::move(class_names);
  Rng rng = make_rng(seed, "init.encoder");
  add_encoder_params(m.params, enc, rng);
  Rng hrng = make_rng(seed, "init.head");
  add_head_params(m.params, enc.out_dim(), m.class_names.size(), hrng);
  return m;
}

/// Zeroes the contracting projection of every encoder block, reducing the
/// encoder to its stem and downsampling layers.
template <typename T>
void zero_block_projections(ParamStore<T>& ps) {
  for (auto& [name, t] : ps) {
    if (name.starts_with("encoder.") && (name.ends_with(".pw2.weight") || name.ends_with(".pw2.bias"))) {
      auto d = t.mutable_data();
      std::fill(d.begin(), d.end(), T(0));
    }
  }
}

}  // namespace egmae
