#pragma once

// Entropy-guided masked-autoencoder pre-training and supervised fine-tuning.
//
// All randomness derives from the phase seed through labeled substreams:
//   init.*              parameter initialisation
//   data.order          per-epoch sample permutation
//   augment.*           per (epoch, sample id) augmentation
//   corrupt             per (epoch-keyed seed, sample id, patch) noise
// so a run is reproducible bit for bit regardless of worker count.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "egmae/checkpoint.hpp"
#include "egmae/config.hpp"
#include "egmae/data.hpp"
#include "egmae/entropy.hpp"
#include "egmae/evaluate.hpp"
#include "egmae/metrics.hpp"
#include "egmae/model.hpp"
#include "egmae/ops.hpp"
#include "egmae/optim.hpp"
#include "egmae/parallel.hpp"

namespace egmae {

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double lr = 0.0;  // learning rate of the epoch's last step
  std::optional<double> train_accuracy;
  std::optional<nlohmann::json> val;
  double seconds = 0.0;
};

/// Append-only per-epoch log.
class LossTrace {
 public:
  void append(EpochRecord r) {
    if (r.epoch != records_.size() + 1) throw ContractError("LossTrace: epochs must be appended in order");
    records_.push_back(std::move(r));
  }
  const std::vector<EpochRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  const EpochRecord& back() const { return records_.back(); }

  static nlohmann::json line(const EpochRecord& r, bool with_timing) {
    nlohmann::json j{{"epoch", r.epoch}, {"mean_loss", r.mean_loss}, {"lr", r.lr}};
    j["train_accuracy"] = r.train_accuracy ? nlohmann::json(*r.train_accuracy) : nlohmann::json(nullptr);
    j["val"] = r.val ? *r.val : nlohmann::json(nullptr);
    if (with_timing) j["seconds"] = r.seconds;
    return j;
  }

  /// JSON lines, one object per epoch. Wall time is opt-in because it would
  /// make otherwise identical runs produce different files.
  std::string to_jsonl(bool with_timing = false) const {
    std::string out;
    for (const auto& r : records_) out += line(r, with_timing).dump() + "\n";
    return out;
  }

 private:
  std::vector<EpochRecord> records_;
};

/// Inputs for one training phase.
struct RunConfig {
  PhaseConfig phase;
  EncoderConfig encoder;
  DecoderConfig decoder;
  NoiseConfig noise;
  std::size_t image_size = 32;
  Normalization normalization = Normalization::defaults(1);
  bool apply_corruption = true;  // false bypasses the noise step entirely

  static RunConfig pretrain_from(const PipelineConfig& c) { return from(c, c.pretrain); }
  static RunConfig finetune_from(const PipelineConfig& c) { return from(c, c.finetune); }

 private:
  static RunConfig from(const PipelineConfig& c, const PhaseConfig& p) {
    RunConfig r;
    r.phase = p;
    r.encoder = c.encoder;
    r.decoder = c.decoder;
    r.noise = c.noise;
    r.image_size = c.data.image_size;
    r.normalization = resolve_normalization(c.data.mean, c.data.std, c.encoder.in_channels);
    return r;
  }
};

using EpochCallback = std::function<void(const EpochRecord&)>;

template <typename T>
Model<T> clone_model(const Model<T>& m) {
  Model<T> out;
  out.encoder = m.encoder;
  out.decoder = m.decoder;
  out.class_names = m.class_names;
  out.provenance = m.provenance;
  for (const auto& [name, t] : m.params) {
    out.params.add(name, Tensor<T>(t.shape(), std::vector<T>(t.data().begin(), t.data().end()), t.requires_grad()));
  }
  return out;
}

/// Entropy threshold selecting patches for the top-quantile loss policy:
/// the sorted value at index floor(q·N).
inline double entropy_quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ContractError("entropy_quantile: no patches");
  std::sort(values.begin(), values.end());
  const auto idx = std::min(values.size() - 1, static_cast<std::size_t>(std::floor(q * values.size())));
  return values[idx];
}

struct PretrainSample {
  Image clean;
  Image corrupted;
  std::vector<float> loss_mask;  // C×H×W, empty when every pixel counts
};

/// Augment, patchify, score, corrupt, and (for top-quantile) build the loss
/// mask for one sample in one epoch.
inline PretrainSample prepare_pretrain_sample(const ImageSample& s, const RunConfig& cfg, std::size_t epoch) {
  PretrainSample out;
  Rng rng = make_rng(cfg.phase.seed, "augment.pretrain", {epoch, s.id});
  out.clean = augment_pretrain(s.pixels, rng, cfg.image_size);
  const PatchGrid grid = patchify(out.clean, cfg.noise.patch);
  const EntropyMap em = entropy_map(grid, cfg.noise.bins);
  if (cfg.apply_corruption) {
    NoiseConfig nc = cfg.noise;
    nc.seed = stream_key(cfg.phase.seed, "corrupt.epoch", {epoch});
    out.corrupted = unpatchify(corrupt(grid, em, nc, s.id));
  } else {
    out.corrupted = out.clean;
  }
  if (cfg.phase.loss_policy.kind == LossPatchPolicy::Kind::TopQuantile) {
    const double threshold = entropy_quantile(em.values, cfg.phase.loss_policy.quantile);
    const std::size_t H = out.clean.height, W = out.clean.width, C = out.clean.channels;
    out.loss_mask.assign(C * H * W, 0.0f);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t k = (y / cfg.noise.patch.height) * grid.cols + x / cfg.noise.patch.width;
        if (em.values[k] >= threshold)
          for (std::size_t c = 0; c < C; ++c) out.loss_mask[(c * H + y) * W + x] = 1.0f;
      }
  }
  return out;
}

struct PretrainResult {
  Model<float> model;
  LossTrace trace;
};

inline std::size_t warmup_steps(const PhaseConfig& p, std::size_t total) {
  return static_cast<std::size_t>(std::lround(p.warmup_fraction * static_cast<double>(total)));
}

inline PretrainResult pretrain_mae(const RunConfig& cfg, const std::vector<ImageSample>& train,
                                   const EpochCallback& on_epoch = {}) {
  cfg.phase.validate("pretrain");
  if (train.empty()) throw DataError("pretrain: training split is empty");
  if (cfg.image_size % cfg.encoder.reduction() != 0) {
    throw ConfigError("pretrain: image size must be a multiple of " + std::to_string(cfg.encoder.reduction()));
  }
  for (const auto& s : train) {
    if (s.pixels.channels != cfg.encoder.in_channels) {
      throw DataError("pretrain: image " + s.path + " has " + std::to_string(s.pixels.channels) +
                      " channels, model expects " + std::to_string(cfg.encoder.in_channels));
    }
  }
  PretrainResult res{make_autoencoder<float>(cfg.encoder, cfg.decoder, cfg.phase.seed), {}};
  Model<float>& model = res.model;
  model.provenance = Provenance::MaePretrained;
  AdamW<float> opt(cfg.phase.optim);

  const std::size_t n = train.size(), bs = cfg.phase.batch_size;
  const std::size_t total = cfg.phase.epochs * ((n + bs - 1) / bs);
  const std::size_t warmup = warmup_steps(cfg.phase, total);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.phase.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    double lr = 0.0;
    const auto plan = batches(n, bs, cfg.phase.seed, epoch);
    for (std::size_t b = 0; b < plan.size(); ++b) {
      const auto& idx = plan[b];
      std::vector<PretrainSample> prepared(idx.size());
      parallel_for(idx.size(), [&](std::size_t i) { prepared[i] = prepare_pretrain_sample(train[idx[i]], cfg, epoch); });
      std::vector<Image> inputs, targets;
      std::vector<float> mask;
      for (auto& p : prepared) {
        inputs.push_back(std::move(p.corrupted));
        targets.push_back(std::move(p.clean));
        mask.insert(mask.end(), p.loss_mask.begin(), p.loss_mask.end());
      }
      const auto x = stack_normalized(inputs, cfg.normalization);
      const auto target = stack_normalized(targets, cfg.normalization);
      const auto recon = decoder_forward(encoder_forward(x, cfg.encoder, model.params), cfg.encoder, cfg.decoder,
                                         model.params);
      const auto loss = mse_loss(recon, target, std::span<const float>(mask));
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw TrainingError("pretrain: non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                            std::to_string(b + 1));
      }
      loss.backward();
      if (cfg.phase.grad_clip > 0.0) clip_grad_norm(model.params, cfg.phase.grad_clip);
      lr = warmup_cosine_lr(step, total, warmup, cfg.phase.optim.lr, cfg.phase.lr_min);
      opt.step(model.params, lr);
      model.params.zero_grad();
      ++step;
      loss_sum += value * static_cast<double>(idx.size());
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.mean_loss = loss_sum / static_cast<double>(n);
    rec.lr = lr;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.trace.append(rec);
    if (on_epoch) on_epoch(rec);
  }
  return res;
}

struct FinetuneResult {
  Model<float> final_model;
  Model<float> best_model;  // highest validation accuracy (earliest on ties)
  std::size_t best_epoch = 0;
  LossTrace trace;
};

/// Classifier for fine-tuning: encoder copied from `init` when given (after a
/// config compatibility check), head freshly initialised.
inline Model<float> build_finetune_model(const RunConfig& cfg, const std::vector<std::string>& class_names,
                                         const Model<float>* init) {
  Model<float> model = make_classifier<float>(cfg.encoder, class_names, cfg.phase.seed);
  model.provenance = Provenance::RandomInit;
  if (init) {
    require_compatible_encoder(init->encoder, cfg.encoder);
    for (auto& [name, t] : model.params) {
      if (!name.starts_with("encoder.")) continue;
      if (!init->params.contains(name)) {
        throw CheckpointError(CheckpointError::Kind::ConfigMismatch, "init checkpoint lacks parameter " + name);
      }
      const auto& src = init->params.get(name);
      if (src.shape() != t.shape()) {
        throw CheckpointError(CheckpointError::Kind::ConfigMismatch, "init parameter " + name + " has shape " +
                                                                         shape_str(src.shape()) + ", expected " +
                                                                         shape_str(t.shape()));
      }
      std::copy(src.data().begin(), src.data().end(), t.mutable_data().begin());
    }
    model.provenance = init->provenance;
  }
  return model;
}

inline nlohmann::json val_snapshot(const MetricsReport& r) {
  return {{"accuracy", r.accuracy},
          {"macro_f1", r.macro_f1},
          {"macro_auc", r.macro_auc ? nlohmann::json(*r.macro_auc) : nlohmann::json(nullptr)}};
}

inline FinetuneResult finetune(const RunConfig& cfg, const std::vector<std::string>& class_names,
                               const Model<float>* init, const std::vector<ImageSample>& train,
                               const std::vector<ImageSample>& val, const EpochCallback& on_epoch = {}) {
  cfg.phase.validate("finetune");
  if (train.empty()) throw DataError("finetune: training split is empty");
  if (class_names.empty()) throw DataError("finetune: no classes");
  for (const auto& s : train) {
    if (s.label >= class_names.size()) throw DataError("finetune: label out of range for " + s.path);
    if (s.pixels.channels != cfg.encoder.in_channels) {
      throw DataError("finetune: image " + s.path + " has " + std::to_string(s.pixels.channels) +
                      " channels, model expects " + std::to_string(cfg.encoder.in_channels));
    }
  }
  FinetuneResult res{build_finetune_model(cfg, class_names, init), {}, 0, {}};
  Model<float>& model = res.final_model;
  AdamW<float> opt(cfg.phase.optim);
  const std::size_t n = train.size(), bs = cfg.phase.batch_size;
  const std::size_t total = cfg.phase.epochs * ((n + bs - 1) / bs);
  const std::size_t warmup = warmup_steps(cfg.phase, total);
  std::size_t step = 0;
  std::optional<double> best_acc;
  for (std::size_t epoch = 0; epoch < cfg.phase.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double loss_sum = 0.0, lr = 0.0;
    std::size_t correct = 0;
    const auto plan = batches(n, bs, cfg.phase.seed, epoch);
    for (std::size_t b = 0; b < plan.size(); ++b) {
      const auto& idx = plan[b];
      std::vector<Image> views(idx.size());
      parallel_for(idx.size(), [&](std::size_t i) {
        Rng rng = make_rng(cfg.phase.seed, "augment.finetune", {epoch, train[idx[i]].id});
        views[i] = augment_finetune_train(train[idx[i]].pixels, rng, cfg.image_size);
      });
      std::vector<std::size_t> labels;
      for (std::size_t i : idx) labels.push_back(train[i].label);
      const auto x = stack_normalized(views, cfg.normalization);
      const auto logits = classifier_logits(x, cfg.encoder, model.params);
      const auto loss = cross_entropy_with_logits(logits, std::span<const std::size_t>(labels));
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw TrainingError("finetune: non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                            std::to_string(b + 1));
      }
      const std::size_t C = class_names.size();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < C; ++c)
          if (logits[i * C + c] > logits[i * C + best]) best = c;
        if (best == labels[i]) ++correct;
      }
      loss.backward();
      if (cfg.phase.grad_clip > 0.0) clip_grad_norm(model.params, cfg.phase.grad_clip);
      lr = warmup_cosine_lr(step, total, warmup, cfg.phase.optim.lr, cfg.phase.lr_min);
      opt.step(model.params, lr);
      model.params.zero_grad();
      ++step;
      loss_sum += value * static_cast<double>(idx.size());
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.mean_loss = loss_sum / static_cast<double>(n);
    rec.lr = lr;
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    if (!val.empty()) {
      const auto report = compute_report(predict(model, val, cfg.image_size, cfg.normalization));
      rec.val = val_snapshot(report);
      if (!best_acc || report.accuracy > *best_acc) {
        best_acc = report.accuracy;
        res.best_model = clone_model(model);
        res.best_epoch = epoch + 1;
      }
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.trace.append(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (!best_acc) {
    res.best_model = clone_model(model);
    res.best_epoch = cfg.phase.epochs;
  }
  return res;
}

}  // namespace egmae
