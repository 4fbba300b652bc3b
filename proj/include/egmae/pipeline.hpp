#pragma once

// End-to-end commands operating on run directories. Every run directory holds
//   config.resolved.json  checkpoint.egmae  trace.jsonl  [report.json]
// and fine-tuning adds checkpoint.best.egmae.

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "egmae/checkpoint.hpp"
#include "egmae/config.hpp"
#include "egmae/data.hpp"
#include "egmae/evaluate.hpp"
#include "egmae/image.hpp"
#include "egmae/metrics.hpp"
#include "egmae/train.hpp"

namespace egmae {

inline constexpr const char* kConfigFile = "config.resolved.json";
inline constexpr const char* kCheckpointFile = "checkpoint.egmae";
inline constexpr const char* kBestCheckpointFile = "checkpoint.best.egmae";
inline constexpr const char* kTraceFile = "trace.jsonl";
inline constexpr const char* kReportFile = "report.json";

struct RunOptions {
  bool trace_timing = false;
  EpochCallback on_epoch;
};

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

inline void write_text(const std::filesystem::path& path, const std::string& text) { pnm::detail::write_file(path, text); }

inline void write_resolved_config(const std::filesystem::path& dir, const PipelineConfig& cfg) {
  write_text(dir / kConfigFile, to_json(cfg).dump(2) + "\n");
}

/// Loads a checkpoint and rejects it if any tensor fails its checksum.
inline Model<float> load_intact_model(const std::filesystem::path& path) {
  auto loaded = load_checkpoint(path);
  if (!loaded.intact()) {
    std::string names;
    for (const auto& n : loaded.checksum_failures) names += (names.empty() ? "" : ", ") + n;
    throw CheckpointError(CheckpointError::Kind::Checksum, "checkpoint " + path.string() + " is corrupt: checksum mismatch in " + names);
  }
  return std::move(loaded.model);
}

struct PretrainRun {
  PretrainResult result;
};

inline PretrainRun run_pretrain(const PipelineConfig& cfg, const std::filesystem::path& manifest_path,
                                const std::filesystem::path& out_dir, const RunOptions& opt = {}) {
  const Manifest m = load_manifest(manifest_path);
  const auto train = load_split(m, Split::Train);
  ensure_dir(out_dir);
  write_resolved_config(out_dir, cfg);
  PretrainRun run{pretrain_mae(RunConfig::pretrain_from(cfg), train, opt.on_epoch)};
  save_checkpoint(run.result.model, out_dir / kCheckpointFile);
  write_text(out_dir / kTraceFile, run.result.trace.to_jsonl(opt.trace_timing));
  return run;
}

struct FinetuneRun {
  FinetuneResult result;
  std::optional<MetricsReport> val_report;  // final model on the val split
};

/// `init` is either "random" or a checkpoint path.
inline FinetuneRun run_finetune(const PipelineConfig& cfg, const std::filesystem::path& manifest_path,
                                const std::string& init, const std::filesystem::path& out_dir,
                                const RunOptions& opt = {}) {
  const Manifest m = load_manifest(manifest_path);
  std::optional<Model<float>> init_model;
  if (init != "random") init_model = load_intact_model(init);
  const auto train = load_split(m, Split::Train);
  const auto val = load_split(m, Split::Val);
  ensure_dir(out_dir);
  write_resolved_config(out_dir, cfg);
  const auto rc = RunConfig::finetune_from(cfg);
  FinetuneRun run{finetune(rc, m.class_names, init_model ? &*init_model : nullptr, train, val, opt.on_epoch), {}};
  save_checkpoint(run.result.final_model, out_dir / kCheckpointFile);
  save_checkpoint(run.result.best_model, out_dir / kBestCheckpointFile);
  write_text(out_dir / kTraceFile, run.result.trace.to_jsonl(opt.trace_timing));
  if (!val.empty()) {
    run.val_report = compute_report(predict(run.result.final_model, val, rc.image_size, rc.normalization,
                                            cfg.eval_batch_size));
    write_text(out_dir / kReportFile, to_json(*run.val_report).dump(2) + "\n");
  }
  return run;
}

struct EvaluateRun {
  EvaluationResult result;
  nlohmann::json document;  // single report, or {model_a, model_b, ensemble}
};

inline EvaluateRun run_evaluate(const PipelineConfig& cfg, const std::vector<std::filesystem::path>& model_paths,
                                const std::filesystem::path& manifest_path, Split split, bool ensemble,
                                const std::optional<std::filesystem::path>& out_dir = std::nullopt) {
  if (model_paths.empty() || model_paths.size() > 2) throw UsageError("evaluate: expected one or two models");
  if (ensemble && model_paths.size() != 2) throw UsageError("evaluate: --ensemble requires exactly two models");
  if (!ensemble && model_paths.size() != 1) throw UsageError("evaluate: two models given without --ensemble");
  std::vector<Model<float>> models;
  for (const auto& p : model_paths) models.push_back(load_intact_model(p));
  for (const auto& mdl : models) {
    if (!mdl.has_head()) throw UsageError("evaluate: checkpoint has no classification head");
  }
  const Manifest m = load_manifest(manifest_path);
  for (const auto& mdl : models) {
    if (mdl.class_names != m.class_names) {
      throw DataError("evaluate: manifest classes do not match the model's classes");
    }
  }
  const auto samples = load_split(m, split);
  if (samples.empty()) throw DataError(std::string("evaluate: split '") + to_string(split) + "' is empty");
  const auto norm = resolve_normalization(cfg.data.mean, cfg.data.std, models[0].encoder.in_channels);
  std::vector<const Model<float>*> ptrs;
  for (const auto& mdl : models) ptrs.push_back(&mdl);
  EvaluateRun run{evaluate(ptrs, samples, ensemble, cfg.data.image_size, norm, cfg.eval_batch_size), {}};
  if (ensemble) {
    run.document = {{"model_a", to_json(run.result.individual[0])},
                    {"model_b", to_json(run.result.individual[1])},
                    {"ensemble", to_json(run.result.report)}};
  } else {
    run.document = to_json(run.result.report);
  }
  if (out_dir) {
    ensure_dir(*out_dir);
    write_resolved_config(*out_dir, cfg);
    write_text(*out_dir / kReportFile, to_json(run.result.report).dump(2) + "\n");
    if (ensemble) {
      write_text(*out_dir / "report.model_a.json", run.document["model_a"].dump(2) + "\n");
      write_text(*out_dir / "report.model_b.json", run.document["model_b"].dump(2) + "\n");
    }
  }
  return run;
}

}  // namespace egmae
