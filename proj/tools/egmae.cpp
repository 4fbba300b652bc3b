// egmae: command-line front end for the entropy-guided masked-autoencoder
// pipeline.
//
// Exit codes
//   0  success
//   1  I/O failure (an output could not be written) or unexpected error
//   2  usage or configuration error
//   3  data error (manifest, image decode, tiling)
//   4  training error (non-finite loss or gradient)
//   5  checkpoint error or checkpoint/config mismatch

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI/CLI11.hpp>
#include <nlohmann/json.hpp>

#include "egmae/egmae.hpp"

namespace {

using namespace egmae;

enum Exit : int { kOk = 0, kIo = 1, kUsage = 2, kData = 3, kTraining = 4, kCheckpoint = 5 };

struct Common {
  std::string config;
  std::vector<std::string> sets;
  bool quiet = false;
  bool trace_timing = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "TOML or JSON config file")->check(CLI::ExistingFile);
  app->add_option("--set", c.sets, "override as section.key=value (repeatable)");
  app->add_flag("--quiet", c.quiet, "suppress per-epoch progress on stderr");
}

PipelineConfig resolve(const Common& c, std::vector<std::string> extra, const nlohmann::json& run) {
  std::vector<std::string> all = c.sets;
  all.insert(all.end(), extra.begin(), extra.end());
  PipelineConfig cfg =
      resolve_config(c.config.empty() ? std::nullopt : std::optional<std::filesystem::path>(c.config), all);
  cfg.run = run;
  return cfg;
}

EpochCallback progress(const char* phase, bool quiet) {
  if (quiet) return {};
  return [phase](const EpochRecord& r) {
    std::ostringstream os;
    os << phase << " epoch " << r.epoch << " loss " << r.mean_loss << " lr " << r.lr;
    if (r.train_accuracy) os << " train_acc " << *r.train_accuracy;
    if (r.val) os << " val " << r.val->dump();
    os << " (" << r.seconds << " s)";
    std::cerr << os.str() << std::endl;
  };
}

std::vector<std::string> phase_overrides(const char* phase, const std::optional<std::size_t>& epochs,
                                         const std::optional<std::uint64_t>& seed) {
  std::vector<std::string> out;
  if (epochs) out.push_back(std::string(phase) + ".epochs=" + std::to_string(*epochs));
  if (seed) out.push_back(std::string(phase) + ".seed=" + std::to_string(*seed));
  return out;
}

Split split_or_usage(const std::string& s) {
  const auto sp = parse_split(s);
  if (!sp) throw UsageError("unknown split '" + s + "' (expected train, val or test)");
  return *sp;
}

void emit(const std::string& text) {
  std::cout << text << std::flush;
  if (!std::cout) throw IoError("failed to write to stdout");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entropy-guided continuous-masking autoencoder pipeline"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  // pretrain
  Common pre;
  std::string pre_data, pre_out;
  std::optional<std::size_t> pre_epochs;
  std::optional<std::uint64_t> pre_seed;
  auto* cmd_pre = app.add_subcommand("pretrain", "entropy-guided masked-autoencoder pre-training");
  add_common(cmd_pre, pre);
  cmd_pre->add_option("--data", pre_data, "manifest CSV")->required();
  cmd_pre->add_option("--out", pre_out, "output run directory")->required();
  cmd_pre->add_option("--epochs", pre_epochs, "pre-training epochs");
  cmd_pre->add_option("--seed", pre_seed, "run seed");
  cmd_pre->add_flag("--trace-timing", pre.trace_timing, "include wall time in trace.jsonl");

  // finetune
  Common ft;
  std::string ft_data, ft_out, ft_init;
  std::optional<std::size_t> ft_epochs;
  std::optional<std::uint64_t> ft_seed;
  auto* cmd_ft = app.add_subcommand("finetune", "supervised fine-tuning of a classifier");
  add_common(cmd_ft, ft);
  cmd_ft->add_option("--data", ft_data, "manifest CSV")->required();
  cmd_ft->add_option("--out", ft_out, "output run directory")->required();
  cmd_ft->add_option("--init", ft_init, "'random' or a pre-trained checkpoint path")->required();
  cmd_ft->add_option("--epochs", ft_epochs, "fine-tuning epochs");
  cmd_ft->add_option("--seed", ft_seed, "run seed");
  cmd_ft->add_flag("--trace-timing", ft.trace_timing, "include wall time in trace.jsonl");

  // evaluate
  Common ev;
  std::vector<std::string> ev_models;
  std::string ev_data, ev_split, ev_out;
  bool ev_ensemble = false;
  auto* cmd_ev = app.add_subcommand("evaluate", "metrics for one model or a two-model ensemble");
  add_common(cmd_ev, ev);
  cmd_ev->add_option("--models", ev_models, "one or two checkpoints, comma separated")->required()->delimiter(',');
  cmd_ev->add_option("--data", ev_data, "manifest CSV")->required();
  cmd_ev->add_option("--split", ev_split, "train, val or test (default: eval.split)");
  cmd_ev->add_flag("--ensemble", ev_ensemble, "average the two models' probabilities");
  cmd_ev->add_option("--out", ev_out, "directory for report files");

  // predict
  Common pr;
  std::string pr_model, pr_data, pr_split, pr_out;
  auto* cmd_pr = app.add_subcommand("predict", "per-sample class probabilities as CSV");
  add_common(cmd_pr, pr);
  cmd_pr->add_option("--model", pr_model, "classifier checkpoint")->required();
  cmd_pr->add_option("--data", pr_data, "manifest CSV")->required();
  cmd_pr->add_option("--split", pr_split, "train, val or test (default: eval.split)");
  cmd_pr->add_option("--out", pr_out, "CSV output file (default: stdout)");

  // entropy-map
  std::string em_image, em_out;
  std::size_t em_patch = 8, em_bins = 256;
  auto* cmd_em = app.add_subcommand("entropy-map", "per-patch entropy heatmap (PGM) and values (JSON)");
  cmd_em->add_option("--image", em_image, "PGM/PPM image")->required();
  cmd_em->add_option("--patch", em_patch, "square patch size")->check(CLI::PositiveNumber);
  cmd_em->add_option("--bins", em_bins, "histogram bins")->check(CLI::PositiveNumber);
  cmd_em->add_option("--out", em_out, "output prefix; writes <prefix>.pgm and <prefix>.json")->required();

  // synth
  std::string sy_kind, sy_out;
  std::uint64_t sy_seed = 0;
  std::size_t sy_size = 32, sy_count = 200, sy_train = 200, sy_val = 50, sy_test = 100;
  auto* cmd_sy = app.add_subcommand("synth", "write a seeded synthetic dataset with manifest");
  cmd_sy->add_option("--kind", sy_kind, "textures | two-class")
      ->required()
      ->check(CLI::IsMember({"textures", "two-class"}));
  cmd_sy->add_option("--out", sy_out, "output directory")->required();
  cmd_sy->add_option("--seed", sy_seed, "generator seed");
  cmd_sy->add_option("--size", sy_size, "image side length")->check(CLI::PositiveNumber);
  cmd_sy->add_option("--count", sy_count, "texture images");
  cmd_sy->add_option("--train", sy_train, "two-class training images");
  cmd_sy->add_option("--val", sy_val, "two-class validation images");
  cmd_sy->add_option("--test", sy_test, "two-class test images");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*cmd_pre) {
      const auto cfg = resolve(pre, phase_overrides("pretrain", pre_epochs, pre_seed),
                               {{"command", "pretrain"}, {"data", pre_data}});
      run_pretrain(cfg, pre_data, pre_out, {pre.trace_timing, progress("pretrain", pre.quiet)});
    } else if (*cmd_ft) {
      const auto cfg = resolve(ft, phase_overrides("finetune", ft_epochs, ft_seed),
                               {{"command", "finetune"}, {"data", ft_data}, {"init", ft_init}});
      const auto run = run_finetune(cfg, ft_data, ft_init, ft_out, {ft.trace_timing, progress("finetune", ft.quiet)});
      if (!ft.quiet && run.val_report) {
        std::cerr << "finetune final val accuracy " << run.val_report->accuracy << ", best epoch "
                  << run.result.best_epoch << std::endl;
      }
    } else if (*cmd_ev) {
      const auto cfg = resolve(ev, {}, {{"command", "evaluate"}, {"data", ev_data}, {"models", ev_models}});
      const Split split = split_or_usage(ev_split.empty() ? cfg.eval_split : ev_split);
      std::vector<std::filesystem::path> paths(ev_models.begin(), ev_models.end());
      const auto run = run_evaluate(cfg, paths, ev_data, split, ev_ensemble,
                                    ev_out.empty() ? std::nullopt : std::optional<std::filesystem::path>(ev_out));
      emit(run.document.dump(2) + "\n");
    } else if (*cmd_pr) {
      const auto cfg = resolve(pr, {}, {{"command", "predict"}});
      const Split split = split_or_usage(pr_split.empty() ? cfg.eval_split : pr_split);
      const Model<float> model = load_intact_model(pr_model);
      const Manifest m = load_manifest(pr_data);
      if (model.class_names != m.class_names) throw DataError("predict: manifest classes do not match the model's");
      const auto samples = load_split(m, split);
      if (samples.empty()) throw DataError(std::string("predict: split '") + to_string(split) + "' is empty");
      const auto norm = resolve_normalization(cfg.data.mean, cfg.data.std, model.encoder.in_channels);
      const auto preds = predict(model, samples, cfg.data.image_size, norm, cfg.eval_batch_size);
      std::ostringstream csv;
      csv.precision(9);
      csv << "path,label,predicted";
      for (const auto& c : model.class_names) csv << ",p_" << c;
      csv << "\n";
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const double* row = &preds.probabilities[i * preds.num_classes];
        csv << samples[i].path << "," << model.class_names[samples[i].label] << ","
            << model.class_names[argmax_row(row, preds.num_classes)];
        for (std::size_t c = 0; c < preds.num_classes; ++c) csv << "," << row[c];
        csv << "\n";
      }
      if (pr_out.empty()) {
        emit(csv.str());
      } else {
        write_text(pr_out, csv.str());
      }
    } else if (*cmd_em) {
      const Image img = decode_image(em_image);
      const EntropyMap map = entropy_map(img, PatchSize{em_patch, em_patch}, em_bins);
      const nlohmann::json j{{"image", em_image}, {"patch", em_patch}, {"bins", em_bins},
                             {"rows", map.rows},  {"cols", map.cols},   {"values", map.values}};
      write_text(em_out + ".pgm", entropy_heatmap_pgm(map));
      write_text(em_out + ".json", j.dump(2) + "\n");
    } else if (*cmd_sy) {
      const auto entries = sy_kind == "textures"
                               ? synth::texture_corpus(sy_count, sy_size, sy_seed)
                               : synth::stripes_vs_checkerboard(sy_train, sy_val, sy_test, sy_size, sy_seed);
      const auto manifest = synth::write_dataset(entries, sy_out);
      emit(manifest.string() + "\n");
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kCheckpoint;
  } catch (const AlignmentError& e) {
    std::cerr << "model mismatch: " << e.what() << "\n";
    return kCheckpoint;
  } catch (const TrainingError& e) {
    std::cerr << "training error: " << e.what() << "\n";
    return kTraining;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const ParseError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const DecodeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const TilingError& e) {
    std::cerr << "tiling error: " << e.what() << "\n";
    return kData;
  } catch (const RangeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  }
  return kOk;
}
