#pragma once

// Pipeline configuration: sections model, noise, pretrain, finetune, data,
// eval (plus an informational run section recording data/init paths). Files
// are TOML or JSON, chosen by extension; "section.key=value" overrides are
// applied last. Unknown keys are rejected so typos cannot silently fall back
// to defaults.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <toml++/toml.hpp>

#include "egmae/checkpoint.hpp"
#include "egmae/entropy.hpp"
#include "egmae/errors.hpp"
#include "egmae/model.hpp"
#include "egmae/optim.hpp"

namespace egmae {

struct LossPatchPolicy {
  enum class Kind { All, TopQuantile };
  Kind kind = Kind::All;
  double quantile = 0.0;

  /// "all" or "top-quantile(q)" (also accepts "top-quantile:q"), q in [0, 1).
  static LossPatchPolicy parse(const std::string& s) {
    if (s == "all") return {};
    for (const std::string prefix : {"top-quantile(", "top-quantile:"}) {
      if (s.starts_with(prefix)) {
        std::string num = s.substr(prefix.size());
        if (prefix.back() == '(') {
          if (num.empty() || num.back() != ')') break;
          num.pop_back();
        }
        double q = 0.0;
        try {
          std::size_t used = 0;
          q = std::stod(num, &used);
          if (used != num.size()) throw std::invalid_argument(num);
        } catch (const std::exception&) {
          throw ConfigError("loss_patch_policy: cannot parse quantile in '" + s + "'");
        }
        if (!(q >= 0.0 && q < 1.0)) {
          throw ConfigError("loss_patch_policy: quantile must lie in [0, 1); q = 1 selects no patches");
        }
        return {Kind::TopQuantile, q};
      }
    }
    throw ConfigError("loss_patch_policy: expected 'all' or 'top-quantile(q)', got '" + s + "'");
  }

  std::string str() const {
    if (kind == Kind::All) return "all";
    std::ostringstream os;
    os << "top-quantile(" << quantile << ")";
    return os.str();
  }
};

struct PhaseConfig {
  std::size_t epochs = 1;
  std::size_t batch_size = 16;
  AdamWConfig optim;  // optim.lr is the peak learning rate
  double lr_min = 0.0;
  double warmup_fraction = 0.0;
  std::uint64_t seed = 0;
  double grad_clip = 0.0;  // 0 disables clipping
  LossPatchPolicy loss_policy;  // pre-training only

  void validate(const char* section) const {
    const std::string s(section);
    if (epochs < 1) throw ConfigError(s + ".epochs must be at least 1");
    if (batch_size < 1) throw ConfigError(s + ".batch_size must be at least 1");
    if (!(optim.lr > 0.0)) throw ConfigError(s + ".lr_max must be positive");
    if (lr_min < 0.0 || lr_min > optim.lr) throw ConfigError(s + ".lr_min must lie in [0, lr_max]");
    if (warmup_fraction < 0.0 || warmup_fraction >= 1.0) throw ConfigError(s + ".warmup_fraction must lie in [0, 1)");
    if (grad_clip < 0.0) throw ConfigError(s + ".grad_clip must be non-negative");
  }
};

struct DataConfig {
  std::size_t image_size = 32;
  std::vector<double> mean;  // empty: defaults for the channel count
  std::vector<double> std;
};

struct PipelineConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  NoiseConfig noise;
  PhaseConfig pretrain;
  PhaseConfig finetune;
  DataConfig data;
  std::size_t eval_batch_size = 64;
  std::string eval_split = "test";
  nlohmann::json run = nlohmann::json::object();

  PipelineConfig() {
    pretrain.epochs = 100;
    pretrain.optim = {1.5e-4, 0.9, 0.95, 1e-8, 0.05};
    pretrain.lr_min = 0.0;
    pretrain.warmup_fraction = 0.05;
    finetune.epochs = 15;
    finetune.optim = {5e-4, 0.9, 0.999, 1e-8, 0.05};
    finetune.lr_min = 0.0;
    finetune.warmup_fraction = 0.0;
  }

  void validate() const {
    encoder.validate();
    decoder.validate();
    pretrain.validate("pretrain");
    finetune.validate("finetune");
    if (noise.sigma_scale < 0.0) throw ConfigError("noise.sigma_scale must be non-negative");
    if (noise.bins < 1) throw ConfigError("noise.bins must be at least 1");
    if (data.image_size % encoder.reduction() != 0) {
      throw ConfigError("data.image_size must be a multiple of " + std::to_string(encoder.reduction()));
    }
    if (data.image_size % noise.patch.height != 0) {
      throw ConfigError("data.image_size must be a multiple of noise.patch_size");
    }
    if (!data.mean.empty() && (data.mean.size() != encoder.in_channels || data.std.size() != encoder.in_channels)) {
      throw ConfigError("data.mean/data.std must have one entry per input channel");
    }
    if (eval_split != "train" && eval_split != "val" && eval_split != "test") {
      throw ConfigError("eval.split must be train, val or test");
    }
  }
};

namespace detail {

inline nlohmann::json phase_json(const PhaseConfig& p, bool with_policy) {
  nlohmann::json j{{"epochs", p.epochs},       {"batch_size", p.batch_size},
                   {"lr_max", p.optim.lr},     {"lr_min", p.lr_min},
                   {"beta1", p.optim.beta1},   {"beta2", p.optim.beta2},
                   {"eps", p.optim.eps},       {"weight_decay", p.optim.weight_decay},
                   {"warmup_fraction", p.warmup_fraction}, {"seed", p.seed},
                   {"grad_clip", p.grad_clip}};
  if (with_policy) j["loss_patch_policy"] = p.loss_policy.str();
  return j;
}

inline PhaseConfig phase_from(const nlohmann::json& j, bool with_policy) {
  PhaseConfig p;
  p.epochs = j.at("epochs").get<std::size_t>();
  p.batch_size = j.at("batch_size").get<std::size_t>();
  p.optim.lr = j.at("lr_max").get<double>();
  p.lr_min = j.at("lr_min").get<double>();
  p.optim.beta1 = j.at("beta1").get<double>();
  p.optim.beta2 = j.at("beta2").get<double>();
  p.optim.eps = j.at("eps").get<double>();
  p.optim.weight_decay = j.at("weight_decay").get<double>();
  p.warmup_fraction = j.at("warmup_fraction").get<double>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.grad_clip = j.at("grad_clip").get<double>();
  if (with_policy) p.loss_policy = LossPatchPolicy::parse(j.at("loss_patch_policy").get<std::string>());
  return p;
}

inline void reject_unknown(const nlohmann::json& given, const nlohmann::json& known, const std::string& path) {
  if (!given.is_object()) {
    if (!path.empty()) return;
    throw ConfigError("config root must be a table/object");
  }
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (path.empty() && it.key() == "run") continue;
    if (!known.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    if (path.empty()) {
      if (!it.value().is_object()) throw ConfigError("config section '" + key + "' must be a table");
      reject_unknown(it.value(), known.at(it.key()), key);
    }
  }
}

}  // namespace detail

inline nlohmann::json to_json(const PipelineConfig& c) {
  return {{"model",
           {{"in_channels", c.encoder.in_channels},
            {"stem_patch", c.encoder.stem_patch},
            {"stage_dims", c.encoder.stage_dims},
            {"stage_depths", c.encoder.stage_depths},
            {"dw_kernel", c.encoder.dw_kernel},
            {"expansion", c.encoder.expansion},
            {"ln_eps", c.encoder.ln_eps},
            {"decoder_dim", c.decoder.dim},
            {"decoder_depth", c.decoder.depth},
            {"decoder_refine_blocks", c.decoder.refine_blocks},
            {"decoder_expansion", c.decoder.expansion}}},
          {"noise",
           {{"sigma_scale", c.noise.sigma_scale},
            {"normalize_entropy", c.noise.normalize_entropy},
            {"bins", c.noise.bins},
            {"patch_size", c.noise.patch.height}}},
          {"pretrain", detail::phase_json(c.pretrain, true)},
          {"finetune", detail::phase_json(c.finetune, false)},
          {"data", {{"image_size", c.data.image_size}, {"mean", c.data.mean}, {"std", c.data.std}}},
          {"eval", {{"batch_size", c.eval_batch_size}, {"split", c.eval_split}}},
          {"run", c.run}};
}

inline PipelineConfig config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  try {
    const auto& m = j.at("model");
    c.encoder.in_channels = m.at("in_channels").get<std::size_t>();
    c.encoder.stem_patch = m.at("stem_patch").get<std::size_t>();
    c.encoder.stage_dims = m.at("stage_dims").get<std::vector<std::size_t>>();
    c.encoder.stage_depths = m.at("stage_depths").get<std::vector<std::size_t>>();
    c.encoder.dw_kernel = m.at("dw_kernel").get<std::size_t>();
    c.encoder.expansion = m.at("expansion").get<std::size_t>();
    c.encoder.ln_eps = m.at("ln_eps").get<double>();
    c.decoder.dim = m.at("decoder_dim").get<std::size_t>();
    c.decoder.depth = m.at("decoder_depth").get<std::size_t>();
    c.decoder.refine_blocks = m.at("decoder_refine_blocks").get<std::size_t>();
    c.decoder.expansion = m.at("decoder_expansion").get<std::size_t>();
    const auto& n = j.at("noise");
    c.noise.sigma_scale = n.at("sigma_scale").get<double>();
    c.noise.normalize_entropy = n.at("normalize_entropy").get<bool>();
    c.noise.bins = n.at("bins").get<std::size_t>();
    const auto ps = n.at("patch_size").get<std::size_t>();
    if (ps == 0) throw ConfigError("noise.patch_size must be positive");
    c.noise.patch = {ps, ps};
    c.pretrain = detail::phase_from(j.at("pretrain"), true);
    c.finetune = detail::phase_from(j.at("finetune"), false);
    const auto& d = j.at("data");
    c.data.image_size = d.at("image_size").get<std::size_t>();
    c.data.mean = d.at("mean").get<std::vector<double>>();
    c.data.std = d.at("std").get<std::vector<double>>();
    const auto& e = j.at("eval");
    c.eval_batch_size = e.at("batch_size").get<std::size_t>();
    c.eval_split = e.at("split").get<std::string>();
    if (j.contains("run")) c.run = j.at("run");
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("config: ") + ex.what());
  }
  c.validate();
  return c;
}

/// Parses a config document (TOML or JSON text) into JSON.
inline nlohmann::json parse_config_text(const std::string& text, bool is_toml) {
  try {
    if (!is_toml) return nlohmann::json::parse(text);
    toml::table tbl = toml::parse(text);
    std::ostringstream os;
    os << toml::json_formatter{tbl};
    return nlohmann::json::parse(os.str());
  } catch (const toml::parse_error& e) {
    throw ConfigError(std::string("config TOML: ") + std::string(e.description()));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config JSON: ") + e.what());
  }
}

inline nlohmann::json read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const auto ext = path.extension().string();
  if (ext != ".toml" && ext != ".json") throw ConfigError("config must end in .toml or .json: " + path.string());
  return parse_config_text(ss.str(), ext == ".toml");
}

/// Applies "section.key=value"; value is parsed as JSON when possible
/// (numbers, booleans, arrays) and taken as a string otherwise.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ConfigError("override must look like section.key=value, got '" + assignment + "'");
  }
  const std::string section = assignment.substr(0, dot);
  const std::string key = assignment.substr(dot + 1, eq - dot - 1);
  const std::string raw = assignment.substr(eq + 1);
  if (!doc.contains(section) || (section != "run" && !doc[section].contains(key))) {
    throw ConfigError("unknown config key '" + section + "." + key + "'");
  }
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;
  }
  doc[section][key] = value;
}

/// Defaults ← file (if any) ← overrides, validated.
inline PipelineConfig resolve_config(const std::optional<std::filesystem::path>& file,
                                     const std::vector<std::string>& overrides = {}) {
  nlohmann::json doc = to_json(PipelineConfig{});
  if (file) {
    const nlohmann::json given = read_config_file(*file);
    detail::reject_unknown(given, doc, "");
    doc.merge_patch(given);
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return config_from_json(doc);
}

}  // namespace egmae
