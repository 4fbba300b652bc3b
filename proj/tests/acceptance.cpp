// Acceptance harness: one PASS/FAIL line per criterion.
//
//   acceptance            run every criterion
//   acceptance 1 4 9      run a subset
//
// Exit status is 0 only when every selected criterion passes.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "grad_catalog.hpp"
#include "metric_oracle.hpp"
#include "support.hpp"

using namespace egmae;
using namespace egmae::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void fail(const std::string& why) {
    if (pass) detail.clear();
    pass = false;
    detail += (detail.empty() ? "" : "; ") + why;
  }
  void note(const std::string& s) {
    if (pass) detail += (detail.empty() ? "" : ", ") + s;
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------- 1: gradients

Outcome gradients() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto cases = grad_catalog();
  double worst = 0.0;
  for (std::size_t c = 0; c < cases.size(); ++c) {
    std::mt19937_64 rng(7000 + c);
    for (int i = 0; i < 100; ++i) {
      auto inst = cases[c].make(rng);
      const auto r = grad_check(inst.inputs, inst.f);
      worst = std::max(worst, r.max_rel_error);
      if (!(r.max_rel_error < 1e-4)) {
        o.fail(cases[c].name + " instance " + std::to_string(i) + " rel error " + fmt(r.max_rel_error) + " (" +
               r.worst + ")");
        break;
      }
    }
  }
  const double secs = seconds_since(t0);
  if (secs >= 120.0) o.fail("runtime " + fmt(secs) + " s exceeds 120 s");
  o.note(std::to_string(cases.size()) + " ops x 100 instances, worst rel error " + fmt(worst, 3) + ", " + fmt(secs, 3) +
         " s");
  return o;
}

// ------------------------------------------------------------------ 2: entropy

Outcome entropy_suite() {
  Outcome o;
  std::mt19937_64 rng(7100);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);

  for (int t = 0; t < 1000; ++t) {
    const std::size_t bins = 1 + rng() % 512;
    std::vector<float> p(1 + rng() % 256);
    for (auto& v : p) v = u(rng);
    const double h = patch_entropy(p, bins);
    if (!(h >= 0.0 && h <= std::log(static_cast<double>(bins)) + 1e-12)) {
      o.fail("bound violated: H = " + fmt(h, 17) + " with " + std::to_string(bins) + " bins");
      break;
    }
  }
  for (float level : {0.0f, 0.3f, 1.0f}) {
    std::vector<float> p(64, level);
    if (patch_entropy(p, 256) != 0.0) o.fail("constant patch at " + fmt(level) + " has non-zero entropy");
  }
  for (int t = 0; t < 100; ++t) {
    const float a = static_cast<float>(rng() % 128) / 255.0f, b = static_cast<float>(128 + rng() % 128) / 255.0f;
    std::vector<float> p(2 * (1 + rng() % 32));
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = i % 2 ? a : b;
    std::shuffle(p.begin(), p.end(), rng);
    const double h = patch_entropy(p, 256);
    if (std::abs(h - std::log(2.0)) > 1e-9) {
      o.fail("equal two-level patch gives " + fmt(h, 17));
      break;
    }
  }
  std::vector<float> uniform(256);
  for (std::size_t i = 0; i < 256; ++i) uniform[i] = static_cast<float>(i) / 255.0f;
  const double hu = patch_entropy(uniform, 256);
  if (std::abs(hu - std::log(256.0)) > 1e-9) o.fail("uniform-256 patch gives " + fmt(hu, 17));

  for (int t = 0; t < 1000; ++t) {
    std::vector<float> p(64);
    for (auto& v : p) v = rng() % 3 ? static_cast<float>(rng() % 16) / 15.0f : u(rng);
    const double h = patch_entropy(p, 256);
    std::shuffle(p.begin(), p.end(), rng);
    if (patch_entropy(p, 256) != h) {
      o.fail("permutation changed entropy on patch " + std::to_string(t));
      break;
    }
  }
  o.note("bounds on 1000 patches, constant, two-level, uniform-256, 1000 permutations");
  return o;
}

// -------------------------------------------------------------------- 3: noise

Outcome noise_statistics() {
  Outcome o;
  // One 250x400 patch of zeros yields 10^5 draws; the second patch holds
  // arbitrary pixels and a zero entropy, so it must come back untouched.
  constexpr std::size_t H = 250, W = 400;
  Image img(H, 2 * W, 1, 0.0f);
  std::mt19937_64 rng(7200);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = W; x < 2 * W; ++x) img.at(y, x, 0) = u(rng);
  const PatchGrid grid = patchify(img, {H, W});
  for (double var : {0.01, 0.25, 1.0}) {
    const EntropyMap em{{var, 0.0}, 256, 1, 2};
    const NoiseConfig cfg{1.0, false, 256, 7300, {H, W}};
    const PatchGrid out = corrupt(grid, em, cfg);
    double mean = 0.0, sq = 0.0;
    const auto draws = out.patch_at(0);
    for (float v : draws) mean += v;
    mean /= static_cast<double>(draws.size());
    for (float v : draws) sq += (v - mean) * (v - mean);
    const double sample_var = sq / static_cast<double>(draws.size() - 1);
    const double rel = std::abs(sample_var / var - 1.0);
    o.note("var " + fmt(var) + ": sample var " + fmt(sample_var, 5) + " (" + fmt(100 * rel, 2) + "%), mean " +
           fmt(mean, 3));
    if (draws.size() != 100000) o.fail("expected 1e5 draws, got " + std::to_string(draws.size()));
    if (rel > 0.02) o.fail("variance " + fmt(var) + ": sample variance " + fmt(sample_var, 6) + " off by " + fmt(100 * rel, 3) + "%");
    if (std::abs(mean) > 0.005) o.fail("variance " + fmt(var) + ": sample mean " + fmt(mean, 6) + " exceeds 0.005");
    const auto before = grid.patch_at(1), after = out.patch_at(1);
    if (!std::equal(before.begin(), before.end(), after.begin())) o.fail("zero-entropy patch changed");
  }
  return o;
}

// ------------------------------------------------------------------ 4: metrics

Outcome metric_oracles() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(7400);
  for (int t = 0; t < 1000; ++t) {
    const auto p = random_prediction_set(rng);
    const auto why = compare_with_oracles(p, compute_report(p));
    if (!why.empty()) {
      o.fail("case " + std::to_string(t) + ": " + why);
      break;
    }
  }
  const double secs = seconds_since(t0);
  if (secs >= 60.0) o.fail("runtime " + fmt(secs) + " s exceeds 60 s");
  o.note("1000 cases, " + fmt(secs, 3) + " s");
  return o;
}

// ----------------------------------------------------------------- 5: ensemble

Outcome ensemble_exactness() {
  Outcome o;
  std::mt19937_64 rng(7500);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const auto a = random_prediction_set(rng);
    auto b = a;
    std::uniform_real_distribution<double> u(0.01, 1.0);
    for (std::size_t n = 0; n < b.size(); ++n) {
      double s = 0;
      for (std::size_t c = 0; c < b.num_classes; ++c) s += b.probabilities[n * b.num_classes + c] = u(rng);
      for (std::size_t c = 0; c < b.num_classes; ++c) b.probabilities[n * b.num_classes + c] /= s;
    }
    const auto e = ensemble_average(a, b);
    for (std::size_t i = 0; i < e.probabilities.size(); ++i) {
      worst = std::max(worst, std::abs(e.probabilities[i] - (a.probabilities[i] + b.probabilities[i]) / 2.0));
    }
    if (ensemble_average(a, a).probabilities != a.probabilities) o.fail("ensemble of identical inputs differs");
    if (ensemble_average(b, b).probabilities != b.probabilities) o.fail("ensemble of identical inputs differs");
  }
  if (worst > 1e-12) o.fail("max deviation " + fmt(worst, 3));
  o.note("1000 pairs, max deviation " + fmt(worst, 3));
  return o;
}

// ------------------------------------------------------- 6-8: desk experiments

constexpr std::uint64_t kTextureSeed = 1;
constexpr std::uint64_t kTwoClassSeed = 2;

struct DeskRound {
  fs::path dir;
  double pretrain_seconds = 0.0;
  std::vector<double> pretrain_losses;
  double acc_random = 0.0, acc_mae = 0.0, acc_ensemble = 0.0;
  bool report_ok = false;
  std::string report_why;
};

DeskRound desk_round(const fs::path& dir) {
  DeskRound r;
  r.dir = dir;
  fs::remove_all(dir);
  const auto cfg = resolve_config(fs::path(EGMAE_SOURCE_DIR) / "configs" / "desk.toml");
  const auto textures = synth::write_dataset(synth::texture_corpus(200, 32, kTextureSeed), dir / "data" / "textures");
  const auto twoclass =
      synth::write_dataset(synth::stripes_vs_checkerboard(200, 50, 100, 32, kTwoClassSeed), dir / "data" / "twoclass");

  const auto t0 = Clock::now();
  const auto pre = run_pretrain(cfg, textures, dir / "pretrain");
  r.pretrain_seconds = seconds_since(t0);
  for (const auto& rec : pre.result.trace.records()) r.pretrain_losses.push_back(rec.mean_loss);

  run_finetune(cfg, twoclass, "random", dir / "finetune_random");
  run_finetune(cfg, twoclass, (dir / "pretrain" / kCheckpointFile).string(), dir / "finetune_mae");
  const auto ev = run_evaluate(
      cfg, {dir / "finetune_random" / kCheckpointFile, dir / "finetune_mae" / kCheckpointFile}, twoclass, Split::Test,
      true, dir / "evaluate");
  r.acc_random = ev.result.individual[0].accuracy;
  r.acc_mae = ev.result.individual[1].accuracy;
  r.acc_ensemble = ev.result.report.accuracy;
  const auto doc = nlohmann::json::parse(slurp(dir / "evaluate" / kReportFile));
  r.report_ok = report_json_well_formed(doc, &r.report_why) &&
                report_json_well_formed(ev.document["model_a"], &r.report_why) &&
                report_json_well_formed(ev.document["model_b"], &r.report_why) &&
                doc["n_samples"].get<std::size_t>() == 100;
  return r;
}

const fs::path kWork = fs::temp_directory_path() / "egmae_acceptance";
std::optional<DeskRound> first_round;

const DeskRound& first() {
  if (!first_round) first_round = desk_round(kWork / "round1");
  return *first_round;
}

Outcome desk_pretraining() {
  Outcome o;
  const auto& r = first();
  const auto& l = r.pretrain_losses;
  if (l.size() != 30) {
    o.fail("expected 30 epochs, trace has " + std::to_string(l.size()));
    return o;
  }
  const double ratio = l.back() / l.front();
  o.note("first " + fmt(l.front()) + ", final " + fmt(l.back()) + ", ratio " + fmt(ratio, 3) + ", " +
         fmt(r.pretrain_seconds, 3) + " s");
  if (!(ratio <= 0.5)) o.fail("final/first loss ratio " + fmt(ratio, 4) + " exceeds 0.5");
  if (r.pretrain_seconds >= 600.0) o.fail("pre-training took " + fmt(r.pretrain_seconds) + " s");
  return o;
}

Outcome desk_finetuning() {
  Outcome o;
  const auto& r = first();
  o.note("test accuracy random-init " + fmt(r.acc_random) + ", mae-init " + fmt(r.acc_mae) + ", ensemble " +
         fmt(r.acc_ensemble));
  if (r.acc_random < 0.95) o.fail("random-init test accuracy " + fmt(r.acc_random) + " below 0.95");
  if (r.acc_mae < 0.95) o.fail("mae-init test accuracy " + fmt(r.acc_mae) + " below 0.95");
  if (r.acc_mae < r.acc_random - 0.02) {
    o.fail("mae-init accuracy " + fmt(r.acc_mae) + " trails random-init " + fmt(r.acc_random) + " by more than 0.02");
  }
  if (!r.report_ok) o.fail("ensemble report malformed: " + r.report_why);
  return o;
}

Outcome determinism() {
  Outcome o;
  const auto& a = first();
  const auto b = desk_round(kWork / "round2");
  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(a.dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a.dir);
    ++compared;
    if (!fs::exists(b.dir / rel)) {
      o.fail(rel.string() + " missing from the second run");
    } else if (slurp(e.path()) != slurp(b.dir / rel)) {
      o.fail(rel.string() + " differs between runs");
    }
  }
  o.note(std::to_string(compared) + " files byte-identical (datasets, configs, checkpoints, traces, reports)");
  return o;
}

// -------------------------------------------------------------- 9: round trips

Outcome round_trips() {
  Outcome o;
  // checkpoints: a pretrained autoencoder and a fine-tuned classifier
  for (const auto* name : {"pretrain", "finetune_mae"}) {
    const fs::path p = first().dir / name / kCheckpointFile;
    const std::string bytes = slurp(p);
    const auto loaded = load_checkpoint(p);
    if (!loaded.intact()) o.fail(std::string(name) + " checkpoint fails its checksums");
    const auto again = kWork / (std::string("resaved_") + name + ".egmae");
    save_checkpoint(loaded.model, again);
    if (slurp(again) != bytes) o.fail(std::string(name) + " checkpoint changes on save/load");
  }

  std::mt19937_64 rng(7900);
  for (int t = 0; t < 200; ++t) {
    Image img(1 + rng() % 40, 1 + rng() % 40, t % 2 ? 3 : 1);
    for (auto& v : img.pixels) v = static_cast<float>(rng() % 256) / 255.0f;
    const std::string bytes = pnm::encode(img);
    const Image back = pnm::decode(bytes);
    if (!(back == img) || pnm::encode(back) != bytes) {
      o.fail("PNM round trip differs on image " + std::to_string(t));
      break;
    }
  }

  for (int t = 0; t < 200; ++t) {
    const auto report = compute_report(random_prediction_set(rng));
    const std::string text = to_json(report).dump();
    const auto back = report_from_json(nlohmann::json::parse(text));
    if (!(back == report) || to_json(back).dump() != text) {
      o.fail("report JSON round trip differs on case " + std::to_string(t));
      break;
    }
  }
  o.note("2 checkpoints, 200 PNM images, 200 reports");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, Outcome (*)()> criteria{
      {1, gradients},        {2, entropy_suite},   {3, noise_statistics}, {4, metric_oracles}, {5, ensemble_exactness},
      {6, desk_pretraining}, {7, desk_finetuning}, {8, determinism},      {9, round_trips},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    const int k = std::atoi(argv[i]);
    if (!criteria.count(k)) {
      std::cerr << "unknown criterion " << argv[i] << "\n";
      return 2;
    }
    selected.push_back(k);
  }
  if (selected.empty())
    for (const auto& [k, _] : criteria) selected.push_back(k);

  bool all = true;
  for (int k : selected) {
    Outcome o;
    try {
      o = criteria.at(k)();
    } catch (const std::exception& e) {
      o.fail(std::string("exception: ") + e.what());
    }
    all = all && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << k << ": " << o.detail << std::endl;
  }
  return all ? 0 : 1;
}
