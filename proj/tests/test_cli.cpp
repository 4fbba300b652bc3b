#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "support.hpp"

using namespace egmae;
using namespace egmae::testing;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;  // stdout followed by stderr
};

Result run(const std::string& args, bool merge_stderr = true) {
  const std::string cmd = std::string(EGMAE_CLI) + " " + args + (merge_stderr ? " 2>&1" : " 2>/dev/null");
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof(buf), pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

Result run_stdout(const std::string& args) { return run(args, false); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Gray levels of an ASCII (P2) PGM.
std::vector<int> p2_levels(const std::string& pgm) {
  std::istringstream tokens(pgm);
  std::string magic;
  int w = 0, h = 0, maxv = 0;
  tokens >> magic >> w >> h >> maxv;
  if (magic != "P2") return {};
  std::vector<int> levels;
  for (int v; tokens >> v;) levels.push_back(v);
  return levels;
}

std::set<std::string> listing(const fs::path& dir) {
  std::set<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) out.insert(e.path().filename().string());
  return out;
}

// Small model and 16-pixel images keep each command well under a second.
struct Fixture {
  fs::path root, config, textures, twoclass;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture x;
    x.root = temp_dir("cli");
    x.config = x.root / "tiny.json";
    std::ofstream(x.config) << R"J({
  "model": {"stage_dims": [8, 16], "stage_depths": [1, 1], "dw_kernel": 3, "expansion": 2,
            "decoder_dim": 16, "decoder_depth": 1, "decoder_refine_blocks": 1, "decoder_expansion": 2},
  "noise": {"normalize_entropy": true},
  "pretrain": {"epochs": 1, "batch_size": 4, "lr_max": 0.001},
  "finetune": {"epochs": 2, "batch_size": 4, "lr_max": 0.001},
  "data": {"image_size": 16}
})J";
    x.textures = synth::write_dataset(synth::texture_corpus(8, 16, 1), x.root / "textures");
    x.twoclass = synth::write_dataset(synth::stripes_vs_checkerboard(8, 4, 4, 16, 2), x.root / "twoclass");
    return x;
  }();
  return f;
}

std::string cfg() { return "--config " + fixture().config.string() + " --quiet "; }

fs::path pretrained() {
  static const fs::path p = [] {
    const auto out = fixture().root / "shared_pre";
    run("pretrain " + cfg() + "--data " + fixture().textures.string() + " --out " + out.string());
    return out / "checkpoint.egmae";
  }();
  return p;
}

fs::path finetuned(const std::string& init, const std::string& name) {
  const auto out = fixture().root / name;
  if (!fs::exists(out / "checkpoint.egmae")) {
    run("finetune " + cfg() + "--data " + fixture().twoclass.string() + " --init " + init + " --out " + out.string());
  }
  return out / "checkpoint.egmae";
}

}  // namespace

TEST(Cli, MissingDataIsUsageError) {
  const auto r = run("pretrain --out " + (fixture().root / "x").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("--data"), std::string::npos) << r.out;
}

TEST(Cli, UnknownOverrideIsUsageError) {
  const auto r = run("pretrain " + cfg() + "--set pretrain.bogus=1 --data " + fixture().textures.string() + " --out " +
                     (fixture().root / "bogus").string());
  EXPECT_EQ(r.code, 2) << r.out;
}

TEST(Cli, PretrainWritesExactlyThreeFilesAndReplays) {
  const auto a = fixture().root / "pre_a", b = fixture().root / "pre_b";
  const std::string data = " --data " + fixture().textures.string();
  ASSERT_EQ(run("pretrain " + cfg() + data + " --out " + a.string()).code, 0);
  EXPECT_EQ(listing(a), (std::set<std::string>{"checkpoint.egmae", "config.resolved.json", "trace.jsonl"}));
  ASSERT_EQ(run("pretrain " + cfg() + data + " --out " + b.string()).code, 0);
  EXPECT_EQ(slurp(a / "checkpoint.egmae"), slurp(b / "checkpoint.egmae"));
  EXPECT_EQ(slurp(a / "trace.jsonl"), slurp(b / "trace.jsonl"));

  const auto line = nlohmann::json::parse(slurp(a / "trace.jsonl"));
  EXPECT_EQ(line["epoch"], 1);
  EXPECT_FALSE(line.contains("seconds"));

  // the echoed config alone reproduces the run
  const auto c = fixture().root / "pre_c";
  ASSERT_EQ(run("pretrain --quiet --config " + (a / "config.resolved.json").string() + data + " --out " + c.string()).code, 0);
  EXPECT_EQ(slurp(a / "checkpoint.egmae"), slurp(c / "checkpoint.egmae"));
  EXPECT_EQ(slurp(a / "config.resolved.json"), slurp(c / "config.resolved.json"));
}

TEST(Cli, EpochsAndSeedFlagsOverrideConfig) {
  const auto out = fixture().root / "pre_flags";
  ASSERT_EQ(run("pretrain " + cfg() + "--data " + fixture().textures.string() + " --out " + out.string() +
                " --epochs 2 --seed 5 --trace-timing")
                .code,
            0);
  const auto resolved = nlohmann::json::parse(slurp(out / "config.resolved.json"));
  EXPECT_EQ(resolved["pretrain"]["epochs"], 2);
  EXPECT_EQ(resolved["pretrain"]["seed"], 5);
  std::istringstream lines(slurp(out / "trace.jsonl"));
  std::string l;
  std::size_t count = 0;
  while (std::getline(lines, l)) {
    EXPECT_TRUE(nlohmann::json::parse(l).contains("seconds"));
    ++count;
  }
  EXPECT_EQ(count, 2u);
}

TEST(Cli, DivergingRunIsTrainingError) {
  const auto r = run("pretrain " + cfg() + "--set pretrain.lr_max=1e30 --epochs 3 --data " +
                     fixture().textures.string() + " --out " + (fixture().root / "nan").string());
  EXPECT_EQ(r.code, 4) << r.out;
}

TEST(Cli, FinetuneRecordsProvenance) {
  const auto random = finetuned("random", "ft_random");
  const auto mae = finetuned(pretrained().string(), "ft_mae");
  EXPECT_EQ(to_string(load_checkpoint(random).model.provenance), std::string("random-init"));
  EXPECT_EQ(to_string(load_checkpoint(mae).model.provenance), std::string("mae-pretrained"));
  EXPECT_EQ(listing(random.parent_path()), (std::set<std::string>{"checkpoint.best.egmae", "checkpoint.egmae",
                                                                  "config.resolved.json", "report.json",
                                                                  "trace.jsonl"}));
  std::istringstream lines(slurp(random.parent_path() / "trace.jsonl"));
  std::string l;
  while (std::getline(lines, l)) {
    const auto j = nlohmann::json::parse(l);
    EXPECT_TRUE(j["train_accuracy"].is_number());
    EXPECT_TRUE(j["val"]["accuracy"].is_number());
  }
}

TEST(Cli, IncompatibleOrCorruptCheckpointIsExit5) {
  const auto wide = fixture().root / "pre_wide";
  ASSERT_EQ(run("pretrain " + cfg() + "--set model.stage_dims=[8,24] --data " + fixture().textures.string() +
                " --out " + wide.string())
                .code,
            0);
  const std::string ft = "finetune " + cfg() + "--data " + fixture().twoclass.string() + " --out " +
                         (fixture().root / "ft_bad").string() + " --init ";
  EXPECT_EQ(run(ft + (wide / "checkpoint.egmae").string()).code, 5);

  std::string bytes = slurp(pretrained());
  bytes[bytes.size() - 3] ^= 0x10;
  const auto corrupt = fixture().root / "corrupt.egmae";
  std::ofstream(corrupt, std::ios::binary) << bytes;
  const auto r = run(ft + corrupt.string());
  EXPECT_EQ(r.code, 5);
  EXPECT_NE(r.out.find("checksum"), std::string::npos) << r.out;
  EXPECT_EQ(run(ft + "/nonexistent.egmae").code, 5);
}

TEST(Cli, EvaluateSingleAndEnsemble) {
  const auto a = finetuned("random", "ft_random");
  const auto b = finetuned(pretrained().string(), "ft_mae");
  const std::string data = " --data " + fixture().twoclass.string();

  const auto single = run_stdout("evaluate " + cfg() + data + " --models " + a.string());
  ASSERT_EQ(single.code, 0) << single.out;
  std::string why;
  EXPECT_TRUE(report_json_well_formed(nlohmann::json::parse(single.out), &why)) << why;

  EXPECT_EQ(run("evaluate " + cfg() + data + " --ensemble --models " + a.string()).code, 2);
  EXPECT_EQ(run("evaluate " + cfg() + data + " --models " + a.string() + "," + b.string()).code, 2);

  const auto out = fixture().root / "eval";
  const auto ens = run_stdout("evaluate " + cfg() + data + " --ensemble --models " + a.string() + "," + b.string() +
                              " --out " + out.string());
  ASSERT_EQ(ens.code, 0) << ens.out;
  const auto doc = nlohmann::json::parse(ens.out);
  for (const char* k : {"model_a", "model_b", "ensemble"}) {
    ASSERT_TRUE(doc.contains(k)) << k;
    EXPECT_TRUE(report_json_well_formed(doc[k], &why)) << k << ": " << why;
  }
  EXPECT_EQ(listing(out), (std::set<std::string>{"config.resolved.json", "report.json", "report.model_a.json",
                                                 "report.model_b.json"}));
  EXPECT_EQ(nlohmann::json::parse(slurp(out / "report.json")), doc["ensemble"]);

  EXPECT_EQ(run("evaluate " + cfg() + data + " --split holdout --models " + a.string()).code, 2);
}

TEST(Cli, EvaluateRejectsMismatchedClasses) {
  const auto a = finetuned("random", "ft_random");
  const auto r = run("evaluate " + cfg() + "--data " + fixture().textures.string() + " --split train --models " +
                     a.string());
  EXPECT_EQ(r.code, 3) << r.out;
}

TEST(Cli, PredictWritesCsv) {
  const auto a = finetuned("random", "ft_random");
  const auto r = run_stdout("predict " + cfg() + "--data " + fixture().twoclass.string() + " --model " + a.string());
  ASSERT_EQ(r.code, 0);
  std::istringstream in(r.out);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "path,label,predicted,p_checkerboard,p_stripes");
  std::size_t rows = 0;
  for (std::string l; std::getline(in, l);) ++rows;
  EXPECT_EQ(rows, 4u);
}

TEST(Cli, EntropyMapConstantAndTwoRegion) {
  const auto dir = fixture().root / "emap";
  fs::create_directories(dir);
  pnm::write(dir / "flat.pgm", Image(16, 16, 1, 0.4f));
  ASSERT_EQ(run("entropy-map --image " + (dir / "flat.pgm").string() + " --out " + (dir / "flat").string()).code, 0);
  for (double v : nlohmann::json::parse(slurp(dir / "flat.json"))["values"]) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(p2_levels(slurp(dir / "flat.pgm")), (std::vector<int>{0, 0, 0, 0}));

  Image two(16, 16, 1, 0.5f);
  for (std::size_t y = 8; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x) two.at(y, x, 0) = ((x + y) % 2) ? 1.0f : 0.0f;
  pnm::write(dir / "two.pgm", two);
  ASSERT_EQ(run("entropy-map --image " + (dir / "two.pgm").string() + " --out " + (dir / "two_map").string()).code, 0);
  EXPECT_EQ(p2_levels(slurp(dir / "two_map.pgm")), (std::vector<int>{0, 0, 32, 32}));

  const auto j = nlohmann::json::parse(slurp(dir / "two_map.json"));
  EXPECT_EQ(j["values"].get<std::vector<double>>(), entropy_map(pnm::read(dir / "two.pgm"), {8, 8}, 256).values);
}

TEST(Cli, EntropyMapTilingFailureIsExit3) {
  const auto dir = fixture().root / "emap_bad";
  fs::create_directories(dir);
  pnm::write(dir / "odd.pgm", Image(12, 16, 1, 0.4f));
  EXPECT_EQ(run("entropy-map --image " + (dir / "odd.pgm").string() + " --out " + (dir / "o").string()).code, 3);
}

TEST(Cli, SynthWritesManifest) {
  const auto dir = fixture().root / "synth";
  const auto r = run_stdout("synth --kind two-class --train 6 --val 2 --test 4 --size 16 --out " + dir.string());
  ASSERT_EQ(r.code, 0);
  const auto m = load_manifest(dir / "manifest.csv");
  EXPECT_EQ(load_split(m, Split::Train).size(), 6u);
  EXPECT_EQ(load_split(m, Split::Val).size(), 2u);
  EXPECT_EQ(load_split(m, Split::Test).size(), 4u);
}

TEST(EpochGrid, DryRunEmitsOneDirectoryPerCell) {
  const std::string cmd = std::string("bash ") + EGMAE_SOURCE_DIR +
                          "/tools/epoch_grid.sh --dry-run --divisor 10 --pretrain-data t.csv --data c.csv --out g" +
                          " --bin egmae 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  ASSERT_NE(pipe, nullptr);
  std::string out;
  char buf[4096];
  for (std::size_t n; (n = fread(buf, 1, sizeof(buf), pipe)) > 0;) out.append(buf, n);
  ASSERT_EQ(WEXITSTATUS(pclose(pipe)), 0) << out;
  for (const char* cell : {"pre100_ft30", "pre100_ft45", "pre500_ft30", "pre500_ft45", "pre1000_ft15"}) {
    EXPECT_NE(out.find(std::string("g/") + cell + "/pretrain"), std::string::npos) << cell;
    EXPECT_NE(out.find(std::string("g/") + cell + "/evaluate"), std::string::npos) << cell;
  }
  EXPECT_NE(out.find("--out g/pre1000_ft15/pretrain --epochs 100"), std::string::npos) << out;
  EXPECT_NE(out.find("--out g/pre1000_ft15/finetune_random --epochs 1 "), std::string::npos) << out;
  EXPECT_EQ(std::count(out.begin(), out.end(), '\n'), 20);
}
