#include <gtest/gtest.h>
#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(FXRNN_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe) != nullptr) r.output += buf.data();
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string without_line(const std::string& text, const std::string& prefix) {
  std::istringstream in(text);
  std::string line, out;
  while (std::getline(in, line)) {
    if (!line.starts_with(prefix)) out += line + "\n";
  }
  return out;
}

fs::path scratch() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "fxrnn-cli-test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

const std::string kSmallData = "--synthetic --per-class 6 --seed 3";

// A small trained float model shared by the tests below.
const fs::path& trained_model() {
  static const fs::path model = [] {
    const auto out = scratch() / "train";
    const auto r = run("train --preset smartwatch-lstm-128 " + kSmallData + " --epochs 2 --out " + out.string());
    EXPECT_EQ(r.code, 0) << r.output;
    return out / "model.fxrm";
  }();
  return model;
}

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("train --preset nope --synthetic").code, 1);
  const auto both = run("train --synthetic --data /x --out " + (scratch() / "both").string());
  EXPECT_EQ(both.code, 1);
  EXPECT_EQ(run("train --out " + (scratch() / "neither").string()).code, 1);
  EXPECT_FALSE(fs::exists(scratch() / "neither"));
}

TEST(Cli, MissingDataFailsBeforeWriting) {
  const auto out = scratch() / "missing";
  const auto r = run("train --data /definitely/not/here --out " + out.string());
  EXPECT_EQ(r.code, 2) << r.output;
  EXPECT_FALSE(fs::exists(out));
}

TEST(Cli, TrainWritesArtifactsDeterministically) {
  const auto& model = trained_model();
  const auto dir = model.parent_path();
  EXPECT_TRUE(fs::exists(dir / "curve.csv"));
  EXPECT_TRUE(fs::exists(dir / "data_manifest.txt"));
  const auto manifest = slurp(dir / "run_manifest.txt");
  EXPECT_NE(manifest.find("epochs = 2\n"), std::string::npos) << manifest;
  EXPECT_NE(manifest.find("seed = 3\n"), std::string::npos);
  EXPECT_NE(manifest.find("synthetic = true\n"), std::string::npos);

  const auto again = scratch() / "train-again";
  ASSERT_EQ(run("train --preset smartwatch-lstm-128 " + kSmallData + " --epochs 2 --out " + again.string()).code, 0);
  EXPECT_EQ(slurp(again / "model.fxrm"), slurp(model));
  EXPECT_EQ(without_line(slurp(again / "run_manifest.txt"), "out ="), without_line(manifest, "out ="));
}

TEST(Cli, ConfigFileAndPrecedence) {
  const auto cfg = scratch() / "run.cfg";
  std::ofstream(cfg) << "# accel defaults\nseed = 7\nepochs = 4\nsynthetic = true\nper-class = 6\n";
  const auto out = scratch() / "cfg";
  const auto r = run("train --config " + cfg.string() + " --epochs 1 --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto manifest = slurp(out / "run_manifest.txt");
  EXPECT_NE(manifest.find("epochs = 1\n"), std::string::npos) << manifest;
  EXPECT_NE(manifest.find("seed = 7\n"), std::string::npos) << manifest;

  // The manifest itself is a valid config that reproduces the run.
  const auto replay = scratch() / "cfg-replay";
  ASSERT_EQ(run("train --config " + (out / "run_manifest.txt").string() + " --out " + replay.string()).code, 0);
  EXPECT_EQ(slurp(replay / "model.fxrm"), slurp(out / "model.fxrm"));

  std::ofstream(scratch() / "bad.cfg") << "learning-rate = 3\n";
  EXPECT_EQ(run("train --synthetic --config " + (scratch() / "bad.cfg").string()).code, 1);
}

TEST(Cli, QuantizeDirectAndEvaluatePackedModel) {
  const auto out = scratch() / "quant";
  const auto r = run("quantize --model " + trained_model().string() + " " + kSmallData +
                     " --bits 2 --no-retrain --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("packed_payload_bytes = 17250"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("memory_saving = 93.75%"), std::string::npos);
  for (const char* f : {"model.fxrn", "quantized.fxrm", "cost.csv", "cost.txt", "summary.txt", "run_manifest.txt"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }

  const auto packed = run("eval --model " + (out / "model.fxrn").string() + " " + kSmallData +
                          " --mode quantized --out " + (scratch() / "eval1").string());
  const auto master = run("eval --model " + (out / "quantized.fxrm").string() + " " + kSmallData +
                          " --mode quantized --out " + (scratch() / "eval2").string());
  ASSERT_EQ(packed.code, 0) << packed.output;
  ASSERT_EQ(master.code, 0) << master.output;
  EXPECT_NE(packed.output.find("miss_rate = "), std::string::npos);
  EXPECT_EQ(packed.output, master.output);

  // pack reproduces the packed file byte for byte.
  const auto repack = scratch() / "repack";
  ASSERT_EQ(run("pack --model " + (out / "quantized.fxrm").string() + " --out " + repack.string()).code, 0);
  EXPECT_EQ(slurp(repack / "model.fxrn"), slurp(out / "model.fxrn"));
}

TEST(Cli, QuantizeRetrainAndEscalate) {
  const auto out = scratch() / "escalate";
  const auto r = run("quantize --model " + trained_model().string() + " " + kSmallData +
                     " --bits 2 --escalate --target-miss 100 --epochs 1 --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("retrained_test_miss = "), std::string::npos);
  EXPECT_TRUE(fs::exists(out / "escalation.csv"));
  EXPECT_TRUE(fs::exists(out / "curve.csv"));
  EXPECT_EQ(slurp(out / "escalation.csv"), "step,group,kind,bits,valid_miss\n");
}

TEST(Cli, AllocationErrors) {
  const auto base = "quantize --model " + trained_model().string() + " " + kSmallData + " --no-retrain --out " +
                    (scratch() / "alloc").string();
  const auto missing = run(base + " --alloc w:L1=2");
  EXPECT_EQ(missing.code, 1);
  EXPECT_NE(missing.output.find("In-L1"), std::string::npos) << missing.output;
  EXPECT_EQ(run(base + " --alloc w:C1=2").code, 1);
  EXPECT_EQ(run(base + " --bits 1").code, 1);
  const auto mixed = run(base + " --alloc all=2,s:L1=4");
  EXPECT_EQ(mixed.code, 0) << mixed.output;
  EXPECT_NE(mixed.output.find("s:L1=4"), std::string::npos);
}

TEST(Cli, ModelErrors) {
  // A float model cannot be packed or evaluated in quantized mode.
  EXPECT_EQ(run("pack --model " + trained_model().string() + " --out " + (scratch() / "p").string()).code, 2);
  const auto q = run("eval --model " + trained_model().string() + " " + kSmallData + " --mode quantized --out " +
                     (scratch() / "e").string());
  EXPECT_EQ(q.code, 1) << q.output;
  const auto f = run("eval --model " + trained_model().string() + " " + kSmallData + " --out " +
                     (scratch() / "e").string());
  EXPECT_EQ(f.code, 0) << f.output;

  const auto corrupt = scratch() / "corrupt.fxrn";
  std::ofstream(corrupt) << "FXRN garbage";
  EXPECT_EQ(run("eval --model " + corrupt.string() + " --synthetic").code, 2);
  EXPECT_EQ(run("eval --model " + (scratch() / "nothing.fxrm").string() + " --synthetic").code, 2);
}

TEST(Cli, Sensitivity) {
  const auto out = scratch() / "sens";
  const auto r = run("sensitivity --model " + trained_model().string() + " " + kSmallData +
                     " --epochs 1 --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("Weight groups, 2 bits"), std::string::npos) << r.output;
  const auto csv = slurp(out / "sensitivity.csv");
  EXPECT_TRUE(csv.starts_with("group,kind,bits,direct_miss,retrained_miss\nfloat,baseline,,")) << csv;
  EXPECT_NE(csv.find("\nAll,all,2,"), std::string::npos);

  // Replaying the manifest with a group filter and no retraining.
  const auto filtered = run("sensitivity --config " + (out / "run_manifest.txt").string() +
                            " --group L1 --no-retrain --out " + (scratch() / "sens-l1").string());
  ASSERT_EQ(filtered.code, 0) << filtered.output;
  const auto rows = slurp(scratch() / "sens-l1" / "sensitivity.csv");
  EXPECT_NE(rows.find("L1,weight,2,"), std::string::npos) << rows;
  EXPECT_NE(rows.find("L1,signal,2,"), std::string::npos);
  EXPECT_EQ(rows.find("All"), std::string::npos);
  EXPECT_EQ(run("sensitivity --model " + trained_model().string() + " --synthetic --group C9").code, 1);
}

TEST(Cli, Report) {
  const auto out = scratch() / "report";
  const auto accel = run("report --preset smartwatch-lstm-128 --bits 2 --out " + out.string());
  ASSERT_EQ(accel.code, 0) << accel.output;
  EXPECT_NE(accel.output.find("packed_payload_bytes = 17250"), std::string::npos) << accel.output;
  EXPECT_NE(accel.output.find("float32_bytes = 276000"), std::string::npos);
  EXPECT_NE(accel.output.find("memory_saving = 93.75%"), std::string::npos);

  const auto image = run("report --preset cambridge-cnn-lstm --bits 2 --out " + out.string());
  ASSERT_EQ(image.code, 0) << image.output;
  EXPECT_NE(image.output.find("56.448 M"), std::string::npos) << image.output;
  EXPECT_NE(slurp(out / "cost.csv").find("C1,1881600,0,56448000"), std::string::npos);
}
