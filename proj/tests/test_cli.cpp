// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "support.hpp"

using namespace fexpr;
using namespace fexpr::testing;

namespace {

const std::string kCli = FEXPR_CLI_PATH;

std::string q(const std::filesystem::path &p) { return "'" + p.string() + "'"; }

// Extractor-style stream: 478 points per frame with a z coordinate.
std::string extractor_stream(std::size_t frames, std::uint64_t seed) {
  Rng rng(seed);
  std::string out;
  for (std::size_t k = 0; k < frames; ++k) {
    json pts = json::array();
    for (std::size_t i = 0; i < kMeshLandmarkCount; ++i)
      pts.push_back({rng.uniform(100, 500), rng.uniform(80, 420), rng.uniform(-0.1, 0.1)});
    out += json{{"seq_id", "live"}, {"frame_idx", k}, {"t_ms", 33 * k}, {"img_w", 640}, {"img_h", 480},
                {"points", pts}}
               .dump() +
           "\n";
  }
  return out;
}

} // namespace

TEST(Cli, PairsPrintsCount) {
  std::string out;
  EXPECT_EQ(run_command(kCli + " pairs --preset 61 --mode full", &out), 0);
  EXPECT_EQ(out, "1830\n");
  EXPECT_EQ(run_command(kCli + " pairs --preset 250 --mode au", &out), 0);
  EXPECT_EQ(out, "24025\n");
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run_command(kCli + " frobnicate 2>/dev/null"), 2);
  EXPECT_EQ(run_command(kCli + " pairs --no-such-flag 2>/dev/null"), 2);
  EXPECT_EQ(run_command(kCli + " pairs --preset 62 2>/dev/null"), 2);
  EXPECT_EQ(run_command(kCli + " 2>/dev/null"), 2);
  EXPECT_EQ(run_command(kCli + " train --manifest /nonexistent/manifest.json --model /tmp/x 2>/dev/null"), 1);
  EXPECT_EQ(run_command(kCli + " --help >/dev/null"), 0);
}

TEST(Cli, SynthTrainStreamOverPipe) {
  TempDir dir;
  ASSERT_EQ(run_command(kCli + " synth --out " + q(dir / "data") + " --classes 3 --per-class 4 --seed 2 >/dev/null"), 0);
  const auto model = dir / "m.bin";
  ASSERT_EQ(run_command(kCli + " train --manifest " + q(dir / "data" / "manifest.json") + " --model " + q(model) +
                        " --epochs 2 --dense 8 --filters 2 --seed 1 >/dev/null"),
            0);
  ASSERT_TRUE(std::filesystem::exists(dir / "m.scaler.json"));
  {
    std::ofstream(dir / "stream.ndjson") << extractor_stream(9, 3);
  }
  // Producer writes part of the stream, pauses, then finishes; the engine reads incrementally.
  std::string out;
  const std::string producer = "(head -n 3 " + q(dir / "stream.ndjson") + "; sleep 0.2; tail -n +4 " +
                               q(dir / "stream.ndjson") + ")";
  ASSERT_EQ(run_command(producer + " | " + kCli + " predict-stream --model " + q(model) + " --rate max -", &out), 0);
  std::istringstream lines(out);
  std::string line;
  std::vector<json> preds;
  while (std::getline(lines, line))
    preds.push_back(json::parse(line));
  ASSERT_EQ(preds.size(), 5u);
  for (std::size_t k = 0; k < preds.size(); ++k) {
    EXPECT_EQ(preds[k]["frame_idx"], 4 + k);
    EXPECT_EQ(preds[k]["probabilities"].size(), 3u);
    double sum = 0;
    for (const auto &[name, p] : preds[k]["probabilities"].items())
      sum += p.get<double>();
    EXPECT_NEAR(sum, 1.0, 1e-9);
    EXPECT_TRUE(preds[k].contains("phase"));
  }

  // The same stream through the library gives the same probabilities.
  auto artifact = load_model(model);
  StreamEngine engine(artifact, load_scaler(dir / "m.scaler.json"));
  std::istringstream in(read_file(dir / "stream.ndjson"));
  const auto lib = replay(in, engine, ReplayRate::MaxSpeed);
  ASSERT_EQ(lib.size(), preds.size());
  for (std::size_t k = 0; k < lib.size(); ++k)
    EXPECT_EQ(preds[k]["label"], std::string(to_string(lib[k].label)));

  // A malformed frame mid-stream is a runtime failure naming the frame.
  {
    std::ofstream bad(dir / "bad.ndjson");
    bad << extractor_stream(2, 4) << "{\"seq_id\": 1}\n";
  }
  std::string err;
  EXPECT_EQ(run_command(kCli + " predict-stream --model " + q(model) + " " + q(dir / "bad.ndjson") + " 2>&1", &err), 1);
  EXPECT_NE(err.find("stream frame 2"), std::string::npos) << err;
}

TEST(Cli, CrossvalIsReproducible) {
  TempDir dir;
  ASSERT_EQ(run_command(kCli + " synth --out " + q(dir / "data") + " --classes 3 --per-class 5 --seed 4 >/dev/null"), 0);
  const std::string base = kCli + " crossval --manifest " + q(dir / "data" / "manifest.json") +
                           " --k 5 --epochs 1 --dense 8 --filters 2 --seed 7 --out ";
  ASSERT_EQ(run_command(base + q(dir / "a") + " >/dev/null"), 0);
  ASSERT_EQ(run_command(base + q(dir / "b") + " >/dev/null"), 0);
  EXPECT_EQ(read_file(dir / "a" / "report.json"), read_file(dir / "b" / "report.json"));
  const auto doc = json::parse(read_file(dir / "a" / "report.json"));
  EXPECT_EQ(doc["folds"].size(), 5u);
  EXPECT_EQ(doc["pair_count"], 1410);
}

TEST(Cli, FeaturesAndEvaluate) {
  TempDir dir;
  ASSERT_EQ(run_command(kCli + " synth --out " + q(dir / "data") + " --classes 2 --per-class 2 >/dev/null"), 0);
  const auto manifest = q(dir / "data" / "manifest.json");
  std::string out;
  ASSERT_EQ(run_command(kCli + " features --manifest " + manifest + " --preset 61 --mode full", &out), 0);
  std::istringstream lines(out);
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    const auto j = json::parse(line);
    EXPECT_EQ(j["rows"], 4);
    EXPECT_EQ(j["cols"], 3660);
    ASSERT_EQ(j["values"].size(), 4u);
    for (const auto &row : j["values"])
      EXPECT_EQ(row.size(), 3660u);
    ++n;
  }
  EXPECT_EQ(n, 4u);
  ASSERT_EQ(run_command(kCli + " train --manifest " + manifest + " --model " + q(dir / "m.bin") +
                        " --epochs 1 --dense 4 --filters 2 >/dev/null"),
            0);
  ASSERT_EQ(run_command(kCli + " evaluate --manifest " + manifest + " --model " + q(dir / "m.bin") + " --out " +
                        q(dir / "eval.json") + " >/dev/null"),
            0);
  const auto doc = json::parse(read_file(dir / "eval.json"));
  EXPECT_TRUE(doc.contains("accuracy"));
}
