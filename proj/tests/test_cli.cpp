#include <doctest.h>

#include <fstream>
#include <iostream>
#include <sstream>

#include "scratch.hpp"
#include "oct4d/binio.hpp"
#include "oct4d/cli.hpp"

using namespace oct4d;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "oct4d");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  // Keep the console quiet: the tool reports progress on stdout.
  std::ostringstream sink;
  auto* old = std::cout.rdbuf(sink.rdbuf());
  const int code = run_cli(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(old);
  return code;
}

std::vector<std::string> lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

int fields(const std::string& line) { return static_cast<int>(std::count(line.begin(), line.end(), ',')) + 1; }

const std::vector<std::string> kTinyGen = {"gen", "--experiments", "3", "--samples", "14", "--height", "4", "--width", "4",
                                           "--raw-depth", "64", "--max-depth", "1.5", "--split", "0.34,0.33,0.33"};

std::vector<std::string> tiny_model_flags(const std::filesystem::path& dataset) {
  return {"--dataset", dataset.string(), "--arch", "resnet3d-st", "--rep", "3d-st", "--channels", "2", "--blocks", "2",
          "--output-stride", "2", "--batch-size", "4"};
}

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("gen writes a reproducible dataset") {
    ScratchDir dir("cli_gen");
    REQUIRE(run(cat(kTinyGen, {"--seed", "7", "--out", (dir / "a").string()})) == 0);
    REQUIRE(run(cat(kTinyGen, {"--seed", "7", "--out", (dir / "b").string()})) == 0);
    const auto a = binio::read_file(dir / "a" / kDatasetFile);
    CHECK(a == binio::read_file(dir / "b" / kDatasetFile));
    CHECK(std::filesystem::exists(dir / "a" / (std::string(kDatasetFile) + ".txt")));
    const auto d = load_dataset(dir / "a" / kDatasetFile);
    CHECK(d.sample_count() == 42);
    CHECK(d.config.seed == 7);

    REQUIRE(run(cat(kTinyGen, {"--seed", "8", "--kind", "spline", "--out", (dir / "c").string()})) == 0);
    CHECK(load_dataset(dir / "c" / kDatasetFile).config.trajectory.kind == TrajectoryKind::spline);
    CHECK(binio::read_file(dir / "c" / kDatasetFile) != a);

    CHECK(run({"gen", "--split", "0.5,0.5,0.5", "--out", (dir / "x").string()}) == 1);
    CHECK(run({"gen", "--kind", "zigzag", "--out", (dir / "x").string()}) == 1);
    CHECK(run({"gen", "--experiments", "2", "--out", (dir / "x").string()}) == 1);
    CHECK(run({"frobnicate"}) != 0);
    CHECK(run({}) != 0);
  }

  TEST_CASE("train, eval and compare") {
    ScratchDir dir("cli_train");
    REQUIRE(run(cat(kTinyGen, {"--seed", "3", "--out", dir.path.string()})) == 0);
    const auto ds = dir / kDatasetFile;

    REQUIRE(run(cat(cat({"train"}, tiny_model_flags(ds)),
                    {"--history", "2", "--epochs", "2", "--seed", "5", "--out", (dir / "r1").string()})) == 0);
    CHECK(lines(dir / "r1" / kLossFile).size() == 3);
    const auto ck = load_checkpoint(dir / "r1" / kCheckpointFile);
    CHECK(ck.config.family == Family::resnet);
    CHECK(ck.config.height == 4);
    CHECK(ck.config.history == 2);
    CHECK(arch_name(ck.config) == "resnet3d-st");

    const auto metrics = dir / "ev" / kMetricsFile;
    REQUIRE(run({"eval", "--dataset", ds.string(), "--checkpoint", (dir / "r1" / kCheckpointFile).string(), "--out",
                 (dir / "ev").string(), "--run-id", "one", "--plot"}) == 0);
    auto rows = lines(metrics);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0] == report_csv_header());
    CHECK(fields(rows[1]) == 12);
    CHECK(rows[1].rfind("one,resnet3d-st,3d-st,2,0,", 0) == 0);
    CHECK(std::filesystem::exists(dir / "ev" / "one.errors"));
    CHECK(binio::read_file(dir / "ev" / "one.svg").rfind("<svg", 0) == 0);

    REQUIRE(run({"eval", "--dataset", ds.string(), "--checkpoint", (dir / "r1" / kCheckpointFile).string(), "--out",
                 (dir / "ev").string(), "--run-id", "two", "--compare", (dir / "ev" / "one.errors").string()}) == 0);
    CHECK(lines(metrics).size() == 2);
    const auto cmp = lines(dir / "ev" / kComparisonFile);
    REQUIRE(cmp.size() == 2);
    CHECK(fields(cmp[0]) == 13);
    CHECK(fields(cmp[1]) == 13);
    // Same checkpoint, same errors: no pairs remain, p = 1.
    CHECK(cmp[1].ends_with(",1"));
    CHECK(read_errors(dir / "ev" / "one.errors") == read_errors(dir / "ev" / "two.errors"));

    CHECK(run({"eval", "--dataset", ds.string(), "--checkpoint", (dir / "nope").string(), "--out",
               (dir / "ev").string()}) == 1);
    CHECK(run(cat(cat({"train"}, tiny_model_flags(dir / "missing.oct4d")), {"--out", (dir / "r2").string()})) == 1);
    auto bad = tiny_model_flags(ds);
    bad[3] = "resnet4d";
    CHECK(run(cat(cat({"train"}, bad), {"--out", (dir / "r3").string()})) == 1);
    CHECK(run(cat(cat({"train"}, tiny_model_flags(ds)), {"--history", "30", "--out", (dir / "r4").string()})) == 1);
  }

  TEST_CASE("zero learning rate checkpoints the initialisation") {
    ScratchDir dir("cli_lr0");
    REQUIRE(run(cat(kTinyGen, {"--seed", "4", "--out", dir.path.string()})) == 0);
    REQUIRE(run(cat(cat({"train"}, tiny_model_flags(dir / kDatasetFile)),
                    {"--lr", "0", "--epochs", "1", "--seed", "9", "--out", (dir / "r").string()})) == 0);
    const auto ck = load_checkpoint(dir / "r" / kCheckpointFile);
    TrainConfig tc;
    tc.seed = 9;
    TrainState<float> fresh(ck.config, tc);
    for (const auto& p : fresh.net.registry().params) {
      CAPTURE(p.name);
      CHECK(ck.params.at(p.name).storage() == p.var.value().storage());
      CHECK(ck.ema.at(p.name).storage() == p.var.value().storage());
    }
  }

  TEST_CASE("config file defaults yield to flags") {
    ScratchDir dir("cli_config");
    REQUIRE(run(cat(kTinyGen, {"--seed", "2", "--out", dir.path.string()})) == 0);
    std::ofstream(dir / "run.ini") << "[train]\nepochs=3\nhistory=2\n";
    REQUIRE(run(cat(cat({"--config", (dir / "run.ini").string(), "train"}, tiny_model_flags(dir / kDatasetFile)),
                    {"--out", (dir / "a").string()})) == 0);
    CHECK(lines(dir / "a" / kLossFile).size() == 4);
    REQUIRE(run(cat(cat({"--config", (dir / "run.ini").string(), "train"}, tiny_model_flags(dir / kDatasetFile)),
                    {"--epochs", "1", "--out", (dir / "b").string()})) == 0);
    CHECK(lines(dir / "b" / kLossFile).size() == 2);
  }

  TEST_CASE("sweep grid") {
    ScratchDir dir("cli_sweep");
    REQUIRE(run(cat(kTinyGen, {"--seed", "6", "--out", dir.path.string()})) == 0);
    const auto flags = cat(cat({"sweep"}, tiny_model_flags(dir / kDatasetFile)),
                           {"--history", "2,3", "--horizon", "0,1", "--epochs", "1", "--seed", "1"});
    REQUIRE(run(cat(flags, {"--out", (dir / "s1").string()})) == 0);
    const auto rows = lines(dir / "s1" / kSweepFile);
    REQUIRE(rows.size() == 5);
    CHECK(std::filesystem::exists(dir / "s1" / kSweepPlot));
    CHECK(std::filesystem::exists(dir / "s1" / "cells" / "p3_f1" / kCheckpointFile));
    REQUIRE(run(cat(flags, {"--jobs", "2", "--out", (dir / "s2").string()})) == 0);
    CHECK(binio::read_file(dir / "s1" / kSweepFile) == binio::read_file(dir / "s2" / kSweepFile));
  }

  TEST_CASE("csv helpers") {
    ScratchDir dir("cli_csv");
    const auto p = dir / "t.csv";
    append_csv(p, "a,b", {"1,2"});
    append_csv(p, "a,b", {"3,4", "5,6"});
    CHECK(binio::read_file(p) == "a,b\n1,2\n3,4\n5,6\n");
    CHECK_THROWS(append_csv(p, "a,c", {"7,8"}));
    CHECK(binio::read_file(p) == "a,b\n1,2\n3,4\n5,6\n");

    const std::vector<double> e{0.0, 1.5, 1e-17, 123456.789012345};
    write_errors(dir / "x.errors", e);
    CHECK(read_errors(dir / "x.errors") == e);
    CHECK_THROWS(read_errors(dir / "missing.errors"));
  }
}
