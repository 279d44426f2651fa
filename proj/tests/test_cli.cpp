#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path& scratch() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "egat_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(EGAT_CLI) + " " + args + " >" +
                          (scratch() / "stdout.txt").string() + " 2>" +
                          (scratch() / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string out(const std::string& name) { return (scratch() / name).string(); }

const std::string kTiny =
    "--set model.embed_dim=4 --set model.attention_dim=4 --set model.heads=1 "
    "--set model.skip_dim=4 --set model.head_hidden=4 --set train.batches_per_epoch=2 "
    "--set train.eval_windows=4 --set train.test_windows=4";

}  // namespace

TEST_CASE("synth is deterministic and writes a manifest") {
  const std::string args = "synth --nodes 12 --steps 400 --expand-node-ratio 0.25 --seed 7 -o ";
  REQUIRE(run(args + out("a")) == 0);
  REQUIRE(run(args + out("b")) == 0);
  for (const char* f : {"sensors.csv", "readings.csv", "truth.csv", "scenario.cfg"})
    CHECK(slurp(scratch() / "a" / f) == slurp(scratch() / "b" / f));
  const auto m = nlohmann::json::parse(slurp(scratch() / "a" / "manifest.json"));
  CHECK(m["command"] == "synth");
  CHECK(m["seed"] == 7);
  CHECK(m["result"]["new_sensors"] == 3);
  CHECK(m["outputs"].size() == 4);

  REQUIRE(run("synth --nodes 12 --steps 400 --seed 8 -o " + out("c")) == 0);
  CHECK(slurp(scratch() / "a" / "readings.csv") != slurp(scratch() / "c" / "readings.csv"));
}

TEST_CASE("train, expand and infer-virtual chain through files") {
  REQUIRE(run("synth --nodes 12 --steps 600 --expand-node-ratio 0.25 --expand-time-ratio 0.4 -o " +
              out("d")) == 0);
  REQUIRE(run("train --data " + out("d") + " --epochs 1 " + kTiny + " -o " + out("m1")) == 0);
  for (const char* f : {"model.ckpt", "normalizer.csv", "curve.csv", "metrics.csv"})
    CHECK(fs::exists(scratch() / "m1" / f));
  REQUIRE(run("train --data " + out("d") + " --epochs 1 " + kTiny + " -o " + out("m1b")) == 0);
  CHECK(slurp(scratch() / "m1" / "metrics.csv") == slurp(scratch() / "m1b" / "metrics.csv"));
  CHECK(slurp(scratch() / "m1" / "model.ckpt") == slurp(scratch() / "m1b" / "model.ckpt"));
  const auto m1 = nlohmann::json::parse(slurp(scratch() / "m1" / "manifest.json"));
  CHECK(m1["result"]["sensors"] == 9);
  CHECK(m1["inputs"][0]["fnv1a64"].get<std::string>().size() == 16);

  REQUIRE(run("expand --data " + out("d") + " --checkpoint " + out("m1/model.ckpt") +
              " --epochs 1 " + kTiny + " -o " + out("m2")) == 0);
  const auto m2 = nlohmann::json::parse(slurp(scratch() / "m2" / "manifest.json"));
  CHECK(m2["result"]["old_sensors"] == 9);
  CHECK(m2["result"]["new_sensors"] == 3);
  CHECK(m2["result"]["distance_evaluations"].get<int>() <= 12 * 3);
  const auto graph = slurp(scratch() / "m2" / "graph.txt");
  CHECK_FALSE(graph.empty());

  {
    std::ofstream q(out("queries.csv"));
    q << "query_id,lat,lon\n";
    std::ifstream s(out("d/sensors.csv"));
    std::string header, first;
    std::getline(s, header);
    std::getline(s, first);
    std::istringstream row(first);
    std::string id, lat, lon;
    std::getline(row, id, ',');
    std::getline(row, lat, ',');
    std::getline(row, lon, ',');
    q << "near," << lat << ',' << lon << "\nfar,0,0\n";
  }
  const std::string infer = "infer-virtual --data " + out("d") + " --checkpoint " +
                            out("m2/model.ckpt") + " --queries " + out("queries.csv");
  CHECK(run(infer + " -o " + out("p")) == 3);
  CHECK(slurp(scratch() / "stderr.txt").find("far") != std::string::npos);
  REQUIRE(run(infer + " --skip-uncovered -o " + out("p")) == 0);
  const auto pred = slurp(scratch() / "p" / "predictions.csv");
  CHECK(pred.rfind("query_id,t+1,", 0) == 0);
  CHECK(pred.find("near,") != std::string::npos);
  CHECK(pred.find("far,") == std::string::npos);
}

TEST_CASE("bench-expand reports evaluation counts") {
  REQUIRE(run("bench-expand --n 100 --delta 5 --k 4 --repeats 1 -o " + out("bench")) == 0);
  const auto csv = slurp(scratch() / "bench" / "bench.csv");
  std::istringstream in(csv);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header.rfind("n,delta,k,incremental_evaluations,full_evaluations", 0) == 0);
  std::istringstream cells(row);
  std::string n, d, k, inc, full;
  std::getline(cells, n, ',');
  std::getline(cells, d, ',');
  std::getline(cells, k, ',');
  std::getline(cells, inc, ',');
  std::getline(cells, full, ',');
  CHECK(n == "100");
  CHECK(std::stoul(inc) <= 105 * 5);
  CHECK(std::stoul(full) == 105 * 104 / 2);
}

TEST_CASE("exit codes") {
  CHECK(run("--help") == 0);
  CHECK(run("") == 2);
  CHECK(run("synth --nodes") == 2);
  CHECK(run("train") == 2);
  CHECK(run("synth --nodes 12 --steps 400 --set nonsense=1 -o " + out("x")) == 2);
  CHECK(run("synth --nodes 12 -o " + out("x") + " --expand-node-ratio 1.5") == 2);
  CHECK(run("train --data " + out("missing") + " -o " + out("x")) == 3);
  {
    std::ofstream bad(out("bad.ckpt"));
    bad << "not a checkpoint\n";
  }
  CHECK(run("expand --data " + out("d") + " --checkpoint " + out("bad.ckpt") + " -o " +
            out("x")) == 3);
}
