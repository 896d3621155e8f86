#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <string>

#include "dmseg/io.hpp"

namespace fs = std::filesystem;
using dmseg::io::json;

namespace {

struct Run {
  int status = -1;
  std::string output;  // stdout and stderr
};

Run run(const std::string& args) {
  const std::string cmd = std::string(DMSEG_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int raw = ::pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

// Scratch directory shared by the cases in this file.
const fs::path& scratch() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "dmseg_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string at(const std::string& name) { return (scratch() / name).string(); }

// Standard phantom slice, written once.
const std::string& standard_volume() {
  static const std::string path = [] {
    const std::string p = at("standard.vol");
    REQUIRE(run("phantom --variant standard --seed 5 --out " + p).status == 0);
    return p;
  }();
  return path;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("phantom is byte-identical for a fixed seed") {
  REQUIRE(run("phantom --variant standard --seed 3 --out " + at("a.vol")).status == 0);
  REQUIRE(run("phantom --variant standard --seed 3 --out " + at("b.vol") + " --truth " +
              at("b_truth.csv")).status == 0);
  CHECK(dmseg::io::read_file(at("a.vol")) == dmseg::io::read_file(at("b.vol")));
  CHECK(dmseg::io::read_file(at("a.truth.csv")) == dmseg::io::read_file(at("b_truth.csv")));
  REQUIRE(run("phantom --variant standard --seed 4 --out " + at("c.vol")).status == 0);
  CHECK(dmseg::io::read_file(at("a.vol")) != dmseg::io::read_file(at("c.vol")));
}

TEST_CASE("eval of truth against itself is all zeros") {
  const std::string truth = at("a.truth.csv");
  REQUIRE(fs::exists(truth));
  const Run r = run("eval --pred " + truth + " --truth " + truth +
                    " --spacing 13.67,4.81,24.41 --out " + at("eval.json"));
  CHECK(r.status == 0);
  const json j = json::parse(dmseg::io::read_file(at("eval.json")));
  CHECK(j["axial_um"] == 4.81);
  CHECK(j["overall"]["unsigned_mean_um"] == 0.0);
  CHECK(j["overall"]["signed_mean_px"] == 0.0);
  CHECK(j["surfaces"].size() == 12);
}

TEST_CASE("segment2d emits twelve surfaces and a json decision log") {
  const std::string out = at("seg.csv");
  const std::string log = at("seg.jsonl");
  const Run r = run("segment2d --in " + standard_volume() + " --out " + out + " --overlay " +
                    at("seg.ppm") + " --log json --log-file " + log);
  REQUIRE(r.status == 0);
  const dmseg::SurfaceSet s = dmseg::io::decode_surfaces(dmseg::io::read_file(out));
  CHECK(s.count() == 12);
  CHECK(s.slices == 1);
  bool map = false, trail = false, summary = false;
  const std::string text = dmseg::io::read_file(log);
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t eol = text.find('\n', pos);
    const json e = json::parse(text.substr(pos, eol - pos));
    pos = eol + 1;
    if (e["event"] == "map") map = map || e["k_elbow"].is_number();
    if (e["event"] == "trail") trail = true;
    if (e["event"] == "summary") {
      summary = true;
      CHECK(e["surface_count"] == 12);
    }
  }
  CHECK(map);
  CHECK(trail);
  CHECK(summary);
  CHECK(dmseg::io::read_file(at("seg.ppm")).rfind("P6\n650 512\n255\n", 0) == 0);
}

TEST_CASE("thread count does not change the output") {
  REQUIRE(run("--threads 1 segment2d --in " + standard_volume() + " --out " + at("t1.csv")).status == 0);
  REQUIRE(run("segment2d --in " + standard_volume() + " --out " + at("t8.csv") + " --threads 8").status == 0);
  CHECK(dmseg::io::read_file(at("t1.csv")) == dmseg::io::read_file(at("t8.csv")));
}

TEST_CASE("PGM input gives the same result as the volume slice") {
  REQUIRE(run("phantom --variant standard --seed 5 --out " + at("p.vol") + " --pgm " + at("p.pgm")).status == 0);
  REQUIRE(run("segment2d --in " + at("p.pgm") + " --out " + at("p_pgm.csv")).status == 0);
  REQUIRE(run("segment2d --in " + at("p.vol") + " --slice 0 --out " + at("p_vol.csv")).status == 0);
  CHECK(dmseg::io::read_file(at("p_pgm.csv")) == dmseg::io::read_file(at("p_vol.csv")));
}

TEST_CASE("errors are reported as one machine-readable line") {
  const Run missing = run("segment2d --in " + at("nope.vol") + " --out " + at("x.csv"));
  CHECK(missing.status != 0);
  CHECK(missing.output.rfind("ERROR IO: ", 0) == 0);

  dmseg::io::write_file(at("bad.json"), R"({"pipeline":{"tau":"one","extra":true}})");
  const Run bad = run("segment2d --in " + standard_volume() + " --config " + at("bad.json") +
                      " --out " + at("x.csv"));
  CHECK(bad.status != 0);
  CHECK(bad.output.rfind("ERROR CONFIG: ", 0) == 0);
  CHECK(bad.output.find("/pipeline/tau") != std::string::npos);
  CHECK(bad.output.find("/pipeline/extra") != std::string::npos);

  dmseg::io::write_file(at("trunc.vol"), R"({"magic":"DMSEG-VOL1","dims":[20,20,1],"spacing_um":[1,1,1],"dtype":"u8"})"
                                         "\nabc");
  const Run trunc = run("segment2d --in " + at("trunc.vol") + " --out " + at("x.csv"));
  CHECK(trunc.output.rfind("ERROR PARSE: byte 77", 0) == 0);

  const Run usage = run("segment2d --out " + at("x.csv"));
  CHECK(usage.status != 0);
  CHECK(usage.output.rfind("ERROR USAGE: ", 0) == 0);
}

TEST_CASE("a malformed DMSEG_SEED is rejected") {
  const Run r = run("segment2d --in " + standard_volume() + " --out " + at("x.csv"));
  CHECK(r.status == 0);
  const std::string cmd = "env DMSEG_SEED=oops " + std::string(DMSEG_CLI_PATH) + " segment2d --in " +
                          standard_volume() + " --out " + at("x.csv") + " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  char buf[256] = {};
  const std::size_t n = std::fread(buf, 1, sizeof buf - 1, pipe);
  CHECK(WEXITSTATUS(::pclose(pipe)) != 0);
  CHECK(std::string(buf, n).rfind("ERROR CONFIG: ", 0) == 0);
}

TEST_CASE("sigma-scan and eigplot tables") {
  REQUIRE(run("sigma-scan --in " + standard_volume() + " --grid 0.001:10:21 --out " + at("scan.csv")).status == 0);
  const std::string scan = dmseg::io::read_file(at("scan.csv"));
  CHECK(scan.rfind("sigma,L,slope,in_region\n", 0) == 0);
  CHECK(std::count(scan.begin(), scan.end(), '\n') == 22);

  REQUIRE(run("eigplot --in " + standard_volume() + " --stage 1 --out " + at("eig.csv")).status == 0);
  const std::string eig = dmseg::io::read_file(at("eig.csv"));
  CHECK(eig.rfind("map,index,eigenvalue,elbow_k,k_used\nstage1,0,1,3,3\n", 0) == 0);

  CHECK(run("sigma-scan --in " + standard_volume() + " --grid 1:0.1:5").output.rfind("ERROR PARAMETER", 0) == 0);
}

TEST_CASE("schema subcommand prints the published schema") {
  REQUIRE(run("schema --out " + at("schema.json")).status == 0);
  CHECK(json::parse(dmseg::io::read_file(at("schema.json"))) ==
        json::parse(dmseg::io::read_file(DMSEG_SOURCE_DIR "/schema/config.schema.json")));
}

}  // TEST_SUITE
