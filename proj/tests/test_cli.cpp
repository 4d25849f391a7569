#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "coda/sample.hpp"
#include "coda/tunnel/codec.hpp"

namespace fs = std::filesystem;

// The binary under test is injected by the build (CODA_CLI).
namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

RunResult run_cli(const std::string& args) {
  const char* bin = std::getenv("CODA_CLI");
  REQUIRE(bin != nullptr);
  const std::string cmd = std::string(bin) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  RunResult r;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) {
    r.output.append(buf.data(), n);
  }
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() /
                    ("coda_cli_" + std::to_string(std::rand()))) {
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

const std::string kTinyRun =
    "--set population.n_users=6 --set population.n_archetypes=3 "
    "--set days=2 --set initial_days=3 --set initial_local_samples=24 "
    "--set exposures_per_day=4 --set eval_set_size=30 --set cloud.k=3 "
    "--set device.train_trigger=10 --set seed=11";

}  // namespace

TEST_CASE("exit codes: usage and config errors are 2") {
  CHECK(run_cli("").exit_code == 2);                       // no subcommand
  CHECK(run_cli("frobnicate").exit_code == 2);             // unknown subcommand
  CHECK(run_cli("stage frobnicate").exit_code == 2);       // unknown stage
  CHECK(run_cli("run --config /no/such/file.cfg").exit_code == 2);
  CHECK(run_cli("show-config --set bogus.key=1").exit_code == 2);
  CHECK(run_cli("show-config --set days=notanumber").exit_code == 2);
  CHECK(run_cli("show-config --set arms=warp").exit_code == 2);
  CHECK(run_cli("--help").exit_code == 0);
}

TEST_CASE("show-config prints the published defaults") {
  const auto r = run_cli("show-config");
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("cloud.k = 100") != std::string::npos);
  CHECK(r.output.find("cloud.batch_size_default = 25") != std::string::npos);
  CHECK(r.output.find("cloud.batch_size_max = 40") != std::string::npos);
  CHECK(r.output.find("cloud.fragment_threshold = 15") != std::string::npos);
  CHECK(r.output.find("cloud.retention_days = 7") != std::string::npos);
  CHECK(r.output.find("tunnel.daily_pull_limit = 12") != std::string::npos);
  CHECK(r.output.find("device.local_limit = 200") != std::string::npos);
  CHECK(r.output.find("device.outside_limit = 200") != std::string::npos);
  CHECK(r.output.find("device.train_trigger = 100") != std::string::npos);
  CHECK(r.output.find("device.sigma = 0.2") != std::string::npos);
  CHECK(r.output.find("device.t = 3") != std::string::npos);
  CHECK(r.output.find("device.t_prime = 7") != std::string::npos);
  CHECK(r.output.find("model.embed_dim = 3") != std::string::npos);
  CHECK(r.output.find("arms = cloud,local,coda") != std::string::npos);
}

TEST_CASE("config file keys are applied and flags override the file") {
  TempDir dir;
  const auto cfg = dir.path() / "exp.cfg";
  std::ofstream(cfg) << "cloud.k = 7\n"
                        "# comment line\n"
                        "device.sigma = 0.35   # trailing comment\n"
                        "days = 9\n";
  auto r = run_cli("show-config --config " + cfg.string());
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("cloud.k = 7") != std::string::npos);
  CHECK(r.output.find("device.sigma = 0.35") != std::string::npos);
  CHECK(r.output.find("days = 9") != std::string::npos);

  // --set wins over the file
  r = run_cli("show-config --config " + cfg.string() + " --set cloud.k=13");
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("cloud.k = 13") != std::string::npos);

  // malformed file lines are reported with their line number
  const auto bad = dir.path() / "bad.cfg";
  std::ofstream(bad) << "cloud.k = 7\nthis is not a pair\n";
  r = run_cli("show-config --config " + bad.string());
  CHECK(r.exit_code == 2);
  CHECK(r.output.find(":2") != std::string::npos);
}

TEST_CASE("run writes the four artifacts and echoes the resolved config") {
  TempDir dir;
  const auto out = (dir.path() / "out").string();
  const auto r = run_cli("run " + kTinyRun + " --out " + out);
  REQUIRE(r.exit_code == 0);
  for (const char* f : {"metrics.csv", "summary.json", "events.ldjson", "resolved.cfg"}) {
    CHECK(fs::exists(fs::path(out) / f));
  }
  const auto resolved = slurp(fs::path(out) / "resolved.cfg");
  CHECK(resolved.find("cloud.k = 3") != std::string::npos);
  CHECK(resolved.find("seed = 11") != std::string::npos);
  // the echoed config reloads cleanly and reproduces itself
  const auto cfg2 = dir.path() / "resolved.cfg";
  fs::copy_file(fs::path(out) / "resolved.cfg", cfg2);
  const auto again = run_cli("show-config --config " + cfg2.string());
  REQUIRE(again.exit_code == 0);
  CHECK(again.output == resolved);
}

TEST_CASE("a fixed seed gives byte-identical outputs across two runs") {
  TempDir dir;
  const auto a = (dir.path() / "a").string();
  const auto b = (dir.path() / "b").string();
  REQUIRE(run_cli("run " + kTinyRun + " --out " + a).exit_code == 0);
  REQUIRE(run_cli("run " + kTinyRun + " --out " + b).exit_code == 0);
  for (const char* f : {"metrics.csv", "summary.json", "events.ldjson"}) {
    CHECK(slurp(fs::path(a) / f) == slurp(fs::path(b) / f));
  }
  // and a different seed actually changes the event stream
  const auto c = (dir.path() / "c").string();
  REQUIRE(run_cli("run " + kTinyRun + " --seed 12 --out " + c).exit_code == 0);
  CHECK(slurp(fs::path(a) / "events.ldjson") != slurp(fs::path(c) / "events.ldjson"));
}

TEST_CASE("stage gen / encode / decode round-trip through files") {
  TempDir dir;
  const auto gen = (dir.path() / "gen.ldjson").string();
  const auto enc = (dir.path() / "enc.txt").string();
  const auto dec = (dir.path() / "dec.ldjson").string();
  REQUIRE(run_cli("stage gen --set population.n_users=4 --user 2 --day 3 --n 5 --out " +
                  gen).exit_code == 0);
  const auto samples = coda::samples_from_ldjson(slurp(gen));
  REQUIRE(samples.size() == 5);
  for (const auto& s : samples) {
    CHECK(s.user_id == 2);
    CHECK(s.day == 3);
  }
  REQUIRE(run_cli("stage encode --in " + gen + " --out " + enc).exit_code == 0);
  // the file holds exactly the wire text for these samples
  CHECK(slurp(enc) == coda::tunnel::encode_payload(samples).text);
  REQUIRE(run_cli("stage decode --in " + enc + " --out " + dec).exit_code == 0);
  CHECK(slurp(dec) == slurp(gen));
}

TEST_CASE("stage metrics recomputes the run's own metrics file") {
  TempDir dir;
  const auto out = (dir.path() / "out").string();
  REQUIRE(run_cli("run " + kTinyRun + " --out " + out).exit_code == 0);
  const auto m = (dir.path() / "m").string();
  REQUIRE(run_cli("stage metrics --in " + out + "/events.ldjson --out " + m)
              .exit_code == 0);
  // AUC rows differ (the recount has no model access); every counting row
  // must agree exactly
  auto non_auc_rows = [](const std::string& text) {
    std::istringstream in(text);
    std::string line, kept;
    while (std::getline(in, line)) {
      if (line.find("auc") == std::string::npos) kept += line + '\n';
    }
    return kept;
  };
  CHECK(non_auc_rows(slurp(fs::path(m) / "metrics.csv")) ==
        non_auc_rows(slurp(fs::path(out) / "metrics.csv")));
  CHECK(fs::exists(fs::path(m) / "summary.json"));
}

TEST_CASE("verify exits 0 and reports its oracle checks") {
  const auto r = run_cli("verify");
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("grad_check ok") != std::string::npos);
  CHECK(r.output.find("codec ok") != std::string::npos);
  CHECK(r.output.find("knn ok") != std::string::npos);
}
