#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "coda/sim/sim.hpp"

using namespace coda;
using namespace coda::sim;

// ---------------------------------------------------------------------------
// Metric arithmetic

TEST_CASE("metrics from a hand-computed event log") {
  // arm 0, day 1: users 1 (2 exposures, 1 click) and 2 (1 exposure, 0 clicks)
  // arm 0, day 2: user 1 (2 exposures, 2 clicks)
  // arm 1, day 1: user 3 (4 exposures, 1 click)
  const std::vector<Event> events = {
      {0, 1, 1, 1}, {0, 1, 1, 0}, {0, 1, 2, 0},
      {0, 2, 1, 1}, {0, 2, 1, 1},
      {1, 1, 3, 0}, {1, 1, 3, 0}, {1, 1, 3, 1}, {1, 1, 3, 0},
  };
  const auto report = compute_metrics(events, 2);
  REQUIRE(report.arms.size() == 2);

  const auto& a0 = report.arms.at(0);
  REQUIRE(a0.per_day.size() == 2);
  CHECK(a0.per_day[0].exposures == 3);
  CHECK(a0.per_day[0].clicks == 1);
  CHECK(a0.per_day[0].exp_uv == 2);
  CHECK(a0.per_day[0].clk_uv == 1);
  CHECK(*a0.per_day[0].ctr == doctest::Approx(1.0 / 3.0));
  CHECK(*a0.per_day[0].clk_pv_per_exp_uv == doctest::Approx(0.5));
  CHECK(*a0.per_day[0].clk_uv_per_exp_uv == doctest::Approx(0.5));

  CHECK(a0.per_day[1].exposures == 2);
  CHECK(a0.per_day[1].clicks == 2);
  CHECK(*a0.per_day[1].ctr == doctest::Approx(1.0));

  // accumulated: 5 exposures, 3 clicks, 2 distinct exposed users, 1 clicker
  CHECK(a0.accumulated.exposures == 5);
  CHECK(a0.accumulated.clicks == 3);
  CHECK(a0.accumulated.exp_uv == 2);
  CHECK(a0.accumulated.clk_uv == 1);
  CHECK(*a0.accumulated.ctr == doctest::Approx(0.6));
  CHECK(*a0.accumulated.clk_pv_per_exp_uv == doctest::Approx(1.5));
  CHECK(*a0.accumulated.clk_uv_per_exp_uv == doctest::Approx(0.5));

  const auto& a1 = report.arms.at(1);
  CHECK(*a1.per_day[0].ctr == doctest::Approx(0.25));
  CHECK(a1.per_day[1].exposures == 0);
  CHECK_FALSE(a1.per_day[1].ctr.has_value());  // no exposures: ratio absent
  CHECK_FALSE(a1.per_day[1].clk_pv_per_exp_uv.has_value());
}

// ---------------------------------------------------------------------------
// Experiment harness

namespace {
ExperimentConfig tiny_experiment(std::uint64_t seed = 5) {
  ExperimentConfig cfg;
  cfg.population.n_users = 8;
  cfg.population.n_archetypes = 4;
  cfg.population.seed = seed;
  cfg.days = 3;
  cfg.initial_days = 3;
  cfg.initial_local_samples = 36;
  cfg.exposures_per_day = 6;
  cfg.eval_set_size = 60;
  cfg.match.k = 4;
  cfg.match.max_matched_per_round = 60;
  cfg.global_train.epochs = 1;
  cfg.device.train_trigger = 10;
  cfg.seed = seed;
  return cfg;
}
}  // namespace

TEST_CASE("the experiment is deterministic and fully paired across arms") {
  const auto cfg = tiny_experiment();
  const auto r1 = run_ab_experiment(cfg);
  const auto r2 = run_ab_experiment(cfg);
  CHECK(r1.errors.empty());
  REQUIRE(r1.events.size() == r2.events.size());
  for (std::size_t i = 0; i < r1.events.size(); ++i) {
    CHECK(r1.events[i].arm == r2.events[i].arm);
    CHECK(r1.events[i].day == r2.events[i].day);
    CHECK(r1.events[i].user == r2.events[i].user);
    CHECK(r1.events[i].clicked == r2.events[i].clicked);
  }
  // paired design: every arm sees the identical exposure opportunities
  std::map<int, std::size_t> per_arm;
  for (const auto& e : r1.events) ++per_arm[e.arm];
  REQUIRE(per_arm.size() == 3);
  const std::size_t want = static_cast<std::size_t>(cfg.population.n_users) *
                           static_cast<std::size_t>(cfg.days) *
                           static_cast<std::size_t>(cfg.exposures_per_day);
  for (const auto& [arm, n] : per_arm) CHECK(n == want);
}

TEST_CASE("reported metrics equal an independent recount of the event log") {
  const auto cfg = tiny_experiment(6);
  const auto result = run_ab_experiment(cfg);
  const auto recount = compute_metrics(result.events, cfg.days);
  for (const auto& [arm, metrics] : recount.arms) {
    const auto& got = result.report.arms.at(arm);
    CHECK(got.accumulated.exposures == metrics.accumulated.exposures);
    CHECK(got.accumulated.clicks == metrics.accumulated.clicks);
    CHECK(got.accumulated.exp_uv == metrics.accumulated.exp_uv);
    CHECK(got.accumulated.clk_uv == metrics.accumulated.clk_uv);
    for (int d = 0; d < cfg.days; ++d) {
      CHECK(got.per_day[static_cast<std::size_t>(d)].exposures ==
            metrics.per_day[static_cast<std::size_t>(d)].exposures);
      CHECK(got.per_day[static_cast<std::size_t>(d)].clicks ==
            metrics.per_day[static_cast<std::size_t>(d)].clicks);
    }
    // holdout AUC is attached per arm and averages its per-device values
    CHECK_FALSE(got.per_device_auc.empty());
    double sum = 0.0;
    for (double a : got.per_device_auc) {
      CHECK(a >= 0.0);
      CHECK(a <= 1.0);
      sum += a;
    }
    CHECK(got.mean_holdout_auc ==
          doctest::Approx(sum / static_cast<double>(got.per_device_auc.size())));
  }
}

TEST_CASE("parallel device execution reproduces the sequential run") {
  auto cfg = tiny_experiment(7);
  cfg.jobs = 1;
  const auto seq = run_ab_experiment(cfg);
  cfg.jobs = 4;
  const auto par = run_ab_experiment(cfg);
  REQUIRE(seq.events.size() == par.events.size());
  for (std::size_t i = 0; i < seq.events.size(); ++i) {
    CHECK(seq.events[i].arm == par.events[i].arm);
    CHECK(seq.events[i].user == par.events[i].user);
    CHECK(seq.events[i].clicked == par.events[i].clicked);
  }
  for (const auto& [arm, metrics] : seq.report.arms) {
    CHECK(metrics.mean_holdout_auc ==
          doctest::Approx(par.report.arms.at(arm).mean_holdout_auc));
  }
}

TEST_CASE("arm subsets run independently") {
  auto cfg = tiny_experiment(8);
  cfg.arms = {Arm::kLocal};
  const auto result = run_ab_experiment(cfg);
  std::set<int> arms;
  for (const auto& e : result.events) arms.insert(e.arm);
  CHECK(arms == std::set<int>{static_cast<int>(Arm::kLocal)});
  CHECK(result.report.arms.size() == 1);
}

// ---------------------------------------------------------------------------
// Writers

TEST_CASE("metric and event writers produce parseable files") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "coda_sim_writers";
  fs::create_directories(dir);
  const auto cfg = tiny_experiment(9);
  const auto result = run_ab_experiment(cfg);

  const auto csv = (dir / "metrics.csv").string();
  write_metrics_csv(result.report, cfg.days, csv);
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  CHECK(header == "arm,day,metric,value");
  std::size_t rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    CHECK(std::count(line.begin(), line.end(), ',') == 3);
    ++rows;
  }
  CHECK(rows > 3u * 3u * 4u);  // 3 arms x 3 days x >=4 metrics plus totals

  const auto jsn = (dir / "summary.json").string();
  write_summary_json(result.report, jsn);
  std::ifstream jin(jsn);
  const auto j = nlohmann::json::parse(jin);
  CHECK(j.at("arms").size() == 3);
  for (const char* arm : {"cloud", "local", "coda"}) {
    CHECK(j.at("arms").at(arm).at("exposures").get<std::int64_t>() ==
          result.report.arms.at(0).accumulated.exposures);
    CHECK(j.at("arms").at(arm).contains("mean_holdout_auc"));
  }
  CHECK(j.at("deltas").contains("coda_vs_cloud"));

  const auto ldj = (dir / "events.ldjson").string();
  write_events_ldjson(result.events, ldj);
  std::ifstream lin(ldj);
  std::size_t n = 0;
  while (std::getline(lin, line)) {
    const auto e = nlohmann::json::parse(line);
    CHECK(e.contains("arm"));
    CHECK(e.contains("clicked"));
    ++n;
  }
  CHECK(n == result.events.size());
  fs::remove_all(dir);
}
