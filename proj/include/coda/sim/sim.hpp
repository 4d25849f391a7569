#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "coda/cloud/cloud.hpp"
#include "coda/device/device.hpp"
#include "coda/synth/population.hpp"
#include "coda/tunnel/tunnel.hpp"

namespace coda::sim {

enum class Arm : int { kCloud = 0, kLocal = 1, kCoda = 2 };
const char* arm_name(Arm a);

struct ExperimentConfig {
  synth::GeneratorConfig population;
  int days = 14;
  int initial_days = 6;              // pre-experiment history window
  int initial_local_samples = 300;   // per device, spread over initial_days
  int exposures_per_day = 10;
  int eval_set_size = 200;
  cloud::MatchConfig match;
  cloud::GlobalTrainConfig global_train;
  device::DeviceConfig device;
  mlkit::RecommenderConfig rec_model;
  mlkit::ClassifierConfig cls_model;
  int daily_pull_limit = 12;
  int local_epochs = 4;  // daily plain-SGD epochs of the local-only baseline
  int jobs = 1;
  std::vector<Arm> arms = {Arm::kCloud, Arm::kLocal, Arm::kCoda};
  std::uint64_t seed = 1;
};

// One serving decision and its outcome.
struct Event {
  int arm = 0;
  int day = 0;
  std::uint64_t user = 0;
  int clicked = 0;
};

struct DayMetrics {
  std::int64_t exposures = 0;
  std::int64_t clicks = 0;
  std::int64_t exp_uv = 0;
  std::int64_t clk_uv = 0;
  // ratios are absent (nullopt) when there were no exposures
  std::optional<double> ctr;                // clkPV / expPV
  std::optional<double> clk_pv_per_exp_uv;  // clkPV / expUV
  std::optional<double> clk_uv_per_exp_uv;  // clkUV / expUV
};

struct ArmMetrics {
  std::vector<DayMetrics> per_day;  // index = day - 1
  DayMetrics accumulated;
  double mean_holdout_auc = 0.0;
  std::vector<double> per_device_auc;
};

struct MetricsReport {
  std::map<int, ArmMetrics> arms;  // key = static_cast<int>(Arm)
};

// Recount pass over the raw event log; independent of the accumulation the
// runner does along the way.
MetricsReport compute_metrics(const std::vector<Event>& events, int days);

// Full state of one experiment arm across its daily work cycles. All arms
// of one experiment share the population and the exposure streams, nothing
// else.
class ArmRunner {
 public:
  ArmRunner(Arm arm, const ExperimentConfig& cfg, const synth::Population& pop,
            const mlkit::ParamStore& global_params,
            const std::vector<std::vector<Sample>>& initial_history);

  // One full day: upload -> matching -> pulls -> classifier -> filter ->
  // train -> serve. Device failures abort only that device's day.
  void run_work_cycle(int day);

  const std::vector<Event>& events() const { return events_; }
  std::vector<std::string> errors() const { return errors_; }
  const tunnel::LogStore& logs() const { return logs_; }

  std::vector<double> holdout_aucs(
      const std::vector<std::vector<Sample>>& eval_sets,
      const std::vector<bool>& usable) const;

 private:
  void run_device_day(std::size_t idx, int day, std::vector<Event>& out_events,
                      std::vector<tunnel::LogRecord>& out_logs);
  void plain_local_train(device::Device& dev, int day);

  Arm arm_;
  const ExperimentConfig& cfg_;
  const synth::Population& pop_;
  std::unique_ptr<cloud::CloudStore> cloud_;
  std::vector<std::unique_ptr<device::Device>> devices_;
  std::vector<std::unique_ptr<tunnel::DownTunnel>> tunnels_;
  std::vector<std::vector<Sample>> upload_queues_;
  tunnel::LogStore logs_;
  std::vector<Event> events_;
  std::vector<std::string> errors_;
};

struct ExperimentResult {
  MetricsReport report;
  std::vector<Event> events;
  std::vector<std::string> errors;
};

ExperimentResult run_ab_experiment(const ExperimentConfig& cfg);

// Output files: metrics.csv (arm, day, metric, value), summary.json
// (accumulated table with relative deltas), events.ldjson audit log.
void write_metrics_csv(const MetricsReport& report, int days, const std::string& path);
void write_summary_json(const MetricsReport& report, const std::string& path);
void write_events_ldjson(const std::vector<Event>& events, const std::string& path);

}  // namespace coda::sim
