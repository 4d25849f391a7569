#include "coda/sim/sim.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <thread>

#include "coda/error.hpp"
#include "coda/mlkit/train.hpp"

namespace coda::sim {

using json = nlohmann::json;

const char* arm_name(Arm a) {
  switch (a) {
    case Arm::kCloud:
      return "cloud";
    case Arm::kLocal:
      return "local";
    case Arm::kCoda:
      return "coda";
  }
  return "?";
}

// ---------------------------------------------------------------------------

ArmRunner::ArmRunner(Arm arm, const ExperimentConfig& cfg,
                     const synth::Population& pop,
                     const mlkit::ParamStore& global_params,
                     const std::vector<std::vector<Sample>>& initial_history)
    : arm_(arm), cfg_(cfg), pop_(pop) {
  cloud_ = std::make_unique<cloud::CloudStore>(cfg.match);
  const std::size_t n = pop.users().size();
  upload_queues_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t user = pop.users()[i].user_id;
    device::DeviceConfig dc = cfg.device;
    dc.seed = cfg.seed ^ (0xD0000000ull + user);
    auto dev = std::make_unique<device::Device>(user, dc, cfg.cls_model, cfg.rec_model);
    dev->init_model(global_params);
    for (const Sample& s : initial_history[i]) dev->store().add_local(s);
    devices_.push_back(std::move(dev));
    tunnels_.push_back(std::make_unique<tunnel::DownTunnel>(*cloud_, cfg.daily_pull_limit));
  }
  if (arm_ == Arm::kCoda) {
    for (const auto& hist : initial_history) cloud_->add_samples(hist);
  }
}

void ArmRunner::plain_local_train(device::Device& dev, int day) {
  const auto band = dev.store().local_recommender_train(day);
  if (band.empty()) return;
  mlkit::RecommenderModel working(cfg_.rec_model, dev.models().begin_train());
  std::vector<std::size_t> order(band.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(cfg_.seed ^ (dev.id() * 0x9E3779B97F4A7C15ull + day));
  const auto bsz = static_cast<std::size_t>(std::max(1, cfg_.device.minibatch));
  for (int epoch = 0; epoch < cfg_.local_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t pos = 0;
    while (pos < order.size()) {
      mlkit::Minibatch mb;
      const std::size_t end = std::min(pos + bsz, order.size());
      for (std::size_t i = pos; i < end; ++i) {
        mb.add(band[order[i]], band[order[i]]->label);
      }
      pos = end;
      mlkit::sgd_step(working, mb, cfg_.device.recommender_lr);
    }
  }
  dev.models().buffer() = working.params();
  dev.models().commit();
}

void ArmRunner::run_device_day(std::size_t idx, int day,
                               std::vector<Event>& out_events,
                               std::vector<tunnel::LogRecord>& out_logs) {
  device::Device& dev = *devices_[idx];
  const std::uint64_t user = dev.id();

  dev.store().lifecycle_gc(day);

  if (arm_ == Arm::kCoda) {
    std::int64_t trains = 0, kept_total = 0;
    while (true) {
      tunnel::PullResult r;
      try {
        r = tunnels_[idx]->pull_next_batch(user, day);
      } catch (const TransportError&) {
        continue;  // retryable, quota untouched
      }
      if (r.status != tunnel::PullStatus::kBatch) break;
      dev.ingest_matched_batch(r.samples);
    }
    const auto cls = dev.train_sample_classifier(day);
    if (!cls.skipped) ++trains;
    if (dev.classifier_ready()) {
      kept_total += static_cast<std::int64_t>(dev.filter_and_augment());
    }
    if (trains > 0) {
      out_logs.push_back({0, user, day, tunnel::LogEvent::kTrain, trains});
    }
    out_logs.push_back({0, user, day, tunnel::LogEvent::kFilter, kept_total});
  }

  if (arm_ == Arm::kCoda) {
    // end of day: the day's batches are exhausted, train on what is left
    dev.train_recommender(day, /*batches_exhausted=*/true);
  } else if (arm_ == Arm::kLocal) {
    // local-only baseline: plain fine-tuning on the local train band, no
    // validation gate (the gate belongs to the collaborative algorithm)
    plain_local_train(dev, day);
  }

  auto exposures = pop_.gen_exposures(user, day, cfg_.exposures_per_day);
  std::int64_t clicks = 0;
  for (auto& exp : exposures) {
    Sample s = exp.features;
    int best_anim = 0;
    double best_score = -1.0;
    for (int a = 0; a < kNumAnimations; ++a) {
      s.animation = static_cast<Animation>(a);
      const double score = dev.infer(s);
      if (score > best_score) {
        best_score = score;
        best_anim = a;
      }
    }
    s.animation = static_cast<Animation>(best_anim);
    const double p = pop_.click_oracle(user, s.target_item, s.animation);
    const int clicked = exp.click_u < p ? 1 : 0;
    s.label = clicked;
    clicks += clicked;
    out_events.push_back({static_cast<int>(arm_), day, user, clicked});
    dev.store().add_local(s);
    if (arm_ == Arm::kCoda) upload_queues_[idx].push_back(s);
  }
  out_logs.push_back({0, user, day, tunnel::LogEvent::kExposure,
                      static_cast<std::int64_t>(exposures.size())});
  out_logs.push_back({0, user, day, tunnel::LogEvent::kClick, clicks});
}

void ArmRunner::run_work_cycle(int day) {
  if (arm_ == Arm::kCoda) {
    cloud_->gc_expired(day);
    for (std::size_t i = 0; i < devices_.size(); ++i) {
      if (!upload_queues_[i].empty()) {
        cloud_->add_samples(upload_queues_[i]);
        upload_queues_[i].clear();
      }
    }
    cloud_->rebuild_user_vectors();
    for (const auto& dev : devices_) {
      try {
        cloud_->match_and_build(dev->id(), day);
      } catch (const Error&) {
        // user without a vector yet: no matches today
      }
    }
  }

  const std::size_t n = devices_.size();
  std::vector<std::vector<Event>> day_events(n);
  std::vector<std::vector<tunnel::LogRecord>> day_logs(n);
  std::vector<std::string> day_errors(n);

  auto worker = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      try {
        run_device_day(i, day, day_events[i], day_logs[i]);
      } catch (const std::exception& e) {
        day_errors[i] = e.what();
      }
    }
  };

  const int jobs = std::max(1, cfg_.jobs);
  if (jobs == 1 || n < 2) {
    worker(0, n);
  } else {
    std::vector<std::thread> threads;
    const std::size_t chunk = (n + jobs - 1) / jobs;
    for (int j = 0; j < jobs; ++j) {
      const std::size_t begin = static_cast<std::size_t>(j) * chunk;
      if (begin >= n) break;
      threads.emplace_back(worker, begin, std::min(begin + chunk, n));
    }
    for (auto& t : threads) t.join();
  }

  for (std::size_t i = 0; i < n; ++i) {
    events_.insert(events_.end(), day_events[i].begin(), day_events[i].end());
    logs_.report_logs(devices_[i]->id(), day_logs[i]);
    if (!day_errors[i].empty()) {
      errors_.push_back("day " + std::to_string(day) + " device " +
                        std::to_string(devices_[i]->id()) + ": " + day_errors[i]);
    }
  }
}

std::vector<double> ArmRunner::holdout_aucs(
    const std::vector<std::vector<Sample>>& eval_sets,
    const std::vector<bool>& usable) const {
  std::vector<double> out;
  for (std::size_t i = 0; i < devices_.size(); ++i) {
    if (!usable[i]) continue;
    const auto& set = eval_sets[i];
    std::vector<double> scores;
    std::vector<int> labels;
    scores.reserve(set.size());
    for (const Sample& s : set) {
      scores.push_back(devices_[i]->infer(s));
      labels.push_back(s.label);
    }
    out.push_back(mlkit::auc(scores, labels));
  }
  return out;
}

// ---------------------------------------------------------------------------

MetricsReport compute_metrics(const std::vector<Event>& events, int days) {
  MetricsReport report;
  std::map<std::pair<int, int>, std::set<std::uint64_t>> exp_users, clk_users;
  std::map<int, std::set<std::uint64_t>> total_exp_users, total_clk_users;
  for (const Event& e : events) {
    auto& arm = report.arms[e.arm];
    if (arm.per_day.empty()) arm.per_day.resize(static_cast<std::size_t>(days));
    auto& d = arm.per_day[static_cast<std::size_t>(e.day - 1)];
    ++d.exposures;
    d.clicks += e.clicked;
    ++arm.accumulated.exposures;
    arm.accumulated.clicks += e.clicked;
    exp_users[{e.arm, e.day}].insert(e.user);
    total_exp_users[e.arm].insert(e.user);
    if (e.clicked) {
      clk_users[{e.arm, e.day}].insert(e.user);
      total_clk_users[e.arm].insert(e.user);
    }
  }
  auto finish = [](DayMetrics& m, std::int64_t exp_uv, std::int64_t clk_uv) {
    m.exp_uv = exp_uv;
    m.clk_uv = clk_uv;
    if (m.exposures > 0) {
      m.ctr = static_cast<double>(m.clicks) / static_cast<double>(m.exposures);
    }
    if (exp_uv > 0) {
      m.clk_pv_per_exp_uv = static_cast<double>(m.clicks) / static_cast<double>(exp_uv);
      m.clk_uv_per_exp_uv = static_cast<double>(clk_uv) / static_cast<double>(exp_uv);
    }
  };
  for (auto& [arm_id, arm] : report.arms) {
    for (int day = 1; day <= days; ++day) {
      auto& d = arm.per_day[static_cast<std::size_t>(day - 1)];
      finish(d, static_cast<std::int64_t>(exp_users[{arm_id, day}].size()),
             static_cast<std::int64_t>(clk_users[{arm_id, day}].size()));
    }
    finish(arm.accumulated, static_cast<std::int64_t>(total_exp_users[arm_id].size()),
           static_cast<std::int64_t>(total_clk_users[arm_id].size()));
  }
  return report;
}

ExperimentResult run_ab_experiment(const ExperimentConfig& cfg) {
  const auto pop = synth::Population::make(cfg.population);
  const std::size_t n = pop.users().size();

  // shared pre-experiment history, spread across the initial-day window so
  // both local lifecycle bands are populated from day 1
  std::vector<std::vector<Sample>> history(n);
  const int per_day =
      (cfg.initial_local_samples + cfg.initial_days - 1) / std::max(1, cfg.initial_days);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t user = pop.users()[i].user_id;
    int remaining = cfg.initial_local_samples;
    for (int d = 1 - cfg.initial_days; d <= 0 && remaining > 0; ++d) {
      const int take = std::min(per_day, remaining);
      auto day_samples = pop.gen_day(user, d, take);
      history[i].insert(history[i].end(), day_samples.begin(), day_samples.end());
      remaining -= take;
    }
  }

  // global (cloud-only) model over the pooled history
  cloud::CloudStore pool(cfg.match);
  for (const auto& h : history) pool.add_samples(h);
  const auto global_model = pool.train_global(cfg.rec_model, cfg.global_train);

  // shared held-out evaluation sets; users whose set is single-class are
  // skipped in every arm alike
  std::vector<std::vector<Sample>> eval_sets(n);
  std::vector<bool> usable(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    eval_sets[i] = pop.gen_eval_set(pop.users()[i].user_id, cfg.eval_set_size);
    bool pos = false, neg = false;
    for (const auto& s : eval_sets[i]) (s.label == 1 ? pos : neg) = true;
    usable[i] = pos && neg;
  }

  ExperimentResult result;
  for (Arm arm : cfg.arms) {
    ArmRunner runner(arm, cfg, pop, global_model.params(), history);
    for (int day = 1; day <= cfg.days; ++day) runner.run_work_cycle(day);
    result.events.insert(result.events.end(), runner.events().begin(),
                         runner.events().end());
    for (const auto& err : runner.errors()) {
      result.errors.push_back(std::string(arm_name(arm)) + ": " + err);
    }
    auto aucs = runner.holdout_aucs(eval_sets, usable);
    auto& metrics = result.report.arms[static_cast<int>(arm)];
    metrics.per_device_auc = aucs;
    if (!aucs.empty()) {
      double sum = 0.0;
      for (double a : aucs) sum += a;
      metrics.mean_holdout_auc = sum / static_cast<double>(aucs.size());
    }
  }

  MetricsReport counted = compute_metrics(result.events, cfg.days);
  for (auto& [arm_id, metrics] : counted.arms) {
    auto& dst = result.report.arms[arm_id];
    metrics.per_device_auc = dst.per_device_auc;
    metrics.mean_holdout_auc = dst.mean_holdout_auc;
    dst = metrics;
  }
  return result;
}

// ---------------------------------------------------------------------------

namespace {
std::string fmt_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

void csv_row(std::ofstream& out, const char* arm, const std::string& day,
             const char* metric, const std::string& value) {
  out << arm << ',' << day << ',' << metric << ',' << value << '\n';
}

void emit_metrics(std::ofstream& out, const char* arm, const std::string& day,
                  const DayMetrics& m) {
  csv_row(out, arm, day, "exposures", std::to_string(m.exposures));
  csv_row(out, arm, day, "clicks", std::to_string(m.clicks));
  csv_row(out, arm, day, "exp_uv", std::to_string(m.exp_uv));
  csv_row(out, arm, day, "clk_uv", std::to_string(m.clk_uv));
  if (m.ctr) csv_row(out, arm, day, "ctr", fmt_double(*m.ctr));
  if (m.clk_pv_per_exp_uv) {
    csv_row(out, arm, day, "clk_pv_per_exp_uv", fmt_double(*m.clk_pv_per_exp_uv));
  }
  if (m.clk_uv_per_exp_uv) {
    csv_row(out, arm, day, "clk_uv_per_exp_uv", fmt_double(*m.clk_uv_per_exp_uv));
  }
}
}  // namespace

void write_metrics_csv(const MetricsReport& report, int days, const std::string& path) {
  std::ofstream out(path);
  out << "arm,day,metric,value\n";
  for (const auto& [arm_id, arm] : report.arms) {
    const char* name = arm_name(static_cast<Arm>(arm_id));
    for (int day = 1; day <= days; ++day) {
      emit_metrics(out, name, std::to_string(day),
                   arm.per_day[static_cast<std::size_t>(day - 1)]);
    }
    emit_metrics(out, name, "all", arm.accumulated);
    csv_row(out, name, "all", "mean_holdout_auc", fmt_double(arm.mean_holdout_auc));
  }
}

void write_summary_json(const MetricsReport& report, const std::string& path) {
  json j;
  for (const auto& [arm_id, arm] : report.arms) {
    json a;
    a["exposures"] = arm.accumulated.exposures;
    a["clicks"] = arm.accumulated.clicks;
    if (arm.accumulated.ctr) a["ctr"] = *arm.accumulated.ctr;
    if (arm.accumulated.clk_pv_per_exp_uv) {
      a["clk_pv_per_exp_uv"] = *arm.accumulated.clk_pv_per_exp_uv;
    }
    if (arm.accumulated.clk_uv_per_exp_uv) {
      a["clk_uv_per_exp_uv"] = *arm.accumulated.clk_uv_per_exp_uv;
    }
    a["mean_holdout_auc"] = arm.mean_holdout_auc;
    j["arms"][arm_name(static_cast<Arm>(arm_id))] = a;
  }
  auto rel = [&](Arm a, Arm b) -> json {
    auto ia = report.arms.find(static_cast<int>(a));
    auto ib = report.arms.find(static_cast<int>(b));
    if (ia == report.arms.end() || ib == report.arms.end()) return nullptr;
    if (!ia->second.accumulated.ctr || !ib->second.accumulated.ctr ||
        *ib->second.accumulated.ctr == 0.0) {
      return nullptr;
    }
    json d;
    d["ctr_rel"] = *ia->second.accumulated.ctr / *ib->second.accumulated.ctr - 1.0;
    d["auc_abs"] = ia->second.mean_holdout_auc - ib->second.mean_holdout_auc;
    return d;
  };
  j["deltas"]["coda_vs_cloud"] = rel(Arm::kCoda, Arm::kCloud);
  j["deltas"]["coda_vs_local"] = rel(Arm::kCoda, Arm::kLocal);
  std::ofstream out(path);
  out << j.dump(2) << '\n';
}

void write_events_ldjson(const std::vector<Event>& events, const std::string& path) {
  std::ofstream out(path);
  for (const Event& e : events) {
    json j;
    j["arm"] = arm_name(static_cast<Arm>(e.arm));
    j["clicked"] = e.clicked;
    j["day"] = e.day;
    j["user"] = e.user;
    out << j.dump() << '\n';
  }
}

}  // namespace coda::sim
