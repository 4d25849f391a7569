// coda: configure and run device-cloud collaborative learning experiments,
// or run single pipeline stages for debugging.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <string>

#include "coda/cloud/cloud.hpp"
#include "coda/device/device.hpp"
#include "coda/error.hpp"
#include "coda/mlkit/train.hpp"
#include "coda/sim/sim.hpp"
#include "coda/synth/population.hpp"
#include "coda/tunnel/codec.hpp"

namespace fs = std::filesystem;
using namespace coda;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// ---------------------------------------------------------------------------
// Flat dotted-key configuration

class KeyValues {
 public:
  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(path + ":" + std::to_string(lineno) +
                          ": expected key = value");
      }
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)),
          path + ":" + std::to_string(lineno));
    }
  }

  void set(const std::string& key, const std::string& value,
           const std::string& where = "override") {
    if (key.empty()) throw ConfigError(where + ": empty key");
    values_[key] = value;
    origin_[key] = where;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  template <typename T>
  void apply(const std::string& key, T& out) {
    auto it = values_.find(key);
    if (it == values_.end()) return;
    std::istringstream in(it->second);
    T v{};
    in >> v;
    if (in.fail() || !(in >> std::ws).eof()) {
      throw ConfigError(origin_.at(key) + ": bad value for " + key + ": '" +
                        it->second + "'");
    }
    out = v;
    consumed_.insert(key);
  }

  void apply(const std::string& key, std::string& out) {
    auto it = values_.find(key);
    if (it == values_.end()) return;
    out = it->second;
    consumed_.insert(key);
  }

  void reject_unknown() const {
    for (const auto& [key, _] : values_) {
      if (consumed_.count(key) == 0) {
        throw ConfigError(origin_.at(key) + ": unknown config key: " + key);
      }
    }
  }

 private:
  static std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> origin_;
  std::set<std::string> consumed_;
};

sim::ExperimentConfig resolve_config(KeyValues& kv) {
  sim::ExperimentConfig cfg;
  // published defaults are already baked into the structs; the keys below
  // expose every one of them
  kv.apply("seed", cfg.seed);
  kv.apply("days", cfg.days);
  kv.apply("initial_days", cfg.initial_days);
  kv.apply("initial_local_samples", cfg.initial_local_samples);
  kv.apply("exposures_per_day", cfg.exposures_per_day);
  kv.apply("eval_set_size", cfg.eval_set_size);
  kv.apply("jobs", cfg.jobs);
  kv.apply("local_epochs", cfg.local_epochs);
  kv.apply("tunnel.daily_pull_limit", cfg.daily_pull_limit);

  cfg.population.seed = cfg.seed;  // population follows the experiment seed
  kv.apply("population.seed", cfg.population.seed);
  kv.apply("population.n_users", cfg.population.n_users);
  kv.apply("population.n_archetypes", cfg.population.n_archetypes);
  if (!kv.has("population.n_archetypes")) {
    // small smoke populations: fewer users than the default archetype count
    cfg.population.n_archetypes =
        std::max(2, std::min(cfg.population.n_archetypes, cfg.population.n_users));
  }
  kv.apply("population.vocab_size", cfg.population.vocab_size);
  kv.apply("population.n_items", cfg.population.n_items);
  kv.apply("population.token_focus", cfg.population.token_focus);
  kv.apply("population.click_low", cfg.population.click_low);
  kv.apply("population.click_high", cfg.population.click_high);
  kv.apply("population.user_noise", cfg.population.user_noise);

  kv.apply("cloud.k", cfg.match.k);
  kv.apply("cloud.batch_size_default", cfg.match.batch_size_default);
  kv.apply("cloud.batch_size_max", cfg.match.batch_size_max);
  kv.apply("cloud.fragment_threshold", cfg.match.fragment_threshold);
  kv.apply("cloud.retention_days", cfg.match.retention_days);
  kv.apply("cloud.max_matched_per_round", cfg.match.max_matched_per_round);
  kv.apply("cloud.warehouse_cap", cfg.match.warehouse_cap);
  kv.apply("cloud.global_lr", cfg.global_train.lr);
  kv.apply("cloud.global_epochs", cfg.global_train.epochs);
  kv.apply("cloud.global_minibatch", cfg.global_train.minibatch);

  kv.apply("device.local_limit", cfg.device.store.local_limit);
  kv.apply("device.outside_limit", cfg.device.store.outside_limit);
  kv.apply("device.t", cfg.device.store.t);
  kv.apply("device.t_prime", cfg.device.store.t_prime);
  kv.apply("device.sigma", cfg.device.filter.sigma);
  kv.apply("device.train_denominator", cfg.device.filter.train_denominator);
  kv.apply("device.train_trigger", cfg.device.train_trigger);
  kv.apply("device.minibatch", cfg.device.minibatch);
  kv.apply("device.classifier_lr", cfg.device.classifier_lr);
  kv.apply("device.recommender_lr", cfg.device.recommender_lr);
  kv.apply("device.classifier_epochs", cfg.device.classifier_epochs);

  kv.apply("model.embed_dim", cfg.rec_model.embed_dim);
  kv.apply("model.hidden", cfg.rec_model.hidden);
  kv.apply("classifier.embed_dim", cfg.cls_model.embed_dim);
  kv.apply("classifier.hidden", cfg.cls_model.hidden);

  std::string arms = "cloud,local,coda";
  kv.apply("arms", arms);
  cfg.arms.clear();
  std::istringstream in(arms);
  std::string arm;
  while (std::getline(in, arm, ',')) {
    if (arm == "cloud") cfg.arms.push_back(sim::Arm::kCloud);
    else if (arm == "local") cfg.arms.push_back(sim::Arm::kLocal);
    else if (arm == "coda") cfg.arms.push_back(sim::Arm::kCoda);
    else throw ConfigError("unknown arm: " + arm);
  }
  if (cfg.arms.empty()) throw ConfigError("no arms selected");

  kv.reject_unknown();

  // keep model vocab in sync with the generator
  cfg.rec_model.vocab_size = cfg.population.vocab_size;
  cfg.rec_model.n_items = cfg.population.n_items;
  cfg.rec_model.profile_dim = cfg.population.profile_dim;
  cfg.rec_model.stats_dim = cfg.population.stats_dim;
  cfg.cls_model.vocab_size = cfg.population.vocab_size;

  if (cfg.days < 1 || cfg.population.n_users < 1 || cfg.exposures_per_day < 1) {
    throw ConfigError("days, population.n_users and exposures_per_day must be >= 1");
  }
  return cfg;
}

void print_config(std::ostream& out, const sim::ExperimentConfig& cfg) {
  out << "seed = " << cfg.seed << '\n'
      << "days = " << cfg.days << '\n'
      << "initial_days = " << cfg.initial_days << '\n'
      << "initial_local_samples = " << cfg.initial_local_samples << '\n'
      << "exposures_per_day = " << cfg.exposures_per_day << '\n'
      << "eval_set_size = " << cfg.eval_set_size << '\n'
      << "jobs = " << cfg.jobs << '\n'
      << "local_epochs = " << cfg.local_epochs << '\n'
      << "tunnel.daily_pull_limit = " << cfg.daily_pull_limit << '\n'
      << "population.seed = " << cfg.population.seed << '\n'
      << "population.n_users = " << cfg.population.n_users << '\n'
      << "population.n_archetypes = " << cfg.population.n_archetypes << '\n'
      << "population.vocab_size = " << cfg.population.vocab_size << '\n'
      << "population.n_items = " << cfg.population.n_items << '\n'
      << "population.token_focus = " << cfg.population.token_focus << '\n'
      << "population.click_low = " << cfg.population.click_low << '\n'
      << "population.click_high = " << cfg.population.click_high << '\n'
      << "population.user_noise = " << cfg.population.user_noise << '\n'
      << "cloud.k = " << cfg.match.k << '\n'
      << "cloud.batch_size_default = " << cfg.match.batch_size_default << '\n'
      << "cloud.batch_size_max = " << cfg.match.batch_size_max << '\n'
      << "cloud.fragment_threshold = " << cfg.match.fragment_threshold << '\n'
      << "cloud.retention_days = " << cfg.match.retention_days << '\n'
      << "cloud.max_matched_per_round = " << cfg.match.max_matched_per_round << '\n'
      << "cloud.warehouse_cap = " << cfg.match.warehouse_cap << '\n'
      << "cloud.global_lr = " << cfg.global_train.lr << '\n'
      << "cloud.global_epochs = " << cfg.global_train.epochs << '\n'
      << "cloud.global_minibatch = " << cfg.global_train.minibatch << '\n'
      << "device.local_limit = " << cfg.device.store.local_limit << '\n'
      << "device.outside_limit = " << cfg.device.store.outside_limit << '\n'
      << "device.t = " << cfg.device.store.t << '\n'
      << "device.t_prime = " << cfg.device.store.t_prime << '\n'
      << "device.sigma = " << cfg.device.filter.sigma << '\n'
      << "device.train_denominator = " << cfg.device.filter.train_denominator << '\n'
      << "device.train_trigger = " << cfg.device.train_trigger << '\n'
      << "device.minibatch = " << cfg.device.minibatch << '\n'
      << "device.classifier_lr = " << cfg.device.classifier_lr << '\n'
      << "device.recommender_lr = " << cfg.device.recommender_lr << '\n'
      << "device.classifier_epochs = " << cfg.device.classifier_epochs << '\n'
      << "model.embed_dim = " << cfg.rec_model.embed_dim << '\n'
      << "model.hidden = " << cfg.rec_model.hidden << '\n'
      << "classifier.embed_dim = " << cfg.cls_model.embed_dim << '\n'
      << "classifier.hidden = " << cfg.cls_model.hidden << '\n';
  out << "arms = ";
  for (std::size_t i = 0; i < cfg.arms.size(); ++i) {
    out << (i ? "," : "") << sim::arm_name(cfg.arms[i]);
  }
  out << '\n';
}

// ---------------------------------------------------------------------------
// Shared CLI state

struct Options {
  std::string config_path;
  std::vector<std::string> sets;  // key=value overrides
  std::string out_dir = "out";
};

KeyValues gather(const Options& opt) {
  KeyValues kv;
  if (!opt.config_path.empty()) kv.load_file(opt.config_path);
  for (const std::string& s : opt.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("--set expects key=value, got '" + s + "'");
    }
    kv.set(s.substr(0, eq), s.substr(eq + 1), "--set " + s);
  }
  return kv;
}

std::vector<Sample> read_ldjson_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open input file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return samples_from_ldjson(buf.str());
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << text;
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_run(const Options& opt) {
  KeyValues kv = gather(opt);
  const auto cfg = resolve_config(kv);
  fs::create_directories(opt.out_dir);

  {
    std::ofstream echo(fs::path(opt.out_dir) / "resolved.cfg");
    print_config(echo, cfg);  // provenance: full config used for this run
  }
  const auto result = sim::run_ab_experiment(cfg);
  sim::write_metrics_csv(result.report, cfg.days,
                         (fs::path(opt.out_dir) / "metrics.csv").string());
  sim::write_summary_json(result.report,
                          (fs::path(opt.out_dir) / "summary.json").string());
  sim::write_events_ldjson(result.events,
                           (fs::path(opt.out_dir) / "events.ldjson").string());
  for (const auto& err : result.errors) {
    std::cerr << "device error: " << err << '\n';
  }
  for (const auto& [arm, metrics] : result.report.arms) {
    std::cout << sim::arm_name(static_cast<sim::Arm>(arm))
              << ": ctr=" << (metrics.accumulated.ctr ? *metrics.accumulated.ctr : 0.0)
              << " auc=" << metrics.mean_holdout_auc << '\n';
  }
  return result.errors.empty() ? kExitOk : kExitRuntime;
}

int stage_gen(const Options& opt, std::uint64_t user, int day, int n,
              const std::string& out_file) {
  KeyValues kv = gather(opt);
  const auto cfg = resolve_config(kv);
  const auto pop = synth::Population::make(cfg.population);
  const std::uint64_t uid = user != 0 ? user : pop.users()[0].user_id;
  write_text_file(out_file, to_ldjson(pop.gen_day(uid, day, n)));
  return kExitOk;
}

int stage_match(const Options& opt, const std::string& out_file) {
  KeyValues kv = gather(opt);
  const auto cfg = resolve_config(kv);
  const auto pop = synth::Population::make(cfg.population);
  cloud::CloudStore store(cfg.match);
  for (const auto& u : pop.users()) {
    store.add_samples(pop.gen_day(u.user_id, 0, 20));
  }
  store.rebuild_user_vectors();
  std::ostringstream out;
  for (const auto& u : pop.users()) {
    out << u.user_id << ':';
    const auto r = store.knn_match(u.user_id);
    for (std::size_t i = 0; i < r.users.size(); ++i) {
      out << (i ? "," : "") << r.users[i];
    }
    out << '\n';
  }
  write_text_file(out_file, out.str());
  return kExitOk;
}

int stage_encode(const std::string& in_file, const std::string& out_file) {
  const auto samples = read_ldjson_file(in_file);
  write_text_file(out_file, tunnel::encode_payload(samples).text);
  return kExitOk;
}

int stage_decode(const std::string& in_file, const std::string& out_file) {
  std::ifstream in(in_file);
  if (!in) throw ConfigError("cannot open input file: " + in_file);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) {
    text.pop_back();
  }
  write_text_file(out_file, to_ldjson(tunnel::decode_payload_text(text)));
  return kExitOk;
}

int stage_filter(const Options& opt, const std::string& local_file,
                 const std::string& outside_file, const std::string& out_file) {
  KeyValues kv = gather(opt);
  const auto cfg = resolve_config(kv);
  device::DeviceConfig dc = cfg.device;
  dc.seed = cfg.seed;
  device::Device dev(1, dc, cfg.cls_model, cfg.rec_model);
  for (const auto& s : read_ldjson_file(local_file)) dev.store().add_local(s);
  dev.ingest_matched_batch(read_ldjson_file(outside_file));
  dev.train_sample_classifier(0);
  dev.filter_and_augment();
  std::ostringstream out;
  for (const auto* e : dev.store().filtered_entries()) {
    out << e->sample.sample_id << ' ' << e->score << '\n';
  }
  write_text_file(out_file, out.str());
  return kExitOk;
}

int stage_train(const Options& opt, const std::string& train_file, int day,
                const std::string& out_file) {
  KeyValues kv = gather(opt);
  const auto cfg = resolve_config(kv);
  device::DeviceConfig dc = cfg.device;
  dc.seed = cfg.seed;
  device::Device dev(1, dc, cfg.cls_model, cfg.rec_model);
  mlkit::RecommenderConfig rc = cfg.rec_model;
  rc.seed = cfg.seed;
  dev.init_model(mlkit::RecommenderModel(rc).params());
  for (const auto& s : read_ldjson_file(train_file)) dev.store().add_local(s);
  const auto report = dev.train_recommender(day, true);
  nlohmann::json j;
  j["accepted"] = report.accepted;
  j["event"] = report.event;
  j["final_loss"] = report.final_loss;
  j["skipped"] = report.skipped;
  j["steps"] = report.steps;
  j["validation_auc"] = report.acc;
  write_text_file(out_file, j.dump(2) + "\n");
  return kExitOk;
}

int stage_metrics(const std::string& in_file, const std::string& out_dir) {
  std::ifstream in(in_file);
  if (!in) throw ConfigError("cannot open input file: " + in_file);
  std::vector<sim::Event> events;
  int days = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(in_file + ": bad event line: " + e.what());
    }
    sim::Event e;
    const std::string arm = j.at("arm").get<std::string>();
    if (arm == "cloud") e.arm = 0;
    else if (arm == "local") e.arm = 1;
    else if (arm == "coda") e.arm = 2;
    else throw ConfigError(in_file + ": unknown arm: " + arm);
    e.day = j.at("day").get<int>();
    e.user = j.at("user").get<std::uint64_t>();
    e.clicked = j.at("clicked").get<int>();
    events.push_back(e);
    days = std::max(days, e.day);
  }
  const auto report = sim::compute_metrics(events, days);
  fs::create_directories(out_dir);
  sim::write_metrics_csv(report, days, (fs::path(out_dir) / "metrics.csv").string());
  sim::write_summary_json(report, (fs::path(out_dir) / "summary.json").string());
  return kExitOk;
}

int cmd_verify() {
  // quick self-check of the numeric core: gradient oracle, codec bijection,
  // exact-KNN oracle
  synth::GeneratorConfig sample_gen;
  sample_gen.n_users = 4;
  sample_gen.n_archetypes = 2;
  sample_gen.seed = 7;
  const auto gen = synth::Population::make(sample_gen);
  mlkit::RecommenderConfig rc;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    rc.seed = seed;
    mlkit::RecommenderModel model(rc);
    const auto samples =
        gen.gen_day(gen.users()[seed % 4].user_id, static_cast<int>(seed), 6);
    mlkit::Minibatch batch;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      batch.add(&samples[i], static_cast<int>(i % 2));
    }
    const double err = mlkit::grad_check(model, batch, 1e-5);
    if (err >= 1e-4) {
      std::cerr << "verify: grad_check failed, max rel error " << err << '\n';
      return kExitRuntime;
    }
  }
  std::cout << "verify: grad_check ok\n";

  for (int trial = 0; trial < 20; ++trial) {
    const auto samples = gen.gen_day(gen.users()[trial % 4].user_id, 50 + trial, 8);
    if (tunnel::decode_payload(tunnel::encode_payload(samples)) != samples) {
      std::cerr << "verify: codec round trip failed\n";
      return kExitRuntime;
    }
  }
  std::cout << "verify: codec ok\n";

  synth::GeneratorConfig gc;
  gc.n_users = 30;
  gc.n_archetypes = 5;
  gc.seed = 9;
  const auto pop = synth::Population::make(gc);
  cloud::MatchConfig mc;
  mc.k = 5;
  cloud::CloudStore store(mc);
  for (const auto& u : pop.users()) store.add_samples(pop.gen_day(u.user_id, 0, 10));
  store.rebuild_user_vectors();
  const auto vecs = store.user_vectors();
  for (const auto& v : vecs) {
    // brute force recheck
    std::vector<std::pair<double, std::uint64_t>> scored;
    for (const auto& o : vecs) {
      if (o.user_id == v.user_id) continue;
      double d = 0.0;
      for (std::size_t i = 0; i < o.vec.size(); ++i) {
        d += (o.vec[i] - v.vec[i]) * (o.vec[i] - v.vec[i]);
      }
      scored.emplace_back(d, o.user_id);
    }
    std::sort(scored.begin(), scored.end());
    std::vector<std::uint64_t> want;
    for (int i = 0; i < mc.k; ++i) want.push_back(scored[static_cast<std::size_t>(i)].second);
    if (store.knn_match(v.user_id).users != want) {
      std::cerr << "verify: knn oracle mismatch for user " << v.user_id << '\n';
      return kExitRuntime;
    }
  }
  std::cout << "verify: knn ok\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"device-cloud collaborative learning simulator"};
  app.require_subcommand(1);
  app.fallthrough();  // --config/--set may follow the subcommand

  Options opt;
  app.add_option("--config", opt.config_path, "key=value config file");
  app.add_option("--set", opt.sets, "override a config key (key=value), repeatable");

  auto* run = app.add_subcommand("run", "run the full A/B experiment");
  run->add_option("--out", opt.out_dir, "output directory");
  std::uint64_t flag_seed = 0;
  int flag_days = 0, flag_devices = 0, flag_jobs = 0;
  run->add_option("--seed", flag_seed, "experiment seed");
  run->add_option("--days", flag_days, "simulated days");
  run->add_option("--devices", flag_devices, "number of devices");
  run->add_option("--jobs", flag_jobs, "parallel device workers");

  auto* show = app.add_subcommand("show-config", "print the resolved config");

  auto* stage = app.add_subcommand("stage", "run one pipeline stage");
  std::string stage_name, in_file, out_file = "stage.out", local_file, outside_file;
  std::uint64_t stage_user = 0;
  int stage_day = 0, stage_n = 30;
  stage->add_option("name", stage_name,
                    "gen | match | encode | decode | filter | train | metrics")
      ->required();
  stage->add_option("--in", in_file, "input file");
  stage->add_option("--out", out_file, "output file or directory");
  stage->add_option("--local", local_file, "local samples (ldjson)");
  stage->add_option("--outside", outside_file, "matched samples (ldjson)");
  stage->add_option("--user", stage_user, "user id for gen");
  stage->add_option("--day", stage_day, "day index");
  stage->add_option("--n", stage_n, "samples to generate");

  auto* verify = app.add_subcommand("verify", "run the built-in oracle checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (run->parsed()) {
      if (run->count("--seed") > 0) opt.sets.push_back("seed=" + std::to_string(flag_seed));
      if (run->count("--days") > 0) opt.sets.push_back("days=" + std::to_string(flag_days));
      if (run->count("--devices") > 0) {
        opt.sets.push_back("population.n_users=" + std::to_string(flag_devices));
      }
      if (run->count("--jobs") > 0) opt.sets.push_back("jobs=" + std::to_string(flag_jobs));
      return cmd_run(opt);
    }
    if (show->parsed()) {
      KeyValues kv = gather(opt);
      print_config(std::cout, resolve_config(kv));
      return kExitOk;
    }
    if (verify->parsed()) return cmd_verify();
    if (stage->parsed()) {
      if (stage_name == "gen") return stage_gen(opt, stage_user, stage_day, stage_n, out_file);
      if (stage_name == "match") return stage_match(opt, out_file);
      if (stage_name == "encode") return stage_encode(in_file, out_file);
      if (stage_name == "decode") return stage_decode(in_file, out_file);
      if (stage_name == "filter") {
        return stage_filter(opt, local_file, outside_file, out_file);
      }
      if (stage_name == "train") return stage_train(opt, in_file, stage_day, out_file);
      if (stage_name == "metrics") return stage_metrics(in_file, out_file);
      std::cerr << "unknown stage: " << stage_name << '\n';
      return kExitUsage;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
