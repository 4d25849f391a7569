#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <random>
#include <set>

#include "coda/device/device.hpp"
#include "coda/device/model_store.hpp"
#include "coda/device/store.hpp"
#include "coda/error.hpp"
#include "coda/synth/population.hpp"
#include "helpers.hpp"

using namespace coda;
using namespace coda::device;

namespace {
Sample day_sample(std::uint64_t sid, int day, int label = 0) {
  Sample s;
  s.sample_id = sid;
  s.user_id = 1;
  s.day = day;
  s.profile = {0.0, 0.0, 0.0, 0.0};
  s.item_clicks = {0};
  s.behavior_seq = {1, 2};
  s.behavior_stats = {1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  s.label = label;
  return s;
}
}  // namespace

// ---------------------------------------------------------------------------
// DeviceStore: forced cleanup

TEST_CASE("local table cleans to half before the insert that would overflow") {
  StoreConfig cfg;
  cfg.local_limit = 8;
  DeviceStore store(cfg);
  // days chosen so the eviction order is fully determined: oldest days first
  const int days[] = {5, 2, 9, 2, 7, 1, 8, 6};
  for (int i = 0; i < 8; ++i) {
    store.add_local(day_sample(static_cast<std::uint64_t>(i + 1), days[i]));
  }
  CHECK(store.local_size() == 8);
  const auto r = store.add_local(day_sample(100, 4));
  // keep ceil(8/2) = 4 of the old entries, evict 4, then insert
  CHECK(r.evicted == 4);
  CHECK(store.local_size() == 5);
  std::set<std::uint64_t> ids;
  for (const Sample* s : store.local_all()) ids.insert(s->sample_id);
  // survivors: days 9, 8, 7, 6 (ids 3, 7, 5, 8) plus the new sample
  CHECK(ids == std::set<std::uint64_t>{3, 5, 7, 8, 100});
}

TEST_CASE("local cleanup breaks day ties by insertion order") {
  StoreConfig cfg;
  cfg.local_limit = 4;
  DeviceStore store(cfg);
  for (std::uint64_t i = 1; i <= 4; ++i) {
    store.add_local(day_sample(i, 3));  // identical day: seq decides
  }
  store.add_local(day_sample(9, 3));
  std::set<std::uint64_t> ids;
  for (const Sample* s : store.local_all()) ids.insert(s->sample_id);
  CHECK(ids == std::set<std::uint64_t>{3, 4, 9});  // 1 and 2 inserted earliest
}

TEST_CASE("outside table evicts lowest scores, unscored counting as zero") {
  StoreConfig cfg;
  cfg.outside_limit = 6;
  DeviceStore store(cfg);
  std::vector<Sample> wave;
  for (std::uint64_t i = 1; i <= 6; ++i) wave.push_back(day_sample(i, 0));
  store.ingest_matched(wave);
  store.record_score(2, 0.9);
  store.record_score(4, 0.5);
  store.record_score(5, 0.05);
  // pending 1, 3, 6 count as score 0; eviction order 1, 3, 6 then 5
  const auto r = store.ingest_matched({day_sample(50, 0)});
  CHECK(r.evicted == 3);
  CHECK(store.outside_size() == 4);
  std::set<std::uint64_t> ids;
  for (const auto* e : store.filtered_entries()) ids.insert(e->sample.sample_id);
  CHECK(ids == std::set<std::uint64_t>{2, 4, 5});
  REQUIRE(store.pending_entries().size() == 1);
  CHECK(store.pending_entries()[0]->sample.sample_id == 50);
}

TEST_CASE("randomized operation sequences never violate the size limits") {
  StoreConfig cfg;
  cfg.local_limit = 17;  // odd limits exercise the ceil in the half rule
  cfg.outside_limit = 13;
  DeviceStore store(cfg);
  std::mt19937_64 rng(99);
  std::vector<std::uint64_t> outside_ids;
  std::uint64_t next_id = 1;
  for (int op = 0; op < 10000; ++op) {
    switch (rng() % 5) {
      case 0:
        store.add_local(day_sample(next_id++, static_cast<int>(rng() % 20)));
        break;
      case 1: {
        std::vector<Sample> wave;
        const std::size_t n = 1 + rng() % 4;
        for (std::size_t i = 0; i < n; ++i) {
          const std::uint64_t id = next_id++;
          wave.push_back(day_sample(id, static_cast<int>(rng() % 20)));
          outside_ids.push_back(id);
        }
        store.ingest_matched(wave);
        break;
      }
      case 2: {
        const auto pending = store.pending_entries();
        if (!pending.empty()) {
          const auto* e = pending[rng() % pending.size()];
          store.record_score(e->sample.sample_id,
                             static_cast<double>(rng() % 100) / 100.0);
        }
        break;
      }
      case 3:
        if (!outside_ids.empty()) {
          store.discard_outside({outside_ids[rng() % outside_ids.size()]});
        }
        break;
      case 4:
        store.lifecycle_gc(static_cast<int>(rng() % 25));
        break;
    }
    REQUIRE(store.local_size() <= cfg.local_limit);
    REQUIRE(store.outside_size() <= cfg.outside_limit);
    // pending and filtered partition the outside table
    REQUIRE(store.pending_entries().size() + store.filtered_entries().size() ==
            store.outside_size());
  }
}

// ---------------------------------------------------------------------------
// DeviceStore: lifecycle bands

TEST_CASE("local age bands split validation, training and removal") {
  StoreConfig cfg;  // t = 3, t' = 7
  DeviceStore store(cfg);
  for (int day = 0; day <= 10; ++day) {
    store.add_local(day_sample(static_cast<std::uint64_t>(day + 1), day));
  }
  const int now = 10;
  auto ids_of = [](const std::vector<const Sample*>& v) {
    std::set<int> out;
    for (const Sample* s : v) out.insert(s->day);
    return out;
  };
  // age 0..3 validates, age 4..7 trains, age > 7 is removed by gc
  CHECK(ids_of(store.local_validation(now)) == std::set<int>{7, 8, 9, 10});
  CHECK(ids_of(store.local_recommender_train(now)) == std::set<int>{3, 4, 5, 6});
  const auto gc = store.lifecycle_gc(now);
  CHECK(gc.local_removed == 3);  // days 0, 1, 2
  CHECK(store.local_size() == 8);
  CHECK(ids_of(store.local_validation(now)) == std::set<int>{7, 8, 9, 10});
  CHECK(ids_of(store.local_recommender_train(now)) == std::set<int>{3, 4, 5, 6});
}

TEST_CASE("band boundaries are inclusive exactly as specified") {
  StoreConfig cfg;
  cfg.t = 2;
  cfg.t_prime = 5;
  DeviceStore store(cfg);
  for (int day = 0; day <= 8; ++day) {
    store.add_local(day_sample(static_cast<std::uint64_t>(day + 1), day));
  }
  const int now = 8;
  CHECK(store.local_validation(now).size() == 3);        // ages 0, 1, 2
  CHECK(store.local_recommender_train(now).size() == 3); // ages 3, 4, 5
  CHECK(store.lifecycle_gc(now).local_removed == 3);     // ages 6, 7, 8
}

TEST_CASE("score bookkeeping rejects unknown ids") {
  DeviceStore store({});
  store.ingest_matched({day_sample(1, 0)});
  CHECK_THROWS_AS(store.record_score(2, 0.5), Error);
  store.record_score(1, 0.5);
  CHECK(store.discard_outside({1}) == 1);
  CHECK(store.discard_outside({1}) == 0);
}

// ---------------------------------------------------------------------------
// ModelStore slots

namespace {
mlkit::ParamStore tiny_params(double fill) {
  mlkit::ParamStore p({{"w", 2, 2}});
  for (double& v : p.raw()) v = fill;
  return p;
}
}  // namespace

TEST_CASE("model store enforces the M / M0 / M_buf discipline") {
  ModelStore ms;
  CHECK_FALSE(ms.initialized());
  ms.init(tiny_params(1.0));
  CHECK(ms.initialized());
  CHECK_THROWS_AS(ms.init(tiny_params(2.0)), Error);
  CHECK_THROWS_AS(ms.buffer(), Error);
  CHECK(ms.m() == ms.m0());

  auto& buf = ms.begin_train();
  CHECK(buf == ms.m());  // buffer starts as a copy of M
  CHECK_THROWS_AS(ms.begin_train(), Error);
  buf.raw()[0] = 5.0;
  CHECK(ms.m().raw()[0] == 1.0);  // M untouched while the buffer is edited

  ms.commit();
  CHECK(ms.m().raw()[0] == 5.0);
  CHECK(ms.m0().raw()[0] == 1.0);  // the backup never moves
  CHECK_FALSE(ms.transaction_open());
  CHECK_THROWS_AS(ms.commit(), Error);

  ms.begin_train().raw()[0] = 9.0;
  ms.rollback();
  CHECK(ms.m().raw()[0] == 5.0);
  CHECK_FALSE(ms.transaction_open());
  CHECK_THROWS_AS(ms.rollback(), Error);
}

TEST_CASE("inference reads M0 while the commit write lock is held") {
  ModelStore ms;
  ms.init(tiny_params(1.0));
  ms.begin_train().raw()[0] = 7.0;
  bool checked = false;
  ms.commit([&] {
    CHECK(ms.write_locked());
    const double seen = ms.read_serving(
        [](const mlkit::ParamStore& p) { return p.raw()[0]; });
    CHECK(seen == 1.0);  // M0, not the half-written M
    checked = true;
  });
  CHECK(checked);
  CHECK_FALSE(ms.write_locked());
  const double after = ms.read_serving(
      [](const mlkit::ParamStore& p) { return p.raw()[0]; });
  CHECK(after == 7.0);  // back on M once the lock is released
}

// ---------------------------------------------------------------------------
// DiskModelStore crash recovery

TEST_CASE("disk commit recovers consistently from every crash point") {
  namespace fs = std::filesystem;
  const auto base = fs::temp_directory_path() / "coda_disk_model_test";

  for (int crash_after = 1; crash_after <= 4; ++crash_after) {
    CAPTURE(crash_after);
    const auto dir = base / std::to_string(crash_after);
    fs::remove_all(dir);
    DiskModelStore store(dir.string());
    store.init(tiny_params(1.0));
    store.begin_train();
    store.write_buffer(tiny_params(2.0));
    store.commit(crash_after);

    DiskModelStore reopened(dir.string());
    reopened.recover();
    CHECK_FALSE(reopened.lock_present());
    CHECK_FALSE(reopened.buffer_present());
    // the commit decision point is writing the lock sentinel (step 1):
    // once it exists with a buffer, recovery must finish the overwrite
    CHECK(reopened.read_m() == tiny_params(2.0));
    CHECK(reopened.read_m0() == tiny_params(1.0));
    fs::remove_all(dir);
  }
}

TEST_CASE("a buffer without a lock is discarded on recovery") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "coda_disk_model_rollback";
  fs::remove_all(dir);
  DiskModelStore store(dir.string());
  store.init(tiny_params(1.0));
  store.begin_train();
  store.write_buffer(tiny_params(3.0));
  // crash before commit ever started: buffer present, no lock
  DiskModelStore reopened(dir.string());
  CHECK(reopened.buffer_present());
  reopened.recover();
  CHECK_FALSE(reopened.buffer_present());
  CHECK(reopened.read_m() == tiny_params(1.0));
  fs::remove_all(dir);
}

TEST_CASE("a stale lock without a buffer is removed on recovery") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "coda_disk_model_stale";
  fs::remove_all(dir);
  DiskModelStore store(dir.string());
  store.init(tiny_params(1.0));
  {
    std::ofstream lock(dir / "LOCK");
    lock << "1";
  }
  DiskModelStore reopened(dir.string());
  CHECK(reopened.lock_present());
  reopened.recover();
  CHECK_FALSE(reopened.lock_present());
  CHECK(reopened.read_m() == tiny_params(1.0));
  fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Device driver

namespace {
struct Rig {
  synth::Population pop;
  mlkit::RecommenderConfig rc;
  mlkit::ClassifierConfig cc;

  static Rig make() {
    synth::GeneratorConfig gc;
    gc.n_users = 8;
    gc.n_archetypes = 4;
    gc.seed = 31;
    return {synth::Population::make(gc), {}, {}};
  }

  DeviceConfig device_cfg(double sigma = 0.2) const {
    DeviceConfig dc;
    dc.filter.sigma = sigma;
    dc.seed = 1234;
    return dc;
  }

  // local history for the device's own user, outside samples from others
  std::vector<Sample> local(int n, int day = 0) const {
    return pop.gen_day(pop.users()[0].user_id, day, n);
  }
  std::vector<Sample> outside(int n, int day = 0) const {
    return pop.gen_day(pop.users()[1].user_id, 100 + day, n);
  }
};
}  // namespace

TEST_CASE("classifier training consumes exactly the training third") {
  const Rig rig = Rig::make();
  Device dev(1, rig.device_cfg(), rig.cc, rig.rc);
  for (const auto& s : rig.local(10)) dev.store().add_local(s);
  dev.ingest_matched_batch(rig.outside(9));
  CHECK(dev.store().pending_entries().size() == 9);

  const auto report = dev.train_sample_classifier(0);
  CHECK_FALSE(report.skipped);
  CHECK(report.steps > 0);
  CHECK(dev.classifier_ready());
  // 9 pending: indices 0, 3, 6 trained and were removed
  CHECK(dev.store().pending_entries().size() == 6);
  CHECK(dev.store().outside_size() == 6);
}

TEST_CASE("classifier training skips when a class is missing") {
  const Rig rig = Rig::make();
  Device no_local(1, rig.device_cfg(), rig.cc, rig.rc);
  no_local.ingest_matched_batch(rig.outside(6));
  auto r = no_local.train_sample_classifier(0);
  CHECK(r.skipped);
  CHECK(r.event == "classifier-missing-class");
  CHECK_FALSE(no_local.classifier_ready());
  CHECK(no_local.store().pending_entries().size() == 6);  // nothing consumed

  Device no_outside(1, rig.device_cfg(), rig.cc, rig.rc);
  for (const auto& s : rig.local(6)) no_outside.store().add_local(s);
  r = no_outside.train_sample_classifier(0);
  CHECK(r.skipped);
  CHECK(r.event == "classifier-missing-class");
}

TEST_CASE("filter keeps exactly the samples scoring at or above sigma") {
  for (const double sigma : {0.0, 0.2, 0.5, 1.1}) {
    CAPTURE(sigma);
    const Rig rig = Rig::make();
    Device dev(1, rig.device_cfg(sigma), rig.cc, rig.rc);
    for (const auto& s : rig.local(12)) dev.store().add_local(s);
    dev.ingest_matched_batch(rig.outside(12));
    dev.train_sample_classifier(0);

    // expected outcome from the same (deterministic) classifier
    std::size_t want_kept = 0;
    for (const auto* e : dev.store().pending_entries()) {
      if (dev.classifier().forward(e->sample) >= sigma) ++want_kept;
    }
    const std::size_t kept = dev.filter_and_augment();
    CHECK(kept == want_kept);
    CHECK(dev.store().filtered_entries().size() == kept);
    CHECK(dev.store().pending_entries().empty());
    if (sigma == 0.0) CHECK(kept == 8);   // scores are positive: all kept
    if (sigma == 1.1) CHECK(kept == 0);   // scores are below one: none kept
    // kept samples retain their original click labels and scores >= sigma
    for (const auto* e : dev.store().filtered_entries()) {
      CHECK(e->score >= sigma);
      CHECK(e->scored);
    }
  }
}

TEST_CASE("filtering without a trained classifier is an error") {
  const Rig rig = Rig::make();
  Device dev(1, rig.device_cfg(), rig.cc, rig.rc);
  dev.ingest_matched_batch(rig.outside(3));
  CHECK_THROWS_AS(dev.filter_and_augment(), Error);
}

TEST_CASE("recommender training waits for the trigger or batch exhaustion") {
  const Rig rig = Rig::make();
  Device dev(1, rig.device_cfg(), rig.cc, rig.rc);
  mlkit::RecommenderModel seed_model(rig.rc);
  dev.init_model(seed_model.params());
  for (const auto& s : rig.local(20, 5)) dev.store().add_local(s);  // age 5: trains

  auto r = dev.train_recommender(10, false);  // 20 < trigger 100, not exhausted
  CHECK(r.skipped);
  CHECK(r.event == "trigger-not-satisfied");

  r = dev.train_recommender(10, true);  // exhaustion overrides the trigger
  CHECK(r.event == "degenerate-validation-set");  // no [0,t] local samples yet
  CHECK_FALSE(dev.models().transaction_open());
}

TEST_CASE("empty augmented set with exhausted batches is a clean no-op") {
  const Rig rig = Rig::make();
  Device dev(1, rig.device_cfg(), rig.cc, rig.rc);
  mlkit::RecommenderModel seed_model(rig.rc);
  dev.init_model(seed_model.params());
  for (const auto& s : rig.local(10, 10)) dev.store().add_local(s);  // age 0
  const auto r = dev.train_recommender(10, true);
  CHECK_FALSE(r.skipped);
  CHECK(r.steps == 0);
  CHECK(dev.models().m() == seed_model.params());
}

TEST_CASE("validation acceptance is monotone and gates the commit") {
  const Rig rig = Rig::make();
  Device dev(1, rig.device_cfg(0.0), rig.cc, rig.rc);
  mlkit::RecommenderModel seed_model(rig.rc);
  dev.init_model(seed_model.params());
  // validation band [0,3] and training band (3,7] both populated
  for (const auto& s : rig.local(40, 9)) dev.store().add_local(s);
  for (const auto& s : rig.local(40, 5)) dev.store().add_local(s);
  dev.ingest_matched_batch(rig.outside(15));
  dev.train_sample_classifier(10);
  dev.filter_and_augment();

  // initial validation AUC of the unmodified model
  std::vector<double> scores;
  std::vector<int> labels;
  for (const Sample* s : dev.store().local_validation(10)) {
    scores.push_back(mlkit::recommender_forward(rig.rc, seed_model.params(), *s));
    labels.push_back(s->label);
  }
  const double auc0 = mlkit::auc(scores, labels);

  const auto r = dev.train_recommender(10, true);
  CHECK_FALSE(r.skipped);
  CHECK(r.steps > 0);
  CHECK(r.acc >= auc0);  // accepted updates only ever raise validation AUC
  const bool changed = !(dev.models().m() == seed_model.params());
  CHECK(changed == (r.accepted > 0));  // commit iff something was accepted
  CHECK_FALSE(dev.models().transaction_open());
  CHECK(dev.store().filtered_entries().empty());  // consumed after training
}

TEST_CASE("training on label noise cannot degrade the serving model") {
  const Rig rig = Rig::make();
  Device dev(1, rig.device_cfg(0.0), rig.cc, rig.rc);
  mlkit::RecommenderModel seed_model(rig.rc);
  dev.init_model(seed_model.params());
  for (const auto& s : rig.local(40, 9)) dev.store().add_local(s);
  // adversarial training band: labels inverted, gradients point the wrong way
  auto poisoned = rig.local(60, 5);
  for (auto& s : poisoned) s.label = 1 - s.label;
  for (const auto& s : poisoned) dev.store().add_local(s);

  std::vector<double> scores;
  std::vector<int> labels;
  for (const Sample* s : dev.store().local_validation(10)) {
    scores.push_back(mlkit::recommender_forward(rig.rc, seed_model.params(), *s));
    labels.push_back(s->label);
  }
  const double auc0 = mlkit::auc(scores, labels);

  const auto r = dev.train_recommender(10, true);
  CHECK(r.acc >= auc0);  // the gate never lets validation quality drop
  if (r.accepted == 0) {
    CHECK(dev.models().m() == seed_model.params());  // rolled back untouched
  }
  // serving reflects whatever the gate decided, never a worse model
  std::vector<double> after;
  for (const Sample* s : dev.store().local_validation(10)) {
    after.push_back(dev.infer(*s));
  }
  CHECK(mlkit::auc(after, labels) >= auc0 - 1e-12);
}

TEST_CASE("inference routes through the model slots") {
  const Rig rig = Rig::make();
  Device dev(1, rig.device_cfg(), rig.cc, rig.rc);
  mlkit::RecommenderModel seed_model(rig.rc);
  dev.init_model(seed_model.params());
  const auto probe = rig.local(1, 0)[0];
  CHECK(dev.infer(probe) == seed_model.forward(probe));
  Device uninit(2, rig.device_cfg(), rig.cc, rig.rc);
  CHECK_THROWS_AS(uninit.infer(probe), Error);
}
