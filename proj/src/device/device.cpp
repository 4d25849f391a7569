#include "coda/device/device.hpp"

#include <algorithm>

#include "coda/error.hpp"

namespace coda::device {

Device::Device(std::uint64_t device_id, DeviceConfig cfg,
               mlkit::ClassifierConfig classifier_cfg,
               mlkit::RecommenderConfig recommender_cfg)
    : id_(device_id),
      cfg_(cfg),
      classifier_cfg_(classifier_cfg),
      recommender_cfg_(recommender_cfg),
      store_(cfg.store),
      rng_(cfg.seed ^ device_id) {}

void Device::init_model(const mlkit::ParamStore& global_params) {
  models_.init(global_params);
}

IngestCounts Device::ingest_matched_batch(const std::vector<Sample>& samples) {
  return store_.ingest_matched(samples);
}

mlkit::TrainReport Device::train_sample_classifier(int now_day) {
  (void)now_day;
  mlkit::TrainReport report;
  auto pending = store_.pending_entries();
  auto local = store_.local_all();

  // every train_denominator-th pending sample trains; the rest get filtered
  std::vector<const Sample*> train_outside;
  std::vector<std::uint64_t> consumed_ids;
  for (std::size_t i = 0; i < pending.size(); ++i) {
    if (i % static_cast<std::size_t>(cfg_.filter.train_denominator) == 0) {
      train_outside.push_back(&pending[i]->sample);
      consumed_ids.push_back(pending[i]->sample.sample_id);
    }
  }

  if (local.empty() || train_outside.empty()) {
    report.skipped = true;
    report.event = "classifier-missing-class";
    return report;
  }

  if (!classifier_.has_value()) {
    mlkit::ClassifierConfig cc = classifier_cfg_;
    cc.seed = cfg_.seed ^ (id_ * 2654435761ull);
    classifier_.emplace(cc);  // warm start from here on
  }

  const std::size_t total = local.size() + train_outside.size();
  const auto bsz = static_cast<std::size_t>(cfg_.minibatch);
  const std::size_t steps_per_epoch = std::max<std::size_t>(1, (total + bsz - 1) / bsz);
  std::uniform_int_distribution<std::size_t> pick_local(0, local.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_outside(0, train_outside.size() - 1);
  double last_loss = 0.0;
  for (int epoch = 0; epoch < cfg_.classifier_epochs; ++epoch) {
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      // class-balanced with replacement: local labels 1, outside labels 0
      mlkit::Minibatch batch;
      for (std::size_t i = 0; i < bsz / 2; ++i) {
        batch.add(local[pick_local(rng_)], 1);
        batch.add(train_outside[pick_outside(rng_)], 0);
      }
      last_loss = mlkit::sgd_step(*classifier_, batch, cfg_.classifier_lr);
      ++report.steps;
    }
  }
  report.final_loss = last_loss;
  store_.discard_outside(consumed_ids);  // Fig.-5 removal after training
  return report;
}

std::size_t Device::filter_and_augment() {
  if (!classifier_.has_value()) {
    throw Error("filter_and_augment: classifier never trained");
  }
  auto pending = store_.pending_entries();
  std::size_t kept = 0;
  std::vector<std::uint64_t> rejected;
  std::vector<std::pair<std::uint64_t, double>> accepted;
  for (const OutsideEntry* e : pending) {
    const double score = classifier_->forward(e->sample);
    if (score >= cfg_.filter.sigma) {
      accepted.emplace_back(e->sample.sample_id, score);
    } else {
      rejected.push_back(e->sample.sample_id);
    }
  }
  for (const auto& [sid, score] : accepted) {
    store_.record_score(sid, score);
    ++kept;
  }
  store_.discard_outside(rejected);
  return kept;
}

mlkit::TrainReport Device::train_recommender(int now_day, bool batches_exhausted) {
  mlkit::TrainReport report;
  if (!models_.initialized()) throw Error("train_recommender: model not initialized");

  auto local_train = store_.local_recommender_train(now_day);
  auto filtered = store_.filtered_entries();
  const std::size_t augmented = local_train.size() + filtered.size();
  if (augmented < static_cast<std::size_t>(cfg_.train_trigger) && !batches_exhausted) {
    report.skipped = true;
    report.event = "trigger-not-satisfied";
    return report;
  }
  if (augmented == 0) {
    return report;  // no-op, steps = 0
  }

  auto validation = store_.local_validation(now_day);
  mlkit::Minibatch val;
  for (const Sample* s : validation) val.add(s, s->label);
  bool has_pos = false, has_neg = false;
  for (int l : val.labels) (l == 1 ? has_pos : has_neg) = true;
  if (val.size() == 0 || !has_pos || !has_neg) {
    report.skipped = true;
    report.event = "degenerate-validation-set";
    return report;
  }

  mlkit::RecommenderModel working(recommender_cfg_, models_.begin_train());

  auto val_auc = [&]() {
    std::vector<double> scores;
    scores.reserve(val.size());
    for (const Sample* s : val.samples) scores.push_back(working.forward(*s));
    return mlkit::auc(scores, val.labels);
  };

  double acc = val_auc();
  mlkit::Minibatch train;
  std::vector<std::uint64_t> consumed;
  for (const Sample* s : local_train) train.add(s, s->label);
  for (const OutsideEntry* e : filtered) {
    train.add(&e->sample, e->sample.label);  // original click label retained
    consumed.push_back(e->sample.sample_id);
  }
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng_);

  const auto bsz = static_cast<std::size_t>(cfg_.minibatch);
  std::size_t pos = 0;
  double last_loss = 0.0;
  while (pos < order.size()) {
    mlkit::Minibatch mb;
    const std::size_t end = std::min(pos + bsz, order.size());
    for (std::size_t i = pos; i < end; ++i) {
      mb.add(train.samples[order[i]], train.labels[order[i]]);
    }
    pos = end;
    const mlkit::ParamStore snapshot = working.params();
    last_loss = mlkit::sgd_step(working, mb, cfg_.recommender_lr);
    const double acc_new = val_auc();
    ++report.steps;
    if (acc_new > acc) {  // strict improvement only
      acc = acc_new;
      ++report.accepted;
    } else {
      working.params() = snapshot;
    }
  }

  if (report.accepted > 0) {
    models_.buffer() = working.params();
    models_.commit();
  } else {
    models_.rollback();
  }
  store_.discard_outside(consumed);  // Fig.-5 removal after usage
  report.final_loss = last_loss;
  report.acc = acc;
  return report;
}

double Device::infer(const Sample& s) const {
  if (!models_.initialized()) throw Error("infer: model store not initialized");
  return models_.read_serving([&](const mlkit::ParamStore& p) {
    return mlkit::recommender_forward(recommender_cfg_, p, s);
  });
}

}  // namespace coda::device
