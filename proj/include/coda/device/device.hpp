#pragma once

#include <cstdint>
#include <optional>
#include <random>

#include "coda/device/model_store.hpp"
#include "coda/device/store.hpp"
#include "coda/mlkit/model.hpp"
#include "coda/mlkit/train.hpp"

namespace coda::device {

struct FilterConfig {
  double sigma = 0.2;       // inclusive keep threshold
  int train_denominator = 3;  // 1/3 of matched samples train the classifier
};

struct DeviceConfig {
  StoreConfig store;
  FilterConfig filter;
  double classifier_lr = 0.05;
  double recommender_lr = 0.05;
  int minibatch = 16;
  int classifier_epochs = 1;
  int train_trigger = 100;  // augmented-set size that triggers training
  std::uint64_t seed = 0;
};

// One device's driver: lifecycle-managed sample tables, the personalized
// sample classifier (warm-started across cycles), validation-gated
// recommender training against the model version-control slots, and
// inference serving.
class Device {
 public:
  Device(std::uint64_t device_id, DeviceConfig cfg,
         mlkit::ClassifierConfig classifier_cfg,
         mlkit::RecommenderConfig recommender_cfg);

  std::uint64_t id() const { return id_; }
  DeviceStore& store() { return store_; }
  const DeviceStore& store() const { return store_; }
  ModelStore& models() { return models_; }
  const DeviceConfig& config() const { return cfg_; }

  void init_model(const mlkit::ParamStore& global_params);

  IngestCounts ingest_matched_batch(const std::vector<Sample>& samples);

  // Splits the pending matched samples 1/3 train : 2/3 filter, trains the
  // classifier class-balanced on local (label 1) vs matched (label 0), and
  // removes the consumed training third. Skips with an event when either
  // class is missing.
  mlkit::TrainReport train_sample_classifier(int now_day);

  // Scores the remaining pending samples; score >= sigma keeps the sample
  // (original click label retained), below discards it. Returns kept count.
  std::size_t filter_and_augment();
  bool classifier_ready() const { return classifier_.has_value(); }
  const mlkit::ClassifierModel& classifier() const { return *classifier_; }

  // Algorithm-3 style training: mini-batches over local (t, t'] samples
  // plus the filtered outside set, each update kept only if validation AUC
  // on the [0, t] local band strictly improves; commit iff any update was
  // accepted. Consumed outside samples are removed afterwards.
  mlkit::TrainReport train_recommender(int now_day, bool batches_exhausted);

  double infer(const Sample& s) const;  // M, or M0 under the write lock

 private:
  std::uint64_t id_;
  DeviceConfig cfg_;
  mlkit::ClassifierConfig classifier_cfg_;
  mlkit::RecommenderConfig recommender_cfg_;
  DeviceStore store_;
  ModelStore models_;
  std::optional<mlkit::ClassifierModel> classifier_;
  std::mt19937_64 rng_;
};

}  // namespace coda::device
