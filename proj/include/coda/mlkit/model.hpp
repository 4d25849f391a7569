#pragma once

#include <cstdint>
#include <memory>

#include "coda/mlkit/params.hpp"
#include "coda/sample.hpp"

namespace coda::mlkit {

// Common surface of the two on-device models. A model is a plain value:
// copyable, movable, no shared state; forward is pure.
class ScoringModel {
 public:
  virtual ~ScoringModel() = default;

  // CTR-style score, strictly in (0,1). Throws OutOfVocabError on an index
  // outside the embedding tables.
  virtual double forward(const Sample& s) const = 0;

  // Accumulates dLoss/dParams into `grad` (same layout as params()) given
  // d_logit = dLoss/dz at the pre-sigmoid output.
  virtual void backward(const Sample& s, double d_logit,
                        ParamStore& grad) const = 0;

  virtual ParamStore& params() = 0;
  virtual const ParamStore& params() const = 0;

  // Zero-filled gradient buffer matching the parameter layout.
  ParamStore make_grad() const;
};

struct ClassifierConfig {
  int vocab_size = 1000;
  int embed_dim = 3;
  int hidden = 8;
  std::uint64_t seed = 0;
};

// Two-class sample classifier: behavior-sequence tokens only, mean-pooled
// embeddings into a one-hidden-layer MLP with logistic output.
class ClassifierModel final : public ScoringModel {
 public:
  explicit ClassifierModel(ClassifierConfig cfg);
  ClassifierModel(ClassifierConfig cfg, ParamStore params);

  double forward(const Sample& s) const override;
  void backward(const Sample& s, double d_logit,
                ParamStore& grad) const override;

  ParamStore& params() override { return params_; }
  const ParamStore& params() const override { return params_; }
  const ClassifierConfig& config() const { return cfg_; }

 private:
  ClassifierConfig cfg_;
  ParamStore params_;
};

struct RecommenderConfig {
  int vocab_size = 1000;
  int n_items = 10;
  int embed_dim = 3;
  int hidden = 16;
  int profile_dim = 4;
  int stats_dim = 8;
  std::uint64_t seed = 0;

  int mlp_input_dim() const {
    return 4 * embed_dim + profile_dim + stats_dim;
  }
};

// CTR model: target-item embedding attends over the behavior sequence
// (scaled dot product, softmax, weighted sum), concatenated with animation
// embedding, mean-pooled clicked-item embeddings and the dense feature
// groups, then an MLP with logistic output.
class RecommenderModel final : public ScoringModel {
 public:
  explicit RecommenderModel(RecommenderConfig cfg);
  RecommenderModel(RecommenderConfig cfg, ParamStore params);

  double forward(const Sample& s) const override;
  void backward(const Sample& s, double d_logit,
                ParamStore& grad) const override;

  ParamStore& params() override { return params_; }
  const ParamStore& params() const override { return params_; }
  const RecommenderConfig& config() const { return cfg_; }

 private:
  RecommenderConfig cfg_;
  ParamStore params_;
};

// Forward pass against externally owned parameters (no copy); used by the
// serving path, where params live in the model version-control slots.
double recommender_forward(const RecommenderConfig& cfg, const ParamStore& params,
                           const Sample& s);

}  // namespace coda::mlkit
