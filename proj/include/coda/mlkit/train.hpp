#pragma once

#include <span>
#include <string>
#include <vector>

#include "coda/mlkit/model.hpp"
#include "coda/sample.hpp"

namespace coda::mlkit {

// A minibatch references samples owned elsewhere; labels are supplied
// separately because the classifier relabels samples by origin.
struct Minibatch {
  std::vector<const Sample*> samples;
  std::vector<int> labels;

  void add(const Sample* s, int label) {
    samples.push_back(s);
    labels.push_back(label);
  }
  std::size_t size() const { return samples.size(); }
};

struct TrainReport {
  double final_loss = 0.0;
  double acc = 0.0;  // validation metric (AUC), in [0,1]
  int steps = 0;
  int accepted = 0;
  bool skipped = false;
  std::string event;  // set when training was skipped or aborted
};

// Mean binary cross entropy. Scores must lie strictly in (0,1); they are
// clamped to [1e-7, 1-1e-7] before the logs. Throws Error on empty input or
// out-of-range scores.
double bce_loss(std::span<const double> scores, std::span<const int> labels);

// Mann-Whitney AUC with ties counted as 0.5. Throws DegenerateLabelsError
// unless both classes are present.
double auc(std::span<const double> scores, std::span<const int> labels);

// One full-gradient SGD step over the minibatch. Returns the loss at the
// pre-update parameters. Throws NonFiniteGradientError (carrying the block
// name) if any gradient entry is not finite.
double sgd_step(ScoringModel& model, const Minibatch& batch, double lr);

// Max relative error between the backprop gradient and central finite
// differences over every parameter. Entries where both gradients are below
// 1e-6 in magnitude contribute 0 (the difference quotient is rounding noise
// down there).
double grad_check(ScoringModel& model, const Minibatch& batch, double epsilon);

}  // namespace coda::mlkit
