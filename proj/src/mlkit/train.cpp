#include "coda/mlkit/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "coda/error.hpp"

namespace coda::mlkit {

namespace {
constexpr double kClamp = 1e-7;

std::vector<double> batch_scores(const ScoringModel& model,
                                 const Minibatch& batch) {
  std::vector<double> scores;
  scores.reserve(batch.size());
  for (const Sample* s : batch.samples) scores.push_back(model.forward(*s));
  return scores;
}
}  // namespace

double bce_loss(std::span<const double> scores, std::span<const int> labels) {
  if (scores.empty() || scores.size() != labels.size()) {
    throw Error("bce_loss: empty or mismatched inputs");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double raw = scores[i];
    if (!(raw > 0.0 && raw < 1.0)) {
      throw Error("bce_loss: score outside (0,1)");
    }
    const double s = std::clamp(raw, kClamp, 1.0 - kClamp);
    total += labels[i] == 1 ? -std::log(s) : -std::log(1.0 - s);
  }
  return total / static_cast<double>(scores.size());
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw Error("auc: empty or mismatched inputs");
  }
  std::size_t n_pos = 0;
  for (int l : labels) n_pos += static_cast<std::size_t>(l == 1);
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw DegenerateLabelsError("auc: single-class input");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // average ranks over tie groups; sum of positive ranks gives Mann-Whitney U
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) pos_rank_sum += avg_rank;
    }
    i = j;
  }
  const double u = pos_rank_sum -
                   static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double sgd_step(ScoringModel& model, const Minibatch& batch, double lr) {
  if (batch.size() == 0) throw Error("sgd_step: empty minibatch");
  if (!(lr >= 0.0)) throw Error("sgd_step: negative learning rate");
  const auto scores = batch_scores(model, batch);
  const double loss = bce_loss(scores, batch.labels);
  ParamStore grad = model.make_grad();
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    // d(bce)/d(logit) for a sigmoid output
    const double d_logit = (scores[i] - batch.labels[i]) * inv_n;
    model.backward(*batch.samples[i], d_logit, grad);
  }
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) {
      throw NonFiniteGradientError(grad.owner_block(i));
    }
  }
  auto& w = model.params().raw();
  for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * grad[i];
  return loss;
}

double grad_check(ScoringModel& model, const Minibatch& batch, double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1e-3)) {
    throw Error("grad_check: epsilon must be in (0, 1e-3]");
  }
  const auto scores = batch_scores(model, batch);
  ParamStore grad = model.make_grad();
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double d_logit = (scores[i] - batch.labels[i]) * inv_n;
    model.backward(*batch.samples[i], d_logit, grad);
  }
  auto loss_at = [&]() {
    return bce_loss(batch_scores(model, batch), batch.labels);
  };
  double max_rel = 0.0;
  auto& w = model.params().raw();
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double saved = w[i];
    w[i] = saved + epsilon;
    const double up = loss_at();
    w[i] = saved - epsilon;
    const double down = loss_at();
    w[i] = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double analytic = grad[i];
    // below this magnitude the central difference is dominated by rounding
    // noise (~1e-11 absolute at these epsilons); such entries carry no signal
    if (std::abs(numeric) < 1e-6 && std::abs(analytic) < 1e-6) continue;
    const double rel = std::abs(analytic - numeric) /
                       std::max(std::abs(analytic), std::abs(numeric));
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace coda::mlkit
