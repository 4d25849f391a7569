#include "coda/mlkit/model.hpp"

#include <cmath>
#include <vector>

#include "coda/error.hpp"

namespace coda::mlkit {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void check_token(std::int32_t tok, int vocab, const char* table) {
  if (tok < 0 || tok >= vocab) {
    throw OutOfVocabError(std::string("index out of vocab in ") + table +
                          ": " + std::to_string(tok));
  }
}

// h = relu(W1^T x + b1); z = w2.h + b2. Returns z, fills h.
double mlp_forward(const ParamStore& p, const std::vector<double>& x,
                   int in_dim, int hidden, std::vector<double>& h) {
  auto w1 = p.block("w1");
  auto b1 = p.block("b1");
  auto w2 = p.block("w2");
  auto b2 = p.block("b2");
  h.assign(static_cast<std::size_t>(hidden), 0.0);
  for (int j = 0; j < hidden; ++j) {
    double a = b1[static_cast<std::size_t>(j)];
    for (int i = 0; i < in_dim; ++i) {
      a += x[static_cast<std::size_t>(i)] *
           w1[static_cast<std::size_t>(i) * hidden + j];
    }
    h[static_cast<std::size_t>(j)] = a > 0.0 ? a : 0.0;
  }
  double z = b2[0];
  for (int j = 0; j < hidden; ++j) {
    z += h[static_cast<std::size_t>(j)] * w2[static_cast<std::size_t>(j)];
  }
  return z;
}

// Backward of the MLP head given dz; fills dx.
void mlp_backward(const ParamStore& p, const std::vector<double>& x,
                  const std::vector<double>& h, int in_dim, int hidden,
                  double dz, ParamStore& grad, std::vector<double>& dx) {
  auto w1 = p.block("w1");
  auto w2 = p.block("w2");
  auto gw1 = grad.block("w1");
  auto gb1 = grad.block("b1");
  auto gw2 = grad.block("w2");
  auto gb2 = grad.block("b2");
  gb2[0] += dz;
  dx.assign(static_cast<std::size_t>(in_dim), 0.0);
  for (int j = 0; j < hidden; ++j) {
    const double hj = h[static_cast<std::size_t>(j)];
    gw2[static_cast<std::size_t>(j)] += dz * hj;
    if (hj <= 0.0) continue;  // relu gate
    const double dh = dz * w2[static_cast<std::size_t>(j)];
    gb1[static_cast<std::size_t>(j)] += dh;
    for (int i = 0; i < in_dim; ++i) {
      gw1[static_cast<std::size_t>(i) * hidden + j] +=
          dh * x[static_cast<std::size_t>(i)];
      dx[static_cast<std::size_t>(i)] +=
          dh * w1[static_cast<std::size_t>(i) * hidden + j];
    }
  }
}

}  // namespace

ParamStore ScoringModel::make_grad() const {
  std::vector<BlockSpec> specs;
  for (std::size_t i = 0; i < params().block_count(); ++i) {
    specs.push_back(params().spec(i));
  }
  return ParamStore(std::move(specs));
}

// ---------------------------------------------------------------------------
// ClassifierModel

namespace {
std::vector<BlockSpec> classifier_blocks(const ClassifierConfig& c) {
  const auto d = static_cast<std::size_t>(c.embed_dim);
  const auto h = static_cast<std::size_t>(c.hidden);
  return {{"embed", static_cast<std::size_t>(c.vocab_size), d},
          {"w1", d, h},
          {"b1", 1, h},
          {"w2", h, 1},
          {"b2", 1, 1}};
}
}  // namespace

ClassifierModel::ClassifierModel(ClassifierConfig cfg)
    : cfg_(cfg), params_(classifier_blocks(cfg)) {
  params_.init_uniform(cfg.seed);
}

ClassifierModel::ClassifierModel(ClassifierConfig cfg, ParamStore params)
    : cfg_(cfg), params_(std::move(params)) {}

double ClassifierModel::forward(const Sample& s) const {
  const int d = cfg_.embed_dim;
  auto embed = params_.block("embed");
  std::vector<double> x(static_cast<std::size_t>(d), 0.0);
  if (!s.behavior_seq.empty()) {
    for (auto tok : s.behavior_seq) {
      check_token(tok, cfg_.vocab_size, "embed");
      for (int i = 0; i < d; ++i) {
        x[static_cast<std::size_t>(i)] +=
            embed[static_cast<std::size_t>(tok) * d + i];
      }
    }
    for (double& v : x) v /= static_cast<double>(s.behavior_seq.size());
  }
  std::vector<double> h;
  return sigmoid(mlp_forward(params_, x, d, cfg_.hidden, h));
}

void ClassifierModel::backward(const Sample& s, double d_logit,
                               ParamStore& grad) const {
  const int d = cfg_.embed_dim;
  auto embed = params_.block("embed");
  std::vector<double> x(static_cast<std::size_t>(d), 0.0);
  if (!s.behavior_seq.empty()) {
    for (auto tok : s.behavior_seq) {
      check_token(tok, cfg_.vocab_size, "embed");
      for (int i = 0; i < d; ++i) {
        x[static_cast<std::size_t>(i)] +=
            embed[static_cast<std::size_t>(tok) * d + i];
      }
    }
    for (double& v : x) v /= static_cast<double>(s.behavior_seq.size());
  }
  std::vector<double> h;
  mlp_forward(params_, x, d, cfg_.hidden, h);
  std::vector<double> dx;
  mlp_backward(params_, x, h, d, cfg_.hidden, d_logit, grad, dx);
  if (!s.behavior_seq.empty()) {
    auto gembed = grad.block("embed");
    const double inv = 1.0 / static_cast<double>(s.behavior_seq.size());
    for (auto tok : s.behavior_seq) {
      for (int i = 0; i < d; ++i) {
        gembed[static_cast<std::size_t>(tok) * d + i] +=
            dx[static_cast<std::size_t>(i)] * inv;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// RecommenderModel

namespace {
std::vector<BlockSpec> recommender_blocks(const RecommenderConfig& c) {
  const auto d = static_cast<std::size_t>(c.embed_dim);
  const auto h = static_cast<std::size_t>(c.hidden);
  return {{"tok_embed", static_cast<std::size_t>(c.vocab_size), d},
          {"item_embed", static_cast<std::size_t>(c.n_items), d},
          {"anim_embed", static_cast<std::size_t>(kNumAnimations), d},
          {"w1", static_cast<std::size_t>(c.mlp_input_dim()), h},
          {"b1", 1, h},
          {"w2", h, 1},
          {"b2", 1, 1}};
}

struct RecForwardCache {
  std::vector<double> x;       // MLP input
  std::vector<double> h;       // hidden activations
  std::vector<double> attn_w;  // softmax weights over behavior_seq
  double z = 0.0;
};
}  // namespace

RecommenderModel::RecommenderModel(RecommenderConfig cfg)
    : cfg_(cfg), params_(recommender_blocks(cfg)) {
  params_.init_uniform(cfg.seed);
}

RecommenderModel::RecommenderModel(RecommenderConfig cfg, ParamStore params)
    : cfg_(cfg), params_(std::move(params)) {}

namespace {

void rec_forward_impl(const RecommenderConfig& cfg, const ParamStore& p,
                      const Sample& s, RecForwardCache& c) {
  const int d = cfg.embed_dim;
  if (static_cast<int>(s.profile.size()) != cfg.profile_dim ||
      static_cast<int>(s.behavior_stats.size()) != cfg.stats_dim) {
    throw Error("sample feature dimensions do not match model config");
  }
  auto tok_embed = p.block("tok_embed");
  auto item_embed = p.block("item_embed");
  auto anim_embed = p.block("anim_embed");
  check_token(s.target_item, cfg.n_items, "item_embed");

  const std::size_t ud = static_cast<std::size_t>(d);
  c.x.assign(static_cast<std::size_t>(cfg.mlp_input_dim()), 0.0);
  // layout: [query | animation | attention pool | click pool | profile | stats]
  double* q = c.x.data();
  double* anim = q + ud;
  double* pooled = anim + ud;
  double* clicks = pooled + ud;
  for (int i = 0; i < d; ++i) {
    q[i] = item_embed[static_cast<std::size_t>(s.target_item) * d + i];
    anim[i] = anim_embed[static_cast<std::size_t>(s.animation) * d + i];
  }

  c.attn_w.clear();
  if (!s.behavior_seq.empty()) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<double> logits(s.behavior_seq.size());
    double max_logit = -1e300;
    for (std::size_t t = 0; t < s.behavior_seq.size(); ++t) {
      check_token(s.behavior_seq[t], cfg.vocab_size, "tok_embed");
      double dot = 0.0;
      const double* k = &tok_embed[static_cast<std::size_t>(s.behavior_seq[t]) * d];
      for (int i = 0; i < d; ++i) dot += q[i] * k[i];
      logits[t] = dot * scale;
      max_logit = std::max(max_logit, logits[t]);
    }
    c.attn_w.resize(logits.size());
    double denom = 0.0;
    for (std::size_t t = 0; t < logits.size(); ++t) {
      c.attn_w[t] = std::exp(logits[t] - max_logit);
      denom += c.attn_w[t];
    }
    for (std::size_t t = 0; t < logits.size(); ++t) {
      c.attn_w[t] /= denom;
      const double* k = &tok_embed[static_cast<std::size_t>(s.behavior_seq[t]) * d];
      for (int i = 0; i < d; ++i) pooled[i] += c.attn_w[t] * k[i];
    }
  }

  if (!s.item_clicks.empty()) {
    for (auto item : s.item_clicks) {
      check_token(item, cfg.n_items, "item_embed");
      for (int i = 0; i < d; ++i) {
        clicks[i] += item_embed[static_cast<std::size_t>(item) * d + i];
      }
    }
    for (int i = 0; i < d; ++i) {
      clicks[i] /= static_cast<double>(s.item_clicks.size());
    }
  }

  double* dense = clicks + ud;
  for (int i = 0; i < cfg.profile_dim; ++i) dense[i] = s.profile[static_cast<std::size_t>(i)];
  dense += cfg.profile_dim;
  for (int i = 0; i < cfg.stats_dim; ++i) dense[i] = s.behavior_stats[static_cast<std::size_t>(i)];

  c.z = mlp_forward(p, c.x, cfg.mlp_input_dim(), cfg.hidden, c.h);
}

}  // namespace

double recommender_forward(const RecommenderConfig& cfg, const ParamStore& params,
                           const Sample& s) {
  RecForwardCache c;
  rec_forward_impl(cfg, params, s, c);
  return sigmoid(c.z);
}

double RecommenderModel::forward(const Sample& s) const {
  return recommender_forward(cfg_, params_, s);
}

void RecommenderModel::backward(const Sample& s, double d_logit,
                                ParamStore& grad) const {
  RecForwardCache c;
  rec_forward_impl(cfg_, params_, s, c);
  const int d = cfg_.embed_dim;
  const std::size_t ud = static_cast<std::size_t>(d);

  std::vector<double> dx;
  mlp_backward(params_, c.x, c.h, cfg_.mlp_input_dim(), cfg_.hidden, d_logit,
               grad, dx);

  auto tok_embed = params_.block("tok_embed");
  auto gtok = grad.block("tok_embed");
  auto gitem = grad.block("item_embed");
  auto ganim = grad.block("anim_embed");

  const double* dq_mlp = dx.data();
  const double* danim = dq_mlp + ud;
  const double* dpooled = danim + ud;
  const double* dclicks = dpooled + ud;
  const double* q = c.x.data();

  for (int i = 0; i < d; ++i) {
    ganim[static_cast<std::size_t>(s.animation) * d + i] += danim[i];
  }

  std::vector<double> dq(dq_mlp, dq_mlp + ud);

  if (!s.behavior_seq.empty()) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    // pooled = sum_t w_t k_t with w = softmax(q.k_t * scale)
    const std::size_t n = s.behavior_seq.size();
    std::vector<double> dw(n, 0.0);
    double wdot = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double* k = &tok_embed[static_cast<std::size_t>(s.behavior_seq[t]) * d];
      for (int i = 0; i < d; ++i) dw[t] += dpooled[i] * k[i];
      wdot += c.attn_w[t] * dw[t];
    }
    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t tok = static_cast<std::size_t>(s.behavior_seq[t]);
      const double* k = &tok_embed[tok * d];
      const double da = c.attn_w[t] * (dw[t] - wdot);  // softmax jacobian
      for (int i = 0; i < d; ++i) {
        // value path + key path of the attention score
        gtok[tok * d + i] += c.attn_w[t] * dpooled[i] + da * scale * q[i];
        dq[static_cast<std::size_t>(i)] += da * scale * k[i];
      }
    }
  }

  for (int i = 0; i < d; ++i) {
    gitem[static_cast<std::size_t>(s.target_item) * d + i] +=
        dq[static_cast<std::size_t>(i)];
  }

  if (!s.item_clicks.empty()) {
    const double inv = 1.0 / static_cast<double>(s.item_clicks.size());
    for (auto item : s.item_clicks) {
      for (int i = 0; i < d; ++i) {
        gitem[static_cast<std::size_t>(item) * d + i] += dclicks[i] * inv;
      }
    }
  }
}

}  // namespace coda::mlkit
