#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "coda/mlkit/model.hpp"
#include "coda/sample.hpp"

namespace coda::testutil {

// Random but well-formed sample for a given recommender shape.
inline Sample random_sample(std::mt19937_64& rng, const mlkit::RecommenderConfig& mc,
                            int day = 0, int seq_len = 12) {
  std::uniform_int_distribution<int> tok(0, mc.vocab_size - 1);
  std::uniform_int_distribution<int> item(0, mc.n_items - 1);
  std::uniform_real_distribution<double> real(-1.0, 1.0);
  Sample s;
  s.sample_id = rng();
  s.user_id = rng() % 64;
  s.day = day;
  s.target_item = item(rng);
  s.animation = static_cast<Animation>(rng() % kNumAnimations);
  for (int i = 0; i < mc.profile_dim; ++i) s.profile.push_back(real(rng));
  const int n_clicks = 1 + static_cast<int>(rng() % 5);
  for (int i = 0; i < n_clicks; ++i) s.item_clicks.push_back(item(rng));
  for (int i = 0; i < seq_len; ++i) s.behavior_seq.push_back(tok(rng));
  for (int i = 0; i < mc.stats_dim; ++i) s.behavior_stats.push_back(real(rng));
  s.label = static_cast<int>(rng() % 2);
  return s;
}

inline std::vector<Sample> random_samples(std::uint64_t seed, int n,
                                          const mlkit::RecommenderConfig& mc = {}) {
  std::mt19937_64 rng(seed);
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(random_sample(rng, mc));
  return out;
}

}  // namespace coda::testutil
