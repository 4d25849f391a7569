#include "coda/synth/population.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "coda/error.hpp"

namespace coda::synth {

namespace {

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  // splitmix64 finalizer as a combiner
  h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  std::uint64_t z = h + 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t user,
                           std::uint64_t tag, std::uint64_t day) {
  return std::mt19937_64(mix(mix(mix(seed, user), tag), day));
}

std::uint64_t make_sample_id(std::uint64_t user_id, int day, int idx) {
  // unique at desk scale: user | shifted day | per-day index
  return ((user_id + 1) << 28) |
         (static_cast<std::uint64_t>(day + 128) << 16) |
         static_cast<std::uint64_t>(idx);
}

int draw_categorical(std::mt19937_64& rng, const std::vector<double>& dist) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double u = unit(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    acc += dist[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(dist.size()) - 1;
}

}  // namespace

Population Population::make(const GeneratorConfig& cfg) {
  if (cfg.n_archetypes < 2 || cfg.n_users < cfg.n_archetypes) {
    throw ConfigError("population needs >=2 archetypes and n_users >= n_archetypes");
  }
  Population pop;
  pop.cfg_ = cfg;

  const int bucket = cfg.vocab_size / cfg.n_archetypes;
  for (int a = 0; a < cfg.n_archetypes; ++a) {
    std::mt19937_64 rng(mix(cfg.seed, 0x41000000ull + static_cast<std::uint64_t>(a)));
    Archetype arch;
    arch.id = a;
    // token_focus mass uniform over this archetype's vocab bucket, the rest
    // uniform over the whole vocab
    arch.token_dist.assign(static_cast<std::size_t>(cfg.vocab_size),
                           (1.0 - cfg.token_focus) / cfg.vocab_size);
    const int lo = a * bucket;
    const int hi = (a == cfg.n_archetypes - 1) ? cfg.vocab_size : lo + bucket;
    for (int t = lo; t < hi; ++t) {
      arch.token_dist[static_cast<std::size_t>(t)] += cfg.token_focus / (hi - lo);
    }
    std::uniform_real_distribution<double> click(cfg.click_low, cfg.click_high);
    arch.click_table.resize(static_cast<std::size_t>(cfg.n_items) * kNumAnimations);
    for (double& p : arch.click_table) p = click(rng);
    arch.seq_len_min = cfg.seq_len_min;
    arch.seq_len_max = cfg.seq_len_max;
    pop.archetypes_.push_back(std::move(arch));
  }

  for (int u = 0; u < cfg.n_users; ++u) {
    std::mt19937_64 rng(mix(cfg.seed, 0x55000000ull + static_cast<std::uint64_t>(u)));
    SynthUser user;
    user.user_id = static_cast<std::uint64_t>(u);
    user.archetype_id = u % cfg.n_archetypes;  // round-robin
    user.seed = mix(cfg.seed, static_cast<std::uint64_t>(u));
    std::uniform_real_distribution<double> noise(-cfg.user_noise, cfg.user_noise);
    const auto& table = pop.archetypes_[static_cast<std::size_t>(user.archetype_id)].click_table;
    user.click_noise.resize(table.size());
    for (std::size_t i = 0; i < table.size(); ++i) {
      // keep the perturbed probability inside [0,1]
      double n = noise(rng);
      user.click_noise[i] = std::clamp(table[i] + n, 0.0, 1.0) - table[i];
    }
    user.profile.resize(static_cast<std::size_t>(cfg.profile_dim));
    std::uniform_real_distribution<double> jitter(-0.1, 0.1);
    for (int i = 0; i < cfg.profile_dim; ++i) {
      const double centroid =
          (user.archetype_id * (i + 1)) % cfg.n_archetypes /
          static_cast<double>(cfg.n_archetypes);
      user.profile[static_cast<std::size_t>(i)] = centroid + jitter(rng);
    }
    pop.users_.push_back(std::move(user));
  }
  return pop;
}

const SynthUser& Population::user_at(std::uint64_t user_id) const {
  if (user_id >= users_.size()) throw Error("unknown user id");
  return users_[user_id];
}

double Population::click_oracle(std::uint64_t user_id, int item,
                                Animation anim) const {
  const auto& user = user_at(user_id);
  if (item < 0 || item >= cfg_.n_items) throw Error("unknown item id");
  const auto& arch = archetypes_[static_cast<std::size_t>(user.archetype_id)];
  const std::size_t idx =
      static_cast<std::size_t>(item) * kNumAnimations + static_cast<int>(anim);
  return std::clamp(arch.click_table[idx] + user.click_noise[idx], 0.0, 1.0);
}

std::vector<Exposure> Population::gen_exposures(std::uint64_t user_id, int day,
                                                int n_exposures) const {
  if (n_exposures < 1) throw Error("n_exposures must be >= 1");
  const auto& user = user_at(user_id);
  const auto& arch = archetypes_[static_cast<std::size_t>(user.archetype_id)];
  auto rng = stream_rng(cfg_.seed, user_id, 0xE0ull, static_cast<std::uint64_t>(day + 256));
  std::uniform_int_distribution<int> item_dist(0, cfg_.n_items - 1);
  std::uniform_int_distribution<int> len_dist(arch.seq_len_min, arch.seq_len_max);
  std::uniform_int_distribution<int> click_len_dist(1, 10);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<Exposure> out;
  out.reserve(static_cast<std::size_t>(n_exposures));
  for (int e = 0; e < n_exposures; ++e) {
    Exposure exp;
    Sample& s = exp.features;
    s.sample_id = make_sample_id(user_id, day, e);
    s.user_id = user_id;
    s.day = day;
    s.target_item = item_dist(rng);
    s.profile = user.profile;
    const int click_len = click_len_dist(rng);
    for (int i = 0; i < click_len; ++i) s.item_clicks.push_back(item_dist(rng));
    const int len = std::min(len_dist(rng), kMaxBehaviorLen);
    s.behavior_seq.reserve(static_cast<std::size_t>(len));
    for (int i = 0; i < len; ++i) {
      s.behavior_seq.push_back(draw_categorical(rng, arch.token_dist));
    }
    // behavior statistics: normalized token histogram over stats_dim buckets
    s.behavior_stats.assign(static_cast<std::size_t>(cfg_.stats_dim), 0.0);
    for (int tok : s.behavior_seq) {
      const int b = tok * cfg_.stats_dim / cfg_.vocab_size;
      s.behavior_stats[static_cast<std::size_t>(b)] += 1.0 / len;
    }
    exp.click_u = unit(rng);
    out.push_back(std::move(exp));
  }
  return out;
}

std::vector<Sample> Population::gen_day(std::uint64_t user_id, int day,
                                        int n_exposures) const {
  auto exposures = gen_exposures(user_id, day, n_exposures);
  auto rng = stream_rng(cfg_.seed, user_id, 0xA1ull, static_cast<std::uint64_t>(day + 256));
  std::uniform_int_distribution<int> anim_dist(0, kNumAnimations - 1);
  std::vector<Sample> out;
  out.reserve(exposures.size());
  for (auto& exp : exposures) {
    Sample s = std::move(exp.features);
    s.animation = static_cast<Animation>(anim_dist(rng));
    s.label = exp.click_u < click_oracle(user_id, s.target_item, s.animation) ? 1 : 0;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> Population::gen_eval_set(std::uint64_t user_id, int n) const {
  auto rng = stream_rng(cfg_.seed, user_id, 0xEEull, 1);
  const auto& user = user_at(user_id);
  const auto& arch = archetypes_[static_cast<std::size_t>(user.archetype_id)];
  std::uniform_int_distribution<int> item_dist(0, cfg_.n_items - 1);
  std::uniform_int_distribution<int> anim_dist(0, kNumAnimations - 1);
  std::uniform_int_distribution<int> len_dist(arch.seq_len_min, arch.seq_len_max);
  std::uniform_int_distribution<int> click_len_dist(1, 10);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int e = 0; e < n; ++e) {
    Sample s;
    s.sample_id = make_sample_id(user_id, -1, e);
    s.user_id = user_id;
    s.day = -1;
    s.target_item = item_dist(rng);
    s.animation = static_cast<Animation>(anim_dist(rng));
    s.profile = user.profile;
    const int click_len = click_len_dist(rng);
    for (int i = 0; i < click_len; ++i) s.item_clicks.push_back(item_dist(rng));
    const int len = std::min(len_dist(rng), kMaxBehaviorLen);
    for (int i = 0; i < len; ++i) {
      s.behavior_seq.push_back(draw_categorical(rng, arch.token_dist));
    }
    s.behavior_stats.assign(static_cast<std::size_t>(cfg_.stats_dim), 0.0);
    for (int tok : s.behavior_seq) {
      const int b = tok * cfg_.stats_dim / cfg_.vocab_size;
      s.behavior_stats[static_cast<std::size_t>(b)] += 1.0 / len;
    }
    s.label = unit(rng) < click_oracle(user_id, s.target_item, s.animation) ? 1 : 0;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace coda::synth
