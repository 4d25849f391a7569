#pragma once

#include <cstdint>
#include <vector>

#include "coda/sample.hpp"

namespace coda::synth {

struct GeneratorConfig {
  int n_users = 200;
  int n_archetypes = 8;
  int vocab_size = 1000;
  int n_items = 10;
  int profile_dim = 4;
  int stats_dim = 8;
  int seq_len_min = 16;
  int seq_len_max = 48;
  double token_focus = 0.8;  // mass an archetype puts on its own token bucket
  double click_low = 0.05;
  double click_high = 0.6;
  double user_noise = 0.05;  // per-user click-table perturbation bound
  std::uint64_t seed = 1;
};

struct Archetype {
  int id = 0;
  std::vector<double> token_dist;   // categorical over vocab, sums to 1
  std::vector<double> click_table;  // n_items x kNumAnimations base probs
  int seq_len_min = 0;
  int seq_len_max = 0;
};

struct SynthUser {
  std::uint64_t user_id = 0;
  int archetype_id = 0;
  std::vector<double> click_noise;  // same shape as the click table
  std::vector<double> profile;
  std::uint64_t seed = 0;
};

// One simulated serving opportunity: fixed feature groups plus the uniform
// draw that decides the click once an animation is chosen. Sharing click_u
// across experiment arms makes the comparison fully paired.
struct Exposure {
  Sample features;  // animation/label unset, to be decided by the policy
  double click_u = 0.0;
};

// Deterministic non-iid user population: users are assigned round-robin to
// archetypes, each archetype has its own behavior-token distribution and
// (item, animation) click-probability table, and every user perturbs that
// table with a small personal offset.
class Population {
 public:
  static Population make(const GeneratorConfig& cfg);

  const GeneratorConfig& config() const { return cfg_; }
  const std::vector<Archetype>& archetypes() const { return archetypes_; }
  const std::vector<SynthUser>& users() const { return users_; }
  std::vector<Archetype>& archetypes() { return archetypes_; }
  std::vector<SynthUser>& users() { return users_; }

  // Exact perturbed click probability used by generation. Throws on ids
  // outside the population.
  double click_oracle(std::uint64_t user_id, int item, Animation anim) const;

  // One day of organic interaction: random item/animation per exposure,
  // label drawn from the user's perturbed click table. Replayable from
  // (seed, user_id, day).
  std::vector<Sample> gen_day(std::uint64_t user_id, int day,
                              int n_exposures) const;

  // Exposure stream for the simulator, same determinism contract.
  std::vector<Exposure> gen_exposures(std::uint64_t user_id, int day,
                                      int n_exposures) const;

  // Held-out labeled evaluation set (day tag -1), disjoint stream.
  std::vector<Sample> gen_eval_set(std::uint64_t user_id, int n) const;

 private:
  const SynthUser& user_at(std::uint64_t user_id) const;

  GeneratorConfig cfg_;
  std::vector<Archetype> archetypes_;
  std::vector<SynthUser> users_;
};

}  // namespace coda::synth
