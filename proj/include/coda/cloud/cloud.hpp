#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "coda/mlkit/model.hpp"
#include "coda/sample.hpp"

namespace coda::cloud {

struct MatchConfig {
  int k = 100;
  int batch_size_default = 25;
  int batch_size_max = 40;
  int fragment_threshold = 15;  // remainder below this merges into the last batch
  int retention_days = 7;
  // Desk-scale cap on matched samples registered per target per matching
  // round, taken round-robin across neighbors nearest-first (0 = unlimited).
  int max_matched_per_round = 400;
  // Per-user warehouse history cap; oldest samples are dropped first
  // (0 = unlimited).
  int warehouse_cap = 600;
  std::string metric = "euclidean-on-normalized";
};

struct UserVector {
  std::uint64_t user_id = 0;
  std::vector<double> vec;  // L2-normalized mean of behavior statistics
};

struct KnnResult {
  std::vector<std::uint64_t> users;  // ascending distance, ties by user id
  bool truncated = false;            // fewer than K other users existed
};

struct Batch {
  std::uint64_t batch_id = 0;
  std::uint64_t user_id = 0;
  int day = 0;
  std::vector<std::uint64_t> sample_ids;
};

struct GlobalTrainConfig {
  double lr = 0.2;
  int epochs = 12;
  int minibatch = 32;
  std::uint64_t seed = 0;
};

// Mean of the behavior-statistics feature group, L2-normalized. Throws on an
// empty set or a zero-norm mean (such users are excluded from matching).
std::vector<double> extract_user_vector(const std::vector<Sample>& samples);

// Cloud side of the pipeline: sample warehouse, user vectors, exact (and
// optional coarse-quantized) KNN matching, the deduplicated batch/sample
// key-value store with retention, and global model training.
//
// Concurrency: many concurrent readers (query_batch, batch_list), exclusive
// writers (add_samples, build_*, gc_expired).
class CloudStore {
 public:
  explicit CloudStore(MatchConfig cfg) : cfg_(cfg) {}
  CloudStore(const CloudStore&) = delete;
  CloudStore& operator=(const CloudStore&) = delete;

  const MatchConfig& config() const { return cfg_; }

  void add_samples(const std::vector<Sample>& samples);
  std::vector<Sample> samples_of(std::uint64_t user) const;
  std::vector<Sample> all_samples() const;
  std::vector<std::uint64_t> known_users() const;

  // Recomputes every user vector from the warehouse; zero-norm users drop
  // out of the vector space.
  void rebuild_user_vectors();
  std::vector<UserVector> user_vectors() const;

  KnnResult knn_match(std::uint64_t target) const;

  // Coarse quantizer fast path: k-means cells, probe the nearest cells.
  // Never used by acceptance checks; the exact scan is the reference.
  void build_coarse_index(int n_cells, int iters = 5, std::uint64_t seed = 0);
  KnnResult knn_match_approx(std::uint64_t target, int probe_cells) const;

  // Splits matched samples into batches (default 25, fragment merge below
  // the threshold, max 40), dedups payloads into the sample map, registers
  // the batches for `target`, and returns the new batch ids.
  std::vector<std::uint64_t> build_batches(std::uint64_t target,
                                           const std::vector<Sample>& matched,
                                           int day);

  // knn_match + union of neighbors' samples + build_batches.
  std::vector<std::uint64_t> match_and_build(std::uint64_t target, int day);

  std::vector<std::uint64_t> batch_list(std::uint64_t user) const;

  // Tunnel-encoded payload; idempotent. Throws AuthorizationError for a
  // foreign batch, GoneError for an expired one, NotFoundError otherwise.
  std::string query_batch(std::uint64_t user, std::uint64_t batch_id) const;

  void set_day(int now_day);
  std::size_t gc_expired(int now_day);  // returns batches removed

  // Storage accounting for the dedup property.
  std::size_t unique_payload_bytes() const;
  std::size_t id_list_bytes() const;
  std::size_t total_store_bytes() const;
  std::size_t sample_map_size() const;

  mlkit::RecommenderModel train_global(const mlkit::RecommenderConfig& mc,
                                       const GlobalTrainConfig& tc) const;

  // Directory persistence: batches.jsonl + samples.bin/samples.idx.
  void save(const std::string& dir) const;
  void load(const std::string& dir);

 private:
  KnnResult knn_over(const std::vector<std::size_t>& candidate_idx,
                     std::uint64_t target) const;
  std::string query_batch_locked(std::uint64_t user, std::uint64_t batch_id) const;

  MatchConfig cfg_;
  mutable std::shared_mutex mu_;
  int now_day_ = 0;
  std::uint64_t next_batch_id_ = 1;
  std::map<std::uint64_t, std::vector<Sample>> warehouse_;
  std::vector<UserVector> vectors_;  // ascending user_id
  std::map<std::uint64_t, Batch> batches_;
  std::map<std::uint64_t, std::vector<std::uint64_t>> user_batches_;
  std::unordered_map<std::uint64_t, std::string> payloads_;  // sample_id -> json line
  std::unordered_map<std::uint64_t, std::size_t> payload_refs_;
  std::unordered_map<std::uint64_t, int> expired_;  // tombstones, id -> expiry day
  // coarse index
  std::vector<std::vector<double>> centroids_;
  std::vector<std::vector<std::size_t>> cells_;  // vector indices per cell
};

}  // namespace coda::cloud
