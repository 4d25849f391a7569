#pragma once

#include <cstdint>
#include <vector>

#include "coda/sample.hpp"

namespace coda::device {

struct StoreConfig {
  std::size_t local_limit = 200;
  std::size_t outside_limit = 200;
  int t = 3;        // local age band boundary: [0,t] validates
  int t_prime = 7;  // local retention horizon
};

struct IngestCounts {
  std::size_t stored = 0;
  std::size_t evicted = 0;
};

struct GcCounts {
  std::size_t local_removed = 0;
  std::size_t outside_removed = 0;
};

// Outside-table entry: pending until the filter has scored it; unscored
// entries count as score 0 for forced cleanup.
struct OutsideEntry {
  Sample sample;
  double score = 0.0;
  bool scored = false;
  bool pending = true;
  std::uint64_t seq = 0;
};

struct LocalEntry {
  Sample sample;  // generation day = sample.day
  std::uint64_t seq = 0;
};

// Two lifecycle-managed sample tables. Size limits are enforced on every
// insert: a full table is cleaned down to half (lowest scores outside,
// earliest days local, ties by insertion order) before the new sample goes
// in, so |local| <= local_limit and |outside| <= outside_limit always hold.
class DeviceStore {
 public:
  explicit DeviceStore(StoreConfig cfg) : cfg_(cfg) {}

  const StoreConfig& config() const { return cfg_; }

  IngestCounts ingest_matched(const std::vector<Sample>& samples);
  IngestCounts add_local(const Sample& sample);

  // Removes local samples older than t_prime days. Outside entries are
  // removed explicitly by the consuming operations.
  GcCounts lifecycle_gc(int now_day);

  // Local role views by age band relative to now_day.
  std::vector<const Sample*> local_validation(int now_day) const;        // [0, t]
  std::vector<const Sample*> local_recommender_train(int now_day) const; // (t, t']
  std::vector<const Sample*> local_all() const;

  std::vector<const OutsideEntry*> pending_entries() const;
  std::vector<const OutsideEntry*> filtered_entries() const;

  // Filter outcomes for a pending sample.
  void record_score(std::uint64_t sample_id, double score);  // kept, joins S-umlaut
  std::size_t discard_outside(const std::vector<std::uint64_t>& sample_ids);

  std::size_t local_size() const { return local_.size(); }
  std::size_t outside_size() const { return outside_.size(); }

 private:
  void cleanup_outside_to_half();
  void cleanup_local_to_half();

  StoreConfig cfg_;
  std::uint64_t next_seq_ = 1;
  std::vector<LocalEntry> local_;
  std::vector<OutsideEntry> outside_;
};

}  // namespace coda::device
