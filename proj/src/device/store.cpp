#include "coda/device/store.hpp"

#include <algorithm>

#include "coda/error.hpp"

namespace coda::device {

namespace {
// cleanup target: table size decreases by half
std::size_t half_of(std::size_t limit) { return (limit + 1) / 2; }
}  // namespace

void DeviceStore::cleanup_outside_to_half() {
  const std::size_t keep = half_of(cfg_.outside_limit);
  std::stable_sort(outside_.begin(), outside_.end(),
                   [](const OutsideEntry& a, const OutsideEntry& b) {
                     if (a.score != b.score) return a.score < b.score;
                     return a.seq < b.seq;  // earlier insertion evicted first
                   });
  outside_.erase(outside_.begin(),
                 outside_.begin() + static_cast<std::ptrdiff_t>(outside_.size() - keep));
}

void DeviceStore::cleanup_local_to_half() {
  const std::size_t keep = half_of(cfg_.local_limit);
  std::stable_sort(local_.begin(), local_.end(),
                   [](const LocalEntry& a, const LocalEntry& b) {
                     if (a.sample.day != b.sample.day) return a.sample.day < b.sample.day;
                     return a.seq < b.seq;
                   });
  local_.erase(local_.begin(),
               local_.begin() + static_cast<std::ptrdiff_t>(local_.size() - keep));
}

IngestCounts DeviceStore::ingest_matched(const std::vector<Sample>& samples) {
  IngestCounts counts;
  for (const Sample& s : samples) {
    if (outside_.size() >= cfg_.outside_limit) {
      const std::size_t before = outside_.size();
      cleanup_outside_to_half();
      counts.evicted += before - outside_.size();
    }
    OutsideEntry e;
    e.sample = s;
    e.seq = next_seq_++;
    outside_.push_back(std::move(e));
    ++counts.stored;
  }
  return counts;
}

IngestCounts DeviceStore::add_local(const Sample& sample) {
  IngestCounts counts;
  if (local_.size() >= cfg_.local_limit) {
    const std::size_t before = local_.size();
    cleanup_local_to_half();
    counts.evicted += before - local_.size();
  }
  local_.push_back({sample, next_seq_++});
  counts.stored = 1;
  return counts;
}

GcCounts DeviceStore::lifecycle_gc(int now_day) {
  GcCounts counts;
  const std::size_t before = local_.size();
  std::erase_if(local_, [&](const LocalEntry& e) {
    return now_day - e.sample.day > cfg_.t_prime;
  });
  counts.local_removed = before - local_.size();
  return counts;
}

std::vector<const Sample*> DeviceStore::local_validation(int now_day) const {
  std::vector<const Sample*> out;
  for (const auto& e : local_) {
    const int age = now_day - e.sample.day;
    if (age >= 0 && age <= cfg_.t) out.push_back(&e.sample);
  }
  return out;
}

std::vector<const Sample*> DeviceStore::local_recommender_train(int now_day) const {
  std::vector<const Sample*> out;
  for (const auto& e : local_) {
    const int age = now_day - e.sample.day;
    if (age > cfg_.t && age <= cfg_.t_prime) out.push_back(&e.sample);
  }
  return out;
}

std::vector<const Sample*> DeviceStore::local_all() const {
  std::vector<const Sample*> out;
  out.reserve(local_.size());
  for (const auto& e : local_) out.push_back(&e.sample);
  return out;
}

std::vector<const OutsideEntry*> DeviceStore::pending_entries() const {
  std::vector<const OutsideEntry*> out;
  for (const auto& e : outside_) {
    if (e.pending) out.push_back(&e);
  }
  return out;
}

std::vector<const OutsideEntry*> DeviceStore::filtered_entries() const {
  std::vector<const OutsideEntry*> out;
  for (const auto& e : outside_) {
    if (!e.pending && e.scored) out.push_back(&e);
  }
  return out;
}

void DeviceStore::record_score(std::uint64_t sample_id, double score) {
  for (auto& e : outside_) {
    if (e.sample.sample_id == sample_id) {
      e.score = score;
      e.scored = true;
      e.pending = false;
      return;
    }
  }
  throw Error("record_score: sample not in outside table");
}

std::size_t DeviceStore::discard_outside(const std::vector<std::uint64_t>& sample_ids) {
  const std::size_t before = outside_.size();
  std::erase_if(outside_, [&](const OutsideEntry& e) {
    return std::find(sample_ids.begin(), sample_ids.end(), e.sample.sample_id) !=
           sample_ids.end();
  });
  return before - outside_.size();
}

}  // namespace coda::device
