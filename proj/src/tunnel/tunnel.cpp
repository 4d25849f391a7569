#include "coda/tunnel/tunnel.hpp"

#include "coda/error.hpp"
#include "coda/tunnel/codec.hpp"

namespace coda::tunnel {

PullResult DownTunnel::pull_next_batch(std::uint64_t device_id, int now_day) {
  DeviceState& st = devices_[device_id];
  if (st.quota.day != now_day) {
    st.quota.day = now_day;
    st.quota.batches_pulled_today = 0;
  }
  st.quota.daily_limit = daily_limit_;
  if (st.quota.batches_pulled_today >= daily_limit_) {
    return {PullStatus::kQuotaExhausted, {}, 0};
  }
  const auto list = cloud_.batch_list(device_id);
  // skip entries that expired before this device got to them
  while (st.cursor < list.size()) {
    const std::uint64_t batch_id = list[st.cursor];
    std::string payload;
    try {
      payload = cloud_.query_batch(device_id, batch_id);
    } catch (const GoneError&) {
      ++st.cursor;
      continue;
    }
    if (transport_.should_fail && transport_.should_fail()) {
      // quota intentionally untouched
      throw TransportError("simulated transport failure");
    }
    PullResult result;
    result.status = PullStatus::kBatch;
    result.batch_id = batch_id;
    result.samples = decode_payload_text(payload);
    ++st.cursor;
    ++st.quota.batches_pulled_today;
    return result;
  }
  return {PullStatus::kNoMoreBatches, {}, 0};
}

QuotaState DownTunnel::quota(std::uint64_t device_id) const {
  auto it = devices_.find(device_id);
  return it == devices_.end() ? QuotaState{} : it->second.quota;
}

std::vector<LogRecord> aggregate_logs(const std::vector<LogRecord>& records) {
  std::map<std::tuple<std::uint64_t, int, int>, LogRecord> merged;
  for (const auto& r : records) {
    auto key = std::make_tuple(r.device_id, r.day, static_cast<int>(r.event));
    auto [it, inserted] = merged.try_emplace(key, r);
    if (!inserted) {
      it->second.count += r.count;
    }
  }
  std::vector<LogRecord> out;
  out.reserve(merged.size());
  for (auto& [_, r] : merged) out.push_back(r);
  return out;
}

std::size_t LogStore::report_logs(std::uint64_t device_id,
                                  const std::vector<LogRecord>& records) {
  const auto aggregated = aggregate_logs(records);
  std::lock_guard lock(mu_);
  std::size_t accepted = 0;
  for (const auto& r : aggregated) {
    if (r.record_id != 0) {
      auto [_, inserted] = seen_records_.try_emplace(r.record_id, true);
      if (!inserted) continue;  // duplicate send
    }
    counters_[{device_id, r.day, static_cast<int>(r.event)}] += r.count;
    ++accepted;
  }
  return accepted;
}

std::int64_t LogStore::count(std::uint64_t device_id, int day, LogEvent event) const {
  std::lock_guard lock(mu_);
  auto it = counters_.find({device_id, day, static_cast<int>(event)});
  return it == counters_.end() ? 0 : it->second;
}

std::size_t LogStore::aggregated_size() const {
  std::lock_guard lock(mu_);
  return counters_.size();
}

}  // namespace coda::tunnel
