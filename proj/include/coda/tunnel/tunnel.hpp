#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "coda/cloud/cloud.hpp"
#include "coda/sample.hpp"

namespace coda::tunnel {

struct QuotaState {
  int day = 0;
  int batches_pulled_today = 0;
  int daily_limit = 12;
};

enum class PullStatus { kBatch, kQuotaExhausted, kNoMoreBatches };

struct PullResult {
  PullStatus status = PullStatus::kNoMoreBatches;
  std::vector<Sample> samples;
  std::uint64_t batch_id = 0;
};

struct TransportConfig {
  // Injected fault: returns true when the next transfer should fail.
  // Default transport is lossless.
  std::function<bool()> should_fail;
};

enum class LogEvent { kExposure = 0, kClick, kTrain, kFilter };

struct LogRecord {
  std::uint64_t record_id = 0;
  std::uint64_t device_id = 0;
  int day = 0;
  LogEvent event = LogEvent::kExposure;
  std::int64_t count = 1;
};

// Down tunnel: per-device cursor over the cloud's batch list plus the daily
// pull quota. Quota state is per device and only mutated by that device's
// driver; a failed transfer never consumes quota.
class DownTunnel {
 public:
  DownTunnel(cloud::CloudStore& cloud, int daily_limit = 12,
             TransportConfig transport = {})
      : cloud_(cloud), daily_limit_(daily_limit), transport_(std::move(transport)) {}

  // Fetches and decodes the next unpulled batch for the device. Throws
  // TransportError on an injected transport failure (retryable).
  PullResult pull_next_batch(std::uint64_t device_id, int now_day);

  QuotaState quota(std::uint64_t device_id) const;

 private:
  struct DeviceState {
    QuotaState quota;
    std::size_t cursor = 0;  // index into the cloud batch list
  };
  cloud::CloudStore& cloud_;
  int daily_limit_;
  TransportConfig transport_;
  std::map<std::uint64_t, DeviceState> devices_;
};

// Up tunnel log store: same-(device, day, event) counters merge on arrival;
// duplicate record ids are dropped.
class LogStore {
 public:
  // Returns the number of aggregated records accepted (duplicates excluded).
  std::size_t report_logs(std::uint64_t device_id,
                          const std::vector<LogRecord>& records);

  std::int64_t count(std::uint64_t device_id, int day, LogEvent event) const;
  std::size_t aggregated_size() const;

 private:
  mutable std::mutex mu_;
  std::map<std::tuple<std::uint64_t, int, int>, std::int64_t> counters_;
  std::map<std::uint64_t, bool> seen_records_;
};

// Aggregation performed on the device before transmission: merges raw
// same-(device, day, event) records into one counter record each.
std::vector<LogRecord> aggregate_logs(const std::vector<LogRecord>& records);

}  // namespace coda::tunnel
