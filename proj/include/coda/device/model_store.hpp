#pragma once

#include <atomic>
#include <functional>
#include <optional>
#include <shared_mutex>
#include <string>

#include "coda/mlkit/params.hpp"

namespace coda::device {

// The M / M0 / M_buf slot discipline:
//  - M  serves inference when no write lock is held;
//  - M0 is an immutable backup created at init and served under the lock;
//  - M_buf exists only between begin_train() and commit()/rollback().
// Commit write-locks M, overwrites it from M_buf, unlocks and drops the
// buffer; rollback drops the buffer and leaves M untouched.
class ModelStore {
 public:
  void init(mlkit::ParamStore m);
  bool initialized() const { return initialized_; }

  mlkit::ParamStore& begin_train();  // throws if a transaction is open
  mlkit::ParamStore& buffer();       // throws if none is open
  bool transaction_open() const { return buf_.has_value(); }
  bool write_locked() const { return locked_.load(std::memory_order_acquire); }

  // `while_locked` (test hook) runs with the write lock held, before the
  // overwrite; inference issued from it must observe M0.
  void commit(const std::function<void()>& while_locked = {});
  void rollback();

  // Runs `fn` against the slot inference must read right now: M, or M0
  // while the write lock is held. The lock check and the slot selection are
  // indivisible from the caller's point of view.
  template <typename F>
  auto read_serving(F&& fn) const {
    if (locked_.load(std::memory_order_acquire)) return fn(m0_);
    std::shared_lock lock(m_mu_);
    // the lock may have been taken between the check and the mutex
    return fn(locked_.load(std::memory_order_acquire) ? m0_ : m_);
  }

  const mlkit::ParamStore& m() const { return m_; }
  const mlkit::ParamStore& m0() const { return m0_; }

 private:
  bool initialized_ = false;
  mlkit::ParamStore m_;
  mlkit::ParamStore m0_;
  std::optional<mlkit::ParamStore> buf_;
  std::atomic<bool> locked_{false};
  mutable std::shared_mutex m_mu_;
};

// On-disk mirror of the slot discipline: M.bin, M0.bin, transient
// M_buf.bin and a lock sentinel file. Commit runs as separate filesystem
// steps so a crash can be injected between any two of them; recover()
// restores a consistent state from the file-presence rules:
//   lock + M_buf present  => redo the overwrite (commit was decided)
//   M_buf without lock    => discard the buffer
//   lock without M_buf    => stale lock, remove it
class DiskModelStore {
 public:
  explicit DiskModelStore(std::string dir);

  void init(const mlkit::ParamStore& m);
  void begin_train();
  mlkit::ParamStore read_buffer() const;
  void write_buffer(const mlkit::ParamStore& p);

  // Steps: 1 write lock sentinel, 2 overwrite M from M_buf, 3 remove lock,
  // 4 remove M_buf. crash_after in [1,4] stops after that step.
  void commit(int crash_after = 4);
  void rollback(int crash_after = 1);  // step 1: remove M_buf
  void recover();

  mlkit::ParamStore read_m() const;
  mlkit::ParamStore read_m0() const;
  bool lock_present() const;
  bool buffer_present() const;

 private:
  std::string path(const char* name) const;
  std::string dir_;
};

}  // namespace coda::device
