#include "coda/device/model_store.hpp"

#include <filesystem>
#include <fstream>
#include <mutex>

#include "coda/error.hpp"

namespace coda::device {

namespace fs = std::filesystem;

void ModelStore::init(mlkit::ParamStore m) {
  if (initialized_) throw Error("model store already initialized");
  m_ = m;
  m0_ = std::move(m);  // backup duplicate, never modified again
  initialized_ = true;
}

mlkit::ParamStore& ModelStore::begin_train() {
  if (!initialized_) throw Error("model store not initialized");
  if (buf_.has_value()) throw Error("a training transaction is already open");
  buf_ = m_;
  return *buf_;
}

mlkit::ParamStore& ModelStore::buffer() {
  if (!buf_.has_value()) throw Error("no open training transaction");
  return *buf_;
}

void ModelStore::commit(const std::function<void()>& while_locked) {
  if (!buf_.has_value()) throw Error("commit without an open transaction");
  locked_.store(true, std::memory_order_release);
  if (while_locked) while_locked();
  {
    std::unique_lock lock(m_mu_);
    m_ = std::move(*buf_);
  }
  locked_.store(false, std::memory_order_release);
  buf_.reset();
}

void ModelStore::rollback() {
  if (!buf_.has_value()) throw Error("rollback without an open transaction");
  buf_.reset();
}

// ---------------------------------------------------------------------------

namespace {

void write_blob(const std::string& path, const mlkit::ParamStore& p) {
  // write-to-temp + rename keeps each individual file op atomic
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    p.save(out);
  }
  fs::rename(tmp, path);
}

mlkit::ParamStore read_blob(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("missing model file: " + path);
  return mlkit::ParamStore::load(in);
}

}  // namespace

DiskModelStore::DiskModelStore(std::string dir) : dir_(std::move(dir)) {
  fs::create_directories(dir_);
}

std::string DiskModelStore::path(const char* name) const {
  return (fs::path(dir_) / name).string();
}

void DiskModelStore::init(const mlkit::ParamStore& m) {
  write_blob(path("M.bin"), m);
  write_blob(path("M0.bin"), m);
}

void DiskModelStore::begin_train() {
  if (buffer_present()) throw Error("a training transaction is already open");
  write_blob(path("M_buf.bin"), read_m());
}

mlkit::ParamStore DiskModelStore::read_buffer() const {
  return read_blob(path("M_buf.bin"));
}

void DiskModelStore::write_buffer(const mlkit::ParamStore& p) {
  write_blob(path("M_buf.bin"), p);
}

void DiskModelStore::commit(int crash_after) {
  if (!buffer_present()) throw Error("commit without an open transaction");
  {
    std::ofstream lock(path("LOCK"));
    lock << "write-lock\n";
  }
  if (crash_after <= 1) return;
  write_blob(path("M.bin"), read_buffer());
  if (crash_after <= 2) return;
  fs::remove(path("LOCK"));
  if (crash_after <= 3) return;
  fs::remove(path("M_buf.bin"));
}

void DiskModelStore::rollback(int crash_after) {
  if (!buffer_present()) throw Error("rollback without an open transaction");
  if (crash_after < 1) return;
  fs::remove(path("M_buf.bin"));
}

void DiskModelStore::recover() {
  const bool lock = lock_present();
  const bool buf = buffer_present();
  if (lock && buf) {
    // commit was decided: redo the overwrite
    write_blob(path("M.bin"), read_buffer());
    fs::remove(path("LOCK"));
    fs::remove(path("M_buf.bin"));
  } else if (buf) {
    fs::remove(path("M_buf.bin"));
  } else if (lock) {
    fs::remove(path("LOCK"));
  }
}

mlkit::ParamStore DiskModelStore::read_m() const { return read_blob(path("M.bin")); }
mlkit::ParamStore DiskModelStore::read_m0() const { return read_blob(path("M0.bin")); }
bool DiskModelStore::lock_present() const { return fs::exists(path("LOCK")); }
bool DiskModelStore::buffer_present() const { return fs::exists(path("M_buf.bin")); }

}  // namespace coda::device
