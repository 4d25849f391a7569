#include "coda/cloud/cloud.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <nlohmann/json.hpp>
#include <random>

#include "coda/error.hpp"
#include "coda/mlkit/train.hpp"
#include "coda/tunnel/codec.hpp"

namespace coda::cloud {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::vector<double> extract_user_vector(const std::vector<Sample>& samples) {
  if (samples.empty()) throw Error("extract_user_vector: no samples");
  const std::size_t dim = samples.front().behavior_stats.size();
  std::vector<double> mean(dim, 0.0);
  for (const auto& s : samples) {
    if (s.behavior_stats.size() != dim) {
      throw Error("extract_user_vector: inconsistent feature dimension");
    }
    for (std::size_t i = 0; i < dim; ++i) mean[i] += s.behavior_stats[i];
  }
  double norm_sq = 0.0;
  for (double& v : mean) {
    v /= static_cast<double>(samples.size());
    norm_sq += v * v;
  }
  if (norm_sq < 1e-24) {
    throw Error("extract_user_vector: zero-norm mean, user excluded");
  }
  const double inv = 1.0 / std::sqrt(norm_sq);
  for (double& v : mean) v *= inv;
  return mean;
}

void CloudStore::add_samples(const std::vector<Sample>& samples) {
  std::unique_lock lock(mu_);
  for (const auto& s : samples) {
    auto& hist = warehouse_[s.user_id];
    hist.push_back(s);
    if (cfg_.warehouse_cap > 0 &&
        hist.size() > static_cast<std::size_t>(cfg_.warehouse_cap)) {
      hist.erase(hist.begin());
    }
  }
}

std::vector<Sample> CloudStore::samples_of(std::uint64_t user) const {
  std::shared_lock lock(mu_);
  auto it = warehouse_.find(user);
  return it == warehouse_.end() ? std::vector<Sample>{} : it->second;
}

std::vector<Sample> CloudStore::all_samples() const {
  std::shared_lock lock(mu_);
  std::vector<Sample> out;
  for (const auto& [_, samples] : warehouse_) {
    out.insert(out.end(), samples.begin(), samples.end());
  }
  return out;
}

std::vector<std::uint64_t> CloudStore::known_users() const {
  std::shared_lock lock(mu_);
  std::vector<std::uint64_t> out;
  for (const auto& [user, _] : warehouse_) out.push_back(user);
  return out;
}

void CloudStore::rebuild_user_vectors() {
  std::unique_lock lock(mu_);
  vectors_.clear();
  for (const auto& [user, samples] : warehouse_) {
    try {
      vectors_.push_back({user, extract_user_vector(samples)});
    } catch (const Error&) {
      // empty or zero-norm: user stays out of the vector space
    }
  }
  centroids_.clear();
  cells_.clear();
}

std::vector<UserVector> CloudStore::user_vectors() const {
  std::shared_lock lock(mu_);
  return vectors_;
}

namespace {
double dist_sq(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = a[i] - b[i];
    d += t * t;
  }
  return d;
}
}  // namespace

KnnResult CloudStore::knn_over(const std::vector<std::size_t>& candidate_idx,
                               std::uint64_t target) const {
  const UserVector* tv = nullptr;
  for (const auto& v : vectors_) {
    if (v.user_id == target) {
      tv = &v;
      break;
    }
  }
  if (tv == nullptr) throw Error("target user has no vector");
  std::vector<std::pair<double, std::uint64_t>> scored;
  scored.reserve(candidate_idx.size());
  for (std::size_t idx : candidate_idx) {
    const auto& v = vectors_[idx];
    if (v.user_id == target) continue;  // self-exclusion
    scored.emplace_back(dist_sq(tv->vec, v.vec), v.user_id);
  }
  std::sort(scored.begin(), scored.end());
  KnnResult result;
  result.truncated = scored.size() < static_cast<std::size_t>(cfg_.k);
  const std::size_t take = std::min<std::size_t>(scored.size(), static_cast<std::size_t>(cfg_.k));
  result.users.reserve(take);
  for (std::size_t i = 0; i < take; ++i) result.users.push_back(scored[i].second);
  return result;
}

KnnResult CloudStore::knn_match(std::uint64_t target) const {
  std::shared_lock lock(mu_);
  std::vector<std::size_t> all(vectors_.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return knn_over(all, target);
}

void CloudStore::build_coarse_index(int n_cells, int iters, std::uint64_t seed) {
  std::unique_lock lock(mu_);
  if (vectors_.empty()) throw Error("no user vectors to index");
  n_cells = std::min<int>(n_cells, static_cast<int>(vectors_.size()));
  std::mt19937_64 rng(seed);
  centroids_.clear();
  std::vector<std::size_t> pick(vectors_.size());
  for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = i;
  std::shuffle(pick.begin(), pick.end(), rng);
  for (int c = 0; c < n_cells; ++c) centroids_.push_back(vectors_[pick[c]].vec);

  std::vector<int> assign(vectors_.size(), 0);
  for (int it = 0; it < iters; ++it) {
    for (std::size_t i = 0; i < vectors_.size(); ++i) {
      double best = 1e300;
      for (int c = 0; c < n_cells; ++c) {
        const double d = dist_sq(vectors_[i].vec, centroids_[c]);
        if (d < best) {
          best = d;
          assign[i] = c;
        }
      }
    }
    const std::size_t dim = centroids_[0].size();
    std::vector<std::vector<double>> sums(centroids_.size(), std::vector<double>(dim, 0.0));
    std::vector<int> counts(centroids_.size(), 0);
    for (std::size_t i = 0; i < vectors_.size(); ++i) {
      for (std::size_t j = 0; j < dim; ++j) sums[assign[i]][j] += vectors_[i].vec[j];
      ++counts[assign[i]];
    }
    for (std::size_t c = 0; c < centroids_.size(); ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t j = 0; j < dim; ++j) centroids_[c][j] = sums[c][j] / counts[c];
    }
  }
  cells_.assign(centroids_.size(), {});
  for (std::size_t i = 0; i < vectors_.size(); ++i) {
    cells_[assign[i]].push_back(i);
  }
}

KnnResult CloudStore::knn_match_approx(std::uint64_t target, int probe_cells) const {
  std::shared_lock lock(mu_);
  if (centroids_.empty()) throw Error("coarse index not built");
  const UserVector* tv = nullptr;
  for (const auto& v : vectors_) {
    if (v.user_id == target) tv = &v;
  }
  if (tv == nullptr) throw Error("target user has no vector");
  std::vector<std::pair<double, std::size_t>> cell_order;
  for (std::size_t c = 0; c < centroids_.size(); ++c) {
    cell_order.emplace_back(dist_sq(tv->vec, centroids_[c]), c);
  }
  std::sort(cell_order.begin(), cell_order.end());
  std::vector<std::size_t> candidates;
  const std::size_t probes = std::min<std::size_t>(cell_order.size(),
                                                   static_cast<std::size_t>(probe_cells));
  for (std::size_t p = 0; p < probes; ++p) {
    const auto& cell = cells_[cell_order[p].second];
    candidates.insert(candidates.end(), cell.begin(), cell.end());
  }
  return knn_over(candidates, target);
}

std::vector<std::uint64_t> CloudStore::build_batches(std::uint64_t target,
                                                     const std::vector<Sample>& matched,
                                                     int day) {
  if (matched.empty()) throw Error("build_batches: empty matched set");
  std::unique_lock lock(mu_);

  // fragment rule: full default-size batches, then the remainder stands
  // alone if >= threshold, otherwise it merges into the final batch
  const std::size_t n = matched.size();
  const auto bsz = static_cast<std::size_t>(cfg_.batch_size_default);
  std::vector<std::size_t> sizes;
  std::size_t full = n / bsz;
  std::size_t rem = n % bsz;
  sizes.assign(full, bsz);
  if (rem > 0) {
    if (!sizes.empty() && rem < static_cast<std::size_t>(cfg_.fragment_threshold) &&
        bsz + rem <= static_cast<std::size_t>(cfg_.batch_size_max)) {
      sizes.back() += rem;
    } else {
      sizes.push_back(rem);
    }
  }

  std::vector<std::uint64_t> ids;
  std::size_t pos = 0;
  for (std::size_t sz : sizes) {
    Batch b;
    b.batch_id = next_batch_id_++;
    b.user_id = target;
    b.day = day;
    for (std::size_t i = 0; i < sz; ++i) {
      const Sample& s = matched[pos++];
      b.sample_ids.push_back(s.sample_id);
      auto [it, inserted] = payloads_.try_emplace(s.sample_id);
      if (inserted) it->second = to_canonical_json(s);
      ++payload_refs_[s.sample_id];
    }
    user_batches_[target].push_back(b.batch_id);
    ids.push_back(b.batch_id);
    batches_.emplace(b.batch_id, std::move(b));
  }
  return ids;
}

std::vector<std::uint64_t> CloudStore::match_and_build(std::uint64_t target, int day) {
  KnnResult knn = knn_match(target);
  std::vector<Sample> matched;
  {
    std::shared_lock lock(mu_);
    if (cfg_.max_matched_per_round <= 0) {
      for (std::uint64_t u : knn.users) {
        auto it = warehouse_.find(u);
        if (it == warehouse_.end()) continue;
        matched.insert(matched.end(), it->second.begin(), it->second.end());
      }
    } else {
      // round-robin across neighbors, nearest first, most recent samples
      // first within a neighbor, until the cap fills
      const auto cap = static_cast<std::size_t>(cfg_.max_matched_per_round);
      std::vector<const std::vector<Sample>*> pools;
      for (std::uint64_t u : knn.users) {
        auto it = warehouse_.find(u);
        if (it != warehouse_.end() && !it->second.empty()) pools.push_back(&it->second);
      }
      std::size_t round = 0;
      bool any = true;
      while (matched.size() < cap && any) {
        any = false;
        for (const auto* pool : pools) {
          if (round >= pool->size()) continue;
          matched.push_back((*pool)[pool->size() - 1 - round]);
          any = true;
          if (matched.size() >= cap) break;
        }
        ++round;
      }
    }
  }
  if (matched.empty()) return {};
  return build_batches(target, matched, day);
}

std::vector<std::uint64_t> CloudStore::batch_list(std::uint64_t user) const {
  std::shared_lock lock(mu_);
  auto it = user_batches_.find(user);
  return it == user_batches_.end() ? std::vector<std::uint64_t>{} : it->second;
}

std::string CloudStore::query_batch_locked(std::uint64_t user,
                                           std::uint64_t batch_id) const {
  auto it = batches_.find(batch_id);
  if (it == batches_.end()) {
    if (expired_.count(batch_id) > 0) throw GoneError("batch expired");
    throw NotFoundError("unknown batch id");
  }
  const Batch& b = it->second;
  if (b.user_id != user) throw AuthorizationError("batch belongs to another user");
  if (now_day_ - b.day > cfg_.retention_days) throw GoneError("batch past retention");
  std::string raw;
  for (std::uint64_t sid : b.sample_ids) {
    raw += payloads_.at(sid);
    raw += '\n';
  }
  return tunnel::encode_ldjson_text(raw);
}

std::string CloudStore::query_batch(std::uint64_t user, std::uint64_t batch_id) const {
  std::shared_lock lock(mu_);
  return query_batch_locked(user, batch_id);
}

void CloudStore::set_day(int now_day) {
  std::unique_lock lock(mu_);
  now_day_ = now_day;
}

std::size_t CloudStore::gc_expired(int now_day) {
  std::unique_lock lock(mu_);
  now_day_ = now_day;
  std::size_t removed = 0;
  for (auto it = batches_.begin(); it != batches_.end();) {
    if (now_day - it->second.day > cfg_.retention_days) {
      for (std::uint64_t sid : it->second.sample_ids) {
        if (--payload_refs_[sid] == 0) {
          payload_refs_.erase(sid);
          payloads_.erase(sid);
        }
      }
      auto& list = user_batches_[it->second.user_id];
      list.erase(std::remove(list.begin(), list.end(), it->first), list.end());
      expired_.emplace(it->first, now_day);
      it = batches_.erase(it);
      ++removed;
    } else {
      ++it;
    }
  }
  return removed;
}

std::size_t CloudStore::unique_payload_bytes() const {
  std::shared_lock lock(mu_);
  std::size_t total = 0;
  for (const auto& [_, payload] : payloads_) total += payload.size();
  return total;
}

std::size_t CloudStore::id_list_bytes() const {
  std::shared_lock lock(mu_);
  std::size_t total = 0;
  for (const auto& [_, b] : batches_) total += b.sample_ids.size() * sizeof(std::uint64_t);
  return total;
}

std::size_t CloudStore::total_store_bytes() const {
  // payloads once each, plus id lists, plus fixed per-batch header
  std::size_t total = unique_payload_bytes() + id_list_bytes();
  std::shared_lock lock(mu_);
  total += batches_.size() * (3 * sizeof(std::uint64_t));
  return total;
}

std::size_t CloudStore::sample_map_size() const {
  std::shared_lock lock(mu_);
  return payloads_.size();
}

mlkit::RecommenderModel CloudStore::train_global(const mlkit::RecommenderConfig& mc,
                                                 const GlobalTrainConfig& tc) const {
  std::vector<Sample> pool = all_samples();
  if (pool.empty()) throw Error("train_global: empty sample set");
  bool has_pos = false, has_neg = false;
  for (const auto& s : pool) (s.label == 1 ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg) {
    throw DegenerateLabelsError("train_global: single-class global data");
  }
  mlkit::RecommenderConfig cfg = mc;
  cfg.seed = tc.seed;
  mlkit::RecommenderModel model(cfg);
  std::mt19937_64 rng(tc.seed);
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t pos = 0;
    while (pos < order.size()) {
      mlkit::Minibatch batch;
      const std::size_t end = std::min(pos + static_cast<std::size_t>(tc.minibatch),
                                       order.size());
      for (std::size_t i = pos; i < end; ++i) {
        batch.add(&pool[order[i]], pool[order[i]].label);
      }
      mlkit::sgd_step(model, batch, tc.lr);
      pos = end;
    }
  }
  return model;
}

void CloudStore::save(const std::string& dir) const {
  std::shared_lock lock(mu_);
  fs::create_directories(dir);
  {
    std::ofstream out(fs::path(dir) / "batches.jsonl");
    for (const auto& [_, b] : batches_) {
      json j;
      j["batch_id"] = b.batch_id;
      j["day"] = b.day;
      j["sample_ids"] = b.sample_ids;
      j["user_id"] = b.user_id;
      out << j.dump() << '\n';
    }
  }
  {
    std::ofstream bin(fs::path(dir) / "samples.bin", std::ios::binary);
    std::ofstream idx(fs::path(dir) / "samples.idx");
    std::uint64_t offset = 0;
    for (const auto& [sid, payload] : payloads_) {
      const std::string compressed = tunnel::deflate_bytes(payload);
      const auto len = static_cast<std::uint32_t>(compressed.size());
      bin.write(reinterpret_cast<const char*>(&len), sizeof(len));
      bin.write(compressed.data(), static_cast<std::streamsize>(compressed.size()));
      idx << sid << ' ' << offset << '\n';
      offset += sizeof(len) + compressed.size();
    }
  }
}

void CloudStore::load(const std::string& dir) {
  std::unique_lock lock(mu_);
  batches_.clear();
  user_batches_.clear();
  payloads_.clear();
  payload_refs_.clear();
  {
    std::ifstream in(fs::path(dir) / "batches.jsonl");
    if (!in) throw Error("missing batches.jsonl");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json j = json::parse(line);
      Batch b;
      b.batch_id = j.at("batch_id").get<std::uint64_t>();
      b.day = j.at("day").get<int>();
      b.sample_ids = j.at("sample_ids").get<std::vector<std::uint64_t>>();
      b.user_id = j.at("user_id").get<std::uint64_t>();
      next_batch_id_ = std::max(next_batch_id_, b.batch_id + 1);
      user_batches_[b.user_id].push_back(b.batch_id);
      for (std::uint64_t sid : b.sample_ids) ++payload_refs_[sid];
      batches_.emplace(b.batch_id, std::move(b));
    }
  }
  {
    std::ifstream bin(fs::path(dir) / "samples.bin", std::ios::binary);
    std::ifstream idx(fs::path(dir) / "samples.idx");
    if (!bin || !idx) throw Error("missing samples.bin/samples.idx");
    std::uint64_t sid = 0, offset = 0;
    while (idx >> sid >> offset) {
      bin.seekg(static_cast<std::streamoff>(offset));
      std::uint32_t len = 0;
      bin.read(reinterpret_cast<char*>(&len), sizeof(len));
      std::string compressed(len, '\0');
      bin.read(compressed.data(), len);
      if (!bin) throw Error("truncated samples.bin");
      payloads_[sid] = tunnel::inflate_bytes(compressed);
    }
  }
  for (const auto& [_, b] : batches_) {
    for (std::uint64_t sid : b.sample_ids) {
      if (payloads_.count(sid) == 0) throw Error("dangling sample reference");
    }
  }
}

}  // namespace coda::cloud
