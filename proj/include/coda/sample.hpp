#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace coda {

enum class Animation : int { kBubble = 0, kGif = 1, kNone = 2 };

constexpr int kNumAnimations = 3;
constexpr int kMaxBehaviorLen = 512;

const char* animation_name(Animation a);
Animation animation_from_name(const std::string& name);

// One labeled interaction record: the unit of matching, filtering and
// training. Feature groups mirror the icon CTR task (target item, animation,
// profile, item-click sequence, behavior sequence, behavior statistics).
struct Sample {
  std::uint64_t sample_id = 0;
  std::uint64_t user_id = 0;
  std::int32_t day = 0;
  std::int32_t target_item = 0;
  Animation animation = Animation::kNone;
  std::vector<double> profile;
  std::vector<std::int32_t> item_clicks;
  std::vector<std::int32_t> behavior_seq;  // length <= kMaxBehaviorLen
  std::vector<double> behavior_stats;
  int label = 0;  // {0,1}

  bool operator==(const Sample&) const = default;
};

// Canonical single-line JSON: keys in sorted order, no whitespace, UTF-8.
// This is the wire and storage representation; it must round-trip exactly.
std::string to_canonical_json(const Sample& s);
Sample sample_from_json(const std::string& line);  // throws JsonParseError

// Line-delimited JSON over a whole list.
std::string to_ldjson(const std::vector<Sample>& samples);
std::vector<Sample> samples_from_ldjson(const std::string& text);

}  // namespace coda
