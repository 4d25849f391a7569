#include "coda/sample.hpp"

#include <nlohmann/json.hpp>
#include <sstream>

#include "coda/error.hpp"

namespace coda {

using json = nlohmann::json;

const char* animation_name(Animation a) {
  switch (a) {
    case Animation::kBubble:
      return "bubble";
    case Animation::kGif:
      return "gif";
    case Animation::kNone:
      return "none";
  }
  return "none";
}

Animation animation_from_name(const std::string& name) {
  if (name == "bubble") return Animation::kBubble;
  if (name == "gif") return Animation::kGif;
  if (name == "none") return Animation::kNone;
  throw JsonParseError("unknown animation type: " + name);
}

std::string to_canonical_json(const Sample& s) {
  // nlohmann::json keeps object keys sorted, which is exactly the canonical
  // order: animation, behavior_seq, behavior_stats, day, item_clicks, label,
  // profile, sample_id, target_item, user_id.
  json j;
  j["animation"] = animation_name(s.animation);
  j["behavior_seq"] = s.behavior_seq;
  j["behavior_stats"] = s.behavior_stats;
  j["day"] = s.day;
  j["item_clicks"] = s.item_clicks;
  j["label"] = s.label;
  j["profile"] = s.profile;
  j["sample_id"] = s.sample_id;
  j["target_item"] = s.target_item;
  j["user_id"] = s.user_id;
  return j.dump();
}

Sample sample_from_json(const std::string& line) {
  json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object()) {
    throw JsonParseError("malformed sample JSON");
  }
  try {
    Sample s;
    s.animation = animation_from_name(j.at("animation").get<std::string>());
    s.behavior_seq = j.at("behavior_seq").get<std::vector<std::int32_t>>();
    s.behavior_stats = j.at("behavior_stats").get<std::vector<double>>();
    s.day = j.at("day").get<std::int32_t>();
    s.item_clicks = j.at("item_clicks").get<std::vector<std::int32_t>>();
    s.label = j.at("label").get<int>();
    s.profile = j.at("profile").get<std::vector<double>>();
    s.sample_id = j.at("sample_id").get<std::uint64_t>();
    s.target_item = j.at("target_item").get<std::int32_t>();
    s.user_id = j.at("user_id").get<std::uint64_t>();
    return s;
  } catch (const json::exception& e) {
    throw JsonParseError(std::string("bad sample fields: ") + e.what());
  }
}

std::string to_ldjson(const std::vector<Sample>& samples) {
  std::string out;
  for (const auto& s : samples) {
    out += to_canonical_json(s);
    out += '\n';
  }
  return out;
}

std::vector<Sample> samples_from_ldjson(const std::string& text) {
  std::vector<Sample> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(sample_from_json(line));
  }
  return out;
}

}  // namespace coda
