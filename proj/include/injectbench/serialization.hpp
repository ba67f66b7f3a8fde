#pragma once

// JSON encoding of the core records. Enumerations serialize as their
// snake_case names; this is the manifest wire format.

#include <optional>
#include <string>

#include <json.hpp>

#include "injectbench/core.hpp"

namespace injectbench {

using json = nlohmann::json;

template <typename E>
  requires requires { EnumNames<E>::values; }
void to_json(json& j, E e) {
  j = std::string(to_string(e));
}

template <typename E>
  requires requires { EnumNames<E>::values; }
void from_json(const json& j, E& e) {
  e = parse_enum<E>(j.get<std::string>());
}

template <typename T>
void put_optional(json& j, const char* key, const std::optional<T>& v) {
  if (v) j[key] = *v;
}

template <typename T>
void get_optional(const json& j, const char* key, std::optional<T>& v) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) {
    v = it->get<T>();
  } else {
    v.reset();
  }
}

inline void to_json(json& j, const BBox& b) { j = json::array({b.x, b.y, b.w, b.h}); }

inline void from_json(const json& j, BBox& b) {
  if (j.is_array()) {
    if (j.size() != 4) throw std::invalid_argument("bbox must have 4 entries");
    b = {j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
  } else {
    b = {j.at("x").get<int>(), j.at("y").get<int>(), j.at("w").get<int>(), j.at("h").get<int>()};
  }
}

inline void to_json(json& j, const Screenshot& s) {
  j = json{{"id", s.id},
           {"app", s.app},
           {"image_path", s.image_path},
           {"width", s.width},
           {"height", s.height},
           {"collected_ui_state", s.collected_ui_state}};
}

inline void from_json(const json& j, Screenshot& s) {
  j.at("id").get_to(s.id);
  j.at("app").get_to(s.app);
  j.at("image_path").get_to(s.image_path);
  j.at("width").get_to(s.width);
  j.at("height").get_to(s.height);
  s.collected_ui_state = j.value("collected_ui_state", "");
}

inline void to_json(json& j, const Region& r) {
  j = json{{"id", r.id},
           {"screenshot_id", r.screenshot_id},
           {"region_type", r.region_type},
           {"bbox", r.bbox},
           {"user_controllable", r.user_controllable},
           {"provenance", r.provenance}};
  put_optional(j, "ocr_text", r.ocr_text);
  put_optional(j, "ocr_confidence", r.ocr_confidence);
  if (r.needs_human) j["needs_human"] = true;
  if (r.ocr_unavailable) j["ocr_unavailable"] = true;
}

inline void from_json(const json& j, Region& r) {
  j.at("id").get_to(r.id);
  r.screenshot_id = j.value("screenshot_id", "");
  j.at("region_type").get_to(r.region_type);
  j.at("bbox").get_to(r.bbox);
  r.user_controllable = j.value("user_controllable", true);
  r.provenance = j.contains("provenance") ? j["provenance"].get<RegionProvenance>()
                                          : RegionProvenance::coarse;
  get_optional(j, "ocr_text", r.ocr_text);
  get_optional(j, "ocr_confidence", r.ocr_confidence);
  r.needs_human = j.value("needs_human", false);
  r.ocr_unavailable = j.value("ocr_unavailable", false);
}

inline void to_json(json& j, const Action& a) {
  j = json{{"primitive", a.primitive}};
  put_optional(j, "target", a.target);
  put_optional(j, "text", a.text);
  put_optional(j, "direction", a.direction);
}

inline void from_json(const json& j, Action& a) {
  j.at("primitive").get_to(a.primitive);
  get_optional(j, "target", a.target);
  get_optional(j, "text", a.text);
  get_optional(j, "direction", a.direction);
}

inline void to_json(json& j, const ArtefactIssue& i) {
  j = json{{"category", i.category}, {"severity", i.severity}, {"note", i.note}};
}

inline void from_json(const json& j, ArtefactIssue& i) {
  j.at("category").get_to(i.category);
  j.at("severity").get_to(i.severity);
  i.note = j.value("note", "");
}

inline void to_json(json& j, const ModerationReport& r) {
  j = json{{"issues", r.issues}, {"verdict", r.verdict}, {"retry_index", r.retry_index}};
}

inline void from_json(const json& j, ModerationReport& r) {
  j.at("issues").get_to(r.issues);
  j.at("retry_index").get_to(r.retry_index);
  // The verdict is always re-derived; a stored verdict that disagrees is corrupt.
  r.verdict = verdict_from_issues(r.issues);
  if (j.contains("verdict") && j["verdict"].get<Verdict>() != r.verdict) {
    throw std::invalid_argument("stored verdict disagrees with its issue list");
  }
}

inline void to_json(json& j, const InjectionSample& s) {
  j = json{{"id", s.id},
           {"screenshot_id", s.screenshot_id},
           {"region_id", s.region_id},
           {"intent", s.intent},
           {"action_category", intent_to_category(s.intent)},
           {"region_type", s.region_type},
           {"app", s.app},
           {"user_goal", s.user_goal},
           {"payload_text", s.payload_text},
           {"injected_image_path", s.injected_image_path},
           {"target_action", s.target_action},
           {"moderation", s.moderation},
           {"status", s.status},
           {"payload_attempts", s.payload_attempts},
           {"render_attempts", s.render_attempts}};
  put_optional(j, "answer_token", s.answer_token);
  put_optional(j, "trim_reason", s.trim_reason);
  put_optional(j, "drop_reason", s.drop_reason);
  if (!s.warnings.empty()) j["warnings"] = s.warnings;
  if (s.repaired) j["repaired"] = true;
}

inline void from_json(const json& j, InjectionSample& s) {
  j.at("id").get_to(s.id);
  j.at("screenshot_id").get_to(s.screenshot_id);
  j.at("region_id").get_to(s.region_id);
  j.at("intent").get_to(s.intent);
  j.at("region_type").get_to(s.region_type);
  j.at("app").get_to(s.app);
  j.at("user_goal").get_to(s.user_goal);
  j.at("payload_text").get_to(s.payload_text);
  j.at("injected_image_path").get_to(s.injected_image_path);
  j.at("target_action").get_to(s.target_action);
  j.at("moderation").get_to(s.moderation);
  j.at("status").get_to(s.status);
  s.payload_attempts = j.value("payload_attempts", 0);
  s.render_attempts = j.value("render_attempts", 0);
  get_optional(j, "answer_token", s.answer_token);
  get_optional(j, "trim_reason", s.trim_reason);
  get_optional(j, "drop_reason", s.drop_reason);
  s.warnings = j.value("warnings", std::vector<std::string>{});
  s.repaired = j.value("repaired", false);
}

}  // namespace injectbench
