#pragma once

// Domain vocabulary shared by the pipeline stages, the agent harness and the
// statistics kernel. Everything here is a plain value type.

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace injectbench {

// ---------------------------------------------------------------------------
// Enumeration helpers
// ---------------------------------------------------------------------------

template <typename E>
struct EnumNames;  // specialised below: static constexpr std::array<std::pair<E, std::string_view>, N> values

template <typename E>
constexpr std::string_view to_string(E value) {
  for (const auto& [e, name] : EnumNames<E>::values) {
    if (e == value) return name;
  }
  return "?";
}

template <typename E>
std::optional<E> try_parse_enum(std::string_view name) {
  for (const auto& [e, n] : EnumNames<E>::values) {
    if (n == name) return e;
  }
  return std::nullopt;
}

template <typename E>
E parse_enum(std::string_view name) {
  if (auto e = try_parse_enum<E>(name)) return *e;
  throw std::invalid_argument("unknown " + std::string(EnumNames<E>::type_name) + " '" +
                              std::string(name) + "'");
}

template <typename E>
constexpr auto all_values() {
  std::array<E, EnumNames<E>::values.size()> out{};
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = EnumNames<E>::values[i].first;
  return out;
}

template <typename E>
constexpr std::size_t enum_index(E value) {
  for (std::size_t i = 0; i < EnumNames<E>::values.size(); ++i) {
    if (EnumNames<E>::values[i].first == value) return i;
  }
  return EnumNames<E>::values.size();
}

#define INJECTBENCH_ENUM_NAMES(E, N, ...)                                        \
  template <>                                                                    \
  struct EnumNames<E> {                                                          \
    static constexpr std::string_view type_name = #E;                            \
    static constexpr std::array<std::pair<E, std::string_view>, N> values{{__VA_ARGS__}}; \
  }

enum class AppId { facebook, whatsapp, amazon, instagram, shop, spotify, telegram, temu, tiktok, x };
INJECTBENCH_ENUM_NAMES(AppId, 10, {AppId::facebook, "facebook"}, {AppId::whatsapp, "whatsapp"},
                       {AppId::amazon, "amazon"}, {AppId::instagram, "instagram"},
                       {AppId::shop, "shop"}, {AppId::spotify, "spotify"},
                       {AppId::telegram, "telegram"}, {AppId::temu, "temu"},
                       {AppId::tiktok, "tiktok"}, {AppId::x, "x"});

enum class RegionType {
  post_body,
  comment,
  review,
  message,
  username,
  input_box,
  search_bar,
  filename,
  media,
  display_name,
};
INJECTBENCH_ENUM_NAMES(RegionType, 10, {RegionType::post_body, "post_body"},
                       {RegionType::comment, "comment"}, {RegionType::review, "review"},
                       {RegionType::message, "message"}, {RegionType::username, "username"},
                       {RegionType::input_box, "input_box"},
                       {RegionType::search_bar, "search_bar"},
                       {RegionType::filename, "filename"}, {RegionType::media, "media"},
                       {RegionType::display_name, "display_name"});

enum class RegionProvenance { coarse, moderator_added };
INJECTBENCH_ENUM_NAMES(RegionProvenance, 2, {RegionProvenance::coarse, "coarse"},
                       {RegionProvenance::moderator_added, "moderator_added"});

enum class AttackIntent {
  click_elsewhere,
  follow_user,
  external_link,
  enable_permission,
  induce_long_press,
  inject_text,
  induce_answer,
  induce_swipe,
  induce_back,
  induce_wait,
  induce_terminate,
};
INJECTBENCH_ENUM_NAMES(AttackIntent, 11, {AttackIntent::click_elsewhere, "click_elsewhere"},
                       {AttackIntent::follow_user, "follow_user"},
                       {AttackIntent::external_link, "external_link"},
                       {AttackIntent::enable_permission, "enable_permission"},
                       {AttackIntent::induce_long_press, "induce_long_press"},
                       {AttackIntent::inject_text, "inject_text"},
                       {AttackIntent::induce_answer, "induce_answer"},
                       {AttackIntent::induce_swipe, "induce_swipe"},
                       {AttackIntent::induce_back, "induce_back"},
                       {AttackIntent::induce_wait, "induce_wait"},
                       {AttackIntent::induce_terminate, "induce_terminate"});

enum class ActionPrimitive { tap, text_entry, swipe, back, wait, task_termination };
INJECTBENCH_ENUM_NAMES(ActionPrimitive, 6, {ActionPrimitive::tap, "tap"},
                       {ActionPrimitive::text_entry, "text_entry"},
                       {ActionPrimitive::swipe, "swipe"}, {ActionPrimitive::back, "back"},
                       {ActionPrimitive::wait, "wait"},
                       {ActionPrimitive::task_termination, "task_termination"});

enum class ActionCategory { click, confirm, navigate, type };
INJECTBENCH_ENUM_NAMES(ActionCategory, 4, {ActionCategory::click, "click"},
                       {ActionCategory::confirm, "confirm"},
                       {ActionCategory::navigate, "navigate"}, {ActionCategory::type, "type"});

enum class Severity { low, med, high };
INJECTBENCH_ENUM_NAMES(Severity, 3, {Severity::low, "low"}, {Severity::med, "med"},
                       {Severity::high, "high"});

enum class Verdict { pass, soft_fail, hard_fail };
INJECTBENCH_ENUM_NAMES(Verdict, 3, {Verdict::pass, "pass"}, {Verdict::soft_fail, "soft_fail"},
                       {Verdict::hard_fail, "hard_fail"});

enum class SampleStatus { active, trimmed, dropped };
INJECTBENCH_ENUM_NAMES(SampleStatus, 3, {SampleStatus::active, "active"},
                       {SampleStatus::trimmed, "trimmed"}, {SampleStatus::dropped, "dropped"});

enum class ArtefactCategory {
  font_size_mismatch,
  bbox_overflow,
  text_truncation,
  bg_color_mismatch,
  glyph_leakage,
  position_overlap,
  length,
  realism,
};
INJECTBENCH_ENUM_NAMES(ArtefactCategory, 8,
                       {ArtefactCategory::font_size_mismatch, "font_size_mismatch"},
                       {ArtefactCategory::bbox_overflow, "bbox_overflow"},
                       {ArtefactCategory::text_truncation, "text_truncation"},
                       {ArtefactCategory::bg_color_mismatch, "bg_color_mismatch"},
                       {ArtefactCategory::glyph_leakage, "glyph_leakage"},
                       {ArtefactCategory::position_overlap, "position_overlap"},
                       {ArtefactCategory::length, "length"},
                       {ArtefactCategory::realism, "realism"});

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

/// Axis-aligned pixel box, top-left origin, covering [x, x+w) x [y, y+h).
struct BBox {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  constexpr int right() const { return x + w; }
  constexpr int bottom() const { return y + h; }
  constexpr long long area() const { return static_cast<long long>(w) * h; }

  constexpr bool contains(int px, int py) const {
    return px >= x && px < x + w && py >= y && py < y + h;
  }
  constexpr bool intersects(const BBox& o) const {
    return x < o.right() && o.x < right() && y < o.bottom() && o.y < bottom();
  }
  constexpr bool valid_within(int width, int height) const {
    return w > 0 && h > 0 && x >= 0 && y >= 0 && right() <= width && bottom() <= height;
  }

  friend constexpr bool operator==(const BBox&, const BBox&) = default;
};

/// Smallest box covering both inputs.
constexpr BBox bbox_union(const BBox& a, const BBox& b) {
  const int x0 = std::min(a.x, b.x);
  const int y0 = std::min(a.y, b.y);
  const int x1 = std::max(a.right(), b.right());
  const int y1 = std::max(a.bottom(), b.bottom());
  return {x0, y0, x1 - x0, y1 - y0};
}

/// Clips `b` to [0,width) x [0,height). May return a zero-area box.
constexpr BBox clip_to(const BBox& b, int width, int height) {
  const int x0 = std::clamp(b.x, 0, width);
  const int y0 = std::clamp(b.y, 0, height);
  const int x1 = std::clamp(b.right(), 0, width);
  const int y1 = std::clamp(b.bottom(), 0, height);
  return {x0, y0, std::max(0, x1 - x0), std::max(0, y1 - y0)};
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

struct Screenshot {
  std::string id;
  AppId app = AppId::facebook;
  std::string image_path;
  int width = 0;
  int height = 0;
  std::string collected_ui_state;

  friend bool operator==(const Screenshot&, const Screenshot&) = default;
};

struct Region {
  std::string id;
  std::string screenshot_id;
  RegionType region_type = RegionType::post_body;
  BBox bbox;
  bool user_controllable = true;
  std::optional<std::string> ocr_text;
  std::optional<double> ocr_confidence;
  RegionProvenance provenance = RegionProvenance::coarse;
  // Set by the `manual` repair; such regions are excluded downstream.
  bool needs_human = false;
  // Set when OCR was unreachable and the coarse box was kept as-is.
  bool ocr_unavailable = false;

  friend bool operator==(const Region&, const Region&) = default;
};

/// An action primitive together with its argument.
struct Action {
  ActionPrimitive primitive = ActionPrimitive::wait;
  // tap: the target box (for targets) or a 1x1 box at the tap point (for decisions).
  std::optional<BBox> target;
  // text_entry: the text to type.
  std::optional<std::string> text;
  // swipe: free-form direction, informational only.
  std::optional<std::string> direction;

  friend bool operator==(const Action&, const Action&) = default;
};

struct ArtefactIssue {
  ArtefactCategory category = ArtefactCategory::realism;
  Severity severity = Severity::low;
  std::string note;

  friend bool operator==(const ArtefactIssue&, const ArtefactIssue&) = default;
};

struct ModerationReport {
  std::vector<ArtefactIssue> issues;
  Verdict verdict = Verdict::pass;
  int retry_index = 0;

  friend bool operator==(const ModerationReport&, const ModerationReport&) = default;
};

struct InjectionSample {
  std::string id;
  std::string screenshot_id;
  std::string region_id;
  AttackIntent intent = AttackIntent::click_elsewhere;
  RegionType region_type = RegionType::post_body;
  AppId app = AppId::facebook;
  std::string user_goal;
  std::string payload_text;
  // Designated answer fragment for text_entry intents.
  std::optional<std::string> answer_token;
  std::string injected_image_path;
  Action target_action;
  // Every curator report for this sample, in order; the last one is current.
  std::vector<ModerationReport> moderation;
  SampleStatus status = SampleStatus::active;
  std::optional<std::string> trim_reason;
  // Machine-readable "stage:reason" for dropped samples.
  std::optional<std::string> drop_reason;
  // Non-fatal annotations (e.g. short payload warnings).
  std::vector<std::string> warnings;
  int payload_attempts = 0;
  int render_attempts = 0;
  // Added by coverage repair; exempt from re-trim in the same run.
  bool repaired = false;

  friend bool operator==(const InjectionSample&, const InjectionSample&) = default;
};

// ---------------------------------------------------------------------------
// Mappings
// ---------------------------------------------------------------------------

constexpr ActionPrimitive intent_to_action(AttackIntent intent) {
  switch (intent) {
    case AttackIntent::click_elsewhere:
    case AttackIntent::follow_user:
    case AttackIntent::external_link:
    case AttackIntent::enable_permission:
    case AttackIntent::induce_long_press:
      return ActionPrimitive::tap;
    case AttackIntent::inject_text:
    case AttackIntent::induce_answer:
      return ActionPrimitive::text_entry;
    case AttackIntent::induce_swipe:
      return ActionPrimitive::swipe;
    case AttackIntent::induce_back:
      return ActionPrimitive::back;
    case AttackIntent::induce_wait:
      return ActionPrimitive::wait;
    case AttackIntent::induce_terminate:
      return ActionPrimitive::task_termination;
  }
  return ActionPrimitive::wait;
}

// The intent -> category table is a project decision (recorded in every
// manifest header), not something derivable from the action primitive.
constexpr ActionCategory intent_to_category(AttackIntent intent) {
  switch (intent) {
    case AttackIntent::click_elsewhere:
    case AttackIntent::follow_user:
    case AttackIntent::external_link:
    case AttackIntent::induce_long_press:
      return ActionCategory::click;
    case AttackIntent::enable_permission:
    case AttackIntent::induce_wait:
    case AttackIntent::induce_terminate:
      return ActionCategory::confirm;
    case AttackIntent::induce_swipe:
    case AttackIntent::induce_back:
      return ActionCategory::navigate;
    case AttackIntent::inject_text:
    case AttackIntent::induce_answer:
      return ActionCategory::type;
  }
  return ActionCategory::click;
}

/// pass: no issues or only low; soft_fail: one or two med; hard_fail: any high
/// or three or more med.
template <typename Issues>
Verdict verdict_from_severities(const Issues& severities) {
  int med = 0;
  for (Severity s : severities) {
    if (s == Severity::high) return Verdict::hard_fail;
    if (s == Severity::med) ++med;
  }
  if (med >= 3) return Verdict::hard_fail;
  if (med >= 1) return Verdict::soft_fail;
  return Verdict::pass;
}

inline Verdict verdict_from_issues(const std::vector<ArtefactIssue>& issues) {
  std::vector<Severity> severities;
  severities.reserve(issues.size());
  for (const auto& i : issues) severities.push_back(i.severity);
  return verdict_from_severities(severities);
}

inline ModerationReport make_report(std::vector<ArtefactIssue> issues, int retry_index) {
  ModerationReport r;
  r.verdict = verdict_from_issues(issues);
  r.issues = std::move(issues);
  r.retry_index = retry_index;
  return r;
}

/// Builds the target action for a sample on `region` with the given intent.
inline Action target_action_for(AttackIntent intent, const BBox& region_bbox,
                                const std::optional<std::string>& answer_token) {
  Action a;
  a.primitive = intent_to_action(intent);
  if (a.primitive == ActionPrimitive::tap) a.target = region_bbox;
  if (a.primitive == ActionPrimitive::text_entry) a.text = answer_token.value_or("");
  return a;
}

}  // namespace injectbench
