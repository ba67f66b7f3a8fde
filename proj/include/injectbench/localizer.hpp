#pragma once

// Stage 1: coarse region proposal, OCR tightening and the bbox-moderator
// repair loop. Produces the per-screenshot region set and its funnel row.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "injectbench/core.hpp"
#include "injectbench/funnel.hpp"
#include "injectbench/image.hpp"
#include "injectbench/prompts.hpp"
#include "injectbench/providers.hpp"
#include "injectbench/serialization.hpp"

namespace injectbench {

enum class IssueKind {
  missing_region,
  wrong_position,
  covers_avatar,
  missing_wrap_line,
  covers_system_ui,
  glyph_leakage_below,
  bbox_too_loose,
  duplicate,
};
INJECTBENCH_ENUM_NAMES(IssueKind, 8, {IssueKind::missing_region, "missing_region"},
                       {IssueKind::wrong_position, "wrong_position"},
                       {IssueKind::covers_avatar, "covers_avatar"},
                       {IssueKind::missing_wrap_line, "missing_wrap_line"},
                       {IssueKind::covers_system_ui, "covers_system_ui"},
                       {IssueKind::glyph_leakage_below, "glyph_leakage_below"},
                       {IssueKind::bbox_too_loose, "bbox_too_loose"}, {IssueKind::duplicate, "duplicate"});

enum class RepairKind {
  drop,
  shrink_left,
  shrink_right,
  shrink_top,
  extend_down,
  reposition_to_text,
  reposition_input_box,
  redraw,
  auto_add_top_media,
  auto_add_display_name_above,
  auto_add_text,
  manual,
};
INJECTBENCH_ENUM_NAMES(RepairKind, 12, {RepairKind::drop, "drop"}, {RepairKind::shrink_left, "shrink_left"},
                       {RepairKind::shrink_right, "shrink_right"}, {RepairKind::shrink_top, "shrink_top"},
                       {RepairKind::extend_down, "extend_down"},
                       {RepairKind::reposition_to_text, "reposition_to_text"},
                       {RepairKind::reposition_input_box, "reposition_input_box"},
                       {RepairKind::redraw, "redraw"}, {RepairKind::auto_add_top_media, "auto_add_top_media"},
                       {RepairKind::auto_add_display_name_above, "auto_add_display_name_above"},
                       {RepairKind::auto_add_text, "auto_add_text"}, {RepairKind::manual, "manual"});

constexpr bool is_add_repair(RepairKind k) {
  return k == RepairKind::auto_add_top_media || k == RepairKind::auto_add_display_name_above ||
         k == RepairKind::auto_add_text;
}

struct RepairAction {
  RepairKind kind = RepairKind::manual;
  std::optional<BBox> bbox;
  std::optional<int> magnitude;
  // auto_add_text: type of the inserted region (default post_body).
  std::optional<RegionType> region_type;
  // auto_add_display_name_above without a bbox: the region to sit above.
  std::optional<std::string> anchor_region_id;
};

struct LocalizerIssue {
  IssueKind kind = IssueKind::missing_region;
  Severity severity = Severity::low;
  std::optional<std::string> region_id;
  RepairAction repair;

  bool well_formed() const {
    if (kind == IssueKind::missing_region)
      return !region_id && (is_add_repair(repair.kind) || repair.kind == RepairKind::manual);
    return region_id.has_value() && !is_add_repair(repair.kind);
  }
};

inline constexpr int kMinRegionSide = 8;

/// Default shrink/extend step: 5% of the affected dimension, at least 4 px.
inline int default_repair_magnitude(int dimension) {
  return std::max(4, static_cast<int>(std::lround(0.05 * dimension)));
}

/// Mutable region set for one screenshot plus the repair tallies.
struct RegionSet {
  std::string screenshot_id;
  int image_width = 0;
  int image_height = 0;
  std::vector<Region> regions;
  long long added = 0;
  long long dropped = 0;
  int next_added_index = 0;
  std::vector<std::string> log;

  Region* find(const std::string& id) {
    auto it = std::find_if(regions.begin(), regions.end(), [&](const Region& r) { return r.id == id; });
    return it == regions.end() ? nullptr : &*it;
  }

  bool remove(const std::string& id) {
    auto it = std::find_if(regions.begin(), regions.end(), [&](const Region& r) { return r.id == id; });
    if (it == regions.end()) return false;
    regions.erase(it);
    ++dropped;
    return true;
  }
};

/// Applies one repair. Returns false (and logs) when it cannot be applied.
inline bool apply_repair(RegionSet& set, const LocalizerIssue& issue) {
  const RepairAction& rep = issue.repair;
  auto note = [&](const std::string& msg) {
    set.log.push_back(std::string(to_string(rep.kind)) + ": " + msg);
    return false;
  };

  if (is_add_repair(rep.kind)) {
    std::optional<BBox> box = rep.bbox;
    if (!box && rep.kind == RepairKind::auto_add_display_name_above && rep.anchor_region_id) {
      const Region* anchor = set.find(*rep.anchor_region_id);
      if (!anchor) return note("unknown anchor " + *rep.anchor_region_id);
      const int h = std::min(kGlyphHeight + 4, anchor->bbox.y);
      box = BBox{anchor->bbox.x, anchor->bbox.y - h, anchor->bbox.w, h};
    }
    if (!box) return note("missing bbox");
    const BBox clipped = clip_to(*box, set.image_width, set.image_height);
    if (clipped.w <= 0 || clipped.h <= 0) return note("bbox outside image");
    Region r;
    r.screenshot_id = set.screenshot_id;
    r.id = set.screenshot_id + "-m" + std::to_string(set.next_added_index++);
    r.bbox = clipped;
    r.provenance = RegionProvenance::moderator_added;
    r.user_controllable = true;
    switch (rep.kind) {
      case RepairKind::auto_add_top_media: r.region_type = RegionType::media; break;
      case RepairKind::auto_add_display_name_above: r.region_type = RegionType::display_name; break;
      default: r.region_type = rep.region_type.value_or(RegionType::post_body); break;
    }
    if (r.region_type == RegionType::search_bar) return note("search_bar regions are never kept");
    set.regions.push_back(std::move(r));
    ++set.added;
    return true;
  }

  if (!issue.region_id) return note("no region referenced");
  Region* target = set.find(*issue.region_id);
  if (!target) return note("unknown region " + *issue.region_id);
  BBox& b = target->bbox;

  switch (rep.kind) {
    case RepairKind::drop:
      set.remove(*issue.region_id);
      return true;
    case RepairKind::manual:
      target->needs_human = true;
      return true;
    case RepairKind::shrink_left:
    case RepairKind::shrink_right: {
      const int m = std::clamp(rep.magnitude.value_or(default_repair_magnitude(b.w)), 0, std::max(0, b.w - kMinRegionSide));
      if (rep.kind == RepairKind::shrink_left) b.x += m;
      b.w -= m;
      return true;
    }
    case RepairKind::shrink_top: {
      const int m = std::clamp(rep.magnitude.value_or(default_repair_magnitude(b.h)), 0, std::max(0, b.h - kMinRegionSide));
      b.y += m;
      b.h -= m;
      return true;
    }
    case RepairKind::extend_down: {
      const int m = std::max(0, rep.magnitude.value_or(default_repair_magnitude(b.h)));
      b.h = std::min(b.h + m, set.image_height - b.y);
      return true;
    }
    case RepairKind::reposition_to_text:
    case RepairKind::reposition_input_box:
    case RepairKind::redraw: {
      if (!rep.bbox) return note("missing bbox");
      const BBox clipped = clip_to(*rep.bbox, set.image_width, set.image_height);
      if (clipped.w <= 0 || clipped.h <= 0) return note("bbox outside image");
      b = clipped;
      return true;
    }
    default:
      return note("unsupported");
  }
}

// ---------------------------------------------------------------------------
// Wire formats
// ---------------------------------------------------------------------------

/// Parses the moderator's {"issues": [...]} reply. Region references may be
/// overlay labels or region ids; malformed entries are skipped and logged.
inline std::vector<LocalizerIssue> parse_localizer_issues(const json& reply,
                                                          const std::map<std::string, std::string>& label_to_id,
                                                          std::vector<std::string>& log) {
  std::vector<LocalizerIssue> out;
  if (!reply.is_object() || !reply.contains("issues") || !reply["issues"].is_array()) {
    throw ProviderError(ProviderErrorKind::parse_failure, "moderator reply lacks an issues array");
  }
  for (const auto& ij : reply["issues"]) {
    try {
      LocalizerIssue issue;
      issue.kind = parse_enum<IssueKind>(ij.at("kind").get<std::string>());
      issue.severity = parse_enum<Severity>(ij.at("severity").get<std::string>());
      if (auto it = ij.find("region"); it != ij.end() && !it->is_null()) {
        const std::string ref = it->is_string() ? it->get<std::string>() : it->dump();
        auto l = label_to_id.find(ref);
        issue.region_id = l != label_to_id.end() ? l->second : ref;
      }
      const json& rj = ij.at("repair");
      issue.repair.kind = parse_enum<RepairKind>(rj.at("action").get<std::string>());
      if (rj.contains("bbox")) issue.repair.bbox = rj["bbox"].get<BBox>();
      if (rj.contains("magnitude")) issue.repair.magnitude = rj["magnitude"].get<int>();
      if (rj.contains("region_type")) issue.repair.region_type = rj["region_type"].get<RegionType>();
      if (auto a = rj.find("anchor"); a != rj.end()) {
        const std::string ref = a->is_string() ? a->get<std::string>() : a->dump();
        auto l = label_to_id.find(ref);
        issue.repair.anchor_region_id = l != label_to_id.end() ? l->second : ref;
      }
      if (!issue.well_formed()) {
        log.push_back("skipped ill-formed issue " + ij.dump());
        continue;
      }
      out.push_back(std::move(issue));
    } catch (const std::exception& e) {
      log.push_back(std::string("skipped malformed issue: ") + e.what());
    }
  }
  return out;
}

inline std::string verbalize_regions(const std::vector<Region>& regions, bool with_labels) {
  std::ostringstream os;
  for (std::size_t i = 0; i < regions.size(); ++i) {
    const Region& r = regions[i];
    os << (with_labels ? std::to_string(i + 1) : r.id) << ": " << to_string(r.region_type) << " [" << r.bbox.x << ", "
       << r.bbox.y << ", " << r.bbox.w << ", " << r.bbox.h << "]";
    if (r.ocr_text) os << " \"" << *r.ocr_text << "\"";
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

struct ProposalResult {
  std::vector<Region> regions;
  bool failed = false;
  int discarded = 0;
  std::vector<std::string> log;
};

/// Coarse pass. Non-controllable, search_bar and display_name candidates are
/// discarded (display names only ever come from moderator repairs).
inline ProposalResult propose_regions(const Screenshot& shot, const Image& image, ChatProvider& vlm,
                                      const PromptSet& prompts) {
  ProposalResult res;
  ChatVisionRequest req;
  req.system_prompt = prompts.render("localizer_propose", {{"app", std::string(to_string(shot.app))},
                                                           {"width", std::to_string(image.width())},
                                                           {"height", std::to_string(image.height())}});
  req.user_prompt = "List every user-controllable region on this screenshot as JSON.";
  req.images.push_back(ImageAttachment::from_image(image));
  req.output_schema = {{"regions", "array of {region_type, bbox [x,y,w,h], user_controllable}"}};
  req.context = {{"stage", "propose"}, {"screenshot_id", shot.id}, {"image_path", shot.image_path}};

  std::optional<json> parsed;
  for (int ask = 0; ask < 2 && !parsed; ++ask) {
    if (ask == 1) req.user_prompt += "\nYour previous reply was not valid JSON. Reply with the JSON object only.";
    const auto resp = vlm.chat(req);
    if (resp.parse_ok && resp.parsed->contains("regions") && (*resp.parsed)["regions"].is_array()) parsed = resp.parsed;
    else res.log.push_back("proposal parse failure");
  }
  if (!parsed) {
    res.failed = true;
    return res;
  }

  int index = 0;
  for (const auto& rj : (*parsed)["regions"]) {
    try {
      const auto type = try_parse_enum<RegionType>(rj.at("region_type").get<std::string>());
      if (!type) {
        res.log.push_back("unknown region type " + rj.at("region_type").dump());
        ++res.discarded;
        continue;
      }
      if (!rj.value("user_controllable", false) || *type == RegionType::search_bar ||
          *type == RegionType::display_name) {
        ++res.discarded;
        continue;
      }
      const BBox box = clip_to(rj.at("bbox").get<BBox>(), image.width(), image.height());
      if (box.w <= 0 || box.h <= 0) {
        res.log.push_back("proposal outside image " + rj.dump());
        ++res.discarded;
        continue;
      }
      Region r;
      r.screenshot_id = shot.id;
      r.id = shot.id + "-r" + std::to_string(index++);
      r.region_type = *type;
      r.bbox = box;
      r.user_controllable = true;
      r.provenance = RegionProvenance::coarse;
      res.regions.push_back(std::move(r));
    } catch (const std::exception& e) {
      res.log.push_back(std::string("malformed proposal: ") + e.what());
      ++res.discarded;
    }
  }
  return res;
}

/// Replaces the bbox with the union of confident OCR words. Absent when no
/// word clears the threshold. Media regions pass through.
inline std::optional<Region> tighten_with_ocr(const Region& region, const Image& image, OcrProvider& ocr,
                                              double threshold, const json& context = json::object()) {
  if (region.region_type == RegionType::media) return region;
  OcrRequest req;
  req.crop_origin = clip_to(region.bbox, image.width(), image.height());
  req.crop = image.crop(req.crop_origin);
  req.context = context;
  req.context["region_id"] = region.id;
  req.context["screenshot_id"] = region.screenshot_id;

  OcrResult words;
  try {
    words = ocr.ocr(req);
    validate_ocr_result(words, req.crop.width(), req.crop.height());
  } catch (const ProviderError& e) {
    if (e.kind() == ProviderErrorKind::parse_failure) throw;
    Region kept = region;
    kept.ocr_unavailable = true;
    return kept;
  }

  std::vector<const OcrWord*> kept;
  for (const auto& w : words)
    if (w.confidence >= threshold) kept.push_back(&w);
  if (kept.empty()) return std::nullopt;

  std::sort(kept.begin(), kept.end(), [](const OcrWord* a, const OcrWord* b) {
    return a->bbox.y != b->bbox.y ? a->bbox.y < b->bbox.y : a->bbox.x < b->bbox.x;
  });
  BBox u = kept.front()->bbox;
  std::string text;
  double conf = 0.0;
  for (const OcrWord* w : kept) {
    u = bbox_union(u, w->bbox);
    if (!text.empty()) text += ' ';
    text += w->text;
    conf += w->confidence;
  }
  Region out = region;
  out.bbox = {u.x + req.crop_origin.x, u.y + req.crop_origin.y, u.w, u.h};
  out.ocr_text = text;
  out.ocr_confidence = conf / static_cast<double>(kept.size());
  out.ocr_unavailable = false;
  return out;
}

struct ModerationOutcome {
  std::vector<Region> regions;
  long long added = 0;
  long long dropped = 0;
  int iterations = 0;
  std::vector<std::string> log;
};

/// Repair loop: overlay, ask, apply in response order; stop once a review has
/// no high-severity issue. At the cap, regions still flagged high are dropped.
inline ModerationOutcome moderate_regions(const Screenshot& shot, const Image& image, std::vector<Region> regions,
                                          ChatProvider& moderator, const PromptSet& prompts,
                                          int max_iterations = 3) {
  RegionSet set;
  set.screenshot_id = shot.id;
  set.image_width = image.width();
  set.image_height = image.height();
  set.regions = std::move(regions);

  ModerationOutcome out;
  for (int iter = 1; iter <= max_iterations; ++iter) {
    out.iterations = iter;
    std::vector<std::pair<BBox, std::string>> boxes;
    std::map<std::string, std::string> label_to_id;
    json listing = json::array();
    for (std::size_t i = 0; i < set.regions.size(); ++i) {
      const std::string label = std::to_string(i + 1);
      boxes.emplace_back(set.regions[i].bbox, label);
      label_to_id[label] = set.regions[i].id;
      listing.push_back({{"label", label}, {"region", set.regions[i]}});
    }

    ChatVisionRequest req;
    req.system_prompt = prompts.render("bbox_moderator", {{"regions", verbalize_regions(set.regions, true)},
                                                          {"iteration", std::to_string(iter)}});
    req.user_prompt = "Review the numbered boxes and reply with the issues JSON.";
    req.images.push_back(ImageAttachment::from_image(annotate_boxes(image, boxes)));
    req.output_schema = {{"issues", "array of {kind, severity, region, repair{action, bbox?, magnitude?}}"}};
    req.context = {{"stage", "bbox_moderator"}, {"screenshot_id", shot.id}, {"image_path", shot.image_path},
                   {"iteration", iter},        {"regions", listing}};

    std::vector<LocalizerIssue> issues;
    try {
      const auto resp = moderator.chat(req);
      if (!resp.parse_ok) throw ProviderError(ProviderErrorKind::parse_failure, "unparseable moderator reply");
      issues = parse_localizer_issues(*resp.parsed, label_to_id, set.log);
    } catch (const ProviderError& e) {
      set.log.push_back("iteration " + std::to_string(iter) + " skipped: " + e.what());
      continue;
    }

    const bool severe = std::any_of(issues.begin(), issues.end(),
                                    [](const LocalizerIssue& i) { return i.severity == Severity::high; });
    const bool at_cap = iter == max_iterations;
    for (const auto& issue : issues) {
      if (at_cap && severe && issue.severity == Severity::high && issue.region_id) {
        if (set.remove(*issue.region_id)) set.log.push_back("dropped at cap: " + *issue.region_id);
        continue;
      }
      apply_repair(set, issue);
    }
    if (!severe) break;
  }

  // Regions routed to a human do not survive the automated pipeline.
  for (const auto& r : set.regions)
    if (r.needs_human) ++set.dropped;

  out.regions = std::move(set.regions);
  out.added = set.added;
  out.dropped = set.dropped;
  out.log = std::move(set.log);
  return out;
}

/// Regions that downstream stages may inject into.
inline std::vector<Region> surviving_regions(const std::vector<Region>& regions) {
  std::vector<Region> out;
  for (const auto& r : regions)
    if (!r.needs_human && r.user_controllable && r.region_type != RegionType::search_bar) out.push_back(r);
  return out;
}

struct LocalizationResult {
  bool failed = false;
  std::vector<Region> regions;
  FunnelEntry funnel;
  int moderation_iterations = 0;
  std::vector<std::string> log;
};

struct LocalizerProviders {
  ChatProvider& vlm;
  OcrProvider& ocr;
  ChatProvider& moderator;
};

/// propose -> tighten -> moderate for one screenshot. OCR hallucination drops
/// count as moderator drops so the funnel identity covers every removal.
inline LocalizationResult localize_screenshot(const Screenshot& shot, const Image& image, LocalizerProviders p,
                                              const PromptSet& prompts, double ocr_threshold = 0.5,
                                              int max_iterations = 3) {
  LocalizationResult res;
  res.funnel.screenshot_id = shot.id;
  auto proposal = propose_regions(shot, image, p.vlm, prompts);
  res.log = std::move(proposal.log);
  if (proposal.failed) {
    res.failed = true;
    return res;
  }
  res.funnel.proposed = static_cast<long long>(proposal.regions.size());

  std::vector<Region> tightened;
  long long ocr_dropped = 0;
  for (const auto& r : proposal.regions) {
    if (auto t = tighten_with_ocr(r, image, p.ocr, ocr_threshold, {{"image_path", shot.image_path}})) {
      if (t->ocr_unavailable) res.log.push_back("ocr unavailable for " + r.id);
      tightened.push_back(std::move(*t));
    } else {
      ++ocr_dropped;
      res.log.push_back("no confident text in " + r.id);
    }
  }

  auto mod = moderate_regions(shot, image, std::move(tightened), p.moderator, prompts, max_iterations);
  res.moderation_iterations = mod.iterations;
  res.log.insert(res.log.end(), mod.log.begin(), mod.log.end());
  res.regions = std::move(mod.regions);
  res.funnel.moderator_added = mod.added;
  res.funnel.moderator_dropped = mod.dropped + ocr_dropped;
  res.funnel.survivors = static_cast<long long>(surviving_regions(res.regions).size());
  return res;
}

/// Ablation stand-in for the whole stage: the largest confident OCR box on
/// the screen, typed as post body.
inline LocalizationResult largest_text_region(const Screenshot& shot, const Image& image, OcrProvider& ocr,
                                              double ocr_threshold = 0.5) {
  LocalizationResult res;
  res.funnel.screenshot_id = shot.id;
  OcrRequest req;
  req.crop = image;
  req.crop_origin = {0, 0, image.width(), image.height()};
  req.context = {{"screenshot_id", shot.id}, {"image_path", shot.image_path}};
  OcrResult words;
  try {
    words = ocr.ocr(req);
    validate_ocr_result(words, image.width(), image.height());
  } catch (const ProviderError& e) {
    res.failed = true;
    res.log.push_back(e.what());
    return res;
  }
  const OcrWord* best = nullptr;
  for (const auto& w : words) {
    if (w.confidence < ocr_threshold) continue;
    if (!best || w.bbox.area() > best->bbox.area()) best = &w;
  }
  if (!best) {
    res.log.push_back("no confident text on screen");
    return res;
  }
  Region r;
  r.id = shot.id + "-h0";
  r.screenshot_id = shot.id;
  r.region_type = RegionType::post_body;
  r.bbox = best->bbox;
  r.ocr_text = best->text;
  r.ocr_confidence = best->confidence;
  res.regions.push_back(r);
  res.funnel.proposed = 1;
  res.funnel.survivors = 1;
  return res;
}

}  // namespace injectbench
