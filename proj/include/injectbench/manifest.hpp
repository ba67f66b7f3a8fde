#pragma once

// On-disk dataset manifest. A directory:
//
//   header.json                 schema version, seeds, tables, fingerprint
//   screenshots.json            screenshot records and stage status
//   regions/<screenshot>.json   moderated regions and the funnel row
//   samples/<id>.json + image   active samples
//   trimmed/samples/<id>.json   trimmed samples (image moved alongside)
//   dropped/<id>.json           dropped samples, no image
//   funnel.json                 funnel totals (derived, informational)
//   balance.json                balance-trim summary
//   repairs.json                coverage-repair attempts
//
// Every file is replaced atomically (write to a temp file, then rename), so
// an interrupted command leaves a loadable manifest behind.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "injectbench/core.hpp"
#include "injectbench/curator.hpp"
#include "injectbench/funnel.hpp"
#include "injectbench/serialization.hpp"

namespace injectbench {

namespace fs = std::filesystem;

inline constexpr int kManifestSchemaVersion = 1;

enum class AblationVariant { full, minus_loc, minus_gen, minus_cur };
INJECTBENCH_ENUM_NAMES(AblationVariant, 4, {AblationVariant::full, "full"}, {AblationVariant::minus_loc, "minus_loc"},
                       {AblationVariant::minus_gen, "minus_gen"}, {AblationVariant::minus_cur, "minus_cur"});

enum class ScreenshotStatus { pending, localized, localization_failed, unreadable };
INJECTBENCH_ENUM_NAMES(ScreenshotStatus, 4, {ScreenshotStatus::pending, "pending"},
                       {ScreenshotStatus::localized, "localized"},
                       {ScreenshotStatus::localization_failed, "localization_failed"},
                       {ScreenshotStatus::unreadable, "unreadable"});

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ManifestHeader {
  int schema_version = kManifestSchemaVersion;
  std::map<std::string, std::uint64_t> seeds{{"global", 42}, {"allocator", 42}, {"trim", 42}, {"annotation", 42}};
  std::string config_fingerprint;
  AblationVariant variant = AblationVariant::full;
  std::string stratification_scheme = "intent_x_app_proportional";
  int budget_per_screenshot = 14;
  bool curated = false;

  friend bool operator==(const ManifestHeader&, const ManifestHeader&) = default;
};

inline void to_json(json& j, const ManifestHeader& h) {
  json table = json::object();
  for (AttackIntent i : all_values<AttackIntent>())
    table[std::string(to_string(i))] = {{"action", intent_to_action(i)}, {"category", intent_to_category(i)}};
  json apps = json::array();
  for (AppId a : all_values<AppId>()) apps.push_back(a);
  j = json{{"schema_version", h.schema_version},
           {"seeds", h.seeds},
           {"config_fingerprint", h.config_fingerprint},
           {"variant", h.variant},
           {"stratification_scheme", h.stratification_scheme},
           {"budget_per_screenshot", h.budget_per_screenshot},
           {"curated", h.curated},
           {"intent_table", table},
           {"apps", apps}};
}

inline void from_json(const json& j, ManifestHeader& h) {
  j.at("schema_version").get_to(h.schema_version);
  if (h.schema_version != kManifestSchemaVersion)
    throw ManifestError("unsupported manifest schema version " + std::to_string(h.schema_version));
  j.at("seeds").get_to(h.seeds);
  for (const char* k : {"global", "allocator", "trim", "annotation"})
    if (!h.seeds.count(k)) throw ManifestError(std::string("manifest header lacks seed '") + k + "'");
  j.at("config_fingerprint").get_to(h.config_fingerprint);
  j.at("variant").get_to(h.variant);
  h.stratification_scheme = j.value("stratification_scheme", "");
  h.budget_per_screenshot = j.value("budget_per_screenshot", 14);
  h.curated = j.value("curated", false);
  // The recorded table must agree with the compiled one.
  if (j.contains("intent_table")) {
    for (const auto& [name, row] : j["intent_table"].items()) {
      const AttackIntent i = parse_enum<AttackIntent>(name);
      if (row.at("category").get<ActionCategory>() != intent_to_category(i) ||
          row.at("action").get<ActionPrimitive>() != intent_to_action(i))
        throw ManifestError("manifest intent table disagrees for " + name);
    }
  }
}

inline void to_json(json& j, const FunnelEntry& e) {
  j = json{{"screenshot_id", e.screenshot_id},         {"proposed", e.proposed},
           {"moderator_added", e.moderator_added},     {"moderator_dropped", e.moderator_dropped},
           {"survivors", e.survivors},                 {"in_final_dataset", e.in_final_dataset}};
}

inline void from_json(const json& j, FunnelEntry& e) {
  j.at("screenshot_id").get_to(e.screenshot_id);
  j.at("proposed").get_to(e.proposed);
  j.at("moderator_added").get_to(e.moderator_added);
  j.at("moderator_dropped").get_to(e.moderator_dropped);
  j.at("survivors").get_to(e.survivors);
  j.at("in_final_dataset").get_to(e.in_final_dataset);
}

inline void to_json(json& j, const FunnelLedger& l) {
  j = json{{"proposed", l.proposed},   {"moderator_added", l.moderator_added},
           {"moderator_dropped", l.moderator_dropped}, {"survivors", l.survivors},
           {"in_final_dataset", l.in_final_dataset},   {"per_screenshot", l.per_screenshot}};
}

inline void from_json(const json& j, FunnelLedger& l) {
  l = FunnelLedger::from_entries(j.at("per_screenshot").get<std::vector<FunnelEntry>>());
}

struct ScreenshotRecord {
  Screenshot shot;
  ScreenshotStatus status = ScreenshotStatus::pending;
  bool generated = false;
  std::vector<Region> regions;
  FunnelEntry funnel;
  std::vector<std::string> log;

  friend bool operator==(const ScreenshotRecord&, const ScreenshotRecord&) = default;
};

inline void write_file_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ManifestError("cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw ManifestError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline void write_json_atomic(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

inline json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot read " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ManifestError("malformed JSON in " + path.string());
  return j;
}

struct DatasetManifest {
  ManifestHeader header;
  std::vector<ScreenshotRecord> screenshots;
  std::vector<InjectionSample> samples;
  std::vector<RepairRecord> repairs;
  json balance = nullptr;

  friend bool operator==(const DatasetManifest& a, const DatasetManifest& b) {
    return a.header == b.header && a.screenshots == b.screenshots && a.samples == b.samples &&
           a.repairs == b.repairs && a.balance == b.balance;
  }

  ScreenshotRecord* find_screenshot(const std::string& id) {
    for (auto& s : screenshots)
      if (s.shot.id == id) return &s;
    return nullptr;
  }
  const ScreenshotRecord* find_screenshot(const std::string& id) const {
    return const_cast<DatasetManifest*>(this)->find_screenshot(id);
  }

  const Region* find_region(const std::string& screenshot_id, const std::string& region_id) const {
    const auto* s = find_screenshot(screenshot_id);
    if (!s) return nullptr;
    for (const auto& r : s->regions)
      if (r.id == region_id) return &r;
    return nullptr;
  }

  std::vector<const InjectionSample*> with_status(SampleStatus st) const {
    std::vector<const InjectionSample*> out;
    for (const auto& s : samples)
      if (s.status == st) out.push_back(&s);
    return out;
  }

  /// Recounts in_final_dataset: surviving regions with at least one active sample.
  void refresh_funnel() {
    std::set<std::string> used;
    for (const auto& s : samples)
      if (s.status == SampleStatus::active) used.insert(s.region_id);
    for (auto& rec : screenshots) {
      long long n = 0;
      for (const auto& r : rec.regions)
        if (!r.needs_human && used.count(r.id)) ++n;
      rec.funnel.in_final_dataset = n;
    }
  }

  FunnelLedger funnel() const {
    std::vector<FunnelEntry> rows;
    for (const auto& rec : screenshots)
      if (rec.status == ScreenshotStatus::localized) rows.push_back(rec.funnel);
    return FunnelLedger::from_entries(std::move(rows));
  }

  /// Referential integrity and status partition checks.
  void validate() const {
    std::set<std::string> ids;
    for (const auto& s : samples) {
      if (!ids.insert(s.id).second) throw ManifestError("duplicate sample id " + s.id);
      if (!find_region(s.screenshot_id, s.region_id))
        throw ManifestError("sample " + s.id + " references unknown region " + s.region_id);
      if (s.status == SampleStatus::trimmed && !s.trim_reason)
        throw ManifestError("trimmed sample " + s.id + " lacks a trim reason");
      if (s.status == SampleStatus::dropped && !s.drop_reason)
        throw ManifestError("dropped sample " + s.id + " lacks a drop reason");
    }
    if (!funnel().identity_holds()) throw ManifestError("funnel identity violated");
  }

  static std::string status_dir(SampleStatus st) {
    switch (st) {
      case SampleStatus::active: return "samples";
      case SampleStatus::trimmed: return "trimmed/samples";
      case SampleStatus::dropped: return "dropped";
    }
    return "samples";
  }

  /// Moves sample images to the directory matching their status. Dropped
  /// samples never keep an image.
  void relocate_images(const fs::path& dir) {
    for (auto& s : samples) {
      if (s.status == SampleStatus::dropped) {
        if (!s.injected_image_path.empty()) {
          std::error_code ec;
          fs::remove(dir / s.injected_image_path, ec);
          s.injected_image_path.clear();
        }
        continue;
      }
      if (s.injected_image_path.empty()) continue;
      const fs::path current(s.injected_image_path);
      const fs::path wanted = fs::path(status_dir(s.status)) / current.filename();
      if (current == wanted) continue;
      if (fs::exists(dir / current)) {
        fs::create_directories((dir / wanted).parent_path());
        fs::rename(dir / current, dir / wanted);
      }
      s.injected_image_path = wanted.generic_string();
    }
  }

  void save(const fs::path& dir) {
    std::sort(screenshots.begin(), screenshots.end(),
              [](const ScreenshotRecord& a, const ScreenshotRecord& b) { return a.shot.id < b.shot.id; });
    std::sort(samples.begin(), samples.end(),
              [](const InjectionSample& a, const InjectionSample& b) { return a.id < b.id; });
    relocate_images(dir);
    refresh_funnel();

    json shots = json::array();
    for (const auto& rec : screenshots) {
      shots.push_back({{"screenshot", rec.shot},
                       {"status", rec.status},
                       {"generated", rec.generated},
                       {"log", rec.log}});
      write_json_atomic(dir / "regions" / (rec.shot.id + ".json"),
                        {{"screenshot_id", rec.shot.id}, {"regions", rec.regions}, {"funnel", rec.funnel}});
    }
    for (const auto& s : samples) {
      const std::string name = s.id + ".json";
      for (SampleStatus other : all_values<SampleStatus>()) {
        if (other == s.status) continue;
        std::error_code ec;
        fs::remove(dir / status_dir(other) / name, ec);
      }
      write_json_atomic(dir / status_dir(s.status) / name, s);
    }
    write_json_atomic(dir / "screenshots.json", shots);
    write_json_atomic(dir / "funnel.json", funnel());
    write_json_atomic(dir / "balance.json", balance);
    write_json_atomic(dir / "repairs.json", repairs);
    // Header last: its presence marks a complete commit.
    write_json_atomic(dir / "header.json", header);
  }

  static bool exists(const fs::path& dir) { return fs::exists(dir / "header.json"); }

  static DatasetManifest load(const fs::path& dir) {
    DatasetManifest m;
    try {
      m.header = read_json_file(dir / "header.json").get<ManifestHeader>();
      if (fs::exists(dir / "screenshots.json")) {
        for (const auto& sj : read_json_file(dir / "screenshots.json")) {
          ScreenshotRecord rec;
          rec.shot = sj.at("screenshot").get<Screenshot>();
          rec.status = sj.at("status").get<ScreenshotStatus>();
          rec.generated = sj.value("generated", false);
          rec.log = sj.value("log", std::vector<std::string>{});
          const fs::path rp = dir / "regions" / (rec.shot.id + ".json");
          if (fs::exists(rp)) {
            const json rj = read_json_file(rp);
            rec.regions = rj.at("regions").get<std::vector<Region>>();
            rec.funnel = rj.at("funnel").get<FunnelEntry>();
          }
          m.screenshots.push_back(std::move(rec));
        }
      }
      for (SampleStatus st : all_values<SampleStatus>()) {
        const fs::path sd = dir / status_dir(st);
        if (!fs::exists(sd)) continue;
        for (const auto& entry : fs::directory_iterator(sd)) {
          if (entry.path().extension() != ".json") continue;
          auto s = read_json_file(entry.path()).get<InjectionSample>();
          if (s.status != st) throw ManifestError("sample " + s.id + " filed under the wrong status directory");
          m.samples.push_back(std::move(s));
        }
      }
      if (fs::exists(dir / "repairs.json"))
        m.repairs = read_json_file(dir / "repairs.json").get<std::vector<RepairRecord>>();
      if (fs::exists(dir / "balance.json")) m.balance = read_json_file(dir / "balance.json");
    } catch (const json::exception& e) {
      throw ManifestError(std::string("malformed manifest: ") + e.what());
    }
    std::sort(m.screenshots.begin(), m.screenshots.end(),
              [](const ScreenshotRecord& a, const ScreenshotRecord& b) { return a.shot.id < b.shot.id; });
    std::sort(m.samples.begin(), m.samples.end(),
              [](const InjectionSample& a, const InjectionSample& b) { return a.id < b.id; });
    m.validate();
    return m;
  }
};

}  // namespace injectbench
