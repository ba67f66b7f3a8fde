#pragma once

// Bridge to the annotation service. Outbound: a deidentified study item set
// (opaque ids, shuffled, images copied under those ids) plus a key file that
// stays server-side. Inbound: the service's RatingsExport, joined with the
// key into per-method, per-criterion rating grids.

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "injectbench/core.hpp"
#include "injectbench/digest.hpp"
#include "injectbench/image.hpp"
#include "injectbench/manifest.hpp"
#include "injectbench/serialization.hpp"
#include "injectbench/stats.hpp"

namespace injectbench {

namespace fs = std::filesystem;

inline constexpr int kRatingsExportVersion = 1;
inline constexpr int kStudyItemsVersion = 1;
inline constexpr const char* kPipelineMethod = "pipeline";
inline constexpr const char* kBaselineMethod = "baseline";

enum class Criterion { visual_integration, layout_plausibility, semantic_consistency, detectability };
INJECTBENCH_ENUM_NAMES(Criterion, 4, {Criterion::visual_integration, "visual_integration"},
                       {Criterion::layout_plausibility, "layout_plausibility"},
                       {Criterion::semantic_consistency, "semantic_consistency"},
                       {Criterion::detectability, "detectability"});

class RatingsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Rating {
  std::string item_id;
  std::string rater_id;
  Criterion criterion = Criterion::visual_integration;
  int score = 0;

  friend bool operator==(const Rating&, const Rating&) = default;
};

struct RatingsExport {
  std::uint64_t study_seed = 42;
  std::string rubric_version;
  bool complete = true;
  std::vector<Rating> ratings;

  friend bool operator==(const RatingsExport&, const RatingsExport&) = default;
};

inline void to_json(json& j, const RatingsExport& e) {
  json rows = json::array();
  for (const auto& r : e.ratings)
    rows.push_back({{"item_id", r.item_id}, {"rater_id", r.rater_id}, {"criterion", r.criterion}, {"score", r.score}});
  j = json{{"format", "ratings_export"}, {"version", kRatingsExportVersion}, {"study_seed", e.study_seed},
           {"rubric_version", e.rubric_version}, {"complete", e.complete}, {"ratings", rows}};
}

/// Scores must be integers in [1, 5] and criteria from the rubric.
inline void from_json(const json& j, RatingsExport& e) {
  if (j.value("format", "") != "ratings_export") throw RatingsError("not a ratings export");
  if (j.value("version", 0) != kRatingsExportVersion)
    throw RatingsError("unsupported ratings export version " + j.value("version", json()).dump());
  e.study_seed = j.value("study_seed", std::uint64_t{42});
  e.rubric_version = j.value("rubric_version", "");
  e.complete = j.value("complete", true);
  e.ratings.clear();
  for (const auto& r : j.at("ratings")) {
    const auto crit = try_parse_enum<Criterion>(r.at("criterion").get<std::string>());
    if (!crit) throw RatingsError("unknown criterion " + r.at("criterion").dump());
    const json& score = r.at("score");
    if (!score.is_number_integer() || score.get<int>() < 1 || score.get<int>() > 5)
      throw RatingsError("score out of range for item " + r.at("item_id").get<std::string>() + ": " + score.dump());
    e.ratings.push_back({r.at("item_id").get<std::string>(), r.at("rater_id").get<std::string>(), *crit,
                         score.get<int>()});
  }
}

// ---------------------------------------------------------------------------
// Study items
// ---------------------------------------------------------------------------

struct StudyItem {
  std::string item_id;
  std::string method;
  std::string source_id;  // sample id or baseline file stem
  std::optional<AppId> app;
  std::optional<AttackIntent> intent;

  friend bool operator==(const StudyItem&, const StudyItem&) = default;
};

inline void to_json(json& j, const StudyItem& s) {
  j = json{{"item_id", s.item_id}, {"method", s.method}, {"source_id", s.source_id}};
  put_optional(j, "app", s.app);
  put_optional(j, "intent", s.intent);
}

inline void from_json(const json& j, StudyItem& s) {
  j.at("item_id").get_to(s.item_id);
  j.at("method").get_to(s.method);
  j.at("source_id").get_to(s.source_id);
  get_optional(j, "app", s.app);
  get_optional(j, "intent", s.intent);
}

using StudyKey = std::map<std::string, StudyItem>;

inline std::string opaque_item_id(std::uint64_t seed, const std::string& method, const std::string& source_id) {
  return "item-" + sha256_hex(std::to_string(seed) + "\x1f" + method + "\x1f" + source_id).substr(0, 12);
}

struct StudySource {
  std::string method;
  std::string source_id;
  fs::path image;
  std::optional<AppId> app;
  std::optional<AttackIntent> intent;
};

/// Writes <out>/items.json and <out>/images/<item_id>.png for the service
/// and <out>/key.json for the ingest side. Client-facing files carry only
/// item ids and image paths.
inline StudyKey export_study_items(const std::vector<StudySource>& sources, std::uint64_t seed, const fs::path& out) {
  std::vector<StudyItem> items;
  std::set<std::string> seen;
  fs::create_directories(out / "images");
  for (const auto& s : sources) {
    StudyItem it{opaque_item_id(seed, s.method, s.source_id), s.method, s.source_id, s.app, s.intent};
    if (!seen.insert(it.item_id).second) throw RatingsError("duplicate study source " + s.source_id);
    write_file_atomic(out / "images" / (it.item_id + ".png"), encode_png(load_image(s.image)));
    items.push_back(std::move(it));
  }
  std::sort(items.begin(), items.end(), [](const StudyItem& a, const StudyItem& b) { return a.item_id < b.item_id; });
  Rng rng = Rng::stream(seed, "annotation-order");
  rng.shuffle(items);

  json client = json::array();
  StudyKey key;
  for (const auto& it : items) {
    client.push_back({{"item_id", it.item_id}, {"image", "images/" + it.item_id + ".png"}});
    key[it.item_id] = it;
  }
  write_json_atomic(out / "items.json",
                    {{"format", "study_items"}, {"version", kStudyItemsVersion}, {"study_seed", seed}, {"items", client}});
  json kj = json::array();
  for (const auto& [id, it] : key) kj.push_back(it);
  write_json_atomic(out / "key.json", {{"format", "study_key"}, {"version", kStudyItemsVersion}, {"items", kj}});
  return key;
}

inline StudyKey load_study_key(const fs::path& path) {
  const json j = read_json_file(path);
  if (j.value("format", "") != "study_key") throw RatingsError(path.string() + " is not a study key");
  StudyKey key;
  for (const auto& ij : j.at("items")) {
    auto it = ij.get<StudyItem>();
    key[it.item_id] = std::move(it);
  }
  return key;
}

// ---------------------------------------------------------------------------
// Ingest
// ---------------------------------------------------------------------------

/// items x raters for one (method, criterion).
struct RatingMatrix {
  std::vector<std::string> items;
  std::vector<std::string> raters;
  stats::RatingGrid grid;

  friend bool operator==(const RatingMatrix&, const RatingMatrix&) = default;
};

struct RealismData {
  std::uint64_t study_seed = 42;
  std::string rubric_version;
  bool complete = true;
  long long superseded = 0;  // earlier duplicates replaced by a later row
  StudyKey key;
  std::map<std::string, std::map<Criterion, RatingMatrix>> human;
  // method -> criterion -> item -> score from the automated judge
  std::map<std::string, std::map<Criterion, std::map<std::string, double>>> llm;

  friend bool operator==(const RealismData&, const RealismData&) = default;
};

/// Joins an export with the key. Raters whose id starts with `llm_prefix`
/// are the automated judge and stay out of the human grids. Duplicate
/// (item, rater, criterion) rows keep the last one.
inline RealismData ingest_ratings(const RatingsExport& exp, const StudyKey& key, const std::string& llm_prefix = "llm") {
  RealismData d;
  d.study_seed = exp.study_seed;
  d.rubric_version = exp.rubric_version;
  d.complete = exp.complete;
  d.key = key;
  if (exp.ratings.empty()) throw RatingsError("ratings export is empty");

  std::map<std::tuple<std::string, std::string, Criterion>, int> last;
  for (const auto& r : exp.ratings) {
    if (!key.count(r.item_id)) throw RatingsError("rating references unknown item " + r.item_id);
    auto [it, inserted] = last.insert_or_assign({r.item_id, r.rater_id, r.criterion}, r.score);
    if (!inserted) ++d.superseded;
  }

  std::map<std::string, std::map<Criterion, std::set<std::string>>> items, raters;
  for (const auto& [k, score] : last) {
    const auto& [item, rater, crit] = k;
    const std::string& method = key.at(item).method;
    if (rater.rfind(llm_prefix, 0) == 0) {
      d.llm[method][crit][item] = score;
      continue;
    }
    items[method][crit].insert(item);
    raters[method][crit].insert(rater);
  }
  for (auto& [method, by_crit] : items) {
    for (auto& [crit, item_set] : by_crit) {
      RatingMatrix m;
      m.items.assign(item_set.begin(), item_set.end());
      m.raters.assign(raters[method][crit].begin(), raters[method][crit].end());
      m.grid.assign(m.items.size(), std::vector<std::optional<double>>(m.raters.size()));
      for (std::size_t i = 0; i < m.items.size(); ++i)
        for (std::size_t r = 0; r < m.raters.size(); ++r)
          if (auto it = last.find({m.items[i], m.raters[r], crit}); it != last.end()) m.grid[i][r] = it->second;
      d.human[method][crit] = std::move(m);
    }
  }
  return d;
}

inline void to_json(json& j, const RatingMatrix& m) {
  json grid = json::array();
  for (const auto& row : m.grid) {
    json jr = json::array();
    for (const auto& c : row) jr.push_back(c ? json(*c) : json(nullptr));
    grid.push_back(jr);
  }
  j = json{{"items", m.items}, {"raters", m.raters}, {"grid", grid}};
}

inline void from_json(const json& j, RatingMatrix& m) {
  j.at("items").get_to(m.items);
  j.at("raters").get_to(m.raters);
  m.grid.clear();
  for (const auto& jr : j.at("grid")) {
    std::vector<std::optional<double>> row;
    for (const auto& c : jr) row.push_back(c.is_null() ? std::nullopt : std::optional<double>(c.get<double>()));
    m.grid.push_back(std::move(row));
  }
}

inline void to_json(json& j, const RealismData& d) {
  json human = json::object(), llm = json::object(), key = json::array();
  for (const auto& [method, by_crit] : d.human)
    for (const auto& [crit, m] : by_crit) human[method][std::string(to_string(crit))] = m;
  for (const auto& [method, by_crit] : d.llm)
    for (const auto& [crit, scores] : by_crit) llm[method][std::string(to_string(crit))] = scores;
  for (const auto& [id, it] : d.key) key.push_back(it);
  j = json{{"format", "realism_ratings"}, {"study_seed", d.study_seed}, {"rubric_version", d.rubric_version},
           {"complete", d.complete},      {"superseded", d.superseded}, {"key", key},
           {"human", human},              {"llm", llm}};
}

inline void from_json(const json& j, RealismData& d) {
  if (j.value("format", "") != "realism_ratings") throw RatingsError("not an ingested ratings file");
  d.study_seed = j.value("study_seed", std::uint64_t{42});
  d.rubric_version = j.value("rubric_version", "");
  d.complete = j.value("complete", true);
  d.superseded = j.value("superseded", 0LL);
  d.key.clear();
  for (const auto& ij : j.at("key")) {
    auto it = ij.get<StudyItem>();
    d.key[it.item_id] = std::move(it);
  }
  d.human.clear();
  for (const auto& [method, by_crit] : j.at("human").items())
    for (const auto& [crit, m] : by_crit.items()) d.human[method][parse_enum<Criterion>(crit)] = m.get<RatingMatrix>();
  d.llm.clear();
  for (const auto& [method, by_crit] : j.at("llm").items())
    for (const auto& [crit, scores] : by_crit.items())
      d.llm[method][parse_enum<Criterion>(crit)] = scores.get<std::map<std::string, double>>();
}

// ---------------------------------------------------------------------------
// Derived scores
// ---------------------------------------------------------------------------

inline std::optional<double> mean_of(const std::vector<std::optional<double>>& row) {
  double s = 0.0;
  int n = 0;
  for (const auto& c : row)
    if (c) {
      s += *c;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return s / n;
}

/// Per-item human mean for one criterion.
inline std::map<std::string, double> item_means(const RatingMatrix& m) {
  std::map<std::string, double> out;
  for (std::size_t i = 0; i < m.items.size(); ++i)
    if (auto v = mean_of(m.grid[i])) out[m.items[i]] = *v;
  return out;
}

/// Per-item realism: mean over the four criteria of the per-criterion rater
/// means. Items missing any criterion are left out.
inline std::map<std::string, double> item_realism(const RealismData& d, const std::string& method) {
  std::map<std::string, double> sum;
  std::map<std::string, int> n;
  auto it = d.human.find(method);
  if (it == d.human.end()) return {};
  for (const auto& [crit, m] : it->second)
    for (const auto& [item, v] : item_means(m)) {
      sum[item] += v;
      ++n[item];
    }
  std::map<std::string, double> out;
  for (const auto& [item, s] : sum)
    if (n[item] == static_cast<int>(all_values<Criterion>().size())) out[item] = s / n[item];
  return out;
}

/// Criterion grid pooled across methods, for agreement over the whole study.
inline stats::RatingGrid pooled_grid(const RealismData& d, Criterion c) {
  std::set<std::string> raters;
  for (const auto& [method, by_crit] : d.human)
    if (auto it = by_crit.find(c); it != by_crit.end()) raters.insert(it->second.raters.begin(), it->second.raters.end());
  const std::vector<std::string> rv(raters.begin(), raters.end());
  stats::RatingGrid out;
  for (const auto& [method, by_crit] : d.human) {
    auto it = by_crit.find(c);
    if (it == by_crit.end()) continue;
    const RatingMatrix& m = it->second;
    for (std::size_t i = 0; i < m.items.size(); ++i) {
      std::vector<std::optional<double>> row(rv.size());
      for (std::size_t r = 0; r < m.raters.size(); ++r) {
        const auto pos = std::lower_bound(rv.begin(), rv.end(), m.raters[r]) - rv.begin();
        row[static_cast<std::size_t>(pos)] = m.grid[i][r];
      }
      out.push_back(std::move(row));
    }
  }
  return out;
}

/// Grid of per-(item, rater) mean-of-four scores, pooled across methods.
inline stats::RatingGrid pooled_overall_grid(const RealismData& d) {
  std::map<std::string, std::map<std::string, std::pair<double, int>>> acc;  // item -> rater -> (sum, n)
  std::set<std::string> raters;
  for (const auto& [method, by_crit] : d.human)
    for (const auto& [crit, m] : by_crit)
      for (std::size_t i = 0; i < m.items.size(); ++i)
        for (std::size_t r = 0; r < m.raters.size(); ++r)
          if (m.grid[i][r]) {
            auto& cell = acc[m.items[i]][m.raters[r]];
            cell.first += *m.grid[i][r];
            ++cell.second;
            raters.insert(m.raters[r]);
          }
  const int k = static_cast<int>(all_values<Criterion>().size());
  stats::RatingGrid out;
  for (const auto& [item, by_rater] : acc) {
    std::vector<std::optional<double>> row;
    for (const auto& r : raters) {
      auto it = by_rater.find(r);
      row.push_back(it != by_rater.end() && it->second.second == k ? std::optional<double>(it->second.first / k)
                                                                    : std::nullopt);
    }
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace injectbench
