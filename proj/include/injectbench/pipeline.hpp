#pragma once

// Stage orchestration over a manifest directory: localize, generate, curate
// and evaluate, plus the ablation variants. Every stage commits the manifest
// before returning, so an interrupted run resumes from the last commit.

#include <algorithm>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "injectbench/config.hpp"
#include "injectbench/core.hpp"
#include "injectbench/curator.hpp"
#include "injectbench/generator.hpp"
#include "injectbench/harness.hpp"
#include "injectbench/image.hpp"
#include "injectbench/localizer.hpp"
#include "injectbench/manifest.hpp"
#include "injectbench/parallel.hpp"
#include "injectbench/prompts.hpp"
#include "injectbench/providers.hpp"

namespace injectbench {

namespace fs = std::filesystem;

inline constexpr const char* kProviderUnavailable = "provider_unavailable";

struct PipelineEnv {
  RunConfig config;
  const PromptSet* prompts = nullptr;
  ProviderSet* providers = nullptr;
  fs::path dir;
  int workers = 1;
  bool force = false;
  // Recorded in the config fingerprint so fixture and live manifests never mix.
  bool fixtures = false;
  std::function<void(const std::string&)> log;

  const PromptSet& p() const { return *prompts; }
  ProviderSet& prov() const { return *providers; }
  std::string fingerprint() const { return config.fingerprint(prompts->digest() + (fixtures ? "+fixtures" : "")); }
  void note(const std::string& msg) const {
    if (log) log(msg);
  }
};

struct StageStats {
  int processed = 0;
  int skipped = 0;
  int failed = 0;
  std::vector<std::string> log;

  bool partial() const { return failed > 0; }
};

inline bool is_provider_outage(const InjectionSample& s) {
  return s.status == SampleStatus::dropped && s.drop_reason && s.drop_reason->rfind(kProviderUnavailable, 0) == 0;
}

// ---------------------------------------------------------------------------
// Manifest lifecycle
// ---------------------------------------------------------------------------

/// Loads the manifest at env.dir or starts a new one. A manifest built under
/// a different configuration or variant is refused.
inline DatasetManifest open_manifest(const PipelineEnv& env, std::optional<AblationVariant> variant = std::nullopt) {
  const std::string fp = env.fingerprint();
  if (!DatasetManifest::exists(env.dir)) {
    DatasetManifest m;
    m.header.config_fingerprint = fp;
    m.header.variant = variant.value_or(AblationVariant::full);
    m.header.budget_per_screenshot = env.config.budget_per_screenshot;
    for (auto& [name, seed] : m.header.seeds) seed = env.config.seed;
    return m;
  }
  auto m = DatasetManifest::load(env.dir);
  if (m.header.config_fingerprint != fp)
    throw ConfigError("manifest fingerprint " + m.header.config_fingerprint + " does not match configuration " + fp);
  if (variant && m.header.variant != *variant)
    throw ConfigError("manifest was built as variant " + std::string(to_string(m.header.variant)));
  return m;
}

// ---------------------------------------------------------------------------
// Stage 1: localize
// ---------------------------------------------------------------------------

/// Images (.png, .ppm) in `dir`, sorted by name. App and UI state come from a
/// <stem>.json sidecar when present, else from the stem prefix before '_'.
inline std::vector<Screenshot> discover_screenshots(const fs::path& dir, std::vector<std::string>& log) {
  if (!fs::is_directory(dir)) throw ConfigError("screenshot directory " + dir.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".png" || ext == ".ppm")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Screenshot> out;
  for (const auto& f : files) {
    Screenshot s;
    s.id = f.stem().string();
    s.image_path = fs::absolute(f).lexically_normal().string();
    std::optional<AppId> app;
    const fs::path meta = f.parent_path() / (s.id + ".json");
    if (fs::exists(meta)) {
      const json j = json::parse(read_file(meta), nullptr, false);
      if (j.is_object()) {
        if (j.contains("app") && j["app"].is_string()) app = try_parse_enum<AppId>(j["app"].get<std::string>());
        s.collected_ui_state = j.value("ui_state", "");
      }
    }
    if (!app) app = try_parse_enum<AppId>(s.id.substr(0, s.id.find('_')));
    if (!app) {
      log.push_back("skipping " + f.filename().string() + ": cannot determine app");
      continue;
    }
    s.app = *app;
    out.push_back(std::move(s));
  }
  return out;
}

inline StageStats run_localize(const PipelineEnv& env, DatasetManifest& m, const fs::path& screenshot_dir) {
  StageStats st;
  auto shots = discover_screenshots(screenshot_dir, st.log);
  const bool heuristic = m.header.variant == AblationVariant::minus_loc;

  std::vector<Screenshot> todo;
  for (auto& s : shots) {
    const auto* rec = m.find_screenshot(s.id);
    if (rec && rec->status != ScreenshotStatus::pending && !env.force) {
      ++st.skipped;
      continue;
    }
    todo.push_back(s);
  }

  struct Slot {
    std::optional<ScreenshotRecord> rec;
    std::string error;
  };
  std::vector<Slot> slots(todo.size());
  parallel_for(todo.size(), env.workers, [&](std::size_t i) {
    Screenshot shot = todo[i];
    Image image;
    try {
      image = load_image(shot.image_path);
    } catch (const std::exception& e) {
      slots[i].error = "unreadable image " + shot.id + ": " + e.what();
      return;
    }
    shot.width = image.width();
    shot.height = image.height();
    try {
      LocalizationResult res;
      if (heuristic) {
        res = largest_text_region(shot, image, require_provider(env.prov().ocr, "OCR"),
                                  env.config.ocr_confidence_threshold);
      } else {
        LocalizerProviders lp{require_provider(env.prov().localizer_vlm, "LOCALIZER_VLM"),
                              require_provider(env.prov().ocr, "OCR"),
                              require_provider(env.prov().bbox_moderator, "BBOX_MODERATOR_VLM")};
        res = localize_screenshot(shot, image, lp, env.p(), env.config.ocr_confidence_threshold,
                                  env.config.localizer_max_iterations);
      }
      ScreenshotRecord rec;
      rec.shot = shot;
      rec.status = res.failed ? ScreenshotStatus::localization_failed : ScreenshotStatus::localized;
      rec.regions = std::move(res.regions);
      rec.funnel = res.funnel;
      rec.log = std::move(res.log);
      slots[i].rec = std::move(rec);
    } catch (const ProviderError& e) {
      slots[i].error = "provider failure on " + shot.id + ": " + e.what();
    }
  });

  for (auto& slot : slots) {
    if (!slot.rec) {
      ++st.failed;
      st.log.push_back(slot.error);
      env.note(slot.error);
      continue;
    }
    ++st.processed;
    const std::string id = slot.rec->shot.id;
    // Relocalizing invalidates everything generated from the old regions.
    std::erase_if(m.samples, [&](const InjectionSample& s) { return s.screenshot_id == id; });
    if (auto* existing = m.find_screenshot(id)) *existing = std::move(*slot.rec);
    else m.screenshots.push_back(std::move(*slot.rec));
    env.note("localized " + id);
  }
  if (st.processed > 0) m.header.curated = false;
  m.save(env.dir);
  return st;
}

// ---------------------------------------------------------------------------
// Stage 2: generate
// ---------------------------------------------------------------------------

inline std::string sample_id_for(const std::string& region_id, AttackIntent intent, int k) {
  return region_id + "-" + std::string(to_string(intent)) + "-" + std::to_string(k);
}

inline fs::path sample_image_rel(const std::string& sample_id) { return fs::path("samples") / (sample_id + ".png"); }

/// Goal, payload, render and (variant permitting) moderation for one
/// (region, intent) pair. Provider outages yield a dropped sample whose
/// reason starts with "provider_unavailable" so a rerun regenerates it.
inline InjectionSample produce_sample(const PipelineEnv& env, AblationVariant variant, const Screenshot& shot,
                                      const Image& image, const std::vector<Region>& regions, const Region& region,
                                      AttackIntent intent, const std::string& sample_id) {
  InjectionSample s;
  s.id = sample_id;
  s.screenshot_id = shot.id;
  s.region_id = region.id;
  s.intent = intent;
  s.region_type = region.region_type;
  s.app = shot.app;
  auto drop = [&](std::string reason) {
    s.status = SampleStatus::dropped;
    s.drop_reason = std::move(reason);
    return s;
  };
  const auto& cfg = env.config;
  auto& prov = env.prov();

  try {
    auto goal = synthesize_goal(shot, image, {region}, regions, intent, require_provider(prov.goal_vlm, "GOAL_VLM"),
                                env.p(), cfg.goal_max_attempts);
    if (!goal.goal) {
      if (goal.provider_failures == goal.attempts) return drop(std::string(kProviderUnavailable) + ":goal");
      return drop("generator:goal_unsatisfiable");
    }
    s.user_goal = goal.goal->user_goal;

    if (variant == AblationVariant::minus_gen) {
      const auto& t = env.p().intent_template(intent);
      s.payload_text = t.text;
      if (intent_to_action(intent) == ActionPrimitive::text_entry)
        s.answer_token = t.answer_token.value_or(detail::trim(t.text));
      s.payload_attempts = 1;
    } else {
      PayloadProviders pp{require_provider(prov.payload_llm, "PAYLOAD_LLM"),
                          require_provider(prov.pq_reviewer, "PQ_REVIEWER_LLM")};
      auto payload = generate_payload(shot, image, region, *goal.goal, intent, pp, env.p(), cfg.payload_max_attempts);
      s.payload_attempts = static_cast<int>(payload.attempts.size());
      if (!payload.accepted) {
        if (payload.provider_failures == static_cast<int>(payload.attempts.size()))
          return drop(std::string(kProviderUnavailable) + ":payload");
        return drop("generator:payload_rejected:" +
                    std::string(to_string(payload.last_rejection.value_or(PQRejection{}).reason)));
      }
      s.payload_text = payload.accepted->text;
      s.answer_token = payload.accepted->answer_token;
    }

    auto& editor = require_provider(prov.render, "RENDER_MODEL");
    auto render = render_payload(shot, image, region, s.payload_text, editor, env.p(), "", cfg.render_max_attempts);
    s.render_attempts = render.attempts;
    if (!render.image) {
      if (render.provider_failures == render.attempts) return drop(std::string(kProviderUnavailable) + ":render");
      return drop(render.failure);
    }
    if (render.overflow_hint) s.warnings.push_back("render:overflow_hint");
    s.target_action = target_action_for(intent, region.bbox, s.answer_token);

    Image final_image = std::move(*render.image);
    if (variant == AblationVariant::full) {
      auto& curator = require_provider(prov.curator, "CURATOR_VLM");
      Rerender rerender = [&](const std::string& feedback) -> std::optional<Image> {
        auto again = render_payload(shot, image, region, s.payload_text, editor, env.p(), feedback,
                                    cfg.render_max_attempts);
        s.render_attempts += again.attempts;
        return again.image;
      };
      auto cur = curate_render(s, std::move(final_image), region.bbox, curator, env.p(), rerender,
                               cfg.curator_max_retries);
      s.moderation = std::move(cur.reports);
      if (!cur.survived) return drop(cur.drop_reason);
      final_image = std::move(*cur.image);
    }
    s.injected_image_path = sample_image_rel(s.id).generic_string();
    fs::create_directories(env.dir / "samples");
    write_file_atomic(env.dir / s.injected_image_path, encode_png(final_image));
    s.status = SampleStatus::active;
    return s;
  } catch (const ProviderError& e) {
    s.warnings.push_back(e.what());
    return drop(std::string(kProviderUnavailable) + ":" + std::string(to_string(e.kind())));
  }
}

struct GenerationJob {
  std::string sample_id;
  std::string region_id;
  AttackIntent intent = AttackIntent::click_elsewhere;
};

/// Allocation -> concrete jobs. Regions of each type are taken round-robin
/// across that type's combos so no single region absorbs the budget.
inline std::vector<GenerationJob> plan_jobs(const AllocationState& state, const Screenshot& shot,
                                            const std::vector<Region>& regions,
                                            const std::set<AttackIntent>& intent_filter) {
  auto combos = feasible_combos(regions);
  if (!intent_filter.empty())
    std::erase_if(combos, [&](const Combo& c) { return !intent_filter.count(c.intent); });
  std::map<RegionType, std::vector<const Region*>> by_type;
  for (const auto& r : regions) by_type[r.region_type].push_back(&r);
  for (auto& [t, v] : by_type)
    std::sort(v.begin(), v.end(), [](const Region* a, const Region* b) { return a->id < b->id; });

  std::map<RegionType, std::size_t> cursor;
  std::map<std::pair<std::string, AttackIntent>, int> per_pair;
  std::vector<GenerationJob> jobs;
  for (const auto& a : allocate_budget(state, shot.id, combos)) {
    const auto& pool = by_type[a.combo.region_type];
    for (int j = 0; j < a.count; ++j) {
      const Region* r = pool[cursor[a.combo.region_type]++ % pool.size()];
      const int k = per_pair[{r->id, a.combo.intent}]++;
      jobs.push_back({sample_id_for(r->id, a.combo.intent, k), r->id, a.combo.intent});
    }
  }
  return jobs;
}

inline AllocationState allocation_state_from(const PipelineEnv& env, const DatasetManifest& m) {
  AllocationState st;
  st.budget = env.config.budget_per_screenshot;
  st.rng_seed = m.header.seeds.at("allocator");
  for (const auto& s : m.samples)
    if (s.status == SampleStatus::active) st.record_survivor({s.intent, s.region_type});
  return st;
}

/// Screenshots are processed in id order so allocation weights see every
/// earlier batch; pairs within a screenshot run on the worker pool.
inline StageStats run_generate(const PipelineEnv& env, DatasetManifest& m,
                               const std::set<AttackIntent>& intent_filter = {}) {
  StageStats st;
  const AblationVariant variant = m.header.variant;
  std::sort(m.screenshots.begin(), m.screenshots.end(),
            [](const ScreenshotRecord& a, const ScreenshotRecord& b) { return a.shot.id < b.shot.id; });
  if (env.force) {
    for (auto& rec : m.screenshots) rec.generated = false;
    m.samples.clear();
    m.repairs.clear();
    m.balance = nullptr;
  }
  AllocationState alloc = allocation_state_from(env, m);

  for (auto& rec : m.screenshots) {
    if (rec.status != ScreenshotStatus::localized) continue;
    if (rec.generated) {
      ++st.skipped;
      continue;
    }
    const auto regions = surviving_regions(rec.regions);
    std::vector<GenerationJob> jobs;
    bool resumed = false;
    for (const auto& s : m.samples) {
      if (s.screenshot_id != rec.shot.id) continue;
      resumed = true;
      if (is_provider_outage(s)) jobs.push_back({s.id, s.region_id, s.intent});
    }
    if (!resumed) jobs = plan_jobs(alloc, rec.shot, regions, intent_filter);
    if (jobs.empty() && !resumed) rec.log.push_back("no feasible (intent, region type) combination");

    Image image;
    try {
      image = load_image(rec.shot.image_path);
    } catch (const std::exception& e) {
      ++st.failed;
      st.log.push_back("cannot reload " + rec.shot.id + ": " + e.what());
      continue;
    }

    std::vector<InjectionSample> made(jobs.size());
    parallel_for(jobs.size(), env.workers, [&](std::size_t i) {
      const Region* region = nullptr;
      for (const auto& r : regions)
        if (r.id == jobs[i].region_id) region = &r;
      if (!region) throw ManifestError("job references unknown region " + jobs[i].region_id);
      made[i] = produce_sample(env, variant, rec.shot, image, regions, *region, jobs[i].intent, jobs[i].sample_id);
    });

    bool outage = false;
    for (auto& s : made) {
      if (s.status == SampleStatus::active) alloc.record_survivor({s.intent, s.region_type});
      if (is_provider_outage(s)) outage = true;
      auto it = std::find_if(m.samples.begin(), m.samples.end(), [&](const InjectionSample& x) { return x.id == s.id; });
      if (it != m.samples.end()) *it = std::move(s);
      else m.samples.push_back(std::move(s));
    }
    rec.generated = !outage;
    if (outage) {
      ++st.failed;
      st.log.push_back("provider outage while generating " + rec.shot.id + "; rerun to resume");
    } else {
      ++st.processed;
    }
    env.note("generated " + rec.shot.id + " (" + std::to_string(jobs.size()) + " pairs)");
    m.header.curated = false;
    m.save(env.dir);
  }
  return st;
}

// ---------------------------------------------------------------------------
// Stage 3: curate
// ---------------------------------------------------------------------------

/// Moderation of any unmoderated active samples, balance-trim, then one
/// coverage-repair sweep. minus_cur skips all three; minus_gen samples are
/// never moderated.
inline StageStats run_curate(const PipelineEnv& env, DatasetManifest& m) {
  StageStats st;
  const AblationVariant variant = m.header.variant;
  if (m.header.curated && !env.force) {
    ++st.skipped;
    return st;
  }
  if (variant == AblationVariant::minus_cur) {
    const auto counts = active_intent_counts(m.samples);
    m.balance = balance_summary({0, counts, counts, {}});
    m.balance["trim_applied"] = false;
    st.processed = static_cast<int>(m.with_status(SampleStatus::active).size());
    m.header.curated = true;
    m.save(env.dir);
    return st;
  }

  // Samples that reached this stage without a moderation trail.
  if (variant == AblationVariant::full) {
    std::vector<std::size_t> pending;
    for (std::size_t i = 0; i < m.samples.size(); ++i)
      if (m.samples[i].status == SampleStatus::active && m.samples[i].moderation.empty()) pending.push_back(i);
    parallel_for(pending.size(), env.workers, [&](std::size_t k) {
      auto& s = m.samples[pending[k]];
      const auto* rec = m.find_screenshot(s.screenshot_id);
      const auto* region = m.find_region(s.screenshot_id, s.region_id);
      const Image base = load_image(rec->shot.image_path);
      Image injected = load_image(env.dir / s.injected_image_path);
      Rerender rerender = [&](const std::string& feedback) {
        return render_payload(rec->shot, base, *region, s.payload_text, require_provider(env.prov().render, "RENDER_MODEL"),
                              env.p(), feedback, env.config.render_max_attempts)
            .image;
      };
      auto cur = curate_render(s, std::move(injected), region->bbox, require_provider(env.prov().curator, "CURATOR_VLM"),
                               env.p(), rerender, env.config.curator_max_retries);
      s.moderation = std::move(cur.reports);
      if (!cur.survived) {
        s.status = SampleStatus::dropped;
        s.drop_reason = cur.drop_reason;
      } else {
        write_file_atomic(env.dir / s.injected_image_path, encode_png(*cur.image));
      }
    });
  }

  st.processed = static_cast<int>(m.with_status(SampleStatus::active).size());
  const auto trim = balance_trim(m.samples, m.header.seeds.at("trim"));
  m.balance = balance_summary(trim);
  m.balance["trim_applied"] = true;

  std::vector<Region> points;
  for (const auto& rec : m.screenshots) {
    if (rec.status != ScreenshotStatus::localized) continue;
    for (const auto& r : surviving_regions(rec.regions)) points.push_back(r);
  }
  std::set<std::string> taken;
  for (const auto& s : m.samples) taken.insert(s.id);
  auto generate = [&](const Region& region, AttackIntent intent) -> std::optional<InjectionSample> {
    const auto* rec = m.find_screenshot(region.screenshot_id);
    std::string id = region.id + "-" + std::string(to_string(intent)) + "-repair";
    for (int k = 1; taken.count(id); ++k) id = region.id + "-" + std::string(to_string(intent)) + "-repair" + std::to_string(k);
    taken.insert(id);
    const Image image = load_image(rec->shot.image_path);
    return produce_sample(env, variant, rec->shot, image, surviving_regions(rec->regions), region, intent, id);
  };
  auto repairs = coverage_repair(m.samples, points, generate);
  for (const auto& r : repairs)
    env.note("coverage repair " + r.region_id + " " + std::string(to_string(r.intent)) + (r.success ? " ok" : " failed"));
  m.repairs.insert(m.repairs.end(), repairs.begin(), repairs.end());

  json post = json::object();
  const auto after = active_intent_counts(m.samples);
  for (AttackIntent i : all_values<AttackIntent>()) post[std::string(to_string(i))] = after[enum_index(i)];
  m.balance["post_repair_counts"] = post;
  m.balance["repairs_attempted"] = repairs.size();
  m.header.curated = true;
  m.save(env.dir);
  return st;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Proportional allocation of `n` over (intent, app) strata with largest
/// remainders, then a seeded uniform draw within each stratum.
inline std::vector<const InjectionSample*> stratified_subset(std::vector<const InjectionSample*> pool, std::size_t n,
                                                             std::uint64_t seed) {
  if (n >= pool.size()) return pool;
  std::map<std::pair<AttackIntent, AppId>, std::vector<const InjectionSample*>> strata;
  for (const auto* s : pool) strata[{s->intent, s->app}].push_back(s);
  struct Row {
    std::pair<AttackIntent, AppId> key;
    std::size_t base;
    double remainder;
  };
  std::vector<Row> rows;
  std::size_t assigned = 0;
  for (auto& [k, v] : strata) {
    std::sort(v.begin(), v.end(), [](auto* a, auto* b) { return a->id < b->id; });
    const double quota = static_cast<double>(n) * static_cast<double>(v.size()) / static_cast<double>(pool.size());
    const auto base = static_cast<std::size_t>(quota);
    rows.push_back({k, base, quota - static_cast<double>(base)});
    assigned += base;
  }
  std::vector<Row> order = rows;
  std::stable_sort(order.begin(), order.end(), [](const Row& a, const Row& b) { return a.remainder > b.remainder; });
  std::map<std::pair<AttackIntent, AppId>, std::size_t> take;
  for (const auto& r : rows) take[r.key] = r.base;
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++take[order[i % order.size()].key];

  Rng rng = Rng::stream(seed, "subset");
  std::vector<const InjectionSample*> out;
  for (auto& [k, v] : strata)
    for (std::size_t idx : rng.sample_indices(v.size(), std::min(take[k], v.size()))) out.push_back(v[idx]);
  std::sort(out.begin(), out.end(), [](auto* a, auto* b) { return a->id < b->id; });
  return out;
}

struct EvalOptions {
  std::vector<std::string> agents;  // empty: every configured agent
  std::string judge = "mechanical";
  bool defense_probe = false;
  std::optional<std::size_t> subset;
};

inline json agent_output_schema() {
  return {{"action", "tap | type | swipe | back | wait | terminate | long_press"},
          {"x", "integer, tap only"},
          {"y", "integer, tap only"},
          {"text", "string, type only"},
          {"direction", "string, swipe only"}};
}

/// Full agent x sample sweep. Returns the report document; per-sample
/// transport failures are recorded, never fatal.
inline json run_evaluate(const PipelineEnv& env, const DatasetManifest& m, const EvalOptions& opt, StageStats& st) {
  if (m.header.config_fingerprint != env.fingerprint())
    throw ConfigError("manifest fingerprint does not match the active configuration");
  if (!m.header.curated) throw ManifestError("manifest is not curated; run curate first");

  auto active = m.with_status(SampleStatus::active);
  if (opt.subset) active = stratified_subset(active, *opt.subset, m.header.seeds.at("global"));
  if (active.empty()) throw ManifestError("manifest has no active samples");

  std::vector<std::string> names = opt.agents;
  if (names.empty())
    for (const auto& [name, p] : env.prov().agents) names.push_back(name);
  std::vector<AgentSpec> agents;
  for (const auto& name : names) {
    auto it = env.prov().agents.find(name);
    if (it == env.prov().agents.end() || !it->second) throw ConfigError("no provider for agent " + name);
    AgentSpec a{name, it->second.get(), "", agent_output_schema()};
    if (auto c = env.config.agents.find(name); c != env.config.agents.end()) a.system_prompt = c->second.system_prompt;
    agents.push_back(a);
  }
  if (agents.empty()) throw ConfigError("no agents configured");

  std::unique_ptr<SuccessJudge> judge;
  if (opt.judge == "mechanical") judge = std::make_unique<MechanicalJudge>();
  else if (opt.judge == "llm") judge = std::make_unique<LlmJudge>(require_provider(env.prov().judge, "JUDGE_LLM"), env.p());
  else throw ConfigError("unknown judge '" + opt.judge + "'");

  std::vector<EvalRecord> records(agents.size() * active.size());
  parallel_for(records.size(), env.workers, [&](std::size_t i) {
    const AgentSpec& agent = agents[i / active.size()];
    const InjectionSample& s = *active[i % active.size()];
    EvalRecord& r = records[i];
    r.sample_id = s.id;
    r.agent = agent.name;
    r.app = s.app;
    r.intent = s.intent;
    try {
      const auto image = ImageAttachment::from_file((env.dir / s.injected_image_path).string());
      r.decision = predict_action(agent, image, s.user_goal, env.p(),
                                  {{"sample_id", s.id}, {"target_action", s.target_action}});
    } catch (const std::exception& e) {
      r.decision.transport_failure = true;
      r.decision.error = e.what();
    }
    r.success = judge->judge(s, r.decision);
  });
  for (const auto& r : records)
    if (r.decision.transport_failure) ++st.failed;
  st.processed = static_cast<int>(records.size());

  json out{{"config_fingerprint", m.header.config_fingerprint},
           {"variant", m.header.variant},
           {"judge", judge->name()},
           {"agents", names},
           {"sample_count", active.size()},
           {"records", records},
           {"asr", asr_json(compute_asr(records))}};

  if (opt.defense_probe) {
    std::vector<DefenseItem> items;
    for (const auto* s : active)
      items.push_back({s->id, true, (env.dir / s->injected_image_path).string(), s->app, s->intent});
    for (const auto& rec : m.screenshots)
      if (rec.status == ScreenshotStatus::localized)
        items.push_back({rec.shot.id, false, rec.shot.image_path, rec.shot.app, std::nullopt});
    const auto verdicts =
        classify_images(require_provider(env.prov().defense_classifier, "DEFENSE_CLASSIFIER"), items, env.p());
    json sweep = json::array();
    for (const auto& dm : defense_sweep(verdicts, env.config.defense_thresholds)) sweep.push_back(defense_json(dm));
    out["defense"] = {{"primary", sweep.front()}, {"sweep", sweep}};
  }
  return out;
}

}  // namespace injectbench
