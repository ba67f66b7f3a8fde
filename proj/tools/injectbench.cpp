// injectbench command-line driver.
//
// Exit codes: 0 success, 2 configuration error, 3 partial failure
// (some screenshots or samples could not be processed), 1 anything else.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "injectbench/config.hpp"
#include "injectbench/fixtures.hpp"
#include "injectbench/http_providers.hpp"
#include "injectbench/manifest.hpp"
#include "injectbench/pipeline.hpp"
#include "injectbench/prompts.hpp"
#include "injectbench/ratings.hpp"
#include "injectbench/report.hpp"

namespace fs = std::filesystem;
using namespace injectbench;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitConfig = 2;
constexpr int kExitPartial = 3;

struct Globals {
  std::string config_path;
  std::string manifest = "manifest";
  std::optional<std::uint64_t> seed;
  bool force = false;
  int workers = 4;
  bool fixtures = false;
};

struct Session {
  RunConfig config;
  PromptSet prompts;
  ProviderSet providers;
  PipelineEnv env;
};

void log_line(const std::string& msg) { std::cerr << msg << '\n'; }

/// Loads config and assets and builds providers. Live mode checks up front
/// that every role the stage needs has an endpoint.
std::unique_ptr<Session> open_session(const Globals& g, const std::vector<std::string_view>& roles) {
  auto s = std::make_unique<Session>();
  if (!g.config_path.empty()) s->config = RunConfig::load(g.config_path);
  if (g.seed) s->config.seed = *g.seed;
  s->config.apply_env_overrides();
  s->config.validate();
  if (g.workers < 1) throw ConfigError("--workers must be >= 1");
  try {
    s->prompts = PromptSet::load(s->config.assets_dir);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("cannot load assets: ") + e.what());
  }
  if (g.fixtures) {
    s->providers = make_fixture_providers();
  } else {
    for (auto r : roles) s->config.require_endpoints({r});
    s->providers = make_http_providers(s->config);
  }
  s->env.config = s->config;
  s->env.prompts = &s->prompts;
  s->env.providers = &s->providers;
  s->env.dir = g.manifest;
  s->env.workers = g.workers;
  s->env.force = g.force;
  s->env.fixtures = g.fixtures;
  s->env.log = log_line;
  return s;
}

int finish(const StageStats& st, const std::string& stage) {
  for (const auto& line : st.log) log_line(line);
  std::cout << stage << ": processed " << st.processed << ", skipped " << st.skipped << ", failed " << st.failed
            << '\n';
  return st.partial() ? kExitPartial : kExitOk;
}

std::set<AttackIntent> parse_intents(const std::vector<std::string>& names) {
  std::set<AttackIntent> out;
  for (const auto& n : names) {
    auto i = try_parse_enum<AttackIntent>(n);
    if (!i) throw ConfigError("unknown intent '" + n + "'");
    out.insert(*i);
  }
  return out;
}

const std::vector<std::string_view> kLocalizeRoles = {role::localizer_vlm, role::bbox_moderator_vlm,
                                                      role::ocr};
const std::vector<std::string_view> kGenerateRoles = {role::goal_vlm, role::payload_llm,
                                                      role::pq_reviewer_llm, role::render_model,
                                                      role::curator_vlm};

json read_json_or_config_error(const fs::path& p) {
  try {
    return read_json_file(p);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Build and evaluate on-screen injection datasets for mobile GUI agents"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "Run configuration JSON");
  app.add_option("--manifest", g.manifest, "Manifest directory")->capture_default_str();
  app.add_option("--seed", g.seed, "Override the configured seed");
  app.add_flag("--force", g.force, "Redo work already recorded in the manifest");
  app.add_option("--workers", g.workers, "Worker threads per stage")->capture_default_str();
  app.add_flag("--fixtures", g.fixtures, "Use deterministic fixture providers instead of live endpoints");

  std::string screenshots;
  auto* localize = app.add_subcommand("localize", "Propose, tighten and moderate injection regions");
  localize->add_option("--screenshots", screenshots, "Screenshot directory")->required();

  std::vector<std::string> intents;
  auto* generate = app.add_subcommand("generate", "Synthesize goals and payloads and render samples");
  generate->add_option("--intents", intents, "Restrict to these intents");

  auto* curate = app.add_subcommand("curate", "Moderate, balance-trim and repair coverage");

  EvalOptions eval_opt;
  std::size_t subset = 0;
  std::string eval_out = "eval.json";
  auto* evaluate = app.add_subcommand("evaluate", "Run agents over the curated samples");
  evaluate->add_option("--agents", eval_opt.agents, "Agent names (default: all configured)");
  evaluate->add_option("--judge", eval_opt.judge, "mechanical or llm")
      ->check(CLI::IsMember({"mechanical", "llm"}))
      ->capture_default_str();
  evaluate->add_flag("--defense-probe", eval_opt.defense_probe, "Also run the screenshot classifier probe");
  evaluate->add_option("--subset", subset, "Evaluate a stratified subset of this size");
  evaluate->add_option("--out", eval_out, "Evaluation report path")->capture_default_str();

  std::string variant_name;
  auto* ablate = app.add_subcommand("ablate", "Build an ablation dataset end to end");
  ablate->add_option("--variant", variant_name, "minus_loc, minus_gen or minus_cur")
      ->required()
      ->check(CLI::IsMember({"minus_loc", "minus_gen", "minus_cur"}));
  ablate->add_option("--screenshots", screenshots, "Screenshot directory")->required();

  std::vector<std::string> eval_paths;
  std::string ratings_path;
  std::string report_out = "report";
  auto* report = app.add_subcommand("report", "Render tables and plot series");
  report->add_option("--eval", eval_paths, "Evaluation report (repeatable)");
  report->add_option("--ratings", ratings_path, "Ingested ratings (default: <manifest>/ratings.json if present)");
  report->add_option("--out", report_out, "Output directory")->capture_default_str();

  std::string export_path, key_path, ingest_out;
  auto* ingest = app.add_subcommand("annotate-export-ingest", "Ingest a ratings export from the annotation tool");
  ingest->add_option("--export", export_path, "RatingsExport JSON")->required();
  ingest->add_option("--key", key_path, "Study key written by study-export")->required();
  ingest->add_option("--out", ingest_out, "Output path (default: <manifest>/ratings.json)");

  std::size_t study_n = 100;
  std::string baseline_dir, study_out = "study";
  auto* study = app.add_subcommand("study-export", "Export blinded items for the annotation tool");
  study->add_option("--n", study_n, "Pipeline samples to include")->capture_default_str();
  study->add_option("--baseline", baseline_dir, "Directory of baseline images");
  study->add_option("--out", study_out, "Output directory")->capture_default_str();

  std::string corpus_out = "screens";
  int corpus_copies = 1;
  auto* fixtures_cmd = app.add_subcommand("fixtures", "Write the synthetic screenshot corpus");
  fixtures_cmd->add_option("--out", corpus_out, "Output directory")->capture_default_str();
  fixtures_cmd->add_option("--copies", corpus_copies, "Screens per app")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*localize) {
      auto s = open_session(g, kLocalizeRoles);
      auto m = open_manifest(s->env);
      return finish(run_localize(s->env, m, screenshots), "localize");
    }
    if (*generate) {
      auto s = open_session(g, kGenerateRoles);
      auto m = open_manifest(s->env);
      return finish(run_generate(s->env, m, parse_intents(intents)), "generate");
    }
    if (*curate) {
      auto s = open_session(g, kGenerateRoles);
      auto m = open_manifest(s->env);
      return finish(run_curate(s->env, m), "curate");
    }
    if (*evaluate) {
      std::vector<std::string_view> roles;
      if (eval_opt.judge == "llm") roles.push_back(role::judge_llm);
      if (eval_opt.defense_probe) roles.push_back(role::defense_classifier);
      auto s = open_session(g, roles);
      if (subset > 0) eval_opt.subset = subset;
      if (!DatasetManifest::exists(g.manifest)) throw ConfigError("no manifest at " + g.manifest);
      const auto m = DatasetManifest::load(g.manifest);
      StageStats st;
      const json out = run_evaluate(s->env, m, eval_opt, st);
      write_json_atomic(eval_out, out);
      st.log.push_back("wrote " + eval_out);
      return finish(st, "evaluate");
    }
    if (*ablate) {
      const auto variant = parse_enum<AblationVariant>(variant_name);
      std::vector<std::string_view> roles{role::ocr, role::goal_vlm, role::payload_llm, role::render_model};
      if (variant != AblationVariant::minus_loc) {
        roles.push_back(role::localizer_vlm);
        roles.push_back(role::bbox_moderator_vlm);
      }
      if (variant != AblationVariant::minus_gen) roles.push_back(role::pq_reviewer_llm);
      if (variant == AblationVariant::minus_loc) roles.push_back(role::curator_vlm);
      auto s = open_session(g, roles);
      auto m = open_manifest(s->env, variant);
      int code = finish(run_localize(s->env, m, screenshots), "localize");
      const int gen = finish(run_generate(s->env, m), "generate");
      code = std::max(code, gen);
      if (gen != kExitOk) return code;
      return std::max(code, finish(run_curate(s->env, m), "curate"));
    }
    if (*report) {
      auto s = open_session(g, {});
      if (!DatasetManifest::exists(g.manifest)) throw ConfigError("no manifest at " + g.manifest);
      const auto m = DatasetManifest::load(g.manifest);
      ReportInputs in;
      in.manifest = &m;
      in.manifest_dir = g.manifest;
      in.embedder = s->providers.embedding.get();
      in.cluster_k = s->config.goal_entropy_k;
      in.seed = s->config.seed;
      for (const auto& p : eval_paths) in.eval_reports.push_back(read_json_or_config_error(p));
      fs::path rp = ratings_path.empty() ? fs::path(g.manifest) / "ratings.json" : fs::path(ratings_path);
      if (fs::exists(rp)) in.realism = read_json_or_config_error(rp).get<RealismData>();
      else if (!ratings_path.empty()) throw ConfigError("cannot read ratings " + ratings_path);
      const auto out = build_report(in);
      write_report(out, report_out);
      for (const auto& n : out.notices) log_line("notice: " + n);
      std::cout << "report written to " << report_out << '\n';
      return kExitOk;
    }
    if (*ingest) {
      const auto exp = read_json_or_config_error(export_path).get<RatingsExport>();
      const auto key = load_study_key(key_path);
      const auto data = ingest_ratings(exp, key);
      const fs::path out = ingest_out.empty() ? fs::path(g.manifest) / "ratings.json" : fs::path(ingest_out);
      write_json_atomic(out, json(data));
      if (data.superseded > 0)
        log_line("superseded " + std::to_string(data.superseded) + " duplicate rating(s); the last one was kept");
      if (!data.complete) log_line("export is marked incomplete");
      std::cout << "ingested " << exp.ratings.size() << " ratings into " << out.string() << '\n';
      return kExitOk;
    }
    if (*study) {
      if (!DatasetManifest::exists(g.manifest)) throw ConfigError("no manifest at " + g.manifest);
      const auto m = DatasetManifest::load(g.manifest);
      std::optional<fs::path> base;
      if (!baseline_dir.empty()) base = baseline_dir;
      const auto sources = study_sources(m, g.manifest, study_n, base);
      const auto key = export_study_items(sources, m.header.seeds.at("annotation"), study_out);
      std::cout << "exported " << key.size() << " items to " << study_out
                << " (keep key.json away from raters)\n";
      return kExitOk;
    }
    if (*fixtures_cmd) {
      if (corpus_copies < 1) throw ConfigError("--copies must be >= 1");
      std::vector<AppId> apps;
      for (int c = 0; c < corpus_copies; ++c)
        for (AppId a : fixture::six_apps()) apps.push_back(a);
      const auto files = fixture::write_corpus(corpus_out, apps, g.seed.value_or(42));
      std::cout << "wrote " << files.size() << " screens to " << corpus_out << '\n';
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const RatingsError& e) {
    std::cerr << "ratings error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitOk;
}
