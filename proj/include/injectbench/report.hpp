#pragma once

// Human- and machine-readable run report: dataset balance, localizer funnel,
// per-app ASR matrix, per-intent tiers, defense probe, diversity and realism.
// Output is a pure function of the inputs so regeneration is byte-stable.

#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "injectbench/config.hpp"
#include "injectbench/harness.hpp"
#include "injectbench/manifest.hpp"
#include "injectbench/pipeline.hpp"
#include "injectbench/providers.hpp"
#include "injectbench/ratings.hpp"
#include "injectbench/stats.hpp"

namespace injectbench {

enum class IntentTier { temporal_attention, action_redirection, interaction_primitive };
INJECTBENCH_ENUM_NAMES(IntentTier, 3, {IntentTier::temporal_attention, "temporal_attention"},
                       {IntentTier::action_redirection, "action_redirection"},
                       {IntentTier::interaction_primitive, "interaction_primitive"});

constexpr IntentTier intent_tier(AttackIntent i) {
  switch (i) {
    case AttackIntent::induce_wait:
    case AttackIntent::external_link:
    case AttackIntent::induce_answer:
    case AttackIntent::induce_swipe:
      return IntentTier::temporal_attention;
    case AttackIntent::click_elsewhere:
    case AttackIntent::follow_user:
    case AttackIntent::enable_permission:
    case AttackIntent::induce_terminate:
      return IntentTier::action_redirection;
    case AttackIntent::induce_back:
    case AttackIntent::induce_long_press:
    case AttackIntent::inject_text:
      return IntentTier::interaction_primitive;
  }
  return IntentTier::interaction_primitive;
}

struct ReportInputs {
  const DatasetManifest* manifest = nullptr;
  fs::path manifest_dir;
  std::vector<json> eval_reports;
  std::optional<RealismData> realism;
  EmbeddingProvider* embedder = nullptr;
  std::size_t cluster_k = 8;
  std::uint64_t seed = 42;
};

struct ReportOutput {
  std::string markdown;
  json data = json::object();
  std::string realism_csv;  // empty when either ratings or evaluations are absent
  std::vector<std::string> notices;
};

namespace report_detail {

inline std::string fmt(double v, int decimals = 1) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  std::string out = buf;
  if (out.front() == '-' && out.find_first_not_of("-0.") == std::string::npos) out.erase(0, 1);
  return out;
}

inline std::string pct(double v) { return fmt(100.0 * v, 1); }

inline std::string cell_text(const json& c) {
  return pct(c.at("asr").get<double>()) + " [" + pct(c.at("ci").at("lower").get<double>()) + ", " +
         pct(c.at("ci").at("upper").get<double>()) + "] (" + std::to_string(c.at("successes").get<long long>()) + "/" +
         std::to_string(c.at("total").get<long long>()) + ")";
}

inline void table(std::ostringstream& md, const std::vector<std::string>& head,
                  const std::vector<std::vector<std::string>>& rows) {
  md << "|";
  for (const auto& h : head) md << " " << h << " |";
  md << "\n|";
  for (std::size_t i = 0; i < head.size(); ++i) md << (i == 0 ? " :--- |" : " ---: |");
  md << "\n";
  for (const auto& r : rows) {
    md << "|";
    for (const auto& c : r) md << " " << c << " |";
    md << "\n";
  }
  md << "\n";
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

}  // namespace report_detail

inline ReportOutput build_report(const ReportInputs& in) {
  using namespace report_detail;
  if (!in.manifest) throw std::invalid_argument("report needs a manifest");
  const DatasetManifest& m = *in.manifest;
  ReportOutput out;
  std::ostringstream md;
  json& data = out.data;
  data["config_fingerprint"] = m.header.config_fingerprint;
  data["variant"] = m.header.variant;

  for (const auto& e : in.eval_reports)
    if (e.value("config_fingerprint", "") != m.header.config_fingerprint)
      throw ConfigError("evaluation report fingerprint " + e.value("config_fingerprint", "") +
                        " does not match manifest " + m.header.config_fingerprint);

  md << "# Run report\n\n";
  md << "- Variant: `" << to_string(m.header.variant) << "`\n";
  md << "- Config fingerprint: `" << m.header.config_fingerprint << "`\n";
  md << "- Seeds: ";
  for (const auto& [k, v] : m.header.seeds) md << k << "=" << v << " ";
  md << "\n\n";

  // Dataset ------------------------------------------------------------------
  {
    const auto active = m.with_status(SampleStatus::active);
    const auto counts = active_intent_counts(m.samples);
    std::vector<long long> cats(all_values<ActionCategory>().size(), 0);
    for (const auto* s : active) ++cats[enum_index(intent_to_category(s->intent))];
    long long covered = 0;
    for (long long c : cats) covered += c > 0;
    std::map<std::string, long long> drops;
    for (const auto& s : m.samples)
      if (s.status == SampleStatus::dropped) ++drops[s.drop_reason.value_or("unknown")];

    json ds{{"active", active.size()},
            {"trimmed", m.with_status(SampleStatus::trimmed).size()},
            {"dropped", m.with_status(SampleStatus::dropped).size()},
            {"action_categories_covered", covered},
            {"drop_reasons", drops}};
    md << "## Dataset\n\n";
    md << "Active " << active.size() << ", trimmed " << ds["trimmed"].get<std::size_t>() << ", dropped "
       << ds["dropped"].get<std::size_t>() << ". Action categories covered: " << covered << "/4.\n\n";
    if (!active.empty()) {
      const double h = stats::normalized_entropy(counts);
      const double h4 = stats::normalized_entropy(cats);
      ds["intent_entropy"] = h;
      ds["category_entropy"] = h4;
      md << "Normalized intent entropy " << fmt(h, 3) << " (11 intents); category entropy " << fmt(h4, 3)
         << " (4 categories).\n\n";
    }
    std::vector<std::vector<std::string>> rows;
    json per_intent = json::object();
    for (AttackIntent i : all_values<AttackIntent>()) {
      const std::string name(to_string(i));
      std::string pre = "-";
      if (m.balance.is_object() && m.balance.contains("pre_counts"))
        pre = std::to_string(m.balance["pre_counts"].value(name, 0LL));
      rows.push_back({name, std::string(to_string(intent_to_category(i))), pre, std::to_string(counts[enum_index(i)])});
      per_intent[name] = counts[enum_index(i)];
    }
    ds["per_intent"] = per_intent;
    table(md, {"Intent", "Category", "Pre-trim", "Active"}, rows);
    if (!drops.empty()) {
      std::vector<std::vector<std::string>> dr;
      for (const auto& [r, n] : drops) dr.push_back({r, std::to_string(n)});
      table(md, {"Drop reason", "Count"}, dr);
    }
    data["dataset"] = ds;
  }

  // Funnel -------------------------------------------------------------------
  {
    const auto ledger = m.funnel();
    md << "## Localizer funnel\n\n";
    json f{{"proposed", ledger.proposed},
           {"moderator_added", ledger.moderator_added},
           {"moderator_dropped", ledger.moderator_dropped},
           {"survivors", ledger.survivors},
           {"in_final_dataset", ledger.in_final_dataset},
           {"screenshots", ledger.per_screenshot.size()}};
    md << "Proposed " << ledger.proposed << ", added " << ledger.moderator_added << ", dropped "
       << ledger.moderator_dropped << ", survivors " << ledger.survivors << ", used in final dataset "
       << ledger.in_final_dataset << " over " << ledger.per_screenshot.size() << " screenshots.\n\n";
    if (ledger.proposed + ledger.moderator_added > 0) {
      const auto s = stats::funnel_summary(ledger);
      f["gross_filter_rate"] = s.gross_filter_rate;
      md << "Gross filter rate " << pct(s.gross_filter_rate) << "%.";
      if (s.proposed_mean)
        md << " Proposals per screen: mean " << fmt(*s.proposed_mean, 2) << ", median " << fmt(*s.proposed_median, 1)
           << ".";
      if (s.survivors_mean)
        md << " Survivors per screen: mean " << fmt(*s.survivors_mean, 2) << ", median "
           << fmt(*s.survivors_median, 1) << ".";
      if (s.final_mean)
        md << " Used per screen: mean " << fmt(*s.final_mean, 2) << ", median " << fmt(*s.final_median, 1) << ".";
      md << "\n\n";
    } else {
      out.notices.push_back("funnel: no proposals recorded");
      md << "_No proposals recorded._\n\n";
    }
    data["funnel"] = f;
  }

  // ASR ----------------------------------------------------------------------
  std::map<std::string, std::map<std::string, bool>> success_by_sample;  // sample -> agent -> success
  if (in.eval_reports.empty()) {
    out.notices.push_back("attack success: no evaluation reports supplied; section omitted");
  } else {
    json evals = json::array();
    for (std::size_t ri = 0; ri < in.eval_reports.size(); ++ri) {
      const json& e = in.eval_reports[ri];
      const json& asr = e.at("asr");
      md << "## Attack success (" << e.value("judge", "mechanical") << " judge, report " << ri + 1 << ")\n\n";
      std::set<std::string> apps;
      for (const auto& [agent, a] : asr.at("agents").items())
        for (const auto& [app, c] : a.at("by_app").items()) apps.insert(app);
      std::vector<std::string> head{"Agent", "Overall"};
      head.insert(head.end(), apps.begin(), apps.end());
      std::vector<std::vector<std::string>> rows;
      for (const auto& [agent, a] : asr.at("agents").items()) {
        std::vector<std::string> row{agent, cell_text(a.at("overall"))};
        for (const auto& app : apps) row.push_back(a.at("by_app").contains(app) ? cell_text(a["by_app"][app]) : "-");
        rows.push_back(std::move(row));
      }
      md << "ASR % with 95% Wilson interval.\n\n";
      table(md, head, rows);

      // Intent tiers: descending mean ASR across agents.
      struct TierRow {
        std::string intent;
        double mean;
        std::vector<std::string> cells;
      };
      std::vector<TierRow> tiers;
      std::vector<std::string> agents;
      for (const auto& [agent, a] : asr.at("agents").items()) agents.push_back(agent);
      for (AttackIntent i : all_values<AttackIntent>()) {
        const std::string name(to_string(i));
        double sum = 0.0;
        int n = 0;
        std::vector<std::string> cells;
        for (const auto& agent : agents) {
          const json& bi = asr["agents"][agent]["by_intent"];
          if (bi.contains(name)) {
            sum += bi[name]["asr"].get<double>();
            ++n;
            cells.push_back(pct(bi[name]["asr"].get<double>()));
          } else {
            cells.push_back("-");
          }
        }
        if (n > 0) tiers.push_back({name, sum / n, cells});
      }
      std::stable_sort(tiers.begin(), tiers.end(), [](const TierRow& a, const TierRow& b) { return a.mean > b.mean; });
      std::vector<std::string> th{"Intent", "Tier"};
      th.insert(th.end(), agents.begin(), agents.end());
      th.push_back("Mean");
      std::vector<std::vector<std::string>> trows;
      json tier_json = json::array();
      for (const auto& t : tiers) {
        const auto tier = std::string(to_string(intent_tier(parse_enum<AttackIntent>(t.intent))));
        std::vector<std::string> row{t.intent, tier};
        row.insert(row.end(), t.cells.begin(), t.cells.end());
        row.push_back(pct(t.mean));
        trows.push_back(std::move(row));
        tier_json.push_back({{"intent", t.intent}, {"tier", tier}, {"mean_asr", t.mean}});
      }
      md << "### Per-intent ASR (%) by descending mean\n\n";
      table(md, th, trows);

      for (const auto& [agent, a] : asr.at("agents").items())
        if (a.value("parse_failures", 0) > 0 || a.value("transport_failures", 0) > 0)
          md << "- " << agent << ": " << a.value("parse_failures", 0) << " unparsed replies, "
             << a.value("transport_failures", 0) << " transport failures\n";
      md << "\n";

      json ej{{"judge", e.value("judge", "mechanical")}, {"asr", asr}, {"intent_tiers", tier_json}};
      if (e.contains("defense")) {
        const json& d = e["defense"];
        md << "### Defense probe\n\n";
        std::vector<std::vector<std::string>> drows;
        for (const auto& s : d.at("sweep"))
          drows.push_back({fmt(s.at("threshold").get<double>(), 2), pct(s.at("block_rate").get<double>()),
                           pct(s.at("fpr").get<double>()),
                           std::to_string(s["attacks"]["flagged"].get<long long>()) + "/" +
                               std::to_string(s["attacks"]["total"].get<long long>()),
                           std::to_string(s["cleans"]["flagged"].get<long long>()) + "/" +
                               std::to_string(s["cleans"]["total"].get<long long>()),
                           std::to_string(s.at("excluded").get<long long>())});
        table(md, {"Threshold", "Block rate %", "FPR %", "Attacks flagged", "Cleans flagged", "Excluded"}, drows);
        ej["defense"] = d;
      }
      evals.push_back(ej);
      for (const auto& r : e.at("records"))
        success_by_sample[r.at("sample_id").get<std::string>()][r.at("agent").get<std::string>()] =
            r.at("success").get<bool>();
    }
    data["evaluations"] = evals;
  }

  // Diversity ----------------------------------------------------------------
  {
    const auto active = m.with_status(SampleStatus::active);
    std::vector<long long> cats(all_values<ActionCategory>().size(), 0);
    for (const auto* s : active) ++cats[enum_index(intent_to_category(s->intent))];
    long long coverage = 0;
    for (long long c : cats) coverage += c > 0;
    json div{{"n", active.size()}, {"action_coverage", coverage}};
    std::string goal_h = "-", clip_d = "-";
    if (!in.embedder) {
      out.notices.push_back("diversity: no embedding provider; embedding columns omitted");
    } else if (!active.empty()) {
      std::vector<EmbeddingInput> goals;
      for (const auto* s : active) goals.push_back({s->user_goal, std::nullopt});
      const auto ge = in.embedder->embed(goals);
      if (ge.size() >= in.cluster_k) {
        const double h = stats::cluster_entropy(ge, in.cluster_k, in.seed);
        div["goal_text_entropy"] = h;
        goal_h = fmt(h, 3);
      } else {
        out.notices.push_back("diversity: fewer goals than clusters; goal-text entropy omitted");
      }
      // One image per base screenshot: the first active sample by id.
      std::map<std::string, const InjectionSample*> per_base;
      for (const auto* s : active)
        if (!per_base.count(s->screenshot_id)) per_base[s->screenshot_id] = s;
      if (per_base.size() >= 2) {
        std::vector<EmbeddingInput> imgs;
        for (const auto& [base, s] : per_base)
          imgs.push_back({"", ImageAttachment::from_file((in.manifest_dir / s->injected_image_path).string())});
        const double d = stats::mean_pairwise_cosine_distance(in.embedder->embed(imgs));
        div["per_base_image_distance"] = d;
        clip_d = fmt(d, 3);
      } else {
        out.notices.push_back("diversity: fewer than two base screenshots; image distance omitted");
      }
    }
    md << "## Diversity\n\n";
    table(md, {"n", "Goal-text entropy", "Per-base image distance", "Action coverage"},
          {{std::to_string(active.size()), goal_h, clip_d, std::to_string(coverage) + "/4"}});
    data["diversity"] = div;
  }

  // Realism ------------------------------------------------------------------
  if (!in.realism) {
    out.notices.push_back("realism: no ingested ratings; section omitted");
  } else {
    const RealismData& r = *in.realism;
    std::vector<std::string> methods;
    for (const auto& [method, x] : r.human) methods.push_back(method);
    std::stable_partition(methods.begin(), methods.end(), [](const std::string& s) { return s == kPipelineMethod; });

    md << "## Realism\n\n";
    md << "Mean human rating on the 1 to 5 rubric (rubric " << (r.rubric_version.empty() ? "unversioned" : r.rubric_version)
       << (r.complete ? "" : ", export flagged incomplete") << "). Krippendorff alpha uses the interval metric; rho is "
       << "the Spearman correlation between the human item mean and the automated judge.\n\n";
    std::vector<std::string> head{"Criterion"};
    head.insert(head.end(), methods.begin(), methods.end());
    if (methods.size() >= 2) head.push_back("Delta");
    head.push_back("alpha");
    head.push_back("rho");
    std::vector<std::vector<std::string>> rows;
    json rj = json::object();

    auto rho_for = [&](const std::function<std::map<std::string, double>(const std::string&)>& human_items,
                       const std::function<std::optional<double>(const std::string&, const std::string&)>& llm_item) {
      std::vector<double> hx, ly;
      for (const auto& method : methods)
        for (const auto& [item, h] : human_items(method))
          if (auto l = llm_item(method, item)) {
            hx.push_back(h);
            ly.push_back(*l);
          }
      if (hx.size() < 3) return std::optional<double>();
      return stats::rank_correlations(hx, ly).spearman_rho;
    };
    auto alpha_of = [](const stats::RatingGrid& g) -> std::optional<double> {
      try {
        return stats::krippendorff_alpha(g, stats::AlphaMetric::interval);
      } catch (const std::exception&) {
        return std::nullopt;
      }
    };
    auto opt = [](const std::optional<double>& v, int d) { return v ? fmt(*v, d) : std::string("-"); };

    std::map<std::string, double> overall_sum;
    for (Criterion c : all_values<Criterion>()) {
      const std::string cname(to_string(c));
      std::vector<std::string> row{cname};
      std::vector<double> means;
      json cj = json::object();
      for (const auto& method : methods) {
        auto it = r.human.at(method).find(c);
        std::optional<double> mean;
        if (it != r.human.at(method).end()) {
          double s = 0.0;
          int n = 0;
          for (const auto& gr : it->second.grid)
            for (const auto& v : gr)
              if (v) {
                s += *v;
                ++n;
              }
          if (n) mean = s / n;
        }
        row.push_back(opt(mean, 2));
        means.push_back(mean.value_or(0.0));
        overall_sum[method] += mean.value_or(0.0);
        if (mean) cj["mean"][method] = *mean;
      }
      if (methods.size() >= 2) row.push_back(fmt(means[0] - means[1], 2));
      const auto a = alpha_of(pooled_grid(r, c));
      const auto rho = rho_for(
          [&](const std::string& method) {
            auto it = r.human.at(method).find(c);
            return it == r.human.at(method).end() ? std::map<std::string, double>{} : item_means(it->second);
          },
          [&](const std::string& method, const std::string& item) -> std::optional<double> {
            auto mi = r.llm.find(method);
            if (mi == r.llm.end()) return std::nullopt;
            auto ci = mi->second.find(c);
            if (ci == mi->second.end()) return std::nullopt;
            auto ii = ci->second.find(item);
            return ii == ci->second.end() ? std::nullopt : std::optional<double>(ii->second);
          });
      row.push_back(opt(a, 2));
      row.push_back(opt(rho, 2));
      if (a) cj["alpha"] = *a;
      if (rho) cj["rho"] = *rho;
      rows.push_back(std::move(row));
      rj["criteria"][cname] = cj;
    }
    // Overall: mean of the four criterion means.
    std::vector<std::string> orow{"overall (mean of 4)"};
    std::vector<double> omeans;
    for (const auto& method : methods) {
      const double v = overall_sum[method] / static_cast<double>(all_values<Criterion>().size());
      orow.push_back(fmt(v, 2));
      omeans.push_back(v);
      rj["overall"]["mean"][method] = v;
    }
    if (methods.size() >= 2) orow.push_back(fmt(omeans[0] - omeans[1], 2));
    const auto oa = alpha_of(pooled_overall_grid(r));
    const auto orho = rho_for([&](const std::string& method) { return item_realism(r, method); },
                              [&](const std::string& method, const std::string& item) -> std::optional<double> {
                                auto mi = r.llm.find(method);
                                if (mi == r.llm.end()) return std::nullopt;
                                double s = 0.0;
                                for (Criterion c : all_values<Criterion>()) {
                                  auto ci = mi->second.find(c);
                                  if (ci == mi->second.end() || !ci->second.count(item)) return std::nullopt;
                                  s += ci->second.at(item);
                                }
                                return s / static_cast<double>(all_values<Criterion>().size());
                              });
    orow.push_back(opt(oa, 2));
    orow.push_back(opt(orho, 2));
    if (oa) rj["overall"]["alpha"] = *oa;
    if (orho) rj["overall"]["rho"] = *orho;
    rows.push_back(std::move(orow));
    table(md, head, rows);

    if (methods.size() >= 2) {
      std::vector<double> a, b;
      for (const auto& [item, v] : item_realism(r, methods[0])) a.push_back(v);
      for (const auto& [item, v] : item_realism(r, methods[1])) b.push_back(v);
      if (!a.empty() && !b.empty()) {
        const auto mw = stats::mann_whitney_u(a, b);
        rj["mann_whitney"] = {{"u", mw.u_a}, {"z", mw.z}, {"p", mw.p_two_sided}, {"n1", a.size()}, {"n2", b.size()}};
        char buf[160];
        std::snprintf(buf, sizeof buf, "Two-sided Mann-Whitney on per-item realism (%s vs %s): U = %.1f, z = %.3f, p = %.3g, n = %zu/%zu.\n\n",
                      methods[0].c_str(), methods[1].c_str(), mw.u_a, mw.z, mw.p_two_sided, a.size(), b.size());
        md << buf;
      }
    }
    data["realism"] = rj;

    // Realism versus cross-model ASR for pipeline items with evaluations.
    if (!success_by_sample.empty()) {
      std::ostringstream csv;
      csv << "item_id,sample_id,method,realism,cross_model_asr,agents\n";
      int rows_written = 0;
      for (const auto& [item, realism] : item_realism(r, kPipelineMethod)) {
        const auto& src = r.key.at(item).source_id;
        auto it = success_by_sample.find(src);
        if (it == success_by_sample.end()) continue;
        int hits = 0;
        for (const auto& [agent, ok] : it->second) hits += ok;
        const double asr = static_cast<double>(hits) / static_cast<double>(it->second.size());
        csv << csv_escape(item) << "," << csv_escape(src) << "," << kPipelineMethod << "," << fmt(realism, 4) << ","
            << fmt(asr, 4) << "," << it->second.size() << "\n";
        ++rows_written;
      }
      out.realism_csv = csv.str();
      md << "Realism versus cross-model ASR: " << rows_written << " points in `realism_vs_asr.csv`.\n\n";
    } else {
      out.notices.push_back("realism scatter: no evaluation records to join");
    }
  }

  if (!out.notices.empty()) {
    md << "## Notices\n\n";
    for (const auto& n : out.notices) md << "- " << n << "\n";
    md << "\n";
  }
  data["notices"] = out.notices;
  out.markdown = md.str();
  return out;
}

/// Writes report.md, report.json and, when available, realism_vs_asr.csv.
inline void write_report(const ReportOutput& r, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  write_file_atomic(out_dir / "report.md", r.markdown);
  write_json_atomic(out_dir / "report.json", r.data);
  if (!r.realism_csv.empty()) write_file_atomic(out_dir / "realism_vs_asr.csv", r.realism_csv);
}

/// Study sources: a stratified subset of active samples plus up to `n`
/// baseline images drawn with the annotation seed.
inline std::vector<StudySource> study_sources(const DatasetManifest& m, const fs::path& manifest_dir, std::size_t n,
                                              const std::optional<fs::path>& baseline_dir) {
  const std::uint64_t seed = m.header.seeds.at("annotation");
  std::vector<StudySource> out;
  for (const auto* s : stratified_subset(m.with_status(SampleStatus::active), n, seed))
    out.push_back({kPipelineMethod, s->id, manifest_dir / s->injected_image_path, s->app, s->intent});
  if (baseline_dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(*baseline_dir)) {
      const auto ext = e.path().extension().string();
      if (e.is_regular_file() && (ext == ".png" || ext == ".ppm")) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    Rng rng = Rng::stream(seed, "baseline-subset");
    for (std::size_t i : rng.sample_indices(files.size(), std::min(n, files.size())))
      out.push_back({kBaselineMethod, files[i].stem().string(), files[i], std::nullopt, std::nullopt});
  }
  return out;
}

}  // namespace injectbench
