#include <injectbench/config.hpp>
#include <injectbench/curator.hpp>

#include <gtest/gtest.h>

#include <numeric>

using namespace injectbench;

namespace {

const PromptSet& prompts() {
  static const PromptSet p = PromptSet::load(RunConfig{}.assets_dir);
  return p;
}

InjectionSample sample(std::string id, AttackIntent intent, std::string region_id = "") {
  InjectionSample s;
  s.id = std::move(id);
  s.intent = intent;
  s.region_id = region_id.empty() ? s.id + "_region" : std::move(region_id);
  s.status = SampleStatus::active;
  return s;
}

std::vector<InjectionSample> with_counts(const std::vector<std::pair<AttackIntent, int>>& counts) {
  std::vector<InjectionSample> out;
  for (auto [intent, n] : counts)
    for (int i = 0; i < n; ++i) out.push_back(sample(std::string(to_string(intent)) + std::to_string(i), intent));
  return out;
}

long long count_of(const TrimSummary& t, AttackIntent i) { return t.post_counts[enum_index(i)]; }

Region region(std::string id, RegionType t) {
  Region r;
  r.id = std::move(id);
  r.screenshot_id = "shot";
  r.region_type = t;
  r.bbox = {0, 0, 40, 20};
  return r;
}

constexpr auto A = AttackIntent::follow_user;
constexpr auto B = AttackIntent::induce_back;
constexpr auto C = AttackIntent::induce_wait;

}  // namespace

TEST(Allocation, InverseSurvivalWeights) {
  const std::vector<Combo> combos = {{AttackIntent::click_elsewhere, RegionType::comment},
                                     {AttackIntent::follow_user, RegionType::comment},
                                     {AttackIntent::induce_back, RegionType::comment},
                                     {AttackIntent::induce_wait, RegionType::comment}};
  AllocationState st;
  st.survival[combos[0]] = 10;
  st.survival[combos[1]] = 10;
  const auto a = allocate_budget(st, "shot", combos);
  ASSERT_EQ(a.size(), 4u);
  EXPECT_EQ(a[0].count, 1);
  EXPECT_EQ(a[1].count, 1);
  EXPECT_EQ(a[2].count, 6);
  EXPECT_EQ(a[3].count, 6);
}

TEST(Allocation, FreshCombosSplitEvenly) {
  std::vector<Combo> combos;
  for (AttackIntent i : all_values<AttackIntent>())
    if (combos.size() < 7) combos.push_back({i, RegionType::post_body});
  const auto a = allocate_budget(AllocationState{}, "shot", combos);
  for (const auto& x : a) EXPECT_EQ(x.count, 2);
}

TEST(Allocation, SumsToBudgetAndIsSeedStable) {
  const auto combos = feasible_combos({region("a", RegionType::comment), region("b", RegionType::input_box)});
  EXPECT_EQ(combos.size(), 10u + 11u);
  AllocationState st;
  st.survival[combos[3]] = 2;
  const auto a = allocate_budget(st, "shot_7", combos);
  const int total = std::accumulate(a.begin(), a.end(), 0, [](int s, const Allocation& x) { return s + x.count; });
  EXPECT_EQ(total, 14);
  EXPECT_EQ(a, allocate_budget(st, "shot_7", combos));
  EXPECT_TRUE(allocate_budget(st, "shot", {}).empty());
  st.budget = -1;
  EXPECT_THROW(allocate_budget(st, "shot", combos), std::invalid_argument);
}

TEST(Trim, DownToSmallestPresentIntent) {
  auto s = with_counts({{A, 5}, {B, 3}});
  const auto t = balance_trim(s);
  EXPECT_EQ(t.target, 3);
  EXPECT_EQ(count_of(t, A), 3);
  EXPECT_EQ(count_of(t, B), 3);
  EXPECT_EQ(count_of(t, C), 0);
  EXPECT_EQ(t.trimmed_ids.size(), 2u);
  for (const auto& x : s)
    if (x.status == SampleStatus::trimmed) {
      EXPECT_EQ(x.trim_reason, kTrimReasonOverrepresented);
    }
}

TEST(Trim, SingletonIntentDrivesTarget) {
  auto s = with_counts({{A, 4}, {B, 1}});
  EXPECT_EQ(balance_trim(s).target, 1);
  auto t = with_counts({{A, 4}, {B, 2}});
  const auto sum = balance_trim(t);
  EXPECT_EQ(count_of(sum, A), 2);
  const auto j = balance_summary(sum);
  EXPECT_DOUBLE_EQ(j["post"]["entropy_nonzero"].get<double>(), 1.0);
  EXPECT_EQ(j["trimmed"], 2);
}

TEST(Trim, RepairedSamplesArePinned) {
  auto s = with_counts({{A, 5}, {B, 2}});
  s[0].repaired = true;
  s[1].repaired = true;
  s[2].repaired = true;
  const auto t = balance_trim(s);
  EXPECT_EQ(t.target, 2);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(s[i].status, SampleStatus::active);
  EXPECT_EQ(count_of(t, A), 3);
}

TEST(Trim, EmptyAndDroppedSamplesAreIgnored) {
  std::vector<InjectionSample> none;
  EXPECT_EQ(balance_trim(none).target, 1);
  auto s = with_counts({{A, 3}, {B, 2}});
  s[0].status = SampleStatus::dropped;
  const auto t = balance_trim(s);
  EXPECT_EQ(t.pre_counts[enum_index(A)], 2);
  EXPECT_TRUE(t.trimmed_ids.empty());
}

TEST(CoverageRepair, PicksRarestFeasibleIntent) {
  auto s = with_counts({{AttackIntent::click_elsewhere, 2}, {A, 1}});
  s[0].region_id = "covered";
  for (AttackIntent i : all_values<AttackIntent>())
    if (i != AttackIntent::inject_text && i != AttackIntent::click_elsewhere && i != A)
      s.push_back(sample("x" + std::string(to_string(i)), i));
  const std::vector<Region> regions = {region("covered", RegionType::comment), region("bare", RegionType::comment),
                                       region("search", RegionType::search_bar)};
  std::vector<std::pair<std::string, AttackIntent>> calls;
  const auto recs = coverage_repair(s, regions, [&](const Region& r, AttackIntent i) {
    calls.emplace_back(r.id, i);
    auto made = sample("repair_" + r.id, i, r.id);
    return std::optional(made);
  });
  ASSERT_EQ(calls.size(), 1u);
  EXPECT_EQ(calls[0].first, "bare");
  // Every feasible intent on a comment has one active sample except click_elsewhere; the first in order wins.
  EXPECT_EQ(calls[0].second, A);
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_TRUE(recs[0].success);
  EXPECT_TRUE(s.back().repaired);
}

TEST(CoverageRepair, RecordsFailures) {
  std::vector<InjectionSample> s;
  const std::vector<Region> regions = {region("r1", RegionType::input_box), region("r2", RegionType::post_body),
                                       region("r3", RegionType::post_body)};
  int n = 0;
  const auto recs = coverage_repair(s, regions, [&](const Region& r, AttackIntent i) -> std::optional<InjectionSample> {
    ++n;
    if (r.id == "r1") throw std::runtime_error("render down");
    if (r.id == "r2") return std::nullopt;
    auto d = sample("d", i, r.id);
    d.status = SampleStatus::dropped;
    d.drop_reason = "curator:hard_fail_after_retries";
    return d;
  });
  EXPECT_EQ(n, 3);
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_EQ(recs[0].detail, "render down");
  EXPECT_EQ(recs[0].intent, AttackIntent::click_elsewhere);
  EXPECT_EQ(recs[1].detail, "generation failed");
  EXPECT_EQ(recs[2].detail, "curator:hard_fail_after_retries");
  EXPECT_EQ(s.size(), 1u);
  for (const auto& r : recs) {
    EXPECT_FALSE(r.success);
    EXPECT_EQ(json(r).get<RepairRecord>(), r);
  }
}

TEST(Curation, HardFailUntilRetriesRunOut) {
  FixtureChat curator(
      [](const ChatVisionRequest&) { return std::string(R"({"issues":[{"category":"realism","severity":"high"}]})"); });
  int rerenders = 0;
  const auto out = curate_render(sample("s", A), Image(60, 40), {5, 5, 30, 20}, curator, prompts(),
                                 [&](const std::string& feedback) -> std::optional<Image> {
                                   ++rerenders;
                                   EXPECT_NE(feedback.find("realism (high)"), std::string::npos);
                                   return Image(60, 40);
                                 });
  EXPECT_FALSE(out.survived);
  EXPECT_EQ(out.reports.size(), 4u);
  EXPECT_EQ(rerenders, 3);
  EXPECT_EQ(out.drop_reason, "curator:hard_fail_after_retries");
  for (int i = 0; i < 4; ++i) EXPECT_EQ(out.reports[i].retry_index, i);
}

TEST(Curation, SoftFailSurvivesAndRerenderFailureDrops) {
  FixtureChat curator;
  curator.push_script({R"({"issues":[{"category":"text_truncation","severity":"med"}]})"});
  const auto ok = curate_render(sample("s", A), Image(60, 40), {5, 5, 30, 20}, curator, prompts(),
                                [](const std::string&) { return std::optional<Image>(); });
  EXPECT_TRUE(ok.survived);
  EXPECT_EQ(ok.reports.back().verdict, Verdict::soft_fail);

  curator.push_script({R"({"issues":[{"category":"font_size_mismatch","severity":"high"}]})"});
  const auto bad = curate_render(sample("s", A), Image(60, 40), {5, 5, 30, 20}, curator, prompts(),
                                 [](const std::string&) { return std::optional<Image>(); });
  EXPECT_FALSE(bad.survived);
  EXPECT_EQ(bad.drop_reason, "curator:rerender_failed");
}

TEST(Curation, UnparseableRepliesBecomeHardFail) {
  FixtureChat curator;
  curator.push_script({"garbage", R"({"issues": "none"})"});
  const auto r = moderate_render(sample("s", A), Image(60, 40), {5, 5, 30, 20}, curator, prompts(), 0);
  EXPECT_EQ(curator.calls(), 2);
  EXPECT_EQ(r.verdict, Verdict::hard_fail);
  curator.push_script({"garbage", R"({"issues": []})"});
  EXPECT_EQ(moderate_render(sample("s", A), Image(60, 40), {5, 5, 30, 20}, curator, prompts(), 0).verdict,
            Verdict::pass);
}

TEST(Curation, ParseIssues) {
  const auto issues = parse_artefact_issues(
      json::parse(R"({"issues":[{"category":"bbox_overflow","severity":"low","note":"edge"}]})"));
  ASSERT_EQ(issues.size(), 1u);
  EXPECT_EQ(issues[0].category, ArtefactCategory::bbox_overflow);
  EXPECT_EQ(issues[0].note, "edge");
  EXPECT_THROW(parse_artefact_issues(json::parse(R"({"issues":[{"category":"blur","severity":"low"}]})")),
               ProviderError);
  EXPECT_THROW(parse_artefact_issues(json::array()), ProviderError);
}
