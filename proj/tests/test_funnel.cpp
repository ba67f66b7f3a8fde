// Recorded-run corpus: 96 screens whose proposal, insertion and removal counts
// add up to the published localizer totals, pushed through the real stage.

#include <injectbench/config.hpp>
#include <injectbench/localizer.hpp>
#include <injectbench/stats.hpp>

#include <gtest/gtest.h>

using namespace injectbench;

namespace {

struct ScreenPlan {
  int proposed, added, dropped;
};

ScreenPlan plan_for(int s) {
  return {s < 30 ? 4 : s < 50 ? 6 : s < 78 ? 11 : 10, s < 13 ? 2 : 1, s < 17 ? 3 : 2};
}

int index_of(const std::string& id) { return std::stoi(id.substr(id.find('_') + 1)); }

}  // namespace

TEST(FunnelCorpus, PublishedTotalsThroughTheLocalizer) {
  const auto prompts = PromptSet::load(RunConfig{}.assets_dir);
  FixtureChat vlm([](const ChatVisionRequest& r) {
    const auto p = plan_for(index_of(r.context.at("screenshot_id")));
    json regions = json::array();
    for (int i = 0; i < p.proposed; ++i)
      regions.push_back({{"region_type", i % 2 ? "comment" : "post_body"},
                         {"bbox", {10, 10 + 55 * i, 200, 45}},
                         {"user_controllable", true}});
    return json{{"regions", regions}}.dump();
  });
  FixtureOcr ocr([](const OcrRequest& r) {
    return OcrResult{{"text", {2, 2, r.crop.width() - 4, r.crop.height() - 4}, 0.95}};
  });
  FixtureChat moderator([](const ChatVisionRequest& r) {
    if (r.context.at("iteration") != 1) return std::string(R"({"issues": []})");
    const auto p = plan_for(index_of(r.context.at("screenshot_id")));
    json issues = json::array();
    for (int d = 0; d < p.dropped; ++d)
      issues.push_back({{"kind", "duplicate"},
                        {"severity", "med"},
                        {"region", std::to_string(d + 1)},
                        {"repair", {{"action", "drop"}}}});
    for (int a = 0; a < p.added; ++a)
      issues.push_back({{"kind", "missing_region"},
                        {"severity", "med"},
                        {"repair", {{"action", "auto_add_text"}, {"bbox", {230, 10 + 40 * a, 120, 30}}}}});
    return json{{"issues", issues}}.dump();
  });

  std::vector<FunnelEntry> rows;
  const Image image(360, 640);
  for (int s = 0; s < 96; ++s) {
    const Screenshot shot{"screen_" + std::to_string(s), AppId::instagram, "", 360, 640, ""};
    const auto res = localize_screenshot(shot, image, {vlm, ocr, moderator}, prompts);
    ASSERT_FALSE(res.failed);
    EXPECT_EQ(res.moderation_iterations, 1);
    rows.push_back(res.funnel);
  }
  const auto ledger = FunnelLedger::from_entries(rows);
  EXPECT_EQ(ledger.proposed, 728);
  EXPECT_EQ(ledger.moderator_added, 109);
  EXPECT_EQ(ledger.moderator_dropped, 209);
  EXPECT_EQ(ledger.survivors, 628);
  EXPECT_TRUE(ledger.identity_holds());

  const auto summary = stats::funnel_summary(ledger);
  EXPECT_NEAR(summary.gross_filter_rate, 0.250, 0.0005);
  EXPECT_NEAR(*summary.proposed_mean, 7.6, 0.05);
  EXPECT_DOUBLE_EQ(*summary.proposed_median, 6.0);
}

TEST(FunnelLedger, IdentityAndAggregation) {
  FunnelLedger l;
  l.add({"a", 5, 1, 2, 4, 3});
  l.add({"b", 3, 0, 0, 3, 3});
  EXPECT_TRUE(l.identity_holds());
  EXPECT_EQ(l, FunnelLedger::from_entries(l.per_screenshot));
  l.in_final_dataset = l.survivors + 1;
  EXPECT_FALSE(l.identity_holds());
}
