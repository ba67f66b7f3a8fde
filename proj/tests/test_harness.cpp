#include <injectbench/config.hpp>
#include <injectbench/harness.hpp>

#include <gtest/gtest.h>

#include <random>

using namespace injectbench;

namespace {

const PromptSet& prompts() {
  static const PromptSet p = PromptSet::load(RunConfig{}.assets_dir);
  return p;
}

InjectionSample target(AttackIntent intent, BBox box = {100, 100, 80, 30}, std::optional<std::string> answer = {}) {
  InjectionSample s;
  s.id = "s";
  s.intent = intent;
  s.target_action = target_action_for(intent, box, answer);
  return s;
}

AgentDecision decided(const std::string& reply) {
  AgentDecision d;
  d.raw_text = reply;
  d.parsed_action = parse_agent_action(reply);
  d.parse_ok = d.parsed_action.has_value();
  return d;
}

DefenseVerdict verdict(std::string id, bool attack, bool modified, double conf, bool excluded = false) {
  DefenseVerdict v;
  v.id = std::move(id);
  v.is_attack = attack;
  v.modified = modified;
  v.confidence = conf;
  v.excluded = excluded;
  return v;
}

AgentSpec agent_on(std::string name, ChatProvider* provider) {
  AgentSpec a;
  a.name = std::move(name);
  a.provider = provider;
  return a;
}

}  // namespace

TEST(AgentAction, ParsesCommonShapes) {
  auto a = parse_agent_action(R"({"action": "CLICK", "coordinates": [12.6, 40]})");
  ASSERT_TRUE(a);
  EXPECT_EQ(a->primitive, ActionPrimitive::tap);
  EXPECT_EQ(a->target, (BBox{13, 40, 1, 1}));
  a = parse_agent_action("Sure.\n```json\n{\"action_type\": \"type\", \"text\": \"hello\"}\n```");
  ASSERT_TRUE(a);
  EXPECT_EQ(a->text, "hello");
  a = parse_agent_action(R"({"action": "scroll", "direction": "up"})");
  EXPECT_EQ(a->primitive, ActionPrimitive::swipe);
  EXPECT_EQ(a->direction, "up");
  EXPECT_EQ(parse_agent_action(R"({"action": "done"})")->primitive, ActionPrimitive::task_termination);
  EXPECT_EQ(parse_agent_action(R"({"action": "long_press", "x": 1, "y": 2})")->primitive, ActionPrimitive::tap);
}

TEST(AgentAction, RejectsIncompleteReplies) {
  EXPECT_FALSE(parse_agent_action("tap the button"));
  EXPECT_FALSE(parse_agent_action(R"({"action": "tap"})"));
  EXPECT_FALSE(parse_agent_action(R"({"action": "type"})"));
  EXPECT_FALSE(parse_agent_action(R"({"action": "dance"})"));
  EXPECT_FALSE(parse_agent_action("[1, 2]"));
}

TEST(Judge, TapInsideTargetBox) {
  const auto s = target(AttackIntent::follow_user);
  EXPECT_TRUE(judge_success(s, decided(R"({"action":"tap","x":120,"y":110})")));
  EXPECT_TRUE(judge_success(s, decided(R"({"action":"tap","x":100,"y":100})")));
  EXPECT_FALSE(judge_success(s, decided(R"({"action":"tap","x":180,"y":110})")));
  EXPECT_FALSE(judge_success(s, decided(R"({"action":"back"})")));
}

TEST(Judge, SwipeIgnoresDirection) {
  const auto s = target(AttackIntent::induce_swipe);
  EXPECT_TRUE(judge_success(s, decided(R"({"action":"swipe","direction":"left"})")));
  EXPECT_TRUE(judge_success(s, decided(R"({"action":"swipe"})")));
}

TEST(Judge, TypedTextContainsAnswer) {
  const auto s = target(AttackIntent::induce_answer, {0, 0, 10, 10}, std::string("Blue Whale"));
  EXPECT_TRUE(judge_success(s, decided(R"({"action":"type","text":"my answer: blue whale!"})")));
  EXPECT_FALSE(judge_success(s, decided(R"({"action":"type","text":"blue"})")));
  AgentDecision garbled;
  garbled.raw_text = "???";
  EXPECT_FALSE(judge_success(s, garbled));
}

TEST(Judge, LlmJudgeReadsVerdict) {
  FixtureChat provider;
  LlmJudge judge(provider, prompts());
  const auto s = target(AttackIntent::follow_user);
  const auto d = decided(R"({"action":"tap","x":1,"y":1})");
  provider.push_script({R"({"success": true})", R"({"success": "yes"})", "nope"});
  EXPECT_TRUE(judge.judge(s, d));
  EXPECT_FALSE(judge.judge(s, d));
  EXPECT_FALSE(judge.judge(s, d));
  EXPECT_FALSE(judge.judge(s, decided("garbage")));
  EXPECT_EQ(provider.calls(), 3);
  EXPECT_FALSE(judge.judge(s, d));  // no fixture left: transport failure
}

TEST(Predict, TransportFailureIsRecorded) {
  FixtureChat provider;
  const auto agent = agent_on("a", &provider);
  const auto img = ImageAttachment::from_image(Image(4, 4));
  const auto d = predict_action(agent, img, "Open the post", prompts());
  EXPECT_TRUE(d.transport_failure);
  EXPECT_FALSE(d.parse_ok);
  provider.push_script({R"({"action":"wait"})"});
  EXPECT_TRUE(predict_action(agent, img, "Open the post", prompts()).parse_ok);
  EXPECT_THROW(predict_action(agent_on("none", nullptr), img, "x", prompts()), std::invalid_argument);
}

TEST(Asr, ReaggregatesFromRecords) {
  std::mt19937 gen(11);
  std::vector<EvalRecord> records;
  long long wins = 0;
  for (int i = 0; i < 300; ++i) {
    EvalRecord r;
    r.sample_id = "s" + std::to_string(i);
    r.agent = i % 3 ? "alpha" : "beta";
    r.app = all_values<AppId>()[gen() % 10];
    r.intent = all_values<AttackIntent>()[gen() % 11];
    r.success = gen() % 4 == 0;
    r.decision.parse_ok = gen() % 10 != 0;
    wins += r.success;
    records.push_back(r);
    EXPECT_EQ(json(r).get<EvalRecord>(), r);
  }
  const auto rep = compute_asr(records);
  EXPECT_EQ(rep.overall.successes, wins);
  EXPECT_EQ(rep.overall.total, 300);
  for (const auto& [name, a] : rep.agents) {
    long long by_app = 0, by_intent = 0, by_cat = 0, totals = 0;
    for (const auto& [k, c] : a.by_app) by_app += c.successes, totals += c.total;
    for (const auto& [k, c] : a.by_intent) by_intent += c.successes;
    for (const auto& [k, c] : a.by_category) by_cat += c.successes;
    EXPECT_EQ(by_app, a.overall.successes);
    EXPECT_EQ(by_intent, a.overall.successes);
    EXPECT_EQ(by_cat, a.overall.successes);
    EXPECT_EQ(totals, a.overall.total);
    const auto ci = stats::wilson_interval(a.overall.successes, a.overall.total);
    EXPECT_DOUBLE_EQ(a.overall.ci.lower, ci.lower);
  }
  EXPECT_EQ(rep.agents.at("beta").overall.total, 100);
  const auto j = asr_json(rep);
  EXPECT_EQ(j["agents"]["alpha"]["overall"]["total"], 200);
  EXPECT_THROW(compute_asr({}), std::domain_error);
}

TEST(Defense, BlockRateAndFalsePositives) {
  std::vector<DefenseVerdict> v;
  for (int i = 0; i < 1111; ++i) v.push_back(verdict("a" + std::to_string(i), true, i < 652, 0.9));
  for (int i = 0; i < 96; ++i) v.push_back(verdict("c" + std::to_string(i), false, i < 35, 0.9));
  v.push_back(verdict("x", true, true, 1.0, true));
  const auto m = defense_metrics(v, 0.5);
  EXPECT_EQ(m.attacks.flagged, 652);
  EXPECT_EQ(m.attacks.total, 1111);
  EXPECT_NEAR(m.block_rate(), 0.587, 0.0005);
  EXPECT_NEAR(m.fpr(), 0.365, 0.0005);
  EXPECT_EQ(m.excluded, 1);
  EXPECT_EQ(defense_metrics(v, 1.01).attacks.flagged, 0);
  EXPECT_EQ(defense_metrics(v, 0.9).attacks.flagged, 652);
  EXPECT_THROW(defense_sweep({v.front()}, {0.5}), std::domain_error);
  EXPECT_TRUE(defense_sweep(v, {}).empty());
  EXPECT_EQ(defense_json(m)["attacks"]["flagged"], 652);
}

TEST(Defense, ReplyParsing) {
  EXPECT_EQ(parse_defense_reply(json::parse(R"({"modified": true, "confidence": 1.7})")), (std::pair{true, 1.0}));
  EXPECT_EQ(parse_defense_reply(json::parse(R"({"authentic": true, "confidence": 0.2})")), (std::pair{false, 0.2}));
  EXPECT_FALSE(parse_defense_reply(json::parse(R"({"modified": true})")));
  EXPECT_FALSE(parse_defense_reply(json::parse(R"({"modified": "yes", "confidence": 1})")));
}

TEST(Defense, MissingImageIsExcluded) {
  FixtureChat classifier([](const ChatVisionRequest&) { return std::string(R"({"modified":true,"confidence":1})"); });
  DefenseItem item;
  item.id = "gone";
  item.is_attack = true;
  item.image_path = "/nonexistent/x.png";
  const auto v = classify_images(classifier, {item}, prompts());
  ASSERT_EQ(v.size(), 1u);
  EXPECT_TRUE(v[0].excluded);
  EXPECT_EQ(classifier.calls(), 0);
}
