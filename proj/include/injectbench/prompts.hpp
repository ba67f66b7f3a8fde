#pragma once

// Prompt templates and lexicons loaded from the assets directory.
//
//   assets/prompts/<name>.txt     templates with {{slot}} placeholders
//   assets/lexicon.json           goal-rule vocabularies
//   assets/intent_templates.json  fixed payloads used by the minus_gen ablation

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "injectbench/core.hpp"
#include "injectbench/digest.hpp"

namespace injectbench {

/// Replaces every {{slot}} in `tmpl`. An unfilled slot throws, so a template
/// edit that introduces a new placeholder fails loudly instead of leaking.
inline std::string render_template(const std::string& tmpl, const std::map<std::string, std::string>& slots) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t pos = 0;
  while (true) {
    const auto open = tmpl.find("{{", pos);
    if (open == std::string::npos) {
      out.append(tmpl, pos, std::string::npos);
      break;
    }
    const auto close = tmpl.find("}}", open + 2);
    if (close == std::string::npos) throw std::invalid_argument("unterminated placeholder in template");
    out.append(tmpl, pos, open - pos);
    const std::string key = tmpl.substr(open + 2, close - open - 2);
    auto it = slots.find(key);
    if (it == slots.end()) throw std::invalid_argument("template slot '" + key + "' not provided");
    out += it->second;
    pos = close + 2;
  }
  return out;
}

/// Fixed payload for one intent; typing intents name the text to enter.
struct IntentTemplate {
  std::string text;
  std::optional<std::string> answer_token;
};

/// Vocabularies behind the goal rules.
struct GoalLexicon {
  std::vector<std::string> tap_verbs;
  std::vector<std::string> forbidden_verbs;
  // Nouns naming a concrete on-screen user-content region ("review", "post").
  std::vector<std::string> content_nouns;
  // Nouns naming visual media ("photo", "video").
  std::vector<std::string> media_nouns;
};

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class PromptSet {
 public:
  static constexpr const char* kNames[] = {
      "localizer_propose", "bbox_moderator", "goal_synthesis", "payload_generation", "pq_review",
      "render_text",       "render_media",   "curator",        "agent_system",       "agent_user",
      "defense_probe",     "llm_judge"};

  static PromptSet load(const std::filesystem::path& assets_dir) {
    PromptSet p;
    p.dir_ = assets_dir;
    for (const char* name : kNames) p.templates_[name] = read_text_file(assets_dir / "prompts" / (std::string(name) + ".txt"));
    const auto lex = nlohmann::json::parse(read_text_file(assets_dir / "lexicon.json"));
    p.lexicon_.tap_verbs = lex.at("tap_verbs").get<std::vector<std::string>>();
    p.lexicon_.forbidden_verbs = lex.at("forbidden_verbs").get<std::vector<std::string>>();
    p.lexicon_.content_nouns = lex.at("content_nouns").get<std::vector<std::string>>();
    p.lexicon_.media_nouns = lex.at("media_nouns").get<std::vector<std::string>>();
    const auto tj = nlohmann::json::parse(read_text_file(assets_dir / "intent_templates.json"));
    for (AttackIntent i : all_values<AttackIntent>()) {
      const std::string key(to_string(i));
      if (!tj.contains(key)) throw std::runtime_error("intent_templates.json lacks " + key);
      IntentTemplate t;
      if (tj[key].is_string()) {
        t.text = tj[key].get<std::string>();
      } else {
        t.text = tj[key].at("text").get<std::string>();
        if (tj[key].contains("answer_token")) t.answer_token = tj[key]["answer_token"].get<std::string>();
      }
      p.intent_templates_[i] = std::move(t);
    }
    return p;
  }

  const std::string& raw(const std::string& name) const {
    auto it = templates_.find(name);
    if (it == templates_.end()) throw std::out_of_range("no prompt template '" + name + "'");
    return it->second;
  }

  std::string render(const std::string& name, const std::map<std::string, std::string>& slots) const {
    return render_template(raw(name), slots);
  }

  const GoalLexicon& lexicon() const { return lexicon_; }

  const IntentTemplate& intent_template(AttackIntent intent) const { return intent_templates_.at(intent); }

  /// Digest over every template and lexicon; recorded in run fingerprints.
  std::string digest() const {
    std::string buf;
    for (const auto& [name, text] : templates_) buf += name + '\x1f' + text + '\x1e';
    for (const auto& [intent, t] : intent_templates_)
      buf += std::string(to_string(intent)) + '\x1f' + t.text + '\x1f' + t.answer_token.value_or("") + '\x1e';
    for (const auto* v : {&lexicon_.tap_verbs, &lexicon_.forbidden_verbs, &lexicon_.content_nouns, &lexicon_.media_nouns}) {
      for (const auto& w : *v) buf += w + '\x1f';
      buf += '\x1e';
    }
    return sha256_hex(buf).substr(0, 16);
  }

 private:
  std::filesystem::path dir_;
  std::map<std::string, std::string> templates_;
  std::map<AttackIntent, IntentTemplate> intent_templates_;
  GoalLexicon lexicon_;
};

}  // namespace injectbench
