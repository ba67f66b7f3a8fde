#pragma once

// Run configuration: pipeline parameters, provider endpoints per role, agent
// definitions, and the prompt/lexicon assets directory.
//
// File format (JSON):
//   {
//     "seed": 42, "budget_per_screenshot": 14, "ocr_confidence_threshold": 0.5,
//     "assets_dir": "assets",
//     "providers": { "LOCALIZER_VLM": {"endpoint_url": ..., "api_key": ...,
//                    "model_name": ..., "timeout": 60, "max_retries": 2,
//                    "temperature": 0.0, "max_new_tokens": 1024,
//                    "max_in_flight": 4}, ... },
//     "agents": { "gpt-4o-mini": {<provider fields>, "system_prompt": "..."} },
//     "defense_thresholds": [0.5, 0.95]
//   }
// Environment overrides: <ROLE>_ENDPOINT_URL and <ROLE>_API_KEY for every
// role; agents use AGENT_<NAME>_ENDPOINT_URL / AGENT_<NAME>_API_KEY with the
// name upper-cased and non-alphanumerics mapped to '_'.

#include <array>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "injectbench/digest.hpp"
#include "injectbench/providers.hpp"

#ifndef INJECTBENCH_DEFAULT_ASSETS_DIR
#define INJECTBENCH_DEFAULT_ASSETS_DIR "assets"
#endif

namespace injectbench {

namespace role {
inline constexpr std::string_view localizer_vlm = "LOCALIZER_VLM";
inline constexpr std::string_view bbox_moderator_vlm = "BBOX_MODERATOR_VLM";
inline constexpr std::string_view goal_vlm = "GOAL_VLM";
inline constexpr std::string_view payload_llm = "PAYLOAD_LLM";
inline constexpr std::string_view pq_reviewer_llm = "PQ_REVIEWER_LLM";
inline constexpr std::string_view render_model = "RENDER_MODEL";
inline constexpr std::string_view curator_vlm = "CURATOR_VLM";
inline constexpr std::string_view embedding = "EMBEDDING";
inline constexpr std::string_view ocr = "OCR";
inline constexpr std::string_view defense_classifier = "DEFENSE_CLASSIFIER";
inline constexpr std::string_view judge_llm = "JUDGE_LLM";

inline constexpr std::array<std::string_view, 11> all = {
    localizer_vlm, bbox_moderator_vlm, goal_vlm,  payload_llm,        pq_reviewer_llm, render_model,
    curator_vlm,   embedding,          ocr,       defense_classifier, judge_llm};

// Roles whose configuration shapes the dataset; these enter the fingerprint.
inline constexpr std::array<std::string_view, 8> pipeline = {
    localizer_vlm, bbox_moderator_vlm, goal_vlm, payload_llm, pq_reviewer_llm, render_model, curator_vlm, ocr};
}  // namespace role

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AgentConfig {
  std::string name;
  ProviderConfig provider;
  std::string system_prompt;  // empty: use the shared agent prompt asset
};

inline std::string env_key_for_agent(const std::string& name) {
  std::string out = "AGENT_";
  for (char c : name) out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? static_cast<char>(std::toupper(static_cast<unsigned char>(c))) : '_');
  return out;
}

struct RunConfig {
  std::uint64_t seed = 42;
  int budget_per_screenshot = 14;
  double ocr_confidence_threshold = 0.5;
  int localizer_max_iterations = 3;
  int goal_max_attempts = 3;
  int payload_max_attempts = 3;
  int render_max_attempts = 3;
  int curator_max_retries = 3;
  std::size_t goal_entropy_k = 8;
  std::vector<double> defense_thresholds{0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95};
  std::filesystem::path assets_dir = INJECTBENCH_DEFAULT_ASSETS_DIR;
  std::map<std::string, ProviderConfig> providers;
  std::map<std::string, AgentConfig> agents;

  static RunConfig from_json(const json& j, const std::filesystem::path& base_dir = {}) {
    RunConfig c;
    try {
      c.seed = j.value("seed", c.seed);
      c.budget_per_screenshot = j.value("budget_per_screenshot", c.budget_per_screenshot);
      c.ocr_confidence_threshold = j.value("ocr_confidence_threshold", c.ocr_confidence_threshold);
      c.localizer_max_iterations = j.value("localizer_max_iterations", c.localizer_max_iterations);
      c.goal_max_attempts = j.value("goal_max_attempts", c.goal_max_attempts);
      c.payload_max_attempts = j.value("payload_max_attempts", c.payload_max_attempts);
      c.render_max_attempts = j.value("render_max_attempts", c.render_max_attempts);
      c.curator_max_retries = j.value("curator_max_retries", c.curator_max_retries);
      c.goal_entropy_k = j.value("goal_entropy_k", c.goal_entropy_k);
      c.defense_thresholds = j.value("defense_thresholds", c.defense_thresholds);
      if (j.contains("assets_dir")) {
        std::filesystem::path p = j["assets_dir"].get<std::string>();
        c.assets_dir = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
      }
      if (j.contains("providers")) {
        for (const auto& [name, pj] : j["providers"].items()) {
          if (std::find(role::all.begin(), role::all.end(), name) == role::all.end())
            throw ConfigError("unknown provider role '" + name + "'");
          c.providers[name] = pj.get<ProviderConfig>();
        }
      }
      if (j.contains("agents")) {
        for (const auto& [name, aj] : j["agents"].items()) {
          AgentConfig a;
          a.name = name;
          a.provider = aj.get<ProviderConfig>();
          a.system_prompt = aj.value("system_prompt", "");
          c.agents[name] = std::move(a);
        }
      }
    } catch (const json::exception& e) {
      throw ConfigError(std::string("malformed config: ") + e.what());
    }
    return c;
  }

  static RunConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ConfigError("config is not a JSON object: " + path.string());
    return from_json(j, path.parent_path());
  }

  using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

  static std::optional<std::string> process_env(const std::string& key) {
    if (const char* v = std::getenv(key.c_str()); v && *v) return std::string(v);
    return std::nullopt;
  }

  void apply_env_overrides(const EnvLookup& env = process_env) {
    for (auto r : role::all) {
      const std::string name(r);
      auto url = env(name + "_ENDPOINT_URL");
      auto key = env(name + "_API_KEY");
      if (!url && !key) continue;
      auto& p = providers[name];
      if (url) p.endpoint_url = *url;
      if (key) p.api_key = *key;
    }
    for (auto& [name, agent] : agents) {
      const std::string prefix = env_key_for_agent(name);
      if (auto url = env(prefix + "_ENDPOINT_URL")) agent.provider.endpoint_url = *url;
      if (auto key = env(prefix + "_API_KEY")) agent.provider.api_key = *key;
    }
  }

  void validate() const {
    if (budget_per_screenshot < 0) throw ConfigError("budget_per_screenshot must be >= 0");
    if (!(ocr_confidence_threshold >= 0.0 && ocr_confidence_threshold <= 1.0))
      throw ConfigError("ocr_confidence_threshold must lie in [0, 1]");
    for (int v : {localizer_max_iterations, goal_max_attempts, payload_max_attempts, render_max_attempts})
      if (v < 1 || v > 3) throw ConfigError("iteration/attempt caps must lie in [1, 3]");
    if (curator_max_retries < 0 || curator_max_retries > 3) throw ConfigError("curator_max_retries must lie in [0, 3]");
    if (goal_entropy_k == 0) throw ConfigError("goal_entropy_k must be positive");
    for (double t : defense_thresholds)
      if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("defense thresholds must lie in [0, 1]");
    try {
      for (const auto& [name, p] : providers) p.validate(name);
      for (const auto& [name, a] : agents) a.provider.validate("agent " + name);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }

  /// Live mode needs an endpoint for every role a stage touches.
  void require_endpoints(std::initializer_list<std::string_view> roles) const {
    for (auto r : roles) {
      auto it = providers.find(std::string(r));
      if (it == providers.end() || it->second.endpoint_url.empty())
        throw ConfigError("no endpoint configured for " + std::string(r));
    }
  }

  /// Digest of everything that shapes the dataset (seed, caps, pipeline
  /// models and decoding settings, assets). Endpoints and keys are excluded.
  std::string fingerprint(const std::string& assets_digest = "") const {
    json j{{"seed", seed},
           {"budget_per_screenshot", budget_per_screenshot},
           {"ocr_confidence_threshold", ocr_confidence_threshold},
           {"localizer_max_iterations", localizer_max_iterations},
           {"goal_max_attempts", goal_max_attempts},
           {"payload_max_attempts", payload_max_attempts},
           {"render_max_attempts", render_max_attempts},
           {"curator_max_retries", curator_max_retries},
           {"assets", assets_digest}};
    json models = json::object();
    for (auto r : role::pipeline) {
      auto it = providers.find(std::string(r));
      if (it == providers.end()) continue;
      models[std::string(r)] = {{"model_name", it->second.model_name},
                                {"temperature", it->second.temperature},
                                {"max_new_tokens", it->second.max_new_tokens}};
    }
    j["models"] = models;
    return sha256_hex(j.dump()).substr(0, 16);
  }
};

}  // namespace injectbench
