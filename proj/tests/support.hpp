#pragma once

// Shared scaffolding for tests that drive the pipeline against the fixture world.

#include <injectbench/fixtures.hpp>
#include <injectbench/pipeline.hpp>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <string>
#include <unistd.h>

namespace injectbench::testing {

inline std::filesystem::path scratch_dir(const std::string& name) {
  static std::atomic<int> counter{0};
  const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
  auto p = std::filesystem::temp_directory_path() /
           ("injectbench_" + name + "_" + std::to_string(::getpid()) + "_" + std::to_string(stamp) + "_" +
            std::to_string(counter++));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// A fixture-backed pipeline environment rooted in a scratch directory.
class FixtureRun {
 public:
  explicit FixtureRun(const std::string& name, std::vector<AppId> apps = fixture::six_apps())
      : root_(scratch_dir(name)) {
    prompts_ = PromptSet::load(config_.assets_dir);
    providers_ = make_fixture_providers();
    fixture::write_corpus(screens(), apps, config_.seed);
    env_.config = config_;
    env_.prompts = &prompts_;
    env_.providers = &providers_;
    env_.dir = root_ / "manifest";
    env_.workers = 2;
    env_.fixtures = true;
  }
  FixtureRun(const FixtureRun&) = delete;
  FixtureRun& operator=(const FixtureRun&) = delete;
  ~FixtureRun() {
    std::error_code ec;
    std::filesystem::remove_all(root_, ec);
  }

  std::filesystem::path root() const { return root_; }
  std::filesystem::path screens() const { return root_ / "screens"; }
  PipelineEnv& env() { return env_; }
  ProviderSet& providers() { return providers_; }
  const PromptSet& prompts() const { return prompts_; }

  /// localize -> generate -> curate under `variant`; returns the saved manifest.
  DatasetManifest build(AblationVariant variant = AblationVariant::full) {
    auto m = open_manifest(env_, variant);
    run_localize(env_, m, screens());
    run_generate(env_, m);
    run_curate(env_, m);
    return DatasetManifest::load(env_.dir);
  }

 private:
  std::filesystem::path root_;
  RunConfig config_;
  PromptSet prompts_;
  ProviderSet providers_;
  PipelineEnv env_;
};

}  // namespace injectbench::testing
