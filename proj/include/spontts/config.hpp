#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "spontts/acoustic.hpp"
#include "spontts/detector.hpp"
#include "spontts/embedding.hpp"
#include "spontts/pipeline.hpp"

namespace spontts::config {

// Fully-resolved run configuration: built-in defaults, overlaid by the chosen
// profile, then a config file, then --set key=value flags, then --seed.
struct RunConfig {
  std::string profile = "paper";
  std::uint64_t seed = 1;

  double threshold_fp = 0.85;
  double threshold_pr = 0.95;
  detector::DetectorConfig detector_base;  // behavior filled in per run

  acoustic::ModelConfig model;

  long pretrain_steps = pipeline::kDefaultPretrainSteps;
  long finetune_steps = pipeline::kDefaultFinetuneSteps;
  long warmup_steps = 4000;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-9;
  double lr_scale = 1.0;
  long log_every = 100;
  bool mix_high_quality = false;

  std::string embed_provider = "hash";  // or "http"
  embedding::HttpProviderConfig embed_http;
  bool embed_cache = true;

  std::string canonical_json() const;  // deterministic, sorted keys
  std::string config_hash_hex() const;

  detector::DetectorConfig detector_for(detector::Behavior b) const;
  pipeline::TrainSettings train_settings(long steps) const;
  // Service honoring provider choice; cache lives under run_dir/embed_cache.
  embedding::Service make_embedding_service(
      const std::filesystem::path& run_dir) const;

  void set_key(const std::string& dotted_key, const std::string& value);
  void validate() const;
};

// Defaults -> profile -> file -> --set overrides -> --seed.
RunConfig resolve(const std::optional<std::filesystem::path>& file,
                  const std::string& profile_flag,
                  const std::optional<std::uint64_t>& seed_flag,
                  const std::vector<std::string>& set_flags);

void apply_profile(RunConfig& cfg, const std::string& profile);

}  // namespace spontts::config
