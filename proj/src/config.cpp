#include "spontts/config.hpp"

#include <json.hpp>

#include "spontts/features.hpp"
#include "spontts/util.hpp"

namespace spontts::config {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json to_json(const RunConfig& c) {
  return json{
      {"profile", c.profile},
      {"seed", c.seed},
      {"features",
       {{"sample_rate", features::kSampleRate},
        {"mel_bins", features::kMelBins},
        {"win", features::kWin},
        {"hop", features::kHop}}},
      {"detector",
       {{"threshold_fp", c.threshold_fp},
        {"threshold_pr", c.threshold_pr},
        {"input_type", detector::to_string(c.detector_base.input_type)},
        {"epochs", c.detector_base.epochs},
        {"learning_rate", c.detector_base.learning_rate},
        {"cnn_channels", c.detector_base.cnn_channels},
        {"cnn_kernel", c.detector_base.cnn_kernel},
        {"cnn_strides", c.detector_base.cnn_strides},
        {"hidden", c.detector_base.hidden},
        {"char_embed_dim", c.detector_base.char_embed_dim}}},
      {"model", json::parse(c.model.canonical_json())},
      {"train",
       {{"pretrain_steps", c.pretrain_steps},
        {"finetune_steps", c.finetune_steps},
        {"warmup_steps", c.warmup_steps},
        {"beta1", c.adam_beta1},
        {"beta2", c.adam_beta2},
        {"eps", c.adam_eps},
        {"lr_scale", c.lr_scale},
        {"log_every", c.log_every},
        {"mix_high_quality", c.mix_high_quality}}},
      {"embed",
       {{"provider", c.embed_provider},
        {"host", c.embed_http.host},
        {"port", c.embed_http.port},
        {"path", c.embed_http.path},
        {"timeout_s", c.embed_http.timeout_s},
        {"retries", c.embed_http.retries},
        {"cache", c.embed_cache}}}};
}

// Overlay: keys absent from `j` keep their current value.
void overlay(RunConfig& c, const json& j) {
  c.profile = j.value("profile", c.profile);
  c.seed = j.value("seed", c.seed);
  if (j.contains("features")) {
    const json& f = j["features"];
    // sampled-feature geometry is compiled in; reject mismatching configs
    if (f.value("sample_rate", features::kSampleRate) != features::kSampleRate ||
        f.value("mel_bins", features::kMelBins) != features::kMelBins ||
        f.value("win", features::kWin) != features::kWin ||
        f.value("hop", features::kHop) != features::kHop)
      throw ValidationError(
          "feature geometry in config differs from the built-in values");
  }
  if (j.contains("detector")) {
    const json& d = j["detector"];
    c.threshold_fp = d.value("threshold_fp", c.threshold_fp);
    c.threshold_pr = d.value("threshold_pr", c.threshold_pr);
    if (d.contains("input_type"))
      c.detector_base.input_type =
          detector::input_type_from_string(d["input_type"]);
    c.detector_base.epochs = d.value("epochs", c.detector_base.epochs);
    c.detector_base.learning_rate =
        d.value("learning_rate", c.detector_base.learning_rate);
    c.detector_base.cnn_channels =
        d.value("cnn_channels", c.detector_base.cnn_channels);
    c.detector_base.cnn_kernel =
        d.value("cnn_kernel", c.detector_base.cnn_kernel);
    if (d.contains("cnn_strides"))
      c.detector_base.cnn_strides = d["cnn_strides"].get<std::vector<int>>();
    c.detector_base.hidden = d.value("hidden", c.detector_base.hidden);
    c.detector_base.char_embed_dim =
        d.value("char_embed_dim", c.detector_base.char_embed_dim);
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    c.model.dim = m.value("dim", c.model.dim);
    c.model.heads = m.value("heads", c.model.heads);
    c.model.encoder_blocks = m.value("encoder_blocks", c.model.encoder_blocks);
    c.model.decoder_blocks = m.value("decoder_blocks", c.model.decoder_blocks);
    c.model.ff_dim = m.value("ff_dim", c.model.ff_dim);
    c.model.vp_filter = m.value("vp_filter", c.model.vp_filter);
    c.model.vp_kernel = m.value("vp_kernel", c.model.vp_kernel);
    c.model.history_hidden = m.value("history_hidden", c.model.history_hidden);
    c.model.history_len = m.value("history_len", c.model.history_len);
    c.model.label_cross_entropy =
        m.value("label_cross_entropy", c.model.label_cross_entropy);
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    c.pretrain_steps = t.value("pretrain_steps", c.pretrain_steps);
    c.finetune_steps = t.value("finetune_steps", c.finetune_steps);
    c.warmup_steps = t.value("warmup_steps", c.warmup_steps);
    c.adam_beta1 = t.value("beta1", c.adam_beta1);
    c.adam_beta2 = t.value("beta2", c.adam_beta2);
    c.adam_eps = t.value("eps", c.adam_eps);
    c.lr_scale = t.value("lr_scale", c.lr_scale);
    c.log_every = t.value("log_every", c.log_every);
    c.mix_high_quality = t.value("mix_high_quality", c.mix_high_quality);
  }
  if (j.contains("embed")) {
    const json& e = j["embed"];
    c.embed_provider = e.value("provider", c.embed_provider);
    c.embed_http.host = e.value("host", c.embed_http.host);
    c.embed_http.port = e.value("port", c.embed_http.port);
    c.embed_http.path = e.value("path", c.embed_http.path);
    c.embed_http.timeout_s = e.value("timeout_s", c.embed_http.timeout_s);
    c.embed_http.retries = e.value("retries", c.embed_http.retries);
    c.embed_cache = e.value("cache", c.embed_cache);
  }
}

}  // namespace

std::string RunConfig::canonical_json() const {
  // nlohmann objects keep keys sorted, so dump() is canonical
  return to_json(*this).dump();
}

std::string RunConfig::config_hash_hex() const {
  return to_hex(fnv1a64(canonical_json()));
}

detector::DetectorConfig RunConfig::detector_for(detector::Behavior b) const {
  detector::DetectorConfig d = detector_base;
  d.behavior = b;
  d.threshold = (b == detector::Behavior::filled_pause) ? threshold_fp
                                                        : threshold_pr;
  return d;
}

pipeline::TrainSettings RunConfig::train_settings(long steps) const {
  pipeline::TrainSettings s;
  s.steps = steps;
  s.log_every = log_every;
  s.seed = seed;
  s.mix_high_quality = mix_high_quality;
  s.optimizer.beta1 = adam_beta1;
  s.optimizer.beta2 = adam_beta2;
  s.optimizer.eps = adam_eps;
  s.optimizer.warmup_steps = warmup_steps;
  s.optimizer.scale = lr_scale;
  s.optimizer.dim = model.dim;
  return s;
}

embedding::Service RunConfig::make_embedding_service(
    const fs::path& run_dir) const {
  std::shared_ptr<embedding::Provider> provider;
  if (embed_provider == "hash") {
    provider = std::make_shared<embedding::HashProvider>(seed);
  } else if (embed_provider == "http") {
    provider = std::make_shared<embedding::HttpProvider>(embed_http);
  } else {
    throw ValidationError("unknown embedding provider: " + embed_provider);
  }
  std::optional<fs::path> cache;
  if (embed_cache) cache = run_dir / "embed_cache";
  return embedding::Service(provider, cache);
}

void RunConfig::set_key(const std::string& dotted_key, const std::string& value) {
  auto dot = dotted_key.find('.');
  json leaf;
  try {
    leaf = json::parse(value);
  } catch (const json::parse_error&) {
    leaf = value;  // unquoted strings pass through
  }
  json patch;
  if (dot == std::string::npos) {
    patch[dotted_key] = leaf;
  } else {
    patch[dotted_key.substr(0, dot)][dotted_key.substr(dot + 1)] = leaf;
  }
  try {
    overlay(*this, patch);
  } catch (const json::exception& e) {
    throw ValidationError("bad value for " + dotted_key + ": " + e.what());
  }
}

void RunConfig::validate() const {
  if (profile != "paper" && profile != "desk")
    throw ValidationError("unknown profile: " + profile);
  if (threshold_fp < 0 || threshold_fp > 1 || threshold_pr < 0 ||
      threshold_pr > 1)
    throw ValidationError("detection thresholds must lie in [0, 1]");
  if (pretrain_steps < 1 || finetune_steps < 1)
    throw ValidationError("training step counts must be positive");
  detector_base.validate();
  pipeline::TrainSettings probe = train_settings(1);
  probe.optimizer.validate();
  if (model.dim % model.heads != 0)
    throw ValidationError("model dim must be divisible by heads");
}

void apply_profile(RunConfig& cfg, const std::string& profile) {
  if (profile == "paper") {
    cfg.profile = "paper";
    return;  // built-in defaults are the paper-scale numbers
  }
  if (profile != "desk") throw ValidationError("unknown profile: " + profile);
  cfg.profile = "desk";
  cfg.detector_base.epochs = 10;
  cfg.detector_base.cnn_channels = 16;
  cfg.detector_base.hidden = 24;
  cfg.detector_base.char_embed_dim = 16;
  cfg.model.dim = 32;
  cfg.model.heads = 2;
  cfg.model.encoder_blocks = 1;
  cfg.model.decoder_blocks = 1;
  cfg.model.ff_dim = 64;
  cfg.model.vp_filter = 16;
  cfg.model.history_hidden = 16;
  cfg.pretrain_steps = 400;
  cfg.finetune_steps = 300;
  cfg.warmup_steps = 100;
  cfg.log_every = 50;
}

RunConfig resolve(const std::optional<fs::path>& file,
                  const std::string& profile_flag,
                  const std::optional<std::uint64_t>& seed_flag,
                  const std::vector<std::string>& set_flags) {
  json file_json;
  if (file) file_json = json::parse(read_text_file(*file));

  std::string profile = "paper";
  if (file_json.contains("profile")) profile = file_json["profile"];
  if (!profile_flag.empty()) profile = profile_flag;

  RunConfig cfg;
  apply_profile(cfg, profile);
  if (!file_json.is_null()) {
    try {
      overlay(cfg, file_json);
    } catch (const json::exception& e) {
      throw ValidationError(std::string("bad config file: ") + e.what());
    }
  }
  cfg.profile = profile;
  for (const auto& kv : set_flags) {
    auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ValidationError("--set expects key=value, got: " + kv);
    cfg.set_key(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (seed_flag) cfg.seed = *seed_flag;
  cfg.validate();
  return cfg;
}

}  // namespace spontts::config
