// spontts: corpus prep, four-stage training, synthesis and evaluation.
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "spontts/config.hpp"
#include "spontts/corpus.hpp"
#include "spontts/detector.hpp"
#include "spontts/features.hpp"
#include "spontts/pipeline.hpp"
#include "spontts/synthetic.hpp"
#include "spontts/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace spontts;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;
constexpr int kReportSchema = 1;

struct Ctx {
  config::RunConfig cfg;
  fs::path out;
};

void write_report(const Ctx& ctx, const std::string& command, json body) {
  body["schema_version"] = kReportSchema;
  body["command"] = command;
  body["config_hash"] = ctx.cfg.config_hash_hex();
  body["seed"] = ctx.cfg.seed;
  fs::create_directories(ctx.out / "reports");
  write_file_atomic(ctx.out / "reports" / (command + ".json"),
                    body.dump(2) + "\n");
}

fs::path state_path(const Ctx& ctx) { return ctx.out / "state.json"; }

fs::path resolve_manifest(const Ctx& ctx, const std::string& flag) {
  if (!flag.empty()) return flag;
  auto st = pipeline::PipelineState::load(state_path(ctx));
  auto it = st.artifacts.find("manifest");
  if (it == st.artifacts.end())
    throw ValidationError(
        "no manifest known for this run directory; pass --manifest or run "
        "prepare first");
  return it->second.path;
}

void require_stage(const pipeline::PipelineState& st, pipeline::Stage need,
                   const std::string& command, const std::string& missing) {
  if (pipeline::stage_rank(st.stage) < pipeline::stage_rank(need))
    throw ValidationError(command + " requires stage '" +
                          pipeline::to_string(need) + "' (current: '" +
                          pipeline::to_string(st.stage) +
                          "'); missing artifact: " + missing);
}

// --- prepare ---------------------------------------------------------------

int cmd_prepare(Ctx& ctx, const fs::path& manifest) {
  auto c = corpus::load_corpus(manifest);
  fs::path feat_dir = ctx.out / "features";
  fs::create_directories(feat_dir);
  const fs::path base = manifest.parent_path();

  json utt_report = json::array();
  long ok = 0, failed = 0, cache_hits = 0, skipped = 0;
  for (const auto& conv : c.conversations) {
    for (const auto& u : conv.utterances) {
      json row{{"id", u.id}};
      try {
        if (!u.audio_ref) {
          row["status"] = "no_audio";
          skipped++;
        } else if (u.durations.empty()) {
          throw ValidationError("utterance has audio but no durations");
        } else {
          fs::path stem = feat_dir / detector::file_stem(u.id);
          fs::path mel_p = fs::path(stem.string() + ".mel");
          fs::path dur_p = fs::path(stem.string() + ".dur");
          fs::path pros_p = fs::path(stem.string() + ".pros");
          if (fs::exists(mel_p) && fs::exists(dur_p) && fs::exists(pros_p)) {
            row["status"] = "cached";
            cache_hits++;
          } else {
            Waveform w = read_wav(base / *u.audio_ref);
            if (w.sample_rate != features::kSampleRate)
              w = features::resample(w, features::kSampleRate);
            features::write_mel_cache(mel_p, features::extract_mel(w));
            features::write_durations(dur_p, u.durations);
            features::write_prosody(pros_p,
                                    features::extract_prosody(w, u.durations));
            row["status"] = "ok";
            ok++;
          }
        }
      } catch (const std::exception& e) {
        row["status"] = std::string("failed: ") + e.what();
        failed++;
      }
      utt_report.push_back(row);
    }
  }

  auto st = pipeline::PipelineState::load(state_path(ctx));
  st.config_hash = ctx.cfg.config_hash_hex();
  st.record("manifest", manifest);
  st.save(state_path(ctx));

  write_report(ctx, "prepare",
               json{{"manifest", manifest.string()},
                    {"utterances", utt_report},
                    {"counts",
                     {{"ok", ok},
                      {"failed", failed},
                      {"cached", cache_hits},
                      {"no_audio", skipped}}}});
  if (failed > 0) {
    std::cerr << "prepare: " << failed << " utterance(s) failed\n";
    return kExitRuntime;
  }
  return 0;
}

// --- stage commands --------------------------------------------------------

json metrics_json(const detector::DetectorMetrics& m) {
  return json{{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1},
              {"tp", m.tp},               {"fp", m.fp},         {"fn", m.fn}};
}

int cmd_train_detector(Ctx& ctx, const std::string& manifest_flag,
                       bool ablation) {
  pipeline::StageLock lock(ctx.out);
  auto st = pipeline::PipelineState::load(state_path(ctx));
  auto c = corpus::load_corpus(resolve_manifest(ctx, manifest_flag));

  auto res = pipeline::stage_train_detectors(
      c, ctx.out, ctx.cfg.detector_for(detector::Behavior::filled_pause),
      ctx.cfg.detector_for(detector::Behavior::prolongation), ctx.cfg.seed,
      ctx.out / "detectors");
  json body{{"fp", metrics_json(res.fp_metrics)},
            {"pr", metrics_json(res.pr_metrics)},
            {"fp_losses", res.fp_losses},
            {"pr_losses", res.pr_losses}};
  st.record("fp_detector", res.fp_checkpoint);
  st.record("pr_detector", res.pr_checkpoint);

  if (ablation) {
    auto fp_cfg = ctx.cfg.detector_for(detector::Behavior::filled_pause);
    auto pr_cfg = ctx.cfg.detector_for(detector::Behavior::prolongation);
    fp_cfg.input_type = detector::InputType::speech;
    pr_cfg.input_type = detector::InputType::speech;
    auto res_sp = pipeline::stage_train_detectors(
        c, ctx.out, fp_cfg, pr_cfg, ctx.cfg.seed, ctx.out / "detectors_speech");
    body["fp_speech"] = metrics_json(res_sp.fp_metrics);
    body["pr_speech"] = metrics_json(res_sp.pr_metrics);
    st.record("fp_detector_speech", res_sp.fp_checkpoint);
    st.record("pr_detector_speech", res_sp.pr_checkpoint);
  }

  if (pipeline::stage_rank(st.stage) <
      pipeline::stage_rank(pipeline::Stage::detectors_trained))
    st.stage = pipeline::Stage::detectors_trained;
  st.seeds["detector"] = ctx.cfg.seed;
  st.config_hash = ctx.cfg.config_hash_hex();
  st.save(state_path(ctx));
  write_report(ctx, "train-detector", body);
  return 0;
}

int cmd_pseudo_label(Ctx& ctx, const std::string& manifest_flag, int threads) {
  pipeline::StageLock lock(ctx.out);
  auto st = pipeline::PipelineState::load(state_path(ctx));
  require_stage(st, pipeline::Stage::detectors_trained, "pseudo-label",
                "detectors/fp.detector and detectors/pr.detector");
  auto c = corpus::load_corpus(resolve_manifest(ctx, manifest_flag));
  auto stats = pipeline::stage_extract_pseudo_labels(
      c, ctx.out, ctx.out / "detectors" / "fp.detector",
      ctx.out / "detectors" / "pr.detector", ctx.cfg.threshold_fp,
      ctx.cfg.threshold_pr, ctx.out, threads);
  st.stage = pipeline::Stage::pseudo_labeled;
  st.record("pseudo_manifest", ctx.out / "pseudo_manifest.jsonl");
  st.save(state_path(ctx));
  write_report(ctx, "pseudo-label",
               json{{"utterances", stats.utterances},
                    {"chars", stats.chars},
                    {"fp_positive", stats.fp_positive},
                    {"pr_positive", stats.pr_positive},
                    {"threshold_fp", ctx.cfg.threshold_fp},
                    {"threshold_pr", ctx.cfg.threshold_pr}});
  return 0;
}

json loss_log_json(const std::vector<pipeline::TrainLogEntry>& log) {
  json rows = json::array();
  for (const auto& e : log)
    rows.push_back(json{{"step", e.step},
                        {"lr", e.lr},
                        {"mel", e.loss.mel},
                        {"duration", e.loss.duration},
                        {"pitch", e.loss.pitch},
                        {"energy", e.loss.energy},
                        {"label", e.loss.label},
                        {"total", e.loss.total()}});
  return rows;
}

int cmd_pretrain(Ctx& ctx, long steps_flag) {
  pipeline::StageLock lock(ctx.out);
  auto st = pipeline::PipelineState::load(state_path(ctx));
  require_stage(st, pipeline::Stage::pseudo_labeled, "pretrain",
                "pseudo_manifest.jsonl");
  auto c = corpus::load_corpus(ctx.out / "pseudo_manifest.jsonl");
  auto embeds = ctx.cfg.make_embedding_service(ctx.out);
  long steps = steps_flag > 0 ? steps_flag : ctx.cfg.pretrain_steps;
  auto res = pipeline::stage_pretrain(c, ctx.out, ctx.cfg.model,
                                      ctx.cfg.train_settings(steps), embeds,
                                      ctx.out / "pretrained.ckpt");
  st.stage = pipeline::Stage::pretrained;
  st.record("pretrained", ctx.out / "pretrained.ckpt");
  st.seeds["pretrain"] = ctx.cfg.seed;
  st.save(state_path(ctx));
  write_report(ctx, "pretrain",
               json{{"steps", steps}, {"log", loss_log_json(res.log)}});
  return 0;
}

int cmd_finetune(Ctx& ctx, long steps_flag) {
  pipeline::StageLock lock(ctx.out);
  auto st = pipeline::PipelineState::load(state_path(ctx));
  require_stage(st, pipeline::Stage::pretrained, "finetune",
                "pretrained.ckpt");
  auto c = corpus::load_corpus(ctx.out / "pseudo_manifest.jsonl");
  auto embeds = ctx.cfg.make_embedding_service(ctx.out);
  long steps = steps_flag > 0 ? steps_flag : ctx.cfg.finetune_steps;
  const std::uint64_t reset_seed = ctx.cfg.seed ^ 0xa0761d6478bd642fULL;
  auto res = pipeline::stage_finetune(ctx.out / "pretrained.ckpt", c, ctx.out,
                                      ctx.cfg.train_settings(steps), reset_seed,
                                      embeds, ctx.out / "finetuned.ckpt");
  st.stage = pipeline::Stage::finetuned;
  st.record("finetuned", ctx.out / "finetuned.ckpt");
  st.seeds["decoder_reset"] = reset_seed;
  st.save(state_path(ctx));
  write_report(ctx, "finetune",
               json{{"steps", steps},
                    {"decoder_lr_multiplier", 10.0},
                    {"log", loss_log_json(res.log)}});
  return 0;
}

// --- synth -----------------------------------------------------------------

labels::CharLabelSeq parse_labels_csv(const std::string& s) {
  labels::CharLabelSeq out;
  std::string cur;
  for (char ch : s + ",") {
    if (ch == ',') {
      if (cur.empty()) throw ValidationError("--labels: empty entry");
      out.push_back(std::stoi(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  for (int v : out)
    if (v < 0 || v >= labels::kNumClasses)
      throw ValidationError("--labels: class out of range: " +
                            std::to_string(v));
  return out;
}

int cmd_synth(Ctx& ctx, const std::string& manifest_flag,
              const std::string& checkpoint_flag, const std::string& utt_id,
              const std::string& labels_csv, const std::string& wav_out,
              const std::string& vocoder) {
  fs::path ckpt = checkpoint_flag.empty() ? ctx.out / "finetuned.ckpt"
                                          : fs::path(checkpoint_flag);
  auto model = acoustic::load_checkpoint(ckpt);
  auto c = corpus::load_corpus(resolve_manifest(ctx, manifest_flag));

  const corpus::Utterance* u = c.find(utt_id);
  if (!u) throw ValidationError("unknown utterance id: " + utt_id);
  const corpus::Conversation* conv =
      c.find_conversation(utt_id.substr(0, utt_id.find(':')));
  std::size_t index = 0;
  while (conv->utterances[index].id != utt_id) index++;

  auto embeds = ctx.cfg.make_embedding_service(ctx.out);
  const int H = model->config().history_len;
  auto window = corpus::history_window(*conv, index, H);
  acoustic::ForwardInput in;
  for (const auto& p : u->phonemes)
    in.phoneme_ids.push_back(model->vocab().id_of(p));
  in.phoneme_mask.assign(u->phonemes.size(), true);
  in.history = Eigen::MatrixXd(H + 1, embedding::kDim);
  for (int h = 0; h <= H; ++h)
    in.history.row(h) = embeds.embed(window[h]).transpose();
  std::tie(in.conv_ids, in.conv_mask) =
      acoustic::build_conversation_sequence(window, model->vocab());

  std::optional<labels::PhonemeLabelSeq> explicit_phoneme_labels;
  std::optional<labels::CharLabelSeq> explicit_char_labels;
  if (!labels_csv.empty()) {
    auto char_labels = parse_labels_csv(labels_csv);
    if (char_labels.size() != u->chars.size())
      throw ValidationError(
          "--labels has " + std::to_string(char_labels.size()) +
          " entries but the utterance has " + std::to_string(u->chars.size()) +
          " characters");
    explicit_char_labels = char_labels;
    explicit_phoneme_labels =
        labels::expand_char_to_phoneme(char_labels, u->grouping);
  }

  auto res = model->synthesize(in, explicit_phoneme_labels);

  // character view of the applied labels: class on the group's last phoneme
  labels::CharLabelSeq char_view;
  std::size_t pos = 0;
  for (int g : u->grouping) {
    pos += g;
    char_view.push_back(res.applied_labels[pos - 1]);
  }

  fs::create_directories(ctx.out / "synth");
  std::string stem = detector::file_stem(utt_id);
  fs::path mel_p = ctx.out / "synth" / (stem + ".mel");
  features::MelSpectrogram mel;
  mel.frames = res.mel;
  features::write_mel_cache(mel_p, mel);

  json side{{"utt_id", utt_id},
            {"source", res.labels_predicted ? "predicted" : "explicit"},
            {"applied_labels", explicit_char_labels ? json(*explicit_char_labels)
                                                    : json(char_view)},
            {"phoneme_labels", res.applied_labels},
            {"durations", res.durations},
            {"frames", res.mel.rows()},
            {"checkpoint_hash", pipeline::file_hash_hex(ckpt)},
            {"config_hash", ctx.cfg.config_hash_hex()}};
  write_file_atomic(ctx.out / "synth" / (stem + ".json"), side.dump(2) + "\n");

  if (!wav_out.empty()) {
    if (!vocoder.empty()) {
      std::string cmd = vocoder + " " + mel_p.string() + " " + wav_out;
      if (std::system(cmd.c_str()) != 0)
        throw RuntimeFailure("vocoder command failed: " + cmd);
    } else {
      write_wav(wav_out, features::griffin_lim(mel));
    }
  }
  std::cout << "wrote " << mel_p.string() << "\n";
  return 0;
}

// --- evaluate --------------------------------------------------------------

int cmd_evaluate(Ctx& ctx, const std::string& manifest_flag,
                 std::vector<std::string> checkpoints) {
  if (checkpoints.empty()) {
    for (const char* dir : {"detectors", "detectors_speech"}) {
      fs::path d = ctx.out / dir;
      if (!fs::exists(d)) continue;
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(d))
        if (e.path().extension() == ".detector") found.push_back(e.path());
      std::sort(found.begin(), found.end());
      for (const auto& p : found) checkpoints.push_back(p.string());
    }
  }
  if (checkpoints.empty())
    throw ValidationError("no detector checkpoints found; train them first");
  auto c = corpus::load_corpus(resolve_manifest(ctx, manifest_flag));
  json rows = json::array();
  for (const auto& path : checkpoints) {
    auto m = detector::load_detector(path);
    auto metrics =
        pipeline::evaluate_on_split(*m, c, ctx.out, corpus::Split::test);
    rows.push_back(json{{"input_type", detector::to_string(m->config().input_type)},
                        {"behavior", detector::to_string(m->config().behavior)},
                        {"precision", metrics.precision},
                        {"recall", metrics.recall},
                        {"f1", metrics.f1},
                        {"checkpoint", path}});
  }
  write_report(ctx, "evaluate", json{{"rows", rows}});
  std::cout << "input_type  behavior  P  R  F1\n";
  for (const auto& r : rows)
    std::cout << r["input_type"].get<std::string>() << "  "
              << r["behavior"].get<std::string>() << "  "
              << r["precision"].get<double>() << "  "
              << r["recall"].get<double>() << "  " << r["f1"].get<double>()
              << "\n";
  return 0;
}

// --- corpus generation and demo --------------------------------------------

int cmd_gen_corpus(Ctx& ctx, const fs::path& dir, bool with_unlabeled) {
  synthetic::GeneratorConfig hq;
  hq.conv_prefix = "hq";
  auto merged = synthetic::generate_synthetic_corpus(ctx.cfg.seed, hq, dir);
  if (with_unlabeled) {
    synthetic::GeneratorConfig lq = hq;
    lq.conv_prefix = "lq";
    lq.emit_labels = false;
    lq.test_fraction = 0.0;
    auto low = synthetic::generate_synthetic_corpus(ctx.cfg.seed + 1, lq, dir);
    for (auto& conv : low.conversations)
      merged.conversations.push_back(std::move(conv));
    merged.split.insert(low.split.begin(), low.split.end());
  }
  corpus::save_corpus(merged, dir / "manifest.jsonl");
  std::cout << "wrote " << (dir / "manifest.jsonl").string() << " ("
            << merged.utterance_count() << " utterances)\n";
  return 0;
}

int cmd_demo(Ctx& ctx) {
  // a small two-part corpus: labeled (hq*) + unlabeled (lq*) conversations
  fs::path corpus_dir = ctx.out / "corpus";
  synthetic::GeneratorConfig hq;
  hq.n_conversations = 12;
  hq.utts_per_conversation = 6;
  hq.conv_prefix = "hq";
  auto merged = synthetic::generate_synthetic_corpus(ctx.cfg.seed, hq, corpus_dir);
  synthetic::GeneratorConfig lq = hq;
  lq.n_conversations = 16;
  lq.conv_prefix = "lq";
  lq.emit_labels = false;
  lq.test_fraction = 0.0;
  auto low = synthetic::generate_synthetic_corpus(ctx.cfg.seed + 1, lq, corpus_dir);
  for (auto& conv : low.conversations)
    merged.conversations.push_back(std::move(conv));
  merged.split.insert(low.split.begin(), low.split.end());
  fs::path manifest = corpus_dir / "manifest.jsonl";
  corpus::save_corpus(merged, manifest);

  std::cout << "demo: prepare\n";
  if (int rc = cmd_prepare(ctx, manifest)) return rc;
  std::cout << "demo: stage 1 (train detectors)\n";
  if (int rc = cmd_train_detector(ctx, manifest.string(), true)) return rc;
  std::cout << "demo: stage 2 (pseudo labels)\n";
  if (int rc = cmd_pseudo_label(ctx, manifest.string(), 2)) return rc;
  std::cout << "demo: stage 3 (pre-train)\n";
  if (int rc = cmd_pretrain(ctx, 0)) return rc;
  std::cout << "demo: stage 4 (fine-tune)\n";
  if (int rc = cmd_finetune(ctx, 0)) return rc;
  std::cout << "demo: synthesis smoke\n";
  const std::string utt = merged.conversations.front().utterances.front().id;
  if (int rc = cmd_synth(ctx, manifest.string(), "", utt, "", "", "")) return rc;
  std::cout << "demo: evaluation\n";
  if (int rc = cmd_evaluate(ctx, manifest.string(), {})) return rc;

  auto st = pipeline::PipelineState::load(state_path(ctx));
  write_report(ctx, "demo",
               json{{"final_stage", pipeline::to_string(st.stage)},
                    {"finetuned", (ctx.out / "finetuned.ckpt").string()}});
  std::cout << "demo complete: " << (ctx.out / "finetuned.ckpt").string()
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semi-supervised spontaneous-style conversational TTS pipeline"};
  app.require_subcommand(1);

  std::string config_file, profile, out_dir = "run";
  std::optional<std::uint64_t> seed_flag;
  std::uint64_t seed_value = 0;
  bool seed_given = false;
  std::vector<std::string> sets;
  app.add_option("--config", config_file, "config file (JSON)");
  app.add_option("--profile", profile, "profile: paper or desk");
  auto* seed_opt = app.add_option("--seed", seed_value, "run seed");
  app.add_option("--out", out_dir, "run directory")->capture_default_str();
  app.add_option("--set", sets, "override a config key: section.key=value");

  std::string manifest, labels_csv, checkpoint, utt_id, wav_out, vocoder;
  std::vector<std::string> eval_ckpts;
  long steps = 0;
  int threads = 2;
  bool ablation = false, with_unlabeled = false;
  std::string gen_dir = "corpus";

  auto* prepare = app.add_subcommand("prepare", "extract and cache features");
  prepare->add_option("--manifest", manifest, "corpus manifest")->required();

  auto* traindet =
      app.add_subcommand("train-detector", "stage 1: train both detectors");
  traindet->add_option("--manifest", manifest, "corpus manifest");
  traindet->add_flag("--ablation", ablation,
                     "also train speech-only detectors");

  auto* pseudo =
      app.add_subcommand("pseudo-label", "stage 2: label unlabeled utterances");
  pseudo->add_option("--manifest", manifest, "corpus manifest");
  pseudo->add_option("--threads", threads, "scoring workers")
      ->capture_default_str();

  auto* pretrain = app.add_subcommand("pretrain", "stage 3: pre-train");
  pretrain->add_option("--steps", steps, "step override");

  auto* finetune = app.add_subcommand("finetune", "stage 4: fine-tune");
  finetune->add_option("--steps", steps, "step override");

  auto* synth = app.add_subcommand("synth", "synthesize one utterance");
  synth->add_option("--manifest", manifest, "corpus manifest");
  synth->add_option("--checkpoint", checkpoint, "model checkpoint");
  synth->add_option("--utterance", utt_id, "utterance id")->required();
  synth->add_option("--labels", labels_csv,
                    "explicit per-character labels, e.g. 0,1,0");
  synth->add_option("--wav", wav_out, "also write a waveform here");
  synth->add_option("--vocoder", vocoder,
                    "vocoder executable: <vocoder> <mel-file> <wav-out>");

  auto* evaluate = app.add_subcommand("evaluate", "detector metrics report");
  evaluate->add_option("--manifest", manifest, "corpus manifest");
  evaluate->add_option("--detector", eval_ckpts, "detector checkpoint(s)");

  auto* demo = app.add_subcommand("demo", "full four-stage run, desk scale");

  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic corpus");
  gen->add_option("--dir", gen_dir, "output directory")->capture_default_str();
  gen->add_flag("--with-unlabeled", with_unlabeled,
                "add unlabeled conversations");

  // global flags remain usable after the subcommand name
  for (CLI::App* sc : app.get_subcommands(nullptr)) sc->fallthrough();

  CLI11_PARSE(app, argc, argv);
  seed_given = seed_opt->count() > 0;
  if (seed_given) seed_flag = seed_value;

  try {
    Ctx ctx;
    if (app.got_subcommand(demo) && profile.empty() && config_file.empty())
      profile = "desk";
    std::optional<fs::path> cfg_path;
    if (!config_file.empty()) cfg_path = config_file;
    ctx.cfg = config::resolve(cfg_path, profile, seed_flag, sets);
    ctx.out = out_dir;
    fs::create_directories(ctx.out);

    if (app.got_subcommand(prepare)) return cmd_prepare(ctx, manifest);
    if (app.got_subcommand(traindet))
      return cmd_train_detector(ctx, manifest, ablation);
    if (app.got_subcommand(pseudo))
      return cmd_pseudo_label(ctx, manifest, threads);
    if (app.got_subcommand(pretrain)) return cmd_pretrain(ctx, steps);
    if (app.got_subcommand(finetune)) return cmd_finetune(ctx, steps);
    if (app.got_subcommand(synth))
      return cmd_synth(ctx, manifest, checkpoint, utt_id, labels_csv, wav_out,
                       vocoder);
    if (app.got_subcommand(evaluate))
      return cmd_evaluate(ctx, manifest, eval_ckpts);
    if (app.got_subcommand(demo)) return cmd_demo(ctx);
    if (app.got_subcommand(gen))
      return cmd_gen_corpus(ctx, gen_dir, with_unlabeled);
    throw ValidationError("no subcommand");
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return kExitRuntime;
  }
}
