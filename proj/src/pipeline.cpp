#include "spontts/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

#include <json.hpp>

namespace spontts::pipeline {

namespace fs = std::filesystem;
using nn::Mat;
using nlohmann::json;

std::string to_string(Stage s) {
  switch (s) {
    case Stage::none: return "none";
    case Stage::detectors_trained: return "detectors_trained";
    case Stage::pseudo_labeled: return "pseudo_labeled";
    case Stage::pretrained: return "pretrained";
    case Stage::finetuned: return "finetuned";
  }
  throw ValidationError("bad stage value");
}

Stage stage_from_string(const std::string& s) {
  for (Stage v : {Stage::none, Stage::detectors_trained, Stage::pseudo_labeled,
                  Stage::pretrained, Stage::finetuned})
    if (to_string(v) == s) return v;
  throw ValidationError("unknown stage: " + s);
}

int stage_rank(Stage s) { return static_cast<int>(s); }

std::string file_hash_hex(const fs::path& p) { return to_hex(hash_file(p)); }

void PipelineState::record(const std::string& name, const fs::path& p) {
  artifacts[name] = Artifact{p.string(), file_hash_hex(p)};
}

void PipelineState::save(const fs::path& p) const {
  json j{{"stage", to_string(stage)}, {"config_hash", config_hash}};
  json arts = json::object();
  for (const auto& [name, a] : artifacts)
    arts[name] = json{{"path", a.path}, {"hash", a.hash}};
  j["artifacts"] = arts;
  json sd = json::object();
  for (const auto& [name, v] : seeds) sd[name] = v;
  j["seeds"] = sd;
  write_file_atomic(p, j.dump(2) + "\n");
}

PipelineState PipelineState::load(const fs::path& p) {
  PipelineState st;
  if (!fs::exists(p)) return st;
  json j = json::parse(read_text_file(p));
  st.stage = stage_from_string(j.at("stage"));
  st.config_hash = j.value("config_hash", "");
  for (auto& [name, a] : j.at("artifacts").items())
    st.artifacts[name] = Artifact{a.at("path"), a.at("hash")};
  for (auto& [name, v] : j.at("seeds").items())
    st.seeds[name] = v.get<std::uint64_t>();
  return st;
}

StageLock::StageLock(const fs::path& run_dir) : path_(run_dir / "pipeline.lock") {
  fs::create_directories(run_dir);
  // O_EXCL-style create-or-fail via noreplace open
  std::ofstream probe(path_, std::ios::out | std::ios::app);
  if (fs::exists(path_) && fs::file_size(path_) > 0)
    throw RuntimeFailure("pipeline lock held: " + path_.string());
  std::ofstream f(path_, std::ios::trunc);
  f << "locked\n";
}

StageLock::~StageLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

double OptimizerSpec::multiplier(const std::string& group) const {
  auto it = group_multipliers.find(group);
  return it == group_multipliers.end() ? 1.0 : it->second;
}

void OptimizerSpec::validate() const {
  if (warmup_steps < 1) throw ValidationError("warmup_steps must be >= 1");
  if (scale <= 0 || dim <= 0)
    throw ValidationError("optimizer scale and dim must be positive");
  for (const auto& [name, m] : group_multipliers)
    if (m <= 0)
      throw ValidationError("LR multiplier for group " + name +
                            " must be positive");
}

double lr_at(long step, const OptimizerSpec& spec) {
  if (step < 1) throw ValidationError("lr_at: step must be >= 1");
  spec.validate();
  const double d = static_cast<double>(spec.dim);
  const double w = static_cast<double>(spec.warmup_steps);
  const double s = static_cast<double>(step);
  // (s/w) keeps the warmup ramp an exact scaling of the peak value, so the
  // closed-form ratios (half rate at w/2 and at 4w) hold bitwise
  const double warm = (s / w) * (1.0 / std::sqrt(w));
  const double decay = 1.0 / std::sqrt(s);
  return spec.scale / std::sqrt(d) * std::min(decay, warm);
}

// --- stage 1 ---------------------------------------------------------------

detector::DetectorMetrics evaluate_on_split(detector::DetectorModel& m,
                                            const corpus::Corpus& c,
                                            const fs::path& data_dir,
                                            corpus::Split split) {
  std::vector<std::vector<int>> decisions, references;
  for (const auto& conv : c.conversations) {
    for (const auto& u : conv.utterances) {
      auto it = c.split.find(u.id);
      if (it == c.split.end() || it->second != split) continue;
      if (!u.char_labels) continue;
      if (u.label_source == corpus::LabelSource::none ||
          u.label_source == corpus::LabelSource::pseudo)
        continue;
      fs::path mel_p = data_dir / "features" / (detector::file_stem(u.id) + ".mel");
      fs::path dur_p = data_dir / "features" / (detector::file_stem(u.id) + ".dur");
      auto mel = features::read_mel_cache(mel_p);
      auto spans = features::char_spans_from_durations(
          features::read_durations(dur_p), u.grouping);
      auto scores = m.score(mel, spans, u.chars);
      decisions.push_back(
          detector::threshold_decisions(scores, m.config().threshold));
      references.push_back(
          detector::behavior_targets(*u.char_labels, m.config().behavior));
    }
  }
  return detector::evaluate_detector(decisions, references);
}

DetectorStageResult stage_train_detectors(const corpus::Corpus& c,
                                          const fs::path& data_dir,
                                          const detector::DetectorConfig& fp_cfg,
                                          const detector::DetectorConfig& pr_cfg,
                                          std::uint64_t seed,
                                          const fs::path& out_dir) {
  if (fp_cfg.behavior != detector::Behavior::filled_pause ||
      pr_cfg.behavior != detector::Behavior::prolongation)
    throw ValidationError("detector configs must cover filled_pause then prolongation");
  fs::create_directories(out_dir);
  DetectorStageResult res;
  auto fp = detector::train_detector(c, data_dir, fp_cfg, seed);
  auto pr = detector::train_detector(c, data_dir, pr_cfg, seed + 1);
  res.fp_losses = fp.epoch_losses;
  res.pr_losses = pr.epoch_losses;
  res.fp_checkpoint = out_dir / "fp.detector";
  res.pr_checkpoint = out_dir / "pr.detector";
  detector::save_detector(*fp.model, res.fp_checkpoint);
  detector::save_detector(*pr.model, res.pr_checkpoint);
  res.fp_metrics = evaluate_on_split(*fp.model, c, data_dir, corpus::Split::test);
  res.pr_metrics = evaluate_on_split(*pr.model, c, data_dir, corpus::Split::test);
  return res;
}

// --- stage 2 ---------------------------------------------------------------

PseudoLabelStats stage_extract_pseudo_labels(
    corpus::Corpus& c, const fs::path& data_dir, const fs::path& fp_checkpoint,
    const fs::path& pr_checkpoint, double threshold_fp, double threshold_pr,
    const fs::path& out_dir, int threads) {
  {
    auto probe = detector::load_detector(fp_checkpoint);
    if (probe->config().behavior != detector::Behavior::filled_pause)
      throw ValidationError("filled-pause checkpoint trained for wrong behavior");
    probe = detector::load_detector(pr_checkpoint);
    if (probe->config().behavior != detector::Behavior::prolongation)
      throw ValidationError("prolongation checkpoint trained for wrong behavior");
  }
  std::vector<corpus::Utterance*> targets;
  for (auto& conv : c.conversations)
    for (auto& u : conv.utterances)
      if (u.label_source == corpus::LabelSource::none ||
          u.label_source == corpus::LabelSource::pseudo)
        targets.push_back(&u);

  struct Scored {
    std::vector<double> fp, pr;
  };
  std::vector<Scored> scored(targets.size());
  const std::string fp_hash = file_hash_hex(fp_checkpoint);
  const std::string pr_hash = file_hash_hex(pr_checkpoint);

  threads = std::max(1, threads);
  auto worker = [&](int w) {
    // each worker loads private model instances: scoring mutates caches
    auto fp_model = detector::load_detector(fp_checkpoint);
    auto pr_model = detector::load_detector(pr_checkpoint);
    for (std::size_t i = w; i < targets.size(); i += threads) {
      const corpus::Utterance& u = *targets[i];
      fs::path mel_p = data_dir / "features" / (detector::file_stem(u.id) + ".mel");
      fs::path dur_p = data_dir / "features" / (detector::file_stem(u.id) + ".dur");
      if (!fs::exists(mel_p) || !fs::exists(dur_p))
        throw ValidationError("missing cached features for " + u.id +
                              " (run prepare first)");
      auto mel = features::read_mel_cache(mel_p);
      auto spans = features::char_spans_from_durations(
          features::read_durations(dur_p), u.grouping);
      scored[i].fp = fp_model->score(mel, spans, u.chars).values;
      scored[i].pr = pr_model->score(mel, spans, u.chars).values;
    }
  };
  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w) pool.emplace_back(worker, w);
    for (auto& t : pool) t.join();
  }

  fs::create_directories(out_dir / "pseudo");
  PseudoLabelStats stats;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    corpus::Utterance& u = *targets[i];
    auto fp_dec = detector::threshold_decisions({scored[i].fp}, threshold_fp);
    auto pr_dec = detector::threshold_decisions({scored[i].pr}, threshold_pr);
    labels::CharLabelSeq combined(u.chars.size());
    for (std::size_t k = 0; k < u.chars.size(); ++k) {
      combined[k] = labels::combine({fp_dec[k] != 0, pr_dec[k] != 0});
      stats.fp_positive += fp_dec[k];
      stats.pr_positive += pr_dec[k];
    }
    stats.chars += static_cast<long>(u.chars.size());
    stats.utterances++;
    u.char_labels = combined;
    u.label_source = corpus::LabelSource::pseudo;

    json side{{"utt_id", u.id},
              {"scores_fp", scored[i].fp},
              {"scores_pr", scored[i].pr},
              {"decisions", combined},
              {"threshold_fp", threshold_fp},
              {"threshold_pr", threshold_pr},
              {"detector_hashes", {{"fp", fp_hash}, {"pr", pr_hash}}}};
    write_file_atomic(out_dir / "pseudo" / (detector::file_stem(u.id) + ".json"),
                      side.dump(2) + "\n");
  }
  corpus::save_corpus(c, out_dir / "pseudo_manifest.jsonl");
  return stats;
}

// --- example assembly ------------------------------------------------------

std::vector<TrainExample> build_examples(
    const corpus::Corpus& c, const fs::path& data_dir,
    const acoustic::PhonemeVocab& vocab, embedding::Service& embeds,
    const std::vector<corpus::LabelSource>& sources, int history_len) {
  std::vector<TrainExample> out;
  for (const auto& conv : c.conversations) {
    for (std::size_t idx = 0; idx < conv.utterances.size(); ++idx) {
      const corpus::Utterance& u = conv.utterances[idx];
      auto sp = c.split.find(u.id);
      if (sp != c.split.end() && sp->second == corpus::Split::test) continue;
      if (std::find(sources.begin(), sources.end(), u.label_source) ==
          sources.end())
        continue;
      if (!u.char_labels) continue;

      TrainExample ex;
      ex.utt_id = u.id;
      for (const auto& p : u.phonemes)
        ex.input.phoneme_ids.push_back(vocab.id_of(p));
      ex.input.phoneme_mask.assign(u.phonemes.size(), true);

      auto window = corpus::history_window(conv, idx, history_len);
      ex.input.history = Mat(history_len + 1, embedding::kDim);
      for (int h = 0; h <= history_len; ++h)
        ex.input.history.row(h) = embeds.embed(window[h]).transpose();
      std::tie(ex.input.conv_ids, ex.input.conv_mask) =
          acoustic::build_conversation_sequence(window, vocab);

      fs::path stem = data_dir / "features" / detector::file_stem(u.id);
      ex.targets.durations =
          !u.durations.empty()
              ? u.durations
              : features::read_durations(fs::path(stem.string() + ".dur"));
      if (ex.targets.durations.size() != u.phonemes.size())
        throw ValidationError("duration count mismatch for " + u.id);
      auto prosody = features::read_prosody(fs::path(stem.string() + ".pros"));
      ex.targets.pitch = prosody.pitch;
      ex.targets.energy = prosody.energy;
      if (ex.targets.pitch.size() != u.phonemes.size())
        throw ValidationError("prosody length mismatch for " + u.id);
      ex.targets.phoneme_labels =
          labels::expand_char_to_phoneme(*u.char_labels, u.grouping);

      auto mel = features::read_mel_cache(fs::path(stem.string() + ".mel"));
      long total = std::accumulate(ex.targets.durations.begin(),
                                   ex.targets.durations.end(), 0L);
      if (mel.frames.rows() < total)
        throw ValidationError("mel shorter than aligned durations for " + u.id);
      ex.targets.mel = mel.frames.topRows(total);
      out.push_back(std::move(ex));
    }
  }
  return out;
}

// --- training loop shared by stages 3 and 4 --------------------------------

namespace {

AcousticTrainResult run_training(std::shared_ptr<acoustic::AcousticModel> model,
                                 std::vector<TrainExample> examples,
                                 const TrainSettings& s,
                                 const fs::path& out_checkpoint) {
  if (examples.empty())
    throw ValidationError("no labeled training examples for acoustic training");
  OptimizerSpec spec = s.optimizer;
  spec.dim = model->config().dim;
  spec.validate();

  auto groups = model->param_groups();
  for (auto& g : groups) g.lr_mult = spec.multiplier(g.name);
  nn::Adam adam(groups, spec.beta1, spec.beta2, spec.eps);

  AcousticTrainResult res;
  res.model = model;
  res.optimizer_used = spec;
  std::mt19937_64 order_rng(s.seed ^ 0x94d049bb133111ebULL);
  for (long step = 1; step <= s.steps; ++step) {
    const TrainExample& ex =
        examples[rng_index(order_rng, examples.size())];
    adam.zero_grad();
    auto loss = model->forward_train(ex.input, ex.targets);
    const double lr = lr_at(step, spec);
    adam.step(lr);
    model->step++;
    if (step == 1 || step % s.log_every == 0 || step == s.steps)
      res.log.push_back({step, loss, lr});
  }
  fs::create_directories(out_checkpoint.parent_path());
  acoustic::save_checkpoint(*model, out_checkpoint);
  return res;
}

void set_prosody_stats(acoustic::AcousticModel& m,
                       const std::vector<TrainExample>& examples) {
  double psum = 0, psq = 0, esum = 0, esq = 0;
  long n = 0;
  for (const auto& ex : examples) {
    for (double v : ex.targets.pitch) psum += v, psq += v * v;
    for (double v : ex.targets.energy) esum += v, esq += v * v;
    n += static_cast<long>(ex.targets.pitch.size());
  }
  if (n == 0) return;
  m.pitch_mean = psum / n;
  m.pitch_std = std::max(std::sqrt(psq / n - m.pitch_mean * m.pitch_mean), 1e-6);
  m.energy_mean = esum / n;
  m.energy_std =
      std::max(std::sqrt(esq / n - m.energy_mean * m.energy_mean), 1e-6);
}

}  // namespace

AcousticTrainResult stage_pretrain(const corpus::Corpus& c,
                                   const fs::path& data_dir,
                                   const acoustic::ModelConfig& mc,
                                   const TrainSettings& s,
                                   embedding::Service& embeds,
                                   const fs::path& out_checkpoint) {
  auto vocab = acoustic::PhonemeVocab::build(c);
  std::vector<corpus::LabelSource> sources{corpus::LabelSource::pseudo};
  if (s.mix_high_quality) {
    sources.push_back(corpus::LabelSource::human);
    sources.push_back(corpus::LabelSource::planted);
  }
  auto examples =
      build_examples(c, data_dir, vocab, embeds, sources, mc.history_len);
  auto model = std::make_shared<acoustic::AcousticModel>(mc, vocab, s.seed);
  set_prosody_stats(*model, examples);
  return run_training(model, std::move(examples), s, out_checkpoint);
}

std::shared_ptr<acoustic::AcousticModel> finetune_init(
    const fs::path& pretrained, std::uint64_t decoder_reset_seed) {
  auto model = acoustic::load_checkpoint(pretrained);
  model->reset_decoder(decoder_reset_seed);
  return model;
}

AcousticTrainResult stage_finetune(const fs::path& pretrained,
                                   const corpus::Corpus& c,
                                   const fs::path& data_dir,
                                   const TrainSettings& s,
                                   std::uint64_t decoder_reset_seed,
                                   embedding::Service& embeds,
                                   const fs::path& out_checkpoint) {
  auto model = finetune_init(pretrained, decoder_reset_seed);
  TrainSettings fs_settings = s;
  fs_settings.optimizer.group_multipliers["decoder"] = 10.0;
  auto examples = build_examples(
      c, data_dir, model->vocab(), embeds,
      {corpus::LabelSource::human, corpus::LabelSource::planted},
      model->config().history_len);
  return run_training(model, std::move(examples), fs_settings, out_checkpoint);
}

// --- gradient-check harness ------------------------------------------------

namespace {

// max_relative_grad_error reads Param::grad while evaluating the closure, so
// closures that run a backward pass must leave the gradients untouched.
double checked(const std::vector<nn::Param*>& ps,
               const std::function<double()>& loss, double eps,
               double denom_floor = 1e-6) {
  auto pure = [&]() {
    std::vector<Mat> saved;
    saved.reserve(ps.size());
    for (auto* p : ps) saved.push_back(p->grad);
    double v = loss();
    for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->grad = saved[i];
    return v;
  };
  return nn::max_relative_grad_error(ps, pure, eps, denom_floor);
}

Mat random_mat(long r, long cols, std::mt19937_64& g) {
  Mat m(r, cols);
  for (long i = 0; i < r; ++i)
    for (long j = 0; j < cols; ++j) m(i, j) = rng_normal(g);
  return m;
}

double check_linear(double eps) {
  std::mt19937_64 g(11);
  nn::Linear lin("toy", 3, 2, g);
  Mat x = random_mat(4, 3, g), t = random_mat(4, 2, g);
  std::vector<nn::Param*> ps;
  lin.collect(ps);
  auto run = [&](bool back) {
    auto loss = nn::mse_loss(lin.forward(x), t);
    if (back) lin.backward(loss.grad);
    return loss.value;
  };
  run(true);
  return checked(ps, [&] { return run(false); }, eps);
}

double check_detector_ce(double eps) {
  detector::DetectorConfig cfg;
  cfg.cnn_channels = 4;
  cfg.cnn_strides = {2};
  cfg.hidden = 3;
  cfg.char_embed_dim = 4;
  detector::CharVocab vocab;
  vocab.ids["a"] = 1;
  vocab.ids["b"] = 2;
  detector::DetectorModel model(cfg, vocab, 17);
  std::mt19937_64 g(23);
  features::MelSpectrogram mel;
  mel.frames = random_mat(8, features::kMelBins, g);
  features::CharSpans spans{{0, 3}, {3, 6}, {6, 8}};
  std::vector<std::string> chars{"a", "b", "a"};
  std::vector<int> targets{0, 1, 0};
  std::vector<double> weights{1.0, 2.0};
  auto ps = model.params();
  model.train_step_loss(mel, spans, chars, targets, weights);
  return checked(
      ps, [&] { return model.train_step_loss(mel, spans, chars, targets, weights); },
      eps);
}

// conv-conv-linear stack matching the variance/label predictor shape
double check_predictor_mse(std::uint64_t seed, double eps) {
  std::mt19937_64 g(seed);
  const int d = 6, f = 5;
  nn::Conv1d c1("toy.c1", d, f, 3, 1, g), c2("toy.c2", f, f, 3, 1, g);
  nn::ReLU r1, r2;
  nn::LayerNorm ln1("toy.ln1", f), ln2("toy.ln2", f);
  nn::Linear head("toy.head", f, 1, g);
  Mat x = random_mat(7, d, g), t = random_mat(7, 1, g);
  std::vector<nn::Param*> ps;
  c1.collect(ps);
  c2.collect(ps);
  ln1.collect(ps);
  ln2.collect(ps);
  head.collect(ps);
  auto run = [&](bool back) {
    Mat h = ln1.forward(r1.forward(c1.forward(x)));
    h = ln2.forward(r2.forward(c2.forward(h)));
    auto loss = nn::mse_loss(head.forward(h), t);
    if (back)
      c1.backward(r1.backward(
          ln1.backward(c2.backward(r2.backward(ln2.backward(head.backward(loss.grad)))))));
    return loss.value;
  };
  run(true);
  return checked(ps, [&] { return run(false); }, eps);
}

double check_mel_l1(double eps) {
  std::mt19937_64 g(41);
  const int d = 6;
  nn::TransformerBlock block("toy.block", d, 2, 12, g);
  nn::Linear head("toy.mel", d, 8, g);
  Mat x = random_mat(5, d, g), t = random_mat(5, 8, g);
  std::vector<bool> mask(5, true);
  std::vector<nn::Param*> ps;
  block.collect(ps);
  head.collect(ps);
  auto run = [&](bool back) {
    auto loss = nn::l1_loss(head.forward(block.forward(x, mask)), t);
    if (back) block.backward(head.backward(loss.grad));
    return loss.value;
  };
  run(true);
  // L1 is non-smooth at 0; random targets keep residuals away from kinks
  return checked(ps, [&] { return run(false); }, eps);
}

double check_acoustic_total(double eps) {
  acoustic::ModelConfig mc;
  mc.dim = 8;
  mc.heads = 2;
  mc.encoder_blocks = 1;
  mc.decoder_blocks = 1;
  mc.ff_dim = 12;
  mc.vp_filter = 6;
  mc.history_hidden = 4;
  mc.history_len = 2;
  acoustic::PhonemeVocab vocab;
  vocab.ids["p1"] = 3;
  vocab.ids["p2"] = 4;
  acoustic::AcousticModel model(mc, vocab, 53);
  std::mt19937_64 g(59);
  acoustic::ForwardInput in;
  in.phoneme_ids = {3, 4, 3};
  in.phoneme_mask = {true, true, true};
  in.history = random_mat(3, embedding::kDim, g) * 0.1;
  in.conv_ids = {1, 3, 4, 2, 3, 4, 3, 2};
  in.conv_mask.assign(in.conv_ids.size(), true);
  acoustic::TrainTargets t;
  t.durations = {2, 1, 2};
  t.pitch = {180.0, 0.0, 210.0};
  t.energy = {0.1, 0.05, 0.2};
  t.phoneme_labels = {0, 1, 2};
  t.mel = random_mat(5, features::kMelBins, g);
  model.pitch_mean = 130.0;
  model.pitch_std = 90.0;
  model.energy_mean = 0.1;
  model.energy_std = 0.05;
  auto ps = model.all_params();
  for (auto* p : ps) p->zero_grad();
  model.forward_train(in, t);
  // the full stack has parameters with ~zero gradient whose finite difference
  // is pure cancellation noise; a larger floor keeps those out of the ratio
  return checked(ps, [&] { return model.forward_train(in, t).total(); }, eps,
                 1e-5);
}

}  // namespace

double gradient_check(const std::string& head, double eps) {
  if (head == "linear") return check_linear(eps);
  if (head == "detector_ce") return check_detector_ce(eps);
  if (head == "label_mse") return check_predictor_mse(101, eps);
  if (head == "duration_mse") return check_predictor_mse(103, eps);
  if (head == "pitch_mse") return check_predictor_mse(107, eps);
  if (head == "energy_mse") return check_predictor_mse(109, eps);
  if (head == "mel_l1") return check_mel_l1(eps);
  if (head == "acoustic_total") return check_acoustic_total(eps);
  throw ValidationError("unknown gradient-check head: " + head);
}

}  // namespace spontts::pipeline
