// Acceptance harness: one pass/fail line per criterion, nonzero exit if any
// criterion fails. Heavier criteria reuse the library directly; the end-to-end
// demo goes through the installed CLI binary (SPONTTS_CLI).

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spontts/acoustic.hpp"
#include "spontts/config.hpp"
#include "spontts/corpus.hpp"
#include "spontts/detector.hpp"
#include "spontts/features.hpp"
#include "spontts/labels.hpp"
#include "spontts/nn.hpp"
#include "spontts/pipeline.hpp"
#include "spontts/synthetic.hpp"
#include "spontts/util.hpp"

using namespace spontts;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Criterion {
  std::string name;
  std::function<std::string()> body;  // returns "" on pass, reason on fail
};

nn::Mat randn(long r, long c, std::mt19937_64& g) {
  nn::Mat m(r, c);
  for (long i = 0; i < r; ++i)
    for (long j = 0; j < c; ++j) m(i, j) = rng_normal(g);
  return m;
}

std::string fail(const std::string& why) { return why; }

#define REQUIRE_OR_FAIL(cond, why) \
  do {                             \
    if (!(cond)) return fail(why); \
  } while (0)

fs::path work_dir() {
  fs::path d = fs::temp_directory_path() / "spontts_acceptance";
  fs::create_directories(d);
  return d;
}

// generate a corpus and fill the feature caches the stages expect
corpus::Corpus prepared_corpus(const fs::path& dir, std::uint64_t seed,
                               const synthetic::GeneratorConfig& cfg) {
  fs::remove_all(dir);
  auto c = synthetic::generate_synthetic_corpus(seed, cfg, dir);
  fs::create_directories(dir / "features");
  for (const auto& conv : c.conversations) {
    for (const auto& u : conv.utterances) {
      Waveform w = read_wav(dir / *u.audio_ref);
      fs::path stem = dir / "features" / detector::file_stem(u.id);
      features::write_mel_cache(fs::path(stem.string() + ".mel"),
                                features::extract_mel(w));
      features::write_durations(fs::path(stem.string() + ".dur"), u.durations);
      features::write_prosody(fs::path(stem.string() + ".pros"),
                              features::extract_prosody(w, u.durations));
    }
  }
  return c;
}

// --- 1: published F1 values -------------------------------------------------

std::string check_f1_table() {
  struct Row {
    double p, r, f1;
  };
  for (const Row& row : {Row{0.815, 0.524, 0.638}, Row{0.800, 0.557, 0.657},
                         Row{0.866, 0.619, 0.722}, Row{0.844, 0.710, 0.771}}) {
    double got = detector::f1_from_pr(row.p, row.r);
    REQUIRE_OR_FAIL(std::abs(got - row.f1) <= 0.001,
                    "f1_from_pr(" + std::to_string(row.p) + ", " +
                        std::to_string(row.r) + ") = " + std::to_string(got));
  }
  return "";
}

// --- 2: label codec ---------------------------------------------------------

std::string check_label_codec() {
  for (int cls = 0; cls < labels::kNumClasses; ++cls)
    REQUIRE_OR_FAIL(labels::combine(labels::decompose(cls)) == cls,
                    "combine/decompose not a bijection at class " +
                        std::to_string(cls));

  std::mt19937_64 g(2024);
  for (int it = 0; it < 1000; ++it) {
    const int n_chars = 1 + static_cast<int>(rng_index(g, 12));
    labels::CharLabelSeq cls(n_chars);
    std::vector<int> grouping(n_chars);
    for (int i = 0; i < n_chars; ++i) {
      cls[i] = static_cast<int>(rng_index(g, labels::kNumClasses));
      grouping[i] = 1 + static_cast<int>(rng_index(g, 4));
    }
    auto ph = labels::expand_char_to_phoneme(cls, grouping);
    long total = 0;
    for (int k : grouping) total += k;
    REQUIRE_OR_FAIL(static_cast<long>(ph.size()) == total,
                    "expanded length mismatch");
    // last-phoneme invariant: positives only on group-final phonemes
    std::size_t pos = 0;
    for (int i = 0; i < n_chars; ++i) {
      for (int k = 0; k < grouping[i]; ++k, ++pos) {
        if (k + 1 < grouping[i])
          REQUIRE_OR_FAIL(ph[pos] == 0, "positive label off the last phoneme");
        else
          REQUIRE_OR_FAIL(ph[pos] == cls[i], "final phoneme label mismatch");
      }
    }
    REQUIRE_OR_FAIL(labels::contract_phoneme_to_char(ph, grouping) == cls,
                    "round trip mismatch");
  }
  return "";
}

// --- 3: detector metric oracle ----------------------------------------------

std::string check_detector_oracle() {
  std::mt19937_64 g(17);
  for (int inst = 0; inst < 120; ++inst) {
    std::vector<std::vector<int>> dec, ref;
    const int n_seq = 1 + static_cast<int>(rng_index(g, 5));
    long tp = 0, fp = 0, fn = 0;
    for (int s = 0; s < n_seq; ++s) {
      const int len = 1 + static_cast<int>(rng_index(g, 10));
      std::vector<int> d(len), r(len);
      for (int i = 0; i < len; ++i) {
        d[i] = static_cast<int>(rng_index(g, 2));
        r[i] = static_cast<int>(rng_index(g, 2));
        tp += (d[i] == 1 && r[i] == 1);
        fp += (d[i] == 1 && r[i] == 0);
        fn += (d[i] == 0 && r[i] == 1);
      }
      dec.push_back(d);
      ref.push_back(r);
    }
    auto m = detector::evaluate_detector(dec, ref);
    REQUIRE_OR_FAIL(m.tp == tp && m.fp == fp && m.fn == fn,
                    "confusion counts differ from the brute-force recount");
    double p = (tp + fp) ? double(tp) / (tp + fp) : 0.0;
    double r2 = (tp + fn) ? double(tp) / (tp + fn) : 0.0;
    REQUIRE_OR_FAIL(m.precision == p && m.recall == r2 &&
                        m.f1 == detector::f1_from_pr(p, r2),
                    "derived metrics differ from the recount");
  }

  // threshold sweep: positives and recall never increase with the threshold
  detector::DetectorScores scores;
  std::vector<int> refs;
  for (int i = 0; i < 400; ++i) {
    scores.values.push_back(rng_uniform(g));
    refs.push_back(static_cast<int>(rng_index(g, 2)));
  }
  long prev_pos = scores.values.size() + 1;
  double prev_recall = 2.0;
  for (double th = 0.05; th < 1.0; th += 0.05) {
    auto dec = detector::threshold_decisions(scores, th);
    long pos = 0;
    for (int v : dec) pos += v;
    auto m = detector::evaluate_detector({dec}, {refs});
    REQUIRE_OR_FAIL(pos <= prev_pos, "positive count increased with threshold");
    REQUIRE_OR_FAIL(m.recall <= prev_recall, "recall increased with threshold");
    prev_pos = pos;
    prev_recall = m.recall;
  }
  return "";
}

// --- 4: synthetic-corpus detection ------------------------------------------

detector::DetectorConfig ac4_config(detector::Behavior b,
                                    detector::InputType t) {
  detector::DetectorConfig cfg;
  cfg.behavior = b;
  cfg.input_type = t;
  cfg.threshold = 0.5;
  cfg.cnn_channels = 16;
  cfg.hidden = 24;
  cfg.char_embed_dim = 16;
  cfg.epochs = 24;
  return cfg;
}

std::string check_synthetic_detection() {
  fs::path dir = work_dir() / "ac4";
  synthetic::GeneratorConfig gen;  // full default corpus
  auto c = prepared_corpus(dir, 2026, gen);

  auto full = pipeline::stage_train_detectors(
      c, dir,
      ac4_config(detector::Behavior::filled_pause,
                 detector::InputType::text_speech),
      ac4_config(detector::Behavior::prolongation,
                 detector::InputType::text_speech),
      11, dir / "det_full");
  auto speech = pipeline::stage_train_detectors(
      c, dir,
      ac4_config(detector::Behavior::filled_pause,
                 detector::InputType::speech),
      ac4_config(detector::Behavior::prolongation,
                 detector::InputType::speech),
      11, dir / "det_speech");

  std::ostringstream s;
  s << "  fp text_speech P=" << full.fp_metrics.precision
    << " R=" << full.fp_metrics.recall
    << "  pr text_speech P=" << full.pr_metrics.precision
    << " R=" << full.pr_metrics.recall
    << "\n  fp speech R=" << speech.fp_metrics.recall
    << "  pr speech R=" << speech.pr_metrics.recall;
  std::cout << s.str() << "\n";

  REQUIRE_OR_FAIL(full.fp_metrics.precision >= 0.9 &&
                      full.fp_metrics.recall >= 0.9,
                  "filled-pause detector below 0.9 on the held-out split");
  REQUIRE_OR_FAIL(full.pr_metrics.precision >= 0.9 &&
                      full.pr_metrics.recall >= 0.9,
                  "prolongation detector below 0.9 on the held-out split");
  REQUIRE_OR_FAIL(full.fp_metrics.recall > speech.fp_metrics.recall,
                  "text+speech filled-pause recall not above speech-only");
  REQUIRE_OR_FAIL(full.pr_metrics.recall > speech.pr_metrics.recall,
                  "text+speech prolongation recall not above speech-only");
  return "";
}

// --- 5: gradient checks -----------------------------------------------------

std::string check_gradients() {
  for (const char* head : {"detector_ce", "label_mse", "duration_mse",
                           "pitch_mse", "energy_mse", "mel_l1"}) {
    double err = pipeline::gradient_check(head);
    REQUIRE_OR_FAIL(err < 1e-4, std::string(head) + " relative error " +
                                    std::to_string(err));
  }
  return "";
}

// --- 6: attention and length-regulation invariants --------------------------

std::string check_attention_invariants() {
  std::mt19937_64 g(6);
  nn::MultiHeadAttention attn("a", 8, 2, g);
  nn::Mat q = randn(5, 8, g), kv = randn(7, 8, g);
  std::vector<bool> mask{true, false, true, true, false, true, true};
  attn.forward(q, kv, mask);
  for (const nn::Mat& head : attn.last_attention())
    for (long i = 0; i < head.rows(); ++i) {
      REQUIRE_OR_FAIL(std::abs(head.row(i).sum() - 1.0) < 1e-6,
                      "attention row does not sum to 1");
      REQUIRE_OR_FAIL(head(i, 1) == 0.0 && head(i, 4) == 0.0,
                      "masked key has nonzero weight");
    }

  // single unmasked key: the output is exactly that key's value row
  nn::MultiHeadAttention single("s", 6, 2, g);
  nn::Mat q2 = randn(4, 6, g), kv2 = randn(3, 6, g);
  single.forward(q2, kv2, {false, true, false});
  for (const nn::Mat& head : single.last_attention())
    for (long i = 0; i < head.rows(); ++i)
      REQUIRE_OR_FAIL(head(i, 1) == 1.0, "single key weight not exactly 1");

  for (int it = 0; it < 1000; ++it) {
    const int n = 1 + static_cast<int>(rng_index(g, 10));
    nn::Mat h = randn(n, 4, g);
    features::DurationSeq d(n);
    long total = 0;
    for (int i = 0; i < n; ++i) {
      d[i] = static_cast<int>(rng_index(g, 6));
      total += d[i];
    }
    nn::Mat out = acoustic::length_regulate(h, d);
    REQUIRE_OR_FAIL(out.rows() == total, "regulated length != sum durations");
  }
  return "";
}

// --- shared tiny training setup for 7, 9, 10 --------------------------------

acoustic::ModelConfig tiny_model() {
  acoustic::ModelConfig mc;
  mc.dim = 32;
  mc.heads = 2;
  mc.encoder_blocks = 1;
  mc.decoder_blocks = 1;
  mc.ff_dim = 64;
  mc.vp_filter = 16;
  mc.history_hidden = 16;
  mc.history_len = 2;
  return mc;
}

synthetic::GeneratorConfig small_gen(int convs, int utts) {
  synthetic::GeneratorConfig cfg;
  cfg.n_conversations = convs;
  cfg.utts_per_conversation = utts;
  cfg.min_chars = 6;
  cfg.max_chars = 9;
  cfg.test_fraction = 0.0;
  return cfg;
}

// --- 7: fine-tune contract --------------------------------------------------

std::string check_finetune_contract() {
  fs::path dir = work_dir() / "ac7";
  auto c = prepared_corpus(dir, 7, small_gen(4, 2));

  pipeline::TrainSettings s;
  s.steps = 40;
  s.log_every = 10;
  s.seed = 5;
  s.optimizer.warmup_steps = 20;
  s.mix_high_quality = true;
  embedding::Service embeds(std::make_shared<embedding::HashProvider>(1));
  pipeline::stage_pretrain(c, dir, tiny_model(), s, embeds, dir / "pre.ckpt");

  auto pretrained = acoustic::load_checkpoint(dir / "pre.ckpt");
  auto init = pipeline::finetune_init(dir / "pre.ckpt", 99);
  auto ga = pretrained->param_groups();
  auto gb = init->param_groups();
  bool decoder_differs = false;
  for (std::size_t gi = 0; gi < ga.size(); ++gi)
    for (std::size_t pi = 0; pi < ga[gi].params.size(); ++pi) {
      double diff =
          (ga[gi].params[pi]->value - gb[gi].params[pi]->value).norm();
      if (ga[gi].name == "decoder") {
        if (diff != 0.0) decoder_differs = true;
      } else {
        REQUIRE_OR_FAIL(diff == 0.0,
                        "group " + ga[gi].name + " not bit-identical");
      }
    }
  REQUIRE_OR_FAIL(decoder_differs, "decoder unchanged after reset");

  auto fin = pipeline::stage_finetune(dir / "pre.ckpt", c, dir, s, 99, embeds,
                                      dir / "fin.ckpt");
  REQUIRE_OR_FAIL(fin.optimizer_used.multiplier("decoder") == 10.0,
                  "decoder LR multiplier is not exactly 10");
  return "";
}

// --- 8: schedule ------------------------------------------------------------

std::string check_schedule() {
  pipeline::OptimizerSpec spec;
  REQUIRE_OR_FAIL(
      pipeline::lr_at(2000, spec) == 0.5 * pipeline::lr_at(4000, spec),
      "lr(2000) != 0.5 * lr(4000)");
  REQUIRE_OR_FAIL(
      pipeline::lr_at(16000, spec) == 0.5 * pipeline::lr_at(4000, spec),
      "lr(16000) != 0.5 * lr(4000)");
  for (long s : {3000L, 3999L, 4001L, 8000L})
    REQUIRE_OR_FAIL(pipeline::lr_at(4000, spec) > pipeline::lr_at(s, spec),
                    "peak is not at step 4000");
  return "";
}

// --- 9: end-to-end demo + overfit smoke + label sensitivity -----------------

std::string check_demo_end_to_end() {
  fs::path out = work_dir() / "ac9_demo";
  fs::remove_all(out);
  std::string cmd = std::string(SPONTTS_CLI) + " demo --out " + out.string() +
                    " > " + (work_dir() / "demo.log").string() + " 2>&1";
  int rc = std::system(cmd.c_str());
  REQUIRE_OR_FAIL(rc == 0, "demo exited with code " + std::to_string(rc));
  auto st = pipeline::PipelineState::load(out / "state.json");
  REQUIRE_OR_FAIL(st.stage == pipeline::Stage::finetuned,
                  "demo did not reach the finetuned stage");
  REQUIRE_OR_FAIL(fs::exists(out / "finetuned.ckpt"),
                  "finetuned checkpoint missing");

  // overfit smoke: 8 utterances, 2000 steps, >=90% total-loss reduction
  fs::path dir = work_dir() / "ac9_overfit";
  auto c = prepared_corpus(dir, 41, small_gen(4, 2));
  pipeline::TrainSettings s;
  s.steps = 2000;
  s.log_every = 100;
  s.seed = 11;
  s.optimizer.warmup_steps = 250;
  s.mix_high_quality = true;
  embedding::Service embeds(std::make_shared<embedding::HashProvider>(1));
  auto res = pipeline::stage_pretrain(c, dir, tiny_model(), s, embeds,
                                      dir / "overfit.ckpt");
  double first = res.log.front().loss.total();
  double last = res.log.back().loss.total();
  std::cout << "  overfit loss " << first << " -> " << last << "\n";
  REQUIRE_OR_FAIL(last < 0.1 * first,
                  "total loss reduced by less than 90% (" +
                      std::to_string(first) + " -> " + std::to_string(last) +
                      ")");

  // explicit labels vs all-zero labels change the mel beyond tolerance
  auto model = acoustic::load_checkpoint(dir / "overfit.ckpt");
  const auto& conv = c.conversations.front();
  const auto& u = conv.utterances.front();
  acoustic::ForwardInput in;
  for (const auto& ph : u.phonemes)
    in.phoneme_ids.push_back(model->vocab().id_of(ph));
  in.phoneme_mask.assign(in.phoneme_ids.size(), true);
  in.history = nn::Mat::Zero(model->config().history_len + 1, embedding::kDim);
  auto window =
      corpus::history_window(conv, 0, model->config().history_len);
  for (std::size_t h = 0; h < window.size(); ++h) {
    if (!window[h]) continue;
    auto vec = embeds.embed(window[h]);
    for (int j = 0; j < embedding::kDim; ++j) in.history(h, j) = vec[j];
  }
  auto [ids, mask] = acoustic::build_conversation_sequence(
      {window.begin(), window.end()}, model->vocab());
  in.conv_ids = ids;
  in.conv_mask = mask;

  labels::PhonemeLabelSeq zero(in.phoneme_ids.size(), 0);
  labels::PhonemeLabelSeq marked = zero;
  marked[marked.size() / 2] = 3;
  auto a = model->synthesize(in, zero);
  auto b = model->synthesize(in, marked);
  const long shared = std::min(a.mel.rows(), b.mel.rows());
  double diff =
      (a.mel.topRows(shared) - b.mel.topRows(shared)).cwiseAbs().maxCoeff();
  std::cout << "  label-sensitivity mel max diff " << diff << "\n";
  REQUIRE_OR_FAIL(diff > 1e-6, "explicit labels left the mel unchanged");
  return "";
}

// --- 10: determinism --------------------------------------------------------

std::string check_stage_determinism() {
  fs::path dir = work_dir() / "ac10";
  synthetic::GeneratorConfig gen = small_gen(6, 3);
  gen.test_fraction = 0.2;
  auto c = prepared_corpus(dir, 55, gen);

  auto quick = [](detector::Behavior b) {
    detector::DetectorConfig cfg;
    cfg.behavior = b;
    cfg.cnn_channels = 8;
    cfg.hidden = 12;
    cfg.char_embed_dim = 8;
    cfg.epochs = 4;
    return cfg;
  };

  // stage 1 twice
  auto d1 = pipeline::stage_train_detectors(
      c, dir, quick(detector::Behavior::filled_pause),
      quick(detector::Behavior::prolongation), 5, dir / "det_a");
  auto d2 = pipeline::stage_train_detectors(
      c, dir, quick(detector::Behavior::filled_pause),
      quick(detector::Behavior::prolongation), 5, dir / "det_b");
  REQUIRE_OR_FAIL(pipeline::file_hash_hex(d1.fp_checkpoint) ==
                          pipeline::file_hash_hex(d2.fp_checkpoint) &&
                      pipeline::file_hash_hex(d1.pr_checkpoint) ==
                          pipeline::file_hash_hex(d2.pr_checkpoint),
                  "detector stage not hash-identical across runs");

  // stage 2 twice on an unlabeled copy
  synthetic::GeneratorConfig lq = small_gen(6, 3);
  lq.emit_labels = false;
  fs::path lq_dir = work_dir() / "ac10_lq";
  auto raw1 = prepared_corpus(lq_dir, 56, lq);
  pipeline::stage_extract_pseudo_labels(raw1, lq_dir, d1.fp_checkpoint,
                                        d1.pr_checkpoint, 0.85, 0.95,
                                        lq_dir / "run_a", 2);
  auto raw2 = corpus::load_corpus(lq_dir / "manifest.jsonl");
  pipeline::stage_extract_pseudo_labels(raw2, lq_dir, d1.fp_checkpoint,
                                        d1.pr_checkpoint, 0.85, 0.95,
                                        lq_dir / "run_b", 1);
  REQUIRE_OR_FAIL(
      pipeline::file_hash_hex(lq_dir / "run_a" / "pseudo_manifest.jsonl") ==
          pipeline::file_hash_hex(lq_dir / "run_b" / "pseudo_manifest.jsonl"),
      "pseudo-label stage not hash-identical across runs");

  // stages 3 and 4 twice
  pipeline::TrainSettings s;
  s.steps = 30;
  s.log_every = 10;
  s.seed = 21;
  s.optimizer.warmup_steps = 10;
  s.mix_high_quality = true;
  embedding::Service embeds(std::make_shared<embedding::HashProvider>(1));
  pipeline::stage_pretrain(c, dir, tiny_model(), s, embeds, dir / "p1.ckpt");
  pipeline::stage_pretrain(c, dir, tiny_model(), s, embeds, dir / "p2.ckpt");
  REQUIRE_OR_FAIL(pipeline::file_hash_hex(dir / "p1.ckpt") ==
                      pipeline::file_hash_hex(dir / "p2.ckpt"),
                  "pretrain stage not hash-identical across runs");
  pipeline::stage_finetune(dir / "p1.ckpt", c, dir, s, 77, embeds,
                           dir / "f1.ckpt");
  pipeline::stage_finetune(dir / "p1.ckpt", c, dir, s, 77, embeds,
                           dir / "f2.ckpt");
  REQUIRE_OR_FAIL(pipeline::file_hash_hex(dir / "f1.ckpt") ==
                      pipeline::file_hash_hex(dir / "f2.ckpt"),
                  "finetune stage not hash-identical across runs");
  return "";
}

}  // namespace

int main() {
  std::vector<Criterion> criteria{
      {"1 published F1 values reproduced", check_f1_table},
      {"2 label codec bijection and round trips", check_label_codec},
      {"3 detector metrics equal a brute-force recount", check_detector_oracle},
      {"4 synthetic-corpus detection quality", check_synthetic_detection},
      {"5 gradient checks under 1e-4", check_gradients},
      {"6 attention and length-regulation invariants",
       check_attention_invariants},
      {"7 fine-tune contract", check_finetune_contract},
      {"8 learning-rate schedule identities", check_schedule},
      {"9 end-to-end demo and overfit smoke", check_demo_end_to_end},
      {"10 stage determinism", check_stage_determinism},
  };

  int failures = 0;
  for (auto& cr : criteria) {
    auto t0 = std::chrono::steady_clock::now();
    std::string why;
    try {
      why = cr.body();
    } catch (const std::exception& e) {
      why = std::string("exception: ") + e.what();
    }
    auto secs = std::chrono::duration<double>(
                    std::chrono::steady_clock::now() - t0)
                    .count();
    std::ostringstream line;
    line << (why.empty() ? "PASS" : "FAIL") << "  criterion " << cr.name
         << "  (" << secs << " s)";
    if (!why.empty()) line << "  -- " << why;
    std::cout << line.str() << std::endl;
    if (!why.empty()) failures++;
  }
  return failures == 0 ? 0 : 1;
}
