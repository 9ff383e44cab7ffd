#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "spontts/acoustic.hpp"
#include "spontts/corpus.hpp"
#include "spontts/detector.hpp"
#include "spontts/embedding.hpp"

namespace spontts::pipeline {

enum class Stage { none, detectors_trained, pseudo_labeled, pretrained, finetuned };

std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);
int stage_rank(Stage s);

struct Artifact {
  std::string path;
  std::string hash;  // hex content hash of the file
};

// On-disk progress record; one per run directory.
struct PipelineState {
  Stage stage = Stage::none;
  std::map<std::string, Artifact> artifacts;
  std::map<std::string, std::uint64_t> seeds;
  std::string config_hash;

  void record(const std::string& name, const std::filesystem::path& p);
  void save(const std::filesystem::path& p) const;
  // Missing file loads as a fresh state.
  static PipelineState load(const std::filesystem::path& p);
};

// Exclusive per-run lock; throws RuntimeFailure if another stage holds it.
class StageLock {
 public:
  explicit StageLock(const std::filesystem::path& run_dir);
  ~StageLock();
  StageLock(const StageLock&) = delete;
  StageLock& operator=(const StageLock&) = delete;

 private:
  std::filesystem::path path_;
};

struct OptimizerSpec {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  long warmup_steps = 4000;
  double scale = 1.0;  // base LR scale
  int dim = 256;       // model width entering the d^-1/2 factor
  std::map<std::string, double> group_multipliers;  // absent key = 1.0

  double multiplier(const std::string& group) const;
  void validate() const;  // multipliers positive, warmup >= 1
};

// scale * dim^-1/2 * min(step^-1/2, step * warmup^-3/2); throws on step < 1.
double lr_at(long step, const OptimizerSpec& spec);

std::string file_hash_hex(const std::filesystem::path& p);

// --- stage 1 ---------------------------------------------------------------

struct DetectorStageResult {
  std::filesystem::path fp_checkpoint, pr_checkpoint;
  detector::DetectorMetrics fp_metrics, pr_metrics;  // on the test split
  std::vector<double> fp_losses, pr_losses;
};

DetectorStageResult stage_train_detectors(const corpus::Corpus& c,
                                          const std::filesystem::path& data_dir,
                                          const detector::DetectorConfig& fp_cfg,
                                          const detector::DetectorConfig& pr_cfg,
                                          std::uint64_t seed,
                                          const std::filesystem::path& out_dir);

// Detector metrics over a split, decided at the detector's own threshold.
detector::DetectorMetrics evaluate_on_split(detector::DetectorModel& m,
                                            const corpus::Corpus& c,
                                            const std::filesystem::path& data_dir,
                                            corpus::Split split);

// --- stage 2 ---------------------------------------------------------------

struct PseudoLabelStats {
  long utterances = 0;
  long chars = 0;
  long fp_positive = 0;
  long pr_positive = 0;
};

// Scores every unlabeled train utterance with both detectors, thresholds the
// scores, and writes per-utterance sidecars plus a relabeled manifest.
// Mutates `c`: labeled utterances get label_source=pseudo. Scoring runs on
// `threads` workers with results merged back in corpus order.
PseudoLabelStats stage_extract_pseudo_labels(
    corpus::Corpus& c, const std::filesystem::path& data_dir,
    const std::filesystem::path& fp_checkpoint,
    const std::filesystem::path& pr_checkpoint, double threshold_fp,
    double threshold_pr, const std::filesystem::path& out_dir, int threads = 2);

// --- stages 3 and 4 --------------------------------------------------------

struct TrainLogEntry {
  long step = 0;
  acoustic::LossBreakdown loss;
  double lr = 0.0;
};

struct TrainSettings {
  long steps = 300000;  // override for desk-scale runs
  long log_every = 100;
  std::uint64_t seed = 1;
  OptimizerSpec optimizer;
  bool mix_high_quality = false;  // pre-train on human/planted labels too
};

struct AcousticTrainResult {
  std::shared_ptr<acoustic::AcousticModel> model;
  std::vector<TrainLogEntry> log;  // entry at step 1 and every log_every after
  OptimizerSpec optimizer_used;    // effective spec, after stage adjustments
};

constexpr long kDefaultPretrainSteps = 300000;
constexpr long kDefaultFinetuneSteps = 150000;

AcousticTrainResult stage_pretrain(const corpus::Corpus& c,
                                   const std::filesystem::path& data_dir,
                                   const acoustic::ModelConfig& mc,
                                   const TrainSettings& s,
                                   embedding::Service& embeds,
                                   const std::filesystem::path& out_checkpoint);

// Fine-tune initialization: load the pretrained checkpoint and re-draw only
// the decoder group from `decoder_reset_seed`.
std::shared_ptr<acoustic::AcousticModel> finetune_init(
    const std::filesystem::path& pretrained, std::uint64_t decoder_reset_seed);

// finetune_init, then training with a 10x decoder LR multiplier.
AcousticTrainResult stage_finetune(const std::filesystem::path& pretrained,
                                   const corpus::Corpus& c,
                                   const std::filesystem::path& data_dir,
                                   const TrainSettings& s,
                                   std::uint64_t decoder_reset_seed,
                                   embedding::Service& embeds,
                                   const std::filesystem::path& out_checkpoint);

// One training example assembled from corpus + feature caches.
struct TrainExample {
  std::string utt_id;
  acoustic::ForwardInput input;
  acoustic::TrainTargets targets;
};

// Examples for the train split whose label_source is in `sources`.
std::vector<TrainExample> build_examples(
    const corpus::Corpus& c, const std::filesystem::path& data_dir,
    const acoustic::PhonemeVocab& vocab, embedding::Service& embeds,
    const std::vector<corpus::LabelSource>& sources, int history_len);

// --- verification harness --------------------------------------------------

// Toy-instance finite-difference check of one loss head. Heads: linear,
// detector_ce, label_mse, duration_mse, pitch_mse, energy_mse, mel_l1,
// acoustic_total. Returns the max relative error.
double gradient_check(const std::string& head, double eps = 1e-5);

}  // namespace spontts::pipeline
