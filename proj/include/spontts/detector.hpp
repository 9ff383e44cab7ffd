#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <memory>
#include <string>
#include <vector>

#include "spontts/corpus.hpp"
#include "spontts/features.hpp"
#include "spontts/nn.hpp"

namespace spontts::detector {

enum class Behavior { filled_pause, prolongation };
enum class InputType { speech, text, text_speech };

std::string to_string(Behavior b);
std::string to_string(InputType t);
Behavior behavior_from_string(const std::string& s);
InputType input_type_from_string(const std::string& s);

struct DetectorConfig {
  Behavior behavior = Behavior::filled_pause;
  InputType input_type = InputType::text_speech;
  double threshold = 0.85;
  int cnn_channels = 32;
  int cnn_kernel = 3;
  std::vector<int> cnn_strides = {2, 2};
  int hidden = 64;          // BLSTM hidden size per direction
  int char_embed_dim = 64;
  int epochs = 50;
  double learning_rate = 1e-3;

  int stride_total() const;
  void validate() const;
};

struct DetectorScores {
  std::vector<double> values;  // positive-class posterior per character
};

struct DetectorMetrics {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  long tp = 0, fp = 0, fn = 0;
};

double f1_from_pr(double p, double r);

// Character token table; id 0 is reserved for unknown characters.
struct CharVocab {
  std::map<std::string, int> ids;
  int id_of(const std::string& ch) const;
  int size() const { return static_cast<int>(ids.size()) + 1; }
  static CharVocab build(const corpus::Corpus& c);
};

// CNN downsampling + span pooling + char-embedding fusion + BLSTM scorer.
class DetectorModel {
 public:
  DetectorModel(DetectorConfig cfg, CharVocab vocab, std::uint64_t seed);

  const DetectorConfig& config() const { return cfg_; }
  const CharVocab& vocab() const { return vocab_; }
  std::uint64_t seed() const { return seed_; }
  double mel_mean = 0.0, mel_std = 1.0;  // input normalization

  // CNN over (already normalized) frame features; length shrinks by the
  // stride product, short inputs are padded inside the convolution.
  nn::Mat downsample_acoustic(const nn::Mat& mel_norm);

  // Elementwise sum over each span; empty spans produce zero rows.
  static nn::Mat pool_to_chars(const nn::Mat& frame_feats,
                               const features::CharSpans& spans);

  // Fused BLSTM scoring; returns the positive-class softmax column.
  DetectorScores score_chars(const nn::Mat& char_acoustic,
                             const std::vector<int>& char_ids);

  // Full per-utterance path: normalize, downsample, rescale spans, pool,
  // fuse with character ids per the configured input type, score.
  DetectorScores score(const features::MelSpectrogram& mel,
                       const features::CharSpans& frame_spans,
                       const std::vector<std::string>& chars);

  // Training step helper: forward as in score(), then cross-entropy against
  // per-character binary targets. Accumulates parameter gradients.
  double train_step_loss(const features::MelSpectrogram& mel,
                         const features::CharSpans& frame_spans,
                         const std::vector<std::string>& chars,
                         const std::vector<int>& targets,
                         const std::vector<double>& class_weights);

  std::vector<nn::Param*> params();

 private:
  nn::Mat forward_logits(const nn::Mat& mel_norm,
                         const features::CharSpans& frame_spans,
                         const std::vector<int>& char_ids);
  void backward_logits(const nn::Mat& glogits);

  DetectorConfig cfg_;
  CharVocab vocab_;
  std::uint64_t seed_;
  std::vector<nn::Conv1d> convs_;
  std::vector<nn::ReLU> relus_;
  std::optional<nn::Embedding> char_embed_;
  std::optional<nn::BiLSTM> blstm_;
  std::optional<nn::Linear> out_;
  // caches for backward
  features::CharSpans pooled_spans_;
  long down_len_ = 0;
  std::vector<int> last_ids_;
};

std::vector<int> threshold_decisions(const DetectorScores& scores,
                                     double threshold);

// Micro-averaged precision/recall/F1 over aligned binary sequences.
DetectorMetrics evaluate_detector(const std::vector<std::vector<int>>& decisions,
                                  const std::vector<std::vector<int>>& references);

struct TrainingResult {
  std::shared_ptr<DetectorModel> model;
  std::vector<double> epoch_losses;
};

// Reads cached mel/duration features from data_dir/features. Trains on the
// train split with inverse-frequency class weights; deterministic in seed.
TrainingResult train_detector(const corpus::Corpus& c,
                              const std::filesystem::path& data_dir,
                              const DetectorConfig& cfg, std::uint64_t seed);

// Per-character binary reference for a behavior.
std::vector<int> behavior_targets(const labels::CharLabelSeq& labels,
                                  Behavior b);

void save_detector(const DetectorModel& m, const std::filesystem::path& p);
std::shared_ptr<DetectorModel> load_detector(const std::filesystem::path& p);

// Cache file stem for an utterance id ("conv:3" -> "conv_3").
std::string file_stem(const std::string& utt_id);

}  // namespace spontts::detector
