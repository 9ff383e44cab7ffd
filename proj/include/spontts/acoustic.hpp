#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "spontts/corpus.hpp"
#include "spontts/embedding.hpp"
#include "spontts/features.hpp"
#include "spontts/labels.hpp"
#include "spontts/nn.hpp"

namespace spontts::acoustic {

// Phoneme token table. Reserved ids: 0 unused, 1 CLS, 2 utterance boundary.
struct PhonemeVocab {
  std::map<std::string, int> ids;
  static constexpr int kCls = 1;
  static constexpr int kSep = 2;
  int id_of(const std::string& phone) const;  // throws on unknown phoneme
  int size() const { return static_cast<int>(ids.size()) + 3; }
  static PhonemeVocab build(const corpus::Corpus& c);
};

struct ModelConfig {
  int dim = 256;  // model width d
  int heads = 2;
  int encoder_blocks = 2;
  int decoder_blocks = 2;
  int ff_dim = 1024;
  int vp_filter = 256;       // variance/label predictor conv filter
  int vp_kernel = 3;
  int history_hidden = 128;  // conversation history GRU
  int history_len = 5;       // previous utterances considered
  bool label_cross_entropy = false;  // classifier head instead of regression

  std::string canonical_json() const;
  std::uint64_t config_hash() const;
};

// Frame-level expansion: phoneme k's row repeated durations[k] times.
nn::Mat length_regulate(const nn::Mat& hidden,
                        const features::DurationSeq& durations);

// [CLS] + (phonemes + [SEP]) per non-null window entry; mask is all-true
// and row 0 is always the CLS slot.
std::pair<std::vector<int>, std::vector<bool>> build_conversation_sequence(
    const std::vector<const corpus::Utterance*>& window, const PhonemeVocab& v);

struct TrainTargets {
  features::DurationSeq durations;    // per phoneme
  std::vector<double> pitch, energy;  // per phoneme, raw units
  labels::PhonemeLabelSeq phoneme_labels;
  nn::Mat mel;  // sum(durations) x 80
};

struct LossBreakdown {
  double mel = 0, duration = 0, pitch = 0, energy = 0, label = 0;
  double total() const { return mel + duration + pitch + energy + label; }
};

struct SynthesisResult {
  nn::Mat mel;
  labels::PhonemeLabelSeq applied_labels;
  features::DurationSeq durations;
  bool labels_predicted = false;
};

struct ForwardInput {
  std::vector<int> phoneme_ids;        // n
  std::vector<bool> phoneme_mask;      // n, true = valid
  nn::Mat history;                     // (history_len + 1) x 512, oldest first
  std::vector<int> conv_ids;           // CLS-prefixed conversation sequence
  std::vector<bool> conv_mask;
};

class AcousticModel {
 public:
  AcousticModel(ModelConfig cfg, PhonemeVocab vocab, std::uint64_t seed);
  ~AcousticModel();

  const ModelConfig& config() const { return cfg_; }
  const PhonemeVocab& vocab() const { return vocab_; }

  // prosody target normalization, estimated before training
  double pitch_mean = 0.0, pitch_std = 1.0;
  double energy_mean = 0.0, energy_std = 1.0;
  long step = 0;

  // --- eval-mode building blocks (also used by tests) ----------------------
  nn::Mat encode_phonemes(const std::vector<int>& ids,
                          const std::vector<bool>& mask);
  Eigen::RowVectorXd encode_history(const nn::Mat& window);  // 1 x d
  nn::Mat encode_conversation(const std::vector<int>& conv_ids,
                              const std::vector<bool>& mask);
  // cross-attention output plus h_0 broadcast; h_c row 0 is the CLS state
  nn::Mat linguistic_attend(const nn::Mat& h_u, const nn::Mat& h_c,
                            const std::vector<bool>& conv_mask);
  nn::Mat predict_labels(const nn::Mat& hidden);  // n x 1 (or n x 4 logits)
  nn::Mat embed_labels(const labels::PhonemeLabelSeq& classes);

  // attention weights of the last linguistic_attend, per head
  const std::vector<nn::Mat>& last_cross_attention() const;

  // --- training ------------------------------------------------------------
  // Forward + full backward; gradients accumulate into the parameters.
  LossBreakdown forward_train(const ForwardInput& in, const TrainTargets& t);

  SynthesisResult synthesize(
      const ForwardInput& in,
      const std::optional<labels::PhonemeLabelSeq>& explicit_labels);

  // Fixed group order: encoder, history_encoder, linguistic_encoder,
  // label_predictor, label_embedding, variance_adaptor, decoder.
  std::vector<nn::ParamGroup> param_groups();
  std::vector<nn::Param*> all_params();

  // Re-draws the decoder group from a fresh seed; other groups untouched.
  void reset_decoder(std::uint64_t seed);

  static int label_class_from_estimate(double estimate);
  static int duration_frames_from_log(double log_duration);
  double log_duration_target(int frames) const;

 private:
  struct Layers;
  nn::Mat backbone_forward(const ForwardInput& in);  // caches for backward
  void backbone_backward(const nn::Mat& g_hu);

  ModelConfig cfg_;
  PhonemeVocab vocab_;
  std::unique_ptr<Layers> layers_;
  // caches between backbone_forward and backbone_backward
  nn::Mat cache_hu1_, cache_ling_;
  std::vector<bool> cache_mask_, cache_conv_mask_;
  long cache_n_ = 0;
};

// --- checkpoints -----------------------------------------------------------

inline const std::vector<std::string>& group_names() {
  static const std::vector<std::string> names{
      "encoder",         "history_encoder", "linguistic_encoder",
      "label_predictor", "label_embedding", "variance_adaptor",
      "decoder"};
  return names;
}

void save_checkpoint(AcousticModel& m, const std::filesystem::path& p);
std::shared_ptr<AcousticModel> load_checkpoint(const std::filesystem::path& p,
                                               bool ignore_hash_mismatch = false);

}  // namespace spontts::acoustic
