#include "spontts/detector.hpp"

#include <algorithm>
#include <numeric>

#include <json.hpp>

#include "spontts/util.hpp"

namespace spontts::detector {

namespace fs = std::filesystem;
using nn::Mat;
using nlohmann::json;

std::string to_string(Behavior b) {
  return b == Behavior::filled_pause ? "filled_pause" : "prolongation";
}
std::string to_string(InputType t) {
  switch (t) {
    case InputType::speech: return "speech";
    case InputType::text: return "text";
    case InputType::text_speech: return "text_speech";
  }
  return "text_speech";
}
Behavior behavior_from_string(const std::string& s) {
  if (s == "filled_pause" || s == "fp") return Behavior::filled_pause;
  if (s == "prolongation" || s == "pr") return Behavior::prolongation;
  throw ValidationError("unknown behavior: " + s);
}
InputType input_type_from_string(const std::string& s) {
  if (s == "speech") return InputType::speech;
  if (s == "text") return InputType::text;
  if (s == "text_speech" || s == "text+speech") return InputType::text_speech;
  throw ValidationError("unknown input type: " + s);
}

int DetectorConfig::stride_total() const {
  int s = 1;
  for (int v : cnn_strides) s *= v;
  return s;
}

void DetectorConfig::validate() const {
  if (threshold <= 0.0 || threshold >= 1.0)
    throw ValidationError("detector threshold must be in (0,1)");
  if (epochs < 1) throw ValidationError("detector epochs must be >= 1");
  if (cnn_channels <= 0 || hidden <= 0 || char_embed_dim <= 0)
    throw ValidationError("detector sizes must be positive");
  for (int s : cnn_strides)
    if (s < 1) throw ValidationError("cnn stride must be >= 1");
}

double f1_from_pr(double p, double r) {
  if (p + r <= 0.0) return 0.0;
  return 2.0 * p * r / (p + r);
}

int CharVocab::id_of(const std::string& ch) const {
  auto it = ids.find(ch);
  return it == ids.end() ? 0 : it->second;
}

CharVocab CharVocab::build(const corpus::Corpus& c) {
  CharVocab v;
  for (const auto& conv : c.conversations)
    for (const auto& u : conv.utterances)
      for (const auto& ch : u.chars)
        if (!v.ids.count(ch)) {
          int next = static_cast<int>(v.ids.size()) + 1;  // 0 = unknown
          v.ids[ch] = next;
        }
  return v;
}

std::string file_stem(const std::string& utt_id) {
  std::string s = utt_id;
  std::replace(s.begin(), s.end(), ':', '_');
  return s;
}

DetectorModel::DetectorModel(DetectorConfig cfg, CharVocab vocab,
                             std::uint64_t seed)
    : cfg_(std::move(cfg)), vocab_(std::move(vocab)), seed_(seed) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  int in_ch = features::kMelBins;
  for (std::size_t i = 0; i < cfg_.cnn_strides.size(); ++i) {
    convs_.emplace_back("conv" + std::to_string(i), in_ch, cfg_.cnn_channels,
                        cfg_.cnn_kernel, cfg_.cnn_strides[i], rng);
    relus_.emplace_back();
    in_ch = cfg_.cnn_channels;
  }
  char_embed_.emplace("char_embed", vocab_.size(), cfg_.char_embed_dim, rng);
  blstm_.emplace("blstm", cfg_.cnn_channels + cfg_.char_embed_dim, cfg_.hidden,
                 rng);
  out_.emplace("out", 2 * cfg_.hidden, 2, rng);
}

std::vector<nn::Param*> DetectorModel::params() {
  std::vector<nn::Param*> out;
  for (auto& c : convs_) c.collect(out);
  char_embed_->collect(out);
  blstm_->collect(out);
  out_->collect(out);
  return out;
}

Mat DetectorModel::downsample_acoustic(const Mat& mel_norm) {
  Mat h = mel_norm;
  for (std::size_t i = 0; i < convs_.size(); ++i)
    h = relus_[i].forward(convs_[i].forward(h));
  return h;
}

Mat DetectorModel::pool_to_chars(const Mat& frame_feats,
                                 const features::CharSpans& spans) {
  Mat out = Mat::Zero(static_cast<long>(spans.size()), frame_feats.cols());
  for (std::size_t k = 0; k < spans.size(); ++k) {
    auto [s, e] = spans[k];
    if (s < 0 || e > frame_feats.rows())
      throw ValidationError("pool_to_chars: span out of bounds");
    for (long r = s; r < e; ++r) out.row(static_cast<long>(k)) += frame_feats.row(r);
  }
  return out;
}

Mat DetectorModel::forward_logits(const Mat& mel_norm,
                                  const features::CharSpans& frame_spans,
                                  const std::vector<int>& char_ids) {
  if (frame_spans.size() != char_ids.size())
    throw ValidationError("detector: span/char count mismatch");
  Mat down = downsample_acoustic(mel_norm);
  down_len_ = down.rows();
  pooled_spans_ = features::rescale_spans(frame_spans, cfg_.stride_total(), down_len_);
  Mat acoustic = pool_to_chars(down, pooled_spans_);
  last_ids_ = char_ids;
  Mat text = char_embed_->forward(char_ids);
  if (cfg_.input_type == InputType::speech) text.setZero();
  if (cfg_.input_type == InputType::text) acoustic.setZero();
  Mat fused(acoustic.rows(), acoustic.cols() + text.cols());
  fused << acoustic, text;
  return out_->forward(blstm_->forward(fused));
}

void DetectorModel::backward_logits(const Mat& glogits) {
  Mat gfused = blstm_->backward(out_->backward(glogits));
  Mat gacoustic = gfused.leftCols(cfg_.cnn_channels);
  Mat gtext = gfused.rightCols(cfg_.char_embed_dim);
  if (cfg_.input_type != InputType::speech) char_embed_->backward(gtext);
  if (cfg_.input_type == InputType::text) return;
  // un-pool: broadcast each character gradient over its span
  Mat gdown = Mat::Zero(down_len_, cfg_.cnn_channels);
  for (std::size_t k = 0; k < pooled_spans_.size(); ++k) {
    auto [s, e] = pooled_spans_[k];
    for (long r = s; r < e; ++r) gdown.row(r) += gacoustic.row(static_cast<long>(k));
  }
  Mat g = gdown;
  for (long i = static_cast<long>(convs_.size()) - 1; i >= 0; --i)
    g = convs_[static_cast<std::size_t>(i)].backward(
        relus_[static_cast<std::size_t>(i)].backward(g));
}

DetectorScores DetectorModel::score_chars(const Mat& char_acoustic,
                                          const std::vector<int>& char_ids) {
  if (char_acoustic.rows() != static_cast<long>(char_ids.size()))
    throw ValidationError("score_chars: length mismatch");
  Mat text = char_embed_->forward(char_ids);
  if (cfg_.input_type == InputType::speech) text.setZero();
  Mat ac = char_acoustic;
  if (cfg_.input_type == InputType::text) ac.setZero();
  Mat fused(ac.rows(), ac.cols() + text.cols());
  fused << ac, text;
  Mat probs = nn::softmax_rows(out_->forward(blstm_->forward(fused)));
  DetectorScores s;
  for (long i = 0; i < probs.rows(); ++i) s.values.push_back(probs(i, 1));
  return s;
}

DetectorScores DetectorModel::score(const features::MelSpectrogram& mel,
                                    const features::CharSpans& frame_spans,
                                    const std::vector<std::string>& chars) {
  std::vector<int> ids;
  for (const auto& ch : chars) ids.push_back(vocab_.id_of(ch));
  Mat norm = (mel.frames.array() - mel_mean) / mel_std;
  Mat probs = nn::softmax_rows(forward_logits(norm, frame_spans, ids));
  DetectorScores s;
  for (long i = 0; i < probs.rows(); ++i) s.values.push_back(probs(i, 1));
  return s;
}

double DetectorModel::train_step_loss(const features::MelSpectrogram& mel,
                                      const features::CharSpans& frame_spans,
                                      const std::vector<std::string>& chars,
                                      const std::vector<int>& targets,
                                      const std::vector<double>& class_weights) {
  std::vector<int> ids;
  for (const auto& ch : chars) ids.push_back(vocab_.id_of(ch));
  Mat norm = (mel.frames.array() - mel_mean) / mel_std;
  Mat logits = forward_logits(norm, frame_spans, ids);
  auto loss = nn::cross_entropy(logits, targets, class_weights);
  backward_logits(loss.grad);
  return loss.value;
}

std::vector<int> threshold_decisions(const DetectorScores& scores,
                                     double threshold) {
  std::vector<int> out;
  for (double s : scores.values) out.push_back(s >= threshold ? 1 : 0);
  return out;
}

DetectorMetrics evaluate_detector(const std::vector<std::vector<int>>& decisions,
                                  const std::vector<std::vector<int>>& references) {
  if (decisions.size() != references.size())
    throw ValidationError("evaluate_detector: utterance count mismatch");
  DetectorMetrics m;
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    if (decisions[i].size() != references[i].size())
      throw ValidationError("evaluate_detector: length mismatch in utterance " +
                            std::to_string(i));
    for (std::size_t j = 0; j < decisions[i].size(); ++j) {
      const bool d = decisions[i][j] != 0, r = references[i][j] != 0;
      if (d && r) ++m.tp;
      else if (d && !r) ++m.fp;
      else if (!d && r) ++m.fn;
    }
  }
  m.precision = m.tp + m.fp > 0 ? static_cast<double>(m.tp) / (m.tp + m.fp) : 0.0;
  m.recall = m.tp + m.fn > 0 ? static_cast<double>(m.tp) / (m.tp + m.fn) : 0.0;
  m.f1 = f1_from_pr(m.precision, m.recall);
  return m;
}

std::vector<int> behavior_targets(const labels::CharLabelSeq& char_labels,
                                  Behavior b) {
  std::vector<int> out;
  for (int c : char_labels) {
    auto flags = labels::decompose(c);
    out.push_back((b == Behavior::filled_pause ? flags.filled_pause
                                               : flags.prolongation)
                      ? 1
                      : 0);
  }
  return out;
}

TrainingResult train_detector(const corpus::Corpus& c, const fs::path& data_dir,
                              const DetectorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  struct Sample {
    features::MelSpectrogram mel;
    features::CharSpans spans;
    const corpus::Utterance* utt;
    std::vector<int> targets;
  };
  std::vector<Sample> samples;
  long positives = 0, total_chars = 0;
  for (const auto& conv : c.conversations) {
    for (const auto& u : conv.utterances) {
      auto split = c.split.find(u.id);
      if (split != c.split.end() && split->second == corpus::Split::test) continue;
      if (!u.char_labels) continue;
      if (u.label_source == corpus::LabelSource::none ||
          u.label_source == corpus::LabelSource::pseudo)
        continue;
      fs::path mel_path = data_dir / "features" / (file_stem(u.id) + ".mel");
      fs::path dur_path = data_dir / "features" / (file_stem(u.id) + ".dur");
      if (!fs::exists(mel_path) || !fs::exists(dur_path))
        throw ValidationError("missing cached features for " + u.id +
                              " (run prepare first)");
      Sample s;
      s.mel = features::read_mel_cache(mel_path);
      auto durations = features::read_durations(dur_path);
      s.spans = features::char_spans_from_durations(durations, u.grouping);
      s.utt = &u;
      s.targets = behavior_targets(*u.char_labels, cfg.behavior);
      for (int t : s.targets) positives += t;
      total_chars += static_cast<long>(s.targets.size());
      samples.push_back(std::move(s));
    }
  }
  if (samples.empty())
    throw ValidationError("no labeled training utterances with features");

  // inverse-frequency class weights; collapse to uniform when degenerate
  std::vector<double> weights{1.0, 1.0};
  if (positives > 0 && positives < total_chars) {
    weights[0] = static_cast<double>(total_chars) / (2.0 * (total_chars - positives));
    weights[1] = static_cast<double>(total_chars) / (2.0 * positives);
  }

  auto model = std::make_shared<DetectorModel>(cfg, CharVocab::build(c), seed);
  double sum = 0.0, sq = 0.0;
  long n = 0;
  for (const auto& s : samples) {
    sum += s.mel.frames.sum();
    sq += s.mel.frames.array().square().sum();
    n += s.mel.frames.size();
  }
  model->mel_mean = sum / n;
  model->mel_std = std::sqrt(std::max(sq / n - model->mel_mean * model->mel_mean, 1e-12));

  nn::Adam opt({{"detector", model->params(), 1.0}}, 0.9, 0.999, 1e-8);
  std::mt19937_64 shuffle_rng(seed ^ 0xd1b54a32d192ed03ULL);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);

  TrainingResult result;
  result.model = model;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates with the deterministic helper
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng_index(shuffle_rng, i)]);
    double epoch_loss = 0.0;
    for (std::size_t idx : order) {
      const Sample& s = samples[idx];
      opt.zero_grad();
      epoch_loss += model->train_step_loss(s.mel, s.spans, s.utt->chars,
                                           s.targets, weights);
      opt.step(cfg.learning_rate);
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(samples.size()));
  }
  return result;
}

// --- checkpoint ------------------------------------------------------------

namespace {
constexpr char kMagic[] = "SPDT";
constexpr std::uint32_t kVersion = 1;

void put_u32c(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
std::uint32_t get_u32c(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (std::uint32_t(p[3]) << 24);
}
}  // namespace

void save_detector(const DetectorModel& m, const fs::path& p) {
  json header{{"behavior", to_string(m.config().behavior)},
              {"input_type", to_string(m.config().input_type)},
              {"threshold", m.config().threshold},
              {"cnn_channels", m.config().cnn_channels},
              {"cnn_kernel", m.config().cnn_kernel},
              {"cnn_strides", m.config().cnn_strides},
              {"hidden", m.config().hidden},
              {"char_embed_dim", m.config().char_embed_dim},
              {"epochs", m.config().epochs},
              {"learning_rate", m.config().learning_rate},
              {"seed", m.seed()},
              {"mel_mean", m.mel_mean},
              {"mel_std", m.mel_std}};
  json vocab = json::object();
  for (const auto& [ch, id] : m.vocab().ids) vocab[ch] = id;
  header["vocab"] = vocab;
  std::string hdr = header.dump();
  std::string blob =
      nn::serialize_params(const_cast<DetectorModel&>(m).params());
  std::string out(kMagic, 4);
  put_u32c(out, kVersion);
  put_u32c(out, static_cast<std::uint32_t>(hdr.size()));
  out += hdr;
  out += blob;
  write_file_atomic(p, out);
}

std::shared_ptr<DetectorModel> load_detector(const fs::path& p) {
  std::string raw = read_text_file(p);
  if (raw.size() < 12 || raw.compare(0, 4, kMagic) != 0)
    throw ValidationError("not a detector checkpoint: " + p.string());
  const auto* b = reinterpret_cast<const unsigned char*>(raw.data());
  if (get_u32c(b + 4) != kVersion)
    throw ValidationError("unsupported detector checkpoint version");
  std::uint32_t hdr_len = get_u32c(b + 8);
  json header = json::parse(raw.substr(12, hdr_len));
  DetectorConfig cfg;
  cfg.behavior = behavior_from_string(header.at("behavior"));
  cfg.input_type = input_type_from_string(header.at("input_type"));
  cfg.threshold = header.at("threshold");
  cfg.cnn_channels = header.at("cnn_channels");
  cfg.cnn_kernel = header.at("cnn_kernel");
  cfg.cnn_strides = header.at("cnn_strides").get<std::vector<int>>();
  cfg.hidden = header.at("hidden");
  cfg.char_embed_dim = header.at("char_embed_dim");
  cfg.epochs = header.at("epochs");
  cfg.learning_rate = header.at("learning_rate");
  CharVocab vocab;
  for (auto& [ch, id] : header.at("vocab").items())
    vocab.ids[ch] = id.get<int>();
  auto model = std::make_shared<DetectorModel>(cfg, vocab,
                                               header.at("seed").get<std::uint64_t>());
  model->mel_mean = header.at("mel_mean");
  model->mel_std = header.at("mel_std");
  nn::deserialize_params(raw.substr(12 + hdr_len), model->params());
  return model;
}

}  // namespace spontts::detector
