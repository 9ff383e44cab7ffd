#include "spontts/acoustic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "spontts/util.hpp"

namespace spontts::acoustic {

namespace fs = std::filesystem;
using nn::Mat;
using nlohmann::json;

int PhonemeVocab::id_of(const std::string& phone) const {
  auto it = ids.find(phone);
  if (it == ids.end())
    throw ValidationError("unknown phoneme symbol: " + phone);
  return it->second;
}

PhonemeVocab PhonemeVocab::build(const corpus::Corpus& c) {
  PhonemeVocab v;
  int next = 3;  // after reserved ids
  for (const auto& conv : c.conversations)
    for (const auto& u : conv.utterances)
      for (const auto& p : u.phonemes)
        if (!v.ids.count(p)) v.ids[p] = next++;
  return v;
}

std::string ModelConfig::canonical_json() const {
  json j{{"dim", dim},
         {"heads", heads},
         {"encoder_blocks", encoder_blocks},
         {"decoder_blocks", decoder_blocks},
         {"ff_dim", ff_dim},
         {"vp_filter", vp_filter},
         {"vp_kernel", vp_kernel},
         {"history_hidden", history_hidden},
         {"history_len", history_len},
         {"label_cross_entropy", label_cross_entropy}};
  return j.dump();
}

std::uint64_t ModelConfig::config_hash() const {
  return fnv1a64(canonical_json());
}

Mat length_regulate(const Mat& hidden, const features::DurationSeq& durations) {
  if (hidden.rows() != static_cast<long>(durations.size()))
    throw ValidationError("length_regulate: duration count mismatch");
  long total = 0;
  for (int d : durations) {
    if (d < 0) throw ValidationError("length_regulate: negative duration");
    total += d;
  }
  Mat out(total, hidden.cols());
  long cursor = 0;
  for (std::size_t k = 0; k < durations.size(); ++k)
    for (int j = 0; j < durations[k]; ++j)
      out.row(cursor++) = hidden.row(static_cast<long>(k));
  return out;
}

std::pair<std::vector<int>, std::vector<bool>> build_conversation_sequence(
    const std::vector<const corpus::Utterance*>& window, const PhonemeVocab& v) {
  std::vector<int> ids{PhonemeVocab::kCls};
  for (const corpus::Utterance* u : window) {
    if (u == nullptr) continue;
    for (const auto& p : u->phonemes) ids.push_back(v.id_of(p));
    ids.push_back(PhonemeVocab::kSep);
  }
  return {ids, std::vector<bool>(ids.size(), true)};
}

// --- internal layer bundle -------------------------------------------------

namespace {

// FastSpeech 2 style predictor: two conv+ReLU+LayerNorm stages and a linear
// output head.
struct VariancePredictor {
  nn::Conv1d c1, c2;
  nn::ReLU r1, r2;
  nn::LayerNorm ln1, ln2;
  nn::Linear head;

  VariancePredictor(const std::string& name, int dim, int filter, int kernel,
                    int out_dim, std::mt19937_64& rng)
      : c1(name + ".c1", dim, filter, kernel, 1, rng),
        c2(name + ".c2", filter, filter, kernel, 1, rng),
        ln1(name + ".ln1", filter),
        ln2(name + ".ln2", filter),
        head(name + ".head", filter, out_dim, rng) {}

  Mat forward(const Mat& x) {
    Mat h = ln1.forward(r1.forward(c1.forward(x)));
    h = ln2.forward(r2.forward(c2.forward(h)));
    return head.forward(h);
  }
  Mat backward(const Mat& gy) {
    Mat g = head.backward(gy);
    g = c2.backward(r2.backward(ln2.backward(g)));
    return c1.backward(r1.backward(ln1.backward(g)));
  }
  void collect(std::vector<nn::Param*>& out) {
    c1.collect(out);
    c2.collect(out);
    ln1.collect(out);
    ln2.collect(out);
    head.collect(out);
  }
};

}  // namespace

struct AcousticModel::Layers {
  nn::Embedding enc_embed;
  std::vector<nn::TransformerBlock> enc_blocks;
  nn::GRU hist_gru;
  nn::Linear hist_proj;
  nn::Embedding conv_embed;
  std::vector<nn::TransformerBlock> conv_blocks;
  nn::MultiHeadAttention cross;
  VariancePredictor label_pred;
  nn::Embedding label_embed;
  VariancePredictor dur_pred, pitch_pred, energy_pred;
  nn::Linear pitch_proj, energy_proj;
  std::vector<nn::TransformerBlock> dec_blocks;
  nn::Linear mel_out;

  Layers(const ModelConfig& cfg, int vocab_size, std::mt19937_64& rng)
      : enc_embed("encoder.embed", vocab_size, cfg.dim, rng),
        hist_gru("history_encoder.gru", embedding::kDim, cfg.history_hidden, rng),
        hist_proj("history_encoder.proj", cfg.history_hidden, cfg.dim, rng),
        conv_embed("linguistic_encoder.embed", vocab_size, cfg.dim, rng),
        cross("linguistic_encoder.cross", cfg.dim, cfg.heads, rng),
        label_pred("label_predictor.vp", cfg.dim, cfg.vp_filter, cfg.vp_kernel,
                   cfg.label_cross_entropy ? labels::kNumClasses : 1, rng),
        label_embed("label_embedding.table", labels::kNumClasses, cfg.dim, rng),
        dur_pred("variance_adaptor.duration", cfg.dim, cfg.vp_filter,
                 cfg.vp_kernel, 1, rng),
        pitch_pred("variance_adaptor.pitch", cfg.dim, cfg.vp_filter,
                   cfg.vp_kernel, 1, rng),
        energy_pred("variance_adaptor.energy", cfg.dim, cfg.vp_filter,
                    cfg.vp_kernel, 1, rng),
        pitch_proj("variance_adaptor.pitch_proj", 1, cfg.dim, rng),
        energy_proj("variance_adaptor.energy_proj", 1, cfg.dim, rng),
        mel_out("decoder.mel_out", cfg.dim, features::kMelBins, rng) {
    for (int i = 0; i < cfg.encoder_blocks; ++i)
      enc_blocks.emplace_back("encoder.block" + std::to_string(i), cfg.dim,
                              cfg.heads, cfg.ff_dim, rng);
    for (int i = 0; i < cfg.encoder_blocks; ++i)
      conv_blocks.emplace_back("linguistic_encoder.block" + std::to_string(i),
                               cfg.dim, cfg.heads, cfg.ff_dim, rng);
    for (int i = 0; i < cfg.decoder_blocks; ++i)
      dec_blocks.emplace_back("decoder.block" + std::to_string(i), cfg.dim,
                              cfg.heads, cfg.ff_dim, rng);
  }
};

AcousticModel::AcousticModel(ModelConfig cfg, PhonemeVocab vocab,
                             std::uint64_t seed)
    : cfg_(std::move(cfg)), vocab_(std::move(vocab)) {
  std::mt19937_64 rng(seed);
  // Transformer blocks are built inside Layers after the flat members, so
  // construction order (and thus the parameter draw order) is fixed.
  layers_ = std::make_unique<Layers>(cfg_, vocab_.size(), rng);
}

AcousticModel::~AcousticModel() = default;

std::vector<nn::ParamGroup> AcousticModel::param_groups() {
  Layers& L = *layers_;
  std::vector<nn::ParamGroup> groups(7);
  groups[0].name = "encoder";
  L.enc_embed.collect(groups[0].params);
  for (auto& b : L.enc_blocks) b.collect(groups[0].params);
  groups[1].name = "history_encoder";
  L.hist_gru.collect(groups[1].params);
  L.hist_proj.collect(groups[1].params);
  groups[2].name = "linguistic_encoder";
  L.conv_embed.collect(groups[2].params);
  for (auto& b : L.conv_blocks) b.collect(groups[2].params);
  L.cross.collect(groups[2].params);
  groups[3].name = "label_predictor";
  L.label_pred.collect(groups[3].params);
  groups[4].name = "label_embedding";
  L.label_embed.collect(groups[4].params);
  groups[5].name = "variance_adaptor";
  L.dur_pred.collect(groups[5].params);
  L.pitch_pred.collect(groups[5].params);
  L.energy_pred.collect(groups[5].params);
  L.pitch_proj.collect(groups[5].params);
  L.energy_proj.collect(groups[5].params);
  groups[6].name = "decoder";
  for (auto& b : L.dec_blocks) b.collect(groups[6].params);
  L.mel_out.collect(groups[6].params);
  return groups;
}

std::vector<nn::Param*> AcousticModel::all_params() {
  std::vector<nn::Param*> out;
  for (auto& g : param_groups())
    out.insert(out.end(), g.params.begin(), g.params.end());
  return out;
}

void AcousticModel::reset_decoder(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Layers& L = *layers_;
  L.dec_blocks.clear();
  for (int i = 0; i < cfg_.decoder_blocks; ++i)
    L.dec_blocks.emplace_back("decoder.block" + std::to_string(i), cfg_.dim,
                              cfg_.heads, cfg_.ff_dim, rng);
  L.mel_out = nn::Linear("decoder.mel_out", cfg_.dim, features::kMelBins, rng);
}

// --- building blocks -------------------------------------------------------

nn::Mat AcousticModel::encode_phonemes(const std::vector<int>& ids,
                                       const std::vector<bool>& mask) {
  if (ids.size() != mask.size())
    throw ValidationError("encode_phonemes: mask length mismatch");
  Layers& L = *layers_;
  Mat x = L.enc_embed.forward(ids) +
          nn::positional_encoding(static_cast<long>(ids.size()), cfg_.dim);
  for (auto& b : L.enc_blocks) x = b.forward(x, mask);
  return x;
}

Eigen::RowVectorXd AcousticModel::encode_history(const nn::Mat& window) {
  if (window.rows() != cfg_.history_len + 1 || window.cols() != embedding::kDim)
    throw ValidationError("encode_history: expected " +
                          std::to_string(cfg_.history_len + 1) + " x " +
                          std::to_string(embedding::kDim) + " window");
  Layers& L = *layers_;
  Mat states = L.hist_gru.forward(window);
  return L.hist_proj.forward(states.bottomRows(1)).row(0);
}

nn::Mat AcousticModel::encode_conversation(const std::vector<int>& conv_ids,
                                           const std::vector<bool>& mask) {
  if (conv_ids.empty() || conv_ids[0] != PhonemeVocab::kCls)
    throw ValidationError("encode_conversation: sequence must start with CLS");
  if (!mask.empty() && !mask[0])
    throw ValidationError("encode_conversation: CLS slot must not be masked");
  Layers& L = *layers_;
  Mat x = L.conv_embed.forward(conv_ids) +
          nn::positional_encoding(static_cast<long>(conv_ids.size()), cfg_.dim);
  for (auto& b : L.conv_blocks) x = b.forward(x, mask);
  return x;
}

nn::Mat AcousticModel::linguistic_attend(const nn::Mat& h_u, const nn::Mat& h_c,
                                         const std::vector<bool>& conv_mask) {
  Layers& L = *layers_;
  // CLS contributes through h_0, not as an attention key
  std::vector<bool> key_mask = conv_mask;
  key_mask[0] = false;
  Mat cross_out = L.cross.forward(h_u, h_c, key_mask);
  return cross_out.rowwise() + h_c.row(0);
}

const std::vector<nn::Mat>& AcousticModel::last_cross_attention() const {
  return layers_->cross.last_attention();
}

nn::Mat AcousticModel::predict_labels(const nn::Mat& hidden) {
  return layers_->label_pred.forward(hidden);
}

nn::Mat AcousticModel::embed_labels(const labels::PhonemeLabelSeq& classes) {
  for (int c : classes)
    if (c < 0 || c >= labels::kNumClasses)
      throw ValidationError("embed_labels: class out of range");
  return layers_->label_embed.forward(std::vector<int>(classes.begin(), classes.end()));
}

int AcousticModel::label_class_from_estimate(double estimate) {
  return std::clamp(static_cast<int>(std::lround(estimate)), 0,
                    labels::kNumClasses - 1);
}

int AcousticModel::duration_frames_from_log(double log_duration) {
  return std::max(1, static_cast<int>(std::lround(std::exp(log_duration))));
}

double AcousticModel::log_duration_target(int frames) const {
  return std::log(static_cast<double>(std::max(frames, 1)));
}

// --- shared backbone -------------------------------------------------------

nn::Mat AcousticModel::backbone_forward(const ForwardInput& in) {
  const long n = static_cast<long>(in.phoneme_ids.size());
  if (n == 0) throw ValidationError("empty phoneme sequence");
  cache_n_ = n;
  cache_mask_ = in.phoneme_mask;
  cache_conv_mask_ = in.conv_mask;

  Mat h_u0 = encode_phonemes(in.phoneme_ids, in.phoneme_mask);
  Eigen::RowVectorXd hist = encode_history(in.history);
  cache_hu1_ = h_u0.rowwise() + hist;
  Mat h_c = encode_conversation(in.conv_ids, in.conv_mask);
  cache_ling_ = linguistic_attend(cache_hu1_, h_c, in.conv_mask);
  return cache_hu1_ + cache_ling_;
}

void AcousticModel::backbone_backward(const nn::Mat& g_hu) {
  Layers& L = *layers_;
  // linguistic branch: out = cross(h_u1, h_c) + h_0 broadcast
  Eigen::RowVectorXd gh0 = g_hu.colwise().sum();
  auto [gq, gkv] = L.cross.backward(g_hu);
  gkv.row(0) += gh0;
  Mat g = gkv;
  for (auto it = L.conv_blocks.rbegin(); it != L.conv_blocks.rend(); ++it)
    g = it->backward(g);
  L.conv_embed.backward(g);

  Mat g_hu1 = g_hu + gq;  // residual + attention query path
  // history branch: broadcast add means the gradient sums over rows
  Eigen::RowVectorXd ghist = g_hu1.colwise().sum();
  Mat ggru_last = L.hist_proj.backward(Mat(ghist));
  Mat ggru = Mat::Zero(cfg_.history_len + 1, cfg_.history_hidden);
  ggru.row(cfg_.history_len) = ggru_last.row(0);
  L.hist_gru.backward(ggru);
  // utterance encoder
  g = g_hu1;
  for (auto it = L.enc_blocks.rbegin(); it != L.enc_blocks.rend(); ++it)
    g = it->backward(g);
  L.enc_embed.backward(g);
}

// --- training --------------------------------------------------------------

LossBreakdown AcousticModel::forward_train(const ForwardInput& in,
                                           const TrainTargets& t) {
  Layers& L = *layers_;
  const long n = static_cast<long>(in.phoneme_ids.size());
  if (static_cast<long>(t.durations.size()) != n ||
      static_cast<long>(t.pitch.size()) != n ||
      static_cast<long>(t.energy.size()) != n ||
      static_cast<long>(t.phoneme_labels.size()) != n)
    throw ValidationError("forward_train: target length mismatch");
  const long total_frames =
      std::accumulate(t.durations.begin(), t.durations.end(), 0L);
  if (t.mel.rows() != total_frames || t.mel.cols() != features::kMelBins)
    throw ValidationError("forward_train: mel target shape mismatch");

  Mat h_u = backbone_forward(in);

  // label head (teacher-forced embedding, predictor trained on ground truth)
  Mat label_out = L.label_pred.forward(h_u);
  nn::LossResult label_loss;
  if (cfg_.label_cross_entropy) {
    label_loss = nn::cross_entropy(label_out,
                                   std::vector<int>(t.phoneme_labels.begin(),
                                                    t.phoneme_labels.end()));
  } else {
    Mat label_target(n, 1);
    for (long i = 0; i < n; ++i) label_target(i, 0) = t.phoneme_labels[i];
    label_loss = nn::mse_loss(label_out, label_target);
  }

  Mat h = h_u + embed_labels(t.phoneme_labels);

  Mat dur_target(n, 1), pitch_target(n, 1), energy_target(n, 1);
  for (long i = 0; i < n; ++i) {
    dur_target(i, 0) = log_duration_target(t.durations[i]);
    pitch_target(i, 0) = (t.pitch[i] - pitch_mean) / pitch_std;
    energy_target(i, 0) = (t.energy[i] - energy_mean) / energy_std;
  }
  Mat dur_out = L.dur_pred.forward(h);
  Mat pitch_out = L.pitch_pred.forward(h);
  Mat energy_out = L.energy_pred.forward(h);
  auto dur_loss = nn::mse_loss(dur_out, dur_target);
  auto pitch_loss = nn::mse_loss(pitch_out, pitch_target);
  auto energy_loss = nn::mse_loss(energy_out, energy_target);

  Mat h2 = h + L.pitch_proj.forward(pitch_target) +
           L.energy_proj.forward(energy_target);

  Mat expanded = length_regulate(h2, t.durations);
  Mat xd = expanded + nn::positional_encoding(expanded.rows(), cfg_.dim);
  std::vector<bool> frame_mask(static_cast<std::size_t>(expanded.rows()), true);
  for (auto& b : L.dec_blocks) xd = b.forward(xd, frame_mask);
  Mat mel_hat = L.mel_out.forward(xd);
  auto mel_loss = nn::l1_loss(mel_hat, t.mel);

  // ---- backward -----------------------------------------------------------
  Mat g = L.mel_out.backward(mel_loss.grad);
  for (auto it = L.dec_blocks.rbegin(); it != L.dec_blocks.rend(); ++it)
    g = it->backward(g);
  Mat gh2 = Mat::Zero(n, cfg_.dim);
  long cursor = 0;
  for (long k = 0; k < n; ++k)
    for (int j = 0; j < t.durations[static_cast<std::size_t>(k)]; ++j)
      gh2.row(k) += g.row(cursor++);
  L.pitch_proj.backward(gh2);   // parameter grads only; input is a target
  L.energy_proj.backward(gh2);
  Mat gh = gh2;
  gh += L.dur_pred.backward(dur_loss.grad);
  gh += L.pitch_pred.backward(pitch_loss.grad);
  gh += L.energy_pred.backward(energy_loss.grad);
  L.label_embed.backward(gh);
  Mat g_hu = gh + L.label_pred.backward(label_loss.grad);
  backbone_backward(g_hu);

  LossBreakdown out;
  out.mel = mel_loss.value;
  out.duration = dur_loss.value;
  out.pitch = pitch_loss.value;
  out.energy = energy_loss.value;
  out.label = label_loss.value;
  return out;
}

SynthesisResult AcousticModel::synthesize(
    const ForwardInput& in,
    const std::optional<labels::PhonemeLabelSeq>& explicit_labels) {
  Layers& L = *layers_;
  const long n = static_cast<long>(in.phoneme_ids.size());
  Mat h_u = backbone_forward(in);
  Mat label_out = L.label_pred.forward(h_u);

  SynthesisResult res;
  if (explicit_labels) {
    if (static_cast<long>(explicit_labels->size()) != n)
      throw ValidationError("explicit label length does not match phonemes");
    res.applied_labels = *explicit_labels;
  } else {
    res.labels_predicted = true;
    for (long i = 0; i < n; ++i) {
      if (cfg_.label_cross_entropy) {
        long best = 0;
        label_out.row(i).maxCoeff(&best);
        res.applied_labels.push_back(static_cast<int>(best));
      } else {
        res.applied_labels.push_back(label_class_from_estimate(label_out(i, 0)));
      }
    }
  }

  Mat h = h_u + embed_labels(res.applied_labels);
  Mat dur_out = L.dur_pred.forward(h);
  Mat pitch_out = L.pitch_pred.forward(h);
  Mat energy_out = L.energy_pred.forward(h);
  for (long i = 0; i < n; ++i)
    res.durations.push_back(duration_frames_from_log(dur_out(i, 0)));
  Mat h2 = h + L.pitch_proj.forward(pitch_out) + L.energy_proj.forward(energy_out);
  Mat expanded = length_regulate(h2, res.durations);
  Mat xd = expanded + nn::positional_encoding(expanded.rows(), cfg_.dim);
  std::vector<bool> frame_mask(static_cast<std::size_t>(expanded.rows()), true);
  for (auto& b : L.dec_blocks) xd = b.forward(xd, frame_mask);
  res.mel = L.mel_out.forward(xd);
  return res;
}

// --- checkpoints -----------------------------------------------------------

namespace {
constexpr char kMagic[] = "SPAC";
constexpr std::uint32_t kVersion = 1;
void put_u32a(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
std::uint32_t get_u32a(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (std::uint32_t(p[3]) << 24);
}
}  // namespace

void save_checkpoint(AcousticModel& m, const fs::path& p) {
  const ModelConfig& c = m.config();
  json header{{"config", json::parse(c.canonical_json())},
              {"config_hash", to_hex(c.config_hash())},
              {"step", m.step},
              {"pitch_mean", m.pitch_mean},
              {"pitch_std", m.pitch_std},
              {"energy_mean", m.energy_mean},
              {"energy_std", m.energy_std},
              {"groups", group_names()}};
  json vocab = json::object();
  for (const auto& [ph, id] : m.vocab().ids) vocab[ph] = id;
  header["vocab"] = vocab;
  std::string hdr = header.dump();
  std::string blob = nn::serialize_params(m.all_params());
  std::string out(kMagic, 4);
  put_u32a(out, kVersion);
  put_u32a(out, static_cast<std::uint32_t>(hdr.size()));
  out += hdr;
  out += blob;
  write_file_atomic(p, out);
}

std::shared_ptr<AcousticModel> load_checkpoint(const fs::path& p,
                                               bool ignore_hash_mismatch) {
  std::string raw = read_text_file(p);
  if (raw.size() < 12 || raw.compare(0, 4, kMagic) != 0)
    throw ValidationError("not a model checkpoint: " + p.string());
  const auto* b = reinterpret_cast<const unsigned char*>(raw.data());
  if (get_u32a(b + 4) != kVersion)
    throw ValidationError("unsupported checkpoint version");
  std::uint32_t hdr_len = get_u32a(b + 8);
  json header = json::parse(raw.substr(12, hdr_len));
  json jc = header.at("config");
  ModelConfig cfg;
  cfg.dim = jc.at("dim");
  cfg.heads = jc.at("heads");
  cfg.encoder_blocks = jc.at("encoder_blocks");
  cfg.decoder_blocks = jc.at("decoder_blocks");
  cfg.ff_dim = jc.at("ff_dim");
  cfg.vp_filter = jc.at("vp_filter");
  cfg.vp_kernel = jc.at("vp_kernel");
  cfg.history_hidden = jc.at("history_hidden");
  cfg.history_len = jc.at("history_len");
  cfg.label_cross_entropy = jc.at("label_cross_entropy");
  const std::string recorded = header.at("config_hash");
  if (recorded != to_hex(cfg.config_hash()) && !ignore_hash_mismatch)
    throw ValidationError("checkpoint config hash mismatch in " + p.string() +
                          " (pass the override flag to load anyway)");
  PhonemeVocab vocab;
  for (auto& [ph, id] : header.at("vocab").items())
    vocab.ids[ph] = id.get<int>();
  auto model = std::make_shared<AcousticModel>(cfg, vocab, 0);
  model->step = header.at("step");
  model->pitch_mean = header.at("pitch_mean");
  model->pitch_std = header.at("pitch_std");
  model->energy_mean = header.at("energy_mean");
  model->energy_std = header.at("energy_std");
  nn::deserialize_params(raw.substr(12 + hdr_len), model->all_params());
  return model;
}

}  // namespace spontts::acoustic
