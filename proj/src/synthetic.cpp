#include "spontts/synthetic.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "spontts/features.hpp"
#include "spontts/util.hpp"

namespace spontts::synthetic {

namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;

struct CharDraw {
  std::string ch;
  std::vector<std::string> phones;
  std::vector<int> frames;  // per phoneme, after any stretch
  int label = 0;
  bool fp_signature = false;  // acoustically marked filled pause
};

double phoneme_freq(const std::string& phone) {
  return 180.0 + 17.0 * static_cast<double>(fnv1a64(phone) % 25);
}

void synth_phoneme(std::vector<double>& out, std::size_t start_sample,
                   std::size_t n_samples, double f0, bool fp_signature) {
  const double sr = features::kSampleRate;
  for (std::size_t i = 0; i < n_samples; ++i) {
    double t = static_cast<double>(i) / sr;
    double s;
    if (fp_signature) {
      s = 0.55 * std::sin(2.0 * kPi * 110.0 * t) +
          0.25 * std::sin(2.0 * kPi * 220.0 * t) +
          0.35 * std::sin(2.0 * kPi * 2800.0 * t);
    } else {
      s = 0.35 * std::sin(2.0 * kPi * f0 * t) +
          0.15 * std::sin(2.0 * kPi * 2.0 * f0 * t);
    }
    out[start_sample + i] = s;
  }
}

}  // namespace

corpus::Corpus generate_synthetic_corpus(std::uint64_t seed,
                                         const GeneratorConfig& cfg,
                                         const fs::path& out_dir) {
  if (cfg.rate_fp < 0 || cfg.rate_fp > 1 || cfg.rate_pr < 0 || cfg.rate_pr > 1)
    throw ValidationError("behavior rates must be in [0,1]");
  if (cfg.vocab_size <= 0 || cfg.phoneme_vocab <= 0)
    throw ValidationError("empty vocabulary");
  if (cfg.min_chars <= 0 || cfg.max_chars < cfg.min_chars ||
      cfg.min_phones <= 0 || cfg.max_phones < cfg.min_phones ||
      cfg.min_frames <= 0 || cfg.max_frames < cfg.min_frames)
    throw ValidationError("invalid generator ranges");

  std::mt19937_64 rng_struct(seed);
  std::mt19937_64 rng_fp(seed ^ kFpStream);
  std::mt19937_64 rng_pr(seed ^ kPrStream);
  std::mt19937_64 rng_soft(seed ^ 0x2545f4914f6cdd1dULL);

  corpus::Corpus out;
  const bool write_files = !out_dir.empty();
  if (write_files && cfg.write_audio) fs::create_directories(out_dir / "audio");

  for (int c = 0; c < cfg.n_conversations; ++c) {
    corpus::Conversation conv;
    conv.id = cfg.conv_prefix + std::to_string(c);
    const bool is_test =
        c >= static_cast<int>(std::ceil(cfg.n_conversations * (1.0 - cfg.test_fraction)));
    for (int uix = 0; uix < cfg.utts_per_conversation; ++uix) {
      const int n_chars =
          cfg.min_chars +
          static_cast<int>(rng_index(rng_struct,
                                     static_cast<std::uint64_t>(cfg.max_chars - cfg.min_chars + 1)));
      std::vector<CharDraw> draws;
      for (int k = 0; k < n_chars; ++k) {
        bool fp = rng_uniform(rng_fp) < cfg.rate_fp;
        bool pr = rng_uniform(rng_pr) < cfg.rate_pr;
        CharDraw d;
        bool fp_soft = false, pr_soft = false;
        if (fp) fp_soft = rng_uniform(rng_soft) < cfg.soft_fp;
        if (pr) pr_soft = rng_uniform(rng_soft) < cfg.soft_pr;
        if (fp) {
          int f = static_cast<int>(rng_index(rng_struct, cfg.n_fillers));
          d.ch = "uh" + std::to_string(f);
          d.phones = {"fph" + std::to_string(f)};
          d.fp_signature = !fp_soft;
        } else if (pr && pr_soft) {
          int m = static_cast<int>(rng_index(rng_struct, cfg.n_markers));
          d.ch = "hm" + std::to_string(m);
          d.phones = {"mph" + std::to_string(m)};
        } else {
          int v = static_cast<int>(rng_index(rng_struct, cfg.vocab_size));
          d.ch = "c" + std::to_string(v);
          int np = cfg.min_phones +
                   static_cast<int>(rng_index(rng_struct,
                                              static_cast<std::uint64_t>(cfg.max_phones - cfg.min_phones + 1)));
          for (int j = 0; j < np; ++j)
            d.phones.push_back(
                "ph" + std::to_string(rng_index(rng_struct, cfg.phoneme_vocab)));
        }
        for (std::size_t j = 0; j < d.phones.size(); ++j)
          d.frames.push_back(
              cfg.min_frames +
              static_cast<int>(rng_index(rng_struct,
                                         static_cast<std::uint64_t>(cfg.max_frames - cfg.min_frames + 1))));
        if (pr && !pr_soft)
          d.frames.back() =
              static_cast<int>(std::lround(d.frames.back() * cfg.prolong_factor));
        d.label = (fp ? 1 : 0) + (pr ? 2 : 0);
        draws.push_back(std::move(d));
      }

      corpus::Utterance u;
      u.id = conv.id + ":" + std::to_string(uix);
      u.speaker = uix % 2 == 0 ? "A" : "B";
      labels::CharLabelSeq label_seq;
      for (const auto& d : draws) {
        u.chars.push_back(d.ch);
        u.grouping.push_back(static_cast<int>(d.phones.size()));
        for (const auto& p : d.phones) u.phonemes.push_back(p);
        for (int f : d.frames) u.durations.push_back(f);
        label_seq.push_back(d.label);
      }
      if (cfg.emit_labels) {
        u.char_labels = label_seq;
        u.label_source = corpus::LabelSource::planted;
      } else {
        u.label_source = corpus::LabelSource::none;
      }

      if (write_files && cfg.write_audio) {
        const long total_frames =
            std::accumulate(u.durations.begin(), u.durations.end(), 0L);
        const std::size_t len =
            static_cast<std::size_t>((total_frames - 1) * features::kHop +
                                     features::kHop / 2);
        Waveform w;
        w.sample_rate = features::kSampleRate;
        w.samples.assign(len, 0.0);
        std::size_t cursor = 0;
        std::size_t phone_idx = 0;
        for (const auto& d : draws) {
          for (std::size_t j = 0; j < d.phones.size(); ++j, ++phone_idx) {
            std::size_t n =
                static_cast<std::size_t>(d.frames[j]) * features::kHop;
            n = std::min(n, len - cursor);
            synth_phoneme(w.samples, cursor, n, phoneme_freq(d.phones[j]),
                          d.fp_signature && j + 1 == d.phones.size());
            cursor += n;
          }
        }
        std::string rel = "audio/" + conv.id + "_" + std::to_string(uix) + ".wav";
        write_wav(out_dir / rel, w);
        u.audio_ref = rel;
      }

      out.split[u.id] = is_test ? corpus::Split::test : corpus::Split::train;
      conv.utterances.push_back(std::move(u));
    }
    out.conversations.push_back(std::move(conv));
  }

  if (write_files) corpus::save_corpus(out, out_dir / "manifest.jsonl");
  return out;
}

}  // namespace spontts::synthetic
