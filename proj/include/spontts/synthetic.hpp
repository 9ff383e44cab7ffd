#pragma once

#include <cstdint>
#include <filesystem>

#include "spontts/corpus.hpp"

namespace spontts::synthetic {

// Synthetic conversational corpus with planted behaviors.
//
// Character vocabulary has three disjoint groups: normal characters,
// filler characters (only ever emitted with a filled-pause label) and
// hesitation markers (only ever emitted with a prolongation label).
// A planted filled pause replaces the character slot with a filler whose
// audio carries a distinct low-pitch + high-band signature; a planted
// prolongation stretches the final phoneme's duration by prolong_factor.
// `soft_*` fractions of plants omit the acoustic cue, leaving only the
// text cue (soft prolongations land on marker characters).
struct GeneratorConfig {
  int n_conversations = 48;
  int utts_per_conversation = 8;
  int min_chars = 8, max_chars = 14;      // characters per utterance
  int vocab_size = 40;                    // normal characters
  int n_fillers = 3;
  int n_markers = 3;
  int phoneme_vocab = 32;
  int min_phones = 1, max_phones = 3;     // phonemes per character
  int min_frames = 4, max_frames = 9;     // frames per phoneme
  double rate_fp = 0.12;
  double rate_pr = 0.12;
  double soft_fp = 0.3;
  double soft_pr = 0.3;
  double prolong_factor = 2.5;
  double test_fraction = 0.2;             // trailing conversations held out
  bool emit_labels = true;                // false: strip labels from manifest
  bool write_audio = true;
  std::string conv_prefix = "conv";       // keeps merged corpora collision-free
};

// Label decisions draw exactly one uniform per character from dedicated
// streams so planted counts can be replayed independently:
//   filled pause: mt19937_64(seed ^ kFpStream), planted iff u < rate_fp
//   prolongation: mt19937_64(seed ^ kPrStream), planted iff u < rate_pr
// Draw order is corpus order (conversation, utterance, character).
constexpr std::uint64_t kFpStream = 0x9e3779b97f4a7c15ULL;
constexpr std::uint64_t kPrStream = 0x517cc1b727220a95ULL;

// Generates the corpus in memory; when out_dir is non-empty also writes
// manifest.jsonl and audio/*.wav under it. Pure in (seed, cfg).
corpus::Corpus generate_synthetic_corpus(std::uint64_t seed,
                                         const GeneratorConfig& cfg,
                                         const std::filesystem::path& out_dir = {});

}  // namespace spontts::synthetic
