#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spontts/labels.hpp"

namespace spontts::corpus {

enum class LabelSource { human, pseudo, planted, none };

std::string to_string(LabelSource s);
LabelSource label_source_from_string(const std::string& s);

enum class Split { train, test };

struct Utterance {
  std::string id;  // "<conv_id>:<utt_index>"
  std::string speaker;
  std::vector<std::string> chars;     // grapheme groups
  std::vector<std::string> phonemes;  // phoneme symbols
  std::vector<int> grouping;          // phonemes per character
  std::optional<labels::CharLabelSeq> char_labels;
  std::optional<std::string> audio_ref;  // path relative to the manifest
  std::vector<int> durations;            // frames per phoneme; empty = absent
  LabelSource label_source = LabelSource::none;

  void validate() const;  // throws ValidationError naming the utterance id
};

struct Conversation {
  std::string id;
  std::vector<Utterance> utterances;
};

struct Corpus {
  std::vector<Conversation> conversations;
  std::map<std::string, Split> split;  // utterance id -> split

  const Utterance* find(const std::string& utt_id) const;
  const Conversation* find_conversation(const std::string& conv_id) const;
  std::size_t utterance_count() const;
};

// Line-delimited JSON manifest: a header record followed by one record per
// utterance. See README for the schema.
constexpr int kManifestVersion = 1;

Corpus load_corpus(const std::filesystem::path& manifest_path);
void save_corpus(const Corpus& c, const std::filesystem::path& manifest_path);

// The current utterance plus its H predecessors, oldest first, left-padded
// with nullptr at conversation starts. Result length is always H + 1.
std::vector<const Utterance*> history_window(const Conversation& conv,
                                             std::size_t index, int history = 5);

}  // namespace spontts::corpus
