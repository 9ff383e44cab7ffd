#include "spontts/corpus.hpp"

#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "spontts/util.hpp"

namespace spontts::corpus {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(LabelSource s) {
  switch (s) {
    case LabelSource::human: return "human";
    case LabelSource::pseudo: return "pseudo";
    case LabelSource::planted: return "planted";
    case LabelSource::none: return "none";
  }
  return "none";
}

LabelSource label_source_from_string(const std::string& s) {
  if (s == "human") return LabelSource::human;
  if (s == "pseudo") return LabelSource::pseudo;
  if (s == "planted") return LabelSource::planted;
  if (s == "none") return LabelSource::none;
  throw ValidationError("unknown label_source: " + s);
}

void Utterance::validate() const {
  if (chars.size() != grouping.size())
    throw ValidationError("utterance " + id + ": grouping length " +
                          std::to_string(grouping.size()) +
                          " does not match character count " +
                          std::to_string(chars.size()));
  long total = 0;
  for (int g : grouping) {
    if (g <= 0)
      throw ValidationError("utterance " + id + ": non-positive grouping entry");
    total += g;
  }
  if (total != static_cast<long>(phonemes.size()))
    throw ValidationError("utterance " + id + ": grouping sums to " +
                          std::to_string(total) + " but there are " +
                          std::to_string(phonemes.size()) + " phonemes");
  if (char_labels && char_labels->size() != chars.size())
    throw ValidationError("utterance " + id + ": label length " +
                          std::to_string(char_labels->size()) +
                          " does not match character count " +
                          std::to_string(chars.size()));
  if (char_labels)
    for (int c : *char_labels)
      if (c < 0 || c >= labels::kNumClasses)
        throw ValidationError("utterance " + id + ": label class out of range");
  if (!durations.empty() &&
      durations.size() != phonemes.size())
    throw ValidationError("utterance " + id + ": duration count " +
                          std::to_string(durations.size()) +
                          " does not match phoneme count");
}

const Utterance* Corpus::find(const std::string& utt_id) const {
  for (const auto& conv : conversations)
    for (const auto& u : conv.utterances)
      if (u.id == utt_id) return &u;
  return nullptr;
}

const Conversation* Corpus::find_conversation(const std::string& conv_id) const {
  for (const auto& conv : conversations)
    if (conv.id == conv_id) return &conv;
  return nullptr;
}

std::size_t Corpus::utterance_count() const {
  std::size_t n = 0;
  for (const auto& conv : conversations) n += conv.utterances.size();
  return n;
}

Corpus load_corpus(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw ValidationError("cannot open manifest: " + manifest_path.string());

  Corpus corpus;
  std::map<std::string, std::size_t> conv_index;
  std::set<std::string> seen_ids;
  std::string line;
  long line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError("manifest parse error at line " +
                            std::to_string(line_no) + ": " + e.what());
    }
    try {
      if (!have_header) {
        if (rec.value("type", "") != "spontts-manifest")
          throw ValidationError("first record must be the manifest header");
        if (rec.value("version", 0) != kManifestVersion)
          throw ValidationError("unsupported manifest version");
        have_header = true;
        continue;
      }
      Utterance u;
      std::string conv_id = rec.at("conv_id").get<std::string>();
      int utt_index = rec.at("utt_index").get<int>();
      u.id = conv_id + ":" + std::to_string(utt_index);
      u.speaker = rec.value("speaker", "");
      u.chars = rec.at("chars").get<std::vector<std::string>>();
      u.phonemes = rec.at("phonemes").get<std::vector<std::string>>();
      u.grouping = rec.at("grouping").get<std::vector<int>>();
      if (rec.contains("labels"))
        u.char_labels = rec.at("labels").get<std::vector<int>>();
      if (rec.contains("audio_path"))
        u.audio_ref = rec.at("audio_path").get<std::string>();
      if (rec.contains("durations"))
        u.durations = rec.at("durations").get<std::vector<int>>();
      u.label_source = label_source_from_string(rec.value("label_source", "none"));
      u.validate();
      if (!seen_ids.insert(u.id).second)
        throw ValidationError("duplicate utterance id " + u.id);
      if (rec.contains("split")) {
        std::string s = rec.at("split").get<std::string>();
        if (s != "train" && s != "test")
          throw ValidationError("utterance " + u.id + ": bad split value " + s);
        corpus.split[u.id] = s == "train" ? Split::train : Split::test;
      }
      auto it = conv_index.find(conv_id);
      if (it == conv_index.end()) {
        conv_index.emplace(conv_id, corpus.conversations.size());
        corpus.conversations.push_back({conv_id, {std::move(u)}});
      } else {
        corpus.conversations[it->second].utterances.push_back(std::move(u));
      }
    } catch (const json::exception& e) {
      throw ValidationError("manifest record error at line " +
                            std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header)
    throw ValidationError("manifest is empty or missing header: " +
                          manifest_path.string());
  return corpus;
}

void save_corpus(const Corpus& c, const fs::path& manifest_path) {
  std::ostringstream out;
  json header{{"type", "spontts-manifest"}, {"version", kManifestVersion}};
  out << header.dump() << "\n";
  for (const auto& conv : c.conversations) {
    for (std::size_t i = 0; i < conv.utterances.size(); ++i) {
      const Utterance& u = conv.utterances[i];
      json rec{{"conv_id", conv.id},
               {"utt_index", static_cast<int>(i)},
               {"speaker", u.speaker},
               {"chars", u.chars},
               {"phonemes", u.phonemes},
               {"grouping", u.grouping},
               {"label_source", to_string(u.label_source)}};
      if (u.char_labels) rec["labels"] = *u.char_labels;
      if (u.audio_ref) rec["audio_path"] = *u.audio_ref;
      if (!u.durations.empty()) rec["durations"] = u.durations;
      auto it = c.split.find(u.id);
      if (it != c.split.end())
        rec["split"] = it->second == Split::train ? "train" : "test";
      out << rec.dump() << "\n";
    }
  }
  write_file_atomic(manifest_path, out.str());
}

std::vector<const Utterance*> history_window(const Conversation& conv,
                                             std::size_t index, int history) {
  if (index >= conv.utterances.size())
    throw ValidationError("history_window: index " + std::to_string(index) +
                          " out of range for conversation " + conv.id);
  if (history < 0) throw ValidationError("history_window: negative history");
  std::vector<const Utterance*> out(static_cast<std::size_t>(history) + 1, nullptr);
  for (int k = 0; k <= history; ++k) {
    long src = static_cast<long>(index) - history + k;
    if (src >= 0) out[static_cast<std::size_t>(k)] = &conv.utterances[src];
  }
  return out;
}

}  // namespace spontts::corpus
