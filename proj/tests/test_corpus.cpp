#include <doctest.h>

#include <filesystem>

#include "spontts/corpus.hpp"
#include "spontts/synthetic.hpp"
#include "spontts/util.hpp"

using namespace spontts;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir() {
  fs::path d = fs::temp_directory_path() / "spontts_corpus_test";
  fs::create_directories(d);
  return d;
}

corpus::Corpus small_corpus() {
  corpus::Corpus c;
  corpus::Conversation conv;
  conv.id = "c0";
  corpus::Utterance u;
  u.id = "c0:0";
  u.speaker = "A";
  u.chars = {"ka", "to"};
  u.phonemes = {"k", "a", "t", "o"};
  u.grouping = {2, 2};
  u.char_labels = labels::CharLabelSeq{0, 1};
  u.label_source = corpus::LabelSource::human;
  conv.utterances.push_back(u);
  corpus::Utterance v = u;
  v.id = "c0:1";
  v.char_labels.reset();
  v.label_source = corpus::LabelSource::none;
  conv.utterances.push_back(v);
  c.conversations.push_back(conv);
  c.split["c0:0"] = corpus::Split::train;
  c.split["c0:1"] = corpus::Split::test;
  return c;
}

}  // namespace

TEST_SUITE("corpus") {

TEST_CASE("save/load round-trip and deterministic serialization") {
  fs::path d = tmp_dir();
  auto c = small_corpus();
  corpus::save_corpus(c, d / "m.jsonl");
  auto c2 = corpus::load_corpus(d / "m.jsonl");
  CHECK(c2.utterance_count() == 2);
  CHECK(c2.conversations[0].utterances[0].chars == c.conversations[0].utterances[0].chars);
  CHECK(c2.split.at("c0:1") == corpus::Split::test);
  CHECK(*c2.conversations[0].utterances[0].char_labels ==
        labels::CharLabelSeq{0, 1});
  corpus::save_corpus(c2, d / "m2.jsonl");
  CHECK(read_text_file(d / "m.jsonl") == read_text_file(d / "m2.jsonl"));
}

TEST_CASE("validation rejects inconsistent utterances with the id in the message") {
  auto c = small_corpus();
  auto& u = c.conversations[0].utterances[0];
  u.grouping = {2, 3};  // sum != phoneme count
  try {
    u.validate();
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("c0:0") != std::string::npos);
  }
}

TEST_CASE("loader reports the offending line number") {
  fs::path d = tmp_dir();
  write_text_file(d / "bad.jsonl",
                  "{\"type\":\"spontts-manifest\",\"version\":1}\n"
                  "{not json}\n");
  try {
    corpus::load_corpus(d / "bad.jsonl");
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("loader rejects duplicate utterance ids") {
  fs::path d = tmp_dir();
  auto c = small_corpus();
  corpus::save_corpus(c, d / "m.jsonl");
  // duplicate the first data record on disk
  std::string text = read_text_file(d / "m.jsonl");
  std::size_t first_nl = text.find('\n');
  std::size_t second_nl = text.find('\n', first_nl + 1);
  std::string record = text.substr(first_nl + 1, second_nl - first_nl);
  write_text_file(d / "dup.jsonl",
                  text.substr(0, second_nl + 1) + record);
  CHECK_THROWS_AS(corpus::load_corpus(d / "dup.jsonl"), ValidationError);
}

TEST_CASE("loader requires the manifest header") {
  fs::path d = tmp_dir();
  write_text_file(d / "nohdr.jsonl", "{\"id\":\"x:0\"}\n");
  CHECK_THROWS_AS(corpus::load_corpus(d / "nohdr.jsonl"), ValidationError);
}

TEST_CASE("find and find_conversation") {
  auto c = small_corpus();
  CHECK(c.find("c0:1") != nullptr);
  CHECK(c.find("c0:9") == nullptr);
  CHECK(c.find_conversation("c0") != nullptr);
  CHECK(c.find_conversation("zz") == nullptr);
}

TEST_CASE("history window pads conversation starts with nulls") {
  corpus::Conversation conv;
  for (int i = 0; i < 4; ++i) {
    corpus::Utterance u;
    u.id = "c:" + std::to_string(i);
    conv.utterances.push_back(u);
  }
  auto w0 = corpus::history_window(conv, 0, 5);
  REQUIRE(w0.size() == 6);
  for (int i = 0; i < 5; ++i) CHECK(w0[i] == nullptr);
  CHECK(w0[5]->id == "c:0");

  auto w3 = corpus::history_window(conv, 3, 5);
  REQUIRE(w3.size() == 6);
  CHECK(w3[0] == nullptr);
  CHECK(w3[1] == nullptr);
  CHECK(w3[2]->id == "c:0");
  CHECK(w3[5]->id == "c:3");

  auto w_short = corpus::history_window(conv, 2, 2);
  REQUIRE(w_short.size() == 3);
  CHECK(w_short[0]->id == "c:0");
}

TEST_CASE("generated corpus split holds out trailing conversations") {
  synthetic::GeneratorConfig cfg;
  cfg.n_conversations = 10;
  cfg.utts_per_conversation = 3;
  auto c = synthetic::generate_synthetic_corpus(3, cfg);
  long train = 0, test = 0;
  for (const auto& [id, sp] : c.split)
    (sp == corpus::Split::train ? train : test)++;
  CHECK(train == 8 * 3);
  CHECK(test == 2 * 3);
  CHECK(c.utterance_count() == 30);
}

}  // TEST_SUITE
