#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "vox/corpus.hpp"

using namespace vox;
namespace fs = std::filesystem;

namespace {

std::string write_temp(const std::string& contents) {
  static int counter = 0;
  auto path = fs::temp_directory_path() / ("vox_corpus_" + std::to_string(::getpid()) + "_" +
                                           std::to_string(counter++) + ".jsonl");
  std::ofstream f(path);
  f << contents;
  return path.string();
}

Manifest toy_manifest(const std::vector<std::pair<std::string, std::string>>& text_speaker) {
  Manifest m;
  int i = 0;
  for (const auto& [text, spk] : text_speaker) {
    Utterance u;
    u.audio_path = "audio_" + std::to_string(i++) + ".wav";
    u.text = text;
    u.speaker_id = spk;
    u.language_id = "L1";
    u.duration_s = 3.0;
    m.add(u);
  }
  return m;
}

}  // namespace

TEST_CASE("load_manifest parses JSONL rows and derives speaker/language sets") {
  auto path = write_temp(
      R"({"audio_path":"a.wav","text":"hello","speaker":"A","language":"hi","duration":3.2})"
      "\n"
      R"({"audio_path":"b.wav","text":"there","speaker":"B","language":"hi","duration":4.0})"
      "\n"
      R"({"audio_path":"c.wav","text":"again","speaker":"A","language":"te","duration":2.5})"
      "\n");
  Manifest m = load_manifest(path);
  REQUIRE(m.utterances.size() == 3);
  REQUIRE(m.speakers == std::set<std::string>{"A", "B"});
  REQUIRE(m.languages == std::set<std::string>{"hi", "te"});
  CHECK(m.utterances[0].text == "hello");  // row order preserved
  CHECK(m.utterances[2].duration_s == 2.5);
  fs::remove(path);
}

TEST_CASE("load_manifest on an empty file gives an empty manifest") {
  auto path = write_temp("");
  Manifest m = load_manifest(path);
  CHECK(m.utterances.empty());
  CHECK(m.speakers.empty());
  fs::remove(path);
}

TEST_CASE("load_manifest reports the offending line for a missing field") {
  auto path = write_temp(
      R"({"audio_path":"a.wav","text":"x","speaker":"A","language":"hi","duration":3.0})"
      "\n"
      R"({"audio_path":"b.wav","speaker":"B","language":"hi","duration":3.0})"
      "\n");
  REQUIRE_THROWS_WITH(load_manifest(path), Catch::Matchers::ContainsSubstring("line 2"));
  fs::remove(path);
}

TEST_CASE("build_vocabulary dedups, sorts by code point, reserves PAD and UNK") {
  Manifest m = toy_manifest({{"ab", "A"}, {"bc", "B"}});
  auto v = build_vocabulary({m});
  REQUIRE(v.size() == 5);
  CHECK(v.symbol(2) == U'a');
  CHECK(v.symbol(3) == U'b');
  CHECK(v.symbol(4) == U'c');
  CHECK(v.lookup(U'a') == 2);

  Manifest dup = toy_manifest({{"aa", "A"}});
  CHECK(build_vocabulary({dup}).size() == 3);
}

TEST_CASE("build_vocabulary rejects an empty corpus") {
  REQUIRE_THROWS(build_vocabulary({Manifest{}}));
}

TEST_CASE("vocabulary is deterministic under manifest order") {
  Manifest m1 = toy_manifest({{"xyz", "A"}, {"abc", "B"}});
  Manifest m2 = toy_manifest({{"abc", "B"}, {"xyz", "A"}});
  auto v1 = build_vocabulary({m1});
  auto v2 = build_vocabulary({m2});
  REQUIRE(v1.size() == v2.size());
  for (int i = 0; i < v1.size(); ++i) CHECK(v1.symbol(i) == v2.symbol(i));
}

TEST_CASE("vocabulary handles multi-byte characters") {
  Manifest m = toy_manifest({{"नमस्ते", "A"}});
  auto v = build_vocabulary({m});
  CHECK(v.size() == 2 + 6);  // six distinct code points
  auto ids = encode_text("नमस्ते", v);
  CHECK(ids.size() == 6);
  for (int id : ids) CHECK(id >= 2);
}

TEST_CASE("vocabulary save/load round-trips") {
  Manifest m = toy_manifest({{"abcde", "A"}, {"नमस्ते", "B"}});
  auto v = build_vocabulary({m});
  auto path = write_temp("");
  v.save(path);
  auto v2 = CharacterVocabulary::load(path);
  REQUIRE(v2.size() == v.size());
  for (int i = 2; i < v.size(); ++i) CHECK(v2.symbol(i) == v.symbol(i));
  fs::remove(path);
}

TEST_CASE("filter_by_duration keeps the inclusive band, preserves order") {
  Manifest m;
  int i = 0;
  for (double d : {1.5, 2.0, 8.0, 15.0, 15.1}) {
    Utterance u{"a" + std::to_string(i++) + ".wav", "t", "A", "L", d};
    m.add(u);
  }
  Manifest f = filter_by_duration(m, 2.0, 15.0);
  REQUIRE(f.utterances.size() == 3);
  CHECK(f.utterances[0].duration_s == 2.0);
  CHECK(f.utterances[1].duration_s == 8.0);
  CHECK(f.utterances[2].duration_s == 15.0);
}

TEST_CASE("filter_by_duration edge cases") {
  CHECK(filter_by_duration(Manifest{}, 2, 15).utterances.empty());

  Manifest m = toy_manifest({{"a", "A"}, {"b", "B"}});
  CHECK(filter_by_duration(m, 0.001, 1000).utterances.size() == 2);  // no-op bounds
  REQUIRE_THROWS(filter_by_duration(m, 15, 2));
  REQUIRE_THROWS(filter_by_duration(m, 0, 15));
}

TEST_CASE("filter_by_duration is idempotent") {
  std::mt19937 rng(7);
  Manifest m;
  for (int i = 0; i < 50; ++i) {
    Utterance u{"a.wav", "t", "A", "L",
                std::uniform_real_distribution<>(0.5, 20.0)(rng)};
    m.add(u);
  }
  Manifest once = filter_by_duration(m, 2, 15);
  Manifest twice = filter_by_duration(once, 2, 15);
  REQUIRE(once.utterances.size() == twice.utterances.size());
}

TEST_CASE("encode_text maps characters, unknowns to UNK, empty to empty") {
  Manifest m = toy_manifest({{"ab", "A"}, {"bc", "B"}});
  auto v = build_vocabulary({m});
  CHECK(encode_text("ab", v) == std::vector<int>{2, 3});
  CHECK(encode_text("", v).empty());
  CHECK(encode_text("axb", v) == std::vector<int>{2, CharacterVocabulary::kUnk, 3});
}

TEST_CASE("encode then decode round-trips in-vocab text") {
  Manifest m = toy_manifest({{"round trip", "A"}});
  auto v = build_vocabulary({m});
  std::string text = "trip round";
  auto ids = encode_text(text, v);
  std::string back;
  for (int id : ids) back += utf8_encode(v.symbol(id));
  CHECK(back == text);
}

TEST_CASE("mixup_datasets unions utterances and rejects speaker collisions") {
  Manifest pre, few;
  for (int i = 0; i < 14; ++i) {
    Utterance u{"p.wav", "t", "pre_" + std::to_string(i), "L", 3.0};
    pre.add(u);
  }
  for (int i = 0; i < 9; ++i) {
    Utterance u{"f.wav", "t", "few_" + std::to_string(i), "L", 3.0};
    few.add(u);
  }
  Manifest mixed = mixup_datasets(pre, few);
  CHECK(mixed.speakers.size() == 23);
  CHECK(mixed.utterances.size() == 23);

  CHECK(mixup_datasets(pre, Manifest{}).utterances.size() == pre.utterances.size());

  Manifest collide;
  Utterance u{"c.wav", "t", "pre_0", "L", 3.0};
  collide.add(u);
  REQUIRE_THROWS(mixup_datasets(pre, collide));
}
