#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "alm/audio/audio.hpp"
#include "alm/audio/mel.hpp"
#include "alm/core/errors.hpp"
#include "alm/data/conversation.hpp"
#include "alm/data/corpus.hpp"
#include "alm/data/lexicon.hpp"
#include "alm/data/synth.hpp"
#include "alm/data/tokenizer.hpp"
#include "alm/model/config.hpp"
#include "test_util.hpp"
#include "tone_decoder.hpp"

using namespace alm;
using namespace alm::data;
using alm::testing::TempDir;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::vector<std::string> words_of(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

}  // namespace

TEST_CASE("lexicon") {
  CHECK(content_words().size() == 20);
  CHECK(number_words().size() == 10);
  CHECK(spoken_words().size() == 39);
  std::set<std::pair<int, int>> pairs;
  for (const auto& w : spoken_words()) {
    const auto [a, b] = tone_pair(w);
    CHECK(a != b);
    CHECK(a >= 0);
    CHECK(b < 10);
    pairs.insert({a, b});
  }
  CHECK(pairs.size() == 39);
  CHECK_THROWS_AS(tone_pair("xylophone"), VocabError);

  const auto& f = tone_frequencies();
  REQUIRE(f.size() == 10);
  CHECK(f.front() == doctest::Approx(250.0));
  CHECK(f.back() == doctest::Approx(5000.0));
  for (std::size_t i = 2; i < f.size(); ++i) CHECK(f[i] / f[i - 1] == doctest::Approx(f[1] / f[0]));

  std::set<std::string> translated;
  for (const auto& w : content_words()) translated.insert(translate_word(w));
  CHECK(translated.size() == 20);
  for (const auto& t : translated) CHECK(std::find(content_words().begin(), content_words().end(), t) == content_words().end());

  for (const char* task : {"asr", "s2tt", "vsc", "ser"}) CHECK(instruction_templates(task).size() == 4);
  CHECK_THROWS_AS(instruction_templates("voice_chat"), InvalidConfig);
}

TEST_CASE("tokenizer") {
  const auto& tok = Tokenizer::standard();
  CHECK(tok.size() == 117);
  CHECK(tok.size() <= static_cast<std::size_t>(model::LmConfig{}.vocab_size));
  CHECK(tok.token(kBos) == "<bos>");
  CHECK(tok.token(kSlot) == "<slot>");
  CHECK(tok.token(kAssistant) == "<assistant>");
  for (const auto& w : all_words()) CHECK(tok.id(w) >= kNumReserved);

  const std::string text = "what is this sound ka lo red cat transcribe the speech";
  CHECK(tok.decode(tok.encode(text)) == text);
  try {
    tok.encode("red purple cat");
    FAIL("expected VocabError");
  } catch (const VocabError& e) {
    CHECK(std::string(e.what()).find("purple") != std::string::npos);
  }
  const std::vector<int> bad = {999};
  CHECK_THROWS_AS(tok.decode(bad), DecodeError);
}

TEST_CASE("synth_clip layout and determinism") {
  const auto spec = TaskSpec::make(Task::asr);
  const std::vector<std::string> words = {"red", "cat", "moon"};
  const auto a = synth_clip(words, spec);
  CHECK(a.sample_rate == 16000);
  CHECK(a.samples.size() == 9600);  // 3 words x 2 tones x 100 ms
  CHECK(a.samples == synth_clip(words, spec).samples);
  float peak = 0;
  for (float s : a.samples) peak = std::max(peak, std::abs(s));
  CHECK(peak <= kSignalAmplitude + 1e-6);
  CHECK(a.samples[0] == 0.0f);  // ramped onset

  const std::vector<std::string> digits = {"five"};
  CHECK_NOTHROW(synth_clip(digits, spec));
  CHECK_THROWS_AS(synth_clip(digits, TaskSpec::make(Task::s2tt)), VocabError);
  const std::vector<std::string> oov = {"ka"};
  CHECK_THROWS_AS(synth_clip(oov, spec), VocabError);

  const auto noisy_spec = TaskSpec::make(Task::asr, 0.01, 4);
  CHECK(synth_clip(words, noisy_spec).samples == synth_clip(words, noisy_spec).samples);
  CHECK(synth_clip(words, noisy_spec).samples != a.samples);
}

TEST_CASE("class clips") {
  const auto vsc = TaskSpec::make(Task::vsc, 0.0, 5);
  for (const auto& label : sound_labels()) {
    const auto c = synth_class(label, vsc, 0.5);
    CHECK(c.samples.size() == 8000);
    CHECK(c.samples == synth_class(label, vsc, 0.5).samples);
  }
  CHECK_THROWS_AS(synth_class("happy", vsc), VocabError);
  CHECK_THROWS_AS(synth_class("whistle", vsc, 0.0), InvalidInput);
}

TEST_CASE("tone-pair speech is decodable by signal processing alone") {
  // Independent oracle: a Goertzel decoder recovers the words of generated
  // ASR clips, including silence padding and gain jitter.
  std::size_t ok = 0;
  const std::size_t n = 1000;
  for (std::size_t i = 0; i < n; ++i) {
    const auto g = generate_record(Task::asr, "train", i, 77, 0.0);
    const auto words = alm::testing::decode_tones(g.clips[0]);
    if (words && *words == words_of(g.record.target)) ++ok;
  }
  CHECK(static_cast<double>(ok) / n >= 0.999);
}

TEST_CASE("mel features stay in range for generated clips") {
  for (Task t : {Task::asr, Task::vsc, Task::ser, Task::mixed, Task::voice_chat}) {
    const auto g = generate_record(t, "train", 3, 9, 0.0);
    const auto mel = audio::log_mel(g.clips[0]);
    for (float v : mel.values.data) {
      CHECK(v >= -1.5f);
      CHECK(v <= 1.0f);
    }
  }
}

TEST_CASE("serialize lays out audio slots and response masks") {
  const auto& tok = Tokenizer::standard();
  Conversation c;
  c.messages = {{Role::user, {Part::audio("a.wav"), Part::text("transcribe the speech")}},
                {Role::assistant, {Part::text("red cat")}}};
  // 1 s of audio: 101 mel frames -> 26 encoder frames.
  const std::size_t len = model::EncoderConfig{}.output_frames(audio::mel_frame_count(16000));
  CHECK(len == 26);
  const std::vector<std::size_t> lengths = {len};
  const auto s = serialize(c, tok, lengths);
  s.check();
  REQUIRE(s.audio_slots.size() == 1);
  CHECK(s.audio_slots[0].start == 3);
  CHECK(s.audio_slots[0].length == 26);
  std::vector<int> expect = {kBos, kUser, kAudioStart};
  expect.insert(expect.end(), 26, kSlot);
  expect.push_back(kAudioEnd);
  for (int id : tok.encode("transcribe the speech")) expect.push_back(id);
  expect.push_back(kAssistant);
  for (int id : tok.encode("red cat")) expect.push_back(id);
  expect.push_back(kEos);
  CHECK(s.ids == expect);
  // Only "red cat <eos>" are targets.
  std::size_t targets = 0;
  for (std::size_t i = 0; i < s.size(); ++i) targets += s.loss_mask[i];
  CHECK(targets == 3);
  CHECK(s.loss_mask[s.size() - 1] == 1);
  CHECK(s.loss_mask[s.size() - 4] == 0);  // <assistant>

  const std::vector<std::string> refs = {"a.wav"};
  CHECK(deserialize(s, tok, refs) == c);

  const auto all = serialize(c, tok, lengths, MaskPolicy::all_text);
  CHECK(all.loss_mask[0] == 0);
  for (std::size_t i = 1; i < all.size(); ++i) CHECK(all.loss_mask[i] == (all.ids[i] == kSlot ? 0 : 1));

  const auto p = serialize(c.prompt(), tok, lengths);
  CHECK(p.ids.back() == kAssistant);
  CHECK(p.size() == s.size() - 3);

  const std::vector<std::size_t> none;
  CHECK_THROWS_AS(serialize(c, tok, none), SlotMismatch);
  Conversation bad;
  bad.messages = {{Role::assistant, {Part::text("red")}}};
  CHECK_THROWS_AS(serialize(bad, tok, none), InvalidInput);
}

TEST_CASE("no mode markers reach the token stream") {
  const auto& tok = Tokenizer::standard();
  for (Task t : {Task::asr, Task::vsc, Task::voice_chat, Task::mixed}) {
    const auto g = generate_record(t, "test", 1, 5, 0.0);
    const auto mel = audio::log_mel(g.clips[0]);
    const std::vector<std::size_t> lengths = {model::EncoderConfig{}.output_frames(mel.n_frames())};
    auto conv = g.record.conversation;
    const auto s = serialize(conv, tok, lengths);
    CHECK(std::count(s.ids.begin(), s.ids.end(), kSystem) == 0);
    conv.mode_hint = conv.mode_hint == "analysis" ? "voice_chat" : "analysis";
    CHECK(serialize(conv, tok, lengths).ids == s.ids);
    if (is_voice_chat(t)) {
      // Spoken instruction only: the user turn is a single audio part.
      CHECK(g.record.conversation.messages[0].parts.size() == 1);
    }
  }
}

TEST_CASE("split counts") {
  const auto c = split_counts(100, {8, 1, 1});
  CHECK(c.train == 80);
  CHECK(c.dev == 10);
  CHECK(c.test == 10);
  const auto d = split_counts(2400, {10, 1, 1});
  CHECK(d.train == 2000);
  CHECK(d.test == 200);
  CHECK_THROWS_AS(split_counts(10, {0, 0, 0}), InvalidConfig);
}

TEST_CASE("build_corpus is deterministic with disjoint splits") {
  TempDir a("corpus_a"), b("corpus_b");
  CorpusConfig cfg;
  cfg.tasks = {Task::asr, Task::vsc, Task::voice_chat};
  cfg.n = 30;
  cfg.seed = 12;
  const auto m = build_corpus(cfg, a.path);
  build_corpus(cfg, b.path);
  CHECK(m.train.size() == 72);
  CHECK(m.dev.size() == 9);
  CHECK(m.test.size() == 9);

  for (const char* f : {"train.jsonl", "dev.jsonl", "test.jsonl"}) CHECK(slurp(a.path / f) == slurp(b.path / f));
  for (const auto& e : fs::directory_iterator(a.path / "audio")) {
    CHECK(slurp(e.path()) == slurp(b.path / "audio" / e.path().filename()));
  }

  std::set<std::string> ids;
  std::map<std::uint64_t, std::string> owner;
  for (const char* split : {"train", "dev", "test"}) {
    for (const auto& r : m.split(split)) {
      CHECK(ids.insert(r.id).second);
      CHECK(r.split == split);
      for (const auto& clip : load_audio(r, a.path)) {
        const auto h = audio::clip_hash(clip);
        auto [it, fresh] = owner.emplace(h, split);
        if (!fresh) CHECK(it->second == split);
      }
    }
  }

  const auto back = read_manifest(a.path / "train.jsonl");
  REQUIRE(back.size() == m.train.size());
  CHECK(back[5].conversation == m.train[5].conversation);
  CHECK(back[5].target == m.train[5].target);

  cfg.seed = 13;
  TempDir c("corpus_c");
  build_corpus(cfg, c.path);
  CHECK(slurp(c.path / "train.jsonl") != slurp(a.path / "train.jsonl"));

  SUBCASE("manifest errors") {
    std::ofstream(a.path / "dup.jsonl") << slurp(a.path / "dev.jsonl") << slurp(a.path / "dev.jsonl");
    CHECK_THROWS_AS(read_manifest(a.path / "dup.jsonl"), InvalidInput);
    std::ofstream(a.path / "broken.jsonl") << "{\"id\": 3\n";
    CHECK_THROWS_AS(read_manifest(a.path / "broken.jsonl"), InvalidInput);
    CHECK_THROWS_AS(read_manifest(a.path / "nope.jsonl"), IoError);
    fs::remove(a.path / m.dev[0].audio_paths[0]);
    CHECK_THROWS_AS(load_audio(m.dev[0], a.path), IoError);
  }
  CorpusConfig small = cfg;
  small.n = 9;
  CHECK_THROWS_AS(build_corpus(small, c.path / "x"), InvalidConfig);
}

TEST_CASE("preference pairs") {
  std::vector<Record> base;
  for (std::size_t i = 0; i < 200; ++i) base.push_back(generate_record(Task::asr, "train", i, 3, 0.0).record);

  SUBCASE("word swap") {
    const auto prefs = build_preferences(base, 1000, Corruption::word_swap, 0.5, 8);
    REQUIRE(prefs.size() == 1000);
    double changed = 0, total = 0;
    for (const auto& p : prefs) {
      const auto c = words_of(p.chosen), r = words_of(p.rejected);
      REQUIRE(c.size() == r.size());
      std::size_t diff = 0;
      for (std::size_t i = 0; i < c.size(); ++i) diff += c[i] != r[i];
      CHECK(diff >= 1);
      changed += static_cast<double>(diff);
      total += static_cast<double>(c.size());
      CHECK(p.context.messages.back().role == Role::user);
    }
    CHECK(changed / total == doctest::Approx(0.5).epsilon(0.06));  // within 0.03 absolute
    // chosen is the record target
    std::map<std::string, std::string> target;
    for (const auto& r : base) target[r.id] = r.target;
    for (const auto& p : prefs) CHECK(p.chosen == target.at(p.id.substr(0, p.id.find("-pref-"))));
    CHECK(build_preferences(base, 50, Corruption::word_swap, 0.5, 8)[7].rejected == prefs[7].rejected);
  }
  SUBCASE("truncation") {
    for (const auto& p : build_preferences(base, 100, Corruption::truncation, 0.5, 2)) {
      const auto c = words_of(p.chosen), r = words_of(p.rejected);
      CHECK(r.size() < c.size());
      CHECK(std::equal(r.begin(), r.end(), c.begin()));
    }
  }
  SUBCASE("wrong class") {
    for (const auto& p : build_preferences(base, 100, Corruption::wrong_class, 0.5, 2)) CHECK(p.rejected != p.chosen);
  }
  SUBCASE("errors") {
    const std::vector<Record> one = {base[0]};
    CHECK_THROWS_AS(build_preferences(one, 10, Corruption::word_swap, 0.5, 1), InsufficientData);
    CHECK(parse_corruption("truncation") == Corruption::truncation);
    CHECK(corruption_name(Corruption::wrong_class) == "wrong-class");
    CHECK_THROWS_AS(parse_corruption("shuffle"), InvalidConfig);
  }
}
