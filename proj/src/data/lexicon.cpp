#include "alm/data/lexicon.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "alm/core/errors.hpp"

namespace alm::data {

const std::vector<std::string>& content_words() {
  static const std::vector<std::string> words = {"red",  "blue", "green", "cat",   "dog",  "bird", "tree",
                                                 "house", "river", "stone", "moon", "sun",  "fish", "book",
                                                 "door", "road", "cloud", "fire",  "hand", "star"};
  return words;
}

const std::vector<std::string>& number_words() {
  static const std::vector<std::string> words = {"zero", "one", "two",   "three", "four",
                                                 "five", "six", "seven", "eight", "nine"};
  return words;
}

const std::vector<std::string>& question_words() {
  static const std::vector<std::string> words = {"what", "is", "this", "sound", "comes", "after", "before", "plus",
                                                 "minus"};
  return words;
}

const std::vector<std::string>& spoken_words() {
  static const std::vector<std::string> words = [] {
    std::vector<std::string> out = content_words();
    out.insert(out.end(), number_words().begin(), number_words().end());
    out.insert(out.end(), question_words().begin(), question_words().end());
    return out;
  }();
  return words;
}

const std::vector<std::string>& translated_words() {
  static const std::vector<std::string> words = {"ka", "lo", "mi", "nu", "pe", "ri", "so", "tu", "va", "ze",
                                                 "bo", "di", "fu", "ga", "hi", "jo", "ku", "le", "mo", "xa"};
  return words;
}

const std::string& translate_word(const std::string& word) {
  const auto& src = content_words();
  auto it = std::find(src.begin(), src.end(), word);
  if (it == src.end()) throw VocabError("no translation for word '" + word + "'");
  return translated_words()[static_cast<std::size_t>(it - src.begin())];
}

const std::vector<std::string>& sound_labels() {
  static const std::vector<std::string> labels = {"whistle", "buzzer", "static"};
  return labels;
}

const std::vector<std::string>& emotion_labels() {
  static const std::vector<std::string> labels = {"happy", "sad"};
  return labels;
}

const std::vector<double>& tone_frequencies() {
  static const std::vector<double> freqs = [] {
    std::vector<double> out;
    const int n = 10;
    for (int i = 0; i < n; ++i) out.push_back(250.0 * std::pow(5000.0 / 250.0, static_cast<double>(i) / (n - 1)));
    return out;
  }();
  return freqs;
}

std::pair<int, int> tone_pair(const std::string& word) {
  static const std::map<std::string, std::pair<int, int>> table = [] {
    std::map<std::string, std::pair<int, int>> out;
    const int n = static_cast<int>(tone_frequencies().size());
    int code = 0;
    for (const auto& w : spoken_words()) {
      // enumerate ordered pairs (a, b), a != b
      const int a = code / (n - 1);
      int b = code % (n - 1);
      if (b >= a) ++b;
      out.emplace(w, std::make_pair(a, b));
      ++code;
    }
    return out;
  }();
  auto it = table.find(word);
  if (it == table.end()) throw VocabError("word '" + word + "' has no tone encoding");
  return it->second;
}

const std::array<std::string, 4>& instruction_templates(const std::string& task) {
  static const std::map<std::string, std::array<std::string, 4>> templates = {
      {"asr",
       {"transcribe the speech", "write down what is said", "what does the speaker say",
        "convert the audio to text"}},
      {"s2tt",
       {"translate the speech", "give a translation of the audio", "what is the translation of the speech",
        "render the speech in the other language"}},
      {"vsc",
       {"what kind of sound is this", "classify the sound", "which sound do you hear",
        "name the sound in the clip"}},
      {"ser",
       {"what emotion does the speaker show", "how does the speaker feel", "classify the mood of the voice",
        "is the voice happy or sad"}},
  };
  auto it = templates.find(task);
  if (it == templates.end()) throw InvalidConfig("task '" + task + "' has no text instruction templates");
  return it->second;
}

std::vector<std::string> all_words() {
  std::set<std::string> words(spoken_words().begin(), spoken_words().end());
  words.insert(translated_words().begin(), translated_words().end());
  words.insert(sound_labels().begin(), sound_labels().end());
  words.insert(emotion_labels().begin(), emotion_labels().end());
  for (const char* task : {"asr", "s2tt", "vsc", "ser"}) {
    for (const auto& t : instruction_templates(task)) {
      std::istringstream is(t);
      for (std::string w; is >> w;) words.insert(w);
    }
  }
  // answer phrase of the mixed task
  for (const char* w : {"this", "is", "the", "sound", "of", "a"}) words.insert(w);
  return {words.begin(), words.end()};
}

}  // namespace alm::data
