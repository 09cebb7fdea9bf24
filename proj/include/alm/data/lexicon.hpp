#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

// Fixed word lists of the synthetic tasks. All prompt wording below is
// invented for the toy corpus.
namespace alm::data {

/// Words used in transcription and translation prompts.
const std::vector<std::string>& content_words();
/// zero .. nine
const std::vector<std::string>& number_words();
/// Words that only occur inside spoken questions.
const std::vector<std::string>& question_words();
/// Every word that can be rendered as audio, in tone-code order.
const std::vector<std::string>& spoken_words();

/// Target-language word for a content word (a fixed bijection).
const std::string& translate_word(const std::string& word);
const std::vector<std::string>& translated_words();

/// Class labels of the sound and emotion tasks.
const std::vector<std::string>& sound_labels();    // whistle, buzzer, static
const std::vector<std::string>& emotion_labels();  // happy, sad

/// Tone frequencies (Hz), log-spaced inside [200, 6000].
const std::vector<double>& tone_frequencies();
/// Two distinct tone indices per spoken word; injective over spoken_words().
std::pair<int, int> tone_pair(const std::string& word);

/// Four instruction paraphrases for a text-instructed task.
const std::array<std::string, 4>& instruction_templates(const std::string& task);

/// Every word the tokenizer must know, sorted and unique.
std::vector<std::string> all_words();

}  // namespace alm::data
