#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace alm::data {

// Reserved ids; everything below kNumReserved is a special token.
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kAudioStart = 3;
inline constexpr int kAudioEnd = 4;
inline constexpr int kSlot = 5;
inline constexpr int kSystem = 6;
inline constexpr int kUser = 7;
inline constexpr int kAssistant = 8;
inline constexpr int kNumReserved = 16;

/// Whitespace word tokenizer over a fixed vocabulary. Special tokens occupy
/// ids [0, 16); words follow in the given order.
class Tokenizer {
 public:
  explicit Tokenizer(const std::vector<std::string>& words);
  /// Tokenizer over every word of the synthetic tasks.
  static const Tokenizer& standard();

  /// Throws VocabError naming the first unknown word.
  std::vector<int> encode(std::string_view text) const;
  /// Space-joined tokens; throws DecodeError on an id outside the vocabulary.
  std::string decode(std::span<const int> ids) const;

  int id(std::string_view token) const;
  const std::string& token(int id) const;
  bool contains(std::string_view token) const;
  std::size_t size() const { return tokens_.size(); }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int, std::less<>> index_;
};

}  // namespace alm::data
