#include "alm/data/tokenizer.hpp"

#include <sstream>

#include "alm/core/errors.hpp"
#include "alm/data/lexicon.hpp"

namespace alm::data {

Tokenizer::Tokenizer(const std::vector<std::string>& words) {
  tokens_ = {"<pad>", "<bos>", "<eos>", "<audio_start>", "<audio_end>", "<slot>", "<system>", "<user>", "<assistant>"};
  while (tokens_.size() < static_cast<std::size_t>(kNumReserved)) {
    tokens_.push_back("<reserved" + std::to_string(tokens_.size()) + ">");
  }
  for (const auto& w : words) {
    if (w.empty() || w.find_first_of(" \t\n\r") != std::string::npos) {
      throw InvalidConfig("vocabulary word '" + w + "' is empty or contains whitespace");
    }
    tokens_.push_back(w);
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw InvalidConfig("duplicate vocabulary entry '" + tokens_[i] + "'");
    }
  }
}

const Tokenizer& Tokenizer::standard() {
  static const Tokenizer tok(all_words());
  return tok;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  std::istringstream is{std::string(text)};
  for (std::string w; is >> w;) {
    auto it = index_.find(w);
    if (it == index_.end()) throw VocabError("unknown word '" + w + "'");
    ids.push_back(it->second);
  }
  return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (!out.empty()) out += ' ';
    out += token(id);
  }
  return out;
}

int Tokenizer::id(std::string_view token) const {
  auto it = index_.find(token);
  if (it == index_.end()) throw VocabError("unknown word '" + std::string(token) + "'");
  return it->second;
}

const std::string& Tokenizer::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw DecodeError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

bool Tokenizer::contains(std::string_view token) const { return index_.find(token) != index_.end(); }

}  // namespace alm::data
