#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "alm/data/tokenizer.hpp"
#include "alm/model/model.hpp"

namespace alm::data {

enum class Role { system, user, assistant };

std::string role_name(Role role);
Role parse_role(const std::string& name);

struct Part {
  enum class Kind { text, audio };
  Kind kind = Kind::text;
  std::string value;  // text, or the clip path relative to the manifest

  static Part text(std::string s) { return {Kind::text, std::move(s)}; }
  static Part audio(std::string ref) { return {Kind::audio, std::move(ref)}; }
  bool operator==(const Part&) const = default;
};

struct Message {
  Role role = Role::user;
  std::vector<Part> parts;
  bool operator==(const Message&) const = default;
};

/// Role-tagged messages. `mode_hint` is metadata for reporting and is never
/// serialized into tokens.
struct Conversation {
  std::vector<Message> messages;
  std::string mode_hint;

  /// Optional leading system messages, then alternating user/assistant turns
  /// starting with user. Throws InvalidInput otherwise.
  void validate() const;
  std::vector<std::string> audio_refs() const;
  /// Text of the last message if it is an assistant turn, else empty.
  std::string final_response() const;
  /// Copy without a trailing assistant turn.
  Conversation prompt() const;
  bool operator==(const Conversation&) const = default;
};

void to_json(nlohmann::json& j, const Part& p);
void from_json(const nlohmann::json& j, Part& p);
void to_json(nlohmann::json& j, const Message& m);
void from_json(const nlohmann::json& j, Message& m);
void to_json(nlohmann::json& j, const Conversation& c);
void from_json(const nlohmann::json& j, Conversation& c);

enum class MaskPolicy {
  responses,  // assistant response tokens and each turn's closing <eos>
  all_text,   // every non-slot position after <bos>
};

/// `<bos> [<system> text]* (<user> parts <assistant> response <eos>)*`. Audio
/// parts become `<audio_start> <slot> x n <audio_end>` with n taken from
/// `audio_lengths` in order. A conversation ending in a user turn ends with
/// `<assistant>`, ready for generation.
model::TokenSequence serialize(const Conversation& conv, const Tokenizer& tok,
                               std::span<const std::size_t> audio_lengths, MaskPolicy policy = MaskPolicy::responses);

/// Inverse of serialize; audio parts take their references from `audio_refs`
/// in order. Text is whitespace-normalized.
Conversation deserialize(const model::TokenSequence& seq, const Tokenizer& tok,
                         std::span<const std::string> audio_refs);

/// Collapses runs of whitespace to single spaces and trims both ends.
std::string normalize_space(const std::string& s);

}  // namespace alm::data
