#include "alm/data/conversation.hpp"

#include <sstream>

#include "alm/core/errors.hpp"

namespace alm::data {

std::string role_name(Role role) {
  switch (role) {
    case Role::system:
      return "system";
    case Role::user:
      return "user";
    case Role::assistant:
      return "assistant";
  }
  return "user";
}

Role parse_role(const std::string& name) {
  if (name == "system") return Role::system;
  if (name == "user") return Role::user;
  if (name == "assistant") return Role::assistant;
  throw InvalidInput("unknown role '" + name + "'");
}

std::string normalize_space(const std::string& s) {
  std::istringstream is(s);
  std::string out;
  for (std::string w; is >> w;) out += (out.empty() ? "" : " ") + w;
  return out;
}

void Conversation::validate() const {
  std::size_t i = 0;
  while (i < messages.size() && messages[i].role == Role::system) ++i;
  Role expect = Role::user;
  for (; i < messages.size(); ++i) {
    if (messages[i].role != expect) {
      throw InvalidInput("message " + std::to_string(i) + " has role " + role_name(messages[i].role) +
                         ", expected " + role_name(expect));
    }
    expect = expect == Role::user ? Role::assistant : Role::user;
  }
  for (const auto& m : messages) {
    for (const auto& p : m.parts) {
      if (p.kind == Part::Kind::audio && (m.role != Role::user || p.value.empty())) {
        throw InvalidInput("audio parts must be non-empty references inside user turns");
      }
    }
  }
}

std::vector<std::string> Conversation::audio_refs() const {
  std::vector<std::string> refs;
  for (const auto& m : messages)
    for (const auto& p : m.parts)
      if (p.kind == Part::Kind::audio) refs.push_back(p.value);
  return refs;
}

std::string Conversation::final_response() const {
  if (messages.empty() || messages.back().role != Role::assistant) return {};
  std::string out;
  for (const auto& p : messages.back().parts) out += (out.empty() ? "" : " ") + p.value;
  return normalize_space(out);
}

Conversation Conversation::prompt() const {
  Conversation c = *this;
  if (!c.messages.empty() && c.messages.back().role == Role::assistant) c.messages.pop_back();
  return c;
}

void to_json(nlohmann::json& j, const Part& p) {
  j = {{"kind", p.kind == Part::Kind::text ? "text" : "audio"}, {"value", p.value}};
}

void from_json(const nlohmann::json& j, Part& p) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind != "text" && kind != "audio") throw InvalidInput("unknown part kind '" + kind + "'");
  p.kind = kind == "text" ? Part::Kind::text : Part::Kind::audio;
  p.value = j.at("value").get<std::string>();
}

void to_json(nlohmann::json& j, const Message& m) { j = {{"role", role_name(m.role)}, {"parts", m.parts}}; }

void from_json(const nlohmann::json& j, Message& m) {
  m.role = parse_role(j.at("role").get<std::string>());
  m.parts = j.at("parts").get<std::vector<Part>>();
}

void to_json(nlohmann::json& j, const Conversation& c) {
  j = {{"messages", c.messages}, {"mode_hint", c.mode_hint}};
}

void from_json(const nlohmann::json& j, Conversation& c) {
  c.messages = j.at("messages").get<std::vector<Message>>();
  c.mode_hint = j.value("mode_hint", "");
}

model::TokenSequence serialize(const Conversation& conv, const Tokenizer& tok,
                               std::span<const std::size_t> audio_lengths, MaskPolicy policy) {
  conv.validate();
  model::TokenSequence seq;
  auto emit = [&](int id, bool response) {
    seq.ids.push_back(id);
    seq.loss_mask.push_back(policy == MaskPolicy::all_text ? !seq.loss_mask.empty() : response);
  };
  std::size_t audio = 0;
  emit(kBos, false);
  for (const auto& m : conv.messages) {
    const bool assistant = m.role == Role::assistant;
    emit(m.role == Role::system ? kSystem : m.role == Role::user ? kUser : kAssistant, false);
    for (const auto& p : m.parts) {
      if (p.kind == Part::Kind::text) {
        for (int id : tok.encode(p.value)) emit(id, assistant);
        continue;
      }
      if (audio >= audio_lengths.size()) {
        throw SlotMismatch("conversation has more audio parts than the " + std::to_string(audio_lengths.size()) +
                           " supplied lengths");
      }
      emit(kAudioStart, false);
      const std::size_t start = seq.ids.size();
      for (std::size_t t = 0; t < audio_lengths[audio]; ++t) {
        seq.ids.push_back(kSlot);
        seq.loss_mask.push_back(0);
      }
      seq.audio_slots.push_back({start, audio_lengths[audio]});
      emit(kAudioEnd, false);
      ++audio;
    }
    if (assistant) emit(kEos, true);
  }
  if (audio != audio_lengths.size()) {
    throw SlotMismatch(std::to_string(audio_lengths.size()) + " audio lengths for " + std::to_string(audio) +
                       " audio parts");
  }
  if (!conv.messages.empty() && conv.messages.back().role == Role::user) emit(kAssistant, false);
  return seq;
}

Conversation deserialize(const model::TokenSequence& seq, const Tokenizer& tok,
                         std::span<const std::string> audio_refs) {
  Conversation conv;
  const auto& ids = seq.ids;
  if (ids.empty() || ids[0] != kBos) throw DecodeError("token sequence does not start with <bos>");
  std::size_t audio = 0;
  std::string text;
  auto flush_text = [&] {
    if (!text.empty() && !conv.messages.empty()) conv.messages.back().parts.push_back(Part::text(text));
    text.clear();
  };
  for (std::size_t i = 1; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id == kSystem || id == kUser || id == kAssistant) {
      flush_text();
      // a trailing <assistant> is the generation cue, not a message
      if (id == kAssistant && i + 1 == ids.size()) break;
      conv.messages.push_back({id == kSystem ? Role::system : id == kUser ? Role::user : Role::assistant, {}});
    } else if (id == kEos) {
      flush_text();
    } else if (id == kAudioStart) {
      flush_text();
      while (i + 1 < ids.size() && ids[i + 1] == kSlot) ++i;
      if (i + 1 >= ids.size() || ids[i + 1] != kAudioEnd) throw DecodeError("unterminated audio span");
      ++i;
      if (audio >= audio_refs.size()) throw DecodeError("more audio spans than audio references");
      if (conv.messages.empty()) throw DecodeError("audio span before any message");
      conv.messages.back().parts.push_back(Part::audio(audio_refs[audio++]));
    } else if (id < kNumReserved) {
      throw DecodeError("unexpected special token " + tok.token(id));
    } else {
      if (conv.messages.empty()) throw DecodeError("text before any role marker");
      text += (text.empty() ? "" : " ") + tok.token(id);
    }
  }
  flush_text();
  return conv;
}

}  // namespace alm::data
