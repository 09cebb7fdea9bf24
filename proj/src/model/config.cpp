#include "alm/model/config.hpp"

#include <string>

#include "alm/core/errors.hpp"

namespace alm::model {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidConfig(what);
}

template <typename C>
void read_known(const nlohmann::json& j, const char* section, std::initializer_list<std::pair<const char*, int C::*>> fields,
                C& c) {
  if (!j.is_object()) throw InvalidConfig(std::string(section) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (const auto& f : fields) known = known || key == f.first;
    if (!known) throw InvalidConfig("unknown key '" + key + "' in " + section);
  }
  for (const auto& [key, member] : fields) {
    if (!j.contains(key)) continue;
    if (!j.at(key).is_number_integer()) throw InvalidConfig(std::string(section) + "." + key + " must be an integer");
    c.*member = j.at(key).template get<int>();
  }
}

}  // namespace

void EncoderConfig::validate() const {
  require(n_mels > 0, "encoder.n_mels must be positive");
  require(d_enc > 0 && n_heads > 0 && d_enc % n_heads == 0, "encoder.d_enc must be divisible by encoder.n_heads");
  require(n_layers >= 0, "encoder.n_layers must be non-negative");
  require(conv_stride > 0 && pool_stride > 0, "encoder strides must be positive");
  require(conv_stride * pool_stride == 4, "encoder.conv_stride * encoder.pool_stride must equal 4");
  require(max_frames > 0, "encoder.max_frames must be positive");
}

std::size_t EncoderConfig::output_frames(std::size_t mel_frames) const {
  const auto cs = static_cast<std::size_t>(conv_stride), ps = static_cast<std::size_t>(pool_stride);
  const std::size_t conv = (mel_frames + cs - 1) / cs;
  return (conv + ps - 1) / ps;
}

void LmConfig::validate() const {
  require(vocab_size > 0, "lm.vocab_size must be positive");
  require(d_model > 0 && n_heads > 0 && d_model % n_heads == 0, "lm.d_model must be divisible by lm.n_heads");
  require(n_layers >= 0, "lm.n_layers must be non-negative");
  require(max_seq_len > 1, "lm.max_seq_len must exceed 1");
}

void ModelConfig::validate() const {
  encoder.validate();
  lm.validate();
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"n_mels", c.n_mels},         {"d_enc", c.d_enc},           {"n_layers", c.n_layers},
       {"n_heads", c.n_heads},       {"conv_stride", c.conv_stride}, {"pool_stride", c.pool_stride},
       {"max_frames", c.max_frames}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  read_known<EncoderConfig>(j, "encoder",
                            {{"n_mels", &EncoderConfig::n_mels},
                             {"d_enc", &EncoderConfig::d_enc},
                             {"n_layers", &EncoderConfig::n_layers},
                             {"n_heads", &EncoderConfig::n_heads},
                             {"conv_stride", &EncoderConfig::conv_stride},
                             {"pool_stride", &EncoderConfig::pool_stride},
                             {"max_frames", &EncoderConfig::max_frames}},
                            c);
}

void to_json(nlohmann::json& j, const LmConfig& c) {
  j = {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},         {"n_layers", c.n_layers},
       {"n_heads", c.n_heads},       {"max_seq_len", c.max_seq_len}};
}

void from_json(const nlohmann::json& j, LmConfig& c) {
  read_known<LmConfig>(j, "lm",
                       {{"vocab_size", &LmConfig::vocab_size},
                        {"d_model", &LmConfig::d_model},
                        {"n_layers", &LmConfig::n_layers},
                        {"n_heads", &LmConfig::n_heads},
                        {"max_seq_len", &LmConfig::max_seq_len}},
                       c);
}

void to_json(nlohmann::json& j, const ModelConfig& c) { j = {{"encoder", c.encoder}, {"lm", c.lm}}; }

void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (!j.is_object()) throw InvalidConfig("model config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (key != "encoder" && key != "lm") throw InvalidConfig("unknown key '" + key + "' in model");
  }
  if (j.contains("encoder")) c.encoder = j.at("encoder").get<EncoderConfig>();
  if (j.contains("lm")) c.lm = j.at("lm").get<LmConfig>();
}

}  // namespace alm::model
