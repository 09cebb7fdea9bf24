#pragma once

#include <cstddef>

#include <json.hpp>

namespace alm::model {

struct EncoderConfig {
  int n_mels = 128;
  int d_enc = 64;
  int n_layers = 2;
  int n_heads = 4;
  int conv_stride = 2;
  int pool_stride = 2;
  int max_frames = 1500;  // after the strided conv

  void validate() const;
  /// Output frames for `mel_frames` input frames: ceil(ceil(T / conv) / pool).
  std::size_t output_frames(std::size_t mel_frames) const;
};

struct LmConfig {
  int vocab_size = 200;
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int max_seq_len = 256;

  void validate() const;
};

struct ModelConfig {
  EncoderConfig encoder;
  LmConfig lm;

  void validate() const;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);
void to_json(nlohmann::json& j, const LmConfig& c);
void from_json(const nlohmann::json& j, LmConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace alm::model
