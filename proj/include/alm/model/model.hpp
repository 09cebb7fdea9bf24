#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "alm/audio/mel.hpp"
#include "alm/core/ops.hpp"
#include "alm/core/params.hpp"
#include "alm/core/tape.hpp"
#include "alm/model/config.hpp"

namespace alm::model {

/// Span of positions in a token sequence filled with encoder frames.
struct AudioSlot {
  std::size_t start = 0;
  std::size_t length = 0;
};

/// Token ids plus audio slots. loss_mask[t] marks ids[t] as a prediction
/// target (predicted from position t - 1), so loss_mask[0] is always false.
struct TokenSequence {
  std::vector<int> ids;
  std::vector<AudioSlot> audio_slots;
  std::vector<std::uint8_t> loss_mask;

  std::size_t size() const { return ids.size(); }
  /// Throws InvalidInput unless slots are disjoint, in bounds and unmasked.
  void check() const;
};

/// Resolves parameter names to tape variables, registering each parameter on
/// the tape at most once. A mutable store yields trainable variables whose
/// gradients flow into the store; a const store yields frozen ones.
template <typename T>
class Weights {
 public:
  Weights(core::Tape<T>& tape, core::ParameterStore<T>& store) : tape_(tape), mutable_(&store), store_(&store) {}
  Weights(core::Tape<T>& tape, const core::ParameterStore<T>& store) : tape_(tape), store_(&store) {}

  core::Var<T> operator()(const std::string& name) {
    auto it = cache_.find(name);
    if (it != cache_.end()) return it->second;
    core::Var<T> v = mutable_ ? tape_.param(mutable_->at(name)) : tape_.frozen(store_->at(name).value);
    cache_.emplace(name, v);
    return v;
  }
  core::Tape<T>& tape() { return tape_; }

 private:
  core::Tape<T>& tape_;
  core::ParameterStore<T>* mutable_ = nullptr;
  const core::ParameterStore<T>* store_;
  std::map<std::string, core::Var<T>> cache_;
};

/// Parameter names and shapes of a configuration, in sorted order.
std::vector<std::pair<std::string, core::Shape>> parameter_shapes(const ModelConfig& cfg);

/// normal(0, 0.02) for projections and embeddings, ones for norm gains, zeros
/// for biases and norm shifts. Deterministic in `seed`.
template <typename T>
core::ParameterStore<T> init_params(const ModelConfig& cfg, std::uint64_t seed);

/// sin/cos position table [rows x width].
template <typename T>
core::Array<T> sinusoidal_positions(std::size_t rows, std::size_t width);

template <typename T>
struct EncodedAudio {
  core::Var<T> frames;              // packed [sum(lengths) x d_enc]
  std::vector<std::size_t> lengths;  // per clip, ceil(ceil(T / conv) / pool)
};

/// conv(k3,s1)+gelu, conv(k3,s2)+gelu, sinusoidal positions, self-attention
/// blocks, final norm, then mean pooling with the configured stride.
template <typename T>
EncodedAudio<T> encode_audio(Weights<T>& w, const EncoderConfig& cfg,
                             std::span<const audio::MelSpectrogram* const> mels);

template <typename T>
struct LmOutput {
  core::Var<T> logits;                 // packed [sum(L) x vocab]
  std::vector<core::Segment> segments;  // one per sequence
};

/// Decoder-only forward over a packed batch. Audio slot positions take the
/// projected encoder frames; clip i fills the i-th slot in batch order.
template <typename T>
LmOutput<T> forward_lm(Weights<T>& w, const ModelConfig& cfg, std::span<const TokenSequence> seqs,
                       const EncodedAudio<T>* audio);

/// Mean next-token cross-entropy over every masked target in the batch.
template <typename T>
core::Var<T> lm_loss(const LmOutput<T>& out, std::span<const TokenSequence> seqs);

/// Per-sequence sum of log P(ids[t] | ids[<t]) over masked t; result [S].
template <typename T>
core::Var<T> sequence_logprobs(const LmOutput<T>& out, std::span<const TokenSequence> seqs);

/// Inference-time encoder output of one clip, [T_out x d_enc].
core::ArrayF encode_clip(const ModelConfig& cfg, const core::ParameterStore<float>& params,
                         const audio::MelSpectrogram& mel);

/// Sum of masked log-probabilities for one sequence, frozen parameters.
double sequence_logprob(const ModelConfig& cfg, const core::ParameterStore<float>& params, const TokenSequence& seq,
                        std::span<const core::ArrayF> clip_frames);

struct GenerateOptions {
  std::size_t max_tokens = 32;
  double temperature = 0.0;  // 0 selects greedy decoding
  std::uint64_t seed = 0;
  int eos_id = 2;
};

/// Autoregressive decoding after `prefix`. Returns the generated ids without
/// the terminating end-of-sequence token.
std::vector<int> generate(const ModelConfig& cfg, const core::ParameterStore<float>& params,
                          const TokenSequence& prefix, std::span<const core::ArrayF> clip_frames,
                          const GenerateOptions& opts);

}  // namespace alm::model
