#include "alm/model/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "alm/core/errors.hpp"

namespace alm::model {

using core::Array;
using core::Segment;
using core::Shape;
using core::Var;

void TokenSequence::check() const {
  if (loss_mask.size() != ids.size()) {
    throw InvalidInput("loss_mask length " + std::to_string(loss_mask.size()) + " != sequence length " +
                       std::to_string(ids.size()));
  }
  std::size_t end = 0;
  for (const auto& s : audio_slots) {
    if (s.length == 0 || s.start < end || s.start + s.length > ids.size()) {
      throw InvalidInput("audio slot [" + std::to_string(s.start) + ", +" + std::to_string(s.length) +
                         ") overlaps or is out of bounds");
    }
    for (std::size_t t = s.start; t < s.start + s.length; ++t) {
      if (loss_mask[t]) throw InvalidInput("loss_mask set inside an audio slot at " + std::to_string(t));
    }
    end = s.start + s.length;
  }
}

namespace {

void add_block_shapes(std::vector<std::pair<std::string, Shape>>& out, const std::string& p, std::size_t d) {
  for (const char* ln : {"ln1", "ln2"}) {
    out.push_back({p + "." + ln + ".gamma", {d}});
    out.push_back({p + "." + ln + ".beta", {d}});
  }
  for (const char* proj : {"q", "k", "v", "o"}) {
    out.push_back({p + ".attn." + proj + ".weight", {d, d}});
    out.push_back({p + ".attn." + proj + ".bias", {d}});
  }
  out.push_back({p + ".mlp.fc1.weight", {d, 4 * d}});
  out.push_back({p + ".mlp.fc1.bias", {4 * d}});
  out.push_back({p + ".mlp.fc2.weight", {4 * d, d}});
  out.push_back({p + ".mlp.fc2.bias", {d}});
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <typename T>
Var<T> linear(Weights<T>& w, const std::string& p, const Var<T>& x) {
  return core::add(core::matmul(x, w(p + ".weight")), w(p + ".bias"));
}

template <typename T>
Var<T> norm(Weights<T>& w, const std::string& p, const Var<T>& x) {
  return core::layer_norm(x, w(p + ".gamma"), w(p + ".beta"));
}

// Pre-norm transformer block.
template <typename T>
Var<T> block(Weights<T>& w, const std::string& p, Var<T> x, std::span<const Segment> segs, std::size_t heads,
             bool causal) {
  Var<T> h = norm(w, p + ".ln1", x);
  Var<T> a = core::attention(linear(w, p + ".attn.q", h), linear(w, p + ".attn.k", h), linear(w, p + ".attn.v", h),
                             segs, heads, causal);
  x = core::add(x, linear(w, p + ".attn.o", a));
  h = norm(w, p + ".ln2", x);
  return core::add(x, linear(w, p + ".mlp.fc2", core::gelu(linear(w, p + ".mlp.fc1", h))));
}

// Next-token targets and mask for each packed row; rows without a successor
// get target 0 and mask 0.
void shifted_targets(std::span<const TokenSequence> seqs, std::vector<int>& targets,
                     std::vector<std::uint8_t>& mask) {
  targets.clear();
  mask.clear();
  for (const auto& s : seqs) {
    for (std::size_t t = 0; t < s.size(); ++t) {
      const bool has_next = t + 1 < s.size();
      targets.push_back(has_next ? s.ids[t + 1] : 0);
      mask.push_back(has_next ? s.loss_mask[t + 1] : 0);
    }
  }
}

}  // namespace

std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& cfg) {
  cfg.validate();
  const auto de = static_cast<std::size_t>(cfg.encoder.d_enc);
  const auto dm = static_cast<std::size_t>(cfg.lm.d_model);
  const auto nm = static_cast<std::size_t>(cfg.encoder.n_mels);
  const auto vocab = static_cast<std::size_t>(cfg.lm.vocab_size);
  std::vector<std::pair<std::string, Shape>> out;
  out.push_back({"enc.conv1.weight", {de, nm, 3}});
  out.push_back({"enc.conv1.bias", {de}});
  out.push_back({"enc.conv2.weight", {de, de, 3}});
  out.push_back({"enc.conv2.bias", {de}});
  for (int i = 0; i < cfg.encoder.n_layers; ++i) add_block_shapes(out, "enc.blocks." + std::to_string(i), de);
  out.push_back({"enc.ln_post.gamma", {de}});
  out.push_back({"enc.ln_post.beta", {de}});
  out.push_back({"audio_proj.weight", {de, dm}});
  out.push_back({"audio_proj.bias", {dm}});
  out.push_back({"lm.tok_emb", {vocab, dm}});
  out.push_back({"lm.pos_emb", {static_cast<std::size_t>(cfg.lm.max_seq_len), dm}});
  for (int i = 0; i < cfg.lm.n_layers; ++i) add_block_shapes(out, "lm.blocks." + std::to_string(i), dm);
  out.push_back({"lm.ln_f.gamma", {dm}});
  out.push_back({"lm.ln_f.beta", {dm}});
  out.push_back({"lm.head.weight", {dm, vocab}});
  std::sort(out.begin(), out.end());
  return out;
}

template <typename T>
core::ParameterStore<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  core::ParameterStore<T> store(seed);
  std::mt19937_64 rng(seed);
  for (auto& [name, shape] : parameter_shapes(cfg)) {
    if (ends_with(name, ".gamma")) {
      store.add(name, Array<T>(shape, T(1)));
    } else if (ends_with(name, ".beta") || ends_with(name, ".bias")) {
      store.add(name, Array<T>(shape));
    } else {
      store.add(name, core::normal_init<T>(shape, 0.02, rng));
    }
  }
  return store;
}

template <typename T>
Array<T> sinusoidal_positions(std::size_t rows, std::size_t width) {
  Array<T> out({rows, width});
  for (std::size_t t = 0; t < rows; ++t) {
    for (std::size_t i = 0; i < width; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(width));
      out.at(t, i) = static_cast<T>(std::sin(t * freq));
      if (i + 1 < width) out.at(t, i + 1) = static_cast<T>(std::cos(t * freq));
    }
  }
  return out;
}

template <typename T>
EncodedAudio<T> encode_audio(Weights<T>& w, const EncoderConfig& cfg,
                             std::span<const audio::MelSpectrogram* const> mels) {
  auto& tape = w.tape();
  const auto de = static_cast<std::size_t>(cfg.d_enc);
  std::vector<Var<T>> per_clip;
  std::vector<Segment> segs;
  std::size_t rows = 0;
  for (const auto* mel : mels) {
    if (mel->n_mels() != static_cast<std::size_t>(cfg.n_mels)) {
      throw ShapeError("encoder expects " + std::to_string(cfg.n_mels) + " mel rows, got " +
                       core::shape_str(mel->values.shape));
    }
    const std::size_t conv_frames = (mel->n_frames() + cfg.conv_stride - 1) / cfg.conv_stride;
    if (conv_frames > static_cast<std::size_t>(cfg.max_frames)) {
      throw SequenceTooLong(std::to_string(conv_frames) + " encoder frames exceed max_frames " +
                            std::to_string(cfg.max_frames));
    }
    Var<T> x = tape.constant(mel->values.template cast<T>());
    x = core::gelu(core::conv1d(x, w("enc.conv1.weight"), w("enc.conv1.bias"), 1, 1));
    x = core::gelu(core::conv1d(x, w("enc.conv2.weight"), w("enc.conv2.bias"),
                                static_cast<std::size_t>(cfg.conv_stride), 1));
    x = core::transpose(x);
    const std::size_t n = x.shape()[0];
    x = core::add(x, tape.constant(sinusoidal_positions<T>(n, de)));
    per_clip.push_back(x);
    segs.push_back({rows, n});
    rows += n;
  }
  EncodedAudio<T> out;
  if (per_clip.empty()) return out;
  Var<T> h = per_clip.size() == 1 ? per_clip[0] : core::concat(per_clip, 0);
  for (int i = 0; i < cfg.n_layers; ++i) {
    h = block(w, "enc.blocks." + std::to_string(i), h, segs, static_cast<std::size_t>(cfg.n_heads), false);
  }
  h = norm(w, "enc.ln_post", h);
  std::vector<Var<T>> pooled;
  for (const auto& s : segs) {
    Var<T> clip = segs.size() == 1 ? h : core::slice(h, 0, s.start, s.length);
    pooled.push_back(core::mean_pool(clip, static_cast<std::size_t>(cfg.pool_stride)));
    out.lengths.push_back(pooled.back().shape()[0]);
  }
  out.frames = pooled.size() == 1 ? pooled[0] : core::concat(pooled, 0);
  return out;
}

template <typename T>
LmOutput<T> forward_lm(Weights<T>& w, const ModelConfig& cfg, std::span<const TokenSequence> seqs,
                       const EncodedAudio<T>* audio) {
  LmOutput<T> out;
  std::vector<int> ids, positions;
  std::vector<std::size_t> slot_rows;
  std::size_t clip = 0, row = 0;
  const std::size_t n_clips = audio ? audio->lengths.size() : 0;
  for (const auto& s : seqs) {
    s.check();
    if (s.size() > static_cast<std::size_t>(cfg.lm.max_seq_len)) {
      throw SequenceTooLong("sequence of " + std::to_string(s.size()) + " tokens exceeds max_seq_len " +
                            std::to_string(cfg.lm.max_seq_len));
    }
    for (std::size_t t = 0; t < s.size(); ++t) {
      if (s.ids[t] < 0 || s.ids[t] >= cfg.lm.vocab_size) {
        throw InvalidInput("token id " + std::to_string(s.ids[t]) + " outside vocabulary of " +
                           std::to_string(cfg.lm.vocab_size));
      }
      ids.push_back(s.ids[t]);
      positions.push_back(static_cast<int>(t));
    }
    for (const auto& slot : s.audio_slots) {
      if (clip >= n_clips) throw SlotMismatch("audio slot " + std::to_string(clip) + " has no encoded clip");
      if (audio->lengths[clip] != slot.length) {
        throw SlotMismatch("audio slot " + std::to_string(clip) + " spans " + std::to_string(slot.length) +
                           " positions but its clip has " + std::to_string(audio->lengths[clip]) + " frames");
      }
      for (std::size_t t = 0; t < slot.length; ++t) slot_rows.push_back(row + slot.start + t);
      ++clip;
    }
    out.segments.push_back({row, s.size()});
    row += s.size();
  }
  if (clip != n_clips) {
    throw SlotMismatch(std::to_string(n_clips) + " encoded clips for " + std::to_string(clip) + " audio slots");
  }

  Var<T> x = core::embedding_lookup(w("lm.tok_emb"), std::span<const int>(ids));
  if (!slot_rows.empty()) {
    Var<T> frames = linear(w, "audio_proj", audio->frames);
    x = core::replace_rows(x, frames, std::span<const std::size_t>(slot_rows));
  }
  x = core::add(x, core::embedding_lookup(w("lm.pos_emb"), std::span<const int>(positions)));
  for (int i = 0; i < cfg.lm.n_layers; ++i) {
    x = block(w, "lm.blocks." + std::to_string(i), x, out.segments, static_cast<std::size_t>(cfg.lm.n_heads), true);
  }
  x = norm(w, "lm.ln_f", x);
  out.logits = core::matmul(x, w("lm.head.weight"));
  return out;
}

template <typename T>
Var<T> lm_loss(const LmOutput<T>& out, std::span<const TokenSequence> seqs) {
  std::vector<int> targets;
  std::vector<std::uint8_t> mask;
  shifted_targets(seqs, targets, mask);
  return core::cross_entropy(out.logits, std::span<const int>(targets), std::span<const std::uint8_t>(mask));
}

template <typename T>
Var<T> sequence_logprobs(const LmOutput<T>& out, std::span<const TokenSequence> seqs) {
  std::vector<int> targets;
  std::vector<std::uint8_t> mask;
  shifted_targets(seqs, targets, mask);
  bool any = false;
  for (auto m : mask) any = any || m;
  if (!any) throw EmptyLoss("no masked response tokens in the batch");
  const std::size_t n = targets.size();
  Var<T> picked = core::pick(core::log_softmax(out.logits), std::span<const int>(targets));
  // [S x N] selector of each sequence's masked rows
  Array<T> sel({seqs.size(), n});
  for (std::size_t s = 0; s < out.segments.size(); ++s) {
    const auto& seg = out.segments[s];
    for (std::size_t r = seg.start; r < seg.start + seg.length; ++r) sel.at(s, r) = mask[r] ? T(1) : T(0);
  }
  auto& tape = out.logits.tape();
  Var<T> sums = core::matmul(tape.constant(std::move(sel)), core::reshape(picked, Shape{n, 1}));
  return core::reshape(sums, Shape{seqs.size()});
}

core::ArrayF encode_clip(const ModelConfig& cfg, const core::ParameterStore<float>& params,
                         const audio::MelSpectrogram& mel) {
  core::Tape<float> tape;
  Weights<float> w(tape, params);
  const audio::MelSpectrogram* one[] = {&mel};
  return encode_audio<float>(w, cfg.encoder, one).frames.value();
}

namespace {

// Wraps precomputed clip frames as a tape constant for forward_lm.
EncodedAudio<float> constant_audio(core::Tape<float>& tape, std::span<const core::ArrayF> clips) {
  EncodedAudio<float> audio;
  if (clips.empty()) return audio;
  std::vector<Var<float>> parts;
  for (const auto& c : clips) {
    parts.push_back(tape.constant(c));
    audio.lengths.push_back(c.shape[0]);
  }
  audio.frames = parts.size() == 1 ? parts[0] : core::concat(parts, 0);
  return audio;
}

}  // namespace

double sequence_logprob(const ModelConfig& cfg, const core::ParameterStore<float>& params, const TokenSequence& seq,
                        std::span<const core::ArrayF> clip_frames) {
  core::Tape<float> tape;
  Weights<float> w(tape, params);
  auto audio = constant_audio(tape, clip_frames);
  std::span<const TokenSequence> one(&seq, 1);
  auto out = forward_lm<float>(w, cfg, one, clip_frames.empty() ? nullptr : &audio);
  return sequence_logprobs<float>(out, one).value().data[0];
}

std::vector<int> generate(const ModelConfig& cfg, const core::ParameterStore<float>& params,
                          const TokenSequence& prefix, std::span<const core::ArrayF> clip_frames,
                          const GenerateOptions& opts) {
  if (opts.max_tokens == 0) throw InvalidInput("generate needs max_tokens >= 1");
  TokenSequence seq = prefix;
  std::vector<int> produced;
  std::mt19937_64 rng(opts.seed);
  while (produced.size() < opts.max_tokens && seq.size() < static_cast<std::size_t>(cfg.lm.max_seq_len)) {
    core::Tape<float> tape;
    Weights<float> w(tape, params);
    auto audio = constant_audio(tape, clip_frames);
    std::span<const TokenSequence> one(&seq, 1);
    auto out = forward_lm<float>(w, cfg, one, clip_frames.empty() ? nullptr : &audio);
    const auto& logits = out.logits.value();
    const float* last = logits.row(seq.size() - 1);
    const std::size_t vocab = logits.cols();
    int next = 0;
    if (opts.temperature <= 0.0) {
      next = static_cast<int>(std::max_element(last, last + vocab) - last);
    } else {
      std::vector<double> weights(vocab);
      const double mx = *std::max_element(last, last + vocab);
      for (std::size_t v = 0; v < vocab; ++v) weights[v] = std::exp((last[v] - mx) / opts.temperature);
      std::discrete_distribution<int> dist(weights.begin(), weights.end());
      next = dist(rng);
    }
    if (next == opts.eos_id) break;
    produced.push_back(next);
    seq.ids.push_back(next);
    seq.loss_mask.push_back(0);
  }
  return produced;
}

#define ALM_INSTANTIATE_MODEL(T)                                                                              \
  template core::ParameterStore<T> init_params<T>(const ModelConfig&, std::uint64_t);                        \
  template Array<T> sinusoidal_positions<T>(std::size_t, std::size_t);                                        \
  template EncodedAudio<T> encode_audio<T>(Weights<T>&, const EncoderConfig&,                                 \
                                           std::span<const audio::MelSpectrogram* const>);                    \
  template LmOutput<T> forward_lm<T>(Weights<T>&, const ModelConfig&, std::span<const TokenSequence>,        \
                                     const EncodedAudio<T>*);                                                 \
  template Var<T> lm_loss<T>(const LmOutput<T>&, std::span<const TokenSequence>);                             \
  template Var<T> sequence_logprobs<T>(const LmOutput<T>&, std::span<const TokenSequence>);

ALM_INSTANTIATE_MODEL(float)
ALM_INSTANTIATE_MODEL(double)

#undef ALM_INSTANTIATE_MODEL

}  // namespace alm::model
