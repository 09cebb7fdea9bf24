#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace alm::audio {

inline constexpr int kModelSampleRate = 16000;

/// Mono PCM clip with amplitudes in [-1, 1].
struct AudioClip {
  std::vector<float> samples;
  int sample_rate = kModelSampleRate;

  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// Throws InvalidAudio if the clip is empty, has a non-positive rate or holds
/// a non-finite sample.
void validate(const AudioClip& clip);

/// Linear-interpolation resampler. Output length is
/// round(n * target_rate / input_rate); a clip already at `target_rate` is
/// returned unchanged.
AudioClip resample(const AudioClip& clip, int target_rate);

/// RIFF/WAVE, PCM 16-bit, mono, little-endian.
AudioClip read_wav(const std::filesystem::path& path);
void write_wav(const AudioClip& clip, const std::filesystem::path& path);

/// FNV-1a over the 16-bit quantized samples and the sample rate.
std::uint64_t clip_hash(const AudioClip& clip);

}  // namespace alm::audio
