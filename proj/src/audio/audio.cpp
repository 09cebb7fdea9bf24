#include "alm/audio/audio.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "alm/core/errors.hpp"

namespace alm::audio {

void validate(const AudioClip& clip) {
  if (clip.samples.empty()) throw InvalidAudio("clip has no samples");
  if (clip.sample_rate <= 0) throw InvalidAudio("sample rate must be positive, got " + std::to_string(clip.sample_rate));
  for (std::size_t i = 0; i < clip.samples.size(); ++i) {
    if (!std::isfinite(clip.samples[i])) throw InvalidAudio("non-finite sample at index " + std::to_string(i));
  }
}

AudioClip resample(const AudioClip& clip, int target_rate) {
  validate(clip);
  if (target_rate <= 0) throw InvalidAudio("target rate must be positive, got " + std::to_string(target_rate));
  if (clip.sample_rate == target_rate) return clip;

  const std::size_t n_in = clip.samples.size();
  const auto n_out = static_cast<std::size_t>(
      std::llround(static_cast<double>(n_in) * target_rate / clip.sample_rate));
  AudioClip out;
  out.sample_rate = target_rate;
  out.samples.resize(std::max<std::size_t>(n_out, 1));
  const double step = static_cast<double>(clip.sample_rate) / target_rate;
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    const double pos = static_cast<double>(i) * step;
    const auto lo = std::min(static_cast<std::size_t>(pos), n_in - 1);
    const std::size_t hi = std::min(lo + 1, n_in - 1);
    const double frac = pos - static_cast<double>(lo);
    const double v = clip.samples[lo] + (clip.samples[hi] - clip.samples[lo]) * std::min(frac, 1.0);
    out.samples[i] = static_cast<float>(std::clamp(v, -1.0, 1.0));
  }
  return out;
}

std::uint64_t clip_hash(const AudioClip& clip) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint8_t byte) {
    h ^= byte;
    h *= 1099511628211ULL;
  };
  for (int shift = 0; shift < 32; shift += 8) mix(static_cast<std::uint8_t>(clip.sample_rate >> shift));
  for (float s : clip.samples) {
    const auto q = static_cast<std::int16_t>(std::clamp(std::lround(s * 32768.0), -32768L, 32767L));
    mix(static_cast<std::uint8_t>(q & 0xff));
    mix(static_cast<std::uint8_t>((q >> 8) & 0xff));
  }
  return h;
}

}  // namespace alm::audio
