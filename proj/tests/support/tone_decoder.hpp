#pragma once

// Signal-processing decoder for tone-pair speech: finds the onset, cuts the
// clip into 100 ms tones and picks the strongest of the ten code
// frequencies with a Goertzel filter on the middle of each tone. Shares no
// code with the model; it bounds how decodable the synthetic task is.

#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "alm/audio/audio.hpp"
#include "alm/data/lexicon.hpp"

namespace alm::testing {

inline double goertzel_power(const std::vector<float>& x, std::size_t begin, std::size_t end, double hz, int rate) {
  const double w = 2.0 * std::numbers::pi * hz / rate;
  const double c = 2.0 * std::cos(w);
  double s1 = 0, s2 = 0;
  for (std::size_t i = begin; i < end; ++i) {
    const double s0 = x[i] + c * s1 - s2;
    s2 = s1;
    s1 = s0;
  }
  return s1 * s1 + s2 * s2 - c * s1 * s2;
}

inline std::optional<std::vector<std::string>> decode_tones(const audio::AudioClip& clip, double threshold = 1e-4) {
  const std::size_t tone = static_cast<std::size_t>(clip.sample_rate / 10);
  std::size_t onset = 0;
  while (onset < clip.samples.size() && std::abs(clip.samples[onset]) < threshold) ++onset;
  if (onset == clip.samples.size()) return std::nullopt;
  std::map<std::pair<int, int>, std::string> by_pair;
  for (const auto& w : data::spoken_words()) by_pair[data::tone_pair(w)] = w;

  const auto& freqs = data::tone_frequencies();
  std::vector<int> codes;
  // Only the middle half of each tone is read, so a late onset estimate
  // still fits the last tone.
  for (std::size_t pos = onset; pos + 3 * tone / 4 <= clip.samples.size(); pos += tone) {
    const std::size_t b = pos + tone / 4, e = pos + 3 * tone / 4;
    double energy = 0;
    for (std::size_t i = b; i < e; ++i) energy += double(clip.samples[i]) * clip.samples[i];
    if (energy / double(e - b) < threshold * threshold) break;  // trailing silence
    int best = 0;
    double best_p = -1;
    for (std::size_t k = 0; k < freqs.size(); ++k) {
      const double p = goertzel_power(clip.samples, b, e, freqs[k], clip.sample_rate);
      if (p > best_p) {
        best_p = p;
        best = static_cast<int>(k);
      }
    }
    codes.push_back(best);
  }
  if (codes.size() % 2 != 0) return std::nullopt;
  std::vector<std::string> words;
  for (std::size_t i = 0; i < codes.size(); i += 2) {
    auto it = by_pair.find({codes[i], codes[i + 1]});
    if (it == by_pair.end()) return std::nullopt;
    words.push_back(it->second);
  }
  return words;
}

}  // namespace alm::testing
