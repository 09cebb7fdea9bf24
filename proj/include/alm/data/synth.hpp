#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "alm/audio/audio.hpp"

namespace alm::data {

enum class Task { asr, s2tt, vsc, ser, mixed, voice_chat };

const std::vector<std::string>& task_names();
std::string task_name(Task task);
/// Throws InvalidConfig listing the valid task names.
Task parse_task(const std::string& name);
/// Tasks whose instruction is spoken inside the audio rather than given as text.
bool is_voice_chat(Task task);

inline constexpr double kToneSeconds = 0.100;
inline constexpr double kRampSeconds = 0.010;
/// Peak amplitude of rendered signals. Chosen so the peak mel energy of any
/// rendered clip stays below 1 and normalized features stay within [-1.5, 1].
inline constexpr double kSignalAmplitude = 0.04;

struct TaskSpec {
  Task task = Task::asr;
  std::vector<std::string> vocab;  // words (or class labels) this task renders
  double noise_level = 0.0;        // std of additive white noise, full scale = 1
  std::uint64_t seed = 0;

  static TaskSpec make(Task task, double noise_level = 0.0, std::uint64_t seed = 0);
};

/// Each word becomes two consecutive 100 ms tones (its tone pair) with 10 ms
/// cosine ramps. Throws VocabError for a word outside spec.vocab.
audio::AudioClip synth_clip(std::span<const std::string> words, const TaskSpec& spec);

/// Waveform family per class: whistle (sine), buzzer (square), static (gated
/// noise bursts), happy (rising pitch), sad (falling pitch). Signal
/// parameters are drawn from spec.seed. Throws VocabError for unknown labels.
audio::AudioClip synth_class(const std::string& label, const TaskSpec& spec, double duration_s = 0.5);

/// Adds white noise of standard deviation `level`, clamped to [-1, 1].
void add_noise(audio::AudioClip& clip, double level, std::mt19937_64& rng);

}  // namespace alm::data
