#include "alm/data/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "alm/core/errors.hpp"
#include "alm/data/lexicon.hpp"

namespace alm::data {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr int kRate = audio::kModelSampleRate;

// Raised-cosine fade in/out over `ramp` samples at both ends of [begin, end).
void apply_ramps(std::vector<float>& x, std::size_t begin, std::size_t end, std::size_t ramp) {
  const std::size_t n = end - begin;
  ramp = std::min(ramp, n / 2);
  for (std::size_t i = 0; i < ramp; ++i) {
    const double g = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(i) / static_cast<double>(ramp));
    x[begin + i] = static_cast<float>(x[begin + i] * g);
    x[end - 1 - i] = static_cast<float>(x[end - 1 - i] * g);
  }
}

std::size_t samples_for(double seconds) { return static_cast<std::size_t>(std::llround(seconds * kRate)); }

std::vector<float> chirp(double f_start, double f_end, std::size_t n, double amplitude) {
  std::vector<float> x(n);
  double phase = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double frac = static_cast<double>(i) / static_cast<double>(n);
    const double f = f_start * std::pow(f_end / f_start, frac);
    x[i] = static_cast<float>(amplitude * (0.7 * std::sin(phase) + 0.3 * std::sin(2.0 * phase)));
    phase += kTwoPi * f / kRate;
  }
  return x;
}

}  // namespace

const std::vector<std::string>& task_names() {
  static const std::vector<std::string> names = {"asr", "s2tt", "vsc", "ser", "mixed", "voice_chat"};
  return names;
}

std::string task_name(Task task) { return task_names()[static_cast<std::size_t>(task)]; }

Task parse_task(const std::string& name) {
  const auto& names = task_names();
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) {
    std::string list;
    for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
    throw InvalidConfig("unknown task '" + name + "' (valid tasks: " + list + ")");
  }
  return static_cast<Task>(it - names.begin());
}

bool is_voice_chat(Task task) { return task == Task::voice_chat || task == Task::mixed; }

TaskSpec TaskSpec::make(Task task, double noise_level, std::uint64_t seed) {
  TaskSpec spec;
  spec.task = task;
  spec.noise_level = noise_level;
  spec.seed = seed;
  switch (task) {
    case Task::asr:
      spec.vocab = spoken_words();
      break;
    case Task::s2tt:
      spec.vocab = content_words();
      break;
    case Task::vsc:
      spec.vocab = sound_labels();
      break;
    case Task::ser:
      spec.vocab = emotion_labels();
      break;
    case Task::voice_chat:
      spec.vocab = number_words();
      spec.vocab.insert(spec.vocab.end(), question_words().begin(), question_words().end());
      break;
    case Task::mixed:
      spec.vocab = sound_labels();
      spec.vocab.insert(spec.vocab.end(), question_words().begin(), question_words().end());
      break;
  }
  return spec;
}

audio::AudioClip synth_clip(std::span<const std::string> words, const TaskSpec& spec) {
  const std::size_t tone = samples_for(kToneSeconds);
  const std::size_t ramp = samples_for(kRampSeconds);
  const auto& freqs = tone_frequencies();
  audio::AudioClip clip;
  clip.sample_rate = kRate;
  clip.samples.assign(words.size() * 2 * tone, 0.0f);
  std::size_t pos = 0;
  for (const auto& w : words) {
    if (std::find(spec.vocab.begin(), spec.vocab.end(), w) == spec.vocab.end()) {
      throw VocabError("word '" + w + "' is not in the " + task_name(spec.task) + " vocabulary");
    }
    const auto [a, b] = tone_pair(w);
    for (int idx : {a, b}) {
      const double f = freqs[static_cast<std::size_t>(idx)];
      for (std::size_t i = 0; i < tone; ++i) {
        clip.samples[pos + i] = static_cast<float>(kSignalAmplitude * std::sin(kTwoPi * f * i / kRate));
      }
      apply_ramps(clip.samples, pos, pos + tone, ramp);
      pos += tone;
    }
  }
  if (spec.noise_level > 0.0) {
    std::mt19937_64 rng(spec.seed);
    add_noise(clip, spec.noise_level, rng);
  }
  return clip;
}

audio::AudioClip synth_class(const std::string& label, const TaskSpec& spec, double duration_s) {
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t n = samples_for(duration_s);
  if (n == 0) throw InvalidInput("class clip duration must be positive");
  audio::AudioClip clip;
  clip.sample_rate = kRate;
  const double amp = kSignalAmplitude;
  if (label == "whistle") {
    const double f = 600.0 + 2400.0 * u(rng);
    clip.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) clip.samples[i] = static_cast<float>(amp * std::sin(kTwoPi * f * i / kRate));
  } else if (label == "buzzer") {
    const double f = 150.0 + 350.0 * u(rng);
    clip.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      clip.samples[i] = static_cast<float>((std::sin(kTwoPi * f * i / kRate) >= 0 ? 0.7 : -0.7) * amp);
    }
  } else if (label == "static") {
    std::normal_distribution<double> noise(0.0, amp);
    const std::size_t gate = samples_for(0.05);
    clip.samples.resize(n);
    bool on = true;
    for (std::size_t i = 0; i < n; ++i) {
      if (i > 0 && i % gate == 0) on = u(rng) < 0.7;
      const double v = noise(rng);
      clip.samples[i] = on ? static_cast<float>(std::clamp(v, -3.0 * amp, 3.0 * amp)) : 0.0f;
    }
  } else if (label == "happy") {
    const double f0 = 200.0 + 150.0 * u(rng);
    clip.samples = chirp(f0, f0 * (1.8 + 0.6 * u(rng)), n, amp);
  } else if (label == "sad") {
    const double f0 = 400.0 + 300.0 * u(rng);
    clip.samples = chirp(f0, f0 / (1.8 + 0.6 * u(rng)), n, amp);
  } else {
    throw VocabError("unknown class label '" + label + "'");
  }
  if (std::find(spec.vocab.begin(), spec.vocab.end(), label) == spec.vocab.end()) {
    throw VocabError("label '" + label + "' is not in the " + task_name(spec.task) + " vocabulary");
  }
  apply_ramps(clip.samples, 0, n, samples_for(kRampSeconds));
  if (spec.noise_level > 0.0) add_noise(clip, spec.noise_level, rng);
  return clip;
}

void add_noise(audio::AudioClip& clip, double level, std::mt19937_64& rng) {
  if (level <= 0.0) return;
  std::normal_distribution<double> noise(0.0, level);
  for (auto& s : clip.samples) s = static_cast<float>(std::clamp(s + noise(rng), -1.0, 1.0));
}

}  // namespace alm::data
