#include "alm/data/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "alm/core/errors.hpp"
#include "alm/data/lexicon.hpp"

namespace alm::data {

namespace fs = std::filesystem;

namespace {

const std::array<std::string, 3> kSplits = {"train", "dev", "test"};

std::mt19937_64 record_rng(std::uint64_t seed, Task task, std::size_t split, std::size_t index,
                           std::uint64_t attempt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(task), static_cast<std::uint32_t>(split),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(attempt)};
  return std::mt19937_64(seq);
}

std::size_t split_index(const std::string& split) {
  auto it = std::find(kSplits.begin(), kSplits.end(), split);
  if (it == kSplits.end()) throw InvalidInput("unknown split '" + split + "'");
  return static_cast<std::size_t>(it - kSplits.begin());
}

template <typename C>
const auto& pick(const C& items, std::mt19937_64& rng) {
  return items[std::uniform_int_distribution<std::size_t>(0, items.size() - 1)(rng)];
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) out += (out.empty() ? "" : " ") + w;
  return out;
}

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

audio::AudioClip silence(double seconds) {
  audio::AudioClip c;
  c.samples.assign(static_cast<std::size_t>(std::llround(seconds * audio::kModelSampleRate)), 0.0f);
  return c;
}

void append(audio::AudioClip& dst, const audio::AudioClip& src) {
  dst.samples.insert(dst.samples.end(), src.samples.begin(), src.samples.end());
}

// Leading/trailing silence, gain jitter and additive noise applied per record.
audio::AudioClip vary(const audio::AudioClip& clip, double noise_level, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pad(0.0, 0.1), gain(0.8, 1.2);
  audio::AudioClip out = silence(pad(rng));
  append(out, clip);
  append(out, silence(pad(rng)));
  const double g = gain(rng);
  for (auto& s : out.samples) s = static_cast<float>(s * g);
  add_noise(out, noise_level, rng);
  return out;
}

// Spoken arithmetic or successor question and its number-word answer.
std::pair<std::vector<std::string>, std::string> voice_question(std::mt19937_64& rng) {
  const auto& num = number_words();
  std::uniform_int_distribution<int> digit(0, 9);
  switch (std::uniform_int_distribution<int>(0, 3)(rng)) {
    case 0: {
      const int a = digit(rng), b = std::uniform_int_distribution<int>(0, 9 - a)(rng);
      return {{"what", "is", num[a], "plus", num[b]}, num[a + b]};
    }
    case 1: {
      const int a = digit(rng), b = std::uniform_int_distribution<int>(0, a)(rng);
      return {{"what", "is", num[a], "minus", num[b]}, num[a - b]};
    }
    case 2: {
      const int a = std::uniform_int_distribution<int>(0, 8)(rng);
      return {{"what", "comes", "after", num[a]}, num[a + 1]};
    }
    default: {
      const int a = std::uniform_int_distribution<int>(1, 9)(rng);
      return {{"what", "comes", "before", num[a]}, num[a - 1]};
    }
  }
}

}  // namespace

SplitCounts split_counts(std::size_t n, const std::array<double, 3>& ratios) {
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (!(total > 0) || ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0) {
    throw InvalidConfig("split ratios must be non-negative with a positive sum");
  }
  SplitCounts c;
  c.dev = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios[1] / total));
  c.test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios[2] / total));
  if (c.dev + c.test > n) throw InvalidConfig("split ratios leave no room for the train split");
  c.train = n - c.dev - c.test;
  return c;
}

const std::vector<Record>& Manifest::split(const std::string& name) const {
  switch (split_index(name)) {
    case 0:
      return train;
    case 1:
      return dev;
    default:
      return test;
  }
}

void to_json(nlohmann::json& j, const Record& r) {
  j = {{"id", r.id},
       {"task", r.task},
       {"split", r.split},
       {"audio_paths", r.audio_paths},
       {"conversation", r.conversation},
       {"target", r.target}};
}

void from_json(const nlohmann::json& j, Record& r) {
  r.id = j.at("id").get<std::string>();
  r.task = j.at("task").get<std::string>();
  r.split = j.at("split").get<std::string>();
  r.audio_paths = j.at("audio_paths").get<std::vector<std::string>>();
  r.conversation = j.at("conversation").get<Conversation>();
  r.target = j.at("target").get<std::string>();
}

GeneratedRecord generate_record(Task task, const std::string& split, std::size_t index, std::uint64_t seed,
                                double noise_level, std::uint64_t attempt) {
  auto rng = record_rng(seed, task, split_index(split), index, attempt);
  GeneratedRecord out;
  Record& r = out.record;
  std::ostringstream id;
  id << task_name(task) << '-' << split << '-' << std::setw(5) << std::setfill('0') << index;
  r.id = id.str();
  r.task = task_name(task);
  r.split = split;
  r.audio_paths = {"audio/" + r.id + ".wav"};

  const TaskSpec spec = TaskSpec::make(task, 0.0, rng());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  audio::AudioClip raw;
  std::string instruction;
  switch (task) {
    case Task::asr:
    case Task::s2tt: {
      const auto n = std::uniform_int_distribution<std::size_t>(2, 5)(rng);
      std::vector<std::string> words;
      for (std::size_t i = 0; i < n; ++i) words.push_back(pick(spec.vocab, rng));
      raw = synth_clip(words, spec);
      if (task == Task::asr) {
        r.target = join(words);
      } else {
        std::vector<std::string> tr;
        for (const auto& w : words) tr.push_back(translate_word(w));
        r.target = join(tr);
      }
      instruction = pick(instruction_templates(r.task), rng);
      break;
    }
    case Task::vsc:
    case Task::ser: {
      const auto& labels = task == Task::vsc ? sound_labels() : emotion_labels();
      r.target = pick(labels, rng);
      raw = synth_class(r.target, spec, task == Task::vsc ? 0.4 + 0.4 * u(rng) : 0.5 + 0.4 * u(rng));
      instruction = pick(instruction_templates(r.task), rng);
      break;
    }
    case Task::voice_chat: {
      auto [words, answer] = voice_question(rng);
      raw = synth_clip(words, spec);
      r.target = answer;
      break;
    }
    case Task::mixed: {
      const std::string label = pick(sound_labels(), rng);
      raw = synth_class(label, spec, 0.4 + 0.3 * u(rng));
      append(raw, silence(0.1));
      const std::vector<std::string> question = {"what", "is", "this", "sound"};
      append(raw, synth_clip(question, spec));
      r.target = "this is the sound of a " + label;
      break;
    }
  }
  out.clips.push_back(vary(raw, noise_level, rng));

  Message user{Role::user, {Part::audio(r.audio_paths[0])}};
  if (!instruction.empty()) user.parts.push_back(Part::text(instruction));
  r.conversation.messages = {user, Message{Role::assistant, {Part::text(r.target)}}};
  r.conversation.mode_hint = is_voice_chat(task) ? "voice_chat" : "analysis";
  return out;
}

Manifest build_corpus(const CorpusConfig& cfg, const fs::path& out_dir) {
  if (cfg.tasks.empty()) throw InvalidConfig("no tasks selected");
  if (cfg.noise_level < 0) throw InvalidConfig("noise level must be non-negative");
  auto task_n = [&](Task t) {
    auto it = cfg.n_per_task.find(t);
    const std::size_t n = it == cfg.n_per_task.end() ? cfg.n : it->second;
    if (n < 10) {
      throw InvalidConfig("build_corpus needs at least 10 examples per task, got " + std::to_string(n) + " for " +
                          task_name(t));
    }
    return n;
  };
  for (Task t : cfg.tasks) split_counts(task_n(t), cfg.ratios);
  std::error_code ec;
  fs::create_directories(out_dir / "audio", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "audio").string() + ": " + ec.message());

  Manifest manifest;
  std::array<std::set<std::uint64_t>, 3> hashes;
  for (Task task : cfg.tasks) {
    const SplitCounts counts = split_counts(task_n(task), cfg.ratios);
    for (std::size_t s = 0; s < 3; ++s) {
      const std::size_t n = s == 0 ? counts.train : s == 1 ? counts.dev : counts.test;
      auto& dst = s == 0 ? manifest.train : s == 1 ? manifest.dev : manifest.test;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::uint64_t attempt = 0;; ++attempt) {
          auto g = generate_record(task, kSplits[s], i, cfg.seed, cfg.noise_level, attempt);
          std::vector<std::uint64_t> hs;
          for (const auto& c : g.clips) hs.push_back(audio::clip_hash(c));
          bool clash = false;
          for (std::size_t other = 0; other < 3; ++other) {
            if (other == s) continue;
            for (auto h : hs) clash = clash || hashes[other].count(h) != 0;
          }
          if (clash) continue;
          for (auto h : hs) hashes[s].insert(h);
          for (std::size_t c = 0; c < g.clips.size(); ++c) {
            audio::write_wav(g.clips[c], out_dir / g.record.audio_paths[c]);
          }
          dst.push_back(std::move(g.record));
          break;
        }
      }
    }
  }
  write_manifest(manifest.train, out_dir / "train.jsonl");
  write_manifest(manifest.dev, out_dir / "dev.jsonl");
  write_manifest(manifest.test, out_dir / "test.jsonl");
  return manifest;
}

void write_manifest(std::span<const Record> records, const fs::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write manifest " + path.string());
  for (const auto& r : records) os << nlohmann::json(r).dump() << '\n';
  if (!os) throw IoError("failed writing manifest " + path.string());
}

std::vector<Record> read_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest " + path.string());
  std::vector<Record> out;
  std::set<std::string> ids;
  std::string line;
  for (std::size_t lineno = 1; std::getline(is, line); ++lineno) {
    if (normalize_space(line).empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<Record>());
    } catch (const nlohmann::json::exception& e) {
      throw InvalidInput(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!ids.insert(out.back().id).second) {
      throw InvalidInput(path.string() + ":" + std::to_string(lineno) + ": duplicate id " + out.back().id);
    }
  }
  return out;
}

std::vector<audio::AudioClip> load_audio(const Record& r, const fs::path& base_dir) {
  std::vector<audio::AudioClip> clips;
  for (const auto& p : r.audio_paths) clips.push_back(audio::resample(audio::read_wav(base_dir / p), audio::kModelSampleRate));
  return clips;
}

std::string corruption_name(Corruption c) {
  switch (c) {
    case Corruption::word_swap:
      return "word-swap";
    case Corruption::truncation:
      return "truncation";
    case Corruption::wrong_class:
      return "wrong-class";
  }
  return "word-swap";
}

Corruption parse_corruption(const std::string& name) {
  if (name == "word-swap") return Corruption::word_swap;
  if (name == "truncation") return Corruption::truncation;
  if (name == "wrong-class") return Corruption::wrong_class;
  throw InvalidConfig("unknown corruption '" + name + "' (valid: word-swap, truncation, wrong-class)");
}

std::vector<PreferenceTriple> build_preferences(std::span<const Record> base, std::size_t n_pairs,
                                                Corruption corruption, double rate, std::uint64_t seed) {
  if (base.size() < 2) {
    throw InsufficientData("need at least 2 records to build preferences, got " + std::to_string(base.size()));
  }
  if (!(rate > 0.0 && rate <= 1.0)) throw InvalidConfig("corruption rate must lie in (0, 1]");
  std::map<std::string, std::vector<std::string>> task_words, task_targets;
  {
    std::map<std::string, std::set<std::string>> words, targets;
    for (const auto& r : base) {
      for (const auto& w : split_words(r.target)) words[r.task].insert(w);
      targets[r.task].insert(normalize_space(r.target));
    }
    for (auto& [t, s] : words) task_words[t] = {s.begin(), s.end()};
    for (auto& [t, s] : targets) task_targets[t] = {s.begin(), s.end()};
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::size_t> order(base.size());
  std::vector<PreferenceTriple> out;
  std::size_t cursor = order.size(), misses = 0;
  while (out.size() < n_pairs) {
    if (cursor == order.size()) {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const Record& r = base[order[cursor++]];
    const std::string chosen = normalize_space(r.target);
    auto words = split_words(chosen);
    const std::size_t n = words.size();
    std::string rejected;
    bool ok = n > 0;
    if (ok && corruption != Corruption::wrong_class) {
      const auto k = std::min(n, std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(rate * n + u(rng)))));
      if (corruption == Corruption::truncation) {
        words.resize(n - k);
      } else {
        std::vector<std::size_t> pos(n);
        for (std::size_t i = 0; i < n; ++i) pos[i] = i;
        std::shuffle(pos.begin(), pos.end(), rng);
        const auto& vocab = task_words[r.task];
        for (std::size_t i = 0; i < k && ok; ++i) {
          std::vector<std::string> cand;
          for (const auto& w : vocab)
            if (w != words[pos[i]]) cand.push_back(w);
          if (cand.empty()) ok = false;
          else words[pos[i]] = pick(cand, rng);
        }
      }
      rejected = join(words);
    } else if (ok) {
      std::vector<std::string> cand;
      for (const auto& t : task_targets[r.task])
        if (t != chosen) cand.push_back(t);
      if (cand.empty()) ok = false;
      else rejected = pick(cand, rng);
    }
    if (!ok || rejected == chosen) {
      if (++misses > 10 * base.size()) {
        throw InsufficientData("no record in the corpus supports " + corruption_name(corruption) + " corruption");
      }
      continue;
    }
    misses = 0;
    PreferenceTriple t;
    t.id = r.id + "-pref-" + std::to_string(out.size());
    t.task = r.task;
    t.audio_paths = r.audio_paths;
    t.context = r.conversation.prompt();
    t.chosen = chosen;
    t.rejected = rejected;
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace alm::data
