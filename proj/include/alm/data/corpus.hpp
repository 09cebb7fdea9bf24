#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "alm/audio/audio.hpp"
#include "alm/data/conversation.hpp"
#include "alm/data/synth.hpp"

namespace alm::data {

/// One manifest line.
struct Record {
  std::string id;
  std::string task;
  std::string split;
  std::vector<std::string> audio_paths;  // relative to the manifest directory
  Conversation conversation;             // ends with the assistant target turn
  std::string target;
};

void to_json(nlohmann::json& j, const Record& r);
void from_json(const nlohmann::json& j, Record& r);

struct CorpusConfig {
  std::vector<Task> tasks = {Task::asr};
  std::size_t n = 100;  // records per task, before splitting
  std::map<Task, std::size_t> n_per_task;  // overrides `n` for listed tasks
  std::array<double, 3> ratios = {8, 1, 1};
  std::uint64_t seed = 0;
  double noise_level = 0.0;
};

struct SplitCounts {
  std::size_t train = 0, dev = 0, test = 0;
};

/// dev = round(n * r_dev / sum), test = round(n * r_test / sum), rest train.
SplitCounts split_counts(std::size_t n, const std::array<double, 3>& ratios);

struct Manifest {
  std::vector<Record> train, dev, test;
  const std::vector<Record>& split(const std::string& name) const;
};

/// Generates records and clips for every configured task and writes
/// `<out>/{train,dev,test}.jsonl` plus `<out>/audio/*.wav`. Each record draws
/// from its own RNG stream derived from (seed, task, split, index), and no
/// clip hash is shared between splits.
Manifest build_corpus(const CorpusConfig& cfg, const std::filesystem::path& out_dir);

/// Renders one record's audio and conversation without touching the disk.
struct GeneratedRecord {
  Record record;
  std::vector<audio::AudioClip> clips;
};
GeneratedRecord generate_record(Task task, const std::string& split, std::size_t index, std::uint64_t seed,
                                double noise_level, std::uint64_t attempt = 0);

void write_manifest(std::span<const Record> records, const std::filesystem::path& path);
/// Throws IoError naming the path, InvalidInput on a malformed line.
std::vector<Record> read_manifest(const std::filesystem::path& path);
/// Loads every clip of `r`, resolving paths against `base_dir`.
std::vector<audio::AudioClip> load_audio(const Record& r, const std::filesystem::path& base_dir);

enum class Corruption { word_swap, truncation, wrong_class };
std::string corruption_name(Corruption c);
Corruption parse_corruption(const std::string& name);

/// Prompt context plus a preferred and a dispreferred response.
struct PreferenceTriple {
  std::string id;
  std::string task;
  std::vector<std::string> audio_paths;
  Conversation context;  // ends at the user turn
  std::string chosen;
  std::string rejected;
};

/// chosen = the record target; rejected = the target corrupted by `corruption`.
/// word_swap replaces k = max(1, floor(rate * n + u)) distinct words (u
/// uniform in [0, 1)) with other words seen in targets of the same task;
/// truncation drops the last k words; wrong_class substitutes the target of
/// another record of the same task. Throws InsufficientData when fewer than
/// two records are available or none can be corrupted.
std::vector<PreferenceTriple> build_preferences(std::span<const Record> base, std::size_t n_pairs,
                                                Corruption corruption, double rate, std::uint64_t seed);

}  // namespace alm::data
