#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "alm/data/corpus.hpp"
#include "alm/data/tokenizer.hpp"
#include "alm/eval/judge.hpp"
#include "alm/eval/metrics.hpp"
#include "alm/model/checkpoint.hpp"

namespace alm::eval {

enum class Metric { wer, bleu, acc, judge };

std::string metric_name(Metric m);
/// Comma-separated names, e.g. "wer,acc". Throws InvalidConfig.
std::vector<Metric> parse_metrics(const std::string& csv);
/// wer scores asr, bleu scores s2tt, judge scores voice_chat and mixed, acc
/// scores every task.
bool metric_applies(Metric m, const std::string& task);

/// One model answer awaiting scoring.
struct EvalItem {
  std::string id;
  std::string task;
  std::string question;  // prompt text shown to the judge
  std::string reference;
  std::string hypothesis;
  std::string error;  // non-empty when the record could not be run
};

struct BenchmarkOptions {
  std::vector<Metric> metrics = {Metric::wer, Metric::bleu, Metric::acc, Metric::judge};
  JudgeClient* judge = nullptr;  // required when Metric::judge is selected
  WerUnit wer_unit = WerUnit::word;
  bool wer_normalize = true;
  std::size_t max_tokens = 32;
  std::size_t threads = 0;          // generation workers, 0 = hardware concurrency
  std::size_t judge_in_flight = 4;  // concurrent judge requests
  nlohmann::json config = nlohmann::json::object();  // echoed into the report
};

/// Decodes generated ids; ids beyond the tokenizer (possible when vocab_size
/// exceeds it) render as "<idN>" instead of failing.
std::string render_ids(const data::Tokenizer& tok, const std::vector<int>& ids);

/// Greedy answers for every record, in input order. Missing or unreadable
/// audio marks the item with an error instead of throwing.
std::vector<EvalItem> generate_answers(const model::Model& model, std::span<const data::Record> records,
                                       const std::filesystem::path& base_dir, const BenchmarkOptions& opts);

/// Scores items and assembles a report: records sorted by id, per-task
/// aggregates, and the given metadata under "model", "dataset" and
/// "config".
nlohmann::json score_items(std::vector<EvalItem> items, const BenchmarkOptions& opts,
                           const nlohmann::json& model_info, const std::string& dataset);

/// Per-task aggregates computed from report records alone.
nlohmann::json aggregate_records(const nlohmann::json& records, std::span<const Metric> metrics);

/// Loads the checkpoint and the manifest (split dev or test), generates and
/// scores. Throws IoError / CheckpointError for unreadable inputs and
/// InvalidConfig for other splits.
nlohmann::json run_benchmark(const std::filesystem::path& ckpt, const std::filesystem::path& manifest,
                             const BenchmarkOptions& opts);

/// Task / dataset / metric / result table.
std::string render_table(const nlohmann::json& report);

/// Writes `<name>.report.json` and `<name>.report.txt`.
void write_report(const nlohmann::json& report, const std::filesystem::path& name);

/// ISO-8601 UTC time from SOURCE_DATE_EPOCH when set, else the current time.
std::string report_timestamp();

}  // namespace alm::eval
