#include "alm/eval/benchmark.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <thread>

#include "alm/audio/mel.hpp"
#include "alm/core/errors.hpp"
#include "alm/data/tokenizer.hpp"
#include "alm/model/model.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace alm::eval {

namespace {

const std::vector<std::pair<Metric, std::string>>& metric_table() {
  static const std::vector<std::pair<Metric, std::string>> t = {
      {Metric::wer, "wer"}, {Metric::bleu, "bleu"}, {Metric::acc, "acc"}, {Metric::judge, "judge"}};
  return t;
}

// Runs fn(i) for i in [0, n) on up to `workers` threads.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

std::string question_text(const data::Conversation& prompt) {
  std::string text;
  bool audio = false;
  for (const auto& m : prompt.messages) {
    for (const auto& p : m.parts) {
      if (p.kind == data::Part::Kind::audio) {
        audio = true;
      } else {
        text += (text.empty() ? "" : " ") + p.value;
      }
    }
  }
  if (audio) text = "[audio clip]" + (text.empty() ? std::string(" (spoken question)") : " " + text);
  return text;
}

std::uint64_t file_fnv1a(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::uint64_t h = 1469598103934665603ull;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::string render_ids(const data::Tokenizer& tok, const std::vector<int>& ids) {
  std::string out;
  for (int id : ids) {
    if (!out.empty()) out += ' ';
    out += id >= 0 && static_cast<std::size_t>(id) < tok.size() ? tok.token(id) : "<id" + std::to_string(id) + ">";
  }
  return out;
}

std::string metric_name(Metric m) {
  for (const auto& [k, v] : metric_table()) {
    if (k == m) return v;
  }
  return "?";
}

std::vector<Metric> parse_metrics(const std::string& csv) {
  std::vector<Metric> out;
  std::stringstream ss(csv);
  for (std::string name; std::getline(ss, name, ',');) {
    if (name.empty()) continue;
    auto it = std::find_if(metric_table().begin(), metric_table().end(), [&](auto& e) { return e.second == name; });
    if (it == metric_table().end()) throw InvalidConfig("unknown metric '" + name + "' (expected wer, bleu, acc, judge)");
    if (std::find(out.begin(), out.end(), it->first) == out.end()) out.push_back(it->first);
  }
  if (out.empty()) throw InvalidConfig("no metrics selected");
  return out;
}

bool metric_applies(Metric m, const std::string& task) {
  switch (m) {
    case Metric::wer: return task == "asr";
    case Metric::bleu: return task == "s2tt";
    case Metric::acc: return true;
    case Metric::judge: return task == "voice_chat" || task == "mixed";
  }
  return false;
}

std::vector<EvalItem> generate_answers(const model::Model& model, std::span<const data::Record> records,
                                       const fs::path& base_dir, const BenchmarkOptions& opts) {
  const auto& tok = data::Tokenizer::standard();
  std::vector<EvalItem> items(records.size());
  parallel_for(records.size(), opts.threads, [&](std::size_t i) {
    const auto& r = records[i];
    EvalItem& it = items[i];
    it.id = r.id;
    it.task = r.task;
    it.reference = r.target;
    const auto prompt = r.conversation.prompt();
    it.question = question_text(prompt);
    try {
      std::vector<core::ArrayF> frames;
      std::vector<std::size_t> lengths;
      for (const auto& clip : data::load_audio(r, base_dir)) {
        frames.push_back(model::encode_clip(model.config, model.params, audio::log_mel(clip)));
        lengths.push_back(frames.back().shape[0]);
      }
      const auto seq = data::serialize(prompt, tok, lengths);
      model::GenerateOptions g;
      g.max_tokens = opts.max_tokens;
      it.hypothesis = render_ids(tok, model::generate(model.config, model.params, seq, frames, g));
    } catch (const Error& e) {
      it.error = e.what();
    }
  });
  return items;
}

json aggregate_records(const json& records, std::span<const Metric> metrics) {
  struct Acc {
    std::size_t n = 0, failures = 0, wer_err = 0, wer_ref = 0, correct = 0, judged = 0, judge_failures = 0;
    double judge_sum = 0;
    std::vector<std::string> refs, hyps;
  };
  std::map<std::string, Acc> by_task;
  auto selected = [&](Metric m) { return std::find(metrics.begin(), metrics.end(), m) != metrics.end(); };
  for (const auto& r : records) {
    Acc& a = by_task[r.at("task").get<std::string>()];
    if (r.contains("error")) {
      ++a.failures;
      continue;
    }
    ++a.n;
    const auto& m = r.at("metrics");
    if (m.contains("wer_errors")) {
      a.wer_err += m.at("wer_errors").get<std::size_t>();
      a.wer_ref += m.at("wer_ref_tokens").get<std::size_t>();
    }
    if (m.contains("acc")) a.correct += m.at("acc").get<std::size_t>();
    if (m.contains("judge")) {
      a.judge_sum += m.at("judge").get<double>();
      ++a.judged;
    }
    if (m.contains("judge_error")) ++a.judge_failures;
    a.refs.push_back(r.at("reference").get<std::string>());
    a.hyps.push_back(r.at("hypothesis").get<std::string>());
  }
  json out = json::object();
  for (const auto& [task, a] : by_task) {
    json t = {{"n", a.n}, {"failures", a.failures}};
    if (a.n > 0) {
      if (selected(Metric::wer) && metric_applies(Metric::wer, task) && a.wer_ref > 0) {
        t["wer"] = static_cast<double>(a.wer_err) / static_cast<double>(a.wer_ref);
      }
      if (selected(Metric::bleu) && metric_applies(Metric::bleu, task)) t["bleu"] = bleu(a.refs, a.hyps);
      if (selected(Metric::acc) && metric_applies(Metric::acc, task)) {
        t["acc"] = static_cast<double>(a.correct) / static_cast<double>(a.n);
      }
      if (selected(Metric::judge) && metric_applies(Metric::judge, task)) {
        t["judge_failures"] = a.judge_failures;
        if (a.judged > 0) t["judge"] = a.judge_sum / static_cast<double>(a.judged);
      }
    }
    out[task] = std::move(t);
  }
  return out;
}

json score_items(std::vector<EvalItem> items, const BenchmarkOptions& opts, const json& model_info,
                 const std::string& dataset) {
  auto selected = [&](Metric m) { return std::find(opts.metrics.begin(), opts.metrics.end(), m) != opts.metrics.end(); };
  if (selected(Metric::judge) && opts.judge == nullptr) throw InvalidConfig("judge metric selected without a judge client");
  std::sort(items.begin(), items.end(), [](const EvalItem& a, const EvalItem& b) { return a.id < b.id; });

  std::vector<json> records(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    json r = {{"id", it.id}, {"task", it.task}, {"reference", it.reference}, {"hypothesis", it.hypothesis}};
    if (!it.error.empty()) {
      r["error"] = it.error;
      records[i] = std::move(r);
      continue;
    }
    json m = json::object();
    if (selected(Metric::wer) && metric_applies(Metric::wer, it.task)) {
      const auto c = wer_counts(it.reference, it.hypothesis, opts.wer_unit, opts.wer_normalize);
      m["wer"] = static_cast<double>(c.errors) / static_cast<double>(c.ref_tokens);
      m["wer_errors"] = c.errors;
      m["wer_ref_tokens"] = c.ref_tokens;
    }
    if (selected(Metric::acc)) m["acc"] = normalize_text(it.reference) == normalize_text(it.hypothesis) ? 1 : 0;
    r["metrics"] = std::move(m);
    records[i] = std::move(r);
  }

  if (selected(Metric::judge)) {
    parallel_for(items.size(), opts.judge_in_flight, [&](std::size_t i) {
      const auto& it = items[i];
      if (!it.error.empty() || !metric_applies(Metric::judge, it.task)) return;
      try {
        const auto v = judge_score({default_rubric(), it.question, it.reference, it.hypothesis}, *opts.judge);
        records[i]["metrics"]["judge"] = v.score;
        records[i]["metrics"]["judge_rationale"] = v.rationale;
      } catch (const Error& e) {
        records[i]["metrics"]["judge_error"] = e.what();
      }
    });
  }

  json metric_names = json::array();
  for (auto m : opts.metrics) metric_names.push_back(metric_name(m));
  json rec_array = json::array();
  for (auto& r : records) rec_array.push_back(std::move(r));
  json report = {
      {"dataset", dataset},
      {"timestamp", report_timestamp()},
      {"model", model_info},
      {"metrics", metric_names},
      {"judge", selected(Metric::judge) && opts.judge ? opts.judge->name() : "none"},
      {"bleu_smoothing", "floor: zero n-gram match counts replaced by " + std::to_string(kBleuEpsilon).substr(0, 3)},
      {"wer_unit", opts.wer_unit == WerUnit::word ? "word" : "char"},
      {"wer_normalize", opts.wer_normalize},
      {"config", opts.config},
  };
  report["aggregates"] = aggregate_records(rec_array, opts.metrics);
  report["records"] = std::move(rec_array);
  return report;
}

json run_benchmark(const fs::path& ckpt, const fs::path& manifest, const BenchmarkOptions& opts) {
  const auto model = model::load_model(ckpt);
  const auto records = data::read_manifest(manifest);
  for (const auto& r : records) {
    if (r.split != "dev" && r.split != "test") {
      throw InvalidConfig("benchmark manifests must hold dev or test records; '" + r.id + "' is " + r.split);
    }
  }
  auto items = generate_answers(model, records, manifest.parent_path(), opts);
  json info = {
      {"checkpoint", ckpt.filename().string()},
      {"checkpoint_fnv1a64", hex64(file_fnv1a(ckpt))},
      {"provenance", model.trailer.value("provenance", json::array())},
      {"parameters", model::parameter_count(model.config)},
  };
  return score_items(std::move(items), opts, info, manifest.filename().string());
}

std::string render_table(const json& report) {
  static const std::map<std::string, std::string> task_title = {
      {"asr", "ASR"},        {"s2tt", "S2TT"}, {"vsc", "VSC"}, {"ser", "SER"},
      {"mixed", "Mixed audio chat"}, {"voice_chat", "Voice chat"}};
  struct Row {
    std::string task, dataset, metric, result;
  };
  std::vector<Row> rows;
  const std::string dataset = report.value("dataset", "");
  for (const auto& [task, agg] : report.at("aggregates").items()) {
    auto it = task_title.find(task);
    const std::string title = it == task_title.end() ? task : it->second;
    for (const auto& name : {"wer", "bleu", "acc", "judge"}) {
      if (!agg.contains(name)) continue;
      std::ostringstream v;
      const double x = agg.at(name).get<double>();
      if (std::string(name) == "wer") {
        v << std::fixed << std::setprecision(2) << 100.0 * x << "%";
      } else if (std::string(name) == "acc") {
        v << std::fixed << std::setprecision(3) << x;
      } else {
        v << std::fixed << std::setprecision(2) << x;
      }
      std::string metric = name;
      std::transform(metric.begin(), metric.end(), metric.begin(), ::toupper);
      if (metric == "JUDGE") metric = "Judge (0-10)";
      rows.push_back({title, dataset, metric, v.str()});
    }
    const auto failures = agg.value("failures", std::size_t{0});
    if (failures > 0) rows.push_back({title, dataset, "failed records", std::to_string(failures)});
  }
  Row head{"Task", "Dataset", "Metric", "Result"};
  std::size_t w[4] = {head.task.size(), head.dataset.size(), head.metric.size(), head.result.size()};
  for (const auto& r : rows) {
    w[0] = std::max(w[0], r.task.size());
    w[1] = std::max(w[1], r.dataset.size());
    w[2] = std::max(w[2], r.metric.size());
    w[3] = std::max(w[3], r.result.size());
  }
  std::ostringstream os;
  auto line = [&](const Row& r) {
    os << std::left << std::setw(static_cast<int>(w[0])) << r.task << " | " << std::setw(static_cast<int>(w[1]))
       << r.dataset << " | " << std::setw(static_cast<int>(w[2])) << r.metric << " | " << r.result << "\n";
  };
  line(head);
  os << std::string(w[0], '-') << "-+-" << std::string(w[1], '-') << "-+-" << std::string(w[2], '-') << "-+-"
     << std::string(w[3], '-') << "\n";
  for (const auto& r : rows) line(r);
  os << "\njudge: " << report.value("judge", "none") << "; BLEU smoothing: " << report.value("bleu_smoothing", "")
     << "\ntimestamp: " << report.value("timestamp", "") << "\n";
  return os.str();
}

void write_report(const json& report, const fs::path& name) {
  auto write = [](const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot write " + p.string());
    out << text;
    if (!out) throw IoError("write failed for " + p.string());
  };
  write(fs::path(name.string() + ".report.json"), report.dump(2) + "\n");
  write(fs::path(name.string() + ".report.txt"), render_table(report));
}

std::string report_timestamp() {
  std::time_t t = std::time(nullptr);
  if (const char* sde = std::getenv("SOURCE_DATE_EPOCH"); sde != nullptr && *sde != '\0') {
    try {
      t = static_cast<std::time_t>(std::stoll(sde));
    } catch (const std::exception&) {
      throw InvalidConfig(std::string("SOURCE_DATE_EPOCH is not an integer: ") + sde);
    }
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace alm::eval
