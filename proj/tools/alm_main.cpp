// alm: data generation, training, evaluation, chat and feature dumps.
#include <unistd.h>

#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "alm/audio/audio.hpp"
#include "alm/audio/mel.hpp"
#include "alm/core/errors.hpp"
#include "alm/data/corpus.hpp"
#include "alm/data/tokenizer.hpp"
#include "alm/eval/benchmark.hpp"
#include "alm/model/checkpoint.hpp"
#include "alm/model/model.hpp"
#include "alm/training/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace alm;

namespace {

enum Exit { kOk = 0, kIo = 1, kConfig = 2, kStageOrder = 3 };

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InvalidConfig(p.string() + ": " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out || !(out << text)) throw IoError("cannot write " + p.string());
}

// ---- gen-data ---------------------------------------------------------------

struct GenArgs {
  std::string tasks = "asr";
  std::size_t n = 100;
  std::string n_per_task;
  std::string out;
  std::uint64_t seed = 0;
  double noise = 0.0;
  std::string ratios = "8,1,1";
};

int cmd_gen_data(const GenArgs& a) {
  data::CorpusConfig cfg;
  cfg.tasks.clear();
  if (a.tasks == "all") {
    for (const auto& name : data::task_names()) cfg.tasks.push_back(data::parse_task(name));
  } else {
    for (const auto& name : split_csv(a.tasks)) cfg.tasks.push_back(data::parse_task(name));
  }
  cfg.n = a.n;
  for (const auto& kv : split_csv(a.n_per_task)) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw InvalidConfig("--n-per-task expects task=count, got '" + kv + "'");
    try {
      cfg.n_per_task[data::parse_task(kv.substr(0, eq))] = std::stoul(kv.substr(eq + 1));
    } catch (const std::logic_error&) {
      throw InvalidConfig("bad count in --n-per-task entry '" + kv + "'");
    }
  }
  const auto r = split_csv(a.ratios);
  if (r.size() != 3) throw InvalidConfig("--ratios expects three comma-separated numbers");
  try {
    for (int i = 0; i < 3; ++i) cfg.ratios[i] = std::stod(r[i]);
  } catch (const std::logic_error&) {
    throw InvalidConfig("--ratios expects numbers, got '" + a.ratios + "'");
  }
  cfg.seed = a.seed;
  cfg.noise_level = a.noise;
  const auto m = data::build_corpus(cfg, a.out);
  std::cout << "train " << m.train.size() << " dev " << m.dev.size() << " test " << m.test.size() << "\n";
  return kOk;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::string stage;
  std::string config;
  std::string data;
  std::string in_ckpt;
  std::string out_ckpt;
  std::string report;
  bool force = false;
  bool quiet = false;
  std::optional<double> lr, grad_clip, beta, corruption_rate;
  std::optional<std::size_t> warmup_steps, max_steps, batch_size, eval_every, dev_examples, n_pairs;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> corruption;
};

// JSON file, then ALM_<KEY> environment variables, then flags.
training::StageConfig resolve_stage_config(const TrainArgs& a) {
  json j = json::object();
  if (!a.config.empty()) {
    j = read_json_file(a.config);
    if (!j.is_object()) throw InvalidConfig(a.config + ": expected a JSON object");
  }
  for (const auto& [key, _] : json(training::StageConfig{}).items()) {
    if (key == "model" || key == "stage") continue;
    std::string var = "ALM_" + key;
    for (auto& c : var) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    const char* v = std::getenv(var.c_str());
    if (v == nullptr) continue;
    try {
      j[key] = json::parse(v);
    } catch (const json::parse_error&) {
      j[key] = std::string(v);
    }
  }
  j["stage"] = a.stage;
  auto set = [&](const char* key, const auto& opt) {
    if (opt) j[key] = *opt;
  };
  set("lr", a.lr);
  set("grad_clip", a.grad_clip);
  set("beta", a.beta);
  set("corruption_rate", a.corruption_rate);
  set("warmup_steps", a.warmup_steps);
  set("max_steps", a.max_steps);
  set("batch_size", a.batch_size);
  set("eval_every", a.eval_every);
  set("dev_examples", a.dev_examples);
  set("n_pairs", a.n_pairs);
  set("seed", a.seed);
  set("corruption", a.corruption);
  auto cfg = j.get<training::StageConfig>();
  cfg.validate();
  return cfg;
}

int cmd_train(const TrainArgs& a) {
  const auto cfg = resolve_stage_config(a);
  std::optional<fs::path> in;
  if (!a.in_ckpt.empty()) in = a.in_ckpt;
  training::RunOptions opts;
  opts.force = a.force;
  if (!a.quiet) opts.log = [](const std::string& line) { std::cerr << line << "\n"; };
  const json report = training::run_stage(cfg, a.data, in, a.out_ckpt, opts);
  const fs::path report_path = a.report.empty() ? fs::path(a.out_ckpt + ".train.json") : fs::path(a.report);
  write_text(report_path, report.dump(2) + "\n");
  std::cout << "stage " << report.at("stage").get<std::string>() << " steps " << report.at("steps") << " final_loss "
            << report.at("final_loss") << "\n";
  std::cout << "dev " << report.at("dev_metrics").dump() << "\n";
  std::cout << "checkpoint " << a.out_ckpt << "\nreport " << report_path.string() << "\n";
  return kOk;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt;
  std::string manifest;
  std::string metrics = "wer,bleu,acc,judge";
  std::string judge = "mock";
  std::string report = "eval";
  std::string wer_unit = "word";
  bool no_normalize = false;
  std::size_t max_tokens = 32;
  std::size_t threads = 0;
  std::size_t judge_in_flight = 4;
};

int cmd_eval(const EvalArgs& a) {
  eval::BenchmarkOptions opts;
  opts.metrics = eval::parse_metrics(a.metrics);
  if (a.wer_unit != "word" && a.wer_unit != "char") throw InvalidConfig("--wer-unit must be word or char");
  opts.wer_unit = a.wer_unit == "char" ? eval::WerUnit::character : eval::WerUnit::word;
  opts.wer_normalize = !a.no_normalize;
  opts.max_tokens = a.max_tokens;
  opts.threads = a.threads;
  opts.judge_in_flight = a.judge_in_flight;

  eval::MockJudge mock;
  std::optional<eval::HttpJudge> http;
  if (a.judge == "mock") {
    opts.judge = &mock;
  } else if (a.judge == "http") {
    http.emplace(eval::HttpJudge::from_env());
    opts.judge = &*http;
  } else if (a.judge != "none") {
    throw InvalidConfig("--judge must be mock, http or none");
  }
  if (opts.judge == nullptr && std::find(opts.metrics.begin(), opts.metrics.end(), eval::Metric::judge) != opts.metrics.end()) {
    throw InvalidConfig("the judge metric needs --judge mock or http");
  }
  // Paths are echoed as given so relative invocations yield relocatable reports.
  opts.config = {{"ckpt", a.ckpt},           {"manifest", a.manifest},   {"metrics", a.metrics},
                 {"judge", a.judge},         {"wer_unit", a.wer_unit},   {"wer_normalize", !a.no_normalize},
                 {"max_tokens", a.max_tokens}};
  const json report = eval::run_benchmark(a.ckpt, a.manifest, opts);
  eval::write_report(report, a.report);
  std::cout << eval::render_table(report);
  return kOk;
}

// ---- chat -------------------------------------------------------------------

struct ChatArgs {
  std::string ckpt;
  std::size_t max_tokens = 32;
  double temperature = 0.0;
  std::uint64_t seed = 0;
  bool history = false;
};

int cmd_chat(const ChatArgs& a) {
  const auto m = model::load_model(a.ckpt);
  const auto& tok = data::Tokenizer::standard();
  const bool tty = isatty(STDIN_FILENO) != 0;
  std::vector<data::Message> past;
  std::vector<core::ArrayF> past_frames;
  std::vector<std::string> pending_paths;
  std::vector<core::ArrayF> pending_frames;
  model::GenerateOptions g;
  g.max_tokens = a.max_tokens;
  g.temperature = a.temperature;
  g.seed = a.seed;

  std::string line;
  for (;;) {
    if (tty) std::cout << "> " << std::flush;
    if (!std::getline(std::cin, line)) break;
    const auto text = data::normalize_space(line);
    if (text == ":quit") break;
    if (text.rfind(":audio", 0) == 0) {
      const std::string path = data::normalize_space(text.substr(6));
      try {
        const auto clip = audio::read_wav(path);
        pending_frames.push_back(model::encode_clip(m.config, m.params, audio::log_mel(clip)));
        pending_paths.push_back(path);
        std::cout << "attached " << path << "\n";
      } catch (const Error& e) {
        std::cout << "cannot use audio: " << e.what() << "\n";
      }
      continue;
    }
    if (text.empty() && pending_paths.empty()) continue;

    data::Message user{data::Role::user, {}};
    for (const auto& p : pending_paths) user.parts.push_back(data::Part::audio(p));
    if (!text.empty()) user.parts.push_back(data::Part::text(text));

    data::Conversation conv;
    std::vector<core::ArrayF> frames;
    if (a.history) {
      conv.messages = past;
      frames = past_frames;
    }
    conv.messages.push_back(user);
    frames.insert(frames.end(), pending_frames.begin(), pending_frames.end());
    std::vector<std::size_t> lengths;
    for (const auto& f : frames) lengths.push_back(f.shape[0]);

    std::string reply;
    try {
      const auto seq = data::serialize(conv, tok, lengths);
      reply = eval::render_ids(tok, model::generate(m.config, m.params, seq, frames, g));
    } catch (const Error& e) {
      std::cout << "error: " << e.what() << "\n";
      continue;
    }
    std::cout << "assistant: " << reply << "\n" << std::flush;
    if (a.history) {
      past.push_back(user);
      past.push_back({data::Role::assistant, {data::Part::text(reply)}});
      past_frames.insert(past_frames.end(), pending_frames.begin(), pending_frames.end());
    }
    pending_paths.clear();
    pending_frames.clear();
    ++g.seed;
  }
  return kOk;
}

// ---- features / params-count ------------------------------------------------

int cmd_features(const std::string& wav, const std::string& out_path) {
  const auto mel = audio::log_mel(audio::read_wav(wav));
  std::ostringstream os(std::ios::binary);
  auto u32 = [&](std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
  os.write("MELF", 4);
  u32(1);
  u32(static_cast<std::uint32_t>(mel.n_mels()));
  u32(static_cast<std::uint32_t>(mel.n_frames()));
  for (float v : mel.values.data) os.write(reinterpret_cast<const char*>(&v), sizeof v);
  write_text(out_path, os.str());
  std::cout << "n_mels " << mel.n_mels() << " n_frames " << mel.n_frames() << "\n";
  return kOk;
}

int cmd_params_count(const std::string& config, const std::string& ckpt) {
  model::ModelConfig cfg;
  if (!ckpt.empty()) {
    cfg = model::load_model(ckpt).config;
  } else if (!config.empty()) {
    json j = read_json_file(config);
    if (j.contains("model")) j = j.at("model");
    cfg = j.get<model::ModelConfig>();
  }
  cfg.validate();
  std::cout << model::parameter_count(cfg) << "\n";
  return kOk;
}

int exit_code(const Error& e) {
  if (dynamic_cast<const StageOrderError*>(&e)) return kStageOrder;
  if (dynamic_cast<const InvalidConfig*>(&e) || dynamic_cast<const InvalidInput*>(&e) ||
      dynamic_cast<const VocabError*>(&e) || dynamic_cast<const InsufficientData*>(&e)) {
    return kConfig;
  }
  return kIo;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Toy audio-language model toolkit"};
  app.require_subcommand(1);
  app.get_formatter()->column_width(36);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Synthesize a corpus: WAV clips plus train/dev/test manifests");
  g->add_option("--task", gen.tasks, "Comma-separated tasks (asr,s2tt,vsc,ser,mixed,voice_chat) or 'all'")
      ->capture_default_str();
  g->add_option("--n", gen.n, "Records per task before splitting")->capture_default_str();
  g->add_option("--n-per-task", gen.n_per_task, "Per-task overrides, e.g. asr=2500,vsc=400");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.seed, "Generation seed")->capture_default_str();
  g->add_option("--noise", gen.noise, "Additive noise level relative to signal RMS")->capture_default_str();
  g->add_option("--ratios", gen.ratios, "train,dev,test split ratios")->capture_default_str();

  TrainArgs tr;
  const training::StageConfig d;
  auto* t = app.add_subcommand("train", "Run one training stage (pretrain, sft or dpo)");
  t->add_option("--stage", tr.stage, "pretrain | sft | dpo")->required();
  t->add_option("--config", tr.config, "Stage config JSON; ALM_<KEY> env vars override it, flags override both");
  t->add_option("--data", tr.data, "Corpus directory or train .jsonl manifest")->required();
  t->add_option("--in-ckpt", tr.in_ckpt, "Input checkpoint (required for sft and dpo unless --force)");
  t->add_option("--out-ckpt", tr.out_ckpt, "Output checkpoint path")->required();
  t->add_option("--report", tr.report, "Training report path (default: <out-ckpt>.train.json)");
  t->add_flag("--force", tr.force, "Skip the stage-order check");
  t->add_flag("--quiet", tr.quiet, "No progress lines on stderr");
  auto def = [](const auto& v) {
    std::ostringstream os;
    os << " (default: " << v << ")";
    return os.str();
  };
  t->add_option("--lr", tr.lr, "Peak learning rate" + def(d.lr));
  t->add_option("--warmup-steps", tr.warmup_steps, "Linear warmup steps" + def(d.warmup_steps));
  t->add_option("--max-steps", tr.max_steps, "Optimizer steps" + def(d.max_steps));
  t->add_option("--batch-size", tr.batch_size, "Sequences per step" + def(d.batch_size));
  t->add_option("--grad-clip", tr.grad_clip, "Global gradient-norm clip" + def(d.grad_clip));
  t->add_option("--beta", tr.beta, "DPO temperature" + def(d.beta));
  t->add_option("--seed", tr.seed, "Init and batch-order seed" + def(d.seed));
  t->add_option("--eval-every", tr.eval_every, "Dev eval and checkpoint interval, 0 = end only" + def(d.eval_every));
  t->add_option("--dev-examples", tr.dev_examples, "Dev records scored per evaluation" + def(d.dev_examples));
  t->add_option("--n-pairs", tr.n_pairs, "DPO preference pairs" + def(d.n_pairs));
  t->add_option("--corruption", tr.corruption, "word-swap | truncation | wrong-class" + def(d.corruption));
  t->add_option("--corruption-rate", tr.corruption_rate, "Fraction of words corrupted" + def(d.corruption_rate));

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Benchmark a checkpoint on a dev or test manifest");
  e->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  e->add_option("--manifest", ev.manifest, "dev.jsonl or test.jsonl")->required();
  e->add_option("--metrics", ev.metrics, "Comma-separated subset of wer,bleu,acc,judge")->capture_default_str();
  e->add_option("--judge", ev.judge, "mock | http | none (http reads JUDGE_ENDPOINT, JUDGE_API_KEY, JUDGE_MODEL)")
      ->capture_default_str();
  e->add_option("--report", ev.report, "Report name; writes <name>.report.json and <name>.report.txt")
      ->capture_default_str();
  e->add_option("--wer-unit", ev.wer_unit, "word | char")->capture_default_str();
  e->add_flag("--no-normalize", ev.no_normalize, "Score WER on raw text");
  e->add_option("--max-tokens", ev.max_tokens, "Generation limit per answer")->capture_default_str();
  e->add_option("--threads", ev.threads, "Generation workers, 0 = all cores")->capture_default_str();
  e->add_option("--judge-in-flight", ev.judge_in_flight, "Concurrent judge requests")->capture_default_str();

  ChatArgs ch;
  auto* c = app.add_subcommand("chat", "Line-oriented REPL: ':audio <wav>' attaches a clip, text sends a turn, ':quit' exits");
  c->add_option("--ckpt", ch.ckpt, "Checkpoint")->required();
  c->add_option("--max-tokens", ch.max_tokens, "Generation limit per answer")->capture_default_str();
  c->add_option("--temperature", ch.temperature, "Sampling temperature, 0 = greedy")->capture_default_str();
  c->add_option("--seed", ch.seed, "Sampling seed")->capture_default_str();
  c->add_flag("--history", ch.history, "Keep earlier turns in the context");

  std::string wav, melf;
  auto* f = app.add_subcommand("features", "Write the log-mel features of a 16 kHz mono WAV as a MELF file");
  f->add_option("--wav", wav, "Input WAV")->required();
  f->add_option("--out", melf, "Output MELF path")->required();

  std::string pc_config, pc_ckpt;
  auto* p = app.add_subcommand("params-count", "Print the parameter count of a model configuration");
  p->add_option("--config", pc_config, "Model or stage config JSON (default: built-in configuration)");
  p->add_option("--ckpt", pc_ckpt, "Read the configuration from a checkpoint");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*g) return cmd_gen_data(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*c) return cmd_chat(ch);
    if (*f) return cmd_features(wav, melf);
    if (*p) return cmd_params_count(pc_config, pc_ckpt);
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return exit_code(err);
  } catch (const fs::filesystem_error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kIo;
  } catch (const json::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kConfig;
  }
  return kOk;
}
