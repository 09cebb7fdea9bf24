#include "alm/training/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "alm/core/errors.hpp"
#include "alm/core/ops.hpp"
#include "alm/data/tokenizer.hpp"

namespace alm::training {

namespace fs = std::filesystem;
using core::Var;

std::string stage_name(Stage s) {
  switch (s) {
    case Stage::pretrain:
      return "pretrain";
    case Stage::sft:
      return "sft";
    case Stage::dpo:
      return "dpo";
  }
  return "pretrain";
}

Stage parse_stage(const std::string& name) {
  if (name == "pretrain") return Stage::pretrain;
  if (name == "sft") return Stage::sft;
  if (name == "dpo") return Stage::dpo;
  throw InvalidConfig("unknown stage '" + name + "' (valid: pretrain, sft, dpo)");
}

void StageConfig::validate() const {
  if (!(lr > 0)) throw InvalidConfig("lr must be positive");
  if (batch_size == 0) throw InvalidConfig("batch_size must be positive");
  if (max_steps < warmup_steps) throw InvalidConfig("max_steps must be >= warmup_steps");
  if (stage == Stage::dpo && !(beta > 0)) throw InvalidConfig("beta must be positive for the dpo stage");
  if (grad_clip < 0) throw InvalidConfig("grad_clip must be non-negative");
  if (!(corruption_rate > 0 && corruption_rate <= 1)) throw InvalidConfig("corruption_rate must lie in (0, 1]");
  data::parse_corruption(corruption);
  model.validate();
}

void to_json(nlohmann::json& j, const StageConfig& c) {
  j = {{"stage", stage_name(c.stage)},
       {"lr", c.lr},
       {"warmup_steps", c.warmup_steps},
       {"max_steps", c.max_steps},
       {"batch_size", c.batch_size},
       {"grad_clip", c.grad_clip},
       {"beta", c.beta},
       {"seed", c.seed},
       {"eval_every", c.eval_every},
       {"dev_examples", c.dev_examples},
       {"n_pairs", c.n_pairs},
       {"corruption", c.corruption},
       {"corruption_rate", c.corruption_rate},
       {"model", c.model}};
}

void from_json(const nlohmann::json& j, StageConfig& c) {
  if (!j.is_object()) throw InvalidConfig("stage config must be a JSON object");
  static const std::vector<std::string> known = {"stage",      "lr",           "warmup_steps", "max_steps",
                                                 "batch_size", "grad_clip",    "beta",         "seed",
                                                 "eval_every", "dev_examples", "n_pairs",      "corruption",
                                                 "corruption_rate", "model"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw InvalidConfig("unknown key '" + key + "' in stage config");
    }
  }
  try {
    if (j.contains("stage")) c.stage = parse_stage(j.at("stage").get<std::string>());
    if (j.contains("lr")) c.lr = j.at("lr").get<double>();
    if (j.contains("warmup_steps")) c.warmup_steps = j.at("warmup_steps").get<std::size_t>();
    if (j.contains("max_steps")) c.max_steps = j.at("max_steps").get<std::size_t>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<std::size_t>();
    if (j.contains("grad_clip")) c.grad_clip = j.at("grad_clip").get<double>();
    if (j.contains("beta")) c.beta = j.at("beta").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("eval_every")) c.eval_every = j.at("eval_every").get<std::size_t>();
    if (j.contains("dev_examples")) c.dev_examples = j.at("dev_examples").get<std::size_t>();
    if (j.contains("n_pairs")) c.n_pairs = j.at("n_pairs").get<std::size_t>();
    if (j.contains("corruption")) c.corruption = j.at("corruption").get<std::string>();
    if (j.contains("corruption_rate")) c.corruption_rate = j.at("corruption_rate").get<double>();
    if (j.contains("model")) c.model = j.at("model").get<model::ModelConfig>();
  } catch (const nlohmann::json::type_error& e) {
    throw InvalidConfig(std::string("stage config has a value of the wrong type: ") + e.what());
  }
}

namespace {

std::vector<std::size_t> slot_lengths(const std::vector<audio::MelSpectrogram>& mels, const model::ModelConfig& cfg) {
  std::vector<std::size_t> out;
  for (const auto& m : mels) out.push_back(cfg.encoder.output_frames(m.n_frames()));
  return out;
}

std::vector<audio::MelSpectrogram> featurize(const std::vector<std::string>& paths, const fs::path& base_dir) {
  std::vector<audio::MelSpectrogram> mels;
  for (const auto& p : paths) {
    mels.push_back(audio::log_mel(audio::resample(audio::read_wav(base_dir / p), audio::kModelSampleRate)));
  }
  return mels;
}

// Encodes the batch's clips (if any) on the tape.
std::optional<model::EncodedAudio<float>> encode_batch(model::Weights<float>& w, const model::ModelConfig& cfg,
                                                       const std::vector<const audio::MelSpectrogram*>& mels) {
  if (mels.empty()) return std::nullopt;
  return model::encode_audio<float>(w, cfg.encoder, mels);
}

double supervised_step(TrainState& st, std::span<const Example* const> batch, const StageConfig& cfg) {
  core::Tape<float> tape;
  model::Weights<float> w(tape, st.params);
  std::vector<const audio::MelSpectrogram*> mels;
  std::vector<model::TokenSequence> seqs;
  for (const auto* ex : batch) {
    seqs.push_back(ex->seq);
    for (const auto& m : ex->mels) mels.push_back(&m);
  }
  auto audio = encode_batch(w, st.config, mels);
  auto out = model::forward_lm<float>(w, st.config, seqs, audio ? &*audio : nullptr);
  Var<float> loss = model::lm_loss<float>(out, seqs);
  const double value = loss.value().item();
  if (!std::isfinite(value)) {
    throw NonFiniteLoss("non-finite loss at step " + std::to_string(st.step) + "; parameters left unchanged");
  }
  st.params.zero_grad();
  tape.backward(loss);
  core::clip_grad_norm(st.params, cfg.grad_clip);
  core::adam_step(st.params, st.opt, learning_rate(cfg, st.step));
  ++st.step;
  return value;
}

double softplus_neg(double x) {
  // -log sigmoid(x) = log(1 + exp(-x)), evaluated without overflow
  return x >= 0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
}

}  // namespace

Example make_example(const data::Record& r, const fs::path& base_dir, const model::ModelConfig& cfg,
                     data::MaskPolicy policy) {
  Example ex;
  ex.mels = featurize(r.audio_paths, base_dir);
  const auto lengths = slot_lengths(ex.mels, cfg);
  ex.seq = data::serialize(r.conversation, data::Tokenizer::standard(), lengths, policy);
  return ex;
}

model::TokenSequence response_sequence(const data::Conversation& context, const std::string& response,
                                       std::span<const std::size_t> audio_lengths) {
  data::Conversation c = context.prompt();
  data::Message reply{data::Role::assistant, {}};
  if (!data::normalize_space(response).empty()) reply.parts.push_back(data::Part::text(response));
  c.messages.push_back(std::move(reply));
  return data::serialize(c, data::Tokenizer::standard(), audio_lengths, data::MaskPolicy::responses);
}

double learning_rate(const StageConfig& cfg, std::size_t step) {
  if (cfg.warmup_steps == 0) return cfg.lr;
  return cfg.lr * std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps));
}

double pretrain_step(TrainState& state, std::span<const Example* const> batch, const StageConfig& cfg) {
  if (cfg.stage != Stage::pretrain) throw InvalidConfig("pretrain_step called with stage " + stage_name(cfg.stage));
  return supervised_step(state, batch, cfg);
}

double sft_step(TrainState& state, std::span<const Example* const> batch, const StageConfig& cfg) {
  if (cfg.stage != Stage::sft) throw InvalidConfig("sft_step called with stage " + stage_name(cfg.stage));
  return supervised_step(state, batch, cfg);
}

double dpo_loss_from_margin(double margin, double beta) {
  if (!(beta > 0)) throw InvalidConfig("dpo beta must be positive");
  return softplus_neg(beta * margin);
}

double dpo_loss(double lp_w_policy, double lp_l_policy, double lp_w_ref, double lp_l_ref, double beta) {
  return dpo_loss_from_margin((lp_w_policy - lp_w_ref) - (lp_l_policy - lp_l_ref), beta);
}

template <typename T>
Var<T> dpo_loss(const Var<T>& lp_w_policy, const Var<T>& lp_l_policy, std::span<const double> lp_w_ref,
                std::span<const double> lp_l_ref, double beta) {
  if (!(beta > 0)) throw InvalidConfig("dpo beta must be positive");
  const std::size_t n = lp_w_policy.value().size();
  if (lp_l_policy.value().size() != n || lp_w_ref.size() != n || lp_l_ref.size() != n) {
    throw ShapeError("dpo_loss: policy and reference terms differ in length");
  }
  core::Array<T> ref_gap({n});
  for (std::size_t i = 0; i < n; ++i) ref_gap.data[i] = static_cast<T>(lp_w_ref[i] - lp_l_ref[i]);
  auto& tape = lp_w_policy.tape();
  Var<T> margin = core::sub(core::sub(lp_w_policy, lp_l_policy), tape.constant(std::move(ref_gap)));
  return core::scale(core::mean(core::log_sigmoid(core::scale(margin, static_cast<T>(beta)))), T(-1));
}

template Var<float> dpo_loss<float>(const Var<float>&, const Var<float>&, std::span<const double>,
                                    std::span<const double>, double);
template Var<double> dpo_loss<double>(const Var<double>&, const Var<double>&, std::span<const double>,
                                      std::span<const double>, double);

PreferenceExample make_preference_example(const data::PreferenceTriple& t, const fs::path& base_dir,
                                          const model::ModelConfig& cfg) {
  PreferenceExample ex;
  ex.mels = featurize(t.audio_paths, base_dir);
  const auto lengths = slot_lengths(ex.mels, cfg);
  ex.chosen = response_sequence(t.context, t.chosen, lengths);
  ex.rejected = response_sequence(t.context, t.rejected, lengths);
  return ex;
}

namespace {

// Packed forward of chosen then rejected sequences sharing one audio encoding.
Var<float> pair_logprobs(model::Weights<float>& w, const model::ModelConfig& cfg,
                         std::span<const PreferenceExample* const> batch) {
  std::vector<model::TokenSequence> seqs;
  std::vector<const audio::MelSpectrogram*> mels;
  for (const auto* ex : batch) {
    seqs.push_back(ex->chosen);
    for (const auto& m : ex->mels) mels.push_back(&m);
  }
  for (const auto* ex : batch) seqs.push_back(ex->rejected);
  auto audio = encode_batch(w, cfg, mels);
  if (audio) {
    const auto lengths = audio->lengths;
    audio->frames = core::concat(std::vector<Var<float>>{audio->frames, audio->frames}, 0);
    audio->lengths.insert(audio->lengths.end(), lengths.begin(), lengths.end());
  }
  auto out = model::forward_lm<float>(w, cfg, seqs, audio ? &*audio : nullptr);
  return model::sequence_logprobs<float>(out, seqs);
}

}  // namespace

std::pair<double, double> preference_logprobs(const model::ModelConfig& cfg, const core::ParameterStore<float>& params,
                                              const PreferenceExample& ex) {
  core::Tape<float> tape;
  model::Weights<float> w(tape, params);
  const PreferenceExample* one[] = {&ex};
  const auto& v = pair_logprobs(w, cfg, one).value();
  return {v.data[0], v.data[1]};
}

double dpo_step(TrainState& state, std::span<const PreferenceExample* const> batch, std::span<const double> ref_w,
                std::span<const double> ref_l, const StageConfig& cfg) {
  if (cfg.stage != Stage::dpo) throw InvalidConfig("dpo_step called with stage " + stage_name(cfg.stage));
  if (ref_w.size() != batch.size() || ref_l.size() != batch.size()) {
    throw InvalidConfig("dpo_step needs reference log-probabilities for every pair");
  }
  const std::size_t b = batch.size();
  core::Tape<float> tape;
  model::Weights<float> w(tape, state.params);
  Var<float> lps = pair_logprobs(w, state.config, batch);
  Var<float> loss = dpo_loss<float>(core::slice(lps, 0, 0, b), core::slice(lps, 0, b, b), ref_w, ref_l, cfg.beta);
  const double value = loss.value().item();
  if (!std::isfinite(value)) {
    throw NonFiniteLoss("non-finite DPO loss at step " + std::to_string(state.step) + "; parameters left unchanged");
  }
  state.params.zero_grad();
  tape.backward(loss);
  core::clip_grad_norm(state.params, cfg.grad_clip);
  core::adam_step(state.params, state.opt, learning_rate(cfg, state.step));
  ++state.step;
  return value;
}

PreferenceStats preference_stats(const model::ModelConfig& cfg, const core::ParameterStore<float>& policy,
                                 const core::ParameterStore<float>& reference,
                                 std::span<const PreferenceExample> examples) {
  PreferenceStats s;
  if (examples.empty()) return s;
  double wins = 0, margin_sum = 0;
  for (const auto& ex : examples) {
    const auto [pw, pl] = preference_logprobs(cfg, policy, ex);
    const auto [rw, rl] = preference_logprobs(cfg, reference, ex);
    const double margin = (pw - rw) - (pl - rl);
    wins += margin > 0 ? 1.0 : margin == 0 ? 0.5 : 0.0;
    margin_sum += margin;
  }
  s.win_rate = wins / static_cast<double>(examples.size());
  s.mean_margin = margin_sum / static_cast<double>(examples.size());
  return s;
}

double evaluate_loss(const model::ModelConfig& cfg, const core::ParameterStore<float>& params,
                     std::span<const Example> examples) {
  double total = 0;
  std::size_t tokens = 0;
  const std::size_t chunk = 16;
  for (std::size_t start = 0; start < examples.size(); start += chunk) {
    const std::size_t end = std::min(examples.size(), start + chunk);
    core::Tape<float> tape;
    model::Weights<float> w(tape, params);
    std::vector<model::TokenSequence> seqs;
    std::vector<const audio::MelSpectrogram*> mels;
    std::size_t count = 0;
    for (std::size_t i = start; i < end; ++i) {
      seqs.push_back(examples[i].seq);
      for (const auto& m : examples[i].mels) mels.push_back(&m);
      for (std::size_t t = 1; t < examples[i].seq.size(); ++t) count += examples[i].seq.loss_mask[t] ? 1 : 0;
    }
    if (count == 0) continue;
    auto audio = encode_batch(w, cfg, mels);
    auto out = model::forward_lm<float>(w, cfg, seqs, audio ? &*audio : nullptr);
    total += model::lm_loss<float>(out, seqs).value().item() * static_cast<double>(count);
    tokens += count;
  }
  if (tokens == 0) throw EmptyLoss("no masked tokens among the evaluation examples");
  return total / static_cast<double>(tokens);
}

std::vector<std::size_t> batch_indices(std::size_t n, std::size_t batch_size, std::uint64_t seed, std::size_t step) {
  if (n == 0) throw InsufficientData("no training examples");
  std::vector<std::size_t> out;
  std::size_t pos = step * batch_size;
  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < batch_size; ++i, ++pos) {
    const std::size_t epoch = pos / n;
    if (epoch != cached_epoch) {
      for (std::size_t k = 0; k < n; ++k) perm[k] = k;
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
      std::mt19937_64 rng(seq);
      std::shuffle(perm.begin(), perm.end(), rng);
      cached_epoch = epoch;
    }
    out.push_back(perm[pos % n]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// run_stage

namespace {

struct DataPaths {
  fs::path train;
  fs::path dev;  // empty when absent
  fs::path base;
};

DataPaths resolve_data(const fs::path& data) {
  DataPaths p;
  if (fs::is_directory(data)) {
    p.base = data;
    p.train = data / "train.jsonl";
  } else {
    p.train = data;
    p.base = data.parent_path();
  }
  if (!fs::exists(p.train)) throw IoError("training manifest not found: " + p.train.string());
  if (fs::exists(p.base / "dev.jsonl")) p.dev = p.base / "dev.jsonl";
  return p;
}

const char* required_predecessor(Stage s) {
  switch (s) {
    case Stage::pretrain:
      return nullptr;
    case Stage::sft:
      return "pretrain";
    case Stage::dpo:
      return "sft";
  }
  return nullptr;
}

model::Checkpoint pack(const TrainState& st, const nlohmann::json& trailer, bool with_optimizer,
                       const core::ParameterStore<float>* reference) {
  model::Checkpoint ck;
  for (const auto& [name, p] : st.params) ck.tensors.emplace(name, p.value);
  if (with_optimizer) {
    for (const auto& [name, a] : st.opt.m) ck.tensors.emplace("opt.m." + name, a);
    for (const auto& [name, a] : st.opt.v) ck.tensors.emplace("opt.v." + name, a);
  }
  if (reference) {
    for (const auto& [name, p] : *reference) ck.tensors.emplace("ref." + name, p.value);
  }
  ck.trailer = trailer;
  return ck;
}

core::ParameterStore<float> prefixed(const model::Checkpoint& ck, const std::string& prefix,
                                     const model::ModelConfig& cfg) {
  core::ParameterStore<float> store;
  for (const auto& [name, shape] : model::parameter_shapes(cfg)) {
    auto it = ck.tensors.find(prefix + name);
    if (it == ck.tensors.end()) throw CheckpointError("checkpoint is missing tensor '" + prefix + name + "'");
    store.add(name, it->second);
  }
  return store;
}

}  // namespace

nlohmann::json run_stage(const StageConfig& cfg, const fs::path& data, const std::optional<fs::path>& in_ckpt,
                         const fs::path& out_ckpt, const RunOptions& opts) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  auto log = [&](const std::string& s) {
    if (opts.log) opts.log(s);
  };
  const DataPaths paths = resolve_data(data);

  // Input checkpoint, provenance and resume state.
  std::optional<model::Checkpoint> ck;
  if (in_ckpt) ck = model::load_checkpoint(*in_ckpt);
  std::vector<std::string> provenance;
  bool resume = false;
  if (ck) {
    if (ck->trailer.contains("provenance")) provenance = ck->trailer.at("provenance").get<std::vector<std::string>>();
    if (ck->trailer.contains("in_progress")) {
      const auto stage = ck->trailer.at("in_progress").at("stage").get<std::string>();
      if (stage != stage_name(cfg.stage)) {
        throw StageOrderError("input checkpoint is an unfinished " + stage + " run; cannot start " +
                              stage_name(cfg.stage));
      }
      resume = true;
    }
  }
  if (const char* need = required_predecessor(cfg.stage); need && !opts.force) {
    if (provenance.empty() || provenance.back() != need) {
      std::string have;
      for (const auto& s : provenance) have += (have.empty() ? "" : " -> ") + s;
      throw StageOrderError(stage_name(cfg.stage) + " requires a " + need + " checkpoint; input provenance is [" +
                            (have.empty() ? "none" : have) + "]");
    }
  }

  TrainState st;
  if (ck) {
    auto m = model::model_from_checkpoint(*ck);
    st.config = m.config;
    st.params = std::move(m.params);
  } else {
    st.config = cfg.model;
    st.params = model::init_params<float>(st.config, cfg.seed);
  }
  if (static_cast<std::size_t>(st.config.lm.vocab_size) < data::Tokenizer::standard().size()) {
    throw InvalidConfig("lm.vocab_size " + std::to_string(st.config.lm.vocab_size) + " is smaller than the " +
                        std::to_string(data::Tokenizer::standard().size()) + "-token vocabulary");
  }
  std::optional<core::ParameterStore<float>> reference;
  if (resume) {
    const auto& ip = ck->trailer.at("in_progress");
    st.step = ip.at("step").get<std::size_t>();
    st.loss_curve = ip.at("loss_curve").get<std::vector<double>>();
    st.opt.step = ip.at("opt_step").get<std::uint64_t>();
    for (const auto& [name, t] : ck->tensors) {
      if (name.rfind("opt.m.", 0) == 0) st.opt.m.emplace(name.substr(6), t);
      if (name.rfind("opt.v.", 0) == 0) st.opt.v.emplace(name.substr(6), t);
    }
    if (cfg.stage == Stage::dpo) reference = prefixed(*ck, "ref.", st.config);
    log("resuming " + stage_name(cfg.stage) + " at step " + std::to_string(st.step));
  }
  if (cfg.stage == Stage::dpo && !reference) reference = st.params;

  const auto train = data::read_manifest(paths.train);
  std::vector<data::Record> dev;
  if (!paths.dev.empty()) dev = data::read_manifest(paths.dev);
  if (dev.size() > cfg.dev_examples) dev.resize(cfg.dev_examples);
  const auto policy = cfg.stage == Stage::pretrain ? data::MaskPolicy::all_text : data::MaskPolicy::responses;

  // Lazily prepared examples; preparation is deterministic, so caching does
  // not affect the trajectory.
  std::vector<std::optional<Example>> examples;
  std::vector<data::PreferenceTriple> triples;
  std::vector<std::optional<PreferenceExample>> pref_examples;
  std::vector<std::optional<std::pair<double, double>>> ref_cache;
  std::size_t n_items = 0;
  if (cfg.stage == Stage::dpo) {
    triples = data::build_preferences(train, cfg.n_pairs, data::parse_corruption(cfg.corruption),
                                      cfg.corruption_rate, cfg.seed);
    pref_examples.resize(triples.size());
    ref_cache.resize(triples.size());
    n_items = triples.size();
  } else {
    examples.resize(train.size());
    n_items = train.size();
  }

  auto dev_metrics = [&]() -> nlohmann::json {
    nlohmann::json m = nlohmann::json::object();
    if (dev.empty()) return m;
    if (cfg.stage == Stage::dpo) {
      if (dev.size() < 2) return m;
      auto dev_pairs = data::build_preferences(dev, dev.size(), data::parse_corruption(cfg.corruption),
                                               cfg.corruption_rate, cfg.seed + 1);
      std::vector<PreferenceExample> exs;
      for (const auto& t : dev_pairs) exs.push_back(make_preference_example(t, paths.base, st.config));
      const auto s = preference_stats(st.config, st.params, *reference, exs);
      m["win_rate"] = s.win_rate;
      m["mean_margin"] = s.mean_margin;
    } else {
      std::vector<Example> exs;
      for (const auto& r : dev) exs.push_back(make_example(r, paths.base, st.config, policy));
      m["loss"] = evaluate_loss(st.config, st.params, exs);
    }
    return m;
  };

  nlohmann::json trailer_base = {{"model", st.config},
                                 {"seed", cfg.seed},
                                 {"stage_config", cfg},
                                 {"vocab_size_used", data::Tokenizer::standard().size()}};
  nlohmann::json dev_curve = nlohmann::json::array();
  if (resume) dev_curve = ck->trailer.at("in_progress").value("dev_curve", nlohmann::json::array());

  while (st.step < cfg.max_steps) {
    const auto idx = batch_indices(n_items, cfg.batch_size, cfg.seed, st.step);
    double loss = 0;
    if (cfg.stage == Stage::dpo) {
      std::vector<const PreferenceExample*> batch;
      std::vector<double> rw, rl;
      for (auto i : idx) {
        if (!pref_examples[i]) pref_examples[i] = make_preference_example(triples[i], paths.base, st.config);
        if (!ref_cache[i]) ref_cache[i] = preference_logprobs(st.config, *reference, *pref_examples[i]);
        batch.push_back(&*pref_examples[i]);
        rw.push_back(ref_cache[i]->first);
        rl.push_back(ref_cache[i]->second);
      }
      loss = dpo_step(st, batch, rw, rl, cfg);
    } else {
      std::vector<const Example*> batch;
      for (auto i : idx) {
        if (!examples[i]) examples[i] = make_example(train[i], paths.base, st.config, policy);
        batch.push_back(&*examples[i]);
      }
      loss = cfg.stage == Stage::pretrain ? pretrain_step(st, batch, cfg) : sft_step(st, batch, cfg);
    }
    st.loss_curve.push_back(loss);
    if (st.step % 50 == 0 || st.step == cfg.max_steps) {
      log(stage_name(cfg.stage) + " step " + std::to_string(st.step) + "/" + std::to_string(cfg.max_steps) +
          " loss " + std::to_string(loss));
    }
    if (cfg.eval_every > 0 && st.step % cfg.eval_every == 0 && st.step < cfg.max_steps) {
      nlohmann::json dm = dev_metrics();
      dev_curve.push_back({{"step", st.step}, {"metrics", dm}});
      nlohmann::json trailer = trailer_base;
      trailer["provenance"] = provenance;
      trailer["in_progress"] = {{"stage", stage_name(cfg.stage)},
                                {"step", st.step},
                                {"opt_step", st.opt.step},
                                {"loss_curve", st.loss_curve},
                                {"dev_curve", dev_curve}};
      fs::path mid = out_ckpt;
      mid += ".step" + std::to_string(st.step);
      model::save_checkpoint(pack(st, trailer, true, reference ? &*reference : nullptr), mid);
      log("wrote " + mid.string());
    }
  }

  provenance.push_back(stage_name(cfg.stage));
  nlohmann::json trailer = trailer_base;
  trailer["provenance"] = provenance;
  model::save_checkpoint(pack(st, trailer, false, nullptr), out_ckpt);

  nlohmann::json report = {{"stage", stage_name(cfg.stage)},
                           {"steps", st.step},
                           {"loss_curve", st.loss_curve},
                           {"final_loss", st.loss_curve.empty() ? 0.0 : st.loss_curve.back()},
                           {"dev_metrics", dev_metrics()},
                           {"dev_curve", dev_curve},
                           {"seed", cfg.seed},
                           {"config", cfg},
                           {"provenance", provenance},
                           {"parameters", st.params.count()}};
  report["wall_time_s"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace alm::training
