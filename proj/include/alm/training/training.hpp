#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "alm/audio/mel.hpp"
#include "alm/core/adam.hpp"
#include "alm/core/params.hpp"
#include "alm/data/corpus.hpp"
#include "alm/model/checkpoint.hpp"
#include "alm/model/model.hpp"

namespace alm::training {

enum class Stage { pretrain, sft, dpo };
std::string stage_name(Stage s);
Stage parse_stage(const std::string& name);

struct StageConfig {
  Stage stage = Stage::pretrain;
  double lr = 1e-3;
  std::size_t warmup_steps = 100;
  std::size_t max_steps = 1000;
  std::size_t batch_size = 16;
  double grad_clip = 1.0;
  double beta = 0.1;  // DPO only
  std::uint64_t seed = 0;
  std::size_t eval_every = 0;  // 0: evaluate and checkpoint only at the end
  std::size_t dev_examples = 64;
  // DPO preference data
  std::size_t n_pairs = 1000;
  std::string corruption = "word-swap";
  double corruption_rate = 0.5;
  // architecture used when a stage starts without an input checkpoint
  model::ModelConfig model;

  void validate() const;
};

/// Unknown keys are rejected with the key named.
void to_json(nlohmann::json& j, const StageConfig& c);
void from_json(const nlohmann::json& j, StageConfig& c);

/// A record prepared for the model: token sequence plus log-mel features.
struct Example {
  model::TokenSequence seq;
  std::vector<audio::MelSpectrogram> mels;
};

/// Loads, resamples and featurizes the record's clips and serializes its
/// conversation with slot lengths from the encoder configuration.
Example make_example(const data::Record& r, const std::filesystem::path& base_dir, const model::ModelConfig& cfg,
                     data::MaskPolicy policy);

/// Context followed by an assistant turn holding `response`; the response
/// and its closing <eos> form the loss mask.
model::TokenSequence response_sequence(const data::Conversation& context, const std::string& response,
                                       std::span<const std::size_t> audio_lengths);

struct TrainState {
  model::ModelConfig config;
  core::ParameterStore<float> params;
  core::AdamState<float> opt;
  std::size_t step = 0;
  std::vector<double> loss_curve;
};

/// Linear warmup to `cfg.lr`, then constant.
double learning_rate(const StageConfig& cfg, std::size_t step);

/// Masked next-token loss on a packed batch, one clipped Adam update, step += 1.
/// Throws NonFiniteLoss before touching the parameters.
double pretrain_step(TrainState& state, std::span<const Example* const> batch, const StageConfig& cfg);
double sft_step(TrainState& state, std::span<const Example* const> batch, const StageConfig& cfg);

/// -log sigmoid(beta * ((lp_w - ref_w) - (lp_l - ref_l))). Throws InvalidConfig for beta <= 0.
double dpo_loss(double lp_w_policy, double lp_l_policy, double lp_w_ref, double lp_l_ref, double beta);
/// -log sigmoid(beta * margin).
double dpo_loss_from_margin(double margin, double beta);

/// Differentiable batch DPO loss: mean over pairs; reference terms are constants.
template <typename T>
core::Var<T> dpo_loss(const core::Var<T>& lp_w_policy, const core::Var<T>& lp_l_policy,
                      std::span<const double> lp_w_ref, std::span<const double> lp_l_ref, double beta);

/// A preference pair prepared for the model.
struct PreferenceExample {
  model::TokenSequence chosen;
  model::TokenSequence rejected;
  std::vector<audio::MelSpectrogram> mels;
};

PreferenceExample make_preference_example(const data::PreferenceTriple& t, const std::filesystem::path& base_dir,
                                          const model::ModelConfig& cfg);

/// Summed response log-probabilities (chosen, rejected) under frozen parameters.
std::pair<double, double> preference_logprobs(const model::ModelConfig& cfg, const core::ParameterStore<float>& params,
                                              const PreferenceExample& ex);

/// One DPO update on the policy. `ref_w`/`ref_l` hold the reference model's
/// log-probabilities for each pair. Throws InvalidConfig if they are missing.
double dpo_step(TrainState& state, std::span<const PreferenceExample* const> batch, std::span<const double> ref_w,
                std::span<const double> ref_l, const StageConfig& cfg);

struct PreferenceStats {
  double win_rate = 0.0;     // implicit-reward margin > 0 counts 1, == 0 counts 1/2
  double mean_margin = 0.0;  // mean of (lp_w - ref_w) - (lp_l - ref_l)
};
PreferenceStats preference_stats(const model::ModelConfig& cfg, const core::ParameterStore<float>& policy,
                                 const core::ParameterStore<float>& reference,
                                 std::span<const PreferenceExample> examples);

/// Mean masked next-token loss over examples, frozen parameters.
double evaluate_loss(const model::ModelConfig& cfg, const core::ParameterStore<float>& params,
                     std::span<const Example> examples);

struct RunOptions {
  bool force = false;
  std::function<void(const std::string&)> log;  // progress lines; may be empty
};

/// Runs one stage over the training manifest (a directory holding
/// train.jsonl, or a .jsonl path). Enforces pretrain -> sft -> dpo ordering
/// through the input checkpoint's provenance unless `opts.force`. Resumes
/// when the input checkpoint is an in-progress checkpoint of the same stage.
/// Writes `out_ckpt`, intermediate `<out_ckpt>.step<N>` checkpoints every
/// eval_every steps, and returns the training report.
nlohmann::json run_stage(const StageConfig& cfg, const std::filesystem::path& data,
                         const std::optional<std::filesystem::path>& in_ckpt, const std::filesystem::path& out_ckpt,
                         const RunOptions& opts = {});

/// Batch of `batch_size` indices into [0, n) for `step`: consecutive windows
/// over per-epoch permutations derived from (seed, epoch).
std::vector<std::size_t> batch_indices(std::size_t n, std::size_t batch_size, std::uint64_t seed, std::size_t step);

}  // namespace alm::training
