#include <doctest.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <set>

#include "alm/core/errors.hpp"
#include "alm/data/tokenizer.hpp"
#include "alm/model/checkpoint.hpp"
#include "alm/training/training.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace alm;
using namespace alm::training;
using alm::testing::TempDir;
using alm::testing::tiny_config;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

StageConfig tiny_stage(Stage s) {
  StageConfig c;
  c.stage = s;
  c.model = tiny_config();
  c.lr = 3e-3;
  c.warmup_steps = 2;
  c.max_steps = 6;
  c.batch_size = 4;
  c.dev_examples = 4;
  c.n_pairs = 12;
  c.seed = 5;
  return c;
}

// One small corpus shared by the run_stage cases.
const std::filesystem::path& small_corpus() {
  static TempDir dir("training_corpus");
  static const bool built = [] {
    data::CorpusConfig cfg;
    cfg.tasks = {data::Task::asr, data::Task::vsc};
    cfg.n = 30;
    cfg.seed = 3;
    data::build_corpus(cfg, dir.path);
    return true;
  }();
  (void)built;
  return dir.path;
}

}  // namespace

TEST_CASE("dpo loss equals ln 2 when policy and reference agree") {
  for (double beta : {0.05, 0.1, 1.0}) {
    CHECK(std::abs(dpo_loss(-3.2, -7.9, -3.2, -7.9, beta) - std::numbers::ln2) < 1e-12);
    CHECK(std::abs(dpo_loss_from_margin(0.0, beta) - std::numbers::ln2) < 1e-12);
  }
}

TEST_CASE("dpo loss depends on beta and margin only through their product") {
  const double m = 1.7;
  for (double beta : {0.05, 0.1, 1.0}) {
    CHECK(dpo_loss_from_margin(m, beta) == doctest::Approx(dpo_loss_from_margin(m * beta, 1.0)).epsilon(1e-14));
    CHECK(dpo_loss_from_margin(2 * m, beta) == doctest::Approx(dpo_loss_from_margin(m, 2 * beta)).epsilon(1e-14));
  }
  // -log sigmoid(1) computed by hand
  CHECK(dpo_loss_from_margin(10.0, 0.1) == doctest::Approx(0.31326168751822286).epsilon(1e-12));
  CHECK(dpo_loss_from_margin(-10.0, 0.1) == doctest::Approx(1.3132616875182228).epsilon(1e-12));
  CHECK(dpo_loss_from_margin(1e4, 1.0) >= 0.0);
  CHECK(std::isfinite(dpo_loss_from_margin(-1e4, 1.0)));
  CHECK(dpo_loss(0, 0, 0, 0, 0.1) > dpo_loss(1, 0, 0, 0, 0.1));
  CHECK_THROWS_AS(dpo_loss_from_margin(1.0, 0.0), InvalidConfig);
  CHECK_THROWS_AS(dpo_loss_from_margin(1.0, -0.1), InvalidConfig);
}

TEST_CASE("batched dpo loss matches the scalar form and its gradient") {
  const std::vector<double> ref_w = {-4.0, -2.5, -6.0}, ref_l = {-5.0, -2.0, -9.5};
  core::ArrayD w({3}), l({3});
  w.data = {-3.5, -2.9, -6.1};
  l.data = {-5.5, -1.0, -9.0};

  core::Tape<double> tape;
  auto loss = dpo_loss(tape.constant(w), tape.constant(l), ref_w, ref_l, 0.3).value().item();
  double expect = 0;
  for (std::size_t i = 0; i < 3; ++i) expect += dpo_loss(w.data[i], l.data[i], ref_w[i], ref_l[i], 0.3) / 3.0;
  CHECK(loss == doctest::Approx(expect).epsilon(1e-12));

  for (double beta : {0.05, 0.1, 1.0}) {
    auto fn = [&](core::Tape<double>&, const std::vector<core::Var<double>>& x) {
      return dpo_loss(x[0], x[1], ref_w, ref_l, beta);
    };
    CHECK(alm::testing::grad_check(fn, {w, l}).max_rel_error < 1e-4);
  }
  core::Tape<double> t2;
  CHECK_THROWS_AS(dpo_loss(t2.constant(w), t2.constant(l), std::span(ref_w).first(2), ref_l, 0.1), ShapeError);
}

TEST_CASE("dpo loss composed with sequence log-probabilities passes gradient check") {
  // Logits are the leaves; sequence_logprobs supplies the log-softmax and
  // masked pick that the training path uses.
  const std::size_t vocab = 7;
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd(0.0, 1.0);
  auto seq = [&](std::vector<int> ids) {
    model::TokenSequence s;
    s.ids = std::move(ids);
    s.loss_mask.assign(s.ids.size(), 0);
    for (std::size_t i = 2; i < s.ids.size(); ++i) s.loss_mask[i] = 1;
    return s;
  };
  const std::vector<model::TokenSequence> chosen = {seq({1, 3, 4, 2}), seq({1, 5, 6, 6, 2})};
  const std::vector<model::TokenSequence> rejected = {seq({1, 3, 5, 2}), seq({1, 5, 4, 2})};
  auto random_logits = [&](const std::vector<model::TokenSequence>& seqs) {
    std::size_t rows = 0;
    for (const auto& s : seqs) rows += s.size();
    core::ArrayD a({rows, vocab});
    for (auto& v : a.data) v = nd(rng);
    return a;
  };
  auto segments = [](const std::vector<model::TokenSequence>& seqs) {
    std::vector<core::Segment> out;
    std::size_t start = 0;
    for (const auto& s : seqs) {
      out.push_back({start, s.size()});
      start += s.size();
    }
    return out;
  };
  const std::vector<double> ref_w = {-4.0, -7.5}, ref_l = {-3.0, -5.5};
  auto fn = [&](core::Tape<double>&, const std::vector<core::Var<double>>& x) {
    model::LmOutput<double> ow{x[0], segments(chosen)}, ol{x[1], segments(rejected)};
    return dpo_loss(model::sequence_logprobs(ow, chosen), model::sequence_logprobs(ol, rejected), ref_w, ref_l, 0.5);
  };
  CHECK(alm::testing::grad_check(fn, {random_logits(chosen), random_logits(rejected)}).max_rel_error < 1e-4);
}

TEST_CASE("learning rate warms up linearly") {
  StageConfig c;
  c.lr = 1e-3;
  c.warmup_steps = 4;
  CHECK(learning_rate(c, 0) == doctest::Approx(2.5e-4));
  CHECK(learning_rate(c, 3) == doctest::Approx(1e-3));
  CHECK(learning_rate(c, 100) == doctest::Approx(1e-3));
  c.warmup_steps = 0;
  CHECK(learning_rate(c, 0) == doctest::Approx(1e-3));
}

TEST_CASE("batch indices walk per-epoch permutations") {
  const std::size_t n = 10, b = 5;
  std::multiset<std::size_t> epoch0;
  for (std::size_t step = 0; step < 2; ++step) {
    for (auto i : batch_indices(n, b, 9, step)) epoch0.insert(i);
  }
  CHECK(epoch0.size() == n);
  CHECK(std::set<std::size_t>(epoch0.begin(), epoch0.end()).size() == n);
  CHECK(batch_indices(n, b, 9, 3) == batch_indices(n, b, 9, 3));
  CHECK(batch_indices(n, b, 9, 0) != batch_indices(n, b, 10, 0));
  // a batch may straddle an epoch boundary
  CHECK(batch_indices(n, 4, 9, 2).size() == 4);
  CHECK_THROWS_AS(batch_indices(0, 4, 9, 0), InsufficientData);
}

TEST_CASE("stage config json round trip and validation") {
  StageConfig c = tiny_stage(Stage::sft);
  nlohmann::json j = c;
  const StageConfig back = j.get<StageConfig>();
  CHECK(nlohmann::json(back) == j);
  j["learning_rate"] = 1.0;
  CHECK_THROWS_AS(j.get<StageConfig>(), InvalidConfig);
  StageConfig bad = c;
  bad.warmup_steps = bad.max_steps + 1;
  CHECK_THROWS_AS(bad.validate(), InvalidConfig);
  bad = tiny_stage(Stage::dpo);
  bad.beta = 0;
  CHECK_THROWS_AS(bad.validate(), InvalidConfig);
  CHECK_THROWS_AS(parse_stage("rlhf"), InvalidConfig);
}

TEST_CASE("supervised steps start near chance and reduce the loss") {
  const auto& dir = small_corpus();
  const auto records = data::read_manifest(dir / "train.jsonl");
  model::ModelConfig mc;  // default architecture: vocab 200
  std::vector<Example> ex;
  for (std::size_t i = 0; i < 8; ++i) ex.push_back(make_example(records[i], dir, mc, data::MaskPolicy::all_text));
  TrainState st{mc, model::init_params<float>(mc, 1), {}, 0, {}};
  const double initial = evaluate_loss(mc, st.params, ex);
  CHECK(std::abs(initial - std::log(200.0)) < 0.5);

  StageConfig c;
  c.warmup_steps = 0;
  c.lr = 3e-3;
  std::vector<const Example*> batch;
  for (const auto& e : ex) batch.push_back(&e);
  for (int i = 0; i < 10; ++i) pretrain_step(st, batch, c);
  CHECK(st.step == 10);
  CHECK(evaluate_loss(mc, st.params, ex) < initial - 0.5);

  CHECK_THROWS_AS(sft_step(st, batch, c), InvalidConfig);

  Example empty = ex[0];
  std::fill(empty.seq.loss_mask.begin(), empty.seq.loss_mask.end(), 0);
  const Example* only = &empty;
  const auto before = st.params.at("lm.tok_emb").value.data;
  CHECK_THROWS_AS(pretrain_step(st, std::span(&only, 1), c), EmptyLoss);
  CHECK(st.params.at("lm.tok_emb").value.data == before);
}

TEST_CASE("run_stage resumes bit-identically from an intermediate checkpoint") {
  TempDir out("training_resume");
  StageConfig c = tiny_stage(Stage::pretrain);
  c.eval_every = 3;
  const auto full = out.path / "full.ckpt";
  const auto report = run_stage(c, small_corpus(), std::nullopt, full);
  REQUIRE(std::filesystem::exists(out.path / "full.ckpt.step3"));
  CHECK(report.at("steps") == 6);
  CHECK(report.at("loss_curve").size() == 6);
  CHECK(report.at("dev_curve").size() == 1);
  for (const char* k : {"final_loss", "dev_metrics", "seed", "config", "provenance", "parameters", "wall_time_s"}) {
    CHECK(report.contains(k));
  }

  const auto resumed = out.path / "resumed.ckpt";
  const auto r2 = run_stage(c, small_corpus(), out.path / "full.ckpt.step3", resumed);
  CHECK(r2.at("loss_curve") == report.at("loss_curve"));
  CHECK(slurp(full) == slurp(resumed));

  // an in-progress pretrain checkpoint cannot seed another stage
  StageConfig sft = tiny_stage(Stage::sft);
  CHECK_THROWS_AS(run_stage(sft, small_corpus(), out.path / "full.ckpt.step3", out.path / "x.ckpt"), StageOrderError);
}

TEST_CASE("run_stage enforces stage order") {
  TempDir out("training_order");
  const auto& data = small_corpus();
  StageConfig pre = tiny_stage(Stage::pretrain);
  pre.max_steps = 2;
  run_stage(pre, data, std::nullopt, out.path / "pt.ckpt");

  StageConfig dpo = tiny_stage(Stage::dpo);
  dpo.max_steps = 2;
  CHECK_THROWS_AS(run_stage(dpo, data, out.path / "pt.ckpt", out.path / "dpo.ckpt"), StageOrderError);
  StageConfig sft = tiny_stage(Stage::sft);
  sft.max_steps = 2;
  CHECK_THROWS_AS(run_stage(sft, data, std::nullopt, out.path / "sft.ckpt"), StageOrderError);

  run_stage(sft, data, out.path / "pt.ckpt", out.path / "sft.ckpt");
  const auto rep = run_stage(dpo, data, out.path / "sft.ckpt", out.path / "dpo.ckpt");
  CHECK(rep.at("provenance") == nlohmann::json({"pretrain", "sft", "dpo"}));
  CHECK(rep.at("dev_metrics").contains("win_rate"));
  CHECK(rep.at("dev_metrics").contains("mean_margin"));

  RunOptions force;
  force.force = true;
  CHECK_NOTHROW(run_stage(dpo, data, out.path / "pt.ckpt", out.path / "forced.ckpt", force));

  StageConfig narrow = pre;
  narrow.model.lm.vocab_size = static_cast<int>(data::Tokenizer::standard().size()) - 1;
  CHECK_THROWS_AS(run_stage(narrow, data, std::nullopt, out.path / "narrow.ckpt"), InvalidConfig);
}

TEST_CASE("preference statistics are neutral before any update") {
  const auto& dir = small_corpus();
  const auto records = data::read_manifest(dir / "train.jsonl");
  const auto mc = tiny_config();
  const auto params = model::init_params<float>(mc, 4);
  const auto triples = data::build_preferences(records, 6, data::Corruption::word_swap, 0.5, 8);
  std::vector<PreferenceExample> ex;
  for (const auto& t : triples) ex.push_back(make_preference_example(t, dir, mc));
  const auto s = preference_stats(mc, params, params, ex);
  CHECK(s.win_rate == 0.5);
  CHECK(s.mean_margin == 0.0);

  TrainState st{mc, params, {}, 0, {}};
  StageConfig c = tiny_stage(Stage::dpo);
  c.warmup_steps = 0;
  c.lr = 1e-2;
  std::vector<const PreferenceExample*> batch;
  std::vector<double> rw, rl;
  for (const auto& e : ex) {
    batch.push_back(&e);
    const auto [w, l] = preference_logprobs(mc, params, e);
    rw.push_back(w);
    rl.push_back(l);
  }
  const double first = dpo_step(st, batch, rw, rl, c);
  CHECK(first == doctest::Approx(std::numbers::ln2).epsilon(1e-5));
  for (int i = 0; i < 20; ++i) dpo_step(st, batch, rw, rl, c);
  const auto after = preference_stats(mc, st.params, params, ex);
  CHECK(after.mean_margin > 0.0);
  CHECK(after.win_rate > 0.5);
  CHECK_THROWS_AS(dpo_step(st, batch, std::span(rw).first(1), rl, c), InvalidConfig);
}
