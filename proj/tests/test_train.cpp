#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "muan/train.hpp"
#include "support.hpp"

using namespace muan;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Scratch directory with a tiny dataset and a small-model config.
struct TinyRun {
  fs::path dir;
  RunConfig config;

  TinyRun(const std::string& name, Task task, std::size_t train_n, std::size_t val_n) {
    dir = fs::temp_directory_path() / ("muan_train_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    const Vocabulary vocab = Vocabulary::toy();
    ToyConfig toy;
    toy.proposals_per_object = 2;
    write_dataset(dir / "train.jsonl", generate_dataset(task, train_n, 1, toy, vocab));
    write_dataset(dir / "val.jsonl", generate_dataset(task, val_n, 2, toy, vocab));
    const std::string json = R"({
      "model": {"task": ")" + to_string(task) + R"(", "layers": 2, "d": 16, "heads": 2, "d_gate": 8, "d_y": 8,
                "d_embed": 8, "answers": 26, "m_max": 14, "n_max": 40, "dropout": 0.1},
      "data": {"train": "train.jsonl", "val": "val.jsonl"},
      "train": {"epochs": 2, "batch_size": 4, "out_dir": "run"}
    })";
    config = parse_run_config(json, dir);
  }
  ~TinyRun() { fs::remove_all(dir); }
};

}  // namespace

TEST(Schedule, ReferenceDefaults) {
  TrainHyper h;
  EXPECT_EQ(h.lr_coefficient, 1.5e-2);
  EXPECT_EQ(h.decay_factor, 0.2);
  EXPECT_EQ(h.decay_start, 10u);
  EXPECT_EQ(h.decay_every, 2u);
  EXPECT_EQ(h.warmup_epochs, 3.0);
  EXPECT_EQ(h.batch_size, 64u);
  EXPECT_EQ(h.lambda, 0.5);
  EXPECT_EQ(h.beta1, 0.9);
  EXPECT_EQ(h.beta2, 0.99);
}

TEST(Schedule, PlateauIsBaseRate) {
  TrainHyper h;
  const double alpha = 1.5e-2 / std::sqrt(768.0 * 10.0);
  EXPECT_NEAR(alpha, 1.712e-4, 1e-7);
  EXPECT_EQ(base_learning_rate(h, 768, 10), alpha);
  for (std::size_t e = 3; e < 10; ++e) EXPECT_EQ(lr_at(e, 17, 100, h, 768, 10), alpha);
}

TEST(Schedule, WarmupStartsAtOneThird) {
  TrainHyper h;
  const double alpha = base_learning_rate(h, 64, 2);
  EXPECT_DOUBLE_EQ(lr_at(0, 0, 10, h, 64, 2), alpha / 3.0);
  EXPECT_DOUBLE_EQ(lr_at(1, 5, 10, h, 64, 2), alpha * (1.0 / 3.0 + (2.0 / 3.0) * 0.5));
}

TEST(Schedule, DecaysByFifthEveryTwoEpochsFromTen) {
  TrainHyper h;
  const double alpha = base_learning_rate(h, 768, 10);
  EXPECT_DOUBLE_EQ(lr_at(10, 0, 100, h, 768, 10), alpha * 0.2);
  EXPECT_DOUBLE_EQ(lr_at(11, 99, 100, h, 768, 10), alpha * 0.2);
  EXPECT_DOUBLE_EQ(lr_at(12, 0, 100, h, 768, 10), alpha * 0.04);
  EXPECT_DOUBLE_EQ(lr_at(14, 0, 100, h, 768, 10), alpha * 0.008);
}

TEST(Schedule, PiecewiseMonotone) {
  TrainHyper h;
  double prev = 0.0;
  for (std::size_t e = 0; e < 20; ++e)
    for (std::size_t s = 0; s < 7; ++s) {
      const double lr = lr_at(e, s, 7, h, 64, 2);
      if (e < 3) EXPECT_GE(lr, prev);
      else if (e < 10) EXPECT_EQ(lr, base_learning_rate(h, 64, 2));
      else EXPECT_LE(lr, prev);
      prev = lr;
    }
}

TEST(RunConfig, DefaultsAndPathResolution) {
  RunConfig c = parse_run_config(R"({"data": {"train": "t.jsonl"}})", "/base");
  EXPECT_EQ(c.model.d, 768u);
  EXPECT_EQ(c.model.layers, 10u);
  EXPECT_EQ(c.train.batch_size, 64u);
  EXPECT_EQ(c.data.train, fs::path("/base/t.jsonl"));
  EXPECT_EQ(c.out_dir, fs::path("/base/run"));
  RunConfig toy = parse_run_config(R"({"model": {"d": 64, "heads": 4}})", "/base");
  EXPECT_EQ(toy.model.d_x, 64u);
  RunConfig back = parse_run_config(run_config_json(toy), "/elsewhere");
  EXPECT_EQ(back.model.d, 64u);
  EXPECT_EQ(back.out_dir, toy.out_dir);
}

TEST(RunConfig, RejectsBadInput) {
  EXPECT_THROW(parse_run_config("{", "."), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"model": {"depth": 3}})", "."), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"extra": {}})", "."), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"model": {"d": "wide"}})", "."), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"train": {"answer_loss": "hinge"}})", "."), ConfigError);
  EXPECT_THROW(load_run_config("/nonexistent/config.json"), ConfigError);
}

TEST(Ablation, ParsingAndExclusivity) {
  EXPECT_EQ(parse_ablation("no-co"), Ablation::no_co);
  EXPECT_THROW(parse_ablation("no-ffn"), ConfigError);
  MuanConfig c = MuanConfig::toy_profile(Task::vqa);
  apply_ablation(c, Ablation::no_gate);
  EXPECT_FALSE(c.gated);
  c.disable_self = true;
  EXPECT_THROW(apply_ablation(c, Ablation::no_co), ConfigError);
}

TEST(Evaluate, EmptyDatasetAndTaskMismatchAreErrors) {
  MuanConfig cfg = MuanConfig::toy_profile(Task::vqa);
  cfg.vocab_size = Vocabulary::toy().size();
  MuanModel model = MuanModel::create(cfg, 0);
  EXPECT_THROW(evaluate(model, {}, EvalOptions{}), ConfigError);
  RngStream rng(1);
  std::vector<ToySample> grounding = {gen_grounding_sample(rng, ToyConfig{}, Vocabulary::toy())};
  EXPECT_THROW(evaluate(model, grounding, EvalOptions{}), ConfigError);
}

TEST(Evaluate, VqaRecordHasPerTypeBreakdown) {
  MuanConfig cfg = MuanConfig::toy_profile(Task::vqa);
  cfg.vocab_size = Vocabulary::toy().size();
  MuanModel model = MuanModel::create(cfg, 0);
  const std::vector<ToySample> data = generate_dataset(Task::vqa, 40, 3, ToyConfig{}, Vocabulary::toy());
  EvalMetrics m = evaluate(model, data, EvalOptions{});
  EXPECT_EQ(m.samples, 40u);
  EXPECT_EQ(m.by_type.size(), 3u);
  auto j = nlohmann::json::parse(m.to_json());
  EXPECT_TRUE(j.contains("by_type"));
  EXPECT_TRUE(std::isfinite(m.loss));
}

TEST(Evaluate, PaddingDoesNotChangeMetrics) {
  MuanConfig cfg = MuanConfig::toy_profile(Task::grounding);
  cfg.vocab_size = Vocabulary::toy().size();
  cfg.layers = 1;
  MuanModel model = MuanModel::create(cfg, 4);
  const std::vector<ToySample> data = generate_dataset(Task::grounding, 6, 3, ToyConfig{}, Vocabulary::toy());
  EvalOptions plain, padded;
  padded.prepare.pad = true;
  EvalMetrics a = evaluate(model, data, plain), b = evaluate(model, data, padded);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_NEAR(a.loss, b.loss, 1e-12);
}

TEST(Train, MemorizesTinyDataset) {
  TinyRun run("overfit", Task::vqa, 8, 4);
  run.config.model.dropout = 0.0;
  run.config.train.epochs = 60;
  run.config.train.batch_size = 8;
  run.config.train.lr_coefficient = 0.1;
  run.config.train.decay_start = 1000;
  run.config.data.val = run.config.data.train;
  train(run.config);
  LoadedModel loaded = load_model(run.config.out_dir / "best.ckpt");
  const std::vector<ToySample> data = read_dataset(run.config.data.train);
  EXPECT_EQ(evaluate(loaded.model, data, eval_options_for(loaded.hyper)).accuracy, 1.0);
}

TEST(Train, WritesArtifactsAndIsDeterministic) {
  TinyRun run("determinism", Task::grounding, 12, 4);
  TrainResult a = train(run.config);
  const std::string ckpt = slurp(a.checkpoint), metrics = slurp(run.config.out_dir / "metrics.jsonl");
  EXPECT_TRUE(fs::exists(run.config.out_dir / "manifest.json"));
  EXPECT_FALSE(fs::exists(run.config.out_dir / "run.lock"));
  std::istringstream lines(metrics);
  std::string line;
  std::size_t records = 0;
  while (std::getline(lines, line)) {
    auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("epoch"));
    EXPECT_TRUE(j.contains("split"));
    ++records;
  }
  EXPECT_EQ(records, 2 * run.config.train.epochs);
  train(run.config);
  EXPECT_EQ(slurp(a.checkpoint), ckpt);
  EXPECT_EQ(slurp(run.config.out_dir / "metrics.jsonl"), metrics);
  TrainOptions other;
  other.seed = 99;
  train(run.config, other);
  EXPECT_NE(slurp(a.checkpoint), ckpt);
}

TEST(Train, LockedDirectoryIsRefused) {
  TinyRun run("lock", Task::vqa, 4, 2);
  fs::create_directories(run.config.out_dir);
  std::ofstream(run.config.out_dir / "run.lock") << "";
  EXPECT_THROW(train(run.config), ConfigError);
}

TEST(Train, DivergenceNamesBatchSeed) {
  TinyRun run("diverge", Task::vqa, 8, 2);
  run.config.train.lr_coefficient = 1e300;
  try {
    train(run.config);
    FAIL() << "expected a numerical failure";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("batch seed"), std::string::npos) << e.what();
  }
}

TEST(Train, CheckpointRoundTripGivesIdenticalOutputs) {
  TinyRun run("roundtrip", Task::grounding, 6, 3);
  run.config.train.epochs = 1;
  TrainResult r = train(run.config);
  LoadedModel a = load_model(r.checkpoint);
  const fs::path copy = run.dir / "copy.ckpt";
  save_model(copy, a.model, a.hyper, a.data, a.vocab, a.epoch);
  LoadedModel b = load_model(copy);
  EXPECT_EQ(slurp(copy), slurp(r.checkpoint));
  const std::vector<ToySample> data = read_dataset(run.config.data.val);
  for (const ToySample& s : data) {
    PreparedSample p = prepare_sample(s, a.model.config, PrepareOptions{});
    Tape t1, t2;
    RngStream rng(0);
    ForwardResult fa = forward(t1, a.model, p, false, rng), fb = forward(t2, b.model, p, false, rng);
    EXPECT_TRUE(bitwise_equal(fa.grounding.scores.value(), fb.grounding.scores.value()));
    EXPECT_TRUE(bitwise_equal(fa.grounding.boxes.value(), fb.grounding.boxes.value()));
  }
}

TEST(Ablate, NoGateChangesOutputsOfGatedModel) {
  TinyRun run("nogate", Task::vqa, 8, 3);
  run.config.train.epochs = 1;
  TrainResult r = train(run.config);
  LoadedModel gated = load_model(r.checkpoint);
  LoadedModel ungated = load_model(r.checkpoint);
  apply_ablation(ungated.model.config, Ablation::no_gate);
  const std::vector<ToySample> data = read_dataset(run.config.data.val);
  PreparedSample p = prepare_sample(data[0], gated.model.config, PrepareOptions{});
  Tape t1, t2;
  RngStream rng(0);
  ForwardResult a = forward(t1, gated.model, p, false, rng), b = forward(t2, ungated.model, p, false, rng);
  EXPECT_GT(max_abs_diff(a.answer_logits.value(), b.answer_logits.value()), 0.0);
}

TEST(ExportAttention, OneDirectoryPerBlockAndStochasticRows) {
  TinyRun run("export", Task::vqa, 6, 3);
  run.config.train.epochs = 1;
  TrainResult r = train(run.config);
  LoadedModel loaded = load_model(r.checkpoint);
  const std::vector<ToySample> data = read_dataset(run.config.data.val);
  const fs::path out = run.dir / "attn";
  export_attention(loaded, data[1], out);
  std::size_t blocks = 0;
  for (const auto& entry : fs::directory_iterator(out)) {
    ++blocks;
    auto meta = nlohmann::json::parse(slurp(entry.path() / "meta.json"));
    const std::size_t s = meta["m"].get<std::size_t>() + meta["n"].get<std::size_t>();
    EXPECT_EQ(meta["tokens"][0], "[ans]");
    for (std::size_t h = 0; h < meta["heads"].get<std::size_t>(); ++h) {
      std::ifstream csv(entry.path() / ("head_" + std::to_string(h) + ".csv"));
      std::string line;
      std::size_t rows = 0;
      while (std::getline(csv, line)) {
        std::stringstream cells(line);
        std::string cell;
        std::size_t cols = 0;
        double total = 0.0;
        while (std::getline(cells, cell, ',')) total += std::stod(cell), ++cols;
        EXPECT_EQ(cols, s);
        EXPECT_NEAR(total, 1.0, 1e-6);
        ++rows;
      }
      EXPECT_EQ(rows, s);
    }
  }
  EXPECT_EQ(blocks, run.config.model.layers);
}

TEST(Version, NamesTool) { EXPECT_EQ(version_string().rfind("muan ", 0), 0u); }
