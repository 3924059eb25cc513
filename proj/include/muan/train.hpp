#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "muan/model.hpp"
#include "muan/toy_data.hpp"

namespace muan {

struct TrainHyper {
  double lr_coefficient = 1.5e-2;  // alpha = c / sqrt(d L)
  double warmup_epochs = 3.0;
  double warmup_floor = 1.0 / 3.0;  // warmup starts at floor * alpha
  double decay_factor = 0.2;
  std::size_t decay_every = 2;
  std::size_t decay_start = 10;
  std::size_t batch_size = 64;
  std::size_t epochs = 13;
  double lambda = 0.5;
  double eta = 0.5;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.99;
  AnswerLoss answer_loss = AnswerLoss::softmax;

  void validate() const;  // ConfigError
};

double base_learning_rate(const TrainHyper& hyper, std::size_t d, std::size_t layers);

// Learning rate for `step` of `steps_per_epoch` within `epoch` (0-based).
// Warmup rises linearly in fractional epochs from floor * alpha to alpha; from
// decay_start on, alpha is multiplied by decay_factor once per started
// decay_every-epoch period.
double lr_at(std::size_t epoch, std::size_t step, std::size_t steps_per_epoch, const TrainHyper& hyper, std::size_t d,
             std::size_t layers);

struct DataConfig {
  std::filesystem::path train;
  std::filesystem::path val;
  std::filesystem::path vocab;  // empty: built-in toy vocabulary
};

struct RunConfig {
  MuanConfig model;
  DataConfig data;
  TrainHyper train;
  std::filesystem::path out_dir;
};

// JSON document with optional sections {model, data, train}. Missing fields
// keep their defaults; unknown fields are rejected. Relative paths resolve
// against `base_dir`. Throws ConfigError.
RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_json(const RunConfig& config);

enum class Ablation { none, no_gate, no_self, no_co };
Ablation parse_ablation(const std::string& name);
std::string to_string(Ablation ablation);
// Switches off gating or the named attention quadrants; combining no-self with
// no-co is rejected with ConfigError.
void apply_ablation(MuanConfig& config, Ablation ablation);

struct EvalMetrics {
  Task task = Task::vqa;
  std::size_t samples = 0;
  double accuracy = 0.0;
  double loss = 0.0;
  // vqa: accuracy per question type.
  std::map<std::string, double> by_type;
  std::map<std::string, std::size_t> type_counts;
  // grounding: top-ranked proposal taken as is vs. refined by the box head.
  double proposal_accuracy = 0.0;
  double refined_accuracy = 0.0;

  std::string to_json(int indent = -1) const;
};

struct EvalOptions {
  PrepareOptions prepare;
  double lambda = 0.5;
  // Grounding accuracy uses refined boxes when set, else the raw proposal.
  bool refine_boxes = true;
};

// Dropout off. Throws ConfigError on an empty dataset or task mismatch.
EvalMetrics evaluate(const MuanModel& model, std::span<const ToySample> samples, const EvalOptions& options);

struct TrainOptions {
  Ablation ablation = Ablation::none;
  std::optional<std::uint64_t> seed;
  std::ostream* log = nullptr;  // human-readable progress; not part of any artifact
};

struct TrainResult {
  RunConfig config;  // after ablation / seed overrides
  std::size_t best_epoch = 0;
  EvalMetrics best;
  EvalMetrics last;
  std::filesystem::path checkpoint;
  double seconds = 0.0;
};

/// Trains with Adam on batches of per-sample gradients. Writes into
/// config.out_dir: best.ckpt (best validation epoch), metrics.jsonl (one
/// record per epoch and split) and manifest.json (written last, atomically).
/// A run.lock file guards the directory for the duration of the run.
///
/// A non-finite loss raises NumericalError naming the batch seed.
TrainResult train(const RunConfig& config, const TrainOptions& options = {});

struct LoadedModel {
  MuanModel model;
  TrainHyper hyper;
  DataConfig data;
  Vocabulary vocab;
  std::size_t epoch = 0;
};

LoadedModel load_model(const std::filesystem::path& checkpoint);
void save_model(const std::filesystem::path& checkpoint, const MuanModel& model, const TrainHyper& hyper,
                const DataConfig& data, const Vocabulary& vocab, std::size_t epoch);

EvalOptions eval_options_for(const TrainHyper& hyper);

// Writes attention maps of every block for one dataset sample.
void export_attention(const LoadedModel& loaded, const ToySample& sample, const std::filesystem::path& out_dir);

// FNV-1a 64 of the file contents, as 16 hex digits.
std::string file_checksum(const std::filesystem::path& path);

std::string version_string();

}  // namespace muan
