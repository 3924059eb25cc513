#include "muan/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "muan/checkpoint.hpp"
#include "muan/optim.hpp"

#ifndef MUAN_VERSION
#define MUAN_VERSION "0.0.0"
#endif

namespace muan {

using nlohmann::json;

std::string version_string() { return std::string("muan ") + MUAN_VERSION; }

// ---- Schedule ------------------------------------------------------------------

void TrainHyper::validate() const {
  if (!(lr_coefficient > 0.0)) throw ConfigError("train.lr_coefficient must be positive");
  if (!(warmup_epochs >= 0.0)) throw ConfigError("train.warmup_epochs must be non-negative");
  if (!(warmup_floor > 0.0 && warmup_floor <= 1.0)) throw ConfigError("train.warmup_floor must lie in (0, 1]");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ConfigError("train.decay_factor must lie in (0, 1]");
  if (decay_every == 0) throw ConfigError("train.decay_every must be positive");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (epochs == 0) throw ConfigError("train.epochs must be positive");
  if (!(lambda >= 0.0)) throw ConfigError("train.lambda must be non-negative");
  if (!(eta > 0.0 && eta < 1.0)) throw ConfigError("train.eta must lie in (0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train.beta1 and train.beta2 must lie in [0, 1)");
  }
}

double base_learning_rate(const TrainHyper& hyper, std::size_t d, std::size_t layers) {
  if (d == 0 || layers == 0) throw ConfigError("learning rate needs positive d and L");
  return hyper.lr_coefficient / std::sqrt(static_cast<double>(d) * static_cast<double>(layers));
}

double lr_at(std::size_t epoch, std::size_t step, std::size_t steps_per_epoch, const TrainHyper& hyper, std::size_t d,
             std::size_t layers) {
  const double alpha = base_learning_rate(hyper, d, layers);
  const double progress =
      static_cast<double>(epoch) +
      (steps_per_epoch ? static_cast<double>(step) / static_cast<double>(steps_per_epoch) : 0.0);
  if (progress < hyper.warmup_epochs) {
    const double t = progress / hyper.warmup_epochs;
    return alpha * (hyper.warmup_floor + (1.0 - hyper.warmup_floor) * t);
  }
  if (epoch < hyper.decay_start) return alpha;
  const std::size_t periods = (epoch - hyper.decay_start) / hyper.decay_every + 1;
  return alpha * std::pow(hyper.decay_factor, static_cast<double>(periods));
}

// ---- Configuration ---------------------------------------------------------------

namespace {

void reject_unknown(const json& section, const char* name, std::initializer_list<const char*> known) {
  if (!section.is_object()) throw ConfigError(std::string("config section '") + name + "' must be an object");
  const std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [key, value] : section.items()) {
    if (!allowed.count(key)) throw ConfigError(std::string("unknown config field '") + name + "." + key + "'");
  }
}

template <typename T>
void read_field(const json& section, const char* section_name, const char* key, T& out) {
  if (!section.contains(key)) return;
  try {
    out = section.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config field '") + section_name + "." + key + "' has the wrong type");
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  std::filesystem::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

json model_json(const MuanConfig& m) {
  return {{"layers", m.layers},   {"d", m.d},
          {"heads", m.heads},     {"d_gate", m.d_gate},
          {"dropout", m.dropout}, {"task", to_string(m.task)},
          {"d_x", m.d_x},         {"d_y", m.d_y},
          {"d_embed", m.d_embed}, {"vocab_size", m.vocab_size},
          {"answers", m.answers}, {"m_max", m.m_max},
          {"n_max", m.n_max},     {"gated", m.gated},
          {"disable_self", m.disable_self}, {"disable_co", m.disable_co},
          {"ln_eps", m.ln_eps}};
}

MuanConfig model_from_json(const json& j) {
  reject_unknown(j, "model",
                 {"layers", "d", "heads", "d_gate", "dropout", "task", "d_x", "d_y", "d_embed", "vocab_size", "answers",
                  "m_max", "n_max", "gated", "disable_self", "disable_co", "ln_eps"});
  MuanConfig m;
  std::string task = to_string(m.task);
  read_field(j, "model", "task", task);
  m.task = parse_task(task);
  read_field(j, "model", "layers", m.layers);
  read_field(j, "model", "d", m.d);
  m.d_x = m.d;  // text encoder width follows d unless given
  read_field(j, "model", "heads", m.heads);
  read_field(j, "model", "d_gate", m.d_gate);
  read_field(j, "model", "dropout", m.dropout);
  read_field(j, "model", "d_x", m.d_x);
  read_field(j, "model", "d_y", m.d_y);
  read_field(j, "model", "d_embed", m.d_embed);
  read_field(j, "model", "vocab_size", m.vocab_size);
  read_field(j, "model", "answers", m.answers);
  read_field(j, "model", "m_max", m.m_max);
  read_field(j, "model", "n_max", m.n_max);
  read_field(j, "model", "gated", m.gated);
  read_field(j, "model", "disable_self", m.disable_self);
  read_field(j, "model", "disable_co", m.disable_co);
  read_field(j, "model", "ln_eps", m.ln_eps);
  m.validate();
  return m;
}

json hyper_json(const TrainHyper& h) {
  return {{"lr_coefficient", h.lr_coefficient}, {"warmup_epochs", h.warmup_epochs},
          {"warmup_floor", h.warmup_floor},     {"decay_factor", h.decay_factor},
          {"decay_every", h.decay_every},       {"decay_start", h.decay_start},
          {"batch_size", h.batch_size},         {"epochs", h.epochs},
          {"lambda", h.lambda},                 {"eta", h.eta},
          {"seed", h.seed},                     {"beta1", h.beta1},
          {"beta2", h.beta2},                   {"answer_loss", to_string(h.answer_loss)}};
}

TrainHyper hyper_from_json(const json& j, std::string* out_dir) {
  reject_unknown(j, "train",
                 {"lr_coefficient", "warmup_epochs", "warmup_floor", "decay_factor", "decay_every", "decay_start",
                  "batch_size", "epochs", "lambda", "eta", "seed", "beta1", "beta2", "answer_loss", "out_dir"});
  TrainHyper h;
  read_field(j, "train", "lr_coefficient", h.lr_coefficient);
  read_field(j, "train", "warmup_epochs", h.warmup_epochs);
  read_field(j, "train", "warmup_floor", h.warmup_floor);
  read_field(j, "train", "decay_factor", h.decay_factor);
  read_field(j, "train", "decay_every", h.decay_every);
  read_field(j, "train", "decay_start", h.decay_start);
  read_field(j, "train", "batch_size", h.batch_size);
  read_field(j, "train", "epochs", h.epochs);
  read_field(j, "train", "lambda", h.lambda);
  read_field(j, "train", "eta", h.eta);
  read_field(j, "train", "seed", h.seed);
  read_field(j, "train", "beta1", h.beta1);
  read_field(j, "train", "beta2", h.beta2);
  std::string loss = to_string(h.answer_loss);
  read_field(j, "train", "answer_loss", loss);
  h.answer_loss = parse_answer_loss(loss);
  if (out_dir) read_field(j, "train", "out_dir", *out_dir);
  h.validate();
  return h;
}

json data_json(const DataConfig& d) {
  return {{"train", d.train.string()}, {"val", d.val.string()}, {"vocab", d.vocab.string()}};
}

DataConfig data_from_json(const json& j, const std::filesystem::path& base) {
  reject_unknown(j, "data", {"train", "val", "vocab"});
  std::string train, val, vocab;
  read_field(j, "data", "train", train);
  read_field(j, "data", "val", val);
  read_field(j, "data", "vocab", vocab);
  return DataConfig{resolve(base, train), resolve(base, val), resolve(base, vocab)};
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown(j, "<root>", {"model", "data", "train"});
  RunConfig c;
  if (j.contains("model")) c.model = model_from_json(j.at("model"));
  if (j.contains("data")) c.data = data_from_json(j.at("data"), base_dir);
  std::string out_dir = "run";
  if (j.contains("train")) c.train = hyper_from_json(j.at("train"), &out_dir);
  c.out_dir = resolve(base_dir, out_dir);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_file(path), std::filesystem::absolute(path).parent_path());
}

std::string run_config_json(const RunConfig& config) {
  json train = hyper_json(config.train);
  train["out_dir"] = config.out_dir.string();
  return json{{"model", model_json(config.model)}, {"data", data_json(config.data)}, {"train", train}}.dump(2);
}

Ablation parse_ablation(const std::string& name) {
  if (name == "none") return Ablation::none;
  if (name == "no-gate") return Ablation::no_gate;
  if (name == "no-self") return Ablation::no_self;
  if (name == "no-co") return Ablation::no_co;
  throw ConfigError("unknown ablation '" + name + "' (expected no-gate, no-self or no-co)");
}

std::string to_string(Ablation ablation) {
  switch (ablation) {
    case Ablation::none: return "none";
    case Ablation::no_gate: return "no-gate";
    case Ablation::no_self: return "no-self";
    case Ablation::no_co: return "no-co";
  }
  return "none";
}

void apply_ablation(MuanConfig& config, Ablation ablation) {
  switch (ablation) {
    case Ablation::none: break;
    case Ablation::no_gate: config.gated = false; break;
    case Ablation::no_self: config.disable_self = true; break;
    case Ablation::no_co: config.disable_co = true; break;
  }
  config.validate();
}

// ---- Evaluation ------------------------------------------------------------------

std::string EvalMetrics::to_json(int indent) const {
  json j = {{"task", muan::to_string(task)}, {"samples", samples}, {"accuracy", accuracy}, {"loss", loss}};
  if (task == Task::vqa) {
    j["by_type"] = by_type;
    j["type_counts"] = type_counts;
  } else {
    j["proposal_accuracy"] = proposal_accuracy;
    j["refined_accuracy"] = refined_accuracy;
  }
  return j.dump(indent);
}

EvalOptions eval_options_for(const TrainHyper& hyper) {
  EvalOptions o;
  o.prepare.eta = hyper.eta;
  o.prepare.answer_loss = hyper.answer_loss;
  o.lambda = hyper.lambda;
  o.refine_boxes = hyper.lambda > 0.0;
  return o;
}

EvalMetrics evaluate(const MuanModel& model, std::span<const ToySample> samples, const EvalOptions& options) {
  if (samples.empty()) throw ConfigError("cannot evaluate on an empty dataset");
  EvalMetrics m;
  m.task = model.config.task;
  m.samples = samples.size();
  RngStream unused(0);
  double score = 0.0, loss = 0.0, proposal_hits = 0.0, refined_hits = 0.0;
  std::size_t loss_terms = 0;
  std::map<std::string, double> type_score;
  for (const ToySample& sample : samples) {
    const PreparedSample prep = prepare_sample(sample, model.config, options.prepare);
    Tape tape;
    const ForwardResult out = forward(tape, model, prep, false, unused);
    if (m.task == Task::vqa) {
      const double acc = vqa_accuracy(predict_answer(out), prep.answer_counts);
      score += acc;
      const std::string type = to_string(prep.type);
      type_score[type] += acc;
      ++m.type_counts[type];
      loss += sample_loss(out, prep, options.prepare.answer_loss, options.lambda).total.value().item();
      ++loss_terms;
    } else {
      const GroundingGuess guess = predict_box(out, prep);
      proposal_hits += iou(guess.proposal_box, prep.gt_box) > 0.5 ? 1.0 : 0.0;
      refined_hits += iou(guess.refined_box, prep.gt_box) > 0.5 ? 1.0 : 0.0;
      if (prep.gt.usable()) {
        loss += sample_loss(out, prep, options.prepare.answer_loss, options.lambda).total.value().item();
        ++loss_terms;
      }
    }
  }
  const double n = static_cast<double>(samples.size());
  if (m.task == Task::vqa) {
    m.accuracy = score / n;
    for (const auto& [type, s] : type_score) m.by_type[type] = s / static_cast<double>(m.type_counts[type]);
  } else {
    m.proposal_accuracy = proposal_hits / n;
    m.refined_accuracy = refined_hits / n;
    m.accuracy = options.refine_boxes ? m.refined_accuracy : m.proposal_accuracy;
  }
  m.loss = loss_terms ? loss / static_cast<double>(loss_terms) : 0.0;
  return m;
}

// ---- Checkpoints -----------------------------------------------------------------

void save_model(const std::filesystem::path& checkpoint, const MuanModel& model, const TrainHyper& hyper,
                const DataConfig& data, const Vocabulary& vocab, std::size_t epoch) {
  const json header = {{"model", model_json(model.config)},
                       {"train", hyper_json(hyper)},
                       {"data", data_json(data)},
                       {"vocabulary", vocab.words()},
                       {"epoch", epoch},
                       {"version", version_string()}};
  save_checkpoint(checkpoint, model.params, header.dump());
}

LoadedModel load_model(const std::filesystem::path& checkpoint) {
  Checkpoint ck = load_checkpoint(checkpoint);
  json header;
  try {
    header = json::parse(ck.header_json);
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  if (!header.contains("model") || !header.contains("vocabulary")) {
    throw FormatError("checkpoint header lacks model or vocabulary");
  }
  LoadedModel out{MuanModel{}, TrainHyper{}, DataConfig{}, Vocabulary(header.at("vocabulary").get<std::vector<std::string>>()), 0};
  const MuanConfig config = model_from_json(header.at("model"));
  if (header.contains("train")) out.hyper = hyper_from_json(header.at("train"), nullptr);
  if (header.contains("data")) out.data = data_from_json(header.at("data"), {});
  if (header.contains("epoch")) out.epoch = header.at("epoch").get<std::size_t>();
  if (config.vocab_size != out.vocab.size()) throw FormatError("checkpoint vocabulary size disagrees with its model");

  out.model = MuanModel::create(config, 0);
  if (ck.tensors.size() != out.model.params.size()) {
    throw FormatError("checkpoint holds " + std::to_string(ck.tensors.size()) + " tensors, model expects " +
                      std::to_string(out.model.params.size()));
  }
  for (Parameter& p : out.model.params) {
    if (!ck.tensors.contains(p.name)) throw FormatError("checkpoint lacks tensor '" + p.name + "'");
    const Tensor& stored = ck.tensors.value(p.name);
    if (stored.shape() != p.value.shape()) {
      throw FormatError("tensor '" + p.name + "' has shape " + shape_string(stored.shape()) + ", expected " +
                        shape_string(p.value.shape()));
    }
    p.value = stored;
  }
  return out;
}

std::string file_checksum(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---- Training --------------------------------------------------------------------

namespace {

class RunLock {
 public:
  explicit RunLock(std::filesystem::path path) : path_(std::move(path)) {
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) throw ConfigError("run directory is locked (" + path_.string() + " exists)");
    std::fclose(f);
  }
  ~RunLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

std::vector<ToySample> load_split(const std::filesystem::path& path, const char* name) {
  if (path.empty()) throw ConfigError(std::string("data.") + name + " is not set");
  if (!std::filesystem::exists(path)) throw ConfigError(std::string("data.") + name + " not found: " + path.string());
  std::vector<ToySample> samples = read_dataset(path);
  if (samples.empty()) throw ConfigError(std::string("data.") + name + " is empty: " + path.string());
  return samples;
}

constexpr std::uint64_t kShuffleStream = 0x73687566666c65ull;
constexpr std::uint64_t kBatchStream = 0x6261746368ull;

}  // namespace

TrainResult train(const RunConfig& config_in, const TrainOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  TrainResult result;
  result.config = config_in;
  RunConfig& cfg = result.config;
  if (options.seed) cfg.train.seed = *options.seed;
  apply_ablation(cfg.model, options.ablation);
  cfg.train.validate();

  const Vocabulary vocab = cfg.data.vocab.empty() ? Vocabulary::toy() : Vocabulary::load(cfg.data.vocab);
  cfg.model.vocab_size = vocab.size();
  cfg.model.validate();
  const std::vector<ToySample> train_set = load_split(cfg.data.train, "train");
  const std::vector<ToySample> val_set = load_split(cfg.data.val, "val");
  for (const auto* set : {&train_set, &val_set}) {
    for (const ToySample& s : *set) {
      if (s.task != cfg.model.task) {
        throw ConfigError("dataset holds " + to_string(s.task) + " samples but model.task is " +
                          to_string(cfg.model.task));
      }
      for (std::size_t id : s.tokens) vocab.word(id);
    }
  }

  std::filesystem::create_directories(cfg.out_dir);
  RunLock lock(cfg.out_dir / "run.lock");
  const std::filesystem::path metrics_path = cfg.out_dir / "metrics.jsonl";
  std::ofstream metrics(metrics_path, std::ios::binary | std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot write " + metrics_path.string());
  result.checkpoint = cfg.out_dir / "best.ckpt";

  const TrainHyper& hyper = cfg.train;
  MuanModel model = MuanModel::create(cfg.model, hyper.seed);
  AdamState adam = AdamState::for_parameters(model.params, hyper.beta1, hyper.beta2);
  const EvalOptions eval_opts = eval_options_for(hyper);
  const std::size_t steps = (train_set.size() + hyper.batch_size - 1) / hyper.batch_size;
  const RngStream root(hyper.seed);
  std::vector<std::size_t> order(train_set.size());
  bool have_best = false;

  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    RngStream shuffle_rng = root.split(kShuffleStream).split(epoch);
    shuffle_rng.shuffle(std::span<std::size_t>(order));

    double loss_sum = 0.0, rank_sum = 0.0, reg_sum = 0.0, correct = 0.0, lr = 0.0;
    std::size_t used = 0, skipped = 0;
    for (std::size_t b = 0; b < steps; ++b) {
      lr = lr_at(epoch, b, steps, hyper, cfg.model.d, cfg.model.layers);
      const RngStream batch_rng = root.split(kBatchStream).split(epoch * steps + b);
      std::vector<Tensor> grads = model.params.zero_grads();
      std::size_t batch_count = 0;
      const std::size_t end = std::min(train_set.size(), (b + 1) * hyper.batch_size);
      for (std::size_t pos = b * hyper.batch_size; pos < end; ++pos) {
        const std::size_t idx = order[pos];
        const PreparedSample prep = prepare_sample(train_set[idx], cfg.model, eval_opts.prepare);
        if (prep.task == Task::grounding && !prep.gt.usable()) {
          ++skipped;
          continue;
        }
        RngStream sample_rng = batch_rng.split(idx);
        Tape tape;
        const ForwardResult out = forward(tape, model, prep, true, sample_rng);
        const LossTerms loss = sample_loss(out, prep, hyper.answer_loss, hyper.lambda);
        const double value = loss.total.value().item();
        if (!std::isfinite(value)) {
          throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
                               " (batch seed " + std::to_string(batch_rng.seed()) + ", sample " +
                               std::to_string(idx) + ")");
        }
        tape.backward(loss.total);
        tape.accumulate_parameter_grads(grads);
        loss_sum += value;
        rank_sum += loss.rank;
        reg_sum += loss.regression;
        if (prep.task == Task::vqa) {
          correct += vqa_accuracy(predict_answer(out), prep.answer_counts);
        } else {
          const GroundingGuess g = predict_box(out, prep);
          correct += iou(eval_opts.refine_boxes ? g.refined_box : g.proposal_box, prep.gt_box) > 0.5 ? 1.0 : 0.0;
        }
        ++batch_count;
      }
      if (batch_count == 0) continue;
      used += batch_count;
      const double inv = 1.0 / static_cast<double>(batch_count);
      for (Tensor& g : grads) g *= inv;
      try {
        adam_step(model.params, grads, adam, lr);
      } catch (const DivergenceError& e) {
        throw DivergenceError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(b) + " (batch seed " + std::to_string(batch_rng.seed()) + ")");
      }
    }

    const double denom = used ? static_cast<double>(used) : 1.0;
    json train_rec = {{"epoch", epoch},         {"split", "train"}, {"loss", loss_sum / denom},
                      {"accuracy", correct / denom}, {"lr", lr},    {"samples", used},
                      {"skipped", skipped}};
    if (cfg.model.task == Task::grounding) {
      train_rec["rank_loss"] = rank_sum / denom;
      train_rec["reg_loss"] = reg_sum / denom;
    }
    metrics << train_rec.dump() << '\n';

    const EvalMetrics val = evaluate(model, val_set, eval_opts);
    json val_rec = json::parse(val.to_json());
    val_rec["epoch"] = epoch;
    val_rec["split"] = "val";
    metrics << val_rec.dump() << '\n';
    metrics.flush();
    result.last = val;

    if (!have_best || val.accuracy > result.best.accuracy) {
      have_best = true;
      result.best = val;
      result.best_epoch = epoch;
      save_model(result.checkpoint, model, hyper, cfg.data, vocab, epoch);
    }
    if (options.log) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      *options.log << "epoch " << epoch << "  train_loss " << loss_sum / denom << "  train_acc " << correct / denom
                   << "  val_acc " << val.accuracy << "  lr " << lr << "  " << secs << "s" << std::endl;
    }
  }

  json manifest = {
      {"config", json::parse(run_config_json(cfg))},
      {"ablation", to_string(options.ablation)},
      {"datasets",
       {{"train", file_checksum(cfg.data.train)},
        {"val", file_checksum(cfg.data.val)}}},
      {"version", version_string()},
      {"best_epoch", result.best_epoch},
      {"best", json::parse(result.best.to_json())},
      {"final", json::parse(result.last.to_json())}};
  write_file_atomic(cfg.out_dir / "manifest.json", manifest.dump(2) + "\n");
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

// ---- Attention export ------------------------------------------------------------

void export_attention(const LoadedModel& loaded, const ToySample& sample, const std::filesystem::path& out_dir) {
  const MuanModel& model = loaded.model;
  const PreparedSample prep = prepare_sample(sample, model.config, eval_options_for(loaded.hyper).prepare);
  Tape tape;
  RngStream unused(0);
  const ForwardResult out = forward(tape, model, prep, false, unused);
  AttentionExportInfo info;
  info.m = out.input.m;
  info.n = out.input.n;
  for (std::size_t id : prep.text_ids) info.tokens.push_back(loaded.vocab.word(id));
  for (std::size_t i = 0; i < info.n; ++i) {
    if (!prep.visual.valid[i]) {
      info.object_ids.push_back(-1);
    } else if (prep.task == Task::vqa) {
      info.object_ids.push_back(static_cast<long long>(i));
    } else {
      info.object_ids.push_back(static_cast<long long>(sample.scene.proposals[i].object));
    }
  }
  export_attention_maps(out_dir, out.stack.states, info);
}

}  // namespace muan
