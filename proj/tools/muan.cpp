// Command-line driver: gen-data, train, eval, export-attn.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "muan/toy_data.hpp"
#include "muan/train.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

int run_gen_data(const std::string& task_name, std::size_t count, const std::string& out, std::uint64_t seed) {
  const muan::Task task = muan::parse_task(task_name);
  const muan::Vocabulary vocab = muan::Vocabulary::toy();
  const std::vector<muan::ToySample> samples = muan::generate_dataset(task, count, seed, muan::ToyConfig{}, vocab);
  const std::filesystem::path path(out);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  muan::write_dataset(path, samples);
  vocab.save(path.string() + ".vocab");
  std::cout << "wrote " << samples.size() << " " << task_name << " samples to " << path.string() << "\n";
  return kExitOk;
}

int run_train(const std::string& config_path, const std::string& ablate, std::optional<std::uint64_t> seed) {
  const muan::RunConfig config = muan::load_run_config(config_path);
  muan::TrainOptions options;
  options.ablation = muan::parse_ablation(ablate);
  options.seed = seed;
  options.log = &std::cerr;
  const muan::TrainResult r = muan::train(config, options);
  std::cout << "best epoch " << r.best_epoch << " " << r.best.to_json() << "\n"
            << "checkpoint " << r.checkpoint.string() << "\n";
  return kExitOk;
}

int run_eval(const std::string& ckpt, const std::string& data, const std::string& ablate) {
  muan::LoadedModel loaded = muan::load_model(ckpt);
  muan::apply_ablation(loaded.model.config, muan::parse_ablation(ablate));
  const std::vector<muan::ToySample> samples = muan::read_dataset(data);
  const muan::EvalMetrics m = muan::evaluate(loaded.model, samples, muan::eval_options_for(loaded.hyper));
  std::cout << m.to_json(2) << "\n";
  return kExitOk;
}

int run_export(const std::string& ckpt, std::size_t index, const std::string& out, std::string data) {
  const muan::LoadedModel loaded = muan::load_model(ckpt);
  if (data.empty()) data = loaded.data.val.string();
  if (data.empty()) throw muan::ConfigError("no dataset given and the checkpoint records none");
  const std::vector<muan::ToySample> samples = muan::read_dataset(data);
  if (index >= samples.size()) {
    throw muan::ConfigError("sample index " + std::to_string(index) + " outside dataset of " +
                            std::to_string(samples.size()));
  }
  muan::export_attention(loaded, samples[index], out);
  std::cout << "exported " << loaded.model.config.layers << " blocks to " << out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unified attention networks on synthetic VQA and grounding tasks"};
  app.require_subcommand(1);

  std::string task, out, config, ablate = "none", ckpt, data;
  std::size_t count = 0, sample = 0;
  std::uint64_t seed = 0;

  CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset (JSON lines) and its vocabulary");
  gen->add_option("--task", task, "vqa or grounding")->required();
  gen->add_option("--n", count, "Number of samples")->required();
  gen->add_option("--out", out, "Output dataset path")->required();
  gen->add_option("--seed", seed, "Generator seed");

  CLI::App* tr = app.add_subcommand("train", "Train a model from a JSON config");
  tr->add_option("--config", config, "Config path")->required();
  tr->add_option("--ablate", ablate, "no-gate, no-self or no-co");
  CLI::Option* seed_opt = tr->add_option("--seed", seed, "Override train.seed");

  CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  ev->add_option("--ckpt", ckpt, "Checkpoint path")->required();
  ev->add_option("--data", data, "Dataset path")->required();
  ev->add_option("--ablate", ablate, "Evaluate with no-gate, no-self or no-co applied");

  CLI::App* ex = app.add_subcommand("export-attn", "Export per-block attention maps for one sample");
  ex->add_option("--ckpt", ckpt, "Checkpoint path")->required();
  ex->add_option("--sample", sample, "Sample index")->required();
  ex->add_option("--out", out, "Output directory")->required();
  ex->add_option("--data", data, "Dataset path (default: the validation set recorded in the checkpoint)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen) return run_gen_data(task, count, out, seed);
    if (*tr) {
      return run_train(config, ablate, *seed_opt ? std::optional<std::uint64_t>(seed) : std::nullopt);
    }
    if (*ev) return run_eval(ckpt, data, ablate);
    if (*ex) return run_export(ckpt, sample, out, data);
  } catch (const muan::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const muan::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOther;
  }
  return kExitOther;
}
