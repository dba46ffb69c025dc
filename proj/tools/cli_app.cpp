#include <exception>
#include <optional>

#include "CLI11.hpp"
#include "commands.hpp"
#include "image_io.hpp"
#include "tdbfr/degrade.hpp"

namespace tdbfr::cli {

namespace {

RunConfig load_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  const std::string text = read_text_file(path);
  try {
    return parse_run_config(text);
  } catch (const ConfigError& e) {
    throw ConfigError(0, path + ": " + e.what());
  }
}

// --model id=path entries override [models] in the config.
void apply_models(RunConfig& cfg, const std::vector<std::string>& specs) {
  for (const auto& s : specs) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == s.size()) {
      throw ConfigError(0, "--model expects ID=PATH, got '" + s + "'");
    }
    cfg.models[s.substr(0, eq)] = s.substr(eq + 1);
  }
}

std::string checked_preset(const std::string& name) {
  try {
    degradation_preset(name);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(0, e.what());
  }
  return name;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Truncated multi-resolution diffusion restoration (desk scale)", "tdbfr"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "tdbfr 1.0");

  std::string config_path;
  std::optional<std::uint64_t> seed;
  int threads = -1;
  auto common = [&](CLI::App* sub, bool with_threads = true) {
    sub->add_option("--config", config_path, "Run configuration file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Seed (default: TDR_SEED, then the config)");
    if (with_threads) sub->add_option("--threads", threads, "Worker threads (0: all cores)");
  };

  DegradeOptions deg;
  std::optional<std::string> preset;
  auto* s_degrade = app.add_subcommand("degrade", "Synthesize degraded copies of a directory");
  s_degrade->add_option("--input", deg.input_dir, "Directory of clean images")->required();
  s_degrade->add_option("--output", deg.output_dir, "Output directory")->required();
  s_degrade->add_option("--preset", preset, "train-ffhq-style | celeba-test | desk | none");
  common(s_degrade);

  RestoreOptions rest;
  std::vector<std::string> model_specs;
  std::string ablate;
  auto* s_restore = app.add_subcommand("restore", "Restore an image or a directory of images");
  s_restore->add_option("--input", rest.input, "Degraded image or directory")->required();
  s_restore->add_option("--output", rest.output, "Output image or directory")->required();
  s_restore->add_option("--model", model_specs, "Denoiser model as ID=PATH (repeatable)");
  s_restore->add_option("--ablate", ablate, "Ablation to run")->check(CLI::IsMember({"no-swap"}));
  common(s_restore);

  SnrCurveOptions snr;
  std::optional<int> mc;
  auto* s_snr = app.add_subcommand("snr-curve", "SNR curves per resolution and a breakpoint plan");
  s_snr->add_option("--dataset", snr.dataset, "Directory of images")->required();
  s_snr->add_option("--output", snr.output_dir, "Output directory")->required();
  s_snr->add_option("--resolutions", snr.resolutions, "Extra resolutions to tabulate");
  s_snr->add_option("--mc", mc, "Monte-Carlo draws per image");
  common(s_snr, false);

  TrainOptions train;
  auto* s_train = app.add_subcommand("train", "Fit a patch denoiser for one pipeline stage");
  s_train->add_option("--pairs", train.pairs_dir, "Directory of <name>.png / <name>.deg.png")->required();
  s_train->add_option("--denoiser", train.denoiser_id, "Denoiser id used by a stage")->required();
  s_train->add_option("--out", train.model_out, "Model file to write")->required();
  common(s_train, false);

  EvalOptions ev;
  auto* s_eval = app.add_subcommand("eval", "PSNR / SSIM / MSE against references");
  s_eval->add_option("--restored", ev.restored_dir, "Directory of restored images")->required();
  s_eval->add_option("--reference", ev.reference_dir, "Directory of reference images")->required();
  s_eval->add_option("--output", ev.output_csv, "CSV file (default: stdout)");

  BenchOptions bench;
  auto* s_bench = app.add_subcommand("bench", "Truncated pipeline vs full-chain baseline");
  s_bench->add_option("--batch", bench.batch, "Toy images to time");
  s_bench->add_option("--model", model_specs, "Denoiser model as ID=PATH (repeatable)");
  common(s_bench, false);

  ToyOptions toy;
  auto* s_toy = app.add_subcommand("toy", "Write a toy dataset of Gaussian-process textures");
  s_toy->add_option("--output", toy.output_dir, "Output directory")->required();
  s_toy->add_option("--count", toy.count, "Number of images");
  s_toy->add_option("--size", toy.size, "Side length in pixels");
  s_toy->add_option("--correlation", toy.correlation_px, "Smoothing length in pixels");
  s_toy->add_flag("--pairs", toy.pairs, "Also write <name>.deg.png degraded partners");
  s_toy->add_option("--preset", preset, "Degradation preset for --pairs");
  common(s_toy, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    RunConfig cfg = load_config(config_path);
    apply_models(cfg, model_specs);
    if (threads >= 0) cfg.threads = threads;
    const std::uint64_t run_seed = resolve_seed(seed, cfg);

    if (s_degrade->parsed()) {
      deg.preset = checked_preset(preset.value_or(cfg.degradation));
      deg.seed = run_seed;
      deg.threads = cfg.threads;
      return cmd_degrade(deg, out, err);
    }
    if (s_restore->parsed()) {
      rest.config = cfg;
      rest.seed = run_seed;
      rest.no_swap = ablate == "no-swap";
      return cmd_restore(rest, out, err);
    }
    if (s_snr->parsed()) {
      snr.config = cfg;
      snr.seed = run_seed;
      snr.mc_samples = mc;
      return cmd_snr_curve(snr, out, err);
    }
    if (s_train->parsed()) {
      train.config = cfg;
      train.seed = run_seed;
      return cmd_train(train, out, err);
    }
    if (s_eval->parsed()) return cmd_eval(ev, out, err);
    if (s_bench->parsed()) {
      bench.config = cfg;
      bench.seed = run_seed;
      return cmd_bench(bench, out, err);
    }
    if (s_toy->parsed()) {
      toy.seed = run_seed;
      toy.preset = checked_preset(preset.value_or(cfg.degradation));
      return cmd_toy(toy, out, err);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace tdbfr::cli
