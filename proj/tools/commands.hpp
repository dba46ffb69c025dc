#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "run_config.hpp"
#include "tdbfr/degrade.hpp"
#include "tdbfr/image.hpp"
#include "tdbfr/pipeline.hpp"

namespace tdbfr::cli {

/// Process exit codes shared by every subcommand.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,      // usage or configuration error
  kExitData = 2,       // unreadable / malformed data, failed items
  kExitExhausted = 3,  // finished, but some ADR stage ran out of candidates
};

struct DegradeOptions {
  std::filesystem::path input_dir;
  std::filesystem::path output_dir;
  std::string preset = "desk";
  std::uint64_t seed = 0;
  int threads = 0;
};

/// Degrades every image in input_dir with seed derive_seed(seed, index) and
/// writes the results plus manifest.csv to output_dir.
int cmd_degrade(const DegradeOptions& opt, std::ostream& out, std::ostream& err);

/// One row of manifest.csv for a synthesized image.
std::string manifest_row(const std::string& filename, std::uint64_t seed,
                         const DegradationRecord& record);
inline constexpr const char* kManifestHeader = "filename,seed,blur_kind,kernel,sigma,quality,r";

struct RestoreOptions {
  std::filesystem::path input;   // image file or directory
  std::filesystem::path output;  // image file or directory
  RunConfig config;
  std::uint64_t seed = 0;
  bool no_swap = false;
};

int cmd_restore(const RestoreOptions& opt, std::ostream& out, std::ostream& err);

/// Loads the model file registered for every denoiser id in the pipeline and
/// checks it against the stage's schedule. Throws std::runtime_error.
DenoiserSet load_models(const RunConfig& cfg);

struct SnrCurveOptions {
  std::filesystem::path dataset;
  std::filesystem::path output_dir;
  RunConfig config;
  std::vector<int> resolutions;  // empty: the pipeline's resolutions
  std::optional<int> mc_samples;
  std::uint64_t seed = 0;
};

/// Writes snr_<resolution>.csv per resolution and plan.txt.
int cmd_snr_curve(const SnrCurveOptions& opt, std::ostream& out, std::ostream& err);

struct TrainOptions {
  std::filesystem::path pairs_dir;
  std::filesystem::path model_out;
  RunConfig config;
  std::string denoiser_id;
  std::uint64_t seed = 0;
};

int cmd_train(const TrainOptions& opt, std::ostream& out, std::ostream& err);

struct EvalOptions {
  std::filesystem::path restored_dir;
  std::filesystem::path reference_dir;
  std::filesystem::path output_csv;  // empty: stdout
};

int cmd_eval(const EvalOptions& opt, std::ostream& out, std::ostream& err);

struct BenchOptions {
  RunConfig config;
  std::uint64_t seed = 0;
  int batch = 4;
};

struct BenchReport {
  StepBudget budget;
  int batch = 0;
  double truncated_seconds = 0.0;
  double baseline_seconds = 0.0;
  int trace_evaluations = 0;  // summed over the batch
  double measured_ratio = 0.0;
  double truncated_psnr_db = 0.0;
  double baseline_psnr_db = 0.0;
  double degraded_psnr_db = 0.0;
};

/// Times restore() against baseline_restore() on toy images. Uses the models
/// from the config when every id has a file, otherwise fits toy models.
BenchReport run_bench(const BenchOptions& opt);
std::string bench_report_text(const BenchReport& r);
int cmd_bench(const BenchOptions& opt, std::ostream& out, std::ostream& err);

struct ToyOptions {
  std::filesystem::path output_dir;
  int count = 16;
  int size = 64;
  double correlation_px = 10.0;
  std::uint64_t seed = 0;
  bool pairs = false;           // also write <name>.deg.png
  std::string preset = "desk";  // for pairs
};

/// Writes toy_NNNN.png Gaussian-process textures.
int cmd_toy(const ToyOptions& opt, std::ostream& out, std::ostream& err);

/// Full command line entry point (argv[0] is the program name).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tdbfr::cli
