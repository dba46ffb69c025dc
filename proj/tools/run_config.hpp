#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>

#include "tdbfr/patch_denoiser.hpp"
#include "tdbfr/pipeline.hpp"

namespace tdbfr::cli {

/// Parse failure; `line` is 1-based, 0 when the problem is not tied to a line.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(int line, const std::string& msg)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg),
        line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

/// Everything a run needs besides the images themselves. Defaults reproduce
/// the desk ladder.
struct RunConfig {
  PipelineConfig pipeline;
  std::string degradation = "desk";  // preset name
  int threads = 0;                   // 0: hardware concurrency
  int curve_mc_samples = 16;         // snr-curve draws per image
  double guard_db = 3.0;             // breakpoint matching tolerance
  PatchFitConfig fit;
  std::map<std::string, std::string> models;  // denoiser id -> model file
  std::string input;
  std::string output;

  RunConfig();
  bool operator==(const RunConfig&) const = default;

  /// Checks the pipeline and the named preset; throws ConfigError.
  void validate() const;
};

/// Format: `[section]` or `[section key]` headers, `key = value` lines, `#`
/// comments. Sections: run, train, io, models, schedule <resolution>,
/// stage <index>. When any schedule or stage section is present, the listed
/// ones replace the defaults wholesale.
RunConfig parse_run_config(const std::string& text);

/// Inverse of parse_run_config: parse(serialize(c)) == c.
std::string serialize_run_config(const RunConfig& cfg);

/// Seed precedence: explicit CLI value, then TDR_SEED, then the config.
std::uint64_t resolve_seed(std::optional<std::uint64_t> cli_seed, const RunConfig& cfg);

}  // namespace tdbfr::cli
