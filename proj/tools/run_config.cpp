#include "run_config.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <set>
#include <sstream>
#include <vector>

#include "tdbfr/degrade.hpp"
#include "tdbfr/desk.hpp"

namespace tdbfr::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& v, int line, const std::string& key) {
  errno = 0;
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || errno == ERANGE) {
    throw ConfigError(line, "'" + key + "' expects a number, got '" + v + "'");
  }
  return d;
}

long long to_int(const std::string& v, int line, const std::string& key) {
  errno = 0;
  char* end = nullptr;
  const long long i = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0' || errno == ERANGE) {
    throw ConfigError(line, "'" + key + "' expects an integer, got '" + v + "'");
  }
  return i;
}

std::uint64_t to_u64(const std::string& v, int line, const std::string& key) {
  errno = 0;
  char* end = nullptr;
  if (v.empty() || v[0] == '-') throw ConfigError(line, "'" + key + "' expects an unsigned integer");
  const unsigned long long i = std::strtoull(v.c_str(), &end, 10);
  if (*end != '\0' || errno == ERANGE) {
    throw ConfigError(line, "'" + key + "' expects an unsigned integer, got '" + v + "'");
  }
  return i;
}

bool to_bool(const std::string& v, int line, const std::string& key) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ConfigError(line, "'" + key + "' expects true/false, got '" + v + "'");
}

// Wraps the enum parsers so their invalid_argument carries the line.
template <class F>
auto enum_value(F parse, const std::string& v, int line) {
  try {
    return parse(v);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(line, e.what());
  }
}

}  // namespace

RunConfig::RunConfig() : pipeline(desk_pipeline_config()), fit(desk_training_config().fallback) {}

void RunConfig::validate() const {
  try {
    pipeline.validate();
    degradation_preset(degradation);
    if (threads < 0) throw std::invalid_argument("threads must be >= 0");
    if (curve_mc_samples < 1) throw std::invalid_argument("curve_mc_samples must be >= 1");
    if (!(guard_db >= 0.0)) throw std::invalid_argument("guard_db must be >= 0");
    if (fit.radius < 0 || fit.buckets < 1 || fit.ridge_lambda < 0.0 ||
        fit.samples_per_bucket < 1 || fit.pixels_per_draw < 1) {
      throw std::invalid_argument("invalid [train] settings");
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(0, e.what());
  }
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::map<int, ScheduleParams> schedules;
  std::map<int, StageConfig> stages;
  std::map<int, int> stage_lines;

  std::string section;
  int section_arg = 0;
  std::set<std::string> seen;  // "section/arg/key" duplicates
  std::set<std::string> plain_sections;
  std::istringstream is(text);
  std::string raw;
  int line = 0;
  while (std::getline(is, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string s = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError(line, "unterminated section header");
      std::istringstream hs(s.substr(1, s.size() - 2));
      std::string name, arg, extra;
      hs >> name >> arg >> extra;
      if (!extra.empty()) throw ConfigError(line, "malformed section header '" + s + "'");
      if (name == "run" || name == "train" || name == "io" || name == "models") {
        if (!arg.empty()) throw ConfigError(line, "[" + name + "] takes no argument");
        if (!plain_sections.insert(name).second) throw ConfigError(line, "duplicate [" + name + "]");
        section_arg = 0;
      } else if (name == "schedule" || name == "stage") {
        if (arg.empty()) throw ConfigError(line, "[" + name + "] needs a number");
        section_arg = static_cast<int>(to_int(arg, line, name));
        if (name == "schedule") {
          if (schedules.count(section_arg)) throw ConfigError(line, "duplicate [schedule " + arg + "]");
          schedules[section_arg] = ScheduleParams{};
        } else {
          if (stages.count(section_arg)) throw ConfigError(line, "duplicate [stage " + arg + "]");
          stages[section_arg] = StageConfig{};
          stage_lines[section_arg] = line;
        }
      } else {
        throw ConfigError(line, "unknown section [" + name + "]");
      }
      section = name;
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(line, "expected 'key = value'");
    const std::string key = trim(s.substr(0, eq));
    const std::string val = trim(s.substr(eq + 1));
    if (key.empty()) throw ConfigError(line, "empty key");
    if (section.empty()) throw ConfigError(line, "key '" + key + "' outside any section");
    if (!seen.insert(section + "/" + std::to_string(section_arg) + "/" + key).second) {
      throw ConfigError(line, "duplicate key '" + key + "'");
    }
    auto unknown = [&]() {
      return ConfigError(line, "unknown key '" + key + "' in [" + section + "]");
    };

    if (section == "run") {
      PipelineConfig& p = cfg.pipeline;
      if (key == "seed") p.seed = to_u64(val, line, key);
      else if (key == "degradation") cfg.degradation = val;
      else if (key == "threads") cfg.threads = static_cast<int>(to_int(val, line, key));
      else if (key == "curve_mc_samples") cfg.curve_mc_samples = static_cast<int>(to_int(val, line, key));
      else if (key == "guard_db") cfg.guard_db = to_double(val, line, key);
      else if (key == "trace_mc_samples") p.snr_mc_samples = static_cast<int>(to_int(val, line, key));
      else if (key == "kernel") p.sampler.kernel = enum_value(filter_kernel_from_string, val, line);
      else if (key == "sigma_mode") p.sampler.sigma_mode = enum_value(sigma_mode_from_string, val, line);
      else if (key == "swap") p.sampler.swap = to_bool(val, line, key);
      else if (key == "gdb_condition") p.gdb_condition = enum_value(gdb_condition_from_string, val, line);
      else if (key == "handoff") p.handoff = enum_value(handoff_from_string, val, line);
      else throw unknown();
    } else if (section == "train") {
      PatchFitConfig& f = cfg.fit;
      if (key == "radius") f.radius = static_cast<int>(to_int(val, line, key));
      else if (key == "buckets") f.buckets = static_cast<int>(to_int(val, line, key));
      else if (key == "ridge_lambda") f.ridge_lambda = to_double(val, line, key);
      else if (key == "samples_per_bucket") f.samples_per_bucket = static_cast<int>(to_int(val, line, key));
      else if (key == "pixels_per_draw") f.pixels_per_draw = static_cast<int>(to_int(val, line, key));
      else throw unknown();
    } else if (section == "io") {
      if (key == "input") cfg.input = val;
      else if (key == "output") cfg.output = val;
      else throw unknown();
    } else if (section == "models") {
      cfg.models[key] = val;
    } else if (section == "schedule") {
      ScheduleParams& sp = schedules[section_arg];
      if (key == "kind") sp.kind = enum_value(schedule_kind_from_string, val, line);
      else if (key == "steps") sp.steps = static_cast<int>(to_int(val, line, key));
      else if (key == "beta_start") sp.beta_start = to_double(val, line, key);
      else if (key == "beta_end") sp.beta_end = to_double(val, line, key);
      else throw unknown();
    } else if (section == "stage") {
      StageConfig& st = stages[section_arg];
      if (key == "kind") st.kind = enum_value(stage_kind_from_string, val, line);
      else if (key == "resolution") st.resolution = static_cast<int>(to_int(val, line, key));
      else if (key == "t_begin") st.window.t_begin = static_cast<int>(to_int(val, line, key));
      else if (key == "t_end") st.window.t_end = static_cast<int>(to_int(val, line, key));
      else if (key == "filter") st.filter = {static_cast<int>(to_int(val, line, key))};
      else if (key == "threshold") st.threshold = to_double(val, line, key);
      else if (key == "denoiser") st.denoiser_id = val;
      else if (key == "candidates") {
        st.candidates.clear();
        std::istringstream cs(val);
        std::string tok;
        while (cs >> tok) st.candidates.push_back({static_cast<int>(to_int(tok, line, key))});
      } else {
        throw unknown();
      }
    }
  }

  if (!schedules.empty()) {
    for (auto& [res, sp] : schedules) {
      try {
        make_schedule(sp);
      } catch (const std::exception& e) {
        throw ConfigError(0, "[schedule " + std::to_string(res) + "]: " + e.what());
      }
    }
    cfg.pipeline.schedules = std::move(schedules);
  }
  if (!stages.empty()) {
    cfg.pipeline.stages.clear();
    int expect = 0;
    for (auto& [idx, st] : stages) {
      if (idx != expect++) {
        throw ConfigError(stage_lines[idx], "stage indices must run 0, 1, 2, ... without gaps");
      }
      cfg.pipeline.stages.push_back(std::move(st));
    }
  }
  cfg.validate();
  return cfg;
}

std::string serialize_run_config(const RunConfig& cfg) {
  const PipelineConfig& p = cfg.pipeline;
  std::ostringstream os;
  os << "[run]\n"
     << "seed = " << p.seed << '\n'
     << "degradation = " << cfg.degradation << '\n'
     << "threads = " << cfg.threads << '\n'
     << "curve_mc_samples = " << cfg.curve_mc_samples << '\n'
     << "guard_db = " << fmt_double(cfg.guard_db) << '\n'
     << "trace_mc_samples = " << p.snr_mc_samples << '\n'
     << "kernel = " << to_string(p.sampler.kernel) << '\n'
     << "sigma_mode = " << to_string(p.sampler.sigma_mode) << '\n'
     << "swap = " << (p.sampler.swap ? "true" : "false") << '\n'
     << "gdb_condition = " << to_string(p.gdb_condition) << '\n'
     << "handoff = " << to_string(p.handoff) << '\n';
  os << "\n[train]\n"
     << "radius = " << cfg.fit.radius << '\n'
     << "buckets = " << cfg.fit.buckets << '\n'
     << "ridge_lambda = " << fmt_double(cfg.fit.ridge_lambda) << '\n'
     << "samples_per_bucket = " << cfg.fit.samples_per_bucket << '\n'
     << "pixels_per_draw = " << cfg.fit.pixels_per_draw << '\n';
  if (!cfg.input.empty() || !cfg.output.empty()) {
    os << "\n[io]\n";
    if (!cfg.input.empty()) os << "input = " << cfg.input << '\n';
    if (!cfg.output.empty()) os << "output = " << cfg.output << '\n';
  }
  if (!cfg.models.empty()) {
    os << "\n[models]\n";
    for (const auto& [id, path] : cfg.models) os << id << " = " << path << '\n';
  }
  for (const auto& [res, sp] : p.schedules) {
    os << "\n[schedule " << res << "]\n"
       << "kind = " << to_string(sp.kind) << '\n'
       << "steps = " << sp.steps << '\n'
       << "beta_start = " << fmt_double(sp.beta_start) << '\n'
       << "beta_end = " << fmt_double(sp.beta_end) << '\n';
  }
  for (std::size_t i = 0; i < p.stages.size(); ++i) {
    const StageConfig& s = p.stages[i];
    os << "\n[stage " << i << "]\n"
       << "kind = " << to_string(s.kind) << '\n'
       << "resolution = " << s.resolution << '\n'
       << "t_begin = " << s.window.t_begin << '\n'
       << "t_end = " << s.window.t_end << '\n'
       << "filter = " << s.filter.n << '\n'
       << "threshold = " << fmt_double(s.threshold) << '\n';
    if (!s.candidates.empty()) {
      os << "candidates =";
      for (const auto& c : s.candidates) os << ' ' << c.n;
      os << '\n';
    }
    os << "denoiser = " << s.denoiser_id << '\n';
  }
  return os.str();
}

std::uint64_t resolve_seed(std::optional<std::uint64_t> cli_seed, const RunConfig& cfg) {
  if (cli_seed) return *cli_seed;
  if (const char* env = std::getenv("TDR_SEED"); env && *env) {
    try {
      return to_u64(env, 0, "TDR_SEED");
    } catch (const ConfigError&) {
      throw ConfigError(0, std::string("TDR_SEED must be an unsigned integer, got '") + env + "'");
    }
  }
  return cfg.pipeline.seed;
}

}  // namespace tdbfr::cli
