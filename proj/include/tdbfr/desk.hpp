#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "tdbfr/degrade.hpp"
#include "tdbfr/filters.hpp"
#include "tdbfr/patch_denoiser.hpp"
#include "tdbfr/pipeline.hpp"
#include "tdbfr/schedule.hpp"

namespace tdbfr {

/// Desk-scale ladder 16 -> 32 -> 32 -> 64 with T = 200 at every resolution.
///
/// Each resolution has its own linear schedule, standing in for separately
/// trained models: 16 px uses the 1e-4..0.02 endpoints as given, the finer
/// ones destroy signal more slowly so a given SNR is reached at a later step.
/// Windows follow the 50/100/100 (of 1000) lengths for LRS and the two ADR
/// passes; every t_begin after the first is the SNR-matched step of the
/// previous stage's t_end on toy data (the plans computed on degraded and on
/// clean inputs land within one step either side).
inline PipelineConfig desk_pipeline_config() {
  PipelineConfig cfg;
  cfg.schedules[16] = {ScheduleKind::linear, 200, 1e-4, 0.02};
  cfg.schedules[32] = {ScheduleKind::linear, 200, 4.6e-6, 9.2e-4};
  cfg.schedules[64] = {ScheduleKind::linear, 200, 3.3e-6, 6.6e-4};

  StageConfig lrs;
  lrs.kind = StageKind::lrs;
  lrs.resolution = 16;
  lrs.window = {20, 10};
  lrs.filter = {2};
  lrs.denoiser_id = "lrs";

  StageConfig adr1;
  adr1.kind = StageKind::adr;
  adr1.resolution = 32;
  adr1.window = {50, 30};
  adr1.candidates = {{4}, {2}, {1}};
  adr1.threshold = 2e-3;
  adr1.denoiser_id = "adr";

  StageConfig adr2 = adr1;
  adr2.window = {30, 10};

  StageConfig gdb;
  gdb.kind = StageKind::gdb;
  gdb.resolution = 64;
  gdb.window = {12, 0};
  gdb.denoiser_id = "gdb";

  cfg.stages = {lrs, adr1, adr2, gdb};
  cfg.seed = 0;
  return cfg;
}

/// Fit settings per denoiser id; ids missing from the map use `fallback`.
struct ModelTrainingConfig {
  PatchFitConfig fallback;
  std::map<std::string, PatchFitConfig> per_model;

  PatchFitConfig for_model(const std::string& id, bool conditional) const {
    auto it = per_model.find(id);
    PatchFitConfig c = it == per_model.end() ? fallback : it->second;
    c.conditional = conditional;
    return c;
  }
};

/// Fit settings used for the desk ladder: 5x5 patches.
inline ModelTrainingConfig desk_training_config() {
  ModelTrainingConfig t;
  t.fallback.radius = 2;
  return t;
}

/// Training pairs for a stage at `resolution`: clean images area-resized to the
/// resolution; degraded images synthesized from the full-size clean image and
/// interpolated to the same resolution. Both in model range.
inline std::vector<TrainingPair> make_training_pairs(const std::vector<Image>& clean_display,
                                                     int resolution, bool with_degraded,
                                                     const DegradationConfig& degradation,
                                                     std::uint64_t seed,
                                                     FilterKernel kernel = FilterKernel::area_bilinear) {
  std::vector<TrainingPair> pairs;
  pairs.reserve(clean_display.size());
  for (std::size_t i = 0; i < clean_display.size(); ++i) {
    TrainingPair p;
    p.clean = to_model_range(resize(clean_display[i], resolution, resolution, kernel));
    if (with_degraded) {
      SeededRng rng(derive_seed(seed, i));
      const Image y = synthesize(clean_display[i], degradation, rng).y;
      p.degraded = to_model_range(resize(y, resolution, resolution, kernel));
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

/// Trains one patch denoiser per distinct denoiser id in the pipeline: GDB
/// models are conditional on degraded inputs, LRS/ADR models are not.
inline std::map<std::string, PatchDenoiserModel> train_pipeline_models(
    const std::vector<Image>& clean_display, const PipelineConfig& cfg,
    const DegradationConfig& degradation, const ModelTrainingConfig& fit, std::uint64_t seed) {
  cfg.validate();
  std::map<std::string, PatchDenoiserModel> models;
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    const StageConfig& s = cfg.stages[i];
    if (models.count(s.denoiser_id)) continue;
    const bool conditional = s.kind == StageKind::gdb;
    const auto pairs = make_training_pairs(clean_display, s.resolution, conditional, degradation,
                                           substream_seed(seed, 1000 + i), cfg.sampler.kernel);
    const VarianceSchedule sched = make_schedule(cfg.schedule_for(s.resolution));
    models.emplace(s.denoiser_id,
                   fit_patch_denoiser(pairs, sched, fit.for_model(s.denoiser_id, conditional),
                                      substream_seed(seed, i)));
  }
  return models;
}

inline DenoiserSet to_denoiser_set(const std::map<std::string, PatchDenoiserModel>& models) {
  DenoiserSet set;
  for (const auto& [id, m] : models) set[id] = std::make_shared<PatchDenoiserModel>(m);
  return set;
}

}  // namespace tdbfr
