#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "batch.hpp"
#include "image_io.hpp"
#include "tdbfr/degrade.hpp"
#include "tdbfr/desk.hpp"
#include "tdbfr/metrics.hpp"
#include "tdbfr/patch_denoiser.hpp"
#include "tdbfr/toy_data.hpp"

namespace tdbfr::cli {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_short(double v, int digits = 4) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

int report_failures(const std::vector<std::string>& errors, const std::vector<fs::path>& items,
                    std::ostream& err) {
  int failed = 0;
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (errors[i].empty()) continue;
    ++failed;
    err << "error: " << items[i].filename().string() << ": " << errors[i] << '\n';
  }
  if (failed) err << failed << " of " << items.size() << " item(s) failed\n";
  return failed;
}

const StageConfig* find_stage(const PipelineConfig& cfg, const std::string& id) {
  for (const auto& s : cfg.stages)
    if (s.denoiser_id == id) return &s;
  return nullptr;
}

double chosen_l_adr(const StageTrace& st) {
  for (const auto& a : st.attempts)
    if (a.n == st.chosen_n) return a.l_adr;
  return std::nan("");
}

}  // namespace

// ---------------------------------------------------------------- degrade

std::string manifest_row(const std::string& filename, std::uint64_t seed,
                         const DegradationRecord& record) {
  std::string kinds, kernels;
  double sigma = 0.0;
  int quality = 0, r = 1;
  for (const auto& s : record.steps) {
    switch (s.op) {
      case DegradationStep::Op::blur:
      case DegradationStep::Op::motion_blur:
        if (!kinds.empty()) {
          kinds += '+';
          kernels += '+';
        }
        kinds += to_string(s.blur_kind);
        kernels += std::to_string(s.kernel);
        break;
      case DegradationStep::Op::downsample: r = s.factor; break;
      case DegradationStep::Op::gaussian_noise: sigma = s.param; break;
      case DegradationStep::Op::poisson_noise: break;
      case DegradationStep::Op::jpeg: quality = s.factor; break;
    }
  }
  if (kinds.empty()) {
    kinds = "none";
    kernels = "0";
  }
  return filename + "," + std::to_string(seed) + "," + kinds + "," + kernels + "," + fmt(sigma) +
         "," + std::to_string(quality) + "," + std::to_string(r);
}

int cmd_degrade(const DegradeOptions& opt, std::ostream& out, std::ostream& err) {
  const DegradationConfig preset = degradation_preset(opt.preset);
  const std::vector<fs::path> files = list_images(opt.input_dir);
  fs::create_directories(opt.output_dir);
  if (files.empty()) err << "warning: no images in " << opt.input_dir.string() << '\n';

  std::vector<std::string> rows(files.size());
  const auto errors = run_batch(files.size(), opt.threads, [&](std::size_t i) {
    const std::uint64_t seed = derive_seed(opt.seed, i);
    SeededRng rng(seed);
    const Image x = read_image(files[i]);
    const Degraded d = synthesize(x, preset, rng);
    write_image(opt.output_dir / files[i].filename(), d.y);
    rows[i] = manifest_row(files[i].filename().string(), seed, d.record);
  });

  std::string manifest = std::string(kManifestHeader) + "\n";
  std::size_t written = 0;
  for (std::size_t i = 0; i < files.size(); ++i) {
    if (!errors[i].empty()) continue;
    manifest += rows[i] + "\n";
    ++written;
  }
  write_file_atomic(opt.output_dir / "manifest.csv", manifest);
  out << "degraded " << written << " image(s) into " << opt.output_dir.string() << '\n';
  return report_failures(errors, files, err) ? kExitData : kExitOk;
}

// ---------------------------------------------------------------- restore

DenoiserSet load_models(const RunConfig& cfg) {
  DenoiserSet set;
  for (const auto& stage : cfg.pipeline.stages) {
    const std::string& id = stage.denoiser_id;
    if (set.count(id)) continue;
    auto it = cfg.models.find(id);
    if (it == cfg.models.end()) {
      throw ConfigError(0, "no model file for denoiser '" + id + "' (pass --model " + id +
                               "=PATH or list it under [models])");
    }
    std::ifstream is(it->second);
    if (!is) throw std::runtime_error("model '" + id + "': cannot open " + it->second);
    PatchDenoiserModel model = [&] {
      try {
        return PatchDenoiserModel::load(is);
      } catch (const std::exception& e) {
        throw std::runtime_error("model '" + id + "' (" + it->second + "): " + e.what());
      }
    }();
    const VarianceSchedule sched = make_schedule(cfg.pipeline.schedule_for(stage.resolution));
    if (model.steps() != sched.steps() || model.schedule_hash() != schedule_hash(sched)) {
      throw std::runtime_error("model '" + id + "' (" + it->second + ") was fitted for schedule " +
                               model.schedule_hash() + " but the " +
                               std::to_string(stage.resolution) + " px stage uses " +
                               schedule_hash(sched) + "; retrain it with this config");
    }
    set[id] = std::make_shared<PatchDenoiserModel>(std::move(model));
  }
  return set;
}

int cmd_restore(const RestoreOptions& opt, std::ostream& out, std::ostream& err) {
  RunConfig cfg = opt.config;
  if (opt.no_swap) cfg.pipeline.sampler.swap = false;
  cfg.validate();
  const DenoiserSet models = load_models(cfg);

  std::vector<fs::path> inputs, outputs;
  std::error_code ec;
  const bool batch = fs::is_directory(opt.input, ec);
  if (batch) {
    inputs = list_images(opt.input);
    fs::create_directories(opt.output);
    for (const auto& p : inputs) outputs.push_back(opt.output / p.filename());
    if (inputs.empty()) err << "warning: no images in " << opt.input.string() << '\n';
  } else {
    if (!fs::exists(opt.input, ec)) throw IoError(opt.input.string() + ": no such file");
    inputs.push_back(opt.input);
    outputs.push_back(fs::is_directory(opt.output, ec) ? opt.output / opt.input.filename()
                                                        : opt.output);
  }

  std::vector<RestorationTrace> traces(inputs.size());
  const auto errors = run_batch(inputs.size(), cfg.threads, [&](std::size_t i) {
    const std::uint64_t seed = batch ? derive_seed(opt.seed, i) : opt.seed;
    const Image y = read_image(inputs[i]);
    RestoreResult r = restore(y, models, cfg.pipeline, seed);
    write_image(outputs[i], r.restored);
    fs::path trace_path = outputs[i];
    trace_path += ".trace.txt";
    write_file_atomic(trace_path, r.trace.to_text());
    traces[i] = std::move(r.trace);
  });

  bool exhausted = false;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!errors[i].empty()) continue;
    const RestorationTrace& tr = traces[i];
    exhausted = exhausted || tr.any_exhausted();
    out << inputs[i].filename().string() << " -> " << outputs[i].string()
        << "  (evaluations " << tr.total_evaluations << ")\n";
    out << "  stage  kind  res    N  L_adr         steps  evals\n";
    for (std::size_t s = 0; s < tr.stages.size(); ++s) {
      const StageTrace& st = tr.stages[s];
      char line[160];
      const std::string l = st.kind == StageKind::adr ? fmt_short(chosen_l_adr(st), 8) : "-";
      std::snprintf(line, sizeof line, "  %-5zu  %-4s  %-5d  %-2s %-12s  %-5d  %-5d%s\n", s,
                    to_string(st.kind), st.resolution,
                    st.chosen_n ? std::to_string(st.chosen_n).c_str() : "-", l.c_str(), st.steps,
                    st.evaluations, st.exhausted ? "  EXHAUSTED" : "");
      out << line;
    }
  }
  if (report_failures(errors, inputs, err)) return kExitData;
  if (exhausted) {
    err << "warning: at least one ADR stage exhausted its candidates (best effort returned)\n";
    return kExitExhausted;
  }
  return kExitOk;
}

// ---------------------------------------------------------------- snr-curve

int cmd_snr_curve(const SnrCurveOptions& opt, std::ostream& out, std::ostream& err) {
  const RunConfig& cfg = opt.config;
  cfg.validate();
  const auto files = list_images(opt.dataset);
  if (files.empty()) {
    err << "error: dataset " << opt.dataset.string() << " is empty\n";
    return kExitData;
  }
  std::vector<Image> images;
  for (const auto& f : files) images.push_back(to_model_range(read_image(f)));

  std::set<int> resolutions(opt.resolutions.begin(), opt.resolutions.end());
  for (const auto& s : cfg.pipeline.stages) resolutions.insert(s.resolution);
  const int mc = opt.mc_samples.value_or(cfg.curve_mc_samples);
  if (mc < 1) throw ConfigError(0, "--mc must be >= 1");

  fs::create_directories(opt.output_dir);
  std::map<int, SnrCurve> curves;
  for (int res : resolutions) {
    std::vector<Image> ds;
    for (const auto& img : images) ds.push_back(resize(img, res, res, cfg.pipeline.sampler.kernel));
    const VarianceSchedule sched = make_schedule(cfg.pipeline.schedule_for(res));
    SnrCurve c = expected_snr_curve(ds, sched, mc, opt.seed);
    c.resolution = res;
    std::string csv = "t,snr_db,stderr_db\n";
    for (int t = 1; t <= c.steps(); ++t) {
      csv += std::to_string(t) + "," + fmt(c.at(t)) + "," +
             fmt(c.stderr_db[static_cast<std::size_t>(t - 1)]) + "\n";
    }
    const fs::path path = opt.output_dir / ("snr_" + std::to_string(res) + ".csv");
    write_file_atomic(path, csv);
    out << "wrote " << path.string() << '\n';
    curves.emplace(res, std::move(c));
  }

  const auto& stages = cfg.pipeline.stages;
  std::vector<SnrCurve> per_stage;
  std::vector<int> lengths;
  for (const auto& s : stages) {
    per_stage.push_back(curves.at(s.resolution));
    lengths.push_back(s.window.length());
  }
  BreakpointPlan plan;
  try {
    plan = plan_breakpoints(per_stage, stages.front().window, lengths,
                            stages.back().window.t_end == 0, cfg.guard_db);
  } catch (const std::exception& e) {
    err << "error: breakpoint plan: " << e.what() << '\n';
    return kExitData;
  }
  const fs::path plan_path = opt.output_dir / "plan.txt";
  write_file_atomic(plan_path, plan_to_text(plan));
  out << "wrote " << plan_path.string() << '\n';
  out << "stage  res   planned          configured       stitch_gap_db\n";
  for (std::size_t i = 0; i < plan.size(); ++i) {
    double gap = 0.0;
    if (i > 0) gap = std::abs(per_stage[i - 1].at(plan[i - 1].t_end) - plan[i].matched_snr_db);
    char line[160];
    std::snprintf(line, sizeof line, "%-5zu  %-4d  [%4d, %4d]     [%4d, %4d]     %s\n", i,
                  plan[i].resolution, plan[i].t_begin, plan[i].t_end, stages[i].window.t_begin,
                  stages[i].window.t_end, i ? fmt_short(gap, 3).c_str() : "-");
    out << line;
  }
  return kExitOk;
}

// ---------------------------------------------------------------- train

int cmd_train(const TrainOptions& opt, std::ostream& out, std::ostream& err) {
  const RunConfig& cfg = opt.config;
  cfg.validate();
  const StageConfig* stage = find_stage(cfg.pipeline, opt.denoiser_id);
  if (!stage) throw ConfigError(0, "no stage uses denoiser '" + opt.denoiser_id + "'");
  const bool conditional = stage->kind == StageKind::gdb;

  // <name>.<ext> is clean, <name>.deg.<ext> its degraded partner.
  std::map<std::string, fs::path> clean, degraded;
  for (const auto& p : list_images(opt.pairs_dir)) {
    const std::string stem = p.stem().string();
    if (stem.size() > 4 && stem.compare(stem.size() - 4, 4, ".deg") == 0) {
      degraded[stem.substr(0, stem.size() - 4)] = p;
    } else {
      clean[stem] = p;
    }
  }
  std::vector<TrainingPair> pairs;
  const FilterKernel kernel = cfg.pipeline.sampler.kernel;
  const int res = stage->resolution;
  int skipped = 0;
  for (const auto& [name, path] : clean) {
    auto d = degraded.find(name);
    if (conditional && d == degraded.end()) {
      err << "warning: " << path.filename().string() << " has no " << name
          << ".deg partner, skipped\n";
      ++skipped;
      continue;
    }
    TrainingPair pair;
    pair.clean = to_model_range(resize(read_image(path), res, res, kernel));
    if (conditional) pair.degraded = to_model_range(resize(read_image(d->second), res, res, kernel));
    pairs.push_back(std::move(pair));
  }
  for (const auto& [name, path] : degraded) {
    if (!clean.count(name)) {
      err << "warning: " << path.filename().string() << " has no clean partner, skipped\n";
      ++skipped;
    }
  }
  if (pairs.empty()) {
    err << "error: no usable training pairs in " << opt.pairs_dir.string() << '\n';
    return kExitData;
  }

  PatchFitConfig fit = cfg.fit;
  fit.conditional = conditional;
  const VarianceSchedule sched = make_schedule(cfg.pipeline.schedule_for(res));
  const PatchDenoiserModel model = fit_patch_denoiser(pairs, sched, fit, opt.seed);
  std::ostringstream os;
  model.save(os);
  write_file_atomic(opt.model_out, os.str());

  out << "model '" << opt.denoiser_id << "' (" << res << " px, "
      << (conditional ? "conditional" : "unconditional") << ", " << pairs.size()
      << " image(s)) -> " << opt.model_out.string() << '\n';
  out << "bucket,t_lo,t_hi,loss,baseline\n";
  const auto& edges = model.edges();
  for (int b = 0; b < model.buckets(); ++b) {
    const auto& l = model.losses()[static_cast<std::size_t>(b)];
    out << b << ',' << edges[static_cast<std::size_t>(b)] << ','
        << edges[static_cast<std::size_t>(b) + 1] - 1 << ',' << fmt_short(l.loss, 6) << ','
        << fmt_short(l.baseline, 6) << '\n';
  }
  if (skipped) err << skipped << " unpaired file(s) skipped\n";
  return kExitOk;
}

// ---------------------------------------------------------------- eval

int cmd_eval(const EvalOptions& opt, std::ostream& out, std::ostream& err) {
  const auto restored = list_images(opt.restored_dir);
  if (restored.empty()) err << "warning: no images in " << opt.restored_dir.string() << '\n';
  MetricReport report;
  std::string csv = "filename,psnr_db,ssim,mse\n";
  std::vector<std::string> errors(restored.size());
  for (std::size_t i = 0; i < restored.size(); ++i) {
    try {
      const fs::path ref_path = opt.reference_dir / restored[i].filename();
      std::error_code ec;
      if (!fs::exists(ref_path, ec)) throw IoError("no reference " + ref_path.string());
      const Image ref = read_image(ref_path);
      Image img = read_image(restored[i]);
      if (img.channels() != ref.channels()) throw IoError("channel count differs from reference");
      if (img.width() != ref.width() || img.height() != ref.height()) {
        img = resize(img, ref.width(), ref.height());
      }
      const ImageMetrics m = evaluate_pair(img, ref);
      report.add(m);
      csv += restored[i].filename().string() + "," + fmt(m.psnr_db) + "," + fmt(m.ssim) + "," +
             fmt(m.mse) + "\n";
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  report.finalize();
  csv += "mean," + fmt(report.mean.psnr_db) + "," + fmt(report.mean.ssim) + "," +
         fmt(report.mean.mse) + "\n";
  if (opt.output_csv.empty()) {
    out << csv;
  } else {
    write_file_atomic(opt.output_csv, csv);
    out << "evaluated " << report.images.size() << " image(s): mean psnr "
        << fmt_short(report.mean.psnr_db, 3) << " dB, ssim " << fmt_short(report.mean.ssim)
        << " -> " << opt.output_csv.string() << '\n';
  }
  return report_failures(errors, restored, err) ? kExitData : kExitOk;
}

// ---------------------------------------------------------------- bench

BenchReport run_bench(const BenchOptions& opt) {
  const RunConfig& cfg = opt.config;
  cfg.validate();
  if (opt.batch < 1) throw ConfigError(0, "--batch must be >= 1");

  bool have_files = true;
  for (const auto& s : cfg.pipeline.stages) have_files = have_files && cfg.models.count(s.denoiser_id);
  const DegradationConfig degradation = degradation_preset(cfg.degradation);
  DenoiserSet models;
  if (have_files) {
    models = load_models(cfg);
  } else {
    const auto train = toy_dataset(64, {}, substream_seed(opt.seed, 1));
    ModelTrainingConfig fit;
    fit.fallback = cfg.fit;
    models = to_denoiser_set(
        train_pipeline_models(train, cfg.pipeline, degradation, fit, substream_seed(opt.seed, 2)));
  }

  const auto clean = toy_dataset(opt.batch, {}, substream_seed(opt.seed, 3));
  std::vector<Image> degraded;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    SeededRng rng(derive_seed(substream_seed(opt.seed, 4), i));
    degraded.push_back(synthesize(clean[i], degradation, rng).y);
  }

  BenchReport r;
  r.budget = step_budget(cfg.pipeline);
  r.batch = opt.batch;
  const int top = cfg.pipeline.stages.back().resolution;
  MetricReport trunc_m, base_m, deg_m;
  using clock = std::chrono::steady_clock;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const Image ref = resize(clean[i], top, top);
    const auto t0 = clock::now();
    const RestoreResult res = restore(degraded[i], models, cfg.pipeline, derive_seed(opt.seed, i));
    const auto t1 = clock::now();
    const Image base = baseline_restore(degraded[i], models, cfg.pipeline, derive_seed(opt.seed, i));
    const auto t2 = clock::now();
    r.truncated_seconds += std::chrono::duration<double>(t1 - t0).count();
    r.baseline_seconds += std::chrono::duration<double>(t2 - t1).count();
    r.trace_evaluations += res.trace.total_evaluations;
    trunc_m.add(evaluate_pair(res.restored, ref));
    base_m.add(evaluate_pair(base, ref));
    deg_m.add(evaluate_pair(resize(degraded[i], top, top), ref));
  }
  trunc_m.finalize();
  base_m.finalize();
  deg_m.finalize();
  r.measured_ratio = static_cast<double>(r.budget.full_baseline_evals) * opt.batch / r.trace_evaluations;
  r.truncated_psnr_db = trunc_m.mean.psnr_db;
  r.baseline_psnr_db = base_m.mean.psnr_db;
  r.degraded_psnr_db = deg_m.mean.psnr_db;
  return r;
}

std::string bench_report_text(const BenchReport& r) {
  std::ostringstream os;
  os << "truncated_evals = " << r.budget.truncated_evals << '\n'
     << "full_baseline_evals = " << r.budget.full_baseline_evals << '\n'
     << "step_budget_ratio = " << fmt_short(r.budget.ratio, 6) << '\n'
     << "batch = " << r.batch << '\n'
     << "trace_total_evaluations = " << r.trace_evaluations << '\n'
     << "measured_eval_ratio = " << fmt_short(r.measured_ratio, 6) << '\n'
     << "truncated_wall_s = " << fmt_short(r.truncated_seconds, 4) << '\n'
     << "baseline_wall_s = " << fmt_short(r.baseline_seconds, 4) << '\n'
     << "wall_ratio = " << fmt_short(r.baseline_seconds / r.truncated_seconds, 3) << '\n'
     << "degraded_psnr_db = " << fmt_short(r.degraded_psnr_db, 3) << '\n'
     << "truncated_psnr_db = " << fmt_short(r.truncated_psnr_db, 3) << '\n'
     << "baseline_psnr_db = " << fmt_short(r.baseline_psnr_db, 3) << '\n';
  return os.str();
}

int cmd_bench(const BenchOptions& opt, std::ostream& out, std::ostream&) {
  out << bench_report_text(run_bench(opt));
  return kExitOk;
}

// ---------------------------------------------------------------- toy

int cmd_toy(const ToyOptions& opt, std::ostream& out, std::ostream& err) {
  if (opt.count < 0 || opt.size < 1 || !(opt.correlation_px > 0.0)) {
    throw ConfigError(0, "toy: need count >= 0, size >= 1, correlation > 0");
  }
  const DegradationConfig degradation = degradation_preset(opt.preset);
  ToyDataConfig tc;
  tc.size = opt.size;
  tc.correlation_px = opt.correlation_px;
  const auto images = toy_dataset(opt.count, tc, opt.seed);
  fs::create_directories(opt.output_dir);
  std::vector<fs::path> names;
  for (int i = 0; i < opt.count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "toy_%04d", i);
    names.push_back(opt.output_dir / (std::string(name) + ".png"));
  }
  const auto errors = run_batch(images.size(), 1, [&](std::size_t i) {
    write_image(names[i], images[i]);
    if (opt.pairs) {
      SeededRng rng(derive_seed(substream_seed(opt.seed, 1), i));
      fs::path deg = names[i];
      deg.replace_extension(".deg.png");
      write_image(deg, synthesize(images[i], degradation, rng).y);
    }
  });
  out << "wrote " << images.size() << " toy image(s) to " << opt.output_dir.string() << '\n';
  return report_failures(errors, names, err) ? kExitData : kExitOk;
}

}  // namespace tdbfr::cli
