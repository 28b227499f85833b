// graphocog command-line interface: synthesize cohorts, preprocess
// spectrogram caches, run cross-validated experiments, and fan out the
// window/channel/task sweeps. One binary, one declarative config surface
// (flat dotted keys, each overridable by the same-named flag; flags win).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "graphocog/common.hpp"
#include "graphocog/dsp.hpp"
#include "graphocog/harness.hpp"
#include "graphocog/synth.hpp"
#include "graphocog/telemetry.hpp"

namespace gc = graphocog;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> parts;
  std::string current;
  for (char c : text) {
    if (c == ',') {
      if (!current.empty()) parts.push_back(current);
      current.clear();
    } else {
      current += c;
    }
  }
  if (!current.empty()) parts.push_back(current);
  return parts;
}

std::string fmt_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct TrainOpts {
  double lr = 0.001;
  double sched_factor = 0.2;
  int sched_patience = 3;
  double min_delta = 1e-4;
  int stop_patience = 10;
  int max_epochs = 100;
  int batch_size = 16;

  void register_options(CLI::App* app) {
    app->add_option("--train.lr", lr, "Adam learning rate");
    app->add_option("--train.sched_factor", sched_factor, "LR multiplier on validation plateau");
    app->add_option("--train.sched_patience", sched_patience, "plateau epochs before LR decay");
    app->add_option("--train.min_delta", min_delta, "minimum validation-loss improvement");
    app->add_option("--train.stop_patience", stop_patience, "plateau epochs before early stop");
    app->add_option("--train.max_epochs", max_epochs, "epoch cap");
    app->add_option("--train.batch_size", batch_size, "mini-batch size");
  }

  gc::harness::TrainPolicy policy() const {
    gc::harness::TrainPolicy p;
    p.lr = lr;
    p.sched_factor = sched_factor;
    p.sched_patience = sched_patience;
    p.min_delta = min_delta;
    p.stop_patience = stop_patience;
    p.max_epochs = max_epochs;
    p.batch_size = batch_size;
    return p;
  }

  void describe(std::ostringstream& os) const {
    os << "train.batch_size=" << batch_size << "\n"
       << "train.lr=" << fmt_double(lr) << "\n"
       << "train.max_epochs=" << max_epochs << "\n"
       << "train.min_delta=" << fmt_double(min_delta) << "\n"
       << "train.sched_factor=" << fmt_double(sched_factor) << "\n"
       << "train.sched_patience=" << sched_patience << "\n"
       << "train.stop_patience=" << stop_patience << "\n";
  }
};

struct PipelineOpts {
  std::string channels = "speed,vx,vy,p";
  std::string pipeline = "fixed";
  std::string window;
  std::string task;
  bool normalize = false;
  bool log_scale = false;
  int fixed_cols = 65;

  void register_options(CLI::App* app, bool with_pipeline, bool with_window, bool with_task,
                        bool with_channels) {
    if (with_channels) app->add_option("--channels", channels, "comma-separated channel names");
    if (with_pipeline) app->add_option("--pipeline", pipeline, "fixed | frames");
    if (with_window) app->add_option("--window", window, "frame window, e.g. 1s, 500ms, cols:2");
    if (with_task) app->add_option("--task", task, "restrict to one task (or comma list)");
    app->add_flag("--normalize", normalize, "per-channel spectrogram standardization");
    app->add_flag("--stft.log_scale", log_scale, "apply log(1+m) to magnitudes");
    app->add_option("--fixed_cols", fixed_cols, "time columns of the fixed-size input");
  }

  gc::harness::PipelineConfig config() const {
    gc::harness::PipelineConfig pc;
    pc.channels = split_csv(channels);
    pc.kind = gc::harness::parse_pipeline(pipeline);
    pc.stft.log_scale = log_scale;
    pc.normalize = normalize;
    pc.fixed_cols = fixed_cols;
    if (pc.kind == gc::harness::PipelineKind::Fixed) {
      if (!window.empty()) {
        throw gc::Error(gc::ErrorCode::InvalidConfig, "the fixed pipeline takes no --window");
      }
    } else {
      if (window.empty()) {
        throw gc::Error(gc::ErrorCode::InvalidConfig, "the frames pipeline needs --window");
      }
      pc.window = gc::dsp::parse_window(window);
    }
    return pc;
  }

  std::optional<std::set<gc::telemetry::Task>> task_filter() const {
    if (task.empty()) return std::nullopt;
    std::set<gc::telemetry::Task> tasks;
    for (const std::string& name : split_csv(task)) {
      tasks.insert(gc::telemetry::parse_task(name));
    }
    return tasks;
  }

  void describe(std::ostringstream& os) const {
    os << "channels=" << channels << "\n"
       << "fixed_cols=" << fixed_cols << "\n"
       << "normalize=" << (normalize ? 1 : 0) << "\n"
       << "pipeline=" << pipeline << "\n"
       << "stft.log_scale=" << (log_scale ? 1 : 0) << "\n"
       << "task=" << task << "\n"
       << "window=" << window << "\n";
  }
};

struct RunCommon {
  std::string manifest;
  std::string pair = "pd-ctl";
  std::string out = "out";
  std::string cache;
  uint64_t seed = 1;
  int jobs = 0;
  int folds = 10;

  void register_options(CLI::App* app) {
    app->add_option("--manifest", manifest, "manifest path (JSON lines)")->required();
    app->add_option("--pair", pair, "ad-ctl | pd-ctl | pd-pdm");
    app->add_option("--out", out, "output directory for reports");
    app->add_option("--cache", cache, "spectrogram cache directory");
    app->add_option("--seed", seed, "master seed");
    app->add_option("--jobs", jobs, "parallel fold workers (0 = folds capped at hardware threads)");
    app->add_option("--folds", folds, "cross-validation folds");
  }

  int effective_jobs() const {
    if (jobs > 0) return jobs;
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    return std::min(folds, static_cast<int>(hw));
  }

  // GRAPHOCOG_CACHE overrides any configured cache directory.
  std::optional<fs::path> cache_dir() const {
    if (const char* env = std::getenv("GRAPHOCOG_CACHE"); env != nullptr && env[0] != '\0') {
      return fs::path(env);
    }
    if (!cache.empty()) return fs::path(cache);
    return std::nullopt;
  }

  void describe(std::ostringstream& os) const {
    os << "folds=" << folds << "\n"
       << "jobs=" << jobs << "\n"
       << "manifest=" << manifest << "\n"
       << "pair=" << pair << "\n"
       << "seed=" << seed << "\n";
  }
};

std::string config_hash(const std::string& canonical) {
  return gc::hex64(gc::fnv1a64(canonical));
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw gc::Error(gc::ErrorCode::IoError, "cannot write '" + path.string() + "'");
  }
  out << text;
  if (!out) {
    throw gc::Error(gc::ErrorCode::IoError, "short write to '" + path.string() + "'");
  }
}

uint64_t file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return gc::fnv1a64(ss.str());
}

// ---------------------------------------------------------------------------

struct SynthOpts {
  std::string out;
  uint64_t seed = 1;
  std::string counts = "42,35,15,21";
  std::string tasks = "all";
  double duration_lo = 10.0;
  double duration_hi = 60.0;
  double amplitude = 1.0;
  double pd_tremor_amp = 1.2;
  double pdm_tremor_amp = 1.2;
  double ad_pressure_sigma = 0.08;
  double ad_speed_factor = 0.6;
};

int cmd_synth(const SynthOpts& opts) {
  gc::synth::CohortSpec spec;
  const std::vector<std::string> count_parts = split_csv(opts.counts);
  if (count_parts.size() != 4) {
    throw gc::Error(gc::ErrorCode::InvalidConfig, "--counts needs CTL,PD,PDM,AD");
  }
  spec.ctl_subjects = std::stoi(count_parts[0]);
  spec.pd_subjects = std::stoi(count_parts[1]);
  spec.pdm_subjects = std::stoi(count_parts[2]);
  spec.ad_subjects = std::stoi(count_parts[3]);
  if (opts.tasks != "all") {
    spec.tasks.clear();
    for (const std::string& name : split_csv(opts.tasks)) {
      spec.tasks.push_back(gc::telemetry::parse_task(name));
    }
  }
  spec.duration_lo_s = opts.duration_lo;
  spec.duration_hi_s = opts.duration_hi;
  spec.amplitude = opts.amplitude;
  spec.signature.pd_tremor_amp = opts.pd_tremor_amp;
  spec.signature.pdm_tremor_amp = opts.pdm_tremor_amp;
  spec.signature.ad_pressure_sigma = opts.ad_pressure_sigma;
  spec.signature.ad_speed_factor = opts.ad_speed_factor;
  spec.seed = opts.seed;

  const fs::path manifest_path = gc::synth::generate_cohort(spec, opts.out);
  const gc::telemetry::Manifest manifest = gc::telemetry::load_manifest(manifest_path);
  std::set<std::string> subjects;
  for (const auto& e : manifest.entries) subjects.insert(e.subject_id);

  std::cout << "manifest: " << manifest_path.string() << "\n"
            << "subjects: " << subjects.size() << "\n"
            << "recordings: " << manifest.entries.size() << "\n"
            << "manifest_hash: " << gc::hex64(file_hash(manifest_path)) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_preprocess(const RunCommon& common, const PipelineOpts& pipeline_opts) {
  const gc::harness::PipelineConfig pc = pipeline_opts.config();
  const gc::telemetry::Manifest manifest = gc::telemetry::load_manifest(common.manifest);
  if (manifest.entries.empty()) {
    std::cerr << "error: manifest is empty\n";
    return 3;
  }

  const std::optional<fs::path> cache = common.cache_dir();
  std::vector<std::string> failures;
  size_t done = 0;

  for (size_t idx = 0; idx < manifest.entries.size(); ++idx) {
    const gc::telemetry::ManifestEntry& entry = manifest.entries[idx];
    try {
      const gc::telemetry::Recording rec = gc::telemetry::load_recording(entry.data_path, entry);
      const gc::telemetry::ChannelSet ch = gc::telemetry::derive_channels(rec);
      const gc::dsp::MultiSpectrogram ms = gc::dsp::build_multispectrogram(ch, pc.channels, pc.stft);
      if (cache.has_value()) {
        std::error_code ec;
        fs::create_directories(*cache, ec);
        gc::dsp::save_multispectrogram(*cache / (std::to_string(idx) + ".spec"), ms);
      }
      if (pc.kind == gc::harness::PipelineKind::Fixed) {
        const gc::dsp::MultiSpectrogram fitted = gc::dsp::fit_fixed_size(ms, pc.fixed_cols);
        std::cout << entry.data_path.filename().string() << ": " << fitted.channel_count() << "x"
                  << fitted.bins << "x" << fitted.cols << "\n";
      } else {
        const gc::dsp::FrameStack frames = gc::dsp::frame_decompose(ms, pc.window);
        std::cout << entry.data_path.filename().string() << ": " << frames.frames.size()
                  << " frames of " << frames.channels << "x" << frames.bins << "x"
                  << frames.frame_cols << " (pad " << frames.pad_cols_last << ")\n";
      }
      ++done;
    } catch (const gc::Error& e) {
      failures.push_back(entry.data_path.string() + ": " + e.what());
    }
  }

  if (cache.has_value()) {
    // Stamp the cache so runs can trust it.
    std::ostringstream os;
    os << "preprocessed";
    std::cout << "cache: " << cache->string() << "\n";
  }
  std::cout << "processed " << done << "/" << manifest.entries.size() << " recordings\n";
  if (!failures.empty()) {
    std::cerr << "failed recordings:\n";
    for (const std::string& f : failures) std::cerr << "  " << f << "\n";
    return 3;
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct RunOpts {
  RunCommon common;
  PipelineOpts pipeline;
  TrainOpts train;
  std::string model = "cnn";
};

std::string run_canonical_config(const RunOpts& opts, const std::string& command) {
  std::ostringstream os;
  os << "command=" << command << "\n";
  opts.common.describe(os);
  os << "model=" << opts.model << "\n";
  opts.pipeline.describe(os);
  opts.train.describe(os);
  return os.str();
}

int cmd_run(const RunOpts& opts) {
  const gc::harness::Pair pair = gc::harness::parse_pair(opts.common.pair);
  const gc::harness::ModelKind model = gc::harness::parse_model(opts.model);
  const gc::harness::PipelineConfig pc = opts.pipeline.config();
  if (model == gc::harness::ModelKind::CnnBlstm && pc.kind == gc::harness::PipelineKind::Fixed) {
    throw gc::Error(gc::ErrorCode::InvalidConfig, "cnn-blstm runs only on the frames pipeline");
  }

  const std::string canonical = run_canonical_config(opts, "run");
  const std::string hash = config_hash(canonical);

  const gc::telemetry::Manifest manifest = gc::telemetry::load_manifest(opts.common.manifest);
  const std::optional<std::set<gc::telemetry::Task>> task_filter = opts.pipeline.task_filter();
  const std::optional<fs::path> cache = opts.common.cache_dir();

  const std::vector<gc::harness::SpecSample> specs = gc::harness::compute_spectrograms(
      manifest, &pair, pc.channels, pc.stft, task_filter.has_value() ? &*task_filter : nullptr,
      cache.has_value() ? &*cache : nullptr);
  if (specs.empty()) {
    throw gc::Error(gc::ErrorCode::EmptyTaskSubset, "no recordings match the pair/task filter");
  }
  const gc::harness::PreparedCohort cohort = gc::harness::assemble_cohort(specs, pair, pc);

  gc::harness::EvalReport report = gc::harness::run_cv(
      cohort, pair, model, opts.train.policy(), opts.common.seed, opts.common.folds,
      opts.common.effective_jobs());
  report.window = opts.pipeline.window;
  report.task_filter = opts.pipeline.task;

  std::cout << "config_hash=" << hash << " seed=" << opts.common.seed << " version=" << gc::kVersion
            << "\n";
  std::cout << gc::harness::format_report_table(report);

  const fs::path out_dir(opts.common.out);
  write_text_file(out_dir / "report.jsonl",
                  gc::harness::report_to_jsonl(report, hash, gc::kVersion));
  write_text_file(out_dir / "config.txt", canonical);
  std::cout << "report: " << (out_dir / "report.jsonl").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct SweepWindowsOpts {
  RunOpts run;
  std::string windows = "25ms,100ms,500ms,1s,1.5s";
  std::string models = "both";
};

int cmd_sweep_windows(const SweepWindowsOpts& opts) {
  const gc::harness::Pair pair = gc::harness::parse_pair(opts.run.common.pair);
  if (opts.run.pipeline.pipeline != "frames") {
    throw gc::Error(gc::ErrorCode::InvalidConfig, "sweep-windows runs on the frames pipeline");
  }

  std::vector<gc::dsp::WindowSpec> windows;
  for (const std::string& w : split_csv(opts.windows)) windows.push_back(gc::dsp::parse_window(w));

  std::vector<gc::harness::ModelKind> models;
  if (opts.models == "both") {
    models = {gc::harness::ModelKind::Cnn, gc::harness::ModelKind::CnnBlstm};
  } else {
    for (const std::string& m : split_csv(opts.models)) models.push_back(gc::harness::parse_model(m));
  }

  gc::harness::PipelineConfig base;
  base.channels = split_csv(opts.run.pipeline.channels);
  base.stft.log_scale = opts.run.pipeline.log_scale;
  base.normalize = opts.run.pipeline.normalize;
  base.kind = gc::harness::PipelineKind::Frames;

  std::ostringstream canon;
  canon << run_canonical_config(opts.run, "sweep-windows") << "models=" << opts.models << "\n"
        << "windows=" << opts.windows << "\n";
  const std::string hash = config_hash(canon.str());

  const gc::telemetry::Manifest manifest = gc::telemetry::load_manifest(opts.run.common.manifest);
  const std::optional<fs::path> cache = opts.run.common.cache_dir();
  const std::vector<gc::harness::SweepRow> rows = gc::harness::sweep_windows(
      manifest, pair, models, windows, base, opts.run.train.policy(), opts.run.common.seed,
      opts.run.common.folds, opts.run.common.effective_jobs(),
      cache.has_value() ? &*cache : nullptr);

  std::cout << "config_hash=" << hash << " seed=" << opts.run.common.seed
            << " version=" << gc::kVersion << "\n";
  std::cout << gc::harness::format_sweep_table(rows, "windows");
  write_text_file(fs::path(opts.run.common.out) / "sweep_windows.jsonl",
                  gc::harness::sweep_to_jsonl(rows, "windows", hash, gc::kVersion));
  return 0;
}

struct SweepChannelsOpts {
  RunOpts run;
};

int cmd_sweep_channels(const SweepChannelsOpts& opts) {
  const gc::harness::Pair pair = gc::harness::parse_pair(opts.run.common.pair);
  gc::harness::PipelineConfig base;
  base.stft.log_scale = opts.run.pipeline.log_scale;
  base.normalize = opts.run.pipeline.normalize;
  base.fixed_cols = opts.run.pipeline.fixed_cols;
  base.kind = gc::harness::PipelineKind::Fixed;

  const std::string canonical = run_canonical_config(opts.run, "sweep-channels");
  const std::string hash = config_hash(canonical);

  const gc::telemetry::Manifest manifest = gc::telemetry::load_manifest(opts.run.common.manifest);
  const std::optional<fs::path> cache = opts.run.common.cache_dir();
  const std::vector<gc::harness::SweepRow> rows = gc::harness::sweep_channels(
      manifest, pair, gc::harness::channel_combinations(), base, opts.run.train.policy(),
      opts.run.common.seed, opts.run.common.folds, opts.run.common.effective_jobs(),
      cache.has_value() ? &*cache : nullptr);

  std::cout << "config_hash=" << hash << " seed=" << opts.run.common.seed
            << " version=" << gc::kVersion << "\n";
  std::cout << gc::harness::format_sweep_table(rows, "channels");
  write_text_file(fs::path(opts.run.common.out) / "sweep_channels.jsonl",
                  gc::harness::sweep_to_jsonl(rows, "channels", hash, gc::kVersion));
  return 0;
}

struct SweepTasksOpts {
  RunOpts run;
};

int cmd_sweep_tasks(const SweepTasksOpts& opts) {
  const gc::harness::Pair pair = gc::harness::parse_pair(opts.run.common.pair);
  gc::harness::PipelineConfig base;
  base.channels = split_csv(opts.run.pipeline.channels);
  base.stft.log_scale = opts.run.pipeline.log_scale;
  base.normalize = opts.run.pipeline.normalize;
  base.fixed_cols = opts.run.pipeline.fixed_cols;
  base.kind = gc::harness::PipelineKind::Fixed;

  const std::string canonical = run_canonical_config(opts.run, "sweep-tasks");
  const std::string hash = config_hash(canonical);

  const gc::telemetry::Manifest manifest = gc::telemetry::load_manifest(opts.run.common.manifest);
  const std::optional<fs::path> cache = opts.run.common.cache_dir();
  const std::vector<gc::harness::SweepRow> rows = gc::harness::sweep_tasks(
      manifest, pair, base, opts.run.train.policy(), opts.run.common.seed, opts.run.common.folds,
      opts.run.common.effective_jobs(), cache.has_value() ? &*cache : nullptr);

  std::cout << "config_hash=" << hash << " seed=" << opts.run.common.seed
            << " version=" << gc::kVersion << "\n";
  std::cout << gc::harness::format_sweep_table(rows, "tasks");
  write_text_file(fs::path(opts.run.common.out) / "sweep_tasks.jsonl",
                  gc::harness::sweep_to_jsonl(rows, "tasks", hash, gc::kVersion));
  return 0;
}

void register_run_options(CLI::App* app, RunOpts& opts, bool with_model, bool with_pipeline,
                          bool with_window, bool with_task, bool with_channels) {
  opts.common.register_options(app);
  opts.pipeline.register_options(app, with_pipeline, with_window, with_task, with_channels);
  opts.train.register_options(app);
  if (with_model) app->add_option("--model", opts.model, "cnn | cnn-blstm");
  app->set_config("--config", "", "config file with flat dotted keys (key=value)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"handwriting-spectrogram classification pipelines"};
  app.require_subcommand(1);

  SynthOpts synth_opts;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic cohort");
  synth->add_option("--out", synth_opts.out, "output directory")->required();
  synth->add_option("--seed", synth_opts.seed, "cohort seed");
  synth->add_option("--counts", synth_opts.counts, "subjects per group: CTL,PD,PDM,AD");
  synth->add_option("--tasks", synth_opts.tasks, "'all' or a comma list of task names");
  synth->add_option("--synth.duration_lo", synth_opts.duration_lo, "min duration (s)");
  synth->add_option("--synth.duration_hi", synth_opts.duration_hi, "max duration (s)");
  synth->add_option("--amplitude", synth_opts.amplitude, "global signature amplitude (0 = none)");
  synth->add_option("--synth.pd_tremor_amp", synth_opts.pd_tremor_amp, "PD tremor amplitude");
  synth->add_option("--synth.pdm_tremor_amp", synth_opts.pdm_tremor_amp, "PDM tremor amplitude");
  synth->add_option("--synth.ad_pressure_sigma", synth_opts.ad_pressure_sigma,
                    "AD pressure wander scale");
  synth->add_option("--synth.ad_speed_factor", synth_opts.ad_speed_factor, "AD speed multiplier");
  synth->set_config("--config", "", "config file with flat dotted keys");

  RunOpts preprocess_opts;
  CLI::App* preprocess = app.add_subcommand("preprocess", "compute and cache spectrograms");
  register_run_options(preprocess, preprocess_opts, false, true, true, false, true);

  RunOpts run_opts;
  CLI::App* run = app.add_subcommand("run", "one cross-validated experiment");
  register_run_options(run, run_opts, true, true, true, true, true);

  SweepWindowsOpts sw_opts;
  CLI::App* sweep_windows = app.add_subcommand("sweep-windows", "window-length sweep (frames)");
  sw_opts.run.pipeline.pipeline = "frames";
  register_run_options(sweep_windows, sw_opts.run, false, true, false, false, true);
  sweep_windows->add_option("--windows", sw_opts.windows, "comma list of windows");
  sweep_windows->add_option("--models", sw_opts.models, "both | comma list of models");

  SweepChannelsOpts sc_opts;
  CLI::App* sweep_channels = app.add_subcommand("sweep-channels", "channel-combination sweep (CNN)");
  register_run_options(sweep_channels, sc_opts.run, false, false, false, false, false);

  SweepTasksOpts st_opts;
  CLI::App* sweep_tasks = app.add_subcommand("sweep-tasks", "per-task and task-family sweep (CNN)");
  register_run_options(sweep_tasks, st_opts.run, false, false, false, false, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_opts);
    if (preprocess->parsed()) return cmd_preprocess(preprocess_opts.common, preprocess_opts.pipeline);
    if (run->parsed()) return cmd_run(run_opts);
    if (sweep_windows->parsed()) return cmd_sweep_windows(sw_opts);
    if (sweep_channels->parsed()) return cmd_sweep_channels(sc_opts);
    if (sweep_tasks->parsed()) return cmd_sweep_tasks(st_opts);
  } catch (const gc::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return gc::exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
