#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "graphocog/common.hpp"
#include "graphocog/dsp.hpp"
#include "graphocog/micronet.hpp"
#include "graphocog/telemetry.hpp"

namespace graphocog::harness {

// Binary experiment pairs; the first-named (disease) group is the positive
// class.
enum class Pair { AdCtl, PdCtl, PdPdm };

Pair parse_pair(std::string_view s);
std::string_view pair_name(Pair p);
telemetry::Group positive_group(Pair p);
telemetry::Group negative_group(Pair p);

enum class PipelineKind { Fixed, Frames };
enum class ModelKind { Cnn, CnnBlstm };

PipelineKind parse_pipeline(std::string_view s);
ModelKind parse_model(std::string_view s);
std::string_view pipeline_name(PipelineKind k);
std::string_view model_name(ModelKind k);

struct PipelineConfig {
  std::vector<std::string> channels = {"speed", "vx", "vy", "p"};
  dsp::StftConfig stft;
  PipelineKind kind = PipelineKind::Fixed;
  dsp::WindowSpec window;  // frames mode only
  int fixed_cols = 65;
  bool normalize = false;  // per-channel standardization, off by default
};

struct TrainPolicy {
  double lr = 0.001;
  double sched_factor = 0.2;  // multiplied into lr on validation plateau
  int sched_patience = 3;
  double min_delta = 1e-4;
  int stop_patience = 10;
  int max_epochs = 100;
  int batch_size = 16;
};

// Patient-grouped fold assignment. Iteration i tests on fold i, validates on
// fold (i+1) mod k, trains on the rest.
struct FoldPlan {
  int k = 10;
  std::vector<std::vector<std::string>> folds;

  int test_fold(int iteration) const { return iteration; }
  int val_fold(int iteration) const { return (iteration + 1) % k; }
};

// Shuffles each group with the seeded RNG and deals subjects round-robin
// into k folds, continuing the fold cursor across groups so fold sizes stay
// within one of each other.
FoldPlan make_folds(const std::vector<std::pair<std::string, telemetry::Group>>& subjects, int k,
                    uint64_t seed);

struct Metrics {
  long tp = 0, fp = 0, tn = 0, fn = 0;
  std::optional<double> accuracy;   // all in percent
  std::optional<double> precision;  // null when undefined (e.g. tp+fp == 0)
  std::optional<double> recall;
  std::optional<double> f1;
  std::optional<double> auc;
};

Metrics metrics_from_counts(long tp, long fp, long tn, long fn);

// Rank-statistic AUC (Mann-Whitney) with average ranks for ties, in percent.
// Null when either class is absent.
std::optional<double> auc_percent(const std::vector<double>& scores, const std::vector<int>& labels);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct FoldResult {
  int fold = 0;
  Metrics metrics;
  std::vector<EpochLog> curve;
  std::vector<double> scores;  // positive-class probability per test sample
  std::vector<int> labels;
  int best_epoch = 0;
  int lr_firings = 0;
};

struct EvalReport {
  std::string pair_label;
  std::string model_label;
  std::string pipeline_label;
  std::string window;       // empty in fixed mode
  std::string task_filter;  // empty = all tasks
  std::vector<std::string> channels;
  uint64_t seed = 0;
  std::string model_description;
  std::vector<FoldResult> folds;
  Metrics pooled;     // summed confusion counts, AUC over pooled scores
  Metrics fold_mean;  // mean of per-fold metrics, nulls skipped
};

// One spectrogram-ready recording.
struct SpecSample {
  std::string subject_id;
  telemetry::Group group = telemetry::Group::CTL;
  telemetry::Task task = telemetry::Task::PointRight;
  dsp::MultiSpectrogram ms;
};

// Model-ready cohort for one experiment pair.
struct PreparedSample {
  std::string subject_id;
  telemetry::Group group = telemetry::Group::CTL;
  telemetry::Task task = telemetry::Task::PointRight;
  int label = 0;  // 1 = disease (positive) group
  micronet::Tensor<float> fixed;
  std::vector<micronet::Tensor<float>> frames;
};

struct PreparedCohort {
  PipelineKind kind = PipelineKind::Fixed;
  int in_channels = 0;
  int bins = 0;
  int input_width = 0;  // fixed cols, or frame width in frames mode
  std::vector<std::string> channel_names;
  std::vector<PreparedSample> samples;
  std::vector<std::pair<std::string, telemetry::Group>> subjects;
};

// Loads recordings (for one experiment pair, or all groups when pair is
// null), derives channels, and computes multi-channel spectrograms. When
// cache_dir is given, per-recording spectrograms are written there on first
// computation and reused when the cache metadata matches the channel set and
// STFT settings.
std::vector<SpecSample> compute_spectrograms(const telemetry::Manifest& manifest, const Pair* pair,
                                             const std::vector<std::string>& channels,
                                             const dsp::StftConfig& stft,
                                             const std::set<telemetry::Task>* task_filter,
                                             const std::filesystem::path* cache_dir);

// Fits fixed-size inputs or cuts frames, applies optional normalization, and
// attaches binary labels.
PreparedCohort assemble_cohort(const std::vector<SpecSample>& specs, Pair pair,
                               const PipelineConfig& pipeline);

using AnyModel = std::variant<micronet::CnnModel<float>, micronet::CnnBlstmModel<float>>;

AnyModel build_model(ModelKind kind, const PreparedCohort& cohort, int fc_hidden, uint64_t seed);
std::vector<micronet::ParamRef<float>> model_params(AnyModel& model);
std::string model_description(const AnyModel& model);
std::vector<float> model_forward(const AnyModel& model, const PreparedSample& sample,
                                 PipelineKind kind);

struct TrainOutcome {
  std::vector<EpochLog> curve;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  int lr_firings = 0;
};

// Adam + cross-entropy with plateau LR decay and early stopping; the
// parameters from the best-validation-loss epoch are restored before
// returning.
TrainOutcome train_model(AnyModel& model, const PreparedCohort& cohort,
                         const std::vector<int>& train_idx, const std::vector<int>& val_idx,
                         const TrainPolicy& policy, uint64_t shuffle_seed);

FoldResult evaluate(const AnyModel& model, const PreparedCohort& cohort,
                    const std::vector<int>& test_idx);

// Full k-fold patient-grouped cross-validation. Folds run independently
// (optionally across `jobs` threads) with per-fold derived seeds; results do
// not depend on execution order.
EvalReport run_cv(const PreparedCohort& cohort, Pair pair, ModelKind model,
                  const TrainPolicy& policy, uint64_t seed, int k, int jobs);

struct SweepRow {
  std::string label;
  EvalReport report;
};

// Window-length sweep over the frame-based pipeline (one row per
// model x window).
std::vector<SweepRow> sweep_windows(const telemetry::Manifest& manifest, Pair pair,
                                    const std::vector<ModelKind>& models,
                                    const std::vector<dsp::WindowSpec>& windows,
                                    const PipelineConfig& base, const TrainPolicy& policy,
                                    uint64_t seed, int k, int jobs,
                                    const std::filesystem::path* cache_dir);

// The ten channel combinations evaluated with the fixed-size CNN.
std::vector<std::vector<std::string>> channel_combinations();

std::vector<SweepRow> sweep_channels(const telemetry::Manifest& manifest, Pair pair,
                                     const std::vector<std::vector<std::string>>& combinations,
                                     const PipelineConfig& base, const TrainPolicy& policy,
                                     uint64_t seed, int k, int jobs,
                                     const std::filesystem::path* cache_dir);

struct TaskRow {
  std::string label;
  std::set<telemetry::Task> tasks;
};

// 14 individual tasks plus the four task-family aggregates, in report order.
std::vector<TaskRow> task_rows();

std::vector<SweepRow> sweep_tasks(const telemetry::Manifest& manifest, Pair pair,
                                  const PipelineConfig& base, const TrainPolicy& policy,
                                  uint64_t seed, int k, int jobs,
                                  const std::filesystem::path* cache_dir);

// Report emission: JSON lines (machine-readable, byte-deterministic) and an
// aligned table with two-decimal percentages.
std::string report_to_jsonl(const EvalReport& report, const std::string& config_hash,
                            const std::string& version);
std::string sweep_to_jsonl(const std::vector<SweepRow>& rows, const std::string& sweep_name,
                           const std::string& config_hash, const std::string& version);
std::string format_report_table(const EvalReport& report);
std::string format_sweep_table(const std::vector<SweepRow>& rows, const std::string& sweep_name);

}  // namespace graphocog::harness
