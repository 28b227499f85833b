#include "graphocog/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace graphocog::harness {

namespace {

using micronet::GradVec;
using micronet::Tensor;

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out += sep;
    out += parts[i];
  }
  return out;
}

std::string format_pct(const std::optional<double>& v) {
  if (!v.has_value()) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", *v);
  return buf;
}

nlohmann::json metric_json(const std::optional<double>& v) {
  if (!v.has_value()) return nullptr;
  return *v;
}

nlohmann::json metrics_to_json(const Metrics& m, bool with_counts) {
  nlohmann::json j;
  j["accuracy"] = metric_json(m.accuracy);
  j["precision"] = metric_json(m.precision);
  j["recall"] = metric_json(m.recall);
  j["f1"] = metric_json(m.f1);
  j["auc"] = metric_json(m.auc);
  if (with_counts) {
    j["tp"] = m.tp;
    j["fp"] = m.fp;
    j["tn"] = m.tn;
    j["fn"] = m.fn;
  }
  return j;
}

double checked_loss(const AnyModel& model, const PreparedSample& sample, PipelineKind kind) {
  const std::vector<float> logits = model_forward(model, sample, kind);
  return micronet::cross_entropy(logits, sample.label, static_cast<std::vector<float>*>(nullptr));
}

double train_example(AnyModel& model, const PreparedSample& sample, PipelineKind kind,
                     GradVec<float>& grads) {
  return std::visit(
      [&](auto& m) -> double {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, micronet::CnnModel<float>>) {
          if (kind == PipelineKind::Fixed) return m.train_step(sample.fixed, sample.label, grads);
          return m.train_step_frames(sample.frames, sample.label, grads);
        } else {
          return m.train_step_frames(sample.frames, sample.label, grads);
        }
      },
      model);
}

GradVec<float> make_zero_grads(const AnyModel& model) {
  return std::visit([](const auto& m) { return m.zero_grads(); }, model);
}

uint64_t pipeline_cache_hash(const std::vector<std::string>& channels, const dsp::StftConfig& stft,
                             const telemetry::Manifest& manifest) {
  std::ostringstream os;
  os << join(channels, ",") << "|" << stft.window_len << "," << stft.hop << "," << stft.n_fft << ","
     << stft.sample_rate_hz << "," << stft.center_pad << "," << stft.log_scale << "|"
     << manifest.entries.size();
  return fnv1a64(os.str());
}

}  // namespace

// ---------------------------------------------------------------------------
// Names and enums

Pair parse_pair(std::string_view s) {
  if (s == "ad-ctl") return Pair::AdCtl;
  if (s == "pd-ctl") return Pair::PdCtl;
  if (s == "pd-pdm") return Pair::PdPdm;
  throw Error(ErrorCode::InvalidConfig, "unknown pair '" + std::string(s) + "'");
}

std::string_view pair_name(Pair p) {
  switch (p) {
    case Pair::AdCtl: return "ad-ctl";
    case Pair::PdCtl: return "pd-ctl";
    case Pair::PdPdm: return "pd-pdm";
  }
  return "?";
}

telemetry::Group positive_group(Pair p) {
  switch (p) {
    case Pair::AdCtl: return telemetry::Group::AD;
    case Pair::PdCtl: return telemetry::Group::PD;
    case Pair::PdPdm: return telemetry::Group::PD;
  }
  return telemetry::Group::AD;
}

telemetry::Group negative_group(Pair p) {
  switch (p) {
    case Pair::AdCtl: return telemetry::Group::CTL;
    case Pair::PdCtl: return telemetry::Group::CTL;
    case Pair::PdPdm: return telemetry::Group::PDM;
  }
  return telemetry::Group::CTL;
}

PipelineKind parse_pipeline(std::string_view s) {
  if (s == "fixed") return PipelineKind::Fixed;
  if (s == "frames") return PipelineKind::Frames;
  throw Error(ErrorCode::InvalidConfig, "unknown pipeline '" + std::string(s) + "'");
}

ModelKind parse_model(std::string_view s) {
  if (s == "cnn") return ModelKind::Cnn;
  if (s == "cnn-blstm") return ModelKind::CnnBlstm;
  throw Error(ErrorCode::InvalidConfig, "unknown model '" + std::string(s) + "'");
}

std::string_view pipeline_name(PipelineKind k) {
  return k == PipelineKind::Fixed ? "fixed" : "frames";
}

std::string_view model_name(ModelKind k) { return k == ModelKind::Cnn ? "cnn" : "cnn-blstm"; }

// ---------------------------------------------------------------------------
// Folds

FoldPlan make_folds(const std::vector<std::pair<std::string, telemetry::Group>>& subjects, int k,
                    uint64_t seed) {
  if (k < 2) {
    throw Error(ErrorCode::InvalidConfig, "need at least 2 folds");
  }
  if (static_cast<int>(subjects.size()) < k) {
    throw Error(ErrorCode::TooFewSubjects,
                std::to_string(subjects.size()) + " subjects for " + std::to_string(k) + " folds");
  }

  FoldPlan plan;
  plan.k = k;
  plan.folds.assign(static_cast<size_t>(k), {});

  Rng rng(seed);
  size_t cursor = 0;
  for (int g = 0; g < 4; ++g) {
    std::vector<std::string> ids;
    for (const auto& [id, group] : subjects) {
      if (static_cast<int>(group) == g) ids.push_back(id);
    }
    rng.shuffle(ids);
    for (std::string& id : ids) {
      plan.folds[cursor % static_cast<size_t>(k)].push_back(std::move(id));
      ++cursor;
    }
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Metrics

Metrics metrics_from_counts(long tp, long fp, long tn, long fn) {
  Metrics m;
  m.tp = tp;
  m.fp = fp;
  m.tn = tn;
  m.fn = fn;
  const long n = tp + fp + tn + fn;
  if (n > 0) m.accuracy = 100.0 * static_cast<double>(tp + tn) / static_cast<double>(n);
  if (tp + fp > 0) m.precision = 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fp);
  if (tp + fn > 0) m.recall = 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (m.precision.has_value() && m.recall.has_value() && (*m.precision + *m.recall) > 0.0) {
    m.f1 = 2.0 * (*m.precision) * (*m.recall) / (*m.precision + *m.recall);
  }
  return m;
}

std::optional<double> auc_percent(const std::vector<double>& scores, const std::vector<int>& labels) {
  const size_t n = scores.size();
  if (n != labels.size()) {
    throw Error(ErrorCode::ShapeMismatch, "auc: scores/labels size mismatch");
  }
  long n1 = 0;
  for (int l : labels) n1 += l == 1 ? 1 : 0;
  const long n0 = static_cast<long>(n) - n1;
  if (n1 == 0 || n0 == 0) return std::nullopt;

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based average rank
    for (size_t t = i; t < j; ++t) {
      if (labels[order[t]] == 1) rank_sum_pos += avg_rank;
    }
    i = j;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n1) * static_cast<double>(n1 + 1);
  return 100.0 * u / (static_cast<double>(n1) * static_cast<double>(n0));
}

// ---------------------------------------------------------------------------
// Data preparation

std::vector<SpecSample> compute_spectrograms(const telemetry::Manifest& manifest, const Pair* pair,
                                             const std::vector<std::string>& channels,
                                             const dsp::StftConfig& stft,
                                             const std::set<telemetry::Task>* task_filter,
                                             const std::filesystem::path* cache_dir) {

  bool cache_ok = false;
  if (cache_dir != nullptr) {
    const uint64_t hash = pipeline_cache_hash(channels, stft, manifest);
    const std::filesystem::path meta_path = *cache_dir / "cache_meta.json";
    if (std::filesystem::exists(meta_path)) {
      try {
        std::ifstream meta_in(meta_path);
        nlohmann::json meta = nlohmann::json::parse(meta_in);
        cache_ok = meta.value("hash", "") == hex64(hash);
      } catch (...) {
        cache_ok = false;
      }
    }
    if (!cache_ok) {
      std::error_code ec;
      std::filesystem::create_directories(*cache_dir, ec);
      if (ec) {
        throw Error(ErrorCode::IoError, "cannot create cache dir '" + cache_dir->string() + "'");
      }
      std::ofstream meta_out(meta_path, std::ios::binary);
      nlohmann::json meta;
      meta["hash"] = hex64(hash);
      meta_out << meta.dump() << "\n";
    }
  }

  std::vector<SpecSample> specs;
  for (size_t idx = 0; idx < manifest.entries.size(); ++idx) {
    const telemetry::ManifestEntry& entry = manifest.entries[idx];
    if (pair != nullptr && entry.group != positive_group(*pair) && entry.group != negative_group(*pair)) {
      continue;
    }
    if (task_filter != nullptr && task_filter->find(entry.task) == task_filter->end()) continue;

    SpecSample s;
    s.subject_id = entry.subject_id;
    s.group = entry.group;
    s.task = entry.task;

    const std::filesystem::path cache_file =
        cache_dir != nullptr ? *cache_dir / (std::to_string(idx) + ".spec") : std::filesystem::path();
    if (cache_ok && std::filesystem::exists(cache_file)) {
      s.ms = dsp::load_multispectrogram(cache_file, stft);
    } else {
      const telemetry::Recording rec = telemetry::load_recording(entry.data_path, entry);
      const telemetry::ChannelSet ch = telemetry::derive_channels(rec);
      s.ms = dsp::build_multispectrogram(ch, channels, stft);
      if (cache_dir != nullptr) dsp::save_multispectrogram(cache_file, s.ms);
    }
    specs.push_back(std::move(s));
  }
  return specs;
}

namespace {

void normalize_channels(dsp::MultiSpectrogram& ms) {
  const size_t plane = static_cast<size_t>(ms.bins) * ms.cols;
  for (int c = 0; c < ms.channel_count(); ++c) {
    float* data = ms.values.data() + static_cast<size_t>(c) * plane;
    double sum = 0.0;
    for (size_t i = 0; i < plane; ++i) sum += data[i];
    const double mean = sum / static_cast<double>(plane);
    double var = 0.0;
    for (size_t i = 0; i < plane; ++i) {
      const double d = data[i] - mean;
      var += d * d;
    }
    const double stddev = std::sqrt(var / static_cast<double>(plane));
    const double inv = 1.0 / (stddev + 1e-6);
    for (size_t i = 0; i < plane; ++i) {
      data[i] = static_cast<float>((data[i] - mean) * inv);
    }
  }
}

Tensor<float> to_tensor(const dsp::MultiSpectrogram& ms) {
  Tensor<float> t({ms.channel_count(), ms.bins, ms.cols});
  std::copy(ms.values.begin(), ms.values.end(), t.data.begin());
  return t;
}

}  // namespace

PreparedCohort assemble_cohort(const std::vector<SpecSample>& specs, Pair pair,
                               const PipelineConfig& pipeline) {
  const telemetry::Group pos = positive_group(pair);
  PreparedCohort cohort;
  cohort.kind = pipeline.kind;

  for (const SpecSample& spec : specs) {
    PreparedSample sample;
    sample.subject_id = spec.subject_id;
    sample.group = spec.group;
    sample.task = spec.task;
    sample.label = spec.group == pos ? 1 : 0;

    dsp::MultiSpectrogram ms = spec.ms;
    if (pipeline.normalize) normalize_channels(ms);

    if (pipeline.kind == PipelineKind::Fixed) {
      const dsp::MultiSpectrogram fitted = dsp::fit_fixed_size(ms, pipeline.fixed_cols);
      sample.fixed = to_tensor(fitted);
      cohort.input_width = pipeline.fixed_cols;
    } else {
      const dsp::FrameStack fs = dsp::frame_decompose(ms, pipeline.window);
      sample.frames.reserve(fs.frames.size());
      for (const std::vector<float>& frame : fs.frames) {
        Tensor<float> t({fs.channels, fs.bins, fs.frame_cols});
        std::copy(frame.begin(), frame.end(), t.data.begin());
        sample.frames.push_back(std::move(t));
      }
      if (cohort.input_width != 0 && cohort.input_width != fs.frame_cols) {
        throw Error(ErrorCode::ShapeMismatch, "inconsistent frame widths across cohort");
      }
      cohort.input_width = fs.frame_cols;
    }

    if (cohort.in_channels == 0) {
      cohort.in_channels = spec.ms.channel_count();
      cohort.bins = spec.ms.bins;
      cohort.channel_names = spec.ms.channels;
    }
    cohort.samples.push_back(std::move(sample));
  }

  std::set<std::string> seen;
  for (const PreparedSample& s : cohort.samples) {
    if (seen.insert(s.subject_id).second) {
      cohort.subjects.emplace_back(s.subject_id, s.group);
    }
  }
  return cohort;
}

// ---------------------------------------------------------------------------
// Models

AnyModel build_model(ModelKind kind, const PreparedCohort& cohort, int fc_hidden, uint64_t seed) {
  micronet::CnnConfig cfg;
  cfg.in_channels = cohort.in_channels;
  cfg.input_height = cohort.bins;
  cfg.input_width = cohort.input_width;
  cfg.fc_hidden = fc_hidden;
  if (kind == ModelKind::Cnn) {
    return micronet::CnnModel<float>::build(cfg, seed);
  }
  micronet::BlstmConfig blstm;
  return micronet::CnnBlstmModel<float>::build(cfg, blstm, seed);
}

std::vector<micronet::ParamRef<float>> model_params(AnyModel& model) {
  return std::visit([](auto& m) { return m.params(); }, model);
}

std::string model_description(const AnyModel& model) {
  return std::visit([](const auto& m) { return m.describe(); }, model);
}

std::vector<float> model_forward(const AnyModel& model, const PreparedSample& sample,
                                 PipelineKind kind) {
  return std::visit(
      [&](const auto& m) -> std::vector<float> {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, micronet::CnnModel<float>>) {
          if (kind == PipelineKind::Fixed) return m.forward(sample.fixed);
          return m.forward_frames(sample.frames);
        } else {
          return m.forward_frames(sample.frames);
        }
      },
      model);
}

// ---------------------------------------------------------------------------
// Training

TrainOutcome train_model(AnyModel& model, const PreparedCohort& cohort,
                         const std::vector<int>& train_idx, const std::vector<int>& val_idx,
                         const TrainPolicy& policy, uint64_t shuffle_seed) {
  if (train_idx.empty() || val_idx.empty()) {
    throw Error(ErrorCode::TooFewSubjects, "train and validation sets must be non-empty");
  }

  std::vector<micronet::ParamRef<float>> params = model_params(model);
  micronet::Adam<float> adam;
  adam.lr = policy.lr;
  adam.attach(params);

  GradVec<float> grads = make_zero_grads(model);
  std::vector<Tensor<float>> best_params;
  best_params.reserve(params.size());
  for (const auto& p : params) best_params.push_back(*p.tensor);

  Rng shuffle_rng(shuffle_seed);
  std::vector<int> order = train_idx;

  TrainOutcome out;
  double best_val = std::numeric_limits<double>::infinity();
  int sched_counter = 0;
  int stop_counter = 0;
  int firings = 0;

  for (int epoch = 1; epoch <= policy.max_epochs; ++epoch) {
    adam.lr = policy.lr * std::pow(policy.sched_factor, firings);
    shuffle_rng.shuffle(order);

    double train_loss_sum = 0.0;
    size_t i = 0;
    while (i < order.size()) {
      const size_t batch_end = std::min(i + static_cast<size_t>(policy.batch_size), order.size());
      for (Tensor<float>& g : grads) g.zero();
      for (size_t j = i; j < batch_end; ++j) {
        train_loss_sum +=
            train_example(model, cohort.samples[static_cast<size_t>(order[j])], cohort.kind, grads);
      }
      const float inv = 1.0f / static_cast<float>(batch_end - i);
      for (Tensor<float>& g : grads) {
        for (float& v : g.data) v *= inv;
      }
      adam.step(params, grads);
      i = batch_end;
    }

    double val_loss = 0.0;
    for (int idx : val_idx) {
      val_loss += checked_loss(model, cohort.samples[static_cast<size_t>(idx)], cohort.kind);
    }
    val_loss /= static_cast<double>(val_idx.size());

    out.curve.push_back(
        {epoch, train_loss_sum / static_cast<double>(order.size()), val_loss, adam.lr});

    if (best_val - val_loss > policy.min_delta) {
      best_val = val_loss;
      out.best_epoch = epoch;
      for (size_t p = 0; p < params.size(); ++p) best_params[p] = *params[p].tensor;
      sched_counter = 0;
      stop_counter = 0;
    } else {
      ++sched_counter;
      ++stop_counter;
      if (sched_counter >= policy.sched_patience) {
        ++firings;
        sched_counter = 0;
      }
      if (stop_counter >= policy.stop_patience) break;
    }
  }

  for (size_t p = 0; p < params.size(); ++p) *params[p].tensor = best_params[p];
  out.best_val_loss = best_val;
  out.lr_firings = firings;
  return out;
}

FoldResult evaluate(const AnyModel& model, const PreparedCohort& cohort,
                    const std::vector<int>& test_idx) {
  if (test_idx.empty()) {
    throw Error(ErrorCode::EmptyTestSet, "evaluate: empty test set");
  }
  FoldResult result;
  long tp = 0, fp = 0, tn = 0, fn = 0;
  for (int idx : test_idx) {
    const PreparedSample& sample = cohort.samples[static_cast<size_t>(idx)];
    const std::vector<float> logits = model_forward(model, sample, cohort.kind);
    const std::vector<double> probs = micronet::softmax(logits);
    const int pred = probs[1] > probs[0] ? 1 : 0;
    result.scores.push_back(probs[1]);
    result.labels.push_back(sample.label);
    if (sample.label == 1) {
      pred == 1 ? ++tp : ++fn;
    } else {
      pred == 1 ? ++fp : ++tn;
    }
  }
  result.metrics = metrics_from_counts(tp, fp, tn, fn);
  result.metrics.auc = auc_percent(result.scores, result.labels);
  return result;
}

// ---------------------------------------------------------------------------
// Cross-validation

EvalReport run_cv(const PreparedCohort& cohort, Pair pair, ModelKind model,
                  const TrainPolicy& policy, uint64_t seed, int k, int jobs) {
  if (model == ModelKind::CnnBlstm && cohort.kind == PipelineKind::Fixed) {
    throw Error(ErrorCode::InvalidConfig, "cnn-blstm requires the frames pipeline");
  }
  const FoldPlan plan = make_folds(cohort.subjects, k, seed);

  std::vector<FoldResult> results(static_cast<size_t>(k));
  std::vector<std::string> descriptions(static_cast<size_t>(k));

  auto run_fold = [&](int fold) {
    std::set<std::string> test_subjects(plan.folds[static_cast<size_t>(plan.test_fold(fold))].begin(),
                                        plan.folds[static_cast<size_t>(plan.test_fold(fold))].end());
    std::set<std::string> val_subjects(plan.folds[static_cast<size_t>(plan.val_fold(fold))].begin(),
                                       plan.folds[static_cast<size_t>(plan.val_fold(fold))].end());

    std::vector<int> train_idx, val_idx, test_idx;
    for (size_t i = 0; i < cohort.samples.size(); ++i) {
      const std::string& subject = cohort.samples[i].subject_id;
      if (test_subjects.count(subject) != 0) {
        test_idx.push_back(static_cast<int>(i));
      } else if (val_subjects.count(subject) != 0) {
        val_idx.push_back(static_cast<int>(i));
      } else {
        train_idx.push_back(static_cast<int>(i));
      }
    }

    // Leakage guard: one subject must never straddle split boundaries.
    for (const std::string& s : test_subjects) {
      if (val_subjects.count(s) != 0) {
        throw Error(ErrorCode::InvalidConfig, "fold plan places subject in test and val");
      }
    }

    AnyModel fold_model = build_model(model, cohort, 128, derive_seed(seed, 1, static_cast<uint64_t>(fold)));
    const TrainOutcome outcome = train_model(fold_model, cohort, train_idx, val_idx, policy,
                                             derive_seed(seed, 2, static_cast<uint64_t>(fold)));
    FoldResult r = evaluate(fold_model, cohort, test_idx);
    r.fold = fold;
    r.curve = outcome.curve;
    r.best_epoch = outcome.best_epoch;
    r.lr_firings = outcome.lr_firings;
    results[static_cast<size_t>(fold)] = std::move(r);
    descriptions[static_cast<size_t>(fold)] = model_description(fold_model);
  };

  const int workers = std::max(1, std::min(jobs, k));
  if (workers <= 1) {
    for (int fold = 0; fold < k; ++fold) run_fold(fold);
  } else {
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      threads.emplace_back([&, w]() {
        try {
          for (int fold = w; fold < k; fold += workers) run_fold(fold);
        } catch (...) {
          errors[static_cast<size_t>(w)] = std::current_exception();
        }
      });
    }
    for (std::thread& t : threads) t.join();
    for (const std::exception_ptr& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  EvalReport report;
  report.pair_label = std::string(pair_name(pair));
  report.model_label = std::string(model_name(model));
  report.pipeline_label = std::string(pipeline_name(cohort.kind));
  report.channels = cohort.channel_names;
  report.seed = seed;
  report.model_description = descriptions.empty() ? "" : descriptions[0];
  report.folds = std::move(results);

  long tp = 0, fp = 0, tn = 0, fn = 0;
  std::vector<double> pooled_scores;
  std::vector<int> pooled_labels;
  for (const FoldResult& r : report.folds) {
    tp += r.metrics.tp;
    fp += r.metrics.fp;
    tn += r.metrics.tn;
    fn += r.metrics.fn;
    pooled_scores.insert(pooled_scores.end(), r.scores.begin(), r.scores.end());
    pooled_labels.insert(pooled_labels.end(), r.labels.begin(), r.labels.end());
  }
  report.pooled = metrics_from_counts(tp, fp, tn, fn);
  report.pooled.auc = auc_percent(pooled_scores, pooled_labels);

  auto mean_of = [&](auto getter) -> std::optional<double> {
    double sum = 0.0;
    int count = 0;
    for (const FoldResult& r : report.folds) {
      const std::optional<double> v = getter(r.metrics);
      if (v.has_value()) {
        sum += *v;
        ++count;
      }
    }
    if (count == 0) return std::nullopt;
    return sum / count;
  };
  report.fold_mean.accuracy = mean_of([](const Metrics& m) { return m.accuracy; });
  report.fold_mean.precision = mean_of([](const Metrics& m) { return m.precision; });
  report.fold_mean.recall = mean_of([](const Metrics& m) { return m.recall; });
  report.fold_mean.f1 = mean_of([](const Metrics& m) { return m.f1; });
  report.fold_mean.auc = mean_of([](const Metrics& m) { return m.auc; });
  return report;
}

// ---------------------------------------------------------------------------
// Sweeps

std::vector<SweepRow> sweep_windows(const telemetry::Manifest& manifest, Pair pair,
                                    const std::vector<ModelKind>& models,
                                    const std::vector<dsp::WindowSpec>& windows,
                                    const PipelineConfig& base, const TrainPolicy& policy,
                                    uint64_t seed, int k, int jobs,
                                    const std::filesystem::path* cache_dir) {
  if (models.empty() || windows.empty()) {
    throw Error(ErrorCode::InvalidConfig, "window sweep needs at least one model and window");
  }
  const std::vector<SpecSample> specs =
      compute_spectrograms(manifest, &pair, base.channels, base.stft, nullptr, cache_dir);

  std::vector<SweepRow> rows;
  for (ModelKind model : models) {
    for (const dsp::WindowSpec& window : windows) {
      PipelineConfig pc = base;
      pc.kind = PipelineKind::Frames;
      pc.window = window;
      const PreparedCohort cohort = assemble_cohort(specs, pair, pc);
      SweepRow row;
      row.label = std::string(model_name(model)) + "/" + dsp::window_label(window);
      row.report = run_cv(cohort, pair, model, policy, seed, k, jobs);
      row.report.window = dsp::window_label(window);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::vector<std::vector<std::string>> channel_combinations() {
  return {
      {"x", "y", "p"},
      {"traj", "p"},
      {"vx", "vy", "p"},
      {"speed", "p"},
      {"acc", "p"},
      {"traj", "vx", "vy", "p"},
      {"traj", "acc", "p"},
      {"speed", "vx", "vy", "p"},
      {"acc", "vx", "vy", "p"},
      {"speed", "acc", "vx", "vy", "p"},
  };
}

std::vector<SweepRow> sweep_channels(const telemetry::Manifest& manifest, Pair pair,
                                     const std::vector<std::vector<std::string>>& combinations,
                                     const PipelineConfig& base, const TrainPolicy& policy,
                                     uint64_t seed, int k, int jobs,
                                     const std::filesystem::path* cache_dir) {
  std::set<std::string> seen;
  for (const auto& combo : combinations) {
    if (!seen.insert(join(combo, ",")).second) {
      throw Error(ErrorCode::DuplicateCombination, "duplicate combination " + join(combo, ","));
    }
  }

  std::vector<SweepRow> rows;
  for (const auto& combo : combinations) {
    PipelineConfig pc = base;
    pc.channels = combo;
    pc.kind = PipelineKind::Fixed;

    std::filesystem::path combo_cache;
    const std::filesystem::path* combo_cache_ptr = nullptr;
    if (cache_dir != nullptr) {
      combo_cache = *cache_dir / hex64(fnv1a64(join(combo, ",")));
      combo_cache_ptr = &combo_cache;
    }
    const std::vector<SpecSample> specs =
        compute_spectrograms(manifest, &pair, combo, base.stft, nullptr, combo_cache_ptr);
    const PreparedCohort cohort = assemble_cohort(specs, pair, pc);

    SweepRow row;
    row.label = join(combo, ",");
    row.report = run_cv(cohort, pair, ModelKind::Cnn, policy, seed, k, jobs);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<TaskRow> task_rows() {
  using telemetry::Task;
  std::vector<TaskRow> rows;
  auto single = [&](Task t) {
    rows.push_back({std::string(telemetry::task_name(t)), {t}});
  };
  single(Task::SpiralPataka);
  single(Task::SpiralRight);
  single(Task::SpiralLeft);
  rows.push_back({"SpiralTasks", {Task::SpiralPataka, Task::SpiralRight, Task::SpiralLeft}});
  single(Task::PointSustained);
  single(Task::PointRight);
  single(Task::PointLeft);
  rows.push_back({"PointTasks", {Task::PointSustained, Task::PointRight, Task::PointLeft}});
  single(Task::CopyText);
  single(Task::CopyReadText);
  single(Task::FreeWrite);
  single(Task::Numbers);
  rows.push_back({"WritingTasks", {Task::CopyText, Task::CopyReadText, Task::FreeWrite, Task::Numbers}});
  single(Task::CopyImage);
  single(Task::CopyImageMemory);
  single(Task::CopyCube);
  single(Task::DrawClock);
  rows.push_back(
      {"DrawingTasks", {Task::CopyImage, Task::CopyImageMemory, Task::CopyCube, Task::DrawClock}});
  return rows;
}

std::vector<SweepRow> sweep_tasks(const telemetry::Manifest& manifest, Pair pair,
                                  const PipelineConfig& base, const TrainPolicy& policy,
                                  uint64_t seed, int k, int jobs,
                                  const std::filesystem::path* cache_dir) {
  const std::vector<SpecSample> specs =
      compute_spectrograms(manifest, &pair, base.channels, base.stft, nullptr, cache_dir);

  std::vector<SweepRow> rows;
  for (const TaskRow& task_row : task_rows()) {
    std::vector<SpecSample> subset;
    for (const SpecSample& s : specs) {
      if (task_row.tasks.count(s.task) != 0) subset.push_back(s);
    }
    if (subset.empty()) {
      throw Error(ErrorCode::EmptyTaskSubset, "no recordings for task row '" + task_row.label + "'");
    }
    PipelineConfig pc = base;
    const PreparedCohort cohort = assemble_cohort(subset, pair, pc);

    SweepRow row;
    row.label = task_row.label;
    row.report = run_cv(cohort, pair, ModelKind::Cnn, policy, seed, k, jobs);
    row.report.task_filter = task_row.label;
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Report emission

namespace {

nlohmann::json report_metadata_json(const EvalReport& report, const std::string& config_hash,
                                    const std::string& version) {
  nlohmann::json meta;
  meta["type"] = "metadata";
  meta["config_hash"] = config_hash;
  meta["seed"] = report.seed;
  meta["version"] = version;
  meta["pair"] = report.pair_label;
  meta["model"] = report.model_label;
  meta["pipeline"] = report.pipeline_label;
  meta["window"] = report.window;
  meta["task_filter"] = report.task_filter;
  meta["channels"] = report.channels;
  meta["model_description"] = report.model_description;
  return meta;
}

nlohmann::json fold_json(const FoldResult& fold) {
  nlohmann::json j = metrics_to_json(fold.metrics, true);
  j["type"] = "fold";
  j["fold"] = fold.fold;
  j["best_epoch"] = fold.best_epoch;
  j["lr_firings"] = fold.lr_firings;
  j["epochs"] = fold.curve.size();
  nlohmann::json curve = nlohmann::json::array();
  for (const EpochLog& e : fold.curve) {
    curve.push_back({e.epoch, e.train_loss, e.val_loss, e.lr});
  }
  j["curve"] = curve;
  return j;
}

}  // namespace

std::string report_to_jsonl(const EvalReport& report, const std::string& config_hash,
                            const std::string& version) {
  std::ostringstream os;
  os << report_metadata_json(report, config_hash, version).dump() << "\n";
  for (const FoldResult& fold : report.folds) {
    os << fold_json(fold).dump() << "\n";
  }
  nlohmann::json pooled = metrics_to_json(report.pooled, true);
  pooled["type"] = "pooled";
  os << pooled.dump() << "\n";
  nlohmann::json fold_mean = metrics_to_json(report.fold_mean, false);
  fold_mean["type"] = "fold_mean";
  os << fold_mean.dump() << "\n";
  return os.str();
}

std::string sweep_to_jsonl(const std::vector<SweepRow>& rows, const std::string& sweep_name,
                           const std::string& config_hash, const std::string& version) {
  std::ostringstream os;
  nlohmann::json meta;
  meta["type"] = "metadata";
  meta["sweep"] = sweep_name;
  meta["config_hash"] = config_hash;
  meta["version"] = version;
  if (!rows.empty()) {
    meta["pair"] = rows[0].report.pair_label;
    meta["seed"] = rows[0].report.seed;
  }
  os << meta.dump() << "\n";
  for (const SweepRow& row : rows) {
    nlohmann::json j;
    j["type"] = "row";
    j["label"] = row.label;
    j["model"] = row.report.model_label;
    j["window"] = row.report.window;
    j["task_filter"] = row.report.task_filter;
    j["channels"] = row.report.channels;
    j["pooled"] = metrics_to_json(row.report.pooled, true);
    j["fold_mean"] = metrics_to_json(row.report.fold_mean, false);
    nlohmann::json folds = nlohmann::json::array();
    for (const FoldResult& fold : row.report.folds) {
      folds.push_back(metrics_to_json(fold.metrics, true));
    }
    j["per_fold"] = folds;
    os << j.dump() << "\n";
  }
  return os.str();
}

std::string format_report_table(const EvalReport& report) {
  std::ostringstream os;
  os << "pair=" << report.pair_label << " model=" << report.model_label
     << " pipeline=" << report.pipeline_label;
  if (!report.window.empty()) os << " window=" << report.window;
  if (!report.task_filter.empty()) os << " tasks=" << report.task_filter;
  os << " channels=" << join(report.channels, ",") << " seed=" << report.seed << "\n";
  os << report.model_description << "\n";

  char line[256];
  std::snprintf(line, sizeof(line), "%-8s %9s %9s %9s %9s %9s %5s %5s %5s %5s %7s\n", "fold",
                "acc", "prec", "recall", "f1", "auc", "tp", "fp", "tn", "fn", "epochs");
  os << line;
  for (const FoldResult& fold : report.folds) {
    std::snprintf(line, sizeof(line), "%-8d %9s %9s %9s %9s %9s %5ld %5ld %5ld %5ld %7zu\n",
                  fold.fold, format_pct(fold.metrics.accuracy).c_str(),
                  format_pct(fold.metrics.precision).c_str(), format_pct(fold.metrics.recall).c_str(),
                  format_pct(fold.metrics.f1).c_str(), format_pct(fold.metrics.auc).c_str(),
                  fold.metrics.tp, fold.metrics.fp, fold.metrics.tn, fold.metrics.fn,
                  fold.curve.size());
    os << line;
  }
  std::snprintf(line, sizeof(line), "%-8s %9s %9s %9s %9s %9s %5ld %5ld %5ld %5ld\n", "pooled",
                format_pct(report.pooled.accuracy).c_str(), format_pct(report.pooled.precision).c_str(),
                format_pct(report.pooled.recall).c_str(), format_pct(report.pooled.f1).c_str(),
                format_pct(report.pooled.auc).c_str(), report.pooled.tp, report.pooled.fp,
                report.pooled.tn, report.pooled.fn);
  os << line;
  std::snprintf(line, sizeof(line), "%-8s %9s %9s %9s %9s %9s\n", "mean",
                format_pct(report.fold_mean.accuracy).c_str(),
                format_pct(report.fold_mean.precision).c_str(),
                format_pct(report.fold_mean.recall).c_str(), format_pct(report.fold_mean.f1).c_str(),
                format_pct(report.fold_mean.auc).c_str());
  os << line;
  return os.str();
}

std::string format_sweep_table(const std::vector<SweepRow>& rows, const std::string& sweep_name) {
  std::ostringstream os;
  os << "sweep=" << sweep_name;
  if (!rows.empty()) os << " pair=" << rows[0].report.pair_label << " seed=" << rows[0].report.seed;
  os << "\n";

  size_t best = rows.size();
  double best_f1 = -1.0;
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].report.pooled.f1.has_value() && *rows[i].report.pooled.f1 > best_f1) {
      best_f1 = *rows[i].report.pooled.f1;
      best = i;
    }
  }

  char line[256];
  std::snprintf(line, sizeof(line), "%-28s %9s %9s %9s %9s %9s %s\n", "row", "acc", "prec",
                "recall", "f1", "auc", "");
  os << line;
  for (size_t i = 0; i < rows.size(); ++i) {
    const Metrics& m = rows[i].report.pooled;
    std::snprintf(line, sizeof(line), "%-28s %9s %9s %9s %9s %9s %s\n", rows[i].label.c_str(),
                  format_pct(m.accuracy).c_str(), format_pct(m.precision).c_str(),
                  format_pct(m.recall).c_str(), format_pct(m.f1).c_str(), format_pct(m.auc).c_str(),
                  i == best ? "*" : "");
    os << line;
  }
  return os.str();
}

}  // namespace graphocog::harness
