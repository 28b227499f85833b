#include "graphocog/synth.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

namespace graphocog::synth {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Sinusoid {
  double freq = 0.0;
  double amp = 0.0;
  double phase = 0.0;
};

std::vector<Sinusoid> draw_base_components(Rng& rng, int count) {
  std::vector<Sinusoid> parts(static_cast<size_t>(count));
  for (Sinusoid& s : parts) {
    s.freq = rng.uniform(0.05, 0.6);
    s.amp = rng.uniform(0.3, 0.9);
    s.phase = rng.uniform(0.0, kTwoPi);
  }
  return parts;
}

double eval_components(const std::vector<Sinusoid>& parts, double t) {
  double v = 0.0;
  for (const Sinusoid& s : parts) v += s.amp * std::sin(kTwoPi * s.freq * t + s.phase);
  return v;
}

// Goertzel power at one frequency.
double tone_power(const std::vector<double>& x, double freq_hz, double rate_hz) {
  const double omega = kTwoPi * freq_hz / rate_hz;
  const double coeff = 2.0 * std::cos(omega);
  double s_prev = 0.0;
  double s_prev2 = 0.0;
  for (double v : x) {
    const double s = v + coeff * s_prev - s_prev2;
    s_prev2 = s_prev;
    s_prev = s;
  }
  return s_prev * s_prev + s_prev2 * s_prev2 - coeff * s_prev * s_prev2;
}

double band_power(const std::vector<double>& x, double lo_hz, double hi_hz, double rate_hz) {
  double total = 0.0;
  for (double f = lo_hz; f <= hi_hz + 1e-9; f += 0.5) total += tone_power(x, f, rate_hz);
  return total;
}

struct ProbeFeatures {
  double pd_band = 0.0;   // vx energy fraction in 3.5-6.5 Hz
  double pdm_band = 0.0;  // vx energy fraction in 1.5-4.5 Hz
  double p_wander = 0.0;  // std of pressure increments
  double mean_speed = 0.0;
};

ProbeFeatures probe_features(const telemetry::ChannelSet& ch, double rate_hz) {
  ProbeFeatures f;
  const double reference = band_power(ch.vx, 0.5, 8.0, rate_hz) + 1e-12;
  f.pd_band = band_power(ch.vx, 3.5, 6.5, rate_hz) / reference;
  f.pdm_band = band_power(ch.vx, 1.5, 4.5, rate_hz) / reference;

  double sum = 0.0;
  double sum_sq = 0.0;
  size_t n_inc = 0;
  for (size_t i = 1; i < ch.p.size(); ++i) {
    const double d = ch.p[i] - ch.p[i - 1];
    sum += d;
    sum_sq += d * d;
    ++n_inc;
  }
  if (n_inc > 1) {
    const double mean = sum / static_cast<double>(n_inc);
    f.p_wander = std::sqrt(std::max(0.0, sum_sq / static_cast<double>(n_inc) - mean * mean));
  }

  double speed_sum = 0.0;
  for (double v : ch.speed) speed_sum += v;
  f.mean_speed = speed_sum / static_cast<double>(ch.speed.size());
  return f;
}

double standardized_diff(const std::vector<double>& a, const std::vector<double>& b) {
  auto stats = [](const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size() > 1 ? v.size() - 1 : 1);
    return std::pair<double, double>(mean, var);
  };
  const auto [ma, va] = stats(a);
  const auto [mb, vb] = stats(b);
  return std::abs(ma - mb) / std::sqrt(0.5 * (va + vb) + 1e-12);
}

}  // namespace

std::filesystem::path generate_cohort(const CohortSpec& spec, const std::filesystem::path& out_dir) {
  if (spec.ctl_subjects < 0 || spec.pd_subjects < 0 || spec.pdm_subjects < 0 ||
      spec.ad_subjects < 0 || spec.tasks.empty()) {
    throw Error(ErrorCode::InvalidConfig, "bad cohort spec");
  }
  if (spec.duration_lo_s <= 0.0 || spec.duration_hi_s < spec.duration_lo_s ||
      spec.sample_rate_hz <= 0.0) {
    throw Error(ErrorCode::InvalidConfig, "bad duration/rate in cohort spec");
  }

  std::error_code ec;
  std::filesystem::create_directories(out_dir / "data", ec);
  if (ec) {
    throw Error(ErrorCode::IoError, "cannot create '" + (out_dir / "data").string() + "': " + ec.message());
  }

  const std::filesystem::path manifest_path = out_dir / "manifest.jsonl";
  std::ofstream manifest(manifest_path, std::ios::binary);
  if (!manifest) {
    throw Error(ErrorCode::IoError, "cannot write '" + manifest_path.string() + "'");
  }

  const std::vector<std::pair<telemetry::Group, int>> groups = {
      {telemetry::Group::CTL, spec.ctl_subjects},
      {telemetry::Group::PD, spec.pd_subjects},
      {telemetry::Group::PDM, spec.pdm_subjects},
      {telemetry::Group::AD, spec.ad_subjects},
  };

  const double dt = 1.0 / spec.sample_rate_hz;
  const double amp = spec.amplitude;
  int subject_index = 0;
  char buf[160];

  for (const auto& [group, count] : groups) {
    for (int s = 0; s < count; ++s, ++subject_index) {
      std::snprintf(buf, sizeof(buf), "S%03d", subject_index + 1);
      const std::string subject_id = buf;

      for (size_t ti = 0; ti < spec.tasks.size(); ++ti) {
        const telemetry::Task task = spec.tasks[ti];
        Rng rng(derive_seed(spec.seed, static_cast<uint64_t>(subject_index), ti));

        const double duration = rng.uniform(spec.duration_lo_s, spec.duration_hi_s);
        const size_t n = std::max<size_t>(2, static_cast<size_t>(std::llround(duration * spec.sample_rate_hz)));

        const std::vector<Sinusoid> base_vx = draw_base_components(rng, 4);
        const std::vector<Sinusoid> base_vy = draw_base_components(rng, 4);

        // Signature parameters are drawn for every recording regardless of
        // group so that the RNG stream advances identically; group masks and
        // the global amplitude decide what is applied.
        const double pd_freq = rng.uniform(4.0, 6.0);
        const double pd_phase_x = rng.uniform(0.0, kTwoPi);
        const double pd_phase_y = rng.uniform(0.0, kTwoPi);
        const double pdm_freq = rng.uniform(2.0, 4.0);
        const double pdm_phase_x = rng.uniform(0.0, kTwoPi);
        const double pdm_phase_y = rng.uniform(0.0, kTwoPi);
        const double p_base = rng.uniform(0.4, 0.6);
        const double p_freq = rng.uniform(0.05, 0.2);
        const double p_phase = rng.uniform(0.0, kTwoPi);
        const double x0 = rng.uniform(0.0, 20.0);
        const double y0 = rng.uniform(0.0, 20.0);

        const double tremor_amp =
            group == telemetry::Group::PD    ? amp * spec.signature.pd_tremor_amp
            : group == telemetry::Group::PDM ? amp * spec.signature.pdm_tremor_amp
                                             : 0.0;
        const double tremor_freq = group == telemetry::Group::PDM ? pdm_freq : pd_freq;
        const double tremor_phase_x = group == telemetry::Group::PDM ? pdm_phase_x : pd_phase_x;
        const double tremor_phase_y = group == telemetry::Group::PDM ? pdm_phase_y : pd_phase_y;
        const double speed_scale =
            group == telemetry::Group::AD ? 1.0 - (1.0 - spec.signature.ad_speed_factor) * amp : 1.0;
        const double wander_sigma =
            group == telemetry::Group::AD ? amp * spec.signature.ad_pressure_sigma : 0.0;
        // Damped random walk with the requested stationary scale.
        const double wander_rho = 0.995;
        const double wander_step = wander_sigma * std::sqrt(1.0 - wander_rho * wander_rho);

        std::snprintf(buf, sizeof(buf), "data/%s_%s.csv", subject_id.c_str(),
                      std::string(telemetry::task_name(task)).c_str());
        const std::string rel_path = buf;
        const std::filesystem::path csv_path = out_dir / rel_path;
        std::ofstream csv(csv_path, std::ios::binary);
        if (!csv) {
          throw Error(ErrorCode::IoError, "cannot write '" + csv_path.string() + "'");
        }
        csv << "t,x,y,p\n";

        double x = x0;
        double y = y0;
        double wander = 0.0;
        for (size_t i = 0; i < n; ++i) {
          const double t = static_cast<double>(i) * dt;
          double vx = speed_scale * (eval_components(base_vx, t) + rng.normal(0.0, 0.02));
          double vy = speed_scale * (eval_components(base_vy, t) + rng.normal(0.0, 0.02));
          const double wander_noise = rng.normal(0.0, 1.0);
          if (tremor_amp > 0.0) {
            vx += tremor_amp * std::sin(kTwoPi * tremor_freq * t + tremor_phase_x);
            vy += tremor_amp * std::sin(kTwoPi * tremor_freq * t + tremor_phase_y);
          }
          if (i > 0) {
            x += vx * dt;
            y += vy * dt;
          }
          wander = wander_rho * wander + wander_step * wander_noise;
          double p = p_base + 0.1 * std::sin(kTwoPi * p_freq * t + p_phase) + wander;
          if (p < 0.0) p = 0.0;

          std::snprintf(buf, sizeof(buf), "%.6f,%.4f,%.4f,%.4f\n", t, x, y, p);
          csv << buf;
        }
        if (!csv) {
          throw Error(ErrorCode::IoError, "short write to '" + csv_path.string() + "'");
        }

        manifest << "{\"subject_id\":\"" << subject_id << "\",\"group\":\""
                 << telemetry::group_name(group) << "\",\"task\":\"" << telemetry::task_name(task)
                 << "\",\"path\":\"" << rel_path << "\"}\n";
      }
    }
  }
  if (!manifest) {
    throw Error(ErrorCode::IoError, "short write to '" + manifest_path.string() + "'");
  }
  return manifest_path;
}

double separability_probe(const telemetry::Manifest& manifest, telemetry::Group positive,
                          telemetry::Group negative) {
  std::vector<double> feats_pos[4];
  std::vector<double> feats_neg[4];

  for (const telemetry::ManifestEntry& entry : manifest.entries) {
    if (entry.group != positive && entry.group != negative) continue;
    const telemetry::Recording rec = telemetry::load_recording(entry.data_path, entry);
    const telemetry::ChannelSet ch = telemetry::derive_channels(rec);
    const ProbeFeatures f = probe_features(ch, rec.sample_rate_hz);
    auto& dst = entry.group == positive ? feats_pos : feats_neg;
    dst[0].push_back(f.pd_band);
    dst[1].push_back(f.pdm_band);
    dst[2].push_back(f.p_wander);
    dst[3].push_back(f.mean_speed);
  }
  if (feats_pos[0].empty() || feats_neg[0].empty()) {
    throw Error(ErrorCode::EmptyTaskSubset, "probe needs recordings from both groups");
  }

  double best = 0.0;
  for (int k = 0; k < 4; ++k) {
    best = std::max(best, standardized_diff(feats_pos[k], feats_neg[k]));
  }
  return best;
}

}  // namespace graphocog::synth
