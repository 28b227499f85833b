#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <filesystem>
#include <numbers>

#include "doctest.h"
#include "graphocog/dsp.hpp"

using namespace graphocog;
using namespace graphocog::dsp;
namespace fs = std::filesystem;

namespace {

// Independent naive STFT oracle: explicit center padding, direct O(N^2) DFT
// per column, classic Blackman coefficients. Kept free of the dsp
// implementation on purpose.
std::vector<std::vector<double>> naive_stft(const std::vector<double>& signal,
                                            const StftConfig& cfg) {
  const int n = static_cast<int>(signal.size());
  const int pad = cfg.window_len / 2;
  const int cols = 1 + n / cfg.hop;
  const int bins = cfg.n_fft / 2 + 1;

  std::vector<double> window(static_cast<size_t>(cfg.window_len));
  for (int k = 0; k < cfg.window_len; ++k) {
    const double a = 2.0 * std::numbers::pi * k / (cfg.window_len - 1);
    window[static_cast<size_t>(k)] = 0.42 - 0.5 * std::cos(a) + 0.08 * std::cos(2.0 * a);
  }

  std::vector<std::vector<double>> out(static_cast<size_t>(bins),
                                       std::vector<double>(static_cast<size_t>(cols), 0.0));
  for (int col = 0; col < cols; ++col) {
    std::vector<double> seg(static_cast<size_t>(cfg.n_fft), 0.0);
    for (int i = 0; i < cfg.window_len; ++i) {
      const int src = col * cfg.hop - pad + i;
      const double v = (src >= 0 && src < n) ? signal[static_cast<size_t>(src)] : 0.0;
      seg[static_cast<size_t>(i)] = v * window[static_cast<size_t>(i)];
    }
    for (int k = 0; k < bins; ++k) {
      double re = 0.0;
      double im = 0.0;
      for (int i = 0; i < cfg.n_fft; ++i) {
        const double phase = -2.0 * std::numbers::pi * k * i / cfg.n_fft;
        re += seg[static_cast<size_t>(i)] * std::cos(phase);
        im += seg[static_cast<size_t>(i)] * std::sin(phase);
      }
      const double mag = std::sqrt(re * re + im * im);
      out[static_cast<size_t>(k)][static_cast<size_t>(col)] = cfg.log_scale ? std::log1p(mag) : mag;
    }
  }
  return out;
}

double rel_diff(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-9});
}

std::vector<double> random_signal(uint64_t seed, size_t n, double scale = 1.0) {
  Rng rng(seed);
  std::vector<double> s(n);
  for (double& v : s) v = rng.normal(0.0, scale);
  return s;
}

MultiSpectrogram random_multispec(uint64_t seed, int c, int bins, int cols) {
  Rng rng(seed);
  MultiSpectrogram ms;
  for (int i = 0; i < c; ++i) ms.channels.push_back("ch" + std::to_string(i));
  ms.bins = bins;
  ms.cols = cols;
  ms.column_duration_s = 0.512;
  ms.values.resize(static_cast<size_t>(c) * bins * cols);
  for (float& v : ms.values) v = static_cast<float>(rng.uniform(0.0, 5.0));
  return ms;
}

}  // namespace

TEST_CASE("blackman window closed-form values") {
  const std::vector<double> w3 = blackman_window(3);
  REQUIRE(w3.size() == 3);
  CHECK(std::abs(w3[0]) <= 1.4e-16);
  CHECK(std::abs(w3[2]) <= 1.4e-16);
  CHECK(w3[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("blackman window symmetry is exact") {
  for (int len : {2, 3, 16, 255, 256, 1001}) {
    const std::vector<double> w = blackman_window(len);
    for (int k = 0; k < len; ++k) {
      CHECK(w[static_cast<size_t>(k)] == w[static_cast<size_t>(len - 1 - k)]);
    }
    CHECK(std::abs(w.front()) <= 1.4e-16);
  }
}

TEST_CASE("blackman 256 sum matches the direct-summation golden constant") {
  // Golden value computed by independent direct summation (Sum over k of
  // 0.42 - 0.5 cos(2 pi k/255) + 0.08 cos(4 pi k/255)) before the build.
  const double golden = 107.1;
  const std::vector<double> w = blackman_window(256);
  double sum = 0.0;
  for (double v : w) sum += v;
  CHECK(std::abs(sum - golden) <= 1e-9 * golden);
}

TEST_CASE("blackman rejects short windows") {
  try {
    blackman_window(1);
    FAIL("expected InvalidLength");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidLength);
  }
}

TEST_CASE("stft column-count law and the paper arithmetic") {
  StftConfig cfg;
  const Spectrogram spec = stft_magnitude(random_signal(1, 8250), cfg);
  CHECK(spec.cols == 65);  // 33 s at 250 Hz
  CHECK(spec.bins == 129);
  CHECK(spec.column_duration_s == doctest::Approx(0.512));

  for (size_t n : {1, 5, 127, 128, 129, 1000, 4096, 9999}) {
    const Spectrogram s = stft_magnitude(random_signal(n, n), cfg);
    CHECK(s.cols == 1 + static_cast<int>(n) / cfg.hop);
  }
}

TEST_CASE("stft of an all-zero signal is all zero") {
  StftConfig cfg;
  const Spectrogram spec = stft_magnitude(std::vector<double>(700, 0.0), cfg);
  for (float v : spec.values) CHECK(v == 0.0f);
}

TEST_CASE("stft rejects empty signals") {
  StftConfig cfg;
  try {
    stft_magnitude({}, cfg);
    FAIL("expected EmptySignal");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptySignal);
  }
}

TEST_CASE("stft config validation") {
  StftConfig cfg;
  cfg.hop = 512;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = StftConfig{};
  cfg.n_fft = 255;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("pure sinusoid concentrates at its bin and matches the naive oracle") {
  StftConfig cfg;
  const double freq = 32.0 * (250.0 / 256.0);  // exactly bin 32
  std::vector<double> signal(2048);
  for (size_t i = 0; i < signal.size(); ++i) {
    signal[i] = std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / 250.0);
  }
  const Spectrogram spec = stft_magnitude(signal, cfg);
  const auto oracle = naive_stft(signal, cfg);

  for (int col = 2; col < spec.cols - 2; ++col) {
    int argmax = 0;
    for (int f = 1; f < spec.bins; ++f) {
      if (spec.at(f, col) > spec.at(argmax, col)) argmax = f;
    }
    CHECK(argmax == 32);
  }
  for (int f = 0; f < spec.bins; ++f) {
    for (int col = 0; col < spec.cols; ++col) {
      CHECK(rel_diff(spec.at(f, col), oracle[static_cast<size_t>(f)][static_cast<size_t>(col)]) <=
            1e-6);
    }
  }
}

TEST_CASE("stft matches the naive oracle on random signals") {
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    StftConfig cfg;
    cfg.log_scale = (seed % 2) == 0;
    const std::vector<double> signal = random_signal(seed, 300 + 137 * seed, 2.0);
    const Spectrogram spec = stft_magnitude(signal, cfg);
    const auto oracle = naive_stft(signal, cfg);
    REQUIRE(spec.cols == static_cast<int>(oracle[0].size()));
    double worst = 0.0;
    for (int f = 0; f < spec.bins; ++f) {
      for (int col = 0; col < spec.cols; ++col) {
        worst = std::max(
            worst, rel_diff(spec.at(f, col), oracle[static_cast<size_t>(f)][static_cast<size_t>(col)]));
      }
    }
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("scaling a signal scales its magnitudes by exactly alpha") {
  StftConfig cfg;
  const std::vector<double> signal = random_signal(3, 900);

  std::vector<double> doubled = signal;
  for (double& v : doubled) v *= 2.0;
  const Spectrogram a = stft_magnitude(signal, cfg);
  const Spectrogram b = stft_magnitude(doubled, cfg);
  REQUIRE(a.values.size() == b.values.size());
  for (size_t i = 0; i < a.values.size(); ++i) {
    CHECK(b.values[i] == 2.0f * a.values[i]);  // power-of-two scaling is exact
  }

  std::vector<double> scaled = signal;
  for (double& v : scaled) v *= 1.7;
  const Spectrogram c = stft_magnitude(scaled, cfg);
  for (size_t i = 0; i < a.values.size(); ++i) {
    CHECK(rel_diff(c.values[i], 1.7 * static_cast<double>(a.values[i])) <= 1e-6);
  }
}

TEST_CASE("parseval-style energy identity at one column") {
  StftConfig cfg;
  cfg.center_pad = true;
  const std::vector<double> signal = random_signal(17, 1200);
  const Spectrogram spec = stft_magnitude(signal, cfg);

  // Recompute the windowed segment of column 4 independently and compare
  // energies through the real-input DFT identity:
  //   sum_n seg[n]^2 = (|X_0|^2 + |X_{N/2}|^2 + 2 sum_{k=1}^{N/2-1} |X_k|^2) / N
  const int col = 4;
  const int pad = cfg.window_len / 2;
  std::vector<double> window(256);
  for (int k = 0; k < 256; ++k) {
    const double a = 2.0 * std::numbers::pi * k / 255.0;
    window[static_cast<size_t>(k)] = 0.42 - 0.5 * std::cos(a) + 0.08 * std::cos(2.0 * a);
  }
  double time_energy = 0.0;
  for (int i = 0; i < cfg.window_len; ++i) {
    const int src = col * cfg.hop - pad + i;
    const double v =
        (src >= 0 && src < static_cast<int>(signal.size())) ? signal[static_cast<size_t>(src)] : 0.0;
    const double seg = v * window[static_cast<size_t>(i)];
    time_energy += seg * seg;
  }
  double freq_energy = static_cast<double>(spec.at(0, col)) * spec.at(0, col) +
                       static_cast<double>(spec.at(128, col)) * spec.at(128, col);
  for (int k = 1; k < 128; ++k) {
    freq_energy += 2.0 * static_cast<double>(spec.at(k, col)) * spec.at(k, col);
  }
  freq_energy /= 256.0;
  CHECK(rel_diff(time_energy, freq_energy) <= 1e-6);
}

TEST_CASE("build_multispectrogram stacks selected channels") {
  telemetry::ChannelSet ch;
  Rng rng(5);
  const size_t n = 700;
  for (auto* v : {&ch.x, &ch.y, &ch.p, &ch.vx, &ch.vy, &ch.speed, &ch.traj, &ch.acc}) {
    v->resize(n);
    for (double& e : *v) e = rng.normal(0, 1);
  }
  StftConfig cfg;

  const MultiSpectrogram four = build_multispectrogram(ch, {"speed", "vx", "vy", "p"}, cfg);
  CHECK(four.channel_count() == 4);
  CHECK(four.bins == 129);
  CHECK(four.cols == 1 + static_cast<int>(n) / 128);

  const MultiSpectrogram two = build_multispectrogram(ch, {"traj", "p"}, cfg);
  CHECK(two.channel_count() == 2);

  // Channel slices equal the single-channel transforms.
  const Spectrogram sp = stft_magnitude(ch.vx, cfg);
  for (int f = 0; f < four.bins; ++f) {
    for (int c = 0; c < four.cols; ++c) {
      CHECK(four.at(1, f, c) == sp.at(f, c));
    }
  }

  try {
    build_multispectrogram(ch, {"speed", "foo"}, cfg);
    FAIL("expected UnknownChannel");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnknownChannel);
  }
}

TEST_CASE("fit_fixed_size truncates, pads, and passes through") {
  const MultiSpectrogram same = random_multispec(1, 4, 129, 65);
  const MultiSpectrogram id = fit_fixed_size(same, 65);
  CHECK(id.values == same.values);  // bitwise pass-through

  const MultiSpectrogram longer = random_multispec(2, 4, 129, 70);
  const MultiSpectrogram cut = fit_fixed_size(longer, 65);
  CHECK(cut.cols == 65);
  for (int c = 0; c < 4; ++c) {
    for (int f = 0; f < 129; ++f) {
      for (int l = 0; l < 65; ++l) {
        CHECK(cut.at(c, f, l) == longer.at(c, f, l));
      }
    }
  }

  const MultiSpectrogram shorter = random_multispec(3, 4, 129, 60);
  const MultiSpectrogram padded = fit_fixed_size(shorter, 65);
  CHECK(padded.cols == 65);
  for (int c = 0; c < 4; ++c) {
    for (int f = 0; f < 129; ++f) {
      for (int l = 0; l < 60; ++l) CHECK(padded.at(c, f, l) == shorter.at(c, f, l));
      for (int l = 60; l < 65; ++l) CHECK(padded.at(c, f, l) == 0.0f);
    }
  }
}

TEST_CASE("window parsing") {
  WindowSpec w = parse_window("25ms");
  CHECK(w.mode == WindowSpec::Mode::Milliseconds);
  CHECK(w.window_s == doctest::Approx(0.025));
  CHECK(parse_window("1.5s").window_s == doctest::Approx(1.5));
  CHECK(parse_window("cols:3").cols == 3);
  CHECK(window_label(parse_window("500ms")) == "500ms");
  CHECK(window_label(parse_window("1s")) == "1s");
  for (const char* bad : {"", "12", "-1s", "cols:0", "1h"}) {
    try {
      parse_window(bad);
      FAIL("expected InvalidWindow for ", bad);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::InvalidWindow);
    }
  }
}

TEST_CASE("frame_decompose follows the framing arithmetic") {
  const MultiSpectrogram ms = random_multispec(7, 4, 129, 65);

  const FrameStack one_second = frame_decompose(ms, parse_window("1s"));
  CHECK(one_second.frame_cols == 2);  // round(1 / 0.512)
  CHECK(one_second.frames.size() == 33);
  CHECK(one_second.pad_cols_last == 1);
  CHECK(one_second.stride_cols == one_second.frame_cols);

  const FrameStack one_half = frame_decompose(ms, parse_window("1.5s"));
  CHECK(one_half.frame_cols == 3);  // round(1.5 / 0.512)
  CHECK(one_half.frames.size() == 22);
  CHECK(one_half.pad_cols_last == 1);

  const FrameStack tiny = frame_decompose(ms, parse_window("25ms"));
  CHECK(tiny.frame_cols == 1);  // floors at one column
  CHECK(tiny.frames.size() == 65);
  CHECK(tiny.pad_cols_last == 0);

  WindowSpec full;
  full.mode = WindowSpec::Mode::Columns;
  full.cols = 65;
  const FrameStack single = frame_decompose(ms, full);
  REQUIRE(single.frames.size() == 1);
  CHECK(single.pad_cols_last == 0);
  CHECK(single.frames[0] == ms.values);
}

TEST_CASE("frame reassembly reproduces the source bit-exactly") {
  Rng rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    const int c = static_cast<int>(rng.uniform_int(1, 5));
    const int bins = static_cast<int>(rng.uniform_int(1, 16));
    const int cols = static_cast<int>(rng.uniform_int(1, 200));
    const int width = static_cast<int>(rng.uniform_int(1, 50));
    const MultiSpectrogram ms = random_multispec(1000 + trial, c, bins, cols);

    WindowSpec w;
    w.mode = WindowSpec::Mode::Columns;
    w.cols = width;
    const FrameStack fs = frame_decompose(ms, w);
    CHECK(static_cast<int>(fs.frames.size()) == (cols + width - 1) / width);

    // Concatenate along time and trim the padding.
    std::vector<float> rebuilt(static_cast<size_t>(c) * bins * cols);
    for (size_t k = 0; k < fs.frames.size(); ++k) {
      for (int ch = 0; ch < c; ++ch) {
        for (int f = 0; f < bins; ++f) {
          for (int l = 0; l < width; ++l) {
            const int col = static_cast<int>(k) * width + l;
            if (col >= cols) continue;
            rebuilt[(static_cast<size_t>(ch) * bins + f) * cols + col] =
                fs.frames[k][(static_cast<size_t>(ch) * bins + f) * width + l];
          }
        }
      }
    }
    CHECK(rebuilt == ms.values);

    // Padding columns are zero.
    if (fs.pad_cols_last > 0) {
      const auto& last = fs.frames.back();
      for (int ch = 0; ch < c; ++ch) {
        for (int f = 0; f < bins; ++f) {
          for (int l = width - fs.pad_cols_last; l < width; ++l) {
            CHECK(last[(static_cast<size_t>(ch) * bins + f) * width + l] == 0.0f);
          }
        }
      }
    }
  }
}

TEST_CASE("spectrogram cache round-trips bit-exactly") {
  const fs::path dir = fs::temp_directory_path() / "gc_dsp_cache";
  fs::create_directories(dir);
  const MultiSpectrogram ms = random_multispec(42, 3, 129, 77);
  StftConfig cfg;
  save_multispectrogram(dir / "x.spec", ms);
  const MultiSpectrogram back = load_multispectrogram(dir / "x.spec", cfg);
  CHECK(back.values == ms.values);
  CHECK(back.channels == ms.channels);
  CHECK(back.bins == ms.bins);
  CHECK(back.cols == ms.cols);
}
