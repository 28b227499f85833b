#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "graphocog/common.hpp"
#include "graphocog/telemetry.hpp"

namespace graphocog::dsp {

struct StftConfig {
  int window_len = 256;
  int hop = 128;
  int n_fft = 256;
  double sample_rate_hz = 250.0;
  bool center_pad = true;
  bool log_scale = false;

  int bins() const { return n_fft / 2 + 1; }
  double column_duration_s() const { return static_cast<double>(hop) / sample_rate_hz; }
  void validate() const;  // throws InvalidConfig
};

// Single-channel magnitude spectrogram, rows = frequency bins, columns = time.
struct Spectrogram {
  int bins = 0;
  int cols = 0;
  double column_duration_s = 0.0;
  std::vector<float> values;  // row-major [bins][cols]

  float at(int f, int l) const { return values[static_cast<size_t>(f) * cols + l]; }
};

// Stacked channel spectrograms sharing one time axis.
struct MultiSpectrogram {
  std::vector<std::string> channels;
  int bins = 0;
  int cols = 0;
  double column_duration_s = 0.0;
  std::vector<float> values;  // row-major [C][bins][cols]

  int channel_count() const { return static_cast<int>(channels.size()); }
  float at(int c, int f, int l) const {
    return values[(static_cast<size_t>(c) * bins + f) * cols + l];
  }
};

// Non-overlapping frames cut from a MultiSpectrogram along time; the last
// frame is right-padded with zero columns.
struct FrameStack {
  int channels = 0;
  int bins = 0;
  int frame_cols = 0;
  int stride_cols = 0;
  int pad_cols_last = 0;
  std::vector<std::vector<float>> frames;  // each row-major [C][bins][frame_cols]
};

struct WindowSpec {
  enum class Mode { Columns, Milliseconds };
  Mode mode = Mode::Milliseconds;
  double window_s = 1.0;  // Milliseconds mode (stored in seconds)
  int cols = 1;           // Columns mode
};

// Parses "25ms", "1s", "1.5s", or "cols:3". Throws InvalidWindow.
WindowSpec parse_window(std::string_view text);
std::string window_label(const WindowSpec& w);

// Classic Blackman taper (0.42, 0.5, 0.08), symmetric. Throws InvalidLength
// for len < 2.
std::vector<double> blackman_window(int len);

// Magnitude STFT. With center_pad, the signal is zero-padded by
// window_len / 2 on both ends, giving 1 + floor(N / hop) columns. If
// log_scale is set, entries are mapped through log1p.
Spectrogram stft_magnitude(const std::vector<double>& signal, const StftConfig& cfg);

// Runs stft_magnitude over the selected channels and stacks the results.
MultiSpectrogram build_multispectrogram(const telemetry::ChannelSet& channels,
                                        const std::vector<std::string>& selection,
                                        const StftConfig& cfg);

// Truncates to the leading target_cols columns or right-pads with zeros.
MultiSpectrogram fit_fixed_size(const MultiSpectrogram& ms, int target_cols = 65);

// Cuts into ceil(L / W) non-overlapping frames of width W. In milliseconds
// mode W = max(1, round(window_s / column_duration_s)).
FrameStack frame_decompose(const MultiSpectrogram& ms, const WindowSpec& window);

// Binary spectrogram cache (bit-exact round trip).
void save_multispectrogram(const std::filesystem::path& path, const MultiSpectrogram& ms);
MultiSpectrogram load_multispectrogram(const std::filesystem::path& path, const StftConfig& cfg);

}  // namespace graphocog::dsp
