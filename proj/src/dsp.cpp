#include "graphocog/dsp.hpp"

#include <bit>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <numbers>

namespace graphocog::dsp {

static_assert(std::endian::native == std::endian::little,
              "cache container assumes a little-endian host");

namespace {

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 FFT.
void fft_pow2(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

// Half-spectrum magnitudes of one windowed segment.
void segment_spectrum(const std::vector<double>& seg, int n_fft, std::vector<double>& mag) {
  const int half = n_fft / 2 + 1;
  mag.assign(static_cast<size_t>(half), 0.0);
  if (is_pow2(n_fft)) {
    std::vector<std::complex<double>> buf(static_cast<size_t>(n_fft), {0.0, 0.0});
    for (size_t i = 0; i < seg.size(); ++i) buf[i] = {seg[i], 0.0};
    fft_pow2(buf);
    for (int k = 0; k < half; ++k) mag[static_cast<size_t>(k)] = std::abs(buf[static_cast<size_t>(k)]);
  } else {
    for (int k = 0; k < half; ++k) {
      double re = 0.0;
      double im = 0.0;
      for (size_t i = 0; i < seg.size(); ++i) {
        const double phase = -2.0 * std::numbers::pi * k * static_cast<double>(i) / n_fft;
        re += seg[i] * std::cos(phase);
        im += seg[i] * std::sin(phase);
      }
      mag[static_cast<size_t>(k)] = std::hypot(re, im);
    }
  }
}

void write_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

constexpr char kSpecMagic[16] = {'G', 'R', 'A', 'P', 'H', 'O', 'C', 'O',
                                 'G', '-', 'S', 'P', 'C', '/', '1', '\0'};

}  // namespace

void StftConfig::validate() const {
  if (hop < 1 || window_len < 2 || n_fft < 2) {
    throw Error(ErrorCode::InvalidConfig, "stft sizes must be positive (window_len >= 2)");
  }
  if (!(hop <= window_len && window_len <= n_fft)) {
    throw Error(ErrorCode::InvalidConfig, "require hop <= window_len <= n_fft");
  }
  if (n_fft % 2 != 0) {
    throw Error(ErrorCode::InvalidConfig, "n_fft must be even");
  }
  if (sample_rate_hz <= 0.0) {
    throw Error(ErrorCode::InvalidConfig, "sample_rate_hz must be positive");
  }
}

WindowSpec parse_window(std::string_view text) {
  WindowSpec w;
  if (text.rfind("cols:", 0) == 0) {
    w.mode = WindowSpec::Mode::Columns;
    try {
      w.cols = std::stoi(std::string(text.substr(5)));
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidWindow, "bad column window '" + std::string(text) + "'");
    }
    if (w.cols <= 0) {
      throw Error(ErrorCode::InvalidWindow, "window columns must be positive");
    }
    return w;
  }
  double scale = 0.0;
  std::string_view num;
  if (text.size() > 2 && text.substr(text.size() - 2) == "ms") {
    scale = 1e-3;
    num = text.substr(0, text.size() - 2);
  } else if (text.size() > 1 && text.back() == 's') {
    scale = 1.0;
    num = text.substr(0, text.size() - 1);
  } else {
    throw Error(ErrorCode::InvalidWindow,
                "window '" + std::string(text) + "' needs a unit (ms, s) or cols: prefix");
  }
  try {
    w.window_s = std::stod(std::string(num)) * scale;
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidWindow, "bad window '" + std::string(text) + "'");
  }
  if (!(w.window_s > 0.0)) {
    throw Error(ErrorCode::InvalidWindow, "window must be positive");
  }
  w.mode = WindowSpec::Mode::Milliseconds;
  return w;
}

std::string window_label(const WindowSpec& w) {
  if (w.mode == WindowSpec::Mode::Columns) return "cols:" + std::to_string(w.cols);
  const double ms = w.window_s * 1e3;
  if (ms < 1000.0) {
    const long rounded = std::lround(ms);
    if (std::abs(ms - static_cast<double>(rounded)) < 1e-9) return std::to_string(rounded) + "ms";
  }
  std::string s = std::to_string(w.window_s);
  while (!s.empty() && s.back() == '0') s.pop_back();
  if (!s.empty() && s.back() == '.') s.pop_back();
  return s + "s";
}

std::vector<double> blackman_window(int len) {
  if (len < 2) {
    throw Error(ErrorCode::InvalidLength, "blackman window needs len >= 2");
  }
  std::vector<double> w(static_cast<size_t>(len));
  const double denom = static_cast<double>(len - 1);
  // Fill the lower half and mirror so w[k] == w[len-1-k] holds exactly.
  for (int k = 0; k <= (len - 1) / 2; ++k) {
    const double phase = 2.0 * std::numbers::pi * static_cast<double>(k) / denom;
    const double v = 0.42 - 0.5 * std::cos(phase) + 0.08 * std::cos(2.0 * phase);
    w[static_cast<size_t>(k)] = v;
    w[static_cast<size_t>(len - 1 - k)] = v;
  }
  return w;
}

Spectrogram stft_magnitude(const std::vector<double>& signal, const StftConfig& cfg) {
  cfg.validate();
  if (signal.empty()) {
    throw Error(ErrorCode::EmptySignal, "stft input is empty");
  }

  const std::vector<double> window = blackman_window(cfg.window_len);
  const long n = static_cast<long>(signal.size());
  const int pad = cfg.center_pad ? cfg.window_len / 2 : 0;
  long cols = 0;
  if (cfg.center_pad) {
    cols = 1 + n / cfg.hop;
  } else {
    if (n < cfg.window_len) {
      throw Error(ErrorCode::EmptySignal, "signal shorter than window with center_pad off");
    }
    cols = 1 + (n - cfg.window_len) / cfg.hop;
  }

  Spectrogram spec;
  spec.bins = cfg.bins();
  spec.cols = static_cast<int>(cols);
  spec.column_duration_s = cfg.column_duration_s();
  spec.values.assign(static_cast<size_t>(spec.bins) * spec.cols, 0.0f);

  std::vector<double> seg(static_cast<size_t>(cfg.window_len));
  std::vector<double> mag;
  for (long col = 0; col < cols; ++col) {
    const long start = col * cfg.hop - pad;
    for (int i = 0; i < cfg.window_len; ++i) {
      const long src = start + i;
      const double v = (src >= 0 && src < n) ? signal[static_cast<size_t>(src)] : 0.0;
      seg[static_cast<size_t>(i)] = v * window[static_cast<size_t>(i)];
    }
    segment_spectrum(seg, cfg.n_fft, mag);
    for (int f = 0; f < spec.bins; ++f) {
      const double m = cfg.log_scale ? std::log1p(mag[static_cast<size_t>(f)]) : mag[static_cast<size_t>(f)];
      spec.values[static_cast<size_t>(f) * spec.cols + col] = static_cast<float>(m);
    }
  }
  return spec;
}

MultiSpectrogram build_multispectrogram(const telemetry::ChannelSet& channels,
                                        const std::vector<std::string>& selection,
                                        const StftConfig& cfg) {
  if (selection.empty()) {
    throw Error(ErrorCode::UnknownChannel, "channel selection is empty");
  }
  MultiSpectrogram ms;
  ms.channels = selection;
  for (size_t c = 0; c < selection.size(); ++c) {
    const std::vector<double>* sig = channels.find(selection[c]);
    if (sig == nullptr) {
      throw Error(ErrorCode::UnknownChannel, "unknown channel '" + selection[c] + "'");
    }
    if (sig->size() != channels.length()) {
      throw Error(ErrorCode::LengthMismatch, "channel '" + selection[c] + "' length differs");
    }
    Spectrogram spec = stft_magnitude(*sig, cfg);
    if (c == 0) {
      ms.bins = spec.bins;
      ms.cols = spec.cols;
      ms.column_duration_s = spec.column_duration_s;
      ms.values.assign(selection.size() * static_cast<size_t>(ms.bins) * ms.cols, 0.0f);
    } else if (spec.cols != ms.cols || spec.bins != ms.bins) {
      throw Error(ErrorCode::LengthMismatch, "channel spectrogram shapes differ");
    }
    std::memcpy(ms.values.data() + c * static_cast<size_t>(ms.bins) * ms.cols, spec.values.data(),
                static_cast<size_t>(ms.bins) * ms.cols * sizeof(float));
  }
  return ms;
}

MultiSpectrogram fit_fixed_size(const MultiSpectrogram& ms, int target_cols) {
  if (target_cols <= 0) {
    throw Error(ErrorCode::InvalidConfig, "target_cols must be positive");
  }
  if (ms.cols == target_cols) return ms;

  MultiSpectrogram out;
  out.channels = ms.channels;
  out.bins = ms.bins;
  out.cols = target_cols;
  out.column_duration_s = ms.column_duration_s;
  out.values.assign(ms.channels.size() * static_cast<size_t>(ms.bins) * target_cols, 0.0f);

  const int copy_cols = std::min(ms.cols, target_cols);
  const size_t rows = ms.channels.size() * static_cast<size_t>(ms.bins);
  for (size_t r = 0; r < rows; ++r) {
    std::memcpy(out.values.data() + r * target_cols, ms.values.data() + r * ms.cols,
                static_cast<size_t>(copy_cols) * sizeof(float));
  }
  return out;
}

FrameStack frame_decompose(const MultiSpectrogram& ms, const WindowSpec& window) {
  int w_cols = 0;
  if (window.mode == WindowSpec::Mode::Columns) {
    w_cols = window.cols;
  } else {
    if (!(window.window_s > 0.0)) {
      throw Error(ErrorCode::InvalidWindow, "window must be positive");
    }
    w_cols = std::max(1, static_cast<int>(std::lround(window.window_s / ms.column_duration_s)));
  }
  if (w_cols <= 0) {
    throw Error(ErrorCode::InvalidWindow, "frame width must be positive");
  }

  const int n_frames = (ms.cols + w_cols - 1) / w_cols;
  FrameStack fs;
  fs.channels = ms.channel_count();
  fs.bins = ms.bins;
  fs.frame_cols = w_cols;
  fs.stride_cols = w_cols;
  fs.pad_cols_last = n_frames * w_cols - ms.cols;
  fs.frames.reserve(static_cast<size_t>(n_frames));

  const size_t rows = ms.channels.size() * static_cast<size_t>(ms.bins);
  for (int k = 0; k < n_frames; ++k) {
    std::vector<float> frame(rows * static_cast<size_t>(w_cols), 0.0f);
    const int col0 = k * w_cols;
    const int ncopy = std::min(w_cols, ms.cols - col0);
    for (size_t r = 0; r < rows; ++r) {
      std::memcpy(frame.data() + r * static_cast<size_t>(w_cols),
                  ms.values.data() + r * ms.cols + col0, static_cast<size_t>(ncopy) * sizeof(float));
    }
    fs.frames.push_back(std::move(frame));
  }
  return fs;
}

void save_multispectrogram(const std::filesystem::path& path, const MultiSpectrogram& ms) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(ErrorCode::IoError, "cannot write '" + path.string() + "'");
  }
  out.write(kSpecMagic, sizeof(kSpecMagic));
  write_u32(out, static_cast<uint32_t>(ms.channels.size()));
  write_u32(out, static_cast<uint32_t>(ms.bins));
  write_u32(out, static_cast<uint32_t>(ms.cols));
  out.write(reinterpret_cast<const char*>(ms.values.data()),
            static_cast<std::streamsize>(ms.values.size() * sizeof(float)));
  write_u32(out, static_cast<uint32_t>(ms.channels.size()));
  for (const std::string& name : ms.channels) {
    write_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
  }
  if (!out) {
    throw Error(ErrorCode::IoError, "short write to '" + path.string() + "'");
  }
}

MultiSpectrogram load_multispectrogram(const std::filesystem::path& path, const StftConfig& cfg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "'");
  }
  char magic[sizeof(kSpecMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kSpecMagic, sizeof(magic)) != 0) {
    throw Error(ErrorCode::ParseError, "bad spectrogram cache magic in '" + path.string() + "'");
  }
  MultiSpectrogram ms;
  const uint32_t c = read_u32(in);
  const uint32_t f = read_u32(in);
  const uint32_t l = read_u32(in);
  ms.bins = static_cast<int>(f);
  ms.cols = static_cast<int>(l);
  ms.column_duration_s = cfg.column_duration_s();
  ms.values.resize(static_cast<size_t>(c) * f * l);
  in.read(reinterpret_cast<char*>(ms.values.data()),
          static_cast<std::streamsize>(ms.values.size() * sizeof(float)));
  const uint32_t names = read_u32(in);
  if (names != c) {
    throw Error(ErrorCode::ParseError, "channel-name count mismatch in '" + path.string() + "'");
  }
  for (uint32_t i = 0; i < names; ++i) {
    const uint32_t len = read_u32(in);
    std::string name(len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(len));
    ms.channels.push_back(std::move(name));
  }
  if (!in) {
    throw Error(ErrorCode::ParseError, "truncated spectrogram cache '" + path.string() + "'");
  }
  return ms;
}

}  // namespace graphocog::dsp
