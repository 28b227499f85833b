#include "graphocog/micronet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace graphocog::micronet {

namespace {

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// Dot product with double partial accumulators (vectorizable, fixed order).
template <typename T>
double dot(const T* __restrict__ a, const T* __restrict__ b, int n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    s1 += static_cast<double>(a[i + 1]) * static_cast<double>(b[i + 1]);
    s2 += static_cast<double>(a[i + 2]) * static_cast<double>(b[i + 2]);
    s3 += static_cast<double>(a[i + 3]) * static_cast<double>(b[i + 3]);
  }
  double tail = 0.0;
  for (; i < n; ++i) tail += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return ((s0 + s1) + (s2 + s3)) + tail;
}

// Same-type partial accumulators, for matrix-product accumulation.
template <typename T>
T dot_same(const T* __restrict__ a, const T* __restrict__ b, int n) {
  T s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
    s4 += a[i + 4] * b[i + 4];
    s5 += a[i + 5] * b[i + 5];
    s6 += a[i + 6] * b[i + 6];
    s7 += a[i + 7] * b[i + 7];
  }
  T tail = 0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return (((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7))) + tail;
}

template <typename T>
void axpy(int n, T alpha, const T* __restrict__ x, T* __restrict__ y) {
  for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// Column-tile width keeping the streamed operand L2-resident.
constexpr int kGemmTile = 512;

// C[M,N] += A[M,K] * B[K,N], row-major, saxpy ordering over column tiles.
template <typename T>
void gemm_accum(int m, int n, int k, const T* a, const T* b, T* c) {
  for (int j0 = 0; j0 < n; j0 += kGemmTile) {
    const int jn = std::min(kGemmTile, n - j0);
    for (int i = 0; i < m; ++i) {
      const T* arow = a + static_cast<size_t>(i) * k;
      T* crow = c + static_cast<size_t>(i) * n + j0;
      for (int kk = 0; kk < k; ++kk) {
        axpy(jn, arow[kk], b + static_cast<size_t>(kk) * n + j0, crow);
      }
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T (rows of A against rows of B), tiled over K.
template <typename T>
void gemm_nt_accum(int m, int n, int k, const T* a, const T* b, T* c) {
  for (int k0 = 0; k0 < k; k0 += kGemmTile) {
    const int kn = std::min(kGemmTile, k - k0);
    for (int i = 0; i < m; ++i) {
      const T* arow = a + static_cast<size_t>(i) * k + k0;
      T* crow = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        crow[j] += dot_same(arow, b + static_cast<size_t>(j) * k + k0, kn);
      }
    }
  }
}

// C[M,N] += A[K,M]^T * B[K,N], tiled over columns of C.
template <typename T>
void gemm_tn_accum(int m, int n, int k, const T* a, const T* b, T* c) {
  for (int j0 = 0; j0 < n; j0 += kGemmTile) {
    const int jn = std::min(kGemmTile, n - j0);
    for (int kk = 0; kk < k; ++kk) {
      const T* arow = a + static_cast<size_t>(kk) * m;
      const T* brow = b + static_cast<size_t>(kk) * n + j0;
      for (int i = 0; i < m; ++i) {
        axpy(jn, arow[i], brow, c + static_cast<size_t>(i) * n + j0);
      }
    }
  }
}

// Unrolls k*k patches of a virtually zero-padded [C, ph, pw] view of x into
// cols [C*k*k, oh*ow].
template <typename T>
void im2col(const Tensor<T>& x, int kernel, int oh, int ow, Tensor<T>& cols) {
  const int c_in = x.shape[0];
  const int h = x.shape[1];
  const int w = x.shape[2];
  const int n = oh * ow;
  for (int c = 0; c < c_in; ++c) {
    for (int di = 0; di < kernel; ++di) {
      for (int dj = 0; dj < kernel; ++dj) {
        T* dst = cols.ptr() + static_cast<size_t>((c * kernel + di) * kernel + dj) * n;
        const int valid = std::min(ow, w - dj);  // columns inside the raw width
        for (int oi = 0; oi < oh; ++oi) {
          const int si = oi + di;
          T* drow = dst + static_cast<size_t>(oi) * ow;
          if (si >= h || valid <= 0) {
            std::fill(drow, drow + ow, T(0));
            continue;
          }
          const T* src = x.ptr() + (static_cast<size_t>(c) * h + si) * w;
          std::memcpy(drow, src + dj, static_cast<size_t>(valid) * sizeof(T));
          if (valid < ow) std::fill(drow + valid, drow + ow, T(0));
        }
      }
    }
  }
}

// Scatter-add of patch gradients back onto the raw (unpadded) input dims.
template <typename T>
void col2im_accum(const Tensor<T>& dcols, int kernel, int oh, int ow, Tensor<T>& dx) {
  const int c_in = dx.shape[0];
  const int h = dx.shape[1];
  const int w = dx.shape[2];
  const int n = oh * ow;
  for (int c = 0; c < c_in; ++c) {
    for (int di = 0; di < kernel; ++di) {
      for (int dj = 0; dj < kernel; ++dj) {
        const T* src = dcols.ptr() + static_cast<size_t>((c * kernel + di) * kernel + dj) * n;
        const int valid = std::min(ow, w - dj);
        if (valid <= 0) continue;
        for (int oi = 0; oi < oh; ++oi) {
          const int si = oi + di;
          if (si >= h) continue;
          T* drow = dx.ptr() + (static_cast<size_t>(c) * h + si) * w + dj;
          const T* srow = src + static_cast<size_t>(oi) * ow;
          for (int oj = 0; oj < valid; ++oj) drow[oj] += srow[oj];
        }
      }
    }
  }
}

template <typename T>
void fill_kaiming_uniform(Tensor<T>& t, int fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (T& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
void fill_uniform(Tensor<T>& t, double bound, Rng& rng) {
  for (T& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
double mean_reduce(const std::vector<std::vector<T>>& vecs, size_t dim_index) {
  double s = 0.0;
  for (const auto& v : vecs) s += static_cast<double>(v[dim_index]);
  return s / static_cast<double>(vecs.size());
}

void write_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

constexpr char kWeightsMagic[16] = {'G', 'R', 'A', 'P', 'H', 'O', 'C', 'O',
                                    'G', '-', 'W', 'T', 'S', '/', '1', '\0'};

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

template <typename T>
Conv2d<T> Conv2d<T>::make(int in_c, int out_c, int kernel, Rng& rng) {
  if (in_c < 1 || out_c < 1 || kernel < 1) {
    throw Error(ErrorCode::InvalidConfig, "conv dimensions must be positive");
  }
  Conv2d<T> conv;
  conv.in_channels = in_c;
  conv.out_channels = out_c;
  conv.kernel = kernel;
  conv.kernels = Tensor<T>({out_c, in_c, kernel, kernel});
  conv.bias = Tensor<T>({out_c});
  fill_kaiming_uniform(conv.kernels, in_c * kernel * kernel, rng);
  return conv;
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, Cache* cache) const {
  if (x.shape.size() != 3 || x.shape[0] != in_channels) {
    throw Error(ErrorCode::ShapeMismatch, "conv2d input must be [C,H,W] with C = in_channels");
  }
  const int h = x.shape[1];
  const int w = x.shape[2];
  const int ph = std::max(h, kernel);
  const int pw = std::max(w, kernel);
  const int oh = ph - kernel + 1;
  const int ow = pw - kernel + 1;
  const int n = oh * ow;
  const int kd = in_channels * kernel * kernel;

  Tensor<T> cols({kd, n});
  im2col(x, kernel, oh, ow, cols);

  Tensor<T> out({out_channels, oh, ow});
  for (int kf = 0; kf < out_channels; ++kf) {
    T* row = out.ptr() + static_cast<size_t>(kf) * n;
    std::fill(row, row + n, bias.at(kf));
  }
  gemm_accum(out_channels, n, kd, kernels.ptr(), cols.ptr(), out.ptr());

  if (cache != nullptr) {
    cache->in_h = h;
    cache->in_w = w;
    cache->padded_h = ph;
    cache->padded_w = pw;
    cache->out_h = oh;
    cache->out_w = ow;
    cache->cols = std::move(cols);
  }
  return out;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& dy, const Cache& cache, Tensor<T>& dk, Tensor<T>& db,
                              bool compute_dx) const {
  const int n = cache.out_h * cache.out_w;
  const int kd = in_channels * kernel * kernel;
  if (dy.shape.size() != 3 || dy.shape[0] != out_channels || dy.shape[1] != cache.out_h ||
      dy.shape[2] != cache.out_w) {
    throw Error(ErrorCode::ShapeMismatch, "conv2d backward: dy shape mismatch");
  }

  for (int kf = 0; kf < out_channels; ++kf) {
    const T* row = dy.ptr() + static_cast<size_t>(kf) * n;
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += static_cast<double>(row[j]);
    db.at(kf) += static_cast<T>(s);
  }

  gemm_nt_accum(out_channels, kd, n, dy.ptr(), cache.cols.ptr(), dk.ptr());

  if (!compute_dx) return Tensor<T>();

  Tensor<T> dcols({kd, n});
  gemm_tn_accum(kd, n, out_channels, kernels.ptr(), dy.ptr(), dcols.ptr());

  Tensor<T> dx({in_channels, cache.in_h, cache.in_w});
  col2im_accum(dcols, kernel, cache.out_h, cache.out_w, dx);
  return dx;
}

// ---------------------------------------------------------------------------
// Pooling and activations

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, MaxPoolCache* cache) {
  if (x.shape.size() != 3 || x.shape[1] < 2 || x.shape[2] < 2) {
    throw Error(ErrorCode::ShapeMismatch, "maxpool2d needs [C,H,W] with H,W >= 2");
  }
  const int c_in = x.shape[0];
  const int h = x.shape[1];
  const int w = x.shape[2];
  const int oh = h / 2;
  const int ow = w / 2;

  Tensor<T> out({c_in, oh, ow});
  std::vector<int> argmax(static_cast<size_t>(c_in) * oh * ow);
  for (int c = 0; c < c_in; ++c) {
    for (int oi = 0; oi < oh; ++oi) {
      for (int oj = 0; oj < ow; ++oj) {
        int best = ((c * h) + oi * 2) * w + oj * 2;
        T best_v = x.data[static_cast<size_t>(best)];
        for (int di = 0; di < 2; ++di) {
          for (int dj = 0; dj < 2; ++dj) {
            const int idx = ((c * h) + oi * 2 + di) * w + oj * 2 + dj;
            const T v = x.data[static_cast<size_t>(idx)];
            if (v > best_v) {
              best_v = v;
              best = idx;
            }
          }
        }
        out.at(c, oi, oj) = best_v;
        argmax[(static_cast<size_t>(c) * oh + oi) * ow + oj] = best;
      }
    }
  }
  if (cache != nullptr) {
    cache->channels = c_in;
    cache->in_h = h;
    cache->in_w = w;
    cache->out_h = oh;
    cache->out_w = ow;
    cache->argmax = std::move(argmax);
  }
  return out;
}

template <typename T>
Tensor<T> maxpool2d_backward(const Tensor<T>& dy, const MaxPoolCache& cache) {
  Tensor<T> dx({cache.channels, cache.in_h, cache.in_w});
  const size_t n = dy.data.size();
  for (size_t i = 0; i < n; ++i) {
    dx.data[static_cast<size_t>(cache.argmax[i])] += dy.data[i];
  }
  return dx;
}

template <typename T>
void relu_inplace(Tensor<T>& x) {
  for (T& v : x.data) v = v > T(0) ? v : T(0);
}

template <typename T>
void relu_inplace(std::vector<T>& x) {
  for (T& v : x) v = v > T(0) ? v : T(0);
}

template <typename T>
void relu_backward_inplace(std::vector<T>& dy, const std::vector<T>& y) {
  for (size_t i = 0; i < dy.size(); ++i) {
    if (!(y[i] > T(0))) dy[i] = T(0);
  }
}

template <typename T>
void relu_backward_inplace(Tensor<T>& dy, const Tensor<T>& y) {
  for (size_t i = 0; i < dy.data.size(); ++i) {
    if (!(y.data[i] > T(0))) dy.data[i] = T(0);
  }
}

// ---------------------------------------------------------------------------
// Dense

template <typename T>
Dense<T> Dense<T>::make(int in, int out, Rng& rng) {
  if (in < 1 || out < 1) {
    throw Error(ErrorCode::InvalidConfig, "dense dimensions must be positive");
  }
  Dense<T> d;
  d.in_dim = in;
  d.out_dim = out;
  d.w = Tensor<T>({out, in});
  d.b = Tensor<T>({out});
  fill_kaiming_uniform(d.w, in, rng);
  return d;
}

template <typename T>
std::vector<T> Dense<T>::forward(const std::vector<T>& x) const {
  if (static_cast<int>(x.size()) != in_dim) {
    throw Error(ErrorCode::ShapeMismatch, "dense forward: input size mismatch");
  }
  std::vector<T> out(static_cast<size_t>(out_dim));
  for (int o = 0; o < out_dim; ++o) {
    out[static_cast<size_t>(o)] = static_cast<T>(
        static_cast<double>(b.at(o)) + dot(w.ptr() + static_cast<size_t>(o) * in_dim, x.data(), in_dim));
  }
  return out;
}

template <typename T>
std::vector<T> Dense<T>::backward(const std::vector<T>& x, const std::vector<T>& dy, Tensor<T>& dw,
                                  Tensor<T>& db) const {
  std::vector<T> dx(static_cast<size_t>(in_dim), T(0));
  for (int o = 0; o < out_dim; ++o) {
    const T g = dy[static_cast<size_t>(o)];
    db.at(o) += g;
    axpy(in_dim, g, x.data(), dw.ptr() + static_cast<size_t>(o) * in_dim);
    axpy(in_dim, g, w.ptr() + static_cast<size_t>(o) * in_dim, dx.data());
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Softmax / cross-entropy

template <typename T>
std::vector<double> softmax(const std::vector<T>& logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (T v : logits) mx = std::max(mx, static_cast<double>(v));
  std::vector<double> p(logits.size());
  double denom = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(static_cast<double>(logits[i]) - mx);
    denom += p[i];
  }
  for (double& v : p) v /= denom;
  return p;
}

template <typename T>
double cross_entropy(const std::vector<T>& logits, int label, std::vector<T>* dlogits) {
  if (label < 0 || label >= static_cast<int>(logits.size())) {
    throw Error(ErrorCode::ShapeMismatch, "cross_entropy: label out of range");
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (T v : logits) mx = std::max(mx, static_cast<double>(v));
  double sum_exp = 0.0;
  for (T v : logits) sum_exp += std::exp(static_cast<double>(v) - mx);
  const double lse = mx + std::log(sum_exp);
  const double loss = lse - static_cast<double>(logits[static_cast<size_t>(label)]);
  if (dlogits != nullptr) {
    dlogits->resize(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) {
      const double soft = std::exp(static_cast<double>(logits[i]) - lse);
      (*dlogits)[i] = static_cast<T>(soft - (static_cast<int>(i) == label ? 1.0 : 0.0));
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------
// LSTM

template <typename T>
LstmLayer<T> LstmLayer<T>::make(int input_dim, int hidden, Rng& rng) {
  if (input_dim < 1 || hidden < 1) {
    throw Error(ErrorCode::InvalidConfig, "lstm dimensions must be positive");
  }
  LstmLayer<T> layer;
  layer.input_dim = input_dim;
  layer.hidden = hidden;
  layer.w_x = Tensor<T>({4 * hidden, input_dim});
  layer.w_h = Tensor<T>({4 * hidden, hidden});
  layer.b = Tensor<T>({4 * hidden});
  fill_uniform(layer.w_x, 1.0 / std::sqrt(static_cast<double>(input_dim)), rng);
  fill_uniform(layer.w_h, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
  for (int j = hidden; j < 2 * hidden; ++j) layer.b.at(j) = T(1);  // forget gate
  return layer;
}

template <typename T>
std::vector<std::vector<T>> LstmLayer<T>::forward(const std::vector<std::vector<T>>& seq,
                                                  Cache* cache) const {
  if (seq.empty()) {
    throw Error(ErrorCode::EmptySequence, "lstm forward: empty sequence");
  }
  const int h_dim = hidden;
  const size_t steps = seq.size();
  std::vector<std::vector<T>> outputs(steps);

  std::vector<T> h_prev(static_cast<size_t>(h_dim), T(0));
  std::vector<T> c_prev(static_cast<size_t>(h_dim), T(0));
  if (cache != nullptr) {
    cache->x.resize(steps);
    cache->gates.resize(steps);
    cache->c.resize(steps);
    cache->h.resize(steps);
  }

  std::vector<T> gates(static_cast<size_t>(4 * h_dim));
  for (size_t t = 0; t < steps; ++t) {
    const std::vector<T>& x = seq[t];
    if (static_cast<int>(x.size()) != input_dim) {
      throw Error(ErrorCode::ShapeMismatch, "lstm forward: input dim mismatch");
    }
    for (int j = 0; j < 4 * h_dim; ++j) {
      const double z = static_cast<double>(b.at(j)) +
                       dot(w_x.ptr() + static_cast<size_t>(j) * input_dim, x.data(), input_dim) +
                       dot(w_h.ptr() + static_cast<size_t>(j) * h_dim, h_prev.data(), h_dim);
      gates[static_cast<size_t>(j)] = static_cast<T>(z);
    }
    std::vector<T> c_t(static_cast<size_t>(h_dim));
    std::vector<T> h_t(static_cast<size_t>(h_dim));
    for (int j = 0; j < h_dim; ++j) {
      const T gi = sigmoid(gates[static_cast<size_t>(j)]);
      const T gf = sigmoid(gates[static_cast<size_t>(h_dim + j)]);
      const T gg = std::tanh(gates[static_cast<size_t>(2 * h_dim + j)]);
      const T go = sigmoid(gates[static_cast<size_t>(3 * h_dim + j)]);
      gates[static_cast<size_t>(j)] = gi;
      gates[static_cast<size_t>(h_dim + j)] = gf;
      gates[static_cast<size_t>(2 * h_dim + j)] = gg;
      gates[static_cast<size_t>(3 * h_dim + j)] = go;
      c_t[static_cast<size_t>(j)] = gf * c_prev[static_cast<size_t>(j)] + gi * gg;
      h_t[static_cast<size_t>(j)] = go * std::tanh(c_t[static_cast<size_t>(j)]);
    }
    if (cache != nullptr) {
      cache->x[t] = x;
      cache->gates[t] = gates;
      cache->c[t] = c_t;
      cache->h[t] = h_t;
    }
    outputs[t] = h_t;
    h_prev = std::move(h_t);
    c_prev = std::move(c_t);
  }
  return outputs;
}

template <typename T>
std::vector<std::vector<T>> LstmLayer<T>::backward(const std::vector<std::vector<T>>& dh_ext,
                                                   const Cache& cache, Tensor<T>& dwx, Tensor<T>& dwh,
                                                   Tensor<T>& db) const {
  const int h_dim = hidden;
  const size_t steps = cache.x.size();
  if (dh_ext.size() != steps) {
    throw Error(ErrorCode::ShapeMismatch, "lstm backward: step count mismatch");
  }

  std::vector<std::vector<T>> dx(steps);
  std::vector<T> dh_next(static_cast<size_t>(h_dim), T(0));
  std::vector<T> dc_next(static_cast<size_t>(h_dim), T(0));
  std::vector<T> dz(static_cast<size_t>(4 * h_dim));

  for (size_t ti = steps; ti-- > 0;) {
    const std::vector<T>& gates = cache.gates[ti];
    const std::vector<T>& c_t = cache.c[ti];
    const std::vector<T>* c_prev = ti > 0 ? &cache.c[ti - 1] : nullptr;
    const std::vector<T>* h_prev = ti > 0 ? &cache.h[ti - 1] : nullptr;

    for (int j = 0; j < h_dim; ++j) {
      const double dh = static_cast<double>(dh_ext[ti][static_cast<size_t>(j)]) +
                        static_cast<double>(dh_next[static_cast<size_t>(j)]);
      const double gi = gates[static_cast<size_t>(j)];
      const double gf = gates[static_cast<size_t>(h_dim + j)];
      const double gg = gates[static_cast<size_t>(2 * h_dim + j)];
      const double go = gates[static_cast<size_t>(3 * h_dim + j)];
      const double tc = std::tanh(static_cast<double>(c_t[static_cast<size_t>(j)]));
      const double dc = static_cast<double>(dc_next[static_cast<size_t>(j)]) + dh * go * (1.0 - tc * tc);
      const double cp = c_prev != nullptr ? static_cast<double>((*c_prev)[static_cast<size_t>(j)]) : 0.0;

      dz[static_cast<size_t>(j)] = static_cast<T>(dc * gg * gi * (1.0 - gi));
      dz[static_cast<size_t>(h_dim + j)] = static_cast<T>(dc * cp * gf * (1.0 - gf));
      dz[static_cast<size_t>(2 * h_dim + j)] = static_cast<T>(dc * gi * (1.0 - gg * gg));
      dz[static_cast<size_t>(3 * h_dim + j)] = static_cast<T>(dh * tc * go * (1.0 - go));
      dc_next[static_cast<size_t>(j)] = static_cast<T>(dc * gf);
    }

    std::vector<T>& dx_t = dx[ti];
    dx_t.assign(static_cast<size_t>(input_dim), T(0));
    std::fill(dh_next.begin(), dh_next.end(), T(0));
    for (int j = 0; j < 4 * h_dim; ++j) {
      const T g = dz[static_cast<size_t>(j)];
      db.at(j) += g;
      axpy(input_dim, g, cache.x[ti].data(), dwx.ptr() + static_cast<size_t>(j) * input_dim);
      if (h_prev != nullptr) {
        axpy(h_dim, g, h_prev->data(), dwh.ptr() + static_cast<size_t>(j) * h_dim);
        // dh for the previous step
      }
      axpy(input_dim, g, w_x.ptr() + static_cast<size_t>(j) * input_dim, dx_t.data());
      axpy(h_dim, g, w_h.ptr() + static_cast<size_t>(j) * h_dim, dh_next.data());
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Order-independent mean

template <typename T>
std::vector<T> permutation_invariant_mean(const std::vector<std::vector<T>>& vecs) {
  if (vecs.empty()) {
    throw Error(ErrorCode::EmptyFrameList, "mean of zero vectors");
  }
  const size_t dims = vecs[0].size();
  const size_t n = vecs.size();
  std::vector<T> out(dims);
  std::vector<T> scratch(n);
  for (size_t d = 0; d < dims; ++d) {
    for (size_t i = 0; i < n; ++i) scratch[i] = vecs[i][d];
    std::sort(scratch.begin(), scratch.end());
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += static_cast<double>(scratch[i]);
    out[d] = static_cast<T>(s / static_cast<double>(n));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape trace

ShapeTrace trace_shapes(const CnnConfig& cfg) {
  if (cfg.in_channels < 1 || cfg.input_height < 1 || cfg.input_width < 1 || cfg.kernel < 1 ||
      cfg.conv1_filters < 1 || cfg.conv2_filters < 1 || cfg.fc_hidden < 1 || cfg.n_classes < 2) {
    throw Error(ErrorCode::InvalidConfig, "bad cnn config");
  }
  ShapeTrace t;
  t.in_c = cfg.in_channels;
  t.in_h = cfg.input_height;
  t.in_w = cfg.input_width;
  t.conv1_h = std::max(cfg.input_height, cfg.kernel) - cfg.kernel + 1;
  t.conv1_w = std::max(cfg.input_width, cfg.kernel) - cfg.kernel + 1;
  t.pool1_applied = t.conv1_h >= 2 && t.conv1_w >= 2;
  t.pool1_h = t.pool1_applied ? t.conv1_h / 2 : t.conv1_h;
  t.pool1_w = t.pool1_applied ? t.conv1_w / 2 : t.conv1_w;
  t.conv2_h = std::max(t.pool1_h, cfg.kernel) - cfg.kernel + 1;
  t.conv2_w = std::max(t.pool1_w, cfg.kernel) - cfg.kernel + 1;
  t.pool2_applied = t.conv2_h >= 2 && t.conv2_w >= 2;
  t.pool2_h = t.pool2_applied ? t.conv2_h / 2 : t.conv2_h;
  t.pool2_w = t.pool2_applied ? t.conv2_w / 2 : t.conv2_w;
  t.feature_len = cfg.conv2_filters * t.pool2_h * t.pool2_w;
  return t;
}

std::string ShapeTrace::describe() const {
  std::ostringstream os;
  os << in_c << "x" << in_h << "x" << in_w << " | conv1 " << conv1_h << "x" << conv1_w;
  if (pool1_applied) {
    os << " | pool1 " << pool1_h << "x" << pool1_w;
  } else {
    os << " | pool1 skipped";
  }
  os << " | conv2 " << conv2_h << "x" << conv2_w;
  if (pool2_applied) {
    os << " | pool2 " << pool2_h << "x" << pool2_w;
  } else {
    os << " | pool2 skipped";
  }
  os << " | flatten " << feature_len;
  return os.str();
}

// ---------------------------------------------------------------------------
// CnnModel

template <typename T>
CnnModel<T> CnnModel<T>::build(const CnnConfig& cfg, uint64_t seed) {
  CnnModel<T> model;
  model.cfg = cfg;
  model.trace = trace_shapes(cfg);
  Rng rng(seed);
  model.conv1 = Conv2d<T>::make(cfg.in_channels, cfg.conv1_filters, cfg.kernel, rng);
  model.conv2 = Conv2d<T>::make(cfg.conv1_filters, cfg.conv2_filters, cfg.kernel, rng);
  model.fc1 = Dense<T>::make(model.trace.feature_len, cfg.fc_hidden, rng);
  model.fc2 = Dense<T>::make(cfg.fc_hidden, cfg.n_classes, rng);
  return model;
}

template <typename T>
std::vector<ParamRef<T>> CnnModel<T>::params() {
  return {
      {"conv1.kernels", &conv1.kernels}, {"conv1.bias", &conv1.bias},
      {"conv2.kernels", &conv2.kernels}, {"conv2.bias", &conv2.bias},
      {"fc1.w", &fc1.w},                 {"fc1.b", &fc1.b},
      {"fc2.w", &fc2.w},                 {"fc2.b", &fc2.b},
  };
}

template <typename T>
GradVec<T> CnnModel<T>::zero_grads() const {
  GradVec<T> g;
  g.emplace_back(conv1.kernels.shape);
  g.emplace_back(conv1.bias.shape);
  g.emplace_back(conv2.kernels.shape);
  g.emplace_back(conv2.bias.shape);
  g.emplace_back(fc1.w.shape);
  g.emplace_back(fc1.b.shape);
  g.emplace_back(fc2.w.shape);
  g.emplace_back(fc2.b.shape);
  return g;
}

template <typename T>
std::vector<T> CnnModel<T>::extract(const Tensor<T>& x, ExtractCache* cache) const {
  typename Conv2d<T>::Cache local_c1, local_c2;
  typename Conv2d<T>::Cache* c1 = cache != nullptr ? &cache->c1 : &local_c1;
  typename Conv2d<T>::Cache* c2 = cache != nullptr ? &cache->c2 : &local_c2;

  Tensor<T> a1 = conv1.forward(x, c1);
  relu_inplace(a1);
  Tensor<T> p1 = trace.pool1_applied ? maxpool2d(a1, cache != nullptr ? &cache->p1 : nullptr) : a1;
  Tensor<T> a2 = conv2.forward(p1, c2);
  relu_inplace(a2);
  Tensor<T> p2 = trace.pool2_applied ? maxpool2d(a2, cache != nullptr ? &cache->p2 : nullptr) : a2;

  std::vector<T> feat(p2.data.begin(), p2.data.end());
  if (feat.size() != static_cast<size_t>(trace.feature_len)) {
    throw Error(ErrorCode::ShapeMismatch, "extractor feature length mismatch");
  }
  if (cache != nullptr) {
    cache->a1 = std::move(a1);
    cache->a2 = std::move(a2);
  }
  return feat;
}

template <typename T>
void CnnModel<T>::extract_backward(const std::vector<T>& dfeat, const ExtractCache& cache,
                                   Tensor<T>& dk1, Tensor<T>& db1, Tensor<T>& dk2,
                                   Tensor<T>& db2) const {
  Tensor<T> d2({cfg.conv2_filters, trace.pool2_h, trace.pool2_w});
  std::copy(dfeat.begin(), dfeat.end(), d2.data.begin());
  if (trace.pool2_applied) d2 = maxpool2d_backward(d2, cache.p2);
  relu_backward_inplace(d2, cache.a2);

  Tensor<T> d1 = conv2.backward(d2, cache.c2, dk2, db2, /*compute_dx=*/true);
  if (trace.pool1_applied) d1 = maxpool2d_backward(d1, cache.p1);
  relu_backward_inplace(d1, cache.a1);
  conv1.backward(d1, cache.c1, dk1, db1, /*compute_dx=*/false);
}

template <typename T>
std::vector<T> CnnModel<T>::head_forward(const std::vector<T>& feat, HeadCache* cache) const {
  std::vector<T> hidden = fc1.forward(feat);
  relu_inplace(hidden);
  std::vector<T> logits = fc2.forward(hidden);
  if (cache != nullptr) {
    cache->feat = feat;
    cache->hidden = std::move(hidden);
    return logits;
  }
  return logits;
}

template <typename T>
std::vector<T> CnnModel<T>::head_backward(const std::vector<T>& dlogits, const HeadCache& cache,
                                          Tensor<T>& dw1, Tensor<T>& db1, Tensor<T>& dw2,
                                          Tensor<T>& db2) const {
  std::vector<T> dhidden = fc2.backward(cache.hidden, dlogits, dw2, db2);
  relu_backward_inplace(dhidden, cache.hidden);
  return fc1.backward(cache.feat, dhidden, dw1, db1);
}

template <typename T>
std::vector<T> CnnModel<T>::forward(const Tensor<T>& x) const {
  return head_forward(extract(x, nullptr), nullptr);
}

template <typename T>
std::vector<T> CnnModel<T>::forward_frames(const std::vector<Tensor<T>>& frames) const {
  if (frames.empty()) {
    throw Error(ErrorCode::EmptyFrameList, "forward_frames: no frames");
  }
  std::vector<std::vector<T>> feats;
  feats.reserve(frames.size());
  for (const Tensor<T>& f : frames) feats.push_back(extract(f, nullptr));
  return head_forward(permutation_invariant_mean(feats), nullptr);
}

template <typename T>
double CnnModel<T>::loss(const Tensor<T>& x, int label) const {
  return cross_entropy(forward(x), label, static_cast<std::vector<T>*>(nullptr));
}

template <typename T>
double CnnModel<T>::loss_frames(const std::vector<Tensor<T>>& frames, int label) const {
  return cross_entropy(forward_frames(frames), label, static_cast<std::vector<T>*>(nullptr));
}

template <typename T>
double CnnModel<T>::train_step(const Tensor<T>& x, int label, GradVec<T>& grads) const {
  ExtractCache ecache;
  HeadCache hcache;
  const std::vector<T> feat = extract(x, &ecache);
  const std::vector<T> logits = head_forward(feat, &hcache);
  std::vector<T> dlogits;
  const double loss_v = cross_entropy(logits, label, &dlogits);
  const std::vector<T> dfeat = head_backward(dlogits, hcache, grads[4], grads[5], grads[6], grads[7]);
  extract_backward(dfeat, ecache, grads[0], grads[1], grads[2], grads[3]);
  return loss_v;
}

template <typename T>
double CnnModel<T>::train_step_frames(const std::vector<Tensor<T>>& frames, int label,
                                      GradVec<T>& grads) const {
  if (frames.empty()) {
    throw Error(ErrorCode::EmptyFrameList, "train_step_frames: no frames");
  }
  const size_t n = frames.size();
  std::vector<ExtractCache> ecaches(n);
  std::vector<std::vector<T>> feats(n);
  for (size_t i = 0; i < n; ++i) feats[i] = extract(frames[i], &ecaches[i]);

  HeadCache hcache;
  const std::vector<T> mean_feat = permutation_invariant_mean(feats);
  const std::vector<T> logits = head_forward(mean_feat, &hcache);
  std::vector<T> dlogits;
  const double loss_v = cross_entropy(logits, label, &dlogits);
  std::vector<T> dmean = head_backward(dlogits, hcache, grads[4], grads[5], grads[6], grads[7]);

  std::vector<T> dfeat(dmean.size());
  for (size_t d = 0; d < dmean.size(); ++d) {
    dfeat[d] = static_cast<T>(static_cast<double>(dmean[d]) / static_cast<double>(n));
  }
  for (size_t i = 0; i < n; ++i) {
    extract_backward(dfeat, ecaches[i], grads[0], grads[1], grads[2], grads[3]);
  }
  return loss_v;
}

// ---------------------------------------------------------------------------
// CnnBlstmModel

template <typename T>
CnnBlstmModel<T> CnnBlstmModel<T>::build(const CnnConfig& extractor, const BlstmConfig& blstm,
                                         uint64_t seed) {
  if (blstm.layers < 1 || blstm.hidden_per_direction < 1) {
    throw Error(ErrorCode::InvalidConfig, "bad blstm config");
  }
  CnnBlstmModel<T> model;
  model.extractor_cfg = extractor;
  model.blstm_cfg = blstm;
  model.trace = trace_shapes(extractor);
  Rng rng(seed);
  model.conv1 = Conv2d<T>::make(extractor.in_channels, extractor.conv1_filters, extractor.kernel, rng);
  model.conv2 = Conv2d<T>::make(extractor.conv1_filters, extractor.conv2_filters, extractor.kernel, rng);
  const int h = blstm.hidden_per_direction;
  for (int layer = 0; layer < blstm.layers; ++layer) {
    const int in_dim = layer == 0 ? model.trace.feature_len : 2 * h;
    model.lstm_fw.push_back(LstmLayer<T>::make(in_dim, h, rng));
    model.lstm_bw.push_back(LstmLayer<T>::make(in_dim, h, rng));
  }
  model.fc1 = Dense<T>::make(2 * h, extractor.fc_hidden, rng);
  model.fc2 = Dense<T>::make(extractor.fc_hidden, extractor.n_classes, rng);
  return model;
}

template <typename T>
std::vector<ParamRef<T>> CnnBlstmModel<T>::params() {
  std::vector<ParamRef<T>> refs = {
      {"conv1.kernels", &conv1.kernels}, {"conv1.bias", &conv1.bias},
      {"conv2.kernels", &conv2.kernels}, {"conv2.bias", &conv2.bias},
  };
  for (size_t layer = 0; layer < lstm_fw.size(); ++layer) {
    const std::string prefix = "blstm" + std::to_string(layer);
    refs.push_back({prefix + ".fw.w_x", &lstm_fw[layer].w_x});
    refs.push_back({prefix + ".fw.w_h", &lstm_fw[layer].w_h});
    refs.push_back({prefix + ".fw.b", &lstm_fw[layer].b});
    refs.push_back({prefix + ".bw.w_x", &lstm_bw[layer].w_x});
    refs.push_back({prefix + ".bw.w_h", &lstm_bw[layer].w_h});
    refs.push_back({prefix + ".bw.b", &lstm_bw[layer].b});
  }
  refs.push_back({"fc1.w", &fc1.w});
  refs.push_back({"fc1.b", &fc1.b});
  refs.push_back({"fc2.w", &fc2.w});
  refs.push_back({"fc2.b", &fc2.b});
  return refs;
}

template <typename T>
GradVec<T> CnnBlstmModel<T>::zero_grads() const {
  GradVec<T> g;
  g.emplace_back(conv1.kernels.shape);
  g.emplace_back(conv1.bias.shape);
  g.emplace_back(conv2.kernels.shape);
  g.emplace_back(conv2.bias.shape);
  for (size_t layer = 0; layer < lstm_fw.size(); ++layer) {
    g.emplace_back(lstm_fw[layer].w_x.shape);
    g.emplace_back(lstm_fw[layer].w_h.shape);
    g.emplace_back(lstm_fw[layer].b.shape);
    g.emplace_back(lstm_bw[layer].w_x.shape);
    g.emplace_back(lstm_bw[layer].w_h.shape);
    g.emplace_back(lstm_bw[layer].b.shape);
  }
  g.emplace_back(fc1.w.shape);
  g.emplace_back(fc1.b.shape);
  g.emplace_back(fc2.w.shape);
  g.emplace_back(fc2.b.shape);
  return g;
}

template <typename T>
std::string CnnBlstmModel<T>::describe() const {
  std::ostringstream os;
  os << trace.describe() << " | blstm " << blstm_cfg.layers << "x2x" << blstm_cfg.hidden_per_direction;
  return os.str();
}

template <typename T>
std::vector<std::vector<T>> CnnBlstmModel<T>::blstm_apply(const std::vector<std::vector<T>>& feats) const {
  if (feats.empty()) {
    throw Error(ErrorCode::EmptySequence, "blstm_apply: empty sequence");
  }
  const size_t n = feats.size();
  const int h = blstm_cfg.hidden_per_direction;
  std::vector<std::vector<T>> seq = feats;
  for (size_t layer = 0; layer < lstm_fw.size(); ++layer) {
    const std::vector<std::vector<T>> hf = lstm_fw[layer].forward(seq, nullptr);
    std::vector<std::vector<T>> rev(seq.rbegin(), seq.rend());
    const std::vector<std::vector<T>> hb_rev = lstm_bw[layer].forward(rev, nullptr);
    std::vector<std::vector<T>> out(n);
    for (size_t t = 0; t < n; ++t) {
      out[t].resize(static_cast<size_t>(2 * h));
      std::copy(hf[t].begin(), hf[t].end(), out[t].begin());
      std::copy(hb_rev[n - 1 - t].begin(), hb_rev[n - 1 - t].end(), out[t].begin() + h);
    }
    seq = std::move(out);
  }
  return seq;
}

template <typename T>
std::vector<T> CnnBlstmModel<T>::forward_features(const std::vector<std::vector<T>>& feats) const {
  const std::vector<std::vector<T>> outs = blstm_apply(feats);
  std::vector<T> mean(outs[0].size());
  for (size_t d = 0; d < mean.size(); ++d) {
    mean[d] = static_cast<T>(mean_reduce(outs, d));
  }
  std::vector<T> hidden = fc1.forward(mean);
  relu_inplace(hidden);
  return fc2.forward(hidden);
}

template <typename T>
std::vector<T> CnnBlstmModel<T>::forward_frames(const std::vector<Tensor<T>>& frames) const {
  if (frames.empty()) {
    throw Error(ErrorCode::EmptySequence, "forward_frames: no frames");
  }
  std::vector<std::vector<T>> feats;
  feats.reserve(frames.size());
  for (const Tensor<T>& f : frames) feats.push_back(extract_frame(f, nullptr));
  return forward_features(feats);
}

template <typename T>
double CnnBlstmModel<T>::loss_frames(const std::vector<Tensor<T>>& frames, int label) const {
  return cross_entropy(forward_frames(frames), label, static_cast<std::vector<T>*>(nullptr));
}

template <typename T>
double CnnBlstmModel<T>::train_step_frames(const std::vector<Tensor<T>>& frames, int label,
                                           GradVec<T>& grads) const {
  if (frames.empty()) {
    throw Error(ErrorCode::EmptySequence, "train_step_frames: no frames");
  }
  const size_t n = frames.size();
  const int h = blstm_cfg.hidden_per_direction;
  const size_t n_layers = lstm_fw.size();

  std::vector<typename CnnModel<T>::ExtractCache> ecaches(n);
  std::vector<std::vector<T>> seq(n);
  for (size_t i = 0; i < n; ++i) seq[i] = extract_frame(frames[i], &ecaches[i]);

  // Forward through the stacked BLSTM, keeping per-layer caches.
  std::vector<typename LstmLayer<T>::Cache> fcaches(n_layers), bcaches(n_layers);
  for (size_t layer = 0; layer < n_layers; ++layer) {
    const std::vector<std::vector<T>> hf = lstm_fw[layer].forward(seq, &fcaches[layer]);
    std::vector<std::vector<T>> rev(seq.rbegin(), seq.rend());
    const std::vector<std::vector<T>> hb_rev = lstm_bw[layer].forward(rev, &bcaches[layer]);
    std::vector<std::vector<T>> out(n);
    for (size_t t = 0; t < n; ++t) {
      out[t].resize(static_cast<size_t>(2 * h));
      std::copy(hf[t].begin(), hf[t].end(), out[t].begin());
      std::copy(hb_rev[n - 1 - t].begin(), hb_rev[n - 1 - t].end(), out[t].begin() + h);
    }
    seq = std::move(out);
  }

  std::vector<T> mean(seq[0].size());
  for (size_t d = 0; d < mean.size(); ++d) mean[d] = static_cast<T>(mean_reduce(seq, d));
  std::vector<T> hidden = fc1.forward(mean);
  relu_inplace(hidden);
  const std::vector<T> logits = fc2.forward(hidden);

  std::vector<T> dlogits;
  const double loss_v = cross_entropy(logits, label, &dlogits);

  const size_t g_fc = 4 + 6 * n_layers;
  std::vector<T> dhidden = fc2.backward(hidden, dlogits, grads[g_fc + 2], grads[g_fc + 3]);
  relu_backward_inplace(dhidden, hidden);
  const std::vector<T> dmean = fc1.backward(mean, dhidden, grads[g_fc], grads[g_fc + 1]);

  std::vector<std::vector<T>> dseq(n);
  for (size_t t = 0; t < n; ++t) {
    dseq[t].resize(dmean.size());
    for (size_t d = 0; d < dmean.size(); ++d) {
      dseq[t][d] = static_cast<T>(static_cast<double>(dmean[d]) / static_cast<double>(n));
    }
  }

  for (size_t layer = n_layers; layer-- > 0;) {
    std::vector<std::vector<T>> dh_fw(n), dh_bw_rev(n);
    for (size_t t = 0; t < n; ++t) {
      dh_fw[t].assign(dseq[t].begin(), dseq[t].begin() + h);
      dh_bw_rev[t].assign(dseq[n - 1 - t].begin() + h, dseq[n - 1 - t].end());
    }
    const size_t g0 = 4 + 6 * layer;
    const std::vector<std::vector<T>> dx_fw =
        lstm_fw[layer].backward(dh_fw, fcaches[layer], grads[g0], grads[g0 + 1], grads[g0 + 2]);
    const std::vector<std::vector<T>> dx_bw_rev =
        lstm_bw[layer].backward(dh_bw_rev, bcaches[layer], grads[g0 + 3], grads[g0 + 4], grads[g0 + 5]);
    for (size_t t = 0; t < n; ++t) {
      std::vector<T>& d = dseq[t];
      d = dx_fw[t];
      const std::vector<T>& add = dx_bw_rev[n - 1 - t];
      for (size_t j = 0; j < d.size(); ++j) d[j] += add[j];
    }
  }

  for (size_t i = 0; i < n; ++i) {
    extract_frame_backward(dseq[i], ecaches[i], grads[0], grads[1], grads[2], grads[3]);
  }
  return loss_v;
}

// The conv extractor of a CnnBlstmModel mirrors CnnModel's; these two private
// helpers keep the pipeline in one place.
template <typename T>
std::vector<T> CnnBlstmModel<T>::extract_frame(const Tensor<T>& x,
                                               typename CnnModel<T>::ExtractCache* cache) const {
  typename Conv2d<T>::Cache local_c1, local_c2;
  typename Conv2d<T>::Cache* c1 = cache != nullptr ? &cache->c1 : &local_c1;
  typename Conv2d<T>::Cache* c2 = cache != nullptr ? &cache->c2 : &local_c2;

  Tensor<T> a1 = conv1.forward(x, c1);
  relu_inplace(a1);
  Tensor<T> p1 = trace.pool1_applied ? maxpool2d(a1, cache != nullptr ? &cache->p1 : nullptr) : a1;
  Tensor<T> a2 = conv2.forward(p1, c2);
  relu_inplace(a2);
  Tensor<T> p2 = trace.pool2_applied ? maxpool2d(a2, cache != nullptr ? &cache->p2 : nullptr) : a2;

  std::vector<T> feat(p2.data.begin(), p2.data.end());
  if (cache != nullptr) {
    cache->a1 = std::move(a1);
    cache->a2 = std::move(a2);
  }
  return feat;
}

template <typename T>
void CnnBlstmModel<T>::extract_frame_backward(const std::vector<T>& dfeat,
                                              const typename CnnModel<T>::ExtractCache& cache,
                                              Tensor<T>& dk1, Tensor<T>& db1, Tensor<T>& dk2,
                                              Tensor<T>& db2) const {
  Tensor<T> d2({extractor_cfg.conv2_filters, trace.pool2_h, trace.pool2_w});
  std::copy(dfeat.begin(), dfeat.end(), d2.data.begin());
  if (trace.pool2_applied) d2 = maxpool2d_backward(d2, cache.p2);
  relu_backward_inplace(d2, cache.a2);

  Tensor<T> d1 = conv2.backward(d2, cache.c2, dk2, db2, /*compute_dx=*/true);
  if (trace.pool1_applied) d1 = maxpool2d_backward(d1, cache.p1);
  relu_backward_inplace(d1, cache.a1);
  conv1.backward(d1, cache.c1, dk1, db1, /*compute_dx=*/false);
}

// ---------------------------------------------------------------------------
// Adam

template <typename T>
void Adam<T>::attach(const std::vector<ParamRef<T>>& params) {
  m.clear();
  v.clear();
  for (const ParamRef<T>& p : params) {
    m.emplace_back(p.tensor->shape);
    v.emplace_back(p.tensor->shape);
  }
  t = 0;
}

template <typename T>
void Adam<T>::step(const std::vector<ParamRef<T>>& params, const GradVec<T>& grads) {
  if (params.size() != grads.size() || params.size() != m.size()) {
    throw Error(ErrorCode::ShapeMismatch, "adam step: parameter/gradient count mismatch");
  }
  ++t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i].tensor;
    const Tensor<T>& g = grads[i];
    if (!p.same_shape(g)) {
      throw Error(ErrorCode::ShapeMismatch, "adam step: shape mismatch for " + params[i].name);
    }
    for (size_t j = 0; j < p.data.size(); ++j) {
      const double gj = static_cast<double>(g.data[j]);
      const double mj = beta1 * static_cast<double>(m[i].data[j]) + (1.0 - beta1) * gj;
      const double vj = beta2 * static_cast<double>(v[i].data[j]) + (1.0 - beta2) * gj * gj;
      m[i].data[j] = static_cast<T>(mj);
      v[i].data[j] = static_cast<T>(vj);
      const double m_hat = mj / c1;
      const double v_hat = vj / c2;
      p.data[j] = static_cast<T>(static_cast<double>(p.data[j]) - lr * m_hat / (std::sqrt(v_hat) + eps));
    }
  }
}

// ---------------------------------------------------------------------------
// Gradient check

GradCheckResult grad_check(const std::vector<ParamRef<double>>& params,
                           const GradVec<double>& analytic,
                           const std::function<double()>& loss_fn, int n_samples, double step,
                           Rng& rng) {
  long total = 0;
  for (const ParamRef<double>& p : params) total += p.tensor->numel();

  GradCheckResult result;
  for (int s = 0; s < n_samples; ++s) {
    long flat = rng.uniform_int(0, total - 1);
    size_t which = 0;
    while (flat >= params[which].tensor->numel()) {
      flat -= params[which].tensor->numel();
      ++which;
    }
    double& value = params[which].tensor->data[static_cast<size_t>(flat)];
    const double saved = value;
    value = saved + step;
    const double loss_hi = loss_fn();
    value = saved - step;
    const double loss_lo = loss_fn();
    value = saved;

    const double numeric = (loss_hi - loss_lo) / (2.0 * step);
    const double analytic_g = analytic[which].data[static_cast<size_t>(flat)];
    const double denom = std::max({std::abs(numeric), std::abs(analytic_g), 1e-8});
    result.max_rel_err = std::max(result.max_rel_err, std::abs(analytic_g - numeric) / denom);
    ++result.checked;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Weight container

static_assert(std::endian::native == std::endian::little,
              "weight container assumes a little-endian host");

void save_weights(const std::filesystem::path& path, const std::vector<ParamRef<float>>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(ErrorCode::IoError, "cannot write '" + path.string() + "'");
  }
  out.write(kWeightsMagic, sizeof(kWeightsMagic));
  write_u32(out, static_cast<uint32_t>(params.size()));
  for (const ParamRef<float>& p : params) {
    write_u32(out, static_cast<uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_u32(out, static_cast<uint32_t>(p.tensor->shape.size()));
    for (int d : p.tensor->shape) write_u32(out, static_cast<uint32_t>(d));
    out.write(reinterpret_cast<const char*>(p.tensor->data.data()),
              static_cast<std::streamsize>(p.tensor->data.size() * sizeof(float)));
  }
  if (!out) {
    throw Error(ErrorCode::IoError, "short write to '" + path.string() + "'");
  }
}

void load_weights(const std::filesystem::path& path, std::vector<ParamRef<float>>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "'");
  }
  char magic[sizeof(kWeightsMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kWeightsMagic, sizeof(magic)) != 0) {
    throw Error(ErrorCode::ParseError, "bad weight-file magic in '" + path.string() + "'");
  }
  const uint32_t count = read_u32(in);
  if (count != params.size()) {
    throw Error(ErrorCode::ShapeMismatch, "weight-file tensor count mismatch");
  }
  for (ParamRef<float>& p : params) {
    const uint32_t name_len = read_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    if (name != p.name) {
      throw Error(ErrorCode::ShapeMismatch,
                  "weight-file tensor '" + name + "' does not match expected '" + p.name + "'");
    }
    const uint32_t ndim = read_u32(in);
    std::vector<int> shape(ndim);
    for (uint32_t i = 0; i < ndim; ++i) shape[i] = static_cast<int>(read_u32(in));
    if (shape != p.tensor->shape) {
      throw Error(ErrorCode::ShapeMismatch, "weight-file shape mismatch for '" + name + "'");
    }
    in.read(reinterpret_cast<char*>(p.tensor->data.data()),
            static_cast<std::streamsize>(p.tensor->data.size() * sizeof(float)));
  }
  if (!in) {
    throw Error(ErrorCode::ParseError, "truncated weight file '" + path.string() + "'");
  }
}

// ---------------------------------------------------------------------------
// Explicit instantiations

template struct Conv2d<float>;
template struct Conv2d<double>;
template struct Dense<float>;
template struct Dense<double>;
template struct LstmLayer<float>;
template struct LstmLayer<double>;
template struct CnnModel<float>;
template struct CnnModel<double>;
template struct CnnBlstmModel<float>;
template struct CnnBlstmModel<double>;
template struct Adam<float>;
template struct Adam<double>;

template Tensor<float> maxpool2d<float>(const Tensor<float>&, MaxPoolCache*);
template Tensor<double> maxpool2d<double>(const Tensor<double>&, MaxPoolCache*);
template Tensor<float> maxpool2d_backward<float>(const Tensor<float>&, const MaxPoolCache&);
template Tensor<double> maxpool2d_backward<double>(const Tensor<double>&, const MaxPoolCache&);
template void relu_inplace<float>(Tensor<float>&);
template void relu_inplace<double>(Tensor<double>&);
template void relu_inplace<float>(std::vector<float>&);
template void relu_inplace<double>(std::vector<double>&);
template void relu_backward_inplace<float>(std::vector<float>&, const std::vector<float>&);
template void relu_backward_inplace<double>(std::vector<double>&, const std::vector<double>&);
template void relu_backward_inplace<float>(Tensor<float>&, const Tensor<float>&);
template void relu_backward_inplace<double>(Tensor<double>&, const Tensor<double>&);
template std::vector<double> softmax<float>(const std::vector<float>&);
template std::vector<double> softmax<double>(const std::vector<double>&);
template double cross_entropy<float>(const std::vector<float>&, int, std::vector<float>*);
template double cross_entropy<double>(const std::vector<double>&, int, std::vector<double>*);
template std::vector<float> permutation_invariant_mean<float>(const std::vector<std::vector<float>>&);
template std::vector<double> permutation_invariant_mean<double>(const std::vector<std::vector<double>>&);

}  // namespace graphocog::micronet
