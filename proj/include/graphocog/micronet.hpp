#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "graphocog/common.hpp"

namespace graphocog::micronet {

// Row-major dense tensor. 32-bit storage is used on the training path
// (T = float); verification paths instantiate T = double so that
// finite-difference checks are meaningful at tight tolerances. Scalar
// reductions (dot products, losses, means, bias gradients) accumulate in
// double; matrix-product accumulation buffers stay in T with a fixed
// summation order, so results are deterministic for a given seed and data
// order.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), T(0));
  }

  static long numel_of(const std::vector<int>& s) {
    long n = 1;
    for (int d : s) n *= d;
    return n;
  }

  long numel() const { return static_cast<long>(data.size()); }
  int dim(size_t i) const { return shape[i]; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& at(int i) { return data[static_cast<size_t>(i)]; }
  T at(int i) const { return data[static_cast<size_t>(i)]; }
  T& at(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
  T at(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }
  T& at(int i, int j, int k) {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  T at(int i, int j, int k) const {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  T& at4(int i, int j, int k, int l) {
    return data[((static_cast<size_t>(i) * shape[1] + j) * shape[2] + k) * static_cast<size_t>(shape[3]) + l];
  }
  T at4(int i, int j, int k, int l) const {
    return data[((static_cast<size_t>(i) * shape[1] + j) * shape[2] + k) * static_cast<size_t>(shape[3]) + l];
  }

  void zero() { std::fill(data.begin(), data.end(), T(0)); }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor = nullptr;
};

template <typename T>
using GradVec = std::vector<Tensor<T>>;

// ---------------------------------------------------------------------------
// Layers

// Valid-padding stride-1 convolution. Inputs narrower than the kernel on
// either spatial axis are zero-padded up to kernel size before convolving
// (frame widths of 1-2 columns occur in the short-window sweeps).
template <typename T>
struct Conv2d {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  Tensor<T> kernels;  // [K, C, k, k]
  Tensor<T> bias;     // [K]

  struct Cache {
    int in_h = 0, in_w = 0;
    int padded_h = 0, padded_w = 0;
    int out_h = 0, out_w = 0;
    Tensor<T> cols;  // [C*k*k, out_h*out_w]
  };

  static Conv2d make(int in_c, int out_c, int kernel, Rng& rng);
  long param_count() const { return kernels.numel() + bias.numel(); }

  Tensor<T> forward(const Tensor<T>& x, Cache* cache) const;
  // dy: [K, out_h, out_w]. Accumulates into dk/db; returns dx (raw input
  // dims) when compute_dx is set, else an empty tensor.
  Tensor<T> backward(const Tensor<T>& dy, const Cache& cache, Tensor<T>& dk, Tensor<T>& db,
                     bool compute_dx) const;
};

struct MaxPoolCache {
  int channels = 0, in_h = 0, in_w = 0, out_h = 0, out_w = 0;
  std::vector<int> argmax;  // flat input index per output element
};

// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, MaxPoolCache* cache);
template <typename T>
Tensor<T> maxpool2d_backward(const Tensor<T>& dy, const MaxPoolCache& cache);

template <typename T>
void relu_inplace(Tensor<T>& x);
template <typename T>
void relu_inplace(std::vector<T>& x);
// dx = dy where the forward output was > 0.
template <typename T>
void relu_backward_inplace(std::vector<T>& dy, const std::vector<T>& y);
template <typename T>
void relu_backward_inplace(Tensor<T>& dy, const Tensor<T>& y);

template <typename T>
struct Dense {
  int in_dim = 0;
  int out_dim = 0;
  Tensor<T> w;  // [out, in]
  Tensor<T> b;  // [out]

  static Dense make(int in, int out, Rng& rng);
  long param_count() const { return w.numel() + b.numel(); }

  std::vector<T> forward(const std::vector<T>& x) const;
  std::vector<T> backward(const std::vector<T>& x, const std::vector<T>& dy, Tensor<T>& dw,
                          Tensor<T>& db) const;
};

// Stable softmax probabilities (log-sum-exp form).
template <typename T>
std::vector<double> softmax(const std::vector<T>& logits);

// -log softmax(logits)[label]; optionally fills dlogits.
template <typename T>
double cross_entropy(const std::vector<T>& logits, int label, std::vector<T>* dlogits);

// Single-direction LSTM layer, gate order i, f, g, o.
template <typename T>
struct LstmLayer {
  int input_dim = 0;
  int hidden = 0;
  Tensor<T> w_x;  // [4H, D]
  Tensor<T> w_h;  // [4H, H]
  Tensor<T> b;    // [4H]; forget slice starts at +1

  struct Cache {
    std::vector<std::vector<T>> x;      // input per step
    std::vector<std::vector<T>> gates;  // activated i,f,g,o per step [4H]
    std::vector<std::vector<T>> c;      // cell state per step
    std::vector<std::vector<T>> h;      // hidden output per step
  };

  static LstmLayer make(int input_dim, int hidden, Rng& rng);
  long param_count() const { return w_x.numel() + w_h.numel() + b.numel(); }

  std::vector<std::vector<T>> forward(const std::vector<std::vector<T>>& seq, Cache* cache) const;
  // dh_ext: external gradient per step output. Returns dx per step.
  std::vector<std::vector<T>> backward(const std::vector<std::vector<T>>& dh_ext, const Cache& cache,
                                       Tensor<T>& dwx, Tensor<T>& dwh, Tensor<T>& db) const;
};

// Order-independent mean: per dimension the addends are sorted by value
// before summing (in double), so any permutation of the inputs yields
// bitwise-identical output.
template <typename T>
std::vector<T> permutation_invariant_mean(const std::vector<std::vector<T>>& vecs);

// ---------------------------------------------------------------------------
// Models

struct CnnConfig {
  int in_channels = 4;
  int input_height = 129;
  int input_width = 65;
  int conv1_filters = 32;
  int conv2_filters = 64;
  int kernel = 3;
  int fc_hidden = 128;
  int n_classes = 2;
};

struct BlstmConfig {
  int layers = 3;
  int hidden_per_direction = 64;
};

// Static per-stage dimensions, including which pool stages run. A pool stage
// is skipped when its input is smaller than the 2x2 window on either axis.
struct ShapeTrace {
  int in_c = 0, in_h = 0, in_w = 0;
  int conv1_h = 0, conv1_w = 0;
  bool pool1_applied = true;
  int pool1_h = 0, pool1_w = 0;
  int conv2_h = 0, conv2_w = 0;
  bool pool2_applied = true;
  int pool2_h = 0, pool2_w = 0;
  int feature_len = 0;
  std::string describe() const;
};

ShapeTrace trace_shapes(const CnnConfig& cfg);

template <typename T>
struct CnnModel {
  CnnConfig cfg;
  ShapeTrace trace;
  Conv2d<T> conv1, conv2;
  Dense<T> fc1, fc2;

  static CnnModel build(const CnnConfig& cfg, uint64_t seed);

  std::vector<ParamRef<T>> params();
  GradVec<T> zero_grads() const;
  std::string describe() const { return trace.describe(); }

  struct ExtractCache {
    typename Conv2d<T>::Cache c1, c2;
    MaxPoolCache p1, p2;
    Tensor<T> a1, a2;  // post-ReLU conv activations
  };

  // Flattened feature vector from the conv stack (the pre-classifier
  // representation shared by all three pipelines).
  std::vector<T> extract(const Tensor<T>& x, ExtractCache* cache) const;
  void extract_backward(const std::vector<T>& dfeat, const ExtractCache& cache, Tensor<T>& dk1,
                        Tensor<T>& db1, Tensor<T>& dk2, Tensor<T>& db2) const;

  struct HeadCache {
    std::vector<T> feat;
    std::vector<T> hidden;  // post-ReLU fc1 output
  };

  std::vector<T> head_forward(const std::vector<T>& feat, HeadCache* cache) const;
  std::vector<T> head_backward(const std::vector<T>& dlogits, const HeadCache& cache, Tensor<T>& dw1,
                               Tensor<T>& db1, Tensor<T>& dw2, Tensor<T>& db2) const;

  std::vector<T> forward(const Tensor<T>& x) const;
  // Frame features are averaged (order-independently) before the classifier.
  std::vector<T> forward_frames(const std::vector<Tensor<T>>& frames) const;

  double loss(const Tensor<T>& x, int label) const;
  double loss_frames(const std::vector<Tensor<T>>& frames, int label) const;
  double train_step(const Tensor<T>& x, int label, GradVec<T>& grads) const;
  double train_step_frames(const std::vector<Tensor<T>>& frames, int label, GradVec<T>& grads) const;
};

template <typename T>
struct CnnBlstmModel {
  CnnConfig extractor_cfg;
  BlstmConfig blstm_cfg;
  ShapeTrace trace;
  Conv2d<T> conv1, conv2;
  std::vector<LstmLayer<T>> lstm_fw;  // one per stacked layer
  std::vector<LstmLayer<T>> lstm_bw;
  Dense<T> fc1, fc2;

  static CnnBlstmModel build(const CnnConfig& extractor, const BlstmConfig& blstm, uint64_t seed);

  std::vector<ParamRef<T>> params();
  GradVec<T> zero_grads() const;
  std::string describe() const;

  // BLSTM over a ready-made feature sequence; one [2H] vector per frame.
  std::vector<std::vector<T>> blstm_apply(const std::vector<std::vector<T>>& feats) const;
  // Logits from a feature sequence (BLSTM -> mean -> classifier head).
  std::vector<T> forward_features(const std::vector<std::vector<T>>& feats) const;

  std::vector<T> forward_frames(const std::vector<Tensor<T>>& frames) const;
  double loss_frames(const std::vector<Tensor<T>>& frames, int label) const;
  double train_step_frames(const std::vector<Tensor<T>>& frames, int label, GradVec<T>& grads) const;

  std::vector<T> extract_frame(const Tensor<T>& x, typename CnnModel<T>::ExtractCache* cache) const;
  void extract_frame_backward(const std::vector<T>& dfeat,
                              const typename CnnModel<T>::ExtractCache& cache, Tensor<T>& dk1,
                              Tensor<T>& db1, Tensor<T>& dk2, Tensor<T>& db2) const;
};

// ---------------------------------------------------------------------------
// Optimizer

template <typename T>
struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long t = 0;
  std::vector<Tensor<T>> m, v;

  void attach(const std::vector<ParamRef<T>>& params);
  void step(const std::vector<ParamRef<T>>& params, const GradVec<T>& grads);
};

// ---------------------------------------------------------------------------
// Verification

struct GradCheckResult {
  double max_rel_err = 0.0;
  int checked = 0;
};

// Central differences over randomly sampled parameters against the supplied
// analytic gradients. loss_fn must recompute the loss at the current
// parameter values.
GradCheckResult grad_check(const std::vector<ParamRef<double>>& params,
                           const GradVec<double>& analytic,
                           const std::function<double()>& loss_fn, int n_samples, double step,
                           Rng& rng);

// ---------------------------------------------------------------------------
// Weight container (bit-exact round trip, float storage)

void save_weights(const std::filesystem::path& path, const std::vector<ParamRef<float>>& params);
void load_weights(const std::filesystem::path& path, std::vector<ParamRef<float>>& params);

}  // namespace graphocog::micronet
