#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "pivotkit/errors.hpp"
#include "pivotkit/rng.hpp"

namespace pk::nn {

// Networks are templated on the scalar so the training path runs in float32
// while gradient checks compare analytic and finite-difference derivatives in
// double precision on the same code path. Batches are column-major:
// (features x batch).

struct MlpSpec {
  int input = 0;
  std::vector<int> hidden = {128, 128};
  int output = 0;

  bool valid() const { return input > 0 && output > 0 && !hidden.empty(); }
};

struct TcnSpec {
  int input_channels = 0;
  int channels = 128;
  int kernel = 2;
  std::vector<int> dilations = {1, 2, 4};

  int receptive_field() const {
    int rf = 1;
    for (int d : dilations) rf += (kernel - 1) * d;
    return rf;
  }
};

struct MaskEncoderSpec {
  int width = 64, height = 48;
  std::vector<int> channels = {16, 32, 64};
  std::vector<int> kernels = {3, 3, 3};
  std::vector<int> strides = {2, 2, 1};
  int pool_h = 8, pool_w = 8;
  int features = 128;
};

/// Uniform +-sqrt(6 / (fan_in + fan_out)) initialization from a seeded stream.
template <typename S>
void glorot_fill(Eigen::Matrix<S, Eigen::Dynamic, 1>& params, int offset, int rows, int cols,
                 Rng& rng) {
  const double bound = std::sqrt(6.0 / (rows + cols));
  for (int i = 0; i < rows * cols; ++i)
    params(offset + i) = static_cast<S>(rng.uniform(-bound, bound));
}

template <typename S>
class MlpT {
 public:
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

  MlpT() = default;
  MlpT(const MlpSpec& spec, std::uint64_t seed);

  struct Cache {
    std::vector<Mat> layer_in;  // input to each linear layer
  };

  /// Deterministic forward; tanh on hidden layers, identity output.
  Mat forward(const Mat& x, Cache* cache = nullptr) const;

  /// Accumulates parameter gradients (+=) and returns input gradients.
  Mat backward(const Cache& cache, const Mat& grad_out, Vec& grad_params) const;

  template <typename S2>
  MlpT<S2> cast() const {
    MlpT<S2> m;
    m.spec_ = spec_;
    m.params_ = params_.template cast<S2>();
    return m;
  }

  const MlpSpec& spec() const { return spec_; }
  Vec& params() { return params_; }
  const Vec& params() const { return params_; }
  int param_count() const { return static_cast<int>(params_.size()); }

  template <typename>
  friend class MlpT;

 private:
  MlpSpec spec_;
  Vec params_;
};

template <typename S>
class TcnT {
 public:
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

  TcnT() = default;
  TcnT(const TcnSpec& spec, std::uint64_t seed);

  struct Cache {
    std::vector<Mat> layer_in;   // (channels x T) input sequence per layer
    std::vector<Mat> preact;     // pre-ReLU outputs
  };

  /// Causal dilated convolution stack over one sequence (channels x T);
  /// output at time t depends only on inputs <= t (zero left padding).
  Mat forward(const Mat& x, Cache* cache = nullptr) const;
  Mat backward(const Cache& cache, const Mat& grad_out, Vec& grad_params) const;

  template <typename S2>
  TcnT<S2> cast() const {
    TcnT<S2> m;
    m.spec_ = spec_;
    m.params_ = params_.template cast<S2>();
    return m;
  }

  const TcnSpec& spec() const { return spec_; }
  Vec& params() { return params_; }
  const Vec& params() const { return params_; }
  int param_count() const { return static_cast<int>(params_.size()); }

  template <typename>
  friend class TcnT;

 private:
  MlpSpec dummy_;
  TcnSpec spec_;
  Vec params_;
};

template <typename S>
class MaskEncoderT {
 public:
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

  MaskEncoderT() = default;
  MaskEncoderT(const MaskEncoderSpec& spec, std::uint64_t seed);

  struct Cache {
    std::vector<Mat> cols;     // im2col matrices per conv layer
    std::vector<Mat> preact;   // pre-ReLU conv outputs (C_out x HW*B)
    std::vector<int> hw;       // spatial dims per layer
    Mat pooled;                // (C*pool_h*pool_w x B)
    int batch = 0;
  };

  /// Input: (H*W x batch) of {0,1} masks, row-major pixels. Output:
  /// (features x batch).
  Mat forward(const Mat& x, Cache* cache = nullptr) const;
  Mat backward(const Cache& cache, const Mat& grad_out, Vec& grad_params) const;

  template <typename S2>
  MaskEncoderT<S2> cast() const {
    MaskEncoderT<S2> m;
    m.spec_ = spec_;
    m.params_ = params_.template cast<S2>();
    return m;
  }

  const MaskEncoderSpec& spec() const { return spec_; }
  Vec& params() { return params_; }
  const Vec& params() const { return params_; }
  int param_count() const { return static_cast<int>(params_.size()); }

  template <typename>
  friend class MaskEncoderT;

 private:
  MaskEncoderSpec spec_;
  Vec params_;
};

using Mlp = MlpT<float>;
using Tcn = TcnT<float>;
using MaskEncoder = MaskEncoderT<float>;

/// Standard Adam with bias correction over a flat parameter vector.
class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(int n, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                     double eps = 1e-8)
      : m_(Eigen::VectorXf::Zero(n)), v_(Eigen::VectorXf::Zero(n)), lr_(lr), b1_(beta1),
        b2_(beta2), eps_(eps) {}

  void step(Eigen::VectorXf& params, const Eigen::VectorXf& grads);

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  long steps() const { return t_; }

 private:
  Eigen::VectorXf m_, v_;
  double lr_ = 1e-3, b1_ = 0.9, b2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
};

/// Squashed-Gaussian head utilities shared by the actor.
/// Mean/log-std rows in, bounded action and log-probability out.
struct SquashedGaussian {
  static constexpr float kLogStdMin = -5.0f;
  static constexpr float kLogStdMax = 2.0f;

  /// a = scale * tanh(mu + std * xi); returns log pi(a) including the
  /// squashing correction, summed over action dimensions.
  static void sample(const Eigen::VectorXf& mean, const Eigen::VectorXf& log_std, double scale,
                     Rng& rng, Eigen::VectorXf& action, double& log_prob);

  /// Deterministic action: scale * tanh(mean).
  static Eigen::VectorXf mean_action(const Eigen::VectorXf& mean, double scale);
};

}  // namespace pk::nn
