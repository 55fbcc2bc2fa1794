#include "pivotkit/nn.hpp"

#include <cmath>

namespace pk::nn {

namespace {

template <typename S>
int mlp_param_count(const MlpSpec& spec) {
  int n = 0;
  int prev = spec.input;
  for (int h : spec.hidden) {
    n += h * prev + h;
    prev = h;
  }
  n += spec.output * prev + spec.output;
  return n;
}

}  // namespace

// ---------------------------------------------------------------------------
// MLP
// ---------------------------------------------------------------------------

template <typename S>
MlpT<S>::MlpT(const MlpSpec& spec, std::uint64_t seed) : spec_(spec) {
  if (!spec.valid()) throw ConfigError("MlpSpec invalid");
  params_ = Vec::Zero(mlp_param_count<S>(spec));
  Rng rng(seed);
  int off = 0;
  int prev = spec.input;
  std::vector<int> widths = spec.hidden;
  widths.push_back(spec.output);
  for (int w : widths) {
    glorot_fill(params_, off, w, prev, rng);
    off += w * prev + w;  // biases stay zero
    prev = w;
  }
}

template <typename S>
typename MlpT<S>::Mat MlpT<S>::forward(const Mat& x, Cache* cache) const {
  if (x.rows() != spec_.input) throw ConfigError("Mlp::forward: input dim mismatch");
  std::vector<int> widths = spec_.hidden;
  widths.push_back(spec_.output);
  Mat a = x;
  if (cache) cache->layer_in.clear();
  int off = 0;
  int prev = spec_.input;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const int w = widths[i];
    if (cache) cache->layer_in.push_back(a);
    const Eigen::Map<const Mat> W(params_.data() + off, w, prev);
    const Eigen::Map<const Vec> b(params_.data() + off + w * prev, w);
    Mat z = (W * a).colwise() + b;
    if (i + 1 < widths.size())
      a = z.array().tanh().matrix();
    else
      a = std::move(z);
    off += w * prev + w;
    prev = w;
  }
  return a;
}

template <typename S>
typename MlpT<S>::Mat MlpT<S>::backward(const Cache& cache, const Mat& grad_out,
                                        Vec& grad_params) const {
  std::vector<int> widths = spec_.hidden;
  widths.push_back(spec_.output);
  if (grad_params.size() != params_.size()) grad_params = Vec::Zero(params_.size());

  // Recompute layer offsets.
  std::vector<int> offs(widths.size());
  {
    int off = 0;
    int prev = spec_.input;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      offs[i] = off;
      off += widths[i] * prev + widths[i];
      prev = widths[i];
    }
  }

  Mat g = grad_out;
  for (int i = static_cast<int>(widths.size()) - 1; i >= 0; --i) {
    const int w = widths[static_cast<std::size_t>(i)];
    const int prev = i == 0 ? spec_.input : widths[static_cast<std::size_t>(i - 1)];
    const Mat& a_in = cache.layer_in[static_cast<std::size_t>(i)];
    Eigen::Map<Mat> dW(grad_params.data() + offs[static_cast<std::size_t>(i)], w, prev);
    Eigen::Map<Vec> db(grad_params.data() + offs[static_cast<std::size_t>(i)] + w * prev, w);
    dW.noalias() += g * a_in.transpose();
    db += g.rowwise().sum();
    const Eigen::Map<const Mat> W(params_.data() + offs[static_cast<std::size_t>(i)], w, prev);
    g = W.transpose() * g;
    if (i > 0) {
      // a_in is the tanh output of layer i-1.
      g = g.cwiseProduct((Mat::Ones(a_in.rows(), a_in.cols()) - a_in.cwiseProduct(a_in)));
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// TCN
// ---------------------------------------------------------------------------

namespace {

template <typename S>
int tcn_param_count(const TcnSpec& spec) {
  int n = 0;
  int prev = spec.input_channels;
  for (std::size_t l = 0; l < spec.dilations.size(); ++l) {
    n += spec.kernel * spec.channels * prev + spec.channels;
    prev = spec.channels;
  }
  return n;
}

}  // namespace

template <typename S>
TcnT<S>::TcnT(const TcnSpec& spec, std::uint64_t seed) : spec_(spec) {
  if (spec.input_channels <= 0) throw ConfigError("TcnSpec invalid");
  params_ = Vec::Zero(tcn_param_count<S>(spec));
  Rng rng(seed);
  int off = 0;
  int prev = spec.input_channels;
  for (std::size_t l = 0; l < spec.dilations.size(); ++l) {
    // Fan-in counts every kernel tap; each tap block holds channels x prev.
    const double bound = std::sqrt(6.0 / (spec.channels + prev * spec.kernel));
    for (int k = 0; k < spec.kernel; ++k) {
      for (int i = 0; i < spec.channels * prev; ++i)
        params_(off + i) = static_cast<S>(rng.uniform(-bound, bound));
      off += spec.channels * prev;
    }
    off += spec.channels;  // bias zero
    prev = spec.channels;
  }
}

template <typename S>
typename TcnT<S>::Mat TcnT<S>::forward(const Mat& x, Cache* cache) const {
  if (x.rows() != spec_.input_channels) throw ConfigError("Tcn::forward: channel mismatch");
  const int T = static_cast<int>(x.cols());
  Mat a = x;
  if (cache) {
    cache->layer_in.clear();
    cache->preact.clear();
  }
  int off = 0;
  int prev = spec_.input_channels;
  for (std::size_t l = 0; l < spec_.dilations.size(); ++l) {
    const int d = spec_.dilations[l];
    const int C = spec_.channels;
    if (cache) cache->layer_in.push_back(a);
    std::vector<Eigen::Map<const Mat>> W;
    W.reserve(static_cast<std::size_t>(spec_.kernel));
    for (int k = 0; k < spec_.kernel; ++k) {
      W.emplace_back(params_.data() + off, C, prev);
      off += C * prev;
    }
    const Eigen::Map<const Vec> b(params_.data() + off, C);
    off += C;

    Mat z = Mat::Zero(C, T);
    for (int t = 0; t < T; ++t) {
      // tap k looks back (kernel - 1 - k) * d steps; the last tap is current.
      typename Mat::ColXpr zc = z.col(t);
      for (int k = 0; k < spec_.kernel; ++k) {
        const int src = t - (spec_.kernel - 1 - k) * d;
        if (src >= 0) zc.noalias() += W[static_cast<std::size_t>(k)] * a.col(src);
      }
      zc += b;
    }
    if (cache) cache->preact.push_back(z);
    a = z.cwiseMax(S(0));
    prev = C;
  }
  return a;
}

template <typename S>
typename TcnT<S>::Mat TcnT<S>::backward(const Cache& cache, const Mat& grad_out,
                                        Vec& grad_params) const {
  if (grad_params.size() != params_.size()) grad_params = Vec::Zero(params_.size());
  const int T = static_cast<int>(grad_out.cols());
  const int L = static_cast<int>(spec_.dilations.size());

  std::vector<int> offs(static_cast<std::size_t>(L));
  {
    int off = 0;
    int prev = spec_.input_channels;
    for (int l = 0; l < L; ++l) {
      offs[static_cast<std::size_t>(l)] = off;
      off += spec_.kernel * spec_.channels * prev + spec_.channels;
      prev = spec_.channels;
    }
  }

  Mat g = grad_out;
  for (int l = L - 1; l >= 0; --l) {
    const int d = spec_.dilations[static_cast<std::size_t>(l)];
    const int C = spec_.channels;
    const int prev = l == 0 ? spec_.input_channels : spec_.channels;
    const Mat& a_in = cache.layer_in[static_cast<std::size_t>(l)];
    const Mat& z = cache.preact[static_cast<std::size_t>(l)];
    // ReLU mask.
    Mat gz = (z.array() > S(0)).template cast<S>().matrix().cwiseProduct(g);

    Mat g_in = Mat::Zero(prev, T);
    const int base = offs[static_cast<std::size_t>(l)];
    Eigen::Map<Vec> db(grad_params.data() + base + spec_.kernel * C * prev, C);
    db += gz.rowwise().sum();
    for (int k = 0; k < spec_.kernel; ++k) {
      Eigen::Map<Mat> dW(grad_params.data() + base + k * C * prev, C, prev);
      const Eigen::Map<const Mat> W(params_.data() + base + k * C * prev, C, prev);
      const int lag = (spec_.kernel - 1 - k) * d;
      for (int t = 0; t < T; ++t) {
        const int src = t - lag;
        if (src < 0) continue;
        dW.noalias() += gz.col(t) * a_in.col(src).transpose();
        g_in.col(src).noalias() += W.transpose() * gz.col(t);
      }
    }
    g = std::move(g_in);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Mask encoder
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
  int h_in, w_in, c_in, h_out, w_out, c_out, stride;
};

template <typename S>
int mask_param_count(const MaskEncoderSpec& spec) {
  int n = 0;
  int c_prev = 1;
  for (std::size_t l = 0; l < spec.channels.size(); ++l) {
    n += spec.channels[l] * c_prev * spec.kernels[l] * spec.kernels[l] + spec.channels[l];
    c_prev = spec.channels[l];
  }
  n += spec.features * (c_prev * spec.pool_h * spec.pool_w) + spec.features;
  return n;
}

std::vector<ConvDims> conv_dims(const MaskEncoderSpec& spec) {
  std::vector<ConvDims> dims;
  int h = spec.height, w = spec.width, c = 1;
  for (std::size_t l = 0; l < spec.channels.size(); ++l) {
    ConvDims d;
    d.h_in = h;
    d.w_in = w;
    d.c_in = c;
    d.stride = spec.strides[l];
    d.c_out = spec.channels[l];
    // kernel 3, padding 1
    d.h_out = (h - 1) / d.stride + 1;
    d.w_out = (w - 1) / d.stride + 1;
    dims.push_back(d);
    h = d.h_out;
    w = d.w_out;
    c = d.c_out;
  }
  return dims;
}

// Image layout inside a batch column: channel-major row-major pixels,
// index = c * H * W + row * W + col.
template <typename S>
void im2col(const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& x, const ConvDims& d,
            Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& cols) {
  const int B = static_cast<int>(x.cols());
  const int hw_out = d.h_out * d.w_out;
  cols.setZero(d.c_in * 9, hw_out * B);
  for (int b = 0; b < B; ++b) {
    for (int ro = 0; ro < d.h_out; ++ro) {
      for (int co = 0; co < d.w_out; ++co) {
        const int col = b * hw_out + ro * d.w_out + co;
        for (int c = 0; c < d.c_in; ++c) {
          for (int ky = 0; ky < 3; ++ky) {
            const int ri = ro * d.stride + ky - 1;
            if (ri < 0 || ri >= d.h_in) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ci = co * d.stride + kx - 1;
              if (ci < 0 || ci >= d.w_in) continue;
              cols(c * 9 + ky * 3 + kx, col) = x(c * d.h_in * d.w_in + ri * d.w_in + ci, b);
            }
          }
        }
      }
    }
  }
}

template <typename S>
void col2im(const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& cols, const ConvDims& d,
            Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& x) {
  const int B = static_cast<int>(x.cols());
  const int hw_out = d.h_out * d.w_out;
  for (int b = 0; b < B; ++b) {
    for (int ro = 0; ro < d.h_out; ++ro) {
      for (int co = 0; co < d.w_out; ++co) {
        const int col = b * hw_out + ro * d.w_out + co;
        for (int c = 0; c < d.c_in; ++c) {
          for (int ky = 0; ky < 3; ++ky) {
            const int ri = ro * d.stride + ky - 1;
            if (ri < 0 || ri >= d.h_in) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ci = co * d.stride + kx - 1;
              if (ci < 0 || ci >= d.w_in) continue;
              x(c * d.h_in * d.w_in + ri * d.w_in + ci, b) += cols(c * 9 + ky * 3 + kx, col);
            }
          }
        }
      }
    }
  }
}

// (C x HW*B) activation blocks -> (C*HW x B) image columns.
template <typename S>
void act_to_image(const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& act, int hw, int B,
                  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& img) {
  const int C = static_cast<int>(act.rows());
  img.resize(C * hw, B);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      img.col(b).segment(c * hw, hw) = act.row(c).segment(b * hw, hw).transpose();
}

template <typename S>
void image_to_act(const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& img, int C, int hw,
                  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& act) {
  const int B = static_cast<int>(img.cols());
  act.resize(C, hw * B);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      act.row(c).segment(b * hw, hw) = img.col(b).segment(c * hw, hw).transpose();
}

// Adaptive average pooling boundaries (floor/ceil rule).
inline std::pair<int, int> pool_span(int i, int out, int in) {
  const int lo = (i * in) / out;
  const int hi = ((i + 1) * in + out - 1) / out;
  return {lo, hi};
}

}  // namespace

template <typename S>
MaskEncoderT<S>::MaskEncoderT(const MaskEncoderSpec& spec, std::uint64_t seed) : spec_(spec) {
  params_ = Vec::Zero(mask_param_count<S>(spec));
  Rng rng(seed);
  int off = 0;
  int c_prev = 1;
  for (std::size_t l = 0; l < spec.channels.size(); ++l) {
    const int rows = spec.channels[l];
    const int cols = c_prev * 9;
    glorot_fill(params_, off, rows, cols, rng);
    off += rows * cols + rows;
    c_prev = spec.channels[l];
  }
  glorot_fill(params_, off, spec.features, c_prev * spec.pool_h * spec.pool_w, rng);
}

template <typename S>
typename MaskEncoderT<S>::Mat MaskEncoderT<S>::forward(const Mat& x, Cache* cache) const {
  const auto dims = conv_dims(spec_);
  const int B = static_cast<int>(x.cols());
  if (x.rows() != spec_.width * spec_.height)
    throw ConfigError("MaskEncoder::forward: grid size mismatch");

  Cache local;
  Cache& c = cache ? *cache : local;
  c.cols.clear();
  c.preact.clear();
  c.hw.clear();
  c.batch = B;

  Mat img = x;
  int off = 0;
  for (std::size_t l = 0; l < dims.size(); ++l) {
    const auto& d = dims[l];
    Mat cols;
    im2col(img, d, cols);
    const Eigen::Map<const Mat> W(params_.data() + off, d.c_out, d.c_in * 9);
    const Eigen::Map<const Vec> b(params_.data() + off + d.c_out * d.c_in * 9, d.c_out);
    off += d.c_out * d.c_in * 9 + d.c_out;
    Mat z = (W * cols).colwise() + b;  // (C_out x HW_out*B)
    c.cols.push_back(std::move(cols));
    c.preact.push_back(z);
    c.hw.push_back(d.h_out * d.w_out);
    Mat act = z.cwiseMax(S(0));
    act_to_image(act, d.h_out * d.w_out, B, img);
  }

  // Adaptive average pool to pool_h x pool_w.
  const auto& last = dims.back();
  const int C = last.c_out;
  Mat pooled(C * spec_.pool_h * spec_.pool_w, B);
  for (int b = 0; b < B; ++b) {
    for (int ch = 0; ch < C; ++ch) {
      for (int i = 0; i < spec_.pool_h; ++i) {
        const auto [r0, r1] = pool_span(i, spec_.pool_h, last.h_out);
        for (int j = 0; j < spec_.pool_w; ++j) {
          const auto [c0, c1] = pool_span(j, spec_.pool_w, last.w_out);
          S sum = 0;
          for (int r = r0; r < r1; ++r)
            for (int cc = c0; cc < c1; ++cc)
              sum += img(ch * last.h_out * last.w_out + r * last.w_out + cc, b);
          pooled(ch * spec_.pool_h * spec_.pool_w + i * spec_.pool_w + j, b) =
              sum / static_cast<S>((r1 - r0) * (c1 - c0));
        }
      }
    }
  }
  c.pooled = pooled;

  const int fin = C * spec_.pool_h * spec_.pool_w;
  const Eigen::Map<const Mat> Wf(params_.data() + off, spec_.features, fin);
  const Eigen::Map<const Vec> bf(params_.data() + off + spec_.features * fin, spec_.features);
  return (Wf * pooled).colwise() + bf;
}

template <typename S>
typename MaskEncoderT<S>::Mat MaskEncoderT<S>::backward(const Cache& cache, const Mat& grad_out,
                                                        Vec& grad_params) const {
  if (grad_params.size() != params_.size()) grad_params = Vec::Zero(params_.size());
  const auto dims = conv_dims(spec_);
  const int B = cache.batch;
  const auto& last = dims.back();
  const int C = last.c_out;
  const int fin = C * spec_.pool_h * spec_.pool_w;

  std::vector<int> offs(dims.size());
  int off = 0;
  for (std::size_t l = 0; l < dims.size(); ++l) {
    offs[l] = off;
    off += dims[l].c_out * dims[l].c_in * 9 + dims[l].c_out;
  }
  const int foff = off;

  // Linear head.
  Eigen::Map<Mat> dWf(grad_params.data() + foff, spec_.features, fin);
  Eigen::Map<Vec> dbf(grad_params.data() + foff + spec_.features * fin, spec_.features);
  dWf.noalias() += grad_out * cache.pooled.transpose();
  dbf += grad_out.rowwise().sum();
  const Eigen::Map<const Mat> Wf(params_.data() + foff, spec_.features, fin);
  Mat g_pool = Wf.transpose() * grad_out;  // (fin x B)

  // Un-pool.
  Mat g_img = Mat::Zero(C * last.h_out * last.w_out, B);
  for (int b = 0; b < B; ++b) {
    for (int ch = 0; ch < C; ++ch) {
      for (int i = 0; i < spec_.pool_h; ++i) {
        const auto [r0, r1] = pool_span(i, spec_.pool_h, last.h_out);
        for (int j = 0; j < spec_.pool_w; ++j) {
          const auto [c0, c1] = pool_span(j, spec_.pool_w, last.w_out);
          const S g = g_pool(ch * spec_.pool_h * spec_.pool_w + i * spec_.pool_w + j, b) /
                      static_cast<S>((r1 - r0) * (c1 - c0));
          for (int r = r0; r < r1; ++r)
            for (int cc = c0; cc < c1; ++cc)
              g_img(ch * last.h_out * last.w_out + r * last.w_out + cc, b) += g;
        }
      }
    }
  }

  // Conv layers in reverse.
  for (int l = static_cast<int>(dims.size()) - 1; l >= 0; --l) {
    const auto& d = dims[static_cast<std::size_t>(l)];
    const int hw = d.h_out * d.w_out;
    Mat g_act;
    image_to_act(g_img, d.c_out, hw, g_act);  // (C_out x HW*B)
    const Mat& z = cache.preact[static_cast<std::size_t>(l)];
    Mat gz = (z.array() > S(0)).template cast<S>().matrix().cwiseProduct(g_act);

    Eigen::Map<Mat> dW(grad_params.data() + offs[static_cast<std::size_t>(l)], d.c_out,
                       d.c_in * 9);
    Eigen::Map<Vec> db(
        grad_params.data() + offs[static_cast<std::size_t>(l)] + d.c_out * d.c_in * 9, d.c_out);
    dW.noalias() += gz * cache.cols[static_cast<std::size_t>(l)].transpose();
    db += gz.rowwise().sum();

    const Eigen::Map<const Mat> W(params_.data() + offs[static_cast<std::size_t>(l)], d.c_out,
                                  d.c_in * 9);
    Mat g_cols = W.transpose() * gz;  // (C_in*9 x HW*B)
    g_img = Mat::Zero(d.c_in * d.h_in * d.w_in, B);
    col2im(g_cols, d, g_img);
  }
  return g_img;
}

// ---------------------------------------------------------------------------
// Adam and the squashed-Gaussian head
// ---------------------------------------------------------------------------

void AdamState::step(Eigen::VectorXf& params, const Eigen::VectorXf& grads) {
  if (params.size() != m_.size() || grads.size() != m_.size())
    throw ConfigError("AdamState::step: size mismatch");
  ++t_;
  m_ = static_cast<float>(b1_) * m_ + static_cast<float>(1.0 - b1_) * grads;
  v_ = static_cast<float>(b2_) * v_ +
       static_cast<float>(1.0 - b2_) * grads.cwiseProduct(grads);
  const double mc = 1.0 - std::pow(b1_, t_);
  const double vc = 1.0 - std::pow(b2_, t_);
  const Eigen::VectorXf mhat = m_ / static_cast<float>(mc);
  const Eigen::VectorXf vhat = v_ / static_cast<float>(vc);
  params -= static_cast<float>(lr_) *
            mhat.cwiseQuotient(vhat.cwiseSqrt().array().template cast<float>().matrix() +
                               Eigen::VectorXf::Constant(params.size(),
                                                         static_cast<float>(eps_)));
}

void SquashedGaussian::sample(const Eigen::VectorXf& mean, const Eigen::VectorXf& log_std,
                              double scale, Rng& rng, Eigen::VectorXf& action, double& log_prob) {
  const int n = static_cast<int>(mean.size());
  action.resize(n);
  log_prob = 0.0;
  for (int i = 0; i < n; ++i) {
    const double ls = std::clamp(static_cast<double>(log_std(i)),
                                 static_cast<double>(kLogStdMin),
                                 static_cast<double>(kLogStdMax));
    const double std = std::exp(ls);
    const double xi = rng.normal01();
    const double u = mean(i) + std * xi;
    const double t = std::tanh(u);
    // Strictly inside the box even after the float cast saturates.
    action(i) = static_cast<float>(scale * t * (1.0 - 1e-6));
    log_prob += -0.5 * xi * xi - 0.5 * std::log(2.0 * M_PI) - ls;
    log_prob -= std::log(scale * (1.0 - t * t) + 1e-9);
  }
}

Eigen::VectorXf SquashedGaussian::mean_action(const Eigen::VectorXf& mean, double scale) {
  return (scale * mean.array().tanh()).matrix().cast<float>();
}

template class MlpT<float>;
template class MlpT<double>;
template class TcnT<float>;
template class TcnT<double>;
template class MaskEncoderT<float>;
template class MaskEncoderT<double>;

}  // namespace pk::nn
