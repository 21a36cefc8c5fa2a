#include "workbench/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "workbench/error.hpp"

namespace wb::nn {

namespace {

using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void require_rank4(const Tensor& t, int channels, const char* who) {
  if (t.rank() != 4 || t.dim(1) != channels)
    throw ValidationError(std::string(who) + ": expected (N, " + std::to_string(channels) +
                          ", H, W), got " + shape_string(t.shape()));
}

Tensor he_normal(std::vector<int> shape, int fan_in, double gain, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, gain / std::sqrt(static_cast<double>(fan_in)));
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

/// NCHW (N, C, P) <-> channel-major (C, N*P).
void nchw_to_cm(const Scalar* src, int n, int c, int p, Scalar* dst) {
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      std::copy_n(src + (static_cast<std::size_t>(i) * c + ch) * p, p,
                  dst + static_cast<std::size_t>(ch) * n * p + static_cast<std::size_t>(i) * p);
}

void cm_to_nchw(const Scalar* src, int n, int c, int p, Scalar* dst) {
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      std::copy_n(src + static_cast<std::size_t>(ch) * n * p + static_cast<std::size_t>(i) * p, p,
                  dst + (static_cast<std::size_t>(i) * c + ch) * p);
}

}  // namespace

ConvGeometry ConvGeometry::make(int channels, int height, int width, int kernel, int stride,
                                int padding) {
  ConvGeometry g{channels, height, width, kernel, stride, padding, 0, 0};
  g.out_h = (height + 2 * padding - kernel) / stride + 1;
  g.out_w = (width + 2 * padding - kernel) / stride + 1;
  if (g.out_h <= 0 || g.out_w <= 0)
    throw ValidationError("convolution window larger than padded input");
  return g;
}

void im2col(const Scalar* input, int batch, const ConvGeometry& g, Scalar* col) {
  const std::size_t cols = static_cast<std::size_t>(batch) * g.positions();
  const std::size_t plane = static_cast<std::size_t>(g.height) * g.width;
  for (int c = 0; c < g.channels; ++c)
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx) {
        const std::size_t row = (static_cast<std::size_t>(c) * g.kernel + ky) * g.kernel + kx;
        Scalar* dst = col + row * cols;
        for (int n = 0; n < batch; ++n) {
          const Scalar* img = input + (static_cast<std::size_t>(n) * g.channels + c) * plane;
          for (int oy = 0; oy < g.out_h; ++oy) {
            const int iy = oy * g.stride - g.padding + ky;
            Scalar* out = dst + (static_cast<std::size_t>(n) * g.out_h + oy) * g.out_w;
            if (iy < 0 || iy >= g.height) {
              std::fill_n(out, g.out_w, 0.0);
              continue;
            }
            const Scalar* src = img + static_cast<std::size_t>(iy) * g.width;
            for (int ox = 0; ox < g.out_w; ++ox) {
              const int ix = ox * g.stride - g.padding + kx;
              out[ox] = (ix >= 0 && ix < g.width) ? src[ix] : 0.0;
            }
          }
        }
      }
}

void col2im(const Scalar* col, int batch, const ConvGeometry& g, Scalar* output) {
  const std::size_t cols = static_cast<std::size_t>(batch) * g.positions();
  const std::size_t plane = static_cast<std::size_t>(g.height) * g.width;
  for (int c = 0; c < g.channels; ++c)
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx) {
        const std::size_t row = (static_cast<std::size_t>(c) * g.kernel + ky) * g.kernel + kx;
        const Scalar* src = col + row * cols;
        for (int n = 0; n < batch; ++n) {
          Scalar* img = output + (static_cast<std::size_t>(n) * g.channels + c) * plane;
          for (int oy = 0; oy < g.out_h; ++oy) {
            const int iy = oy * g.stride - g.padding + ky;
            if (iy < 0 || iy >= g.height) continue;
            const Scalar* in = src + (static_cast<std::size_t>(n) * g.out_h + oy) * g.out_w;
            Scalar* dst = img + static_cast<std::size_t>(iy) * g.width;
            for (int ox = 0; ox < g.out_w; ++ox) {
              const int ix = ox * g.stride - g.padding + kx;
              if (ix >= 0 && ix < g.width) dst[ix] += in[ox];
            }
          }
        }
      }
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, bool bias,
               Rng& rng)
    : in_c_(in_channels),
      out_c_(out_channels),
      kernel_(kernel),
      stride_(stride),
      padding_(padding),
      weight_("weight", he_normal({out_channels, in_channels * kernel * kernel},
                                  in_channels * kernel * kernel, std::sqrt(2.0), rng)) {
  if (bias) bias_.emplace("bias", Tensor({out_channels}));
}

Tensor Conv2d::forward(const Tensor& input, Mode) {
  require_rank4(input, in_c_, "Conv2d");
  batch_ = input.dim(0);
  geom_ = ConvGeometry::make(in_c_, input.dim(2), input.dim(3), kernel_, stride_, padding_);
  const int cols = batch_ * geom_.positions();
  col_.resize(static_cast<std::size_t>(geom_.rows()) * cols);
  im2col(input.data(), batch_, geom_, col_.data());

  RowMat out = ConstMatMap(weight_.value.data(), out_c_, geom_.rows()) *
               ConstMatMap(col_.data(), geom_.rows(), cols);
  if (bias_)
    for (int c = 0; c < out_c_; ++c) out.row(c).array() += bias_->value[c];
  Tensor y({batch_, out_c_, geom_.out_h, geom_.out_w});
  cm_to_nchw(out.data(), batch_, out_c_, geom_.positions(), y.data());
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_output) {
  const int cols = batch_ * geom_.positions();
  RowMat g(out_c_, cols);
  nchw_to_cm(grad_output.data(), batch_, out_c_, geom_.positions(), g.data());
  if (weight_.trainable) {
    MatMap(weight_.grad.data(), out_c_, geom_.rows()).noalias() +=
        g * ConstMatMap(col_.data(), geom_.rows(), cols).transpose();
    if (bias_)
      for (int c = 0; c < out_c_; ++c) bias_->grad[c] += g.row(c).sum();
  }
  RowMat dcol = ConstMatMap(weight_.value.data(), out_c_, geom_.rows()).transpose() * g;
  Tensor dx({batch_, in_c_, geom_.height, geom_.width});
  col2im(dcol.data(), batch_, geom_, dx.data());
  return dx;
}

void Conv2d::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&weight_);
  if (bias_) out.push_back(&*bias_);
}

// ------------------------------------------------------- ConvTranspose2d

ConvTranspose2d::ConvTranspose2d(int in_channels, int out_channels, int kernel, int stride,
                                 int padding, bool bias, Rng& rng)
    : in_c_(in_channels),
      out_c_(out_channels),
      kernel_(kernel),
      stride_(stride),
      padding_(padding),
      // Each output pixel receives about in*k*k/stride^2 contributions.
      weight_("weight",
              he_normal({in_channels, out_channels * kernel * kernel},
                        std::max(1, in_channels * kernel * kernel / (stride * stride)),
                        std::sqrt(2.0), rng)) {
  if (bias) bias_.emplace("bias", Tensor({out_channels}));
}

Tensor ConvTranspose2d::forward(const Tensor& input, Mode) {
  require_rank4(input, in_c_, "ConvTranspose2d");
  batch_ = input.dim(0);
  const int h = input.dim(2), w = input.dim(3);
  const int out_h = (h - 1) * stride_ - 2 * padding_ + kernel_;
  const int out_w = (w - 1) * stride_ - 2 * padding_ + kernel_;
  if (out_h <= 0 || out_w <= 0) throw ValidationError("ConvTranspose2d: empty output");
  geom_ = ConvGeometry::make(out_c_, out_h, out_w, kernel_, stride_, padding_);
  if (geom_.out_h != h || geom_.out_w != w)
    throw ValidationError("ConvTranspose2d: geometry is not invertible for this input");
  const int cols = batch_ * h * w;
  input_mat_.resize(static_cast<std::size_t>(in_c_) * cols);
  nchw_to_cm(input.data(), batch_, in_c_, h * w, input_mat_.data());

  RowMat col = ConstMatMap(weight_.value.data(), in_c_, geom_.rows()).transpose() *
               ConstMatMap(input_mat_.data(), in_c_, cols);
  Tensor y({batch_, out_c_, out_h, out_w});
  col2im(col.data(), batch_, geom_, y.data());
  if (bias_) {
    const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
    for (int n = 0; n < batch_; ++n)
      for (int c = 0; c < out_c_; ++c) {
        Scalar* p = y.data() + (static_cast<std::size_t>(n) * out_c_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] += bias_->value[c];
      }
  }
  return y;
}

Tensor ConvTranspose2d::backward(const Tensor& grad_output) {
  const int cols = batch_ * geom_.positions();
  RowMat gcol(geom_.rows(), cols);
  im2col(grad_output.data(), batch_, geom_, gcol.data());
  if (weight_.trainable) {
    MatMap(weight_.grad.data(), in_c_, geom_.rows()).noalias() +=
        ConstMatMap(input_mat_.data(), in_c_, cols) * gcol.transpose();
    if (bias_) {
      const std::size_t plane = static_cast<std::size_t>(geom_.height) * geom_.width;
      for (int n = 0; n < batch_; ++n)
        for (int c = 0; c < out_c_; ++c) {
          const Scalar* p = grad_output.data() + (static_cast<std::size_t>(n) * out_c_ + c) * plane;
          double s = 0;
          for (std::size_t i = 0; i < plane; ++i) s += p[i];
          bias_->grad[c] += s;
        }
    }
  }
  RowMat dx_cm = ConstMatMap(weight_.value.data(), in_c_, geom_.rows()) * gcol;
  Tensor dx({batch_, in_c_, geom_.out_h, geom_.out_w});
  cm_to_nchw(dx_cm.data(), batch_, in_c_, geom_.positions(), dx.data());
  return dx;
}

void ConvTranspose2d::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&weight_);
  if (bias_) out.push_back(&*bias_);
}

// ----------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(int channels, double momentum, double eps)
    : channels_(channels),
      momentum_(momentum),
      eps_(eps),
      gamma_("gamma", Tensor({channels}, 1.0)),
      beta_("beta", Tensor({channels}, 0.0)),
      running_mean_({channels}, 0.0),
      running_var_({channels}, 1.0) {}

Tensor BatchNorm2d::forward(const Tensor& input, Mode mode) {
  require_rank4(input, channels_, "BatchNorm2d");
  mode_ = mode;
  const int n = input.dim(0);
  const std::size_t plane = static_cast<std::size_t>(input.dim(2)) * input.dim(3);
  const std::size_t count = static_cast<std::size_t>(n) * plane;
  xhat_ = Tensor(input.shape());
  inv_std_.assign(channels_, 0.0);
  Tensor y(input.shape());
  for (int c = 0; c < channels_; ++c) {
    double mean, var;
    if (mode == Mode::train) {
      double s = 0, s2 = 0;
      for (int i = 0; i < n; ++i) {
        const Scalar* p = input.data() + (static_cast<std::size_t>(i) * channels_ + c) * plane;
        for (std::size_t k = 0; k < plane; ++k) s += p[k];
      }
      mean = s / count;
      for (int i = 0; i < n; ++i) {
        const Scalar* p = input.data() + (static_cast<std::size_t>(i) * channels_ + c) * plane;
        for (std::size_t k = 0; k < plane; ++k) s2 += (p[k] - mean) * (p[k] - mean);
      }
      var = s2 / count;
      const double unbiased = count > 1 ? s2 / (count - 1) : var;
      running_mean_[c] = (1 - momentum_) * running_mean_[c] + momentum_ * mean;
      running_var_[c] = (1 - momentum_) * running_var_[c] + momentum_ * unbiased;
    } else {
      mean = running_mean_[c];
      var = running_var_[c];
    }
    const double inv = 1.0 / std::sqrt(var + eps_);
    inv_std_[c] = inv;
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * channels_ + c) * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        const double xh = (input[off + k] - mean) * inv;
        xhat_[off + k] = xh;
        y[off + k] = gamma_.value[c] * xh + beta_.value[c];
      }
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& grad_output) {
  const int n = grad_output.dim(0);
  const std::size_t plane = static_cast<std::size_t>(grad_output.dim(2)) * grad_output.dim(3);
  const double count = static_cast<double>(n) * plane;
  Tensor dx(grad_output.shape());
  for (int c = 0; c < channels_; ++c) {
    double sum_dy = 0, sum_dy_xhat = 0;
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * channels_ + c) * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        sum_dy += grad_output[off + k];
        sum_dy_xhat += grad_output[off + k] * xhat_[off + k];
      }
    }
    if (gamma_.trainable) {
      gamma_.grad[c] += sum_dy_xhat;
      beta_.grad[c] += sum_dy;
    }
    const double g = gamma_.value[c], inv = inv_std_[c];
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * channels_ + c) * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        if (mode_ == Mode::train)
          dx[off + k] = g * inv / count *
                        (count * grad_output[off + k] - sum_dy - xhat_[off + k] * sum_dy_xhat);
        else
          dx[off + k] = g * inv * grad_output[off + k];
      }
    }
  }
  return dx;
}

void BatchNorm2d::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

void BatchNorm2d::collect_buffers(std::vector<Tensor*>& out) {
  out.push_back(&running_mean_);
  out.push_back(&running_var_);
}

// ----------------------------------------------------------- activations

Tensor ReLU::forward(const Tensor& input, Mode) {
  output_ = input;
  for (auto& v : output_.values()) v = v > 0 ? v : 0.0;
  return output_;
}

Tensor ReLU::backward(const Tensor& grad_output) {
  Tensor g = grad_output;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (output_[i] <= 0) g[i] = 0.0;
  return g;
}

Tensor LeakyReLU::forward(const Tensor& input, Mode) {
  input_ = input;
  Tensor y = input;
  for (auto& v : y.values()) v = v > 0 ? v : alpha_ * v;
  return y;
}

Tensor LeakyReLU::backward(const Tensor& grad_output) {
  Tensor g = grad_output;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (input_[i] <= 0) g[i] *= alpha_;
  return g;
}

Tensor Sigmoid::forward(const Tensor& input, Mode) {
  output_ = input;
  for (auto& v : output_.values()) v = 1.0 / (1.0 + std::exp(-v));
  return output_;
}

Tensor Sigmoid::backward(const Tensor& grad_output) {
  Tensor g = grad_output;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= output_[i] * (1.0 - output_[i]);
  return g;
}

Tensor UnitTanh::forward(const Tensor& input, Mode) {
  tanh_ = input;
  for (auto& v : tanh_.values()) v = std::tanh(v);
  Tensor y = tanh_;
  for (auto& v : y.values()) v = 0.5 * (v + 1.0);
  return y;
}

Tensor UnitTanh::backward(const Tensor& grad_output) {
  Tensor g = grad_output;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 0.5 * (1.0 - tanh_[i] * tanh_[i]);
  return g;
}

// --------------------------------------------------------------- pooling

Tensor MaxPool2d::forward(const Tensor& input, Mode) {
  if (input.rank() != 4) throw ValidationError("MaxPool2d expects NCHW input");
  input_shape_ = input.shape();
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const auto g = ConvGeometry::make(c, h, w, kernel_, stride_, padding_);
  Tensor y({n, c, g.out_h, g.out_w});
  argmax_.assign(y.size(), 0);
  std::size_t o = 0;
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * h * w;
      for (int oy = 0; oy < g.out_h; ++oy)
        for (int ox = 0; ox < g.out_w; ++ox, ++o) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_idx = base;
          for (int ky = 0; ky < kernel_; ++ky) {
            const int iy = oy * stride_ - padding_ + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < kernel_; ++kx) {
              const int ix = ox * stride_ - padding_ + kx;
              if (ix < 0 || ix >= w) continue;
              const std::size_t idx = base + static_cast<std::size_t>(iy) * w + ix;
              if (input[idx] > best) {
                best = input[idx];
                best_idx = idx;
              }
            }
          }
          y[o] = best;
          argmax_[o] = best_idx;
        }
    }
  return y;
}

Tensor MaxPool2d::backward(const Tensor& grad_output) {
  Tensor dx(input_shape_);
  for (std::size_t o = 0; o < grad_output.size(); ++o) dx[argmax_[o]] += grad_output[o];
  return dx;
}

Tensor GlobalAvgPool::forward(const Tensor& input, Mode) {
  if (input.rank() != 4) throw ValidationError("GlobalAvgPool expects NCHW input");
  input_shape_ = input.shape();
  const int n = input.dim(0), c = input.dim(1);
  const std::size_t plane = static_cast<std::size_t>(input.dim(2)) * input.dim(3);
  Tensor y({n, c});
  for (std::size_t i = 0; i < y.size(); ++i) {
    double s = 0;
    for (std::size_t k = 0; k < plane; ++k) s += input[i * plane + k];
    y[i] = s / plane;
  }
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_output) {
  Tensor dx(input_shape_);
  const std::size_t plane = static_cast<std::size_t>(input_shape_[2]) * input_shape_[3];
  for (std::size_t i = 0; i < grad_output.size(); ++i)
    for (std::size_t k = 0; k < plane; ++k) dx[i * plane + k] = grad_output[i] / plane;
  return dx;
}

// ----------------------------------------------------------------- Dense

Dense::Dense(int in_features, int out_features, Rng& rng)
    : in_(in_features),
      out_(out_features),
      weight_("weight", he_normal({out_features, in_features}, in_features, 1.0, rng)),
      bias_("bias", Tensor({out_features})) {}

Tensor Dense::forward(const Tensor& input, Mode) {
  if (input.rank() != 2 || input.dim(1) != in_)
    throw ValidationError("Dense: expected (N, " + std::to_string(in_) + "), got " +
                          shape_string(input.shape()));
  input_ = input;
  const int n = input.dim(0);
  Tensor y({n, out_});
  MatMap(y.data(), n, out_).noalias() =
      ConstMatMap(input.data(), n, in_) * ConstMatMap(weight_.value.data(), out_, in_).transpose();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < out_; ++j) y[static_cast<std::size_t>(i) * out_ + j] += bias_.value[j];
  return y;
}

Tensor Dense::backward(const Tensor& grad_output) {
  const int n = grad_output.dim(0);
  ConstMatMap g(grad_output.data(), n, out_);
  if (weight_.trainable) {
    MatMap(weight_.grad.data(), out_, in_).noalias() +=
        g.transpose() * ConstMatMap(input_.data(), n, in_);
    for (int j = 0; j < out_; ++j) bias_.grad[j] += g.col(j).sum();
  }
  Tensor dx({n, in_});
  MatMap(dx.data(), n, in_).noalias() = g * ConstMatMap(weight_.value.data(), out_, in_);
  return dx;
}

void Dense::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// ------------------------------------------------------------ Bottleneck

Bottleneck::Bottleneck(int in_channels, int mid_channels, int out_channels, int stride, Rng& rng) {
  branch_.emplace<Conv2d>(in_channels, mid_channels, 1, stride, 0, false, rng);
  branch_.emplace<BatchNorm2d>(mid_channels);
  branch_.emplace<ReLU>();
  branch_.emplace<Conv2d>(mid_channels, mid_channels, 3, 1, 1, false, rng);
  branch_.emplace<BatchNorm2d>(mid_channels);
  branch_.emplace<ReLU>();
  branch_.emplace<Conv2d>(mid_channels, out_channels, 1, 1, 0, false, rng);
  branch_.emplace<BatchNorm2d>(out_channels);
  if (in_channels != out_channels || stride != 1) {
    projection_ = std::make_unique<Sequential>();
    projection_->emplace<Conv2d>(in_channels, out_channels, 1, stride, 0, false, rng);
    projection_->emplace<BatchNorm2d>(out_channels);
  }
}

Tensor Bottleneck::forward(const Tensor& input, Mode mode) {
  Tensor y = branch_.forward(input, mode);
  const Tensor shortcut = projection_ ? projection_->forward(input, mode) : input;
  if (!y.same_shape(shortcut)) throw ValidationError("Bottleneck: shortcut shape mismatch");
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += shortcut[i];
  return out_relu_.forward(y, mode);
}

Tensor Bottleneck::backward(const Tensor& grad_output) {
  const Tensor g = out_relu_.backward(grad_output);
  Tensor dx = branch_.backward(g);
  const Tensor ds = projection_ ? projection_->backward(g) : g;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += ds[i];
  return dx;
}

void Bottleneck::collect_parameters(std::vector<Parameter*>& out) {
  branch_.collect_parameters(out);
  if (projection_) projection_->collect_parameters(out);
}

void Bottleneck::collect_buffers(std::vector<Tensor*>& out) {
  branch_.collect_buffers(out);
  if (projection_) projection_->collect_buffers(out);
}

}  // namespace wb::nn
