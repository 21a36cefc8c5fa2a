#pragma once

#include <optional>

#include "workbench/nn/module.hpp"

namespace wb::nn {

/// Spatial geometry shared by convolution and its transpose: a k x k window
/// with stride and zero padding sliding over a (channels, height, width)
/// image, producing an out_h x out_w grid of window positions.
struct ConvGeometry {
  int channels = 0;
  int height = 0;
  int width = 0;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  int out_h = 0;
  int out_w = 0;

  static ConvGeometry make(int channels, int height, int width, int kernel, int stride, int padding);
  int rows() const noexcept { return channels * kernel * kernel; }
  int positions() const noexcept { return out_h * out_w; }
};

/// Unfolds NCHW `input` into a (C*k*k) x (N*positions) row-major matrix.
void im2col(const Scalar* input, int batch, const ConvGeometry& g, Scalar* col);
/// Adjoint of im2col: accumulates columns back into a zeroed NCHW buffer.
void col2im(const Scalar* col, int batch, const ConvGeometry& g, Scalar* output);

class Conv2d : public Module {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, bool bias, Rng& rng);

  Tensor forward(const Tensor& input, Mode mode) override;
  Tensor backward(const Tensor& grad_output) override;
  std::string name() const override { return "Conv2d"; }
  void collect_parameters(std::vector<Parameter*>& out) override;

  Parameter& weight() { return weight_; }

 private:
  int in_c_, out_c_, kernel_, stride_, padding_;
  Parameter weight_;  // (out, in*k*k)
  std::optional<Parameter> bias_;
  ConvGeometry geom_{};
  int batch_ = 0;
  std::vector<Scalar> col_;
};

/// Fractionally strided convolution; output size (in-1)*stride - 2*padding + kernel.
class ConvTranspose2d : public Module {
 public:
  ConvTranspose2d(int in_channels, int out_channels, int kernel, int stride, int padding, bool bias,
                  Rng& rng);

  Tensor forward(const Tensor& input, Mode mode) override;
  Tensor backward(const Tensor& grad_output) override;
  std::string name() const override { return "ConvTranspose2d"; }
  void collect_parameters(std::vector<Parameter*>& out) override;

 private:
  int in_c_, out_c_, kernel_, stride_, padding_;
  Parameter weight_;  // (in, out*k*k)
  std::optional<Parameter> bias_;
  ConvGeometry geom_{};  // over the output image
  int batch_ = 0;
  std::vector<Scalar> input_mat_;  // (in, N*H*W)
};

class BatchNorm2d : public Module {
 public:
  explicit BatchNorm2d(int channels, double momentum = 0.1, double eps = 1e-5);

  Tensor forward(const Tensor& input, Mode mode) override;
  Tensor backward(const Tensor& grad_output) override;
  std::string name() const override { return "BatchNorm2d"; }
  void collect_parameters(std::vector<Parameter*>& out) override;
  void collect_buffers(std::vector<Tensor*>& out) override;

 private:
  int channels_;
  double momentum_, eps_;
  Parameter gamma_, beta_;
  Tensor running_mean_, running_var_;
  Mode mode_ = Mode::train;
  Tensor xhat_;
  std::vector<Scalar> inv_std_;
};

class ReLU : public Module {
 public:
  Tensor forward(const Tensor& input, Mode mode) override;
  Tensor backward(const Tensor& grad_output) override;
  std::string name() const override { return "ReLU"; }

 private:
  Tensor output_;
};

class LeakyReLU : public Module {
 public:
  explicit LeakyReLU(double alpha) : alpha_(alpha) {}
  Tensor forward(const Tensor& input, Mode mode) override;
  Tensor backward(const Tensor& grad_output) override;
  std::string name() const override { return "LeakyReLU"; }
  double alpha() const noexcept { return alpha_; }

 private:
  double alpha_;
  Tensor input_;
};

class Sigmoid : public Module {
 public:
  Tensor forward(const Tensor& input, Mode mode) override;
  Tensor backward(const Tensor& grad_output) override;
  std::string name() const override { return "Sigmoid"; }

 private:
  Tensor output_;
};

/// (tanh(x) + 1) / 2: a tanh output mapped onto [0,1].
class UnitTanh : public Module {
 public:
  Tensor forward(const Tensor& input, Mode mode) override;
  Tensor backward(const Tensor& grad_output) override;
  std::string name() const override { return "UnitTanh"; }

 private:
  Tensor tanh_;
};

class MaxPool2d : public Module {
 public:
  MaxPool2d(int kernel, int stride, int padding = 0)
      : kernel_(kernel), stride_(stride), padding_(padding) {}
  Tensor forward(const Tensor& input, Mode mode) override;
  Tensor backward(const Tensor& grad_output) override;
  std::string name() const override { return "MaxPool2d"; }

 private:
  int kernel_, stride_, padding_;
  std::vector<int> input_shape_;
  std::vector<std::size_t> argmax_;
};

/// (N, C, H, W) -> (N, C).
class GlobalAvgPool : public Module {
 public:
  Tensor forward(const Tensor& input, Mode mode) override;
  Tensor backward(const Tensor& grad_output) override;
  std::string name() const override { return "GlobalAvgPool"; }

 private:
  std::vector<int> input_shape_;
};

class Dense : public Module {
 public:
  Dense(int in_features, int out_features, Rng& rng);
  Tensor forward(const Tensor& input, Mode mode) override;
  Tensor backward(const Tensor& grad_output) override;
  std::string name() const override { return "Dense"; }
  void collect_parameters(std::vector<Parameter*>& out) override;

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  int in_, out_;
  Parameter weight_;  // (out, in)
  Parameter bias_;
  Tensor input_;
};

/// ResNet bottleneck: 1x1 reduce, 3x3, 1x1 expand, each batch-normalized,
/// with an identity or projection shortcut; ReLU after the sum.
class Bottleneck : public Module {
 public:
  Bottleneck(int in_channels, int mid_channels, int out_channels, int stride, Rng& rng);
  Tensor forward(const Tensor& input, Mode mode) override;
  Tensor backward(const Tensor& grad_output) override;
  std::string name() const override { return "Bottleneck"; }
  void collect_parameters(std::vector<Parameter*>& out) override;
  void collect_buffers(std::vector<Tensor*>& out) override;

 private:
  Sequential branch_;
  std::unique_ptr<Sequential> projection_;
  ReLU out_relu_;
};

}  // namespace wb::nn
