#pragma once

#include <vector>

#include "workbench/nn/module.hpp"

namespace wb::nn {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Skips parameters marked non-trainable.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamOptions options);
  void step();
  void zero_grad();
  long steps() const noexcept { return t_; }
  const AdamOptions& options() const noexcept { return options_; }

 private:
  std::vector<Parameter*> params_;
  AdamOptions options_;
  std::vector<Tensor> m_, v_;
  long t_ = 0;
};

}  // namespace wb::nn
