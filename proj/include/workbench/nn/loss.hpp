#pragma once

#include <span>

#include "workbench/nn/tensor.hpp"

namespace wb::nn {

/// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] before any log.
inline constexpr double kProbClamp = 1e-7;

/// Row-wise softmax of (N, C) logits.
Tensor softmax(const Tensor& logits);

struct CrossEntropy {
  double loss = 0.0;      // batch mean
  Tensor probabilities;   // (N, C)
  Tensor grad_logits;     // d loss / d logits
};

/// Categorical cross-entropy of integer labels against softmax(logits).
CrossEntropy softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Gradient w.r.t. logits given a gradient w.r.t. softmax probabilities.
Tensor softmax_backward(const Tensor& probabilities, const Tensor& grad_probabilities);

}  // namespace wb::nn
