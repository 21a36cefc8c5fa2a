#include "workbench/nn/loss.hpp"

#include <algorithm>
#include <cmath>

#include "workbench/error.hpp"

namespace wb::nn {

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 2) throw ValidationError("softmax expects (N, C)");
  const int n = logits.dim(0), c = logits.dim(1);
  Tensor p(logits.shape());
  for (int i = 0; i < n; ++i) {
    const Scalar* z = logits.data() + static_cast<std::size_t>(i) * c;
    Scalar* out = p.data() + static_cast<std::size_t>(i) * c;
    const double mx = *std::max_element(z, z + c);
    double s = 0;
    for (int j = 0; j < c; ++j) s += (out[j] = std::exp(z[j] - mx));
    for (int j = 0; j < c; ++j) out[j] /= s;
  }
  return p;
}

CrossEntropy softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const int n = logits.dim(0), c = logits.dim(1);
  if (static_cast<int>(labels.size()) != n) throw ValidationError("label count mismatch");
  CrossEntropy ce;
  ce.probabilities = softmax(logits);
  ce.grad_logits = ce.probabilities;
  double total = 0;
  for (int i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= c) throw ValidationError("label out of range");
    const Scalar* z = logits.data() + static_cast<std::size_t>(i) * c;
    const double mx = *std::max_element(z, z + c);
    double s = 0;
    for (int j = 0; j < c; ++j) s += std::exp(z[j] - mx);
    total += (mx + std::log(s)) - z[y];  // -log softmax, stable
    ce.grad_logits[static_cast<std::size_t>(i) * c + y] -= 1.0;
  }
  for (auto& g : ce.grad_logits.values()) g /= n;
  ce.loss = total / n;
  return ce;
}

Tensor softmax_backward(const Tensor& probabilities, const Tensor& grad_probabilities) {
  const int n = probabilities.dim(0), c = probabilities.dim(1);
  Tensor g(probabilities.shape());
  for (int i = 0; i < n; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * c;
    double dot = 0;
    for (int j = 0; j < c; ++j) dot += grad_probabilities[off + j] * probabilities[off + j];
    for (int j = 0; j < c; ++j)
      g[off + j] = probabilities[off + j] * (grad_probabilities[off + j] - dot);
  }
  return g;
}

}  // namespace wb::nn
