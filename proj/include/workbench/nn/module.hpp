#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "workbench/nn/tensor.hpp"
#include "workbench/rng.hpp"

namespace wb::nn {

enum class Mode { train, eval };

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
};

/// A differentiable layer. forward() caches what backward() needs, so each
/// backward() must follow the forward() whose output it differentiates.
/// backward() accumulates into parameter gradients of trainable parameters
/// and returns the gradient with respect to the forward input.
class Module {
 public:
  virtual ~Module() = default;

  virtual Tensor forward(const Tensor& input, Mode mode) = 0;
  virtual Tensor backward(const Tensor& grad_output) = 0;
  virtual std::string name() const = 0;

  virtual void collect_parameters(std::vector<Parameter*>&) {}
  /// Non-trainable state (batch-norm running statistics).
  virtual void collect_buffers(std::vector<Tensor*>&) {}

  std::vector<Parameter*> parameters();
  std::vector<Tensor*> buffers();
  void zero_grad();
  void set_trainable(bool trainable);
  std::size_t parameter_count();
};

using ModulePtr = std::unique_ptr<Module>;

class Sequential : public Module {
 public:
  Sequential() = default;
  Sequential& add(ModulePtr layer);
  template <typename T, typename... Args>
  T& emplace(Args&&... args) {
    auto layer = std::make_unique<T>(std::forward<Args>(args)...);
    T& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  Tensor forward(const Tensor& input, Mode mode) override;
  Tensor backward(const Tensor& grad_output) override;
  std::string name() const override { return "Sequential"; }
  void collect_parameters(std::vector<Parameter*>& out) override;
  void collect_buffers(std::vector<Tensor*>& out) override;

  std::size_t size() const noexcept { return layers_.size(); }
  Module& layer(std::size_t i) { return *layers_.at(i); }
  const Module& layer(std::size_t i) const { return *layers_.at(i); }

 private:
  std::vector<ModulePtr> layers_;
};

/// Parameter values followed by buffers, in collection order.
using StateSnapshot = std::vector<Tensor>;
StateSnapshot snapshot(Module& module);
void restore(Module& module, const StateSnapshot& state);

/// SHA-256 over parameter values and buffers; identical weights give
/// identical checksums.
std::string checksum(Module& module);

/// Raw state I/O with shape checks; the caller owns any container header.
void write_state(std::ostream& out, Module& module);
void read_state(std::istream& in, Module& module);

}  // namespace wb::nn
