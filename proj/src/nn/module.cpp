#include "workbench/nn/module.hpp"

#include <cstdint>
#include <istream>
#include <ostream>

#include "workbench/digest.hpp"
#include "workbench/error.hpp"

namespace wb::nn {

std::vector<Parameter*> Module::parameters() {
  std::vector<Parameter*> out;
  collect_parameters(out);
  return out;
}

std::vector<Tensor*> Module::buffers() {
  std::vector<Tensor*> out;
  collect_buffers(out);
  return out;
}

void Module::zero_grad() {
  for (auto* p : parameters()) p->grad.fill(0.0);
}

void Module::set_trainable(bool trainable) {
  for (auto* p : parameters()) p->trainable = trainable;
}

std::size_t Module::parameter_count() {
  std::size_t n = 0;
  for (auto* p : parameters()) n += p->value.size();
  return n;
}

Sequential& Sequential::add(ModulePtr layer) {
  layers_.push_back(std::move(layer));
  return *this;
}

Tensor Sequential::forward(const Tensor& input, Mode mode) {
  Tensor x = input;
  for (auto& l : layers_) x = l->forward(x, mode);
  return x;
}

Tensor Sequential::backward(const Tensor& grad_output) {
  Tensor g = grad_output;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

void Sequential::collect_parameters(std::vector<Parameter*>& out) {
  for (auto& l : layers_) l->collect_parameters(out);
}

void Sequential::collect_buffers(std::vector<Tensor*>& out) {
  for (auto& l : layers_) l->collect_buffers(out);
}

StateSnapshot snapshot(Module& module) {
  StateSnapshot s;
  for (auto* p : module.parameters()) s.push_back(p->value);
  for (auto* b : module.buffers()) s.push_back(*b);
  return s;
}

void restore(Module& module, const StateSnapshot& state) {
  auto params = module.parameters();
  auto bufs = module.buffers();
  if (state.size() != params.size() + bufs.size())
    throw ValidationError("snapshot does not match module structure");
  std::size_t i = 0;
  for (auto* p : params) {
    if (!p->value.same_shape(state[i])) throw ValidationError("snapshot shape mismatch");
    p->value = state[i++];
  }
  for (auto* b : bufs) {
    if (!b->same_shape(state[i])) throw ValidationError("snapshot shape mismatch");
    *b = state[i++];
  }
}

std::string checksum(Module& module) {
  std::vector<std::uint8_t> bytes;
  auto append = [&](const Tensor& t) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.data());
    bytes.insert(bytes.end(), p, p + t.size() * sizeof(Scalar));
  };
  for (auto* p : module.parameters()) append(p->value);
  for (auto* b : module.buffers()) append(*b);
  return to_hex(sha256(bytes));
}

namespace {

void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw ParseError("truncated model state");
  return v;
}

void write_tensor(std::ostream& out, const Tensor& t) {
  write_u64(out, t.rank());
  for (int d : t.shape()) write_u64(out, static_cast<std::uint64_t>(d));
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(Scalar)));
}

void read_tensor_into(std::istream& in, Tensor& t) {
  const auto rank = read_u64(in);
  std::vector<int> shape(rank);
  for (auto& d : shape) d = static_cast<int>(read_u64(in));
  if (shape != t.shape())
    throw ParseError("stored tensor " + shape_string(shape) + " does not match " +
                     shape_string(t.shape()));
  in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(Scalar)));
  if (!in) throw ParseError("truncated model state");
}

}  // namespace

void write_state(std::ostream& out, Module& module) {
  auto params = module.parameters();
  auto bufs = module.buffers();
  write_u64(out, params.size());
  write_u64(out, bufs.size());
  for (auto* p : params) write_tensor(out, p->value);
  for (auto* b : bufs) write_tensor(out, *b);
}

void read_state(std::istream& in, Module& module) {
  auto params = module.parameters();
  auto bufs = module.buffers();
  if (read_u64(in) != params.size() || read_u64(in) != bufs.size())
    throw ParseError("stored state does not match module structure");
  for (auto* p : params) read_tensor_into(in, p->value);
  for (auto* b : bufs) read_tensor_into(in, *b);
}

}  // namespace wb::nn
