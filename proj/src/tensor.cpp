#include "sfnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace sfnet {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

std::string Shape::str() const {
  std::ostringstream os;
  os << n << "x" << c << "x" << h << "x" << w;
  return os.str();
}

std::span<double> TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(shape, 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ShapeError("negative dimension in shape " + shape.str());
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->data.assign(shape.numel(), value);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
  if (data.size() != shape.numel()) {
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape.str());
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::at(int n, int c, int h, int w) const {
  const Shape& s = impl_->shape;
  return impl_->data[((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w + w];
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on tensor of shape " + shape().str());
  }
  return impl_->data[0];
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach_copy(bool requires_grad) const {
  return from_data(shape(), impl_->data, requires_grad);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace {

std::size_t first_non_finite(std::span<const double> values) {
  double acc = 0.0;
#pragma omp simd reduction(+ : acc)
  for (std::size_t i = 0; i < values.size(); ++i) acc += values[i] * 0.0;
  if (acc == 0.0) return values.size();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) return i;
  }
  return values.size();
}

void throw_non_finite(const std::string& what, std::size_t index) {
  throw NumericError("non-finite value in " + what + " at index " + std::to_string(index));
}

}  // namespace

void check_finite(std::span<const double> values, const std::string& what) {
  const std::size_t i = first_non_finite(values);
  if (i != values.size()) throw_non_finite(what, i);
}

Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs,
                   std::function<void(std::span<const double>)> backward) {
  if (const std::size_t i = first_non_finite(data); i != data.size()) {
    throw_non_finite(std::string(op) + " output", i);
  }
  Tensor out = Tensor::from_data(shape, std::move(data));
  if (!g_grad_enabled) return out;
  bool needs = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) {
    return t.defined() && t.requires_grad();
  });
  if (!needs) return out;
  auto node = std::make_shared<TapeNode>();
  node->op = op;
  for (auto& t : inputs) {
    if (t.defined()) node->inputs.push_back(t.impl_ptr());
  }
  node->backward = std::move(backward);
  out.impl()->requires_grad = true;
  out.impl()->grad_fn = std::move(node);
  return out;
}

void backward(const Tensor& root) {
  if (!root.defined() || root.numel() != 1) {
    throw ShapeError("backward() needs a scalar root, got shape " +
                     (root.defined() ? root.shape().str() : std::string("undefined")));
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order; each node is visited
  // exactly once even under fan-out.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(root.impl(), 0);
  seen.insert(root.impl());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    if (impl->grad_fn && next < impl->grad_fn->inputs.size()) {
      TensorImpl* child = impl->grad_fn->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(impl);
    stack.pop_back();
  }

  root.impl()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* impl = *it;
    if (!impl->grad_fn || impl->grad.empty()) continue;
    impl->grad_fn->backward(impl->grad);
  }
  for (TensorImpl* impl : order) {
    if (!impl->grad.empty()) {
      if (const std::size_t i = first_non_finite(impl->grad); i != impl->grad.size()) {
        throw_non_finite(std::string("gradient of ") + (impl->grad_fn ? impl->grad_fn->op : "leaf"),
                         i);
      }
    }
  }
}

Tensor& ParamStore::add(const std::string& name, Tensor value) {
  if (params_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  value.impl()->requires_grad = true;
  return params_.emplace(name, std::move(value)).first->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

bool ParamStore::contains(const std::string& name) const {
  return params_.count(name) != 0;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

std::size_t ParamStore::total_elements() const {
  std::size_t total = 0;
  for (const auto& [_, t] : params_) total += t.numel();
  return total;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

}  // namespace sfnet
