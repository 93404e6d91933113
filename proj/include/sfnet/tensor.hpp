#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sfnet {

// Error taxonomy. The CLI maps these onto exit codes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

struct TensorImpl;

// One recorded operation. `backward` reads the output gradient and
// accumulates into the gradients of `inputs`.
struct TapeNode {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(std::span<const double> grad_out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<TapeNode> grad_fn;

  // Lazily allocates the gradient buffer.
  std::span<double> grad_buffer();
};

// Dense N x C x H x W float64 tensor with shared ownership. Copies alias the
// same storage; data is treated as immutable once a tensor has been used as
// an op input.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t numel() const { return impl_->shape.numel(); }

  std::span<const double> data() const { return impl_->data; }
  // Mutable access is for leaves (parameters, freshly built inputs) only.
  std::span<double> mutable_data();

  double at(int n, int c, int h, int w) const;
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad() { return impl_->grad_buffer(); }
  void zero_grad();

  bool is_leaf() const { return !impl_->grad_fn; }
  const TapeNode* grad_fn() const { return impl_->grad_fn.get(); }
  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

  // Deep copy of data with no history.
  Tensor detach_copy(bool requires_grad = false) const;

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Recording switch, thread-local. While disabled, ops produce plain tensors
// with no tape node.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Builds an op result. A tape node is attached when recording is enabled and
// some input requires grad. The forward data is checked for non-finite values.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs,
                   std::function<void(std::span<const double>)> backward);

// Reverse-mode sweep from a scalar root. Gradients accumulate additively.
void backward(const Tensor& root);

// Throws NumericError naming `what` if any value is NaN or infinite.
void check_finite(std::span<const double> values, const std::string& what);

// Named parameters, iterated in lexicographic order.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor value);
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  bool contains(const std::string& name) const;
  std::vector<std::string> names() const;
  std::size_t size() const { return params_.size(); }
  std::size_t total_elements() const;
  void zero_grad();

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Tensor> params_;
};

}  // namespace sfnet
