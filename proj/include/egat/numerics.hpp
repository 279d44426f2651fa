#pragma once

// Dense row-major tensors with reverse-mode differentiation.
//
// Every operation whose inputs require gradients records a node holding
// its inputs and a local backward closure. backward() orders the reachable
// nodes topologically (deterministic for a fixed op order) and replays the
// closures in reverse. A Tensor is a shared handle; copies alias storage.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace egat::num {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

// Local gradient closure of a recorded op: reads the op's output value and
// incoming gradient, accumulates into the grad buffers of its inputs.
using BackwardFn = std::function<void(std::span<const double> out_value,
                                      std::span<const double> out_grad,
                                      std::span<Tensor> inputs)>;

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Writes bypass the tape; only use on leaves or detached tensors.
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  // Zero-initialised on first access.
  std::span<double> grad_buffer();
  void zero_grad();

  // Same values, no tape history, independent storage.
  Tensor detach() const;
  bool is_leaf() const;

  bool same_node(const Tensor& other) const noexcept {
    return node_ == other.node_;
  }

 private:
  friend Tensor record(Shape, std::vector<double>, std::vector<Tensor>,
                       BackwardFn);
  friend void backward(const Tensor&);
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node> node_;
};

// Create the output of a custom op. The closure is kept only when gradient
// recording is enabled and some input requires a gradient.
Tensor record(Shape shape, std::vector<double> values,
              std::vector<Tensor> inputs, BackwardFn fn);

// Populate grad() of every requires_grad tensor reachable from loss.
void backward(const Tensor& loss);

bool grad_enabled();

// Disables recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// ---- primitives ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);

// Binary ops broadcast b onto a: same rank, each axis of b equal to a's or 1.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope = 0.2);
Tensor elu(const Tensor& a, double alpha = 1.0);
Tensor scale(const Tensor& a, double factor);

enum class Elementwise { Add, Mul, Tanh, Sigmoid, Relu, LeakyRelu };

// Dispatcher over the pointwise family; `b` is required for Add and Mul.
Tensor elementwise(Elementwise op, const Tensor& a, const Tensor* b = nullptr,
                   double slope = 0.2);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);
// Contiguous range [begin, begin + length) along one axis.
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin,
             std::size_t length);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
// Per-position linear map over the channel axis of h: N x d_in x T times
// W: d_in x d_out (plus optional bias d_out) gives N x d_out x T.
Tensor channel_linear(const Tensor& h, const Tensor& weight,
                      const Tensor* bias = nullptr);

// Gathers rows (axis 0) by index; gradients scatter-add back.
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);

}  // namespace egat::num
