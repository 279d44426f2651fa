#include "egat/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "egat/errors.hpp"

namespace egat::num {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

void require_shape(bool ok, const std::string& op, const Shape& a,
                   const Shape& b) {
  if (!ok)
    throw DimensionError(op + ": incompatible shapes " + shape_str(a) +
                         " and " + shape_str(b));
}

// Broadcast strides of b against a (0 on singleton axes).
std::vector<std::size_t> broadcast_strides(const Shape& a, const Shape& b,
                                           const std::string& op) {
  require_shape(a.size() == b.size(), op, a, b);
  std::vector<std::size_t> strides(b.size(), 0);
  std::size_t stride = 1;
  for (std::size_t ax = b.size(); ax-- > 0;) {
    require_shape(b[ax] == a[ax] || b[ax] == 1, op, a, b);
    strides[ax] = b[ax] == 1 ? 0 : stride;
    stride *= b[ax];
  }
  return strides;
}

// Index of b for every flat index of a.
std::vector<std::size_t> broadcast_index(const Shape& a, const Shape& b,
                                         const std::string& op) {
  const auto strides = broadcast_strides(a, b, op);
  const std::size_t n = shape_numel(a);
  std::vector<std::size_t> idx(n);
  std::vector<std::size_t> counter(a.size(), 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    idx[i] = offset;
    for (std::size_t ax = a.size(); ax-- > 0;) {
      ++counter[ax];
      offset += strides[ax];
      if (counter[ax] < a[ax]) break;
      offset -= strides[ax] * counter[ax];
      counter[ax] = 0;
    }
  }
  return idx;
}

template <class F, class G>
Tensor unary(const Tensor& a, F forward, G derivative) {
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = forward(x[i]);
  return record(a.shape(), std::move(out), {a},
                [derivative](std::span<const double> y,
                             std::span<const double> gy,
                             std::span<Tensor> in) {
                  if (!in[0].requires_grad()) return;
                  const auto xv = in[0].data();
                  auto gx = in[0].grad_buffer();
                  for (std::size_t i = 0; i < gx.size(); ++i)
                    gx[i] += gy[i] * derivative(xv[i], y[i]);
                });
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  if (shape_numel(shape) != values.size())
    throw DimensionError("tensor of shape " + shape_str(shape) +
                         " cannot hold " + std::to_string(values.size()) +
                         " values");
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size())
    throw DimensionError("axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(shape()));
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->data.size(); }

std::span<const double> Tensor::data() const { return node_->data; }

std::span<double> Tensor::mutable_data() { return node_->data; }

double Tensor::item() const {
  if (numel() != 1)
    throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank())
    throw DimensionError("index rank mismatch for shape " + shape_str(shape()));
  std::size_t flat = 0;
  std::size_t ax = 0;
  for (std::size_t i : index) {
    if (i >= node_->shape[ax])
      throw DimensionError("index out of range for shape " +
                           shape_str(shape()));
    flat = flat * node_->shape[ax] + i;
    ++ax;
  }
  return node_->data[flat];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool value) { node_->requires_grad = value; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::grad_buffer() {
  if (node_->grad.size() != node_->data.size())
    node_->grad.assign(node_->data.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  return from(node_->shape, node_->data, false);
}

bool Tensor::is_leaf() const { return !node_->backward; }

// ---- tape ------------------------------------------------------------------

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor record(Shape shape, std::vector<double> values,
              std::vector<Tensor> inputs, BackwardFn fn) {
  Tensor out = Tensor::from(std::move(shape), std::move(values), false);
  if (!g_grad_enabled) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->inputs = std::move(inputs);
  out.node_->backward = std::move(fn);
  return out;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward() requires a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : "[]"));
  if (!loss.requires_grad())
    throw ContractError("backward() on a loss that does not require grad");

  // Iterative post-order DFS: inputs before consumers.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node_.get(), 0);
  seen.insert(loss.node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].node_.get();
      if (child->requires_grad && seen.insert(child).second)
        stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  for (detail::Node* n : order)
    if (n->grad.size() != n->data.size()) n->grad.assign(n->data.size(), 0.0);
  loss.node_->grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward) n->backward(n->data, n->grad, n->inputs);
  }
}

// ---- primitives ------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &bv[p * n];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  return record({m, n}, std::move(out), {a, b},
                [m, k, n](std::span<const double>, std::span<const double> g,
                          std::span<Tensor> in) {
                  const auto av = in[0].data();
                  const auto bv = in[1].data();
                  if (in[0].requires_grad()) {
                    auto ga = in[0].grad_buffer();
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j)
                          acc += g[i * n + j] * bv[p * n + j];
                        ga[i * k + p] += acc;
                      }
                  }
                  if (in[1].requires_grad()) {
                    auto gb = in[1].grad_buffer();
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t p = 0; p < k; ++p) {
                        const double aip = av[i * k + p];
                        for (std::size_t j = 0; j < n; ++j)
                          gb[p * n + j] += aip * g[i * n + j];
                      }
                  }
                });
}

namespace {

enum class BinOp { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  const bool same = a.shape() == b.shape();
  std::vector<std::size_t> idx;
  if (!same) idx = broadcast_index(a.shape(), b.shape(), name);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double y = bv[same ? i : idx[i]];
    switch (op) {
      case BinOp::Add: out[i] = av[i] + y; break;
      case BinOp::Sub: out[i] = av[i] - y; break;
      case BinOp::Mul: out[i] = av[i] * y; break;
    }
  }
  return record(
      a.shape(), std::move(out), {a, b},
      [op, same, idx = std::move(idx)](std::span<const double>,
                                       std::span<const double> g,
                                       std::span<Tensor> in) {
        const auto av = in[0].data();
        const auto bv = in[1].data();
        if (in[0].requires_grad()) {
          auto ga = in[0].grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i)
            ga[i] += op == BinOp::Mul ? g[i] * bv[same ? i : idx[i]] : g[i];
        }
        if (in[1].requires_grad()) {
          auto gb = in[1].grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) {
            const std::size_t j = same ? i : idx[i];
            switch (op) {
              case BinOp::Add: gb[j] += g[i]; break;
              case BinOp::Sub: gb[j] -= g[i]; break;
              case BinOp::Mul: gb[j] += g[i] * av[i]; break;
            }
          }
        }
      });
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(a, b, BinOp::Add, "add");
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(a, b, BinOp::Sub, "sub");
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(a, b, BinOp::Mul, "mul");
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(a, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  return unary(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Tensor elu(const Tensor& a, double alpha) {
  return unary(
      a, [alpha](double x) { return x > 0.0 ? x : alpha * std::expm1(x); },
      [alpha](double x, double y) { return x > 0.0 ? 1.0 : y + alpha; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Tensor elementwise(Elementwise op, const Tensor& a, const Tensor* b,
                   double slope) {
  const auto need_b = [&]() -> const Tensor& {
    if (b == nullptr) throw ContractError("binary elementwise op without rhs");
    return *b;
  };
  switch (op) {
    case Elementwise::Add: return add(a, need_b());
    case Elementwise::Mul: return mul(a, need_b());
    case Elementwise::Tanh: return tanh(a);
    case Elementwise::Sigmoid: return sigmoid(a);
    case Elementwise::Relu: return relu(a);
    case Elementwise::LeakyRelu: return leaky_relu(a, slope);
  }
  throw ContractError("unknown elementwise op");
}

Tensor sum(const Tensor& a) {
  const auto v = a.data();
  double s = 0.0;
  for (double x : v) s += x;
  return record({}, {s}, {a},
                [](std::span<const double>, std::span<const double> g,
                   std::span<Tensor> in) {
                  if (!in[0].requires_grad()) return;
                  for (double& x : in[0].grad_buffer()) x += g[0];
                });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ContractError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw DimensionError("reshape: " + shape_str(a.shape()) + " to " +
                         shape_str(shape));
  std::vector<double> v(a.data().begin(), a.data().end());
  return record(std::move(shape), std::move(v), {a},
                [](std::span<const double>, std::span<const double> g,
                   std::span<Tensor> in) {
                  if (!in[0].requires_grad()) return;
                  auto ga = in[0].grad_buffer();
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin,
             std::size_t length) {
  const Shape& s = a.shape();
  if (axis >= s.size() || begin + length > s[axis])
    throw DimensionError("slice [" + std::to_string(begin) + ", " +
                         std::to_string(begin + length) + ") on axis " +
                         std::to_string(axis) + " of " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t full = s[axis];
  Shape out_shape = s;
  out_shape[axis] = length;
  const auto v = a.data();
  std::vector<double> out(outer * length * inner);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(&v[(o * full + begin) * inner], length * inner,
                &out[o * length * inner]);
  return record(std::move(out_shape), std::move(out), {a},
                [outer, inner, full, begin, length](std::span<const double>,
                                                    std::span<const double> g,
                                                    std::span<Tensor> in) {
                  if (!in[0].requires_grad()) return;
                  auto ga = in[0].grad_buffer();
                  for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t i = 0; i < length * inner; ++i)
                      ga[(o * full + begin) * inner + i] +=
                          g[o * length * inner + i];
                });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw DimensionError("concat axis out of range");
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i)
      if (i != axis && s[i] != first[i]) ok = false;
    require_shape(ok, "concat", first, s);
    widths.push_back(s[axis]);
    total += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  Shape out_shape = first;
  out_shape[axis] = total;
  std::vector<double> out(outer * total * inner);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto v = parts[p].data();
    const std::size_t w = widths[p];
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(&v[o * w * inner], w * inner,
                  &out[(o * total + offset) * inner]);
    offset += w;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return record(std::move(out_shape), std::move(out), std::move(inputs),
                [outer, inner, total, widths](std::span<const double>,
                                              std::span<const double> g,
                                              std::span<Tensor> in) {
                  std::size_t offset = 0;
                  for (std::size_t p = 0; p < in.size(); ++p) {
                    const std::size_t w = widths[p];
                    if (in[p].requires_grad()) {
                      auto gp = in[p].grad_buffer();
                      for (std::size_t o = 0; o < outer; ++o)
                        for (std::size_t i = 0; i < w * inner; ++i)
                          gp[o * w * inner + i] +=
                              g[(o * total + offset) * inner + i];
                    }
                    offset += w;
                  }
                });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  if (a.rank() == 0) throw DimensionError("gather_rows on a scalar");
  const std::size_t n = a.dim(0);
  const std::size_t inner = a.numel() / std::max<std::size_t>(n, 1);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  for (std::size_t r : idx)
    if (r >= n) throw DimensionError("gather_rows: row " + std::to_string(r) +
                                     " out of range for " + shape_str(a.shape()));
  Shape out_shape = a.shape();
  out_shape[0] = idx.size();
  const auto v = a.data();
  std::vector<double> out(idx.size() * inner);
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(&v[idx[i] * inner], inner, &out[i * inner]);
  return record(std::move(out_shape), std::move(out), {a},
                [idx = std::move(idx), inner](std::span<const double>,
                                              std::span<const double> g,
                                              std::span<Tensor> in) {
                  if (!in[0].requires_grad()) return;
                  auto ga = in[0].grad_buffer();
                  for (std::size_t i = 0; i < idx.size(); ++i)
                    for (std::size_t c = 0; c < inner; ++c)
                      ga[idx[i] * inner + c] += g[i * inner + c];
                });
}

}  // namespace egat::num

namespace egat::num {

Tensor channel_linear(const Tensor& h, const Tensor& weight, const Tensor* bias) {
  if (h.rank() != 3 || weight.rank() != 2 || weight.dim(0) != h.dim(1))
    throw DimensionError("channel_linear: input " + shape_str(h.shape()) +
                         " vs weight " + shape_str(weight.shape()));
  const std::size_t n = h.dim(0), din = h.dim(1), len = h.dim(2);
  const std::size_t dout = weight.dim(1);
  if (bias != nullptr && bias->numel() != dout)
    throw DimensionError("channel_linear: bias " + shape_str(bias->shape()) +
                         " for output width " + std::to_string(dout));
  const auto hv = h.data();
  const auto wv = weight.data();
  std::vector<double> out(n * dout * len, 0.0);
  for (std::size_t node = 0; node < n; ++node) {
    double* obase = &out[node * dout * len];
    if (bias != nullptr) {
      const auto bv = bias->data();
      for (std::size_t o = 0; o < dout; ++o)
        std::fill_n(obase + o * len, len, bv[o]);
    }
    for (std::size_t i = 0; i < din; ++i) {
      const double* hrow = &hv[(node * din + i) * len];
      for (std::size_t o = 0; o < dout; ++o) {
        const double w = wv[i * dout + o];
        double* orow = obase + o * len;
        for (std::size_t t = 0; t < len; ++t) orow[t] += w * hrow[t];
      }
    }
  }
  std::vector<Tensor> inputs{h, weight};
  if (bias != nullptr) inputs.push_back(*bias);
  return record(
      {n, dout, len}, std::move(out), std::move(inputs),
      [n, din, dout, len](std::span<const double>, std::span<const double> g,
                          std::span<Tensor> in) {
        const auto hv = in[0].data();
        const auto wv = in[1].data();
        const bool gh = in[0].requires_grad();
        const bool gw = in[1].requires_grad();
        std::span<double> dh, dw;
        if (gh) dh = in[0].grad_buffer();
        if (gw) dw = in[1].grad_buffer();
        for (std::size_t node = 0; node < n; ++node)
          for (std::size_t i = 0; i < din; ++i) {
            const std::size_t hoff = (node * din + i) * len;
            for (std::size_t o = 0; o < dout; ++o) {
              const double* grow = &g[(node * dout + o) * len];
              if (gw) {
                double acc = 0.0;
                for (std::size_t t = 0; t < len; ++t) acc += grow[t] * hv[hoff + t];
                dw[i * dout + o] += acc;
              }
              if (gh) {
                const double w = wv[i * dout + o];
                for (std::size_t t = 0; t < len; ++t) dh[hoff + t] += w * grow[t];
              }
            }
          }
        if (in.size() > 2 && in[2].requires_grad()) {
          auto db = in[2].grad_buffer();
          for (std::size_t node = 0; node < n; ++node)
            for (std::size_t o = 0; o < dout; ++o) {
              const double* grow = &g[(node * dout + o) * len];
              double acc = 0.0;
              for (std::size_t t = 0; t < len; ++t) acc += grow[t];
              db[o] += acc;
            }
        }
      });
}

}  // namespace egat::num
