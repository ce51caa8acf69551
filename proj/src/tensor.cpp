#include "rlt/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "rlt/errors.hpp"
#include "rlt/log.hpp"

namespace rlt {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local Graph* tl_graph = nullptr;

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> data) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->id = g_next_id++;
  return n;
}

using Backward = std::function<void(Node&)>;

Tensor finish(Shape shape, std::vector<double> data, std::vector<std::shared_ptr<Node>> inputs,
              Backward bw) {
  auto n = new_node(std::move(shape), std::move(data));
  Graph* g = Graph::current();
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const auto& p) { return p->requires_grad; });
  if (g != nullptr && g->recording() && any) {
    n->requires_grad = true;
    n->is_leaf = false;
    n->parents = std::move(inputs);
    n->backward = std::move(bw);
    g->record(n);
  }
  return Tensor(n);
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_2d(const Tensor& a, const char* op) {
  require_defined(a, op);
  if (a.ndim() != 2) {
    throw DimensionError(std::string(op) + ": expected 2-D tensor, got " + shape_str(a.shape()));
  }
}

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                         shape_str(s));
  }
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

// Accumulates g into parent's gradient if it is trainable.
template <class F>
void with_grad(Node& parent, F&& f) {
  if (parent.requires_grad) f(parent.grad_buffer());
}

}  // namespace

std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

// --- Tensor ----------------------------------------------------------------

Tensor::Tensor() = default;

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
  const auto n = shape_numel(shape);
  return Tensor(new_node(std::move(shape), std::vector<double>(n, value)));
}

Tensor Tensor::from(Shape shape, std::vector<double> data) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor: shape " + shape_str(shape) + " does not hold " +
                         std::to_string(data.size()) + " values");
  }
  return Tensor(new_node(std::move(shape), std::move(data)));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> data) {
  Tensor t = from(std::move(shape), std::move(data));
  t.node_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const {
  static const Shape empty;
  return node_ ? node_->shape : empty;
}

std::size_t Tensor::numel() const { return node_ ? node_->data.size() : 0; }

std::span<const double> Tensor::data() const {
  if (!node_) return {};
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!node_) return {};
  if (!node_->is_leaf) throw ContractError("mutable_data: tensor is not a leaf");
  return node_->data;
}

const std::vector<double>& Tensor::values() const {
  if (!node_) throw ContractError("values: undefined tensor");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item: tensor has " + std::to_string(numel()) + " elements");
  return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
  const auto& s = shape();
  if (idx.size() != s.size()) throw DimensionError("at: index rank mismatch");
  std::size_t flat = 0, k = 0;
  for (auto i : idx) {
    if (i >= s[k]) throw RangeError("at: index out of range");
    flat = flat * s[k] + i;
    ++k;
  }
  return node_->data[flat];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!node_) return {};
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  if (!node_) return {};
  return Tensor(new_node(node_->shape, node_->data));
}

Tensor Tensor::clone() const {
  if (!node_) return {};
  Tensor t(new_node(node_->shape, node_->data));
  t.node_->requires_grad = node_->is_leaf && node_->requires_grad;
  return t;
}

std::uint64_t Tensor::node_id() const { return node_ ? node_->id : 0; }

// --- Graph -----------------------------------------------------------------

Graph::Graph(Mode mode) : mode_(mode), previous_(tl_graph) { tl_graph = this; }

Graph::~Graph() {
  for (auto& n : tape_) {
    n->backward = nullptr;
    n->parents.clear();
    n->owner = nullptr;
  }
  tl_graph = previous_;
}

Graph* Graph::current() { return tl_graph; }

void Graph::record(const std::shared_ptr<Node>& node) {
  node->owner = this;
  tape_.push_back(node);
}

void Graph::run_backward(Node& loss) {
  if (consumed_) throw ContractError("backward: graph already consumed; build a new graph");
  auto it = std::find_if(tape_.begin(), tape_.end(), [&](const auto& n) { return n.get() == &loss; });
  if (it == tape_.end()) throw ContractError("backward: loss is not recorded in this graph");
  consumed_ = true;
  loss.grad_buffer()[0] += 1.0;
  for (auto r = std::make_reverse_iterator(it + 1); r != tape_.rend(); ++r) {
    Node& n = **r;
    if (!n.grad.empty() && n.backward) n.backward(n);
  }
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward: undefined loss");
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  Node* n = loss.node();
  if (!n->requires_grad || n->is_leaf || n->owner == nullptr) {
    throw ContractError("backward: loss is detached from any recorded graph");
  }
  n->owner->run_backward(*n);
}

// --- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto& x = a.values();
  const auto& y = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return finish(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()}, [](Node& o) {
    for (auto& p : o.parents) {
      with_grad(*p, [&](auto& g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
      });
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto& x = a.values();
  const auto& y = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return finish(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()}, [](Node& o) {
    with_grad(*o.parents[0], [&](auto& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    });
    with_grad(*o.parents[1], [&](auto& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
    });
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto& x = a.values();
  const auto& y = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return finish(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()}, [](Node& o) {
    Node& pa = *o.parents[0];
    Node& pb = *o.parents[1];
    with_grad(pa, [&](auto& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * pb.data[i];
    });
    with_grad(pb, [&](auto& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * pa.data[i];
    });
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require_2d(a, "add_row");
  require_defined(row, "add_row");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (row.numel() != n || row.ndim() > 2 || (row.ndim() == 2 && row.dim(0) != 1)) {
    throw DimensionError("add_row: row " + shape_str(row.shape()) + " does not match " +
                         shape_str(a.shape()));
  }
  std::vector<double> out(a.values());
  const auto& r = row.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += r[j];
  return finish(a.shape(), std::move(out), {a.node_ptr(), row.node_ptr()}, [m, n](Node& o) {
    with_grad(*o.parents[0], [&](auto& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    });
    with_grad(*o.parents[1], [&](auto& g) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += o.grad[i * n + j];
    });
  });
}

Tensor scale(const Tensor& a, double s) {
  require_defined(a, "scale");
  std::vector<double> out(a.values());
  for (auto& v : out) v *= s;
  return finish(a.shape(), std::move(out), {a.node_ptr()}, [s](Node& o) {
    with_grad(*o.parents[0], [&](auto& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * o.grad[i];
    });
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  require_defined(a, "add_scalar");
  std::vector<double> out(a.values());
  for (auto& v : out) v += s;
  return finish(a.shape(), std::move(out), {a.node_ptr()}, [](Node& o) {
    with_grad(*o.parents[0], [&](auto& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    });
  });
}

Tensor square(const Tensor& a) {
  require_defined(a, "square");
  std::vector<double> out(a.values());
  for (auto& v : out) v *= v;
  return finish(a.shape(), std::move(out), {a.node_ptr()}, [](Node& o) {
    Node& p = *o.parents[0];
    with_grad(p, [&](auto& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * p.data[i] * o.grad[i];
    });
  });
}

Tensor exp(const Tensor& a) {
  require_defined(a, "exp");
  std::vector<double> out(a.values());
  for (auto& v : out) v = std::exp(v);
  return finish(a.shape(), std::move(out), {a.node_ptr()}, [](Node& o) {
    with_grad(*o.parents[0], [&](auto& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.data[i] * o.grad[i];
    });
  });
}

Tensor log(const Tensor& a) {
  require_defined(a, "log");
  std::vector<double> out(a.values());
  for (auto& v : out) v = std::log(v);
  return finish(a.shape(), std::move(out), {a.node_ptr()}, [](Node& o) {
    Node& p = *o.parents[0];
    with_grad(p, [&](auto& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] / p.data[i];
    });
  });
}

Tensor silu(const Tensor& a) {
  require_defined(a, "silu");
  std::vector<double> out(a.values());
  for (auto& v : out) v = v / (1.0 + std::exp(-v));
  return finish(a.shape(), std::move(out), {a.node_ptr()}, [](Node& o) {
    Node& p = *o.parents[0];
    with_grad(p, [&](auto& g) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = p.data[i];
        const double sig = 1.0 / (1.0 + std::exp(-x));
        g[i] += o.grad[i] * sig * (1.0 + x * (1.0 - sig));
      }
    });
  });
}

// --- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  Map(out.data(), m, n).noalias() = MapC(a.data().data(), m, k) * MapC(b.data().data(), k, n);
  return finish({m, n}, std::move(out), {a.node_ptr(), b.node_ptr()}, [m, k, n](Node& o) {
    Node& pa = *o.parents[0];
    Node& pb = *o.parents[1];
    MapC dc(o.grad.data(), m, n);
    with_grad(pa, [&](auto& g) {
      Map(g.data(), m, k).noalias() += dc * MapC(pb.data.data(), k, n).transpose();
    });
    with_grad(pb, [&](auto& g) {
      Map(g.data(), k, n).noalias() += MapC(pa.data.data(), m, k).transpose() * dc;
    });
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_nt");
  require_2d(b, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_nt: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + "^T");
  }
  std::vector<double> out(m * n);
  Map(out.data(), m, n).noalias() =
      MapC(a.data().data(), m, k) * MapC(b.data().data(), n, k).transpose();
  return finish({m, n}, std::move(out), {a.node_ptr(), b.node_ptr()}, [m, k, n](Node& o) {
    Node& pa = *o.parents[0];
    Node& pb = *o.parents[1];
    MapC dc(o.grad.data(), m, n);
    with_grad(pa, [&](auto& g) {
      Map(g.data(), m, k).noalias() += dc * MapC(pb.data.data(), n, k);
    });
    with_grad(pb, [&](auto& g) {
      Map(g.data(), n, k).noalias() += dc.transpose() * MapC(pa.data.data(), m, k);
    });
  });
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  const auto& x = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  return finish({n, m}, std::move(out), {a.node_ptr()}, [m, n](Node& o) {
    with_grad(*o.parents[0], [&](auto& g) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += o.grad[j * m + i];
    });
  });
}

// --- structure -------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  require_defined(a, "reshape");
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  return finish(std::move(shape), a.values(), {a.node_ptr()}, [](Node& o) {
    with_grad(*o.parents[0], [&](auto& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    });
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw DimensionError("concat: axis out of range for " + shape_str(s0));
  Shape out_shape = s0;
  out_shape[axis] = 0;
  std::vector<std::size_t> lens;
  std::vector<std::shared_ptr<Node>> inputs;
  for (const auto& p : parts) {
    require_defined(p, "concat");
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == s0[i];
    if (!ok) throw DimensionError("concat: " + shape_str(s) + " incompatible with " + shape_str(s0));
    out_shape[axis] += s[axis];
    lens.push_back(s[axis]);
    inputs.push_back(p.node_ptr());
  }
  const auto sp = split_axis(out_shape, axis, "concat");
  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto& x = parts[pi].values();
    const std::size_t chunk = lens[pi] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(x.begin() + o * chunk, chunk, out.begin() + o * sp.len * sp.inner + offset);
    }
    offset += chunk;
  }
  return finish(out_shape, std::move(out), std::move(inputs), [sp, lens](Node& o) {
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < o.parents.size(); ++pi) {
      const std::size_t chunk = lens[pi] * sp.inner;
      with_grad(*o.parents[pi], [&](auto& g) {
        for (std::size_t b = 0; b < sp.outer; ++b)
          for (std::size_t i = 0; i < chunk; ++i) g[b * chunk + i] += o.grad[b * sp.len * sp.inner + off + i];
      });
      off += chunk;
    }
  });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  require_defined(a, "slice");
  const auto sp = split_axis(a.shape(), axis, "slice");
  if (begin > end || end > sp.len) {
    throw RangeError("slice: [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for axis of length " + std::to_string(sp.len));
  }
  Shape out_shape = a.shape();
  out_shape[axis] = end - begin;
  const std::size_t chunk = (end - begin) * sp.inner;
  std::vector<double> out(sp.outer * chunk);
  const auto& x = a.values();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(x.begin() + o * sp.len * sp.inner + begin * sp.inner, chunk, out.begin() + o * chunk);
  }
  return finish(std::move(out_shape), std::move(out), {a.node_ptr()}, [sp, chunk, begin](Node& o) {
    with_grad(*o.parents[0], [&](auto& g) {
      for (std::size_t b = 0; b < sp.outer; ++b)
        for (std::size_t i = 0; i < chunk; ++i)
          g[b * sp.len * sp.inner + begin * sp.inner + i] += o.grad[b * chunk + i];
    });
  });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  require_defined(a, "gather_rows");
  if (a.ndim() < 1) throw DimensionError("gather_rows: scalar input");
  const std::size_t m = a.dim(0);
  const std::size_t width = m == 0 ? 0 : a.numel() / m;
  Shape out_shape = a.shape();
  out_shape[0] = rows.size();
  std::vector<double> out(rows.size() * width);
  const auto& x = a.values();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= m) {
      throw RangeError("gather_rows: row " + std::to_string(rows[i]) + " out of range " +
                       std::to_string(m));
    }
    std::copy_n(x.begin() + rows[i] * width, width, out.begin() + i * width);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return finish(std::move(out_shape), std::move(out), {a.node_ptr()}, [idx, width](Node& o) {
    with_grad(*o.parents[0], [&](auto& g) {
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < width; ++j) g[idx[i] * width + j] += o.grad[i * width + j];
    });
  });
}

// --- reductions ------------------------------------------------------------

Tensor sum(const Tensor& a) {
  require_defined(a, "sum");
  double s = 0.0;
  for (double v : a.values()) s += v;
  return finish({1}, {s}, {a.node_ptr()}, [](Node& o) {
    with_grad(*o.parents[0], [&](auto& g) {
      for (auto& v : g) v += o.grad[0];
    });
  });
}

Tensor mean(const Tensor& a) {
  require_defined(a, "mean");
  if (a.numel() == 0) throw ContractError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum(const Tensor& a, std::size_t axis) {
  require_defined(a, "sum");
  const auto sp = split_axis(a.shape(), axis, "sum");
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  const auto& x = a.values();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.len; ++l)
      for (std::size_t i = 0; i < sp.inner; ++i)
        out[o * sp.inner + i] += x[(o * sp.len + l) * sp.inner + i];
  return finish(std::move(out_shape), std::move(out), {a.node_ptr()}, [sp](Node& o) {
    with_grad(*o.parents[0], [&](auto& g) {
      for (std::size_t b = 0; b < sp.outer; ++b)
        for (std::size_t l = 0; l < sp.len; ++l)
          for (std::size_t i = 0; i < sp.inner; ++i)
            g[(b * sp.len + l) * sp.inner + i] += o.grad[b * sp.inner + i];
    });
  });
}

Tensor mean(const Tensor& a, std::size_t axis) {
  const auto sp = split_axis(a.shape(), axis, "mean");
  if (sp.len == 0) throw ContractError("mean: empty axis");
  return scale(sum(a, axis), 1.0 / static_cast<double>(sp.len));
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  require_defined(a, "softmax");
  const auto sp = split_axis(a.shape(), axis, "softmax");
  const auto& x = a.values();
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.len * sp.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < sp.len; ++l) mx = std::max(mx, x[base + l * sp.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < sp.len; ++l) {
        const double e = std::exp(x[base + l * sp.inner] - mx);
        out[base + l * sp.inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < sp.len; ++l) out[base + l * sp.inner] /= z;
    }
  }
  return finish(a.shape(), std::move(out), {a.node_ptr()}, [sp](Node& o) {
    with_grad(*o.parents[0], [&](auto& g) {
      for (std::size_t b = 0; b < sp.outer; ++b) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
          const std::size_t base = b * sp.len * sp.inner + i;
          double dot = 0.0;
          for (std::size_t l = 0; l < sp.len; ++l) {
            const std::size_t k = base + l * sp.inner;
            dot += o.grad[k] * o.data[k];
          }
          for (std::size_t l = 0; l < sp.len; ++l) {
            const std::size_t k = base + l * sp.inner;
            g[k] += o.data[k] * (o.grad[k] - dot);
          }
        }
      }
    });
  });
}

Tensor logsumexp(const Tensor& a, std::size_t axis) {
  require_defined(a, "logsumexp");
  const auto sp = split_axis(a.shape(), axis, "logsumexp");
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape = {1};
  const auto& x = a.values();
  std::vector<double> out(sp.outer * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.len * sp.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < sp.len; ++l) mx = std::max(mx, x[base + l * sp.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < sp.len; ++l) z += std::exp(x[base + l * sp.inner] - mx);
      out[o * sp.inner + i] = mx + std::log(z);
    }
  }
  return finish(std::move(out_shape), std::move(out), {a.node_ptr()}, [sp](Node& o) {
    Node& p = *o.parents[0];
    with_grad(p, [&](auto& g) {
      for (std::size_t b = 0; b < sp.outer; ++b) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
          const double lse = o.data[b * sp.inner + i];
          const double dy = o.grad[b * sp.inner + i];
          for (std::size_t l = 0; l < sp.len; ++l) {
            const std::size_t k = (b * sp.len + l) * sp.inner + i;
            g[k] += dy * std::exp(p.data[k] - lse);
          }
        }
      }
    });
  });
}

Tensor l2_normalize(const Tensor& a, std::size_t axis) {
  require_defined(a, "l2_normalize");
  const auto sp = split_axis(a.shape(), axis, "l2_normalize");
  const auto& x = a.values();
  std::vector<double> out(x.size(), 0.0);
  std::vector<double> norms(sp.outer * sp.inner);
  bool warned = false;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.len * sp.inner + i;
      double ss = 0.0;
      for (std::size_t l = 0; l < sp.len; ++l) ss += x[base + l * sp.inner] * x[base + l * sp.inner];
      const double nrm = std::sqrt(ss);
      norms[o * sp.inner + i] = nrm;
      if (nrm == 0.0) {
        if (!warned) warn("l2_normalize: zero-norm vector mapped to zero");
        warned = true;
        continue;
      }
      for (std::size_t l = 0; l < sp.len; ++l) out[base + l * sp.inner] = x[base + l * sp.inner] / nrm;
    }
  }
  return finish(a.shape(), std::move(out), {a.node_ptr()}, [sp, norms](Node& o) {
    with_grad(*o.parents[0], [&](auto& g) {
      for (std::size_t b = 0; b < sp.outer; ++b) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
          const double nrm = norms[b * sp.inner + i];
          if (nrm == 0.0) continue;
          const std::size_t base = b * sp.len * sp.inner + i;
          double dot = 0.0;
          for (std::size_t l = 0; l < sp.len; ++l) {
            const std::size_t k = base + l * sp.inner;
            dot += o.data[k] * o.grad[k];
          }
          for (std::size_t l = 0; l < sp.len; ++l) {
            const std::size_t k = base + l * sp.inner;
            g[k] += (o.grad[k] - o.data[k] * dot) / nrm;
          }
        }
      }
    });
  });
}

Tensor rms_norm(const Tensor& a, double eps) {
  require_2d(a, "rms_norm");
  const std::size_t m = a.dim(0), n = a.dim(1);
  const auto& x = a.values();
  std::vector<double> out(x.size());
  std::vector<double> rms(m);
  for (std::size_t i = 0; i < m; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += x[i * n + j] * x[i * n + j];
    rms[i] = std::sqrt(ss / static_cast<double>(n) + eps);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i * n + j] / rms[i];
  }
  return finish(a.shape(), std::move(out), {a.node_ptr()}, [m, n, rms](Node& o) {
    with_grad(*o.parents[0], [&](auto& g) {
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += o.grad[i * n + j] * o.data[i * n + j];
        dot /= static_cast<double>(n);
        for (std::size_t j = 0; j < n; ++j) {
          g[i * n + j] += (o.grad[i * n + j] - o.data[i * n + j] * dot) / rms[i];
        }
      }
    });
  });
}

// --- initializers ----------------------------------------------------------

Tensor gaussian(Shape shape, double mean_value, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(mean_value, stddev);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

Tensor uniform(Shape shape, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

}  // namespace rlt
