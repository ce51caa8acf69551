#pragma once

// Dense row-major float64 tensors with define-by-run reverse-mode autodiff.
//
// A Graph in recording mode, installed for the current thread, captures every
// operation whose inputs require gradients. backward() walks that tape once in
// reverse execution order and accumulates into leaf gradient buffers.
// Accumulation is additive; call zero_grad() between steps.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace rlt {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Graph;
struct Node;

class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> data);
  static Tensor scalar(double value);
  // Trainable leaf: gradients accumulate into its grad buffer.
  static Tensor parameter(Shape shape, std::vector<double> data);

  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t i) const { return shape().at(i); }
  std::size_t numel() const;
  bool defined() const { return static_cast<bool>(node_); }

  std::span<const double> data() const;
  // In-place access is only for leaves (optimizer updates, test perturbation).
  std::span<double> mutable_data();
  const std::vector<double>& values() const;
  double item() const;
  double at(std::initializer_list<std::size_t> idx) const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // Same values, no graph history, not trainable.
  Tensor detach() const;
  // Deep copy that keeps the requires_grad flag of a leaf.
  Tensor clone() const;
  std::uint64_t node_id() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<Node> node_;
};

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::uint64_t id = 0;
  Graph* owner = nullptr;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer();
};

class Graph {
 public:
  enum class Mode { recording, inference };

  explicit Graph(Mode mode = Mode::recording);
  ~Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Graph active on this thread, or nullptr.
  static Graph* current();
  Mode mode() const { return mode_; }
  bool recording() const { return mode_ == Mode::recording; }
  std::size_t size() const { return tape_.size(); }

  void record(const std::shared_ptr<Node>& node);
  void run_backward(Node& loss);

 private:
  Mode mode_;
  Graph* previous_;
  bool consumed_ = false;
  std::vector<std::shared_ptr<Node>> tape_;
};

// Suspends recording for its lifetime (nested inference graph).
class NoGradGuard {
 public:
  NoGradGuard() : graph_(Graph::Mode::inference) {}

 private:
  Graph graph_;
};

// Accumulates d(loss)/d(leaf) into every trainable leaf reachable from loss.
void backward(const Tensor& loss);

// --- elementwise -----------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// a: [m, n], row: [n] or [1, n]; row is added to every row of a.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor square(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor silu(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

// --- linear algebra --------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k] x [k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k] x [n,k]^T
Tensor transpose(const Tensor& a);                   // 2-D

// --- structure -------------------------------------------------------------
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);

// --- reductions ------------------------------------------------------------
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum(const Tensor& a, std::size_t axis);  // axis removed
Tensor mean(const Tensor& a, std::size_t axis);
Tensor softmax(const Tensor& a, std::size_t axis);
Tensor logsumexp(const Tensor& a, std::size_t axis);
// Divides each slice along axis by its L2 norm. Zero-norm slices map to zero
// with a warning.
Tensor l2_normalize(const Tensor& a, std::size_t axis);
// Row-wise RMS normalization over the last axis of a 2-D tensor, no affine.
Tensor rms_norm(const Tensor& a, double eps = 1e-6);

// --- initializers ----------------------------------------------------------
Tensor gaussian(Shape shape, double mean, double stddev, Rng& rng);
Tensor uniform(Shape shape, double lo, double hi, Rng& rng);

}  // namespace rlt
