#pragma once

// Dense tensors with reverse-mode automatic differentiation.
//
// Every DiffTensor either is a constant or refers to a node of a Graph.  The
// backward rules are written in terms of the same operations, so when a
// gradient is requested with `higher_order = true` the backward pass is itself
// recorded and can be differentiated again (reverse-over-reverse).  This is how
// u_t, u_xx and Hessian-vector products are obtained.

#include <Eigen/Core>

#include <deque>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace pinnsformer {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using Values = Eigen::ArrayXd;

Index shape_size(const Shape& shape);
std::string to_string(const Shape& shape);

class AutodiffError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IncompatibleShapes : public AutodiffError {
 public:
  using AutodiffError::AutodiffError;
};

class InvalidAxis : public AutodiffError {
 public:
  using AutodiffError::AutodiffError;
};

class NotInGraph : public AutodiffError {
 public:
  using AutodiffError::AutodiffError;
};

class GraphMismatch : public AutodiffError {
 public:
  using AutodiffError::AutodiffError;
};

class HigherOrderUnsupportedOp : public AutodiffError {
 public:
  using AutodiffError::AutodiffError;
};

enum class Op {
  leaf,
  sin,
  cos,
  tanh,
  exp,
  square,
  negate,
  relu,
  sigmoid,
  affine,
  add,
  sub,
  mul,
  div,
  matmul,
  linear,
  transpose,
  reshape,
  broadcast_to,
  sum_to,
  slice,
  pad,
  concat,
  softmax,
  wavelet,
};

const char* op_name(Op op);

enum class UnaryOp { sin, cos, tanh, exp, square, negate, relu, sigmoid };
enum class BinaryOp { add, sub, mul, div };

enum class GradMode {
  none,                 // nothing is recorded; every result is a constant
  record,               // forward ops are recorded; backward passes record on request
  record_higher_order,  // backward passes are always recorded
};

class Graph;

class DiffTensor {
 public:
  DiffTensor() = default;
  DiffTensor(Shape shape, Values values);

  static DiffTensor scalar(double value);
  static DiffTensor full(Shape shape, double value);
  static DiffTensor zeros(Shape shape) { return full(std::move(shape), 0.0); }
  static DiffTensor ones(Shape shape) { return full(std::move(shape), 1.0); }

  bool defined() const { return static_cast<bool>(values_); }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  Index dim(int axis) const;
  Index size() const { return values_ ? values_->size() : 0; }
  const Values& values() const { return *values_; }
  const std::shared_ptr<const Values>& shared_values() const { return values_; }
  double item() const;
  double at(std::initializer_list<Index> index) const;

  bool requires_grad() const { return graph_ != nullptr; }
  Graph* graph() const { return graph_; }
  int node() const { return node_; }

  // Same values, no graph membership.
  DiffTensor detach() const;

 private:
  friend class Graph;
  friend std::vector<DiffTensor> grad(const DiffTensor&, const std::vector<DiffTensor>&, bool,
                                      const DiffTensor&);

  Shape shape_;
  std::shared_ptr<const Values> values_;
  Graph* graph_ = nullptr;
  int node_ = -1;
};

// Receives the gradient flowing into a node and fills the gradients of the
// inputs flagged in `needed`.  Must be written in DiffTensor ops only.
using BackwardFn = std::function<void(const DiffTensor& grad_out, const std::vector<bool>& needed,
                                      std::vector<DiffTensor>& grad_in)>;

struct Diagnostics {
  long division_by_zero = 0;
  long nonfinite_results = 0;
};

// Per-thread counters; never reset implicitly.
Diagnostics& diagnostics();
bool all_finite(const DiffTensor& x);

// Append-only computation graph.  Nodes are stored in creation order, which is
// a topological order.  A graph and its tensors belong to one thread.
class Graph {
 public:
  explicit Graph(GradMode mode = GradMode::record) : mode_(mode) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaf that requires grad.  With GradMode::none the value is returned as a constant.
  DiffTensor variable(Shape shape, Values values);
  DiffTensor variable(const DiffTensor& value);

  GradMode mode() const { return mode_; }
  bool recording() const { return mode_ != GradMode::none && recording_; }
  std::size_t node_count() const { return nodes_.size(); }
  Op op(int node) const { return nodes_.at(static_cast<std::size_t>(node)).op; }
  const std::vector<int>& inputs(int node) const { return nodes_.at(static_cast<std::size_t>(node)).inputs; }

  // Builds the result of an op.  The result is recorded when any input belongs
  // to this graph and recording is on, otherwise it is a constant.
  using BackwardFactory = std::function<BackwardFn(const DiffTensor& result)>;
  static DiffTensor make(Op op, Shape shape, Values values, const std::vector<const DiffTensor*>& inputs,
                         const BackwardFactory& backward);
  static DiffTensor make(Op op, Shape shape, std::shared_ptr<const Values> values,
                         const std::vector<const DiffTensor*>& inputs, const BackwardFactory& backward);

 private:
  friend std::vector<DiffTensor> grad(const DiffTensor&, const std::vector<DiffTensor>&, bool,
                                      const DiffTensor&);

  struct Node {
    Op op;
    std::vector<int> inputs;
    BackwardFn backward;
  };

  class PauseRecording {
   public:
    explicit PauseRecording(Graph& graph) : graph_(graph), previous_(graph.recording_) { graph.recording_ = false; }
    ~PauseRecording() { graph_.recording_ = previous_; }
    PauseRecording(const PauseRecording&) = delete;
    PauseRecording& operator=(const PauseRecording&) = delete;

   private:
    Graph& graph_;
    bool previous_;
  };

  GradMode mode_;
  bool recording_ = true;
  std::deque<Node> nodes_;
};

// Gradients of `output` with respect to each tensor of `wrt`.  Without a seed
// the output must hold a single value.  With `higher_order` the returned
// gradients are recorded and can be differentiated again.  Tensors of `wrt`
// that `output` does not depend on receive zeros.
std::vector<DiffTensor> grad(const DiffTensor& output, const std::vector<DiffTensor>& wrt,
                             bool higher_order = false, const DiffTensor& seed = DiffTensor());

// --- elementwise --------------------------------------------------------------

DiffTensor unary(UnaryOp op, const DiffTensor& x);
DiffTensor sin(const DiffTensor& x);
DiffTensor cos(const DiffTensor& x);
DiffTensor tanh(const DiffTensor& x);
DiffTensor exp(const DiffTensor& x);
DiffTensor square(const DiffTensor& x);
DiffTensor neg(const DiffTensor& x);
DiffTensor relu(const DiffTensor& x);
DiffTensor sigmoid(const DiffTensor& x);

// scale * x + shift with constant scalars.
DiffTensor affine(const DiffTensor& x, double scale, double shift);

// Broadcasting follows trailing-dimension alignment: after right-aligning the
// shapes, every pair of dimensions must be equal or contain a 1.
DiffTensor binary(BinaryOp op, const DiffTensor& a, const DiffTensor& b);
DiffTensor add(const DiffTensor& a, const DiffTensor& b);
DiffTensor sub(const DiffTensor& a, const DiffTensor& b);
DiffTensor mul(const DiffTensor& a, const DiffTensor& b);
DiffTensor div(const DiffTensor& a, const DiffTensor& b);

inline DiffTensor operator+(const DiffTensor& a, const DiffTensor& b) { return add(a, b); }
inline DiffTensor operator-(const DiffTensor& a, const DiffTensor& b) { return sub(a, b); }
inline DiffTensor operator*(const DiffTensor& a, const DiffTensor& b) { return mul(a, b); }
inline DiffTensor operator/(const DiffTensor& a, const DiffTensor& b) { return div(a, b); }
inline DiffTensor operator-(const DiffTensor& x) { return neg(x); }
inline DiffTensor operator*(double c, const DiffTensor& x) { return affine(x, c, 0.0); }
inline DiffTensor operator*(const DiffTensor& x, double c) { return affine(x, c, 0.0); }
inline DiffTensor operator+(const DiffTensor& x, double c) { return affine(x, 1.0, c); }
inline DiffTensor operator+(double c, const DiffTensor& x) { return affine(x, 1.0, c); }
inline DiffTensor operator-(const DiffTensor& x, double c) { return affine(x, 1.0, -c); }
inline DiffTensor operator-(double c, const DiffTensor& x) { return affine(x, -1.0, c); }

// omega1 * sin(x) + omega2 * cos(x); omega1 and omega2 hold one value each.
DiffTensor wavelet(const DiffTensor& x, const DiffTensor& omega1, const DiffTensor& omega2);

// --- linear algebra -------------------------------------------------------------

// op(a)[..., m, n] * op(b)[..., n, p].  Batch dimensions must match, or one
// operand must be a plain matrix that is shared across the batch.
DiffTensor matmul(const DiffTensor& a, const DiffTensor& b, bool transpose_a = false, bool transpose_b = false);

// x[..., in] * weight[out, in]^T + bias[out].  `bias` may be undefined.
DiffTensor linear(const DiffTensor& x, const DiffTensor& weight, const DiffTensor& bias);

// Swaps the last two dimensions.
DiffTensor transpose(const DiffTensor& x);

// --- shape ----------------------------------------------------------------------

DiffTensor reshape(const DiffTensor& x, Shape shape);
DiffTensor broadcast_to(const DiffTensor& x, const Shape& shape);
// Sums the broadcast dimensions away; inverse of broadcast_to.
DiffTensor sum_to(const DiffTensor& x, const Shape& shape);
DiffTensor slice(const DiffTensor& x, int axis, Index start, Index length);
// Places x at [start, start + x.dim(axis)) of a zero tensor of extent `length` along `axis`.
DiffTensor pad(const DiffTensor& x, int axis, Index start, Index length);
DiffTensor concat(const std::vector<DiffTensor>& xs, int axis);

// --- reductions -----------------------------------------------------------------

DiffTensor sum(const DiffTensor& x);
DiffTensor sum(const DiffTensor& x, const std::vector<int>& axes, bool keepdim = false);
DiffTensor mean(const DiffTensor& x);
DiffTensor mean(const DiffTensor& x, const std::vector<int>& axes, bool keepdim = false);

enum class ReduceOp { sum, mean };
DiffTensor reduce(ReduceOp op, const DiffTensor& x, const std::vector<int>& axes, bool keepdim = false);

// Softmax along the last axis.
DiffTensor softmax(const DiffTensor& x);

// Sum of the elementwise product; convenience for directional derivatives.
DiffTensor dot(const DiffTensor& a, const DiffTensor& b);

Shape broadcast_shape(const Shape& a, const Shape& b);

}  // namespace pinnsformer
