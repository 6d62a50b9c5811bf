#include "pinnsformer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>

namespace pinnsformer {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

int normalize_axis(int axis, int rank) {
  const int resolved = axis < 0 ? axis + rank : axis;
  if (resolved < 0 || resolved >= rank) {
    throw InvalidAxis("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  }
  return resolved;
}

Shape right_aligned(const Shape& from, std::size_t rank) {
  Shape padded(rank, 1);
  std::copy(from.begin(), from.end(), padded.begin() + static_cast<std::ptrdiff_t>(rank - from.size()));
  return padded;
}

// Walks `big` in row-major order and calls visit(big_offset, small_offset, run)
// for each innermost run, where small is right-aligned to big with size-1
// dimensions broadcast.  `run` elements of big map to small with stride
// `inner_stride`.
template <typename Visit>
void for_each_broadcast_run(const Shape& small, const Shape& big, Visit&& visit) {
  const std::size_t rank = big.size();
  if (small.size() > rank) {
    throw IncompatibleShapes("cannot broadcast " + to_string(small) + " to " + to_string(big));
  }
  const Shape padded = right_aligned(small, rank);
  for (std::size_t d = 0; d < rank; ++d) {
    if (padded[d] != big[d] && padded[d] != 1) {
      throw IncompatibleShapes("cannot broadcast " + to_string(small) + " to " + to_string(big));
    }
  }
  const Index total = shape_size(big);
  if (rank == 0) {
    visit(Index{0}, Index{0}, Index{1}, Index{0});
    return;
  }
  std::vector<Index> stride(rank, 0);
  Index running = 1;
  for (std::size_t d = rank; d-- > 0;) {
    stride[d] = padded[d] == 1 ? 0 : running;
    running *= padded[d];
  }
  const Index inner = big[rank - 1];
  const Index inner_stride = stride[rank - 1];
  if (inner == 0) return;
  std::vector<Index> counter(rank, 0);
  Index small_offset = 0;
  for (Index offset = 0; offset < total; offset += inner) {
    visit(offset, small_offset, inner, inner_stride);
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++counter[d];
      small_offset += stride[d];
      if (counter[d] < big[d]) break;
      small_offset -= stride[d] * big[d];
      counter[d] = 0;
    }
  }
}

Values broadcast_values(const Values& src, const Shape& from, const Shape& to) {
  Values out(shape_size(to));
  for_each_broadcast_run(from, to, [&](Index offset, Index src_offset, Index run, Index step) {
    if (step == 0) {
      out.segment(offset, run).setConstant(src[src_offset]);
    } else {
      out.segment(offset, run) = src.segment(src_offset, run);
    }
  });
  return out;
}

Values reduce_values(const Values& src, const Shape& from, const Shape& to) {
  Values out = Values::Zero(shape_size(to));
  for_each_broadcast_run(to, from, [&](Index offset, Index dst_offset, Index run, Index step) {
    if (step == 0) {
      out[dst_offset] += src.segment(offset, run).sum();
    } else {
      out.segment(dst_offset, run) += src.segment(offset, run);
    }
  });
  return out;
}

void count_nonfinite(const Values& values) {
  if (!values.isFinite().all()) ++diagnostics().nonfinite_results;
}

struct MatmulLayout {
  Index rows_a = 0, cols_a = 0, rows_b = 0, cols_b = 0;
  Index m = 0, n = 0, p = 0;
  Index batch = 1;
  bool a_shared = false;
  bool b_shared = false;
  Shape out_shape;
};

MatmulLayout matmul_layout(const Shape& a, const Shape& b, bool ta, bool tb) {
  if (a.size() < 2 || b.size() < 2) {
    throw IncompatibleShapes("matmul needs operands of rank >= 2, got " + to_string(a) + " and " + to_string(b));
  }
  MatmulLayout layout;
  layout.rows_a = a[a.size() - 2];
  layout.cols_a = a[a.size() - 1];
  layout.rows_b = b[b.size() - 2];
  layout.cols_b = b[b.size() - 1];
  layout.m = ta ? layout.cols_a : layout.rows_a;
  const Index n_a = ta ? layout.rows_a : layout.cols_a;
  const Index n_b = tb ? layout.cols_b : layout.rows_b;
  layout.p = tb ? layout.rows_b : layout.cols_b;
  if (n_a != n_b) {
    throw IncompatibleShapes("matmul inner dimensions differ: " + to_string(a) + " and " + to_string(b));
  }
  layout.n = n_a;
  const Shape batch_a(a.begin(), a.end() - 2);
  const Shape batch_b(b.begin(), b.end() - 2);
  Shape batch_shape;
  if (batch_a.empty()) {
    batch_shape = batch_b;
    layout.a_shared = !batch_b.empty();
  } else if (batch_b.empty()) {
    batch_shape = batch_a;
    layout.b_shared = true;
  } else if (batch_a == batch_b) {
    batch_shape = batch_a;
  } else {
    throw IncompatibleShapes("matmul batch dimensions differ: " + to_string(a) + " and " + to_string(b));
  }
  layout.batch = shape_size(batch_shape);
  layout.out_shape = batch_shape;
  layout.out_shape.push_back(layout.m);
  layout.out_shape.push_back(layout.p);
  return layout;
}

template <typename A, typename B>
void gemm_into(MatrixMap& c, const A& a, const B& b) {
  c.noalias() = a * b;
}

Values matmul_values(const Values& a, const Values& b, const MatmulLayout& l, bool ta, bool tb) {
  Values out(l.batch * l.m * l.p);
  if (l.b_shared && !ta) {
    // Rows of every batch stack into one matrix.
    ConstMatrixMap am(a.data(), l.batch * l.rows_a, l.cols_a);
    ConstMatrixMap bm(b.data(), l.rows_b, l.cols_b);
    MatrixMap cm(out.data(), l.batch * l.m, l.p);
    if (tb) {
      gemm_into(cm, am, bm.transpose());
    } else {
      gemm_into(cm, am, bm);
    }
    return out;
  }
  const Index a_step = l.a_shared ? 0 : l.rows_a * l.cols_a;
  const Index b_step = l.b_shared ? 0 : l.rows_b * l.cols_b;
  for (Index i = 0; i < l.batch; ++i) {
    ConstMatrixMap am(a.data() + i * a_step, l.rows_a, l.cols_a);
    ConstMatrixMap bm(b.data() + i * b_step, l.rows_b, l.cols_b);
    MatrixMap cm(out.data() + i * l.m * l.p, l.m, l.p);
    if (ta && tb) {
      gemm_into(cm, am.transpose(), bm.transpose());
    } else if (ta) {
      gemm_into(cm, am.transpose(), bm);
    } else if (tb) {
      gemm_into(cm, am, bm.transpose());
    } else {
      gemm_into(cm, am, bm);
    }
  }
  return out;
}

Shape drop_last(const Shape& shape) { return Shape(shape.begin(), shape.end() - 1); }

Index rows_of(const Shape& shape) {
  Index rows = 1;
  for (std::size_t d = 0; d + 1 < shape.size(); ++d) rows *= shape[d];
  return rows;
}

}  // namespace

Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::sin: return "sin";
    case Op::cos: return "cos";
    case Op::tanh: return "tanh";
    case Op::exp: return "exp";
    case Op::square: return "square";
    case Op::negate: return "negate";
    case Op::relu: return "relu";
    case Op::sigmoid: return "sigmoid";
    case Op::affine: return "affine";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::div: return "div";
    case Op::matmul: return "matmul";
    case Op::linear: return "linear";
    case Op::transpose: return "transpose";
    case Op::reshape: return "reshape";
    case Op::broadcast_to: return "broadcast_to";
    case Op::sum_to: return "sum_to";
    case Op::slice: return "slice";
    case Op::pad: return "pad";
    case Op::concat: return "concat";
    case Op::softmax: return "softmax";
    case Op::wavelet: return "wavelet";
  }
  return "unknown";
}

Diagnostics& diagnostics() {
  thread_local Diagnostics counters;
  return counters;
}

bool all_finite(const DiffTensor& x) { return !x.defined() || x.values().isFinite().all(); }

// --- DiffTensor -------------------------------------------------------------------

DiffTensor::DiffTensor(Shape shape, Values values)
    : shape_(std::move(shape)), values_(std::make_shared<const Values>(std::move(values))) {
  if (shape_size(shape_) != values_->size()) {
    throw IncompatibleShapes("shape " + to_string(shape_) + " does not match " + std::to_string(values_->size()) +
                             " values");
  }
}

DiffTensor DiffTensor::scalar(double value) { return DiffTensor({}, Values::Constant(1, value)); }

DiffTensor DiffTensor::full(Shape shape, double value) {
  const Index n = shape_size(shape);
  return DiffTensor(std::move(shape), Values::Constant(n, value));
}

Index DiffTensor::dim(int axis) const { return shape_[static_cast<std::size_t>(normalize_axis(axis, rank()))]; }

double DiffTensor::item() const {
  if (size() != 1) throw IncompatibleShapes("item() on tensor of shape " + to_string(shape_));
  return (*values_)[0];
}

double DiffTensor::at(std::initializer_list<Index> index) const {
  if (index.size() != shape_.size()) throw InvalidAxis("index rank does not match tensor rank");
  Index offset = 0;
  std::size_t d = 0;
  for (Index i : index) {
    if (i < 0 || i >= shape_[d]) throw InvalidAxis("index out of range");
    offset = offset * shape_[d] + i;
    ++d;
  }
  return (*values_)[offset];
}

DiffTensor DiffTensor::detach() const {
  DiffTensor copy;
  copy.shape_ = shape_;
  copy.values_ = values_;
  return copy;
}

// --- Graph --------------------------------------------------------------------------

DiffTensor Graph::variable(Shape shape, Values values) { return variable(DiffTensor(std::move(shape), std::move(values))); }

DiffTensor Graph::variable(const DiffTensor& value) {
  DiffTensor leaf = value.detach();
  if (mode_ == GradMode::none) return leaf;
  leaf.graph_ = this;
  leaf.node_ = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{Op::leaf, {}, {}});
  return leaf;
}

DiffTensor Graph::make(Op op, Shape shape, Values values, const std::vector<const DiffTensor*>& inputs,
                       const BackwardFactory& backward) {
  return make(op, std::move(shape), std::make_shared<const Values>(std::move(values)), inputs, backward);
}

DiffTensor Graph::make(Op op, Shape shape, std::shared_ptr<const Values> values,
                       const std::vector<const DiffTensor*>& inputs, const BackwardFactory& backward) {
  Graph* graph = nullptr;
  for (const DiffTensor* input : inputs) {
    if (input->graph_ == nullptr) continue;
    if (graph != nullptr && graph != input->graph_) {
      throw GraphMismatch(std::string("operands of ") + op_name(op) + " belong to different graphs");
    }
    graph = input->graph_;
  }
  DiffTensor result;
  result.shape_ = std::move(shape);
  result.values_ = std::move(values);
  if (graph == nullptr || !graph->recording()) return result;

  Node node{op, {}, {}};
  node.inputs.reserve(inputs.size());
  for (const DiffTensor* input : inputs) node.inputs.push_back(input->graph_ != nullptr ? input->node_ : -1);
  result.graph_ = graph;
  result.node_ = static_cast<int>(graph->nodes_.size());
  graph->nodes_.push_back(std::move(node));
  graph->nodes_.back().backward = backward(result);
  return result;
}

std::vector<DiffTensor> grad(const DiffTensor& output, const std::vector<DiffTensor>& wrt, bool higher_order,
                             const DiffTensor& seed) {
  if (!output.defined()) throw AutodiffError("grad: output is undefined");
  Graph* graph = output.graph_;
  if (graph == nullptr) throw NotInGraph("grad: output does not belong to a graph");
  for (const DiffTensor& w : wrt) {
    if (w.graph_ == nullptr) throw NotInGraph("grad: a wrt tensor does not belong to a graph");
    if (w.graph_ != graph) throw GraphMismatch("grad: wrt tensor belongs to another graph");
  }

  DiffTensor seed_value;
  if (seed.defined()) {
    if (seed.shape() != output.shape()) {
      throw IncompatibleShapes("grad: seed shape " + to_string(seed.shape()) + " differs from output " +
                               to_string(output.shape()));
    }
    seed_value = seed.detach();
  } else {
    if (output.size() != 1) throw AutodiffError("grad: output is not scalar and no seed was given");
    seed_value = DiffTensor::ones(output.shape());
  }

  const int top = output.node_;
  const auto count = static_cast<std::size_t>(top + 1);
  std::vector<char> is_wrt(count, 0);
  for (const DiffTensor& w : wrt) {
    if (w.node_ <= top) is_wrt[static_cast<std::size_t>(w.node_)] = 1;
  }
  std::vector<char> depends(count, 0);
  for (std::size_t i = 0; i < count; ++i) {
    if (is_wrt[i]) {
      depends[i] = 1;
      continue;
    }
    for (int input : graph->nodes_[i].inputs) {
      if (input >= 0 && depends[static_cast<std::size_t>(input)]) {
        depends[i] = 1;
        break;
      }
    }
  }

  const bool record = higher_order || graph->mode_ == GradMode::record_higher_order;
  std::optional<Graph::PauseRecording> pause;
  if (!record) pause.emplace(*graph);

  std::vector<DiffTensor> grads(count);
  grads[count - 1] = seed_value;
  for (int i = top; i >= 0; --i) {
    const auto at = static_cast<std::size_t>(i);
    if (!grads[at].defined()) continue;
    if (!depends[at]) {
      grads[at] = DiffTensor();
      continue;
    }
    // Deque references stay valid while the backward pass appends nodes.
    const Graph::Node& node = graph->nodes_[at];
    if (!node.inputs.empty()) {
      std::vector<bool> needed(node.inputs.size(), false);
      bool any = false;
      for (std::size_t j = 0; j < node.inputs.size(); ++j) {
        const int input = node.inputs[j];
        needed[j] = input >= 0 && depends[static_cast<std::size_t>(input)];
        any = any || needed[j];
      }
      if (any) {
        if (!node.backward) {
          throw HigherOrderUnsupportedOp(std::string("no backward rule for ") + op_name(node.op));
        }
        std::vector<DiffTensor> grad_in(node.inputs.size());
        node.backward(grads[at], needed, grad_in);
        for (std::size_t j = 0; j < node.inputs.size(); ++j) {
          if (!needed[j] || !grad_in[j].defined()) continue;
          DiffTensor& slot = grads[static_cast<std::size_t>(node.inputs[j])];
          slot = slot.defined() ? add(slot, grad_in[j]) : grad_in[j];
        }
      }
    }
    if (!is_wrt[at]) grads[at] = DiffTensor();
  }

  std::vector<DiffTensor> result;
  result.reserve(wrt.size());
  for (const DiffTensor& w : wrt) {
    const DiffTensor& g = w.node_ <= top ? grads[static_cast<std::size_t>(w.node_)] : DiffTensor();
    result.push_back(g.defined() ? g : DiffTensor::zeros(w.shape()));
  }
  return result;
}

// --- elementwise ----------------------------------------------------------------

DiffTensor unary(UnaryOp op, const DiffTensor& x) {
  const Values& v = x.values();
  Values out;
  Op tag = Op::sin;
  switch (op) {
    case UnaryOp::sin: out = v.sin(); tag = Op::sin; break;
    case UnaryOp::cos: out = v.cos(); tag = Op::cos; break;
    case UnaryOp::tanh: out = v.tanh(); tag = Op::tanh; break;
    case UnaryOp::exp: out = v.exp(); tag = Op::exp; break;
    case UnaryOp::square: out = v.square(); tag = Op::square; break;
    case UnaryOp::negate: out = -v; tag = Op::negate; break;
    case UnaryOp::relu: out = v.max(0.0); tag = Op::relu; break;
    case UnaryOp::sigmoid: out = 1.0 / (1.0 + (-v).exp()); tag = Op::sigmoid; break;
  }
  count_nonfinite(out);
  return Graph::make(tag, x.shape(), std::move(out), {&x}, [x, op](const DiffTensor& y) -> BackwardFn {
    return [x, y, op](const DiffTensor& g, const std::vector<bool>&, std::vector<DiffTensor>& gin) {
      switch (op) {
        case UnaryOp::sin: gin[0] = g * cos(x); break;
        case UnaryOp::cos: gin[0] = neg(g * sin(x)); break;
        case UnaryOp::tanh: gin[0] = g * affine(square(y), -1.0, 1.0); break;
        case UnaryOp::exp: gin[0] = g * y; break;
        case UnaryOp::square: gin[0] = g * affine(x, 2.0, 0.0); break;
        case UnaryOp::negate: gin[0] = neg(g); break;
        case UnaryOp::relu: {
          // The mask is piecewise constant, so its own derivative is zero.
          DiffTensor mask(x.shape(), (x.values() > 0.0).cast<double>());
          gin[0] = g * mask;
          break;
        }
        case UnaryOp::sigmoid: gin[0] = g * (y * affine(y, -1.0, 1.0)); break;
      }
    };
  });
}

DiffTensor sin(const DiffTensor& x) { return unary(UnaryOp::sin, x); }
DiffTensor cos(const DiffTensor& x) { return unary(UnaryOp::cos, x); }
DiffTensor tanh(const DiffTensor& x) { return unary(UnaryOp::tanh, x); }
DiffTensor exp(const DiffTensor& x) { return unary(UnaryOp::exp, x); }
DiffTensor square(const DiffTensor& x) { return unary(UnaryOp::square, x); }
DiffTensor neg(const DiffTensor& x) { return unary(UnaryOp::negate, x); }
DiffTensor relu(const DiffTensor& x) { return unary(UnaryOp::relu, x); }
DiffTensor sigmoid(const DiffTensor& x) { return unary(UnaryOp::sigmoid, x); }

DiffTensor affine(const DiffTensor& x, double scale, double shift) {
  Values out = x.values() * scale + shift;
  return Graph::make(Op::affine, x.shape(), std::move(out), {&x}, [scale](const DiffTensor&) -> BackwardFn {
    return [scale](const DiffTensor& g, const std::vector<bool>&, std::vector<DiffTensor>& gin) {
      gin[0] = affine(g, scale, 0.0);
    };
  });
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  const Shape pa = right_aligned(a, rank);
  const Shape pb = right_aligned(b, rank);
  Shape out(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    if (pa[d] == pb[d] || pb[d] == 1) {
      out[d] = pa[d];
    } else if (pa[d] == 1) {
      out[d] = pb[d];
    } else {
      throw IncompatibleShapes("shapes " + to_string(a) + " and " + to_string(b) + " are not broadcastable");
    }
  }
  return out;
}

DiffTensor binary(BinaryOp op, const DiffTensor& a_in, const DiffTensor& b_in) {
  if (a_in.shape() != b_in.shape()) {
    const Shape shape = broadcast_shape(a_in.shape(), b_in.shape());
    const DiffTensor a = a_in.shape() == shape ? a_in : broadcast_to(a_in, shape);
    const DiffTensor b = b_in.shape() == shape ? b_in : broadcast_to(b_in, shape);
    return binary(op, a, b);
  }
  const DiffTensor& a = a_in;
  const DiffTensor& b = b_in;
  const Values& av = a.values();
  const Values& bv = b.values();
  Values out;
  Op tag = Op::add;
  switch (op) {
    case BinaryOp::add: out = av + bv; tag = Op::add; break;
    case BinaryOp::sub: out = av - bv; tag = Op::sub; break;
    case BinaryOp::mul: out = av * bv; tag = Op::mul; break;
    case BinaryOp::div:
      if ((bv == 0.0).any()) ++diagnostics().division_by_zero;
      out = av / bv;
      tag = Op::div;
      count_nonfinite(out);
      break;
  }
  return Graph::make(tag, a.shape(), std::move(out), {&a, &b}, [a, b, op](const DiffTensor&) -> BackwardFn {
    return [a, b, op](const DiffTensor& g, const std::vector<bool>& needed, std::vector<DiffTensor>& gin) {
      switch (op) {
        case BinaryOp::add:
          if (needed[0]) gin[0] = g;
          if (needed[1]) gin[1] = g;
          break;
        case BinaryOp::sub:
          if (needed[0]) gin[0] = g;
          if (needed[1]) gin[1] = neg(g);
          break;
        case BinaryOp::mul:
          if (needed[0]) gin[0] = g * b;
          if (needed[1]) gin[1] = g * a;
          break;
        case BinaryOp::div:
          if (needed[0]) gin[0] = g / b;
          if (needed[1]) gin[1] = neg((g * a) / square(b));
          break;
      }
    };
  });
}

DiffTensor add(const DiffTensor& a, const DiffTensor& b) { return binary(BinaryOp::add, a, b); }
DiffTensor sub(const DiffTensor& a, const DiffTensor& b) { return binary(BinaryOp::sub, a, b); }
DiffTensor mul(const DiffTensor& a, const DiffTensor& b) { return binary(BinaryOp::mul, a, b); }
DiffTensor div(const DiffTensor& a, const DiffTensor& b) { return binary(BinaryOp::div, a, b); }

DiffTensor wavelet(const DiffTensor& x, const DiffTensor& omega1, const DiffTensor& omega2) {
  if (omega1.size() != 1 || omega2.size() != 1) {
    throw IncompatibleShapes("wavelet coefficients must hold one value each");
  }
  const double w1 = omega1.values()[0];
  const double w2 = omega2.values()[0];
  Values out = w1 * x.values().sin() + w2 * x.values().cos();
  return Graph::make(Op::wavelet, x.shape(), std::move(out), {&x, &omega1, &omega2},
                     [x, omega1, omega2](const DiffTensor&) -> BackwardFn {
                       return [x, omega1, omega2](const DiffTensor& g, const std::vector<bool>& needed,
                                                  std::vector<DiffTensor>& gin) {
                         // d/dx (w1 sin x + w2 cos x) = (-w2) sin x + w1 cos x
                         if (needed[0]) gin[0] = g * wavelet(x, neg(omega2), omega1);
                         if (needed[1]) gin[1] = sum_to(g * sin(x), omega1.shape());
                         if (needed[2]) gin[2] = sum_to(g * cos(x), omega2.shape());
                       };
                     });
}

// --- linear algebra -------------------------------------------------------------

DiffTensor matmul(const DiffTensor& a, const DiffTensor& b, bool ta, bool tb) {
  const MatmulLayout layout = matmul_layout(a.shape(), b.shape(), ta, tb);
  Values out = matmul_values(a.values(), b.values(), layout, ta, tb);
  return Graph::make(Op::matmul, layout.out_shape, std::move(out), {&a, &b},
                     [a, b, ta, tb, layout](const DiffTensor&) -> BackwardFn {
    return [a, b, ta, tb, layout](const DiffTensor& g, const std::vector<bool>& needed, std::vector<DiffTensor>& gin) {
      if (needed[0]) {
        DiffTensor ga;
        if (!ta) {
          ga = matmul(g, b, false, !tb);
        } else {
          ga = matmul(b, g, tb, true);
        }
        gin[0] = layout.a_shared ? sum_to(ga, a.shape()) : ga;
      }
      if (needed[1]) {
        if (layout.b_shared && !ta) {
          // Fold the batch into rows so the reduction happens inside one product.
          const Index rows = layout.batch * layout.m;
          const DiffTensor a2 = reshape(a, {rows, layout.n});
          const DiffTensor g2 = reshape(g, {rows, layout.p});
          gin[1] = tb ? matmul(g2, a2, true, false) : matmul(a2, g2, true, false);
        } else {
          DiffTensor gb;
          if (!tb) {
            gb = matmul(a, g, !ta, false);
          } else {
            gb = matmul(g, a, true, ta);
          }
          gin[1] = layout.b_shared ? sum_to(gb, b.shape()) : gb;
        }
      }
    };
  });
}

DiffTensor linear(const DiffTensor& x, const DiffTensor& weight, const DiffTensor& bias) {
  if (weight.rank() != 2) throw IncompatibleShapes("linear weight must be a matrix, got " + to_string(weight.shape()));
  if (x.rank() < 1 || x.dim(-1) != weight.dim(1)) {
    throw IncompatibleShapes("linear: input " + to_string(x.shape()) + " does not match weight " +
                             to_string(weight.shape()));
  }
  const Index out_features = weight.dim(0);
  const Index in_features = weight.dim(1);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_features)) {
    throw IncompatibleShapes("linear: bias " + to_string(bias.shape()) + " does not match weight " +
                             to_string(weight.shape()));
  }
  const Index rows = rows_of(x.shape());
  Values out(rows * out_features);
  {
    ConstMatrixMap xm(x.values().data(), rows, in_features);
    ConstMatrixMap wm(weight.values().data(), out_features, in_features);
    MatrixMap ym(out.data(), rows, out_features);
    ym.noalias() = xm * wm.transpose();
    if (bias.defined()) {
      ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.values().data(), out_features);
    }
  }
  Shape shape = drop_last(x.shape());
  shape.push_back(out_features);
  std::vector<const DiffTensor*> inputs{&x, &weight};
  if (bias.defined()) inputs.push_back(&bias);
  return Graph::make(Op::linear, std::move(shape), std::move(out), inputs,
                     [x, weight, bias, rows, in_features, out_features](const DiffTensor&) -> BackwardFn {
    return [x, weight, bias, rows, in_features, out_features](const DiffTensor& g, const std::vector<bool>& needed,
                                                              std::vector<DiffTensor>& gin) {
      const DiffTensor g2 = reshape(g, {rows, out_features});
      if (needed[0]) gin[0] = reshape(matmul(g2, weight), x.shape());
      if (needed[1]) gin[1] = matmul(g2, reshape(x, {rows, in_features}), true, false);
      if (gin.size() > 2 && needed[2]) gin[2] = sum_to(g2, bias.shape());
    };
  });
}

DiffTensor transpose(const DiffTensor& x) {
  if (x.rank() < 2) throw IncompatibleShapes("transpose needs rank >= 2, got " + to_string(x.shape()));
  const Index r = x.dim(-2);
  const Index c = x.dim(-1);
  const Index batch = x.size() / std::max<Index>(r * c, 1);
  Values out(x.size());
  for (Index i = 0; i < batch; ++i) {
    ConstMatrixMap src(x.values().data() + i * r * c, r, c);
    MatrixMap dst(out.data() + i * r * c, c, r);
    dst = src.transpose();
  }
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  return Graph::make(Op::transpose, std::move(shape), std::move(out), {&x}, [](const DiffTensor&) -> BackwardFn {
    return [](const DiffTensor& g, const std::vector<bool>&, std::vector<DiffTensor>& gin) { gin[0] = transpose(g); };
  });
}

// --- shape ----------------------------------------------------------------------

DiffTensor reshape(const DiffTensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw IncompatibleShapes("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  }
  if (shape == x.shape()) return x;
  const Shape original = x.shape();
  return Graph::make(Op::reshape, std::move(shape), x.shared_values(), {&x}, [original](const DiffTensor&) -> BackwardFn {
    return [original](const DiffTensor& g, const std::vector<bool>&, std::vector<DiffTensor>& gin) {
      gin[0] = reshape(g, original);
    };
  });
}

DiffTensor broadcast_to(const DiffTensor& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  Values out = broadcast_values(x.values(), x.shape(), shape);
  const Shape original = x.shape();
  return Graph::make(Op::broadcast_to, shape, std::move(out), {&x}, [original](const DiffTensor&) -> BackwardFn {
    return [original](const DiffTensor& g, const std::vector<bool>&, std::vector<DiffTensor>& gin) {
      gin[0] = sum_to(g, original);
    };
  });
}

DiffTensor sum_to(const DiffTensor& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  Values out = reduce_values(x.values(), x.shape(), shape);
  const Shape original = x.shape();
  return Graph::make(Op::sum_to, shape, std::move(out), {&x}, [original](const DiffTensor&) -> BackwardFn {
    return [original](const DiffTensor& g, const std::vector<bool>&, std::vector<DiffTensor>& gin) {
      gin[0] = broadcast_to(g, original);
    };
  });
}

namespace {

struct AxisSplit {
  Index outer = 1;
  Index extent = 1;
  Index inner = 1;
};

AxisSplit split_at(const Shape& shape, int axis) {
  AxisSplit split;
  for (int d = 0; d < axis; ++d) split.outer *= shape[static_cast<std::size_t>(d)];
  split.extent = shape[static_cast<std::size_t>(axis)];
  for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < shape.size(); ++d) split.inner *= shape[d];
  return split;
}

}  // namespace

DiffTensor slice(const DiffTensor& x, int axis_in, Index start, Index length) {
  const int axis = normalize_axis(axis_in, x.rank());
  const AxisSplit split = split_at(x.shape(), axis);
  if (start < 0 || length < 0 || start + length > split.extent) {
    throw InvalidAxis("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                      ") out of range for extent " + std::to_string(split.extent));
  }
  if (start == 0 && length == split.extent) return x;
  Values out(split.outer * length * split.inner);
  const Index block = length * split.inner;
  for (Index o = 0; o < split.outer; ++o) {
    out.segment(o * block, block) = x.values().segment((o * split.extent + start) * split.inner, block);
  }
  Shape shape = x.shape();
  shape[static_cast<std::size_t>(axis)] = length;
  const Index extent = split.extent;
  return Graph::make(Op::slice, std::move(shape), std::move(out), {&x},
                     [axis, start, extent](const DiffTensor&) -> BackwardFn {
    return [axis, start, extent](const DiffTensor& g, const std::vector<bool>&, std::vector<DiffTensor>& gin) {
      gin[0] = pad(g, axis, start, extent);
    };
  });
}

DiffTensor pad(const DiffTensor& x, int axis_in, Index start, Index length) {
  const int axis = normalize_axis(axis_in, x.rank());
  const AxisSplit split = split_at(x.shape(), axis);
  if (start < 0 || start + split.extent > length) {
    throw InvalidAxis("pad target extent " + std::to_string(length) + " too small");
  }
  if (start == 0 && split.extent == length) return x;
  Values out = Values::Zero(split.outer * length * split.inner);
  const Index block = split.extent * split.inner;
  for (Index o = 0; o < split.outer; ++o) {
    out.segment((o * length + start) * split.inner, block) = x.values().segment(o * block, block);
  }
  Shape shape = x.shape();
  shape[static_cast<std::size_t>(axis)] = length;
  const Index extent = split.extent;
  return Graph::make(Op::pad, std::move(shape), std::move(out), {&x}, [axis, start, extent](const DiffTensor&) -> BackwardFn {
    return [axis, start, extent](const DiffTensor& g, const std::vector<bool>&, std::vector<DiffTensor>& gin) {
      gin[0] = slice(g, axis, start, extent);
    };
  });
}

DiffTensor concat(const std::vector<DiffTensor>& xs, int axis_in) {
  if (xs.empty()) throw IncompatibleShapes("concat of zero tensors");
  if (xs.size() == 1) return xs.front();
  const int axis = normalize_axis(axis_in, xs.front().rank());
  Shape shape = xs.front().shape();
  Index total_extent = 0;
  std::vector<Index> starts;
  for (const DiffTensor& x : xs) {
    Shape probe = x.shape();
    if (probe.size() != shape.size()) throw IncompatibleShapes("concat: rank mismatch");
    probe[static_cast<std::size_t>(axis)] = shape[static_cast<std::size_t>(axis)];
    if (probe != shape) throw IncompatibleShapes("concat: shape mismatch " + to_string(x.shape()));
    starts.push_back(total_extent);
    total_extent += x.dim(axis);
  }
  shape[static_cast<std::size_t>(axis)] = total_extent;
  const AxisSplit whole = split_at(shape, axis);
  Values out(shape_size(shape));
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const Index block = xs[k].dim(axis) * whole.inner;
    for (Index o = 0; o < whole.outer; ++o) {
      out.segment((o * total_extent + starts[k]) * whole.inner, block) = xs[k].values().segment(o * block, block);
    }
  }
  std::vector<const DiffTensor*> inputs;
  std::vector<Index> extents;
  for (const DiffTensor& x : xs) {
    inputs.push_back(&x);
    extents.push_back(x.dim(axis));
  }
  return Graph::make(Op::concat, std::move(shape), std::move(out), inputs,
                     [axis, starts, extents](const DiffTensor&) -> BackwardFn {
    return [axis, starts, extents](const DiffTensor& g, const std::vector<bool>& needed, std::vector<DiffTensor>& gin) {
      for (std::size_t k = 0; k < needed.size(); ++k) {
        if (needed[k]) gin[k] = slice(g, axis, starts[k], extents[k]);
      }
    };
  });
}

// --- reductions -----------------------------------------------------------------

DiffTensor sum(const DiffTensor& x) { return sum_to(x, Shape{}); }

DiffTensor sum(const DiffTensor& x, const std::vector<int>& axes, bool keepdim) {
  Shape kept = x.shape();
  std::vector<bool> reduced(kept.size(), false);
  for (int axis : axes) reduced[static_cast<std::size_t>(normalize_axis(axis, x.rank()))] = true;
  Shape squeezed;
  for (std::size_t d = 0; d < kept.size(); ++d) {
    if (reduced[d]) {
      kept[d] = 1;
    } else {
      squeezed.push_back(kept[d]);
    }
  }
  DiffTensor result = sum_to(x, kept);
  return keepdim ? result : reshape(result, squeezed);
}

DiffTensor mean(const DiffTensor& x) { return affine(sum(x), 1.0 / static_cast<double>(x.size()), 0.0); }

DiffTensor mean(const DiffTensor& x, const std::vector<int>& axes, bool keepdim) {
  DiffTensor total = sum(x, axes, keepdim);
  const double count = static_cast<double>(x.size()) / static_cast<double>(std::max<Index>(total.size(), 1));
  return affine(total, 1.0 / count, 0.0);
}

DiffTensor reduce(ReduceOp op, const DiffTensor& x, const std::vector<int>& axes, bool keepdim) {
  return op == ReduceOp::sum ? sum(x, axes, keepdim) : mean(x, axes, keepdim);
}

DiffTensor softmax(const DiffTensor& x) {
  if (x.rank() < 1) throw InvalidAxis("softmax of a scalar");
  const Index cols = x.dim(-1);
  const Index rows = x.size() / std::max<Index>(cols, 1);
  Values out(x.size());
  ConstMatrixMap xm(x.values().data(), rows, cols);
  MatrixMap ym(out.data(), rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const double peak = xm.row(r).maxCoeff();
    ym.row(r) = (xm.row(r).array() - peak).exp().matrix();
    ym.row(r) /= ym.row(r).sum();
  }
  return Graph::make(Op::softmax, x.shape(), std::move(out), {&x}, [](const DiffTensor& y) -> BackwardFn {
    return [y](const DiffTensor& g, const std::vector<bool>&, std::vector<DiffTensor>& gin) {
      gin[0] = y * (g - sum(g * y, {-1}, true));
    };
  });
}

DiffTensor dot(const DiffTensor& a, const DiffTensor& b) { return sum(a * b); }

}  // namespace pinnsformer
