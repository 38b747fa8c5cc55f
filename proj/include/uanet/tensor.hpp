#pragma once

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <random>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "uanet/common.hpp"

namespace uanet {

template <typename S>
using ArrayX = Eigen::Array<S, Eigen::Dynamic, 1>;

template <typename S>
using MatrixRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
using MapMat = Eigen::Map<MatrixRM<S>>;

template <typename S>
using MapConstMat = Eigen::Map<const MatrixRM<S>>;

namespace autodiff {

// Graph recording is on unless a NoGradGuard is active on this thread.
inline bool& recording_flag() {
  thread_local bool on = true;
  return on;
}

inline bool recording() { return recording_flag(); }

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(recording_flag()) { recording_flag() = false; }
  ~NoGradGuard() { recording_flag() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Scans every op output for NaN. Default: on in debug builds only.
inline bool& nan_check_flag() {
#ifdef NDEBUG
  thread_local bool on = false;
#else
  thread_local bool on = true;
#endif
  return on;
}

inline void set_nan_checks(bool on) { nan_check_flag() = on; }

// Forces the NaN scan on (or off) for a scope, restoring the prior state.
struct NanCheckGuard {
  bool prev;
  explicit NanCheckGuard(bool on) : prev(nan_check_flag()) { nan_check_flag() = on; }
  ~NanCheckGuard() { nan_check_flag() = prev; }
  NanCheckGuard(const NanCheckGuard&) = delete;
  NanCheckGuard& operator=(const NanCheckGuard&) = delete;
};

}  // namespace autodiff

template <typename S>
struct TensorNode {
  Shape shape;
  ArrayX<S> value;
  ArrayX<S> grad;  // empty until a backward sweep touches it
  bool requires_grad = false;
  bool backward_done = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;
  const char* op = "leaf";

  bool has_grad() const { return grad.size() != 0; }

  // Gradient accumulator, allocated and zeroed on first touch.
  ArrayX<S>& grad_buffer() {
    if (grad.size() == 0) grad = ArrayX<S>::Zero(value.size());
    return grad;
  }
};

// Shared handle to a graph node. Copies alias the same storage.
template <typename S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode<S>> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape shape) { return full(std::move(shape), S(0)); }

  static Tensor full(Shape shape, S v) {
    Tensor t = empty(std::move(shape));
    t.val().setConstant(v);
    return t;
  }

  static Tensor scalar(S v) { return full({1}, v); }

  static Tensor from(Shape shape, const std::vector<S>& data) {
    Tensor t = empty(std::move(shape));
    if (static_cast<std::int64_t>(data.size()) != t.numel())
      throw shape_error("tensor init: " + std::to_string(data.size()) +
                        " values for shape " + shape_str(t.shape()));
    for (std::int64_t i = 0; i < t.numel(); ++i) t.val()[i] = data[static_cast<std::size_t>(i)];
    return t;
  }

  // Uninitialized storage; caller fills value().
  static Tensor empty(Shape shape) {
    for (int d : shape)
      if (d <= 0) throw shape_error("tensor init: non-positive dim in " + shape_str(shape));
    auto n = std::make_shared<TensorNode<S>>();
    n->shape = std::move(shape);
    n->value.resize(uanet::numel(n->shape));
    return Tensor(std::move(n));
  }

  // Draws doubles so float and double runs consume identical RNG streams.
  template <typename Rng>
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
    Tensor t = empty(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (std::int64_t i = 0; i < t.numel(); ++i) t.val()[i] = static_cast<S>(dist(rng));
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  int rank() const { return static_cast<int>(node().shape.size()); }
  int dim(int i) const { return node().shape[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return node().value.size(); }

  ArrayX<S>& val() { return node().value; }
  const ArrayX<S>& val() const { return node().value; }

  S item() const {
    if (numel() != 1)
      throw contract_error("item: tensor is not scalar, shape " + shape_str(shape()));
    return node().value[0];
  }

  bool requires_grad() const { return node().requires_grad; }
  Tensor& set_requires_grad(bool b) {
    node().requires_grad = b;
    return *this;
  }

  bool has_grad() const { return node().has_grad(); }
  const ArrayX<S>& grad() const {
    if (!has_grad())
      throw contract_error("grad: no gradient present; run backward first");
    return node().grad;
  }

  void zero_grad() {
    auto& n = node();
    if (n.grad.size()) n.grad.setZero();
    n.backward_done = false;
  }

  // Value copy severed from the graph.
  Tensor detach() const {
    Tensor t = empty(shape());
    t.val() = val();
    return t;
  }

  TensorNode<S>& node() const {
    if (!node_) throw contract_error("undefined tensor");
    return *node_;
  }
  const std::shared_ptr<TensorNode<S>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<TensorNode<S>> node_;
};

namespace detail {

// Finalizes a freshly computed node: NaN scan, then parent/backward wiring
// when recording is on and a parent needs gradients.
template <typename S>
Tensor<S> finish_op(const char* op, Tensor<S> out, const std::vector<Tensor<S>>& parents,
                    std::function<void(TensorNode<S>&)> backward_fn) {
  auto& n = out.node();
  n.op = op;
  if (autodiff::nan_check_flag() && n.value.isNaN().any())
    throw numeric_error(std::string(op) + ": NaN in output");
  if (autodiff::recording()) {
    bool need = false;
    for (const auto& p : parents) need = need || p.requires_grad();
    if (need) {
      n.requires_grad = true;
      n.parents.reserve(parents.size());
      for (const auto& p : parents) n.parents.push_back(p.node_ptr());
      n.backward_fn = std::move(backward_fn);
    }
  }
  return out;
}

}  // namespace detail

// Gradient-relevant slice of the graph below one root, linearized so that
// every node appears after all producers of its inputs, each exactly once.
template <typename S>
class Tape {
 public:
  static Tape trace(const Tensor<S>& root) {
    Tape t;
    t.root_ = root.node_ptr();
    if (!t.root_) throw contract_error("trace: undefined root");
    if (!t.root_->requires_grad) return t;
    struct Frame {
      TensorNode<S>* n;
      std::size_t next;
    };
    std::unordered_set<const TensorNode<S>*> visited;
    std::vector<Frame> stack;
    visited.insert(t.root_.get());
    stack.push_back({t.root_.get(), 0});
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next == f.n->parents.size()) {
        t.nodes_.push_back(f.n);
        stack.pop_back();
        continue;
      }
      TensorNode<S>* p = f.n->parents[f.next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
    }
    return t;
  }

  // Seeds d(root)/d(root) = 1 and sweeps the tape once in reverse.
  // A root can be swept once; rebuild the graph for another pass.
  void backward() {
    if (!root_) throw contract_error("backward: empty tape");
    TensorNode<S>& r = *root_;
    if (uanet::numel(r.shape) != 1)
      throw contract_error("backward: root must be scalar, got " + shape_str(r.shape));
    if (!r.requires_grad)
      throw contract_error("backward: root does not require gradients");
    if (r.backward_done)
      throw contract_error("backward: tape already consumed for this root");
    r.backward_done = true;
    r.grad_buffer()[0] += S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      TensorNode<S>* n = *it;
      if (!n->backward_fn) continue;       // leaf
      if (n->grad.size() == 0) continue;   // no gradient reached this node
      n->backward_fn(*n);
    }
  }

  const std::vector<TensorNode<S>*>& nodes() const { return nodes_; }

 private:
  std::shared_ptr<TensorNode<S>> root_;
  std::vector<TensorNode<S>*> nodes_;
};

template <typename S>
void backward(const Tensor<S>& root) {
  Tape<S>::trace(root).backward();
}

}  // namespace uanet
