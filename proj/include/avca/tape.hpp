#pragma once

#include <functional>
#include <vector>

#include "avca/tensor.hpp"

namespace avca {

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  Index id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Matrix<Scalar>& value() const { return tape->value(*this); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
};

/// Reverse-mode computation tape.
///
/// Values are appended in evaluation order; `backward` walks the nodes in
/// reverse and hands each node's accumulated output gradient to its rule.
/// Parameter leaves forward their gradient into the owning Tensor.
template <typename Scalar>
class Tape {
 public:
  using MatrixType = Matrix<Scalar>;
  // Receives the gradient of the loss w.r.t. this node's output.
  using BackwardFn = std::function<void(const MatrixType&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(MatrixType value) {
    Node node;
    node.owned = std::move(value);
    return push(std::move(node));
  }

  // The tensor must outlive the tape; its buffer is referenced, not copied.
  Var<Scalar> parameter(Tensor<Scalar>& tensor) {
    Node node;
    node.ref = &tensor.data();
    node.param = &tensor;
    node.needs_grad = tensor.requires_grad();
    return push(std::move(node));
  }

  // Leaf whose gradient is retained on the tape (inputs probed by tests).
  Var<Scalar> input(MatrixType value, bool requires_grad) {
    Node node;
    node.owned = std::move(value);
    node.needs_grad = requires_grad;
    return push(std::move(node));
  }

  Var<Scalar> record(MatrixType value, std::initializer_list<Var<Scalar>> inputs, BackwardFn fn) {
    Node node;
    node.owned = std::move(value);
    for (const auto& in : inputs) {
      if (in.tape != this) throw ContractError("operand recorded on a different tape");
      node.needs_grad = node.needs_grad || nodes_[static_cast<std::size_t>(in.id)].needs_grad;
    }
    if (node.needs_grad) node.backward = std::move(fn);
    return push(std::move(node));
  }

  const MatrixType& value(Var<Scalar> v) const { return at(v).value(); }
  bool needs_grad(Var<Scalar> v) const { return at(v).needs_grad; }

  // Gradient retained on a node after the last backward call.
  const MatrixType& grad(Var<Scalar> v) const {
    const Node& n = at(v);
    if (n.grad.size() == 0) {
      static thread_local MatrixType empty;
      empty = MatrixType::Zero(n.value().rows(), n.value().cols());
      return empty;
    }
    return n.grad;
  }

  // Adds `g` into the gradient slot of `v`; called by backward rules.
  void accumulate(Var<Scalar> v, const MatrixType& g) {
    Node& n = at(v);
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Populates gradients of every parameter reachable from `loss`.
  ///
  /// Node-level gradients are reset first, so calling twice accumulates into
  /// parameter tensors exactly twice. Returns the number of nodes visited.
  std::size_t backward(Var<Scalar> loss) {
    const Node& root = at(loss);
    if (root.value().size() != 1) {
      throw ContractError("backward requires a scalar loss, got " + shape_string(root.value()));
    }
    for (auto& n : nodes_) n.grad.resize(0, 0);
    std::size_t visited = 0;
    if (!root.needs_grad) return visited;
    nodes_[static_cast<std::size_t>(loss.id)].grad = MatrixType::Ones(1, 1);
    for (Index i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      ++visited;
      if (!n.needs_grad || n.grad.size() == 0) continue;
      if (n.backward) {
        // The rule may accumulate into earlier nodes only, so `n` stays valid.
        n.backward(n.grad);
      }
      if (n.param != nullptr) n.param->accumulate_grad(n.grad);
    }
    return visited;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    MatrixType owned;
    const MatrixType* ref = nullptr;
    Tensor<Scalar>* param = nullptr;
    bool needs_grad = false;
    BackwardFn backward;
    MatrixType grad;

    const MatrixType& value() const { return ref ? *ref : owned; }
  };

  Var<Scalar> push(Node node) {
    nodes_.push_back(std::move(node));
    return Var<Scalar>{this, static_cast<Index>(nodes_.size() - 1)};
  }

  Node& at(Var<Scalar> v) {
    if (v.tape != this || v.id < 0 || v.id >= static_cast<Index>(nodes_.size())) {
      throw ContractError("variable does not belong to this tape");
    }
    return nodes_[static_cast<std::size_t>(v.id)];
  }
  const Node& at(Var<Scalar> v) const { return const_cast<Tape*>(this)->at(v); }

  std::vector<Node> nodes_;
};

}  // namespace avca
