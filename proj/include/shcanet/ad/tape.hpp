#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <optional>
#include <vector>

#include "shcanet/tensor.hpp"

namespace shcanet::ad {

using NodeId = std::uint32_t;

template <typename T>
class Tape;

// Handle to a value recorded on a tape. Cheap to copy; valid as long as the tape lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, NodeId id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  NodeId id() const { return id_; }
  Tape<T>& tape() const { return *tape_; }
  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }

 private:
  Tape<T>* tape_ = nullptr;
  NodeId id_ = 0;
};

// Linear record of a forward computation. Nodes are appended in evaluation
// order, which is already a topological order; backward walks it once in
// reverse. A tape built with record_grad = false keeps values only.
template <typename T>
class Tape {
 public:
  // Propagates grad(self) into the gradient buffers of the node's inputs.
  using BackwardFn = std::function<void(Tape&, NodeId self)>;

  explicit Tape(bool record_grad = true) : record_grad_(record_grad) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad = true) {
    return append(std::move(value), {}, requires_grad && record_grad_, nullptr);
  }
  Var<T> constant(Tensor<T> value) { return append(std::move(value), {}, false, nullptr); }

  // Records an op result. The node needs a gradient iff any input does.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    return record(std::move(value), std::vector<Var<T>>(inputs), std::move(fn));
  }
  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn fn) {
    bool needs = false;
    std::vector<NodeId> ids;
    ids.reserve(inputs.size());
    for (const auto& v : inputs) {
      require(v.valid() && &v.tape() == this, "op input belongs to a different tape");
      needs = needs || nodes_[v.id()].requires_grad;
      ids.push_back(v.id());
    }
    needs = needs && record_grad_;
    return append(std::move(value), std::move(ids), needs, needs ? std::move(fn) : nullptr);
  }

  const Tensor<T>& value(NodeId id) const { return nodes_[id].value; }
  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
  bool recording() const { return record_grad_; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient of the last backward() target w.r.t. this node; zeros if the node
  // was never reached.
  Tensor<T> grad(NodeId id) const {
    const Node& n = nodes_[id];
    if (n.grad.empty()) return Tensor<T>(n.value.shape());
    return n.grad;
  }
  Tensor<T> grad(Var<T> v) const { return grad(v.id()); }

  // Accumulation buffer for a node, zero-initialized on first use. Backward
  // functions add into it; they never overwrite.
  Tensor<T>& grad_buffer(NodeId id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }
  const Tensor<T>* grad_if_any(NodeId id) const {
    const Node& n = nodes_[id];
    return n.grad.empty() ? nullptr : &n.grad;
  }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_[id].inputs; }

  void backward(Var<T> loss) {
    require(record_grad_, "backward on a tape recorded without gradients");
    require(!backward_done_, "backward already ran on this tape");
    require(loss.valid() && &loss.tape() == this, "loss belongs to a different tape");
    require(loss.value().size() == 1, "backward requires a scalar loss, got shape " + loss.shape().str());
    backward_done_ = true;
    grad_buffer(loss.id())[0] = T{1};
    for (NodeId id = loss.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, id);
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<NodeId> inputs;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<T> append(Tensor<T> value, std::vector<NodeId> inputs, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), {}, std::move(inputs), requires_grad, std::move(fn)});
    return Var<T>(this, static_cast<NodeId>(nodes_.size() - 1));
  }

  std::deque<Node> nodes_;  // stable references across appends
  bool record_grad_;
  bool backward_done_ = false;
};

}  // namespace shcanet::ad
