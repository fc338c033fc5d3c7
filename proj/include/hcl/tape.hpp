#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "hcl/tensor.hpp"

namespace hcl {

// Per-step record of forward operations, in execution order (so every node's
// inputs precede it). Backward walks the record once, in reverse, then frees
// it; there is no support for higher-order derivatives.
template <class Scalar>
class Tape {
 public:
  struct Node {
    std::vector<Tensor<Scalar>> inputs;
    Tensor<Scalar> output;
    std::function<void()> backward_rule;
  };

  Tape() = default;
  static Tape inference() {
    Tape t;
    t.recording_ = false;
    return t;
  }

  bool recording() const { return recording_; }

  // true when the op must record a backward rule for these inputs
  template <class... Ts>
  bool tracks(const Ts&... inputs) const {
    return recording_ && (... || inputs.needs_grad());
  }

  void record(std::vector<Tensor<Scalar>> inputs, Tensor<Scalar> output,
              std::function<void()> backward_rule) {
    output.mark_needs_grad();
    nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(backward_rule)});
  }

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t i) const { return nodes_.at(i); }

  // Seeds d(out)/d(out) = 1 and accumulates gradients into every recorded
  // tensor that needs them. The record is freed afterwards.
  void backward(const Tensor<Scalar>& out) {
    if (out.numel() != 1) throw ShapeError("backward: output must be scalar");
    if (out.needs_grad()) out.grad()[0] += Scalar(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
      if (it->backward_rule) it->backward_rule();
    nodes_.clear();
  }

 private:
  std::vector<Node> nodes_;
  bool recording_ = true;
};

template <class Scalar>
void backward(Tape<Scalar>& tape, const Tensor<Scalar>& out) {
  tape.backward(out);
}

}  // namespace hcl
