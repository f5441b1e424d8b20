#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rppgid/params.hpp"
#include "rppgid/tensor.hpp"

namespace rppgid {

// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

class Tape;

// Gradient buffers indexed by tape node; allocated on first touch.
class GradBuffer {
 public:
  explicit GradBuffer(const Tape& tape);
  Tensor& at(Var v);
  bool has(Var v) const { return grads_[v.id].has_value(); }
  const Tensor* find(Var v) const;

 private:
  const Tape* tape_;
  std::vector<std::optional<Tensor>> grads_;
};

// Reverse-mode recording of a computation. Nodes are appended in evaluation
// order, which is a topological order, so the backward sweep walks the node
// list in reverse and visits each node once.
class Tape {
 public:
  // Accumulates d(loss)/d(inputs) into `grads` given the node's output value
  // and d(loss)/d(output).
  using BackwardFn =
      std::function<void(const Tape&, const Tensor& out, const Tensor& grad_out, GradBuffer& grads)>;

  Var constant(Tensor value);
  // Registers (once) and returns the node holding a named parameter.
  Var param(const ParamStore& store, const std::string& name);

  // Appends a computed node. Throws NumericError if `value` is not finite.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  const Shape& shape(Var v) const { return nodes_[v.id].value.shape(); }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Runs the backward sweep from a scalar loss.
  GradBuffer backward(Var loss) const;

  // Gradient of every entry of `store` from a finished sweep; entries not
  // reachable from the loss (or never put on this tape) get zeros.
  std::map<std::string, Tensor> param_grads(const GradBuffer& grads, const ParamStore& store) const;

 private:
  struct Node {
    Tensor value;
    std::vector<Var> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  std::map<std::string, Var> params_;
};

// A parameter node when trainable, otherwise a constant copy of the value.
inline Var bind_param(Tape& t, const ParamStore& store, const std::string& name, bool trainable) {
  return trainable ? t.param(store, name) : t.constant(store.get(name));
}

// Exact reverse-mode gradient of `loss` for every parameter in `params`.
std::map<std::string, Tensor> grad(const Tape& tape, Var loss, const ParamStore& params);

}  // namespace rppgid
