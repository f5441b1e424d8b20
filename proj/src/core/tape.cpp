#include "rppgid/tape.hpp"

#include "rppgid/error.hpp"

namespace rppgid {

GradBuffer::GradBuffer(const Tape& tape) : tape_(&tape), grads_(tape.size()) {}

Tensor& GradBuffer::at(Var v) {
  auto& slot = grads_[v.id];
  if (!slot) slot.emplace(tape_->shape(v));
  return *slot;
}

const Tensor* GradBuffer::find(Var v) const {
  const auto& slot = grads_[v.id];
  return slot ? &*slot : nullptr;
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("non-finite constant");
  nodes_.push_back(Node{std::move(value), {}, nullptr, false});
  return Var{nodes_.size() - 1};
}

Var Tape::param(const ParamStore& store, const std::string& name) {
  if (auto it = params_.find(name); it != params_.end()) return it->second;
  nodes_.push_back(Node{store.get(name), {}, nullptr, true});
  Var v{nodes_.size() - 1};
  params_.emplace(name, v);
  return v;
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  if (!value.all_finite()) throw NumericError("non-finite value produced on tape");
  bool needs = false;
  for (Var in : inputs) needs = needs || nodes_[in.id].requires_grad;
  nodes_.push_back(Node{std::move(value), std::move(inputs), needs ? std::move(backward) : nullptr, needs});
  return Var{nodes_.size() - 1};
}

GradBuffer Tape::backward(Var loss) const {
  if (value(loss).size() != 1) {
    throw ContractError("backward() needs a scalar loss, got " + shape_str(shape(loss)));
  }
  GradBuffer grads(*this);
  grads.at(loss)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!node.backward) continue;
    const Tensor* g = grads.find(Var{i});
    if (!g) continue;
    // Slots are preallocated, so `*g` stays valid while inputs accumulate.
    node.backward(*this, node.value, *g, grads);
  }
  return grads;
}

std::map<std::string, Tensor> Tape::param_grads(const GradBuffer& grads, const ParamStore& store) const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, value] : store) {
    auto it = params_.find(name);
    const Tensor* g = it == params_.end() ? nullptr : grads.find(it->second);
    out.emplace(name, g ? *g : Tensor(value.shape()));
  }
  return out;
}

std::map<std::string, Tensor> grad(const Tape& tape, Var loss, const ParamStore& params) {
  return tape.param_grads(tape.backward(loss), params);
}

}  // namespace rppgid
