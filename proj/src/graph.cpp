#include "afp/graph.hpp"

#include <string>

namespace afp::num {

template <class T>
Var Graph<T>::push(Node node) {
  if (options_.checked && !all_finite<T>(node.value().data())) {
    throw NumericError("non-finite value produced by op '" + std::string(node.op) + "'");
  }
  nodes_.push_back(std::move(node));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <class T>
Var Graph<T>::constant(Tensor<T> value) {
  Node n;
  n.op = "constant";
  n.owned = std::move(value);
  return push(std::move(n));
}

template <class T>
Var Graph<T>::constant_ref(const Tensor<T>& value) {
  Node n;
  n.op = "constant";
  n.ref = &value;
  return push(std::move(n));
}

template <class T>
Var Graph<T>::leaf(Tensor<T> value) {
  Node n;
  n.op = "leaf";
  n.owned = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

template <class T>
Var Graph<T>::param(Parameter<T>& p) {
  if (p.grad.shape() != p.value.shape()) p.grad = Tensor<T>(p.value.shape());
  Node n;
  n.op = "param";
  n.ref = &p.value;
  n.param = &p;
  n.requires_grad = true;
  return push(std::move(n));
}

template <class T>
Var Graph<T>::record(std::string_view op, Tensor<T> out, std::initializer_list<Var> inputs,
                     BackwardFn backward) {
  Node n;
  n.op = op;
  n.owned = std::move(out);
  n.inputs.reserve(inputs.size());
  for (Var v : inputs) {
    if (v.id >= nodes_.size()) throw UsageError("op input refers to a node of another graph");
    n.inputs.push_back(v.id);
    n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

template <class T>
const Tensor<T>& Graph<T>::value(Var v) const {
  return nodes_.at(v.id).value();
}

template <class T>
Tensor<T> Graph<T>::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.param) return n.param->grad;
  if (n.grad.empty()) return Tensor<T>(n.value().shape());
  return Tensor<T>(n.value().shape(), n.grad);
}

template <class T>
std::span<const T> Graph<T>::out_grad(std::uint32_t self) const {
  const Node& n = nodes_[self];
  if (n.param) return n.param->grad.data();
  return n.grad;
}

template <class T>
std::span<T> Graph<T>::grad_sink(Var v) {
  Node& n = nodes_.at(v.id);
  if (!n.requires_grad) return {};
  if (n.param) return n.param->grad.data();
  if (n.grad.empty()) n.grad.assign(n.value().size(), T{0});
  return n.grad;
}

template <class T>
void Graph<T>::backward(Var root) {
  Node& r = nodes_.at(root.id);
  if (r.value().size() != 1) {
    throw UsageError("backward() needs a scalar root, got shape " +
                     shape_str(r.value().shape()));
  }
  if (!r.requires_grad) return;
  grad_sink(root)[0] += T{1};
  for (std::uint32_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward) continue;
    if (n.grad.empty()) continue;  // no gradient reached this node
    n.backward(*this, i);
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace afp::num
