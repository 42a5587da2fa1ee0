#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

#include "afp/tensor.hpp"

namespace afp::num {

/// Handle to a node in a Graph. Only meaningful for the graph that made it.
struct Var {
  std::uint32_t id = 0;
};

/// Reverse-mode autodiff tape. Nodes are appended in evaluation order, so the
/// node list is already a topological order; backward walks it in reverse.
///
/// Leaves bound with `param()` reference the parameter's storage and
/// accumulate their gradient straight into `Parameter::grad`.
template <class T>
class Graph {
 public:
  struct Options {
    /// Throw NumericError as soon as any op produces a non-finite value.
    bool checked = true;
    /// Test fixture: deliberately breaks the GELU backward rule.
    bool corrupt_gelu_backward = false;
  };

  using BackwardFn = std::function<void(Graph&, std::uint32_t self)>;

  Graph() = default;
  explicit Graph(Options options) : options_(options) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) noexcept = default;
  Graph& operator=(Graph&&) noexcept = default;

  const Options& options() const { return options_; }

  Var constant(Tensor<T> value);
  /// Constant that refers to external storage (must outlive the graph).
  Var constant_ref(const Tensor<T>& value);
  /// Free leaf with its own gradient buffer.
  Var leaf(Tensor<T> value);
  Var param(Parameter<T>& p);

  Var record(std::string_view op, Tensor<T> out, std::initializer_list<Var> inputs,
             BackwardFn backward);

  const Tensor<T>& value(Var v) const;
  const Shape& shape(Var v) const { return value(v).shape(); }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::string_view op(Var v) const { return nodes_.at(v.id).op; }
  std::size_t size() const { return nodes_.size(); }
  std::span<const std::uint32_t> inputs(Var v) const { return nodes_.at(v.id).inputs; }

  /// Gradient accumulated into `v` by the last backward(); zeros if none.
  Tensor<T> grad(Var v) const;

  /// Gradient flowing into `self` during backward.
  std::span<const T> out_grad(std::uint32_t self) const;
  /// Buffer to accumulate into for input `v`; empty when `v` needs no grad.
  std::span<T> grad_sink(Var v);

  /// Populates gradients of every grad-requiring node with d(root)/d(node).
  void backward(Var root);

 private:
  struct Node {
    std::string_view op;
    Tensor<T> owned;
    const Tensor<T>* ref = nullptr;
    std::vector<std::uint32_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    std::vector<T> grad;  // lazily sized; unused for parameter leaves

    const Tensor<T>& value() const { return ref ? *ref : owned; }
  };

  Var push(Node node);

  Options options_{};
  std::vector<Node> nodes_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace afp::num
