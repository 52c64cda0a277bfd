#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lpal/tensor.hpp"

namespace lpal {

template <typename T>
class Graph;

/// Handle to a value recorded in a Graph.
template <typename T>
struct BasicVar {
    Graph<T>* graph = nullptr;
    std::size_t id = 0;

    const BasicTensor<T>& value() const;
    const Shape& shape() const { return value().shape(); }
};

/// Named trainable tensor with its gradient accumulator.
template <typename T>
struct BasicParameter {
    std::string name;
    BasicTensor<T> value;
    BasicTensor<T> grad;
    int unit = -1;  // structural unit index used by freezing; -1 means always trainable

    void zero_grad() { grad = BasicTensor<T>(value.shape()); }
};

using Var = BasicVar<float>;
using Parameter = BasicParameter<float>;

/// Ordered log of executed differentiable ops (reverse-mode tape).
///
/// Nodes are appended after their inputs, so the log order is a topological
/// order and backward() simply walks it in reverse. Gradients reaching a node
/// from several consumers are summed into one buffer before the node's own
/// backward rule runs.
template <typename T>
class Graph {
public:
    using TensorT = BasicTensor<T>;
    using VarT = BasicVar<T>;
    using BackwardFn = std::function<void(Graph&, std::size_t self)>;

    /// Leaf that never receives gradient.
    VarT constant(TensorT value);
    /// Leaf whose gradient can be read back with gradient().
    VarT input(TensorT value);
    /// Leaf bound to a parameter; backward() adds into param.grad.
    /// A parameter bound with trainable=false behaves like a constant.
    VarT parameter(BasicParameter<T>& param, bool trainable = true);

    /// Append an op. The backward rule is kept only when some input needs grad.
    VarT record(TensorT value, std::vector<std::size_t> inputs, BackwardFn backward);

    const TensorT& value(std::size_t id) const { return nodes_.at(id).value; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

    /// Upstream gradient of a node; empty tensor when nothing reached it.
    const TensorT& grad(std::size_t id) const { return nodes_.at(id).grad; }
    /// Zero-initialized on first access.
    TensorT& grad_buffer(std::size_t id);
    void accumulate(std::size_t id, std::span<const T> g);

    /// Gradient of the last backward() with respect to a leaf; zeros if unreached.
    TensorT gradient(VarT v) const;

    void backward(VarT loss);

    std::size_t size() const noexcept { return nodes_.size(); }
    std::size_t backward_visits() const noexcept { return backward_visits_; }

private:
    struct Node {
        TensorT value;
        TensorT grad;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool requires_grad = false;
        BasicParameter<T>* param = nullptr;
    };

    VarT push(Node node);

    std::vector<Node> nodes_;
    bool backward_done_ = false;
    std::size_t backward_visits_ = 0;
};

template <typename T>
const BasicTensor<T>& BasicVar<T>::value() const {
    return graph->value(id);
}

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace lpal
