#include "lpal/autograd.hpp"

#include <sstream>
#include <stdexcept>

namespace lpal {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

template <typename T>
typename Graph<T>::VarT Graph<T>::push(Node node) {
    if (backward_done_) throw std::logic_error("graph already differentiated; build a new one");
    nodes_.push_back(std::move(node));
    return VarT{this, nodes_.size() - 1};
}

template <typename T>
typename Graph<T>::VarT Graph<T>::constant(TensorT value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
}

template <typename T>
typename Graph<T>::VarT Graph<T>::input(TensorT value) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = true;
    return push(std::move(n));
}

template <typename T>
typename Graph<T>::VarT Graph<T>::parameter(BasicParameter<T>& param, bool trainable) {
    Node n;
    n.value = param.value;
    n.requires_grad = trainable;
    n.param = trainable ? &param : nullptr;
    return push(std::move(n));
}

template <typename T>
typename Graph<T>::VarT Graph<T>::record(TensorT value, std::vector<std::size_t> inputs,
                                          BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    for (std::size_t id : inputs) {
        if (id >= nodes_.size()) throw std::out_of_range("op input refers to an unknown node");
        n.requires_grad = n.requires_grad || nodes_[id].requires_grad;
    }
    n.inputs = std::move(inputs);
    if (n.requires_grad) n.backward = std::move(backward);
    return push(std::move(n));
}

template <typename T>
typename Graph<T>::TensorT& Graph<T>::grad_buffer(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty()) n.grad = TensorT(n.value.shape());
    return n.grad;
}

template <typename T>
void Graph<T>::accumulate(std::size_t id, std::span<const T> g) {
    if (!nodes_.at(id).requires_grad) return;
    TensorT& buf = grad_buffer(id);
    if (buf.size() != g.size()) throw ShapeError("gradient length mismatch in accumulate");
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

template <typename T>
typename Graph<T>::TensorT Graph<T>::gradient(VarT v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.empty()) return TensorT(n.value.shape());
    return n.grad;
}

template <typename T>
void Graph<T>::backward(VarT loss) {
    if (loss.graph != this) throw std::invalid_argument("loss belongs to another graph");
    if (backward_done_) throw std::logic_error("backward() called twice on the same graph");
    const Node& root = nodes_.at(loss.id);
    if (root.value.size() != 1) {
        throw ShapeError("backward() requires a scalar loss, got shape " + shape_str(root.value.shape()));
    }
    backward_done_ = true;
    if (!root.requires_grad) return;
    grad_buffer(loss.id)[0] = T{1};

    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.grad.empty()) continue;
        if (n.backward) {
            ++backward_visits_;
            n.backward(*this, i);
        }
        if (n.param != nullptr) {
            BasicParameter<T>& p = *n.param;
            if (p.grad.shape() != p.value.shape()) p.zero_grad();
            for (std::size_t k = 0; k < n.grad.size(); ++k) p.grad[k] += n.grad[k];
        }
    }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace lpal
