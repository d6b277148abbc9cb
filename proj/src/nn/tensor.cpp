#include "somnonet/nn/tensor.hpp"

#include "somnonet/errors.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_set>

namespace somnonet::nn {

namespace {
thread_local bool t_grad_enabled = true;
}

std::size_t numel(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape)
{
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            out += ", ";
        }
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

template <class T>
Tensor<T>::Tensor(Shape shape, T fill) : node_(std::make_shared<Node<T>>())
{
    node_->value.assign(numel(shape), fill);
    node_->shape = std::move(shape);
}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : node_(std::make_shared<Node<T>>())
{
    if (numel(shape) != data.size()) {
        throw ShapeError("tensor shape " + shape_string(shape) + " needs " +
                         std::to_string(numel(shape)) + " values, got " +
                         std::to_string(data.size()));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(data);
}

template <class T>
T Tensor<T>::item() const
{
    if (size() != 1) {
        throw UsageError("item() on a tensor of shape " + shape_string(shape()));
    }
    return node_->value[0];
}

template <class T>
Tensor<T>& Tensor<T>::set_requires_grad(bool flag)
{
    if (!node_->is_leaf()) {
        throw UsageError("requires_grad can only be set on leaf tensors");
    }
    node_->requires_grad = flag;
    return *this;
}

template <class T>
Tensor<T> Tensor<T>::detach() const
{
    return Tensor<T>(node_->shape, node_->value);
}

template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& inputs,
                      std::string_view op, std::function<void(Node<T>&)> backward)
{
    Tensor<T> out(std::move(shape), std::move(value));
    if (!grad_enabled()) {
        return out;
    }
    const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                   [](const Tensor<T>& t) { return t.requires_grad(); });
    if (!needs) {
        return out;
    }
    auto& node = *out.node();
    node.requires_grad = true;
    node.op = op;
    node.backward = std::move(backward);
    node.inputs.reserve(inputs.size());
    for (const auto& t : inputs) {
        node.inputs.push_back(t.node());
    }
    return out;
}

template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::initializer_list<Tensor<T>> inputs,
                      std::string_view op, std::function<void(Node<T>&)> backward)
{
    return make_result(std::move(shape), std::move(value), std::vector<Tensor<T>>(inputs), op,
                       std::move(backward));
}

template <class T>
Graph<T> build_graph(const Tensor<T>& root)
{
    Graph<T> graph;
    if (!root.requires_grad()) {
        return graph;
    }
    // Iterative post-order DFS.
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<NodePtr<T>, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            NodePtr<T> child = node->inputs[next++];
            if (child->requires_grad && visited.insert(child.get()).second) {
                stack.emplace_back(std::move(child), 0);
            }
        } else {
            graph.order.push_back(std::move(node));
            stack.pop_back();
        }
    }
    return graph;
}

template <class T>
void backward(const Graph<T>& graph, const Tensor<T>& root)
{
    if (root.size() != 1) {
        throw UsageError("backward needs a single-element output, got shape " +
                         shape_string(root.shape()));
    }
    if (!root.requires_grad()) {
        throw UsageError("backward on a tensor that does not require gradients");
    }
    if (graph.order.empty() || graph.order.back() != root.node()) {
        throw UsageError("graph was not built from this root");
    }
    root.node()->grad_buffer()[0] += T{1};
    for (auto it = graph.order.rbegin(); it != graph.order.rend(); ++it) {
        Node<T>& node = **it;
        if (node.is_leaf()) {
            continue;
        }
        if (!node.grad.empty()) {
            node.backward(node);
        }
        node.backward = nullptr;
        node.inputs.clear();
        node.grad.clear();
        node.grad.shrink_to_fit();
    }
}

#define SOMNONET_INSTANTIATE(T)                                                                  \
    template class Tensor<T>;                                                                    \
    template Tensor<T> make_result<T>(Shape, std::vector<T>, const std::vector<Tensor<T>>&,      \
                                      std::string_view, std::function<void(Node<T>&)>);          \
    template Tensor<T> make_result<T>(Shape, std::vector<T>, std::initializer_list<Tensor<T>>,   \
                                      std::string_view, std::function<void(Node<T>&)>);          \
    template Graph<T> build_graph<T>(const Tensor<T>&);                                          \
    template void backward<T>(const Graph<T>&, const Tensor<T>&);

SOMNONET_INSTANTIATE(float)
SOMNONET_INSTANTIATE(double)

#undef SOMNONET_INSTANTIATE

} // namespace somnonet::nn
