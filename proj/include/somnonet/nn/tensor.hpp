#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace somnonet::nn {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <class T>
struct Node;

template <class T>
using NodePtr = std::shared_ptr<Node<T>>;

/// One vertex of the computation graph. `backward` reads this node's gradient and
/// accumulates into the gradients of `inputs`.
template <class T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad; // empty until something accumulates into it
    bool requires_grad = false;
    std::vector<NodePtr<T>> inputs;
    std::function<void(Node&)> backward;
    std::string_view op = "leaf";

    bool is_leaf() const { return !backward; }

    std::span<T> grad_buffer()
    {
        if (grad.empty()) {
            grad.assign(value.size(), T{0});
        }
        return grad;
    }
};

/// Dense row-major array with reverse-mode differentiation. Copies share the node,
/// as parameters are shared between a model and the graphs built from it.
template <class T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T{0});
    Tensor(Shape shape, std::vector<T> data);
    explicit Tensor(NodePtr<T> node) : node_(std::move(node)) {}

    static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t size() const { return node_->value.size(); }

    std::span<T> data() { return node_->value; }
    std::span<const T> data() const { return node_->value; }
    T& operator[](std::size_t i) { return node_->value[i]; }
    T operator[](std::size_t i) const { return node_->value[i]; }
    T item() const;

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool flag);
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    /// New leaf holding a copy of the values, outside any graph.
    Tensor detach() const;
    /// Same as detach; named for call sites that want an independent parameter copy.
    Tensor clone() const { return detach(); }

    const NodePtr<T>& node() const { return node_; }

private:
    NodePtr<T> node_;
};

/// Gradient recording is on by default and can be suspended per thread.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Builds an op result. When recording is on and an input needs gradients, the result
/// joins the graph with `backward` as its local rule.
template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::initializer_list<Tensor<T>> inputs,
                      std::string_view op, std::function<void(Node<T>&)> backward);

template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& inputs,
                      std::string_view op, std::function<void(Node<T>&)> backward);

/// Nodes reachable from a root that take part in differentiation, in topological order
/// (inputs before consumers).
template <class T>
struct Graph {
    std::vector<NodePtr<T>> order;
};

template <class T>
Graph<T> build_graph(const Tensor<T>& root);

/// Reverse-mode sweep from a single-element tensor; each node is visited once in reverse
/// topological order. Leaf gradients accumulate; interior gradients and the graph's
/// closures are released afterwards.
template <class T>
void backward(const Graph<T>& graph, const Tensor<T>& root);

template <class T>
void backward(const Tensor<T>& root)
{
    backward(build_graph(root), root);
}

extern template class Tensor<float>;
extern template class Tensor<double>;

} // namespace somnonet::nn
