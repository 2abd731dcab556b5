#pragma once

#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "palm/core/tensor.hpp"

namespace palm::ad {

template <class S>
class Graph;

/// Handle to a node in a Graph. Cheap to copy; only valid for the lifetime
/// of the graph that created it.
template <class S>
struct Value {
    Graph<S>* graph = nullptr;
    int idx = -1;

    bool defined() const { return graph != nullptr && idx >= 0; }
    const Tensor<S>& val() const;
    const std::vector<int>& dims() const { return val().dims(); }
    int rows() const { return val().rows(); }
    int cols() const { return val().cols(); }
    S item() const {
        if (val().size() != 1) throw std::logic_error("value.item(): tensor is not scalar");
        return val()[0];
    }
};

/// Dynamic reverse-mode tape. Nodes are created eagerly (forward values are
/// computed at op-construction time) and backward closures run in reverse
/// creation order. One graph per training sample; graphs are not reused.
template <class S>
class Graph {
public:
    struct Node {
        Tensor<S> value;
        Tensor<S> grad; // lazily allocated
        std::vector<int> parents;
        std::function<void(Graph&, Node&)> backward;
        bool requires_grad = false;
    };

    Graph() { nodes_.reserve(1024); }
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Value<S> input(Tensor<S> t, bool requires_grad = false) {
        Node n;
        n.value = std::move(t);
        n.requires_grad = requires_grad;
        return push(std::move(n));
    }

    /// Leaf that shares storage with a master parameter tensor.
    Value<S> param(const Tensor<S>& master) { return input(master, true); }

    Value<S> make(Tensor<S> value, std::vector<int> parents,
                  std::function<void(Graph&, Node&)> backward) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = false;
        for (int p : parents)
            if (nodes_[static_cast<std::size_t>(p)].requires_grad) n.requires_grad = true;
        n.parents = std::move(parents);
        if (n.requires_grad) n.backward = std::move(backward);
        return push(std::move(n));
    }

    Node& node(int i) { return nodes_[static_cast<std::size_t>(i)]; }
    const Node& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }

    const Tensor<S>& value(Value<S> v) const { return node(v.idx).value; }

    /// Gradient tensor of a node after backward(); zeros if it never
    /// received any gradient.
    const Tensor<S>& grad(Value<S> v) {
        Node& n = node(v.idx);
        if (!n.grad.defined()) n.grad = Tensor<S>::zeros(n.value.dims());
        return n.grad;
    }

    Tensor<S>& grad_buffer(int idx) {
        Node& n = node(idx);
        if (!n.grad.defined()) n.grad = Tensor<S>::zeros(n.value.dims());
        return n.grad;
    }

    /// Reverse pass from a scalar root. Seeds d(root)/d(root) = 1.
    void backward(Value<S> root) {
        if (root.graph != this) throw std::logic_error("graph::backward: foreign value");
        Node& r = node(root.idx);
        if (r.value.size() != 1) throw std::logic_error("graph::backward: root must be scalar");
        grad_buffer(root.idx)[0] += S(1);
        for (int i = root.idx; i >= 0; --i) {
            Node& n = node(i);
            if (!n.requires_grad || !n.grad.defined() || !n.backward) continue;
            n.backward(*this, n);
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    Value<S> push(Node n) {
        nodes_.push_back(std::move(n));
        return Value<S>{this, static_cast<int>(nodes_.size()) - 1};
    }

    std::vector<Node> nodes_;
};

template <class S>
const Tensor<S>& Value<S>::val() const {
    return graph->value(*this);
}

} // namespace palm::ad
