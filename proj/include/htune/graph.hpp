#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "htune/tensor.hpp"

namespace htune {

class Graph;

/// Handle to a node in a Graph. Cheap to copy; valid while the graph lives.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t dim(std::size_t axis) const { return value().dim(axis); }
    bool requires_grad() const;
    Graph& graph() const { return *graph_; }
    std::uint32_t id() const noexcept { return id_; }
    bool valid() const noexcept { return graph_ != nullptr; }

private:
    friend class Graph;
    Var(Graph* g, std::uint32_t id) : graph_(g), id_(id) {}
    Graph* graph_ = nullptr;
    std::uint32_t id_ = 0;
};

/// Reverse rule of one node. grad_in[i] is null when input i needs no
/// gradient; otherwise the rule must *add* its contribution to it.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

/// Leaf gradients returned by Graph::backward.
class Gradients {
public:
    /// Gradient of a parameter bound with Graph::param (keyed by address).
    const Tensor& of(const Tensor& param) const;
    const Tensor& of(Var leaf) const;
    bool contains(const Tensor& param) const { return by_source_.count(&param) != 0; }
    std::size_t size() const { return by_node_.size(); }

private:
    friend class Graph;
    std::unordered_map<std::uint32_t, Tensor> by_node_;
    std::unordered_map<const Tensor*, std::uint32_t> by_source_;
};

/// Append-only tape of operations. Nodes are recorded in creation order,
/// which is a topological order, so backward is a single reverse sweep.
/// A graph can be differentiated once; after that it is consumed.
class Graph {
public:
    explicit Graph(std::uint64_t seed = 0) : seed_(seed) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    /// Constant leaf that owns its value and never receives a gradient.
    Var input(Tensor value);
    /// Leaf that borrows `value` (which must outlive the graph). Trainable
    /// leaves receive a gradient, frozen ones are treated as constants.
    /// Binding the same tensor twice returns the first leaf.
    Var param(const Tensor& value, bool trainable = true);
    /// Leaf that owns its value and receives a gradient.
    Var variable(Tensor value);

    /// Records an operation. The backward rule is dropped when no input
    /// requires a gradient.
    Var record(std::string_view op, std::initializer_list<Var> inputs, Tensor value, BackwardFn backward);
    Var record(std::string_view op, std::span<const Var> inputs, Tensor value, BackwardFn backward);

    Gradients backward(Var root, const Tensor& seed);
    /// Seeds a one-element root with 1.
    Gradients backward(Var root);

    /// Deterministic per-graph stream for stochastic ops (dropout masks).
    std::uint64_t next_seed();

    std::size_t size() const noexcept { return nodes_.size(); }
    bool consumed() const noexcept { return consumed_; }
    const std::string& op_name(Var v) const { return nodes_[v.id()].op; }

private:
    friend class Var;

    struct Node {
        std::string op;
        Tensor owned;
        const Tensor* borrowed = nullptr;
        std::vector<std::uint32_t> inputs;
        bool requires_grad = false;
        bool leaf = false;
        BackwardFn backward;

        const Tensor& value() const { return borrowed ? *borrowed : owned; }
    };

    Var push(Node node);
    void check_owner(Var v) const;

    std::deque<Node> nodes_;  // stable references across push_back
    std::unordered_map<const Tensor*, std::uint32_t> bound_;
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
    bool consumed_ = false;
};

}  // namespace htune
