#include "htune/graph.hpp"

#include "htune/errors.hpp"
#include "htune/rng.hpp"

namespace htune {

const Tensor& Var::value() const {
    if (!graph_) throw LifecycleError("use of an unbound Var");
    return graph_->nodes_[id_].value();
}

bool Var::requires_grad() const { return graph_->nodes_[id_].requires_grad; }

const Tensor& Gradients::of(const Tensor& param) const {
    auto it = by_source_.find(&param);
    if (it == by_source_.end()) throw InputError("tensor is not a parameter leaf of this graph");
    return by_node_.at(it->second);
}

const Tensor& Gradients::of(Var leaf) const {
    auto it = by_node_.find(leaf.id());
    if (it == by_node_.end()) throw InputError("node is not a gradient-tracking leaf");
    return it->second;
}

Var Graph::push(Node node) {
    if (consumed_) throw LifecycleError("graph already consumed by backward");
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

void Graph::check_owner(Var v) const {
    if (v.graph_ != this) throw LifecycleError("Var belongs to a different graph");
}

Var Graph::input(Tensor value) {
    Node n;
    n.op = "input";
    n.owned = std::move(value);
    n.leaf = true;
    return push(std::move(n));
}

Var Graph::param(const Tensor& value, bool trainable) {
    if (auto it = bound_.find(&value); it != bound_.end()) return Var(this, it->second);
    Node n;
    n.op = "param";
    n.borrowed = &value;
    n.leaf = true;
    n.requires_grad = trainable;
    Var v = push(std::move(n));
    bound_.emplace(&value, v.id());
    return v;
}

Var Graph::variable(Tensor value) {
    Node n;
    n.op = "variable";
    n.owned = std::move(value);
    n.leaf = true;
    n.requires_grad = true;
    return push(std::move(n));
}

Var Graph::record(std::string_view op, std::initializer_list<Var> inputs, Tensor value, BackwardFn backward) {
    return record(op, std::span<const Var>(inputs.begin(), inputs.size()), std::move(value), std::move(backward));
}

Var Graph::record(std::string_view op, std::span<const Var> inputs, Tensor value, BackwardFn backward) {
    Node n;
    n.op = std::string(op);
    n.owned = std::move(value);
    n.inputs.reserve(inputs.size());
    for (const Var& v : inputs) {
        check_owner(v);
        n.inputs.push_back(v.id());
        n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(backward);
    return push(std::move(n));
}

Gradients Graph::backward(Var root) {
    if (root.value().numel() != 1)
        throw DimensionError("implicit seed needs a one-element root, got " + shape_str(root.shape()));
    return backward(root, Tensor(root.shape(), 1.0));
}

Gradients Graph::backward(Var root, const Tensor& seed) {
    if (consumed_) throw LifecycleError("graph already consumed by backward");
    check_owner(root);
    if (seed.shape() != root.shape())
        throw DimensionError("seed shape " + shape_str(seed.shape()) + " != root shape " + shape_str(root.shape()));
    consumed_ = true;

    std::vector<Tensor> grads(nodes_.size());
    grads[root.id()] = seed;
    std::vector<Tensor*> grad_in;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
        Node& node = nodes_[i];
        if (!grads[i].defined() || !node.backward) continue;
        grad_in.assign(node.inputs.size(), nullptr);
        for (std::size_t j = 0; j < node.inputs.size(); ++j) {
            const std::uint32_t in = node.inputs[j];
            if (!nodes_[in].requires_grad) continue;
            if (!grads[in].defined()) grads[in] = Tensor::zeros(nodes_[in].value().shape());
            grad_in[j] = &grads[in];
        }
        node.backward(grads[i], grad_in);
        node.backward = nullptr;
        if (!node.leaf) grads[i] = Tensor();
    }

    Gradients out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        Node& node = nodes_[i];
        node.backward = nullptr;
        if (!node.leaf || !node.requires_grad) continue;
        const auto id = static_cast<std::uint32_t>(i);
        out.by_node_.emplace(id, grads[i].defined() ? std::move(grads[i]) : Tensor::zeros(node.value().shape()));
        if (node.borrowed) out.by_source_[node.borrowed] = id;
    }
    return out;
}

std::uint64_t Graph::next_seed() { return derive_seed(seed_, counter_++); }

}  // namespace htune
