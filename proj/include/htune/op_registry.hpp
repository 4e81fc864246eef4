#pragma once

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "htune/graph.hpp"
#include "htune/rng.hpp"

namespace htune {

/// One differentiable primitive: how to apply it and how to draw a random
/// valid argument set for it (shapes included).
struct Primitive {
    std::string name;
    std::function<std::vector<Tensor>(Rng&)> sample_inputs;
    std::function<Var(std::span<const Var>)> apply;
};

class OpRegistry {
public:
    explicit OpRegistry(std::vector<Primitive> primitives) : primitives_(std::move(primitives)) {}

    const std::vector<Primitive>& primitives() const noexcept { return primitives_; }
    const Primitive& find(std::string_view name) const;
    std::vector<std::string> names() const;

private:
    std::vector<Primitive> primitives_;
};

/// The immutable set of tensor-core primitives, built once.
const OpRegistry& core_op_set();

}  // namespace htune
